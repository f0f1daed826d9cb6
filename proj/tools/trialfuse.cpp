// SPDX-License-Identifier: Apache-2.0
#include "trialfuse/cli/app.hpp"

int main(int argc, char** argv) { return trialfuse::cli::run(argc, argv); }
