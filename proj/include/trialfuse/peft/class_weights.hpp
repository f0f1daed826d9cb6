// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "trialfuse/errors.hpp"

namespace trialfuse {

inline constexpr double kClassWeightMin = 0.01;
inline constexpr double kClassWeightMax = 0.99;

struct ClassWeights {
    double omega0 = 0.5;  // fraction of negative labels; weighs the positive term
    double omega1 = 0.5;  // fraction of positive labels; weighs the negative term
    std::string warning;
};

[[nodiscard]] inline ClassWeights derive_class_weights(const std::vector<int>& labels)
{
    if (labels.empty()) {
        throw DataError("cannot derive class weights from an empty label set");
    }
    std::size_t pos = 0;
    for (const int y : labels) {
        if (y != 0 && y != 1) {
            throw DataError("class weights need 0/1 labels, got " + std::to_string(y));
        }
        pos += static_cast<std::size_t>(y);
    }
    const double n = static_cast<double>(labels.size());
    ClassWeights w;
    w.omega1 = static_cast<double>(pos) / n;
    w.omega0 = 1.0 - w.omega1;
    if (pos == 0 || pos == labels.size()) {
        w.warning = "training labels contain a single class; class weights clamped to [0.01, 0.99]";
    }
    w.omega0 = std::clamp(w.omega0, kClassWeightMin, kClassWeightMax);
    w.omega1 = std::clamp(w.omega1, kClassWeightMin, kClassWeightMax);
    return w;
}

} // namespace trialfuse
