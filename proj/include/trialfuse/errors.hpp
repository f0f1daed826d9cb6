// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace trialfuse {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or width disagreement between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Malformed textual input. `position` is a character index or a 1-based line number,
/// depending on the parser that raised it.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t position)
        : Error(what), position_(position) {}
    [[nodiscard]] std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class CorruptionError : public Error {
public:
    using Error::Error;
};

/// A metric that has no value on the given examples (e.g. ROC-AUC with one class).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

/// Empty or otherwise unusable dataset.
class DataError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace trialfuse
