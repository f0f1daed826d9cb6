// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/autograd.hpp"

namespace trialfuse {

/// Also the row index into the source-type embedding table.
enum class SourceTag : std::size_t { molecule = 0, disease = 1, criteria = 2, aggregate = 3 };

inline constexpr std::size_t kSourceTypeCount = 4;

[[nodiscard]] inline const char* source_tag_name(SourceTag tag)
{
    static constexpr std::array<const char*, kSourceTypeCount> names{"molecule", "disease", "criteria", "aggregate"};
    return names[static_cast<std::size_t>(tag)];
}

template <typename T>
struct TokenSequence {
    Var<T> tokens;  // n x d
    SourceTag source_tag = SourceTag::aggregate;
    std::vector<int> group_ids;  // one per token

    TokenSequence() = default;
    TokenSequence(Var<T> t, SourceTag tag, std::vector<int> groups)
        : tokens(std::move(t)), source_tag(tag), group_ids(std::move(groups))
    {
        if (tokens.rows() == 0 || group_ids.size() != tokens.rows()) {
            throw DimensionError("token sequence with " + std::to_string(tokens.rows()) + " tokens and "
                                 + std::to_string(group_ids.size()) + " group ids");
        }
    }

    [[nodiscard]] std::size_t length() const { return tokens.rows(); }
    [[nodiscard]] std::size_t width() const { return tokens.cols(); }
};

} // namespace trialfuse
