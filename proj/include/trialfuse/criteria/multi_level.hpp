// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/random.hpp"
#include "trialfuse/numerics/tensor.hpp"

namespace trialfuse {

enum class CriteriaLevel : std::size_t { coarse = 0, medium = 1, fine = 2, last = 3 };

inline constexpr std::size_t kCriteriaLevels = 4;
inline constexpr std::size_t kMaxCriteriaTokens = 512;
inline constexpr std::size_t kToyCriteriaWidth = 32;
inline constexpr std::size_t kModelCriteriaWidth = 1024;

/// Hidden states of the frozen language model: after blocks 6, 12 and 18
/// (coarse, medium, fine) and after the final layer. Stored at 32-bit, the
/// same precision as the on-disk store.
struct MultiLevelCriteriaEmbedding {
    std::array<Tensor<float>, kCriteriaLevels> levels;

    [[nodiscard]] const Tensor<float>& level(CriteriaLevel l) const { return levels[static_cast<std::size_t>(l)]; }
    [[nodiscard]] Tensor<float>& level(CriteriaLevel l) { return levels[static_cast<std::size_t>(l)]; }
    [[nodiscard]] const Tensor<float>& coarse() const { return level(CriteriaLevel::coarse); }
    [[nodiscard]] const Tensor<float>& medium() const { return level(CriteriaLevel::medium); }
    [[nodiscard]] const Tensor<float>& fine() const { return level(CriteriaLevel::fine); }
    [[nodiscard]] const Tensor<float>& last() const { return level(CriteriaLevel::last); }

    [[nodiscard]] std::size_t n_c() const { return levels[0].rows(); }
    [[nodiscard]] std::size_t d_llm() const { return levels[0].cols(); }

    /// All four levels are 2-D with the same (n_c, d_llm), n_c >= 1.
    void validate() const
    {
        for (const auto& l : levels) {
            if (l.rank() != 2 || l.shape() != levels[0].shape()) {
                throw DimensionError("criteria levels have unequal shapes: " + shape_string(levels[0].shape())
                                     + " vs " + shape_string(l.shape()));
            }
        }
    }

    friend bool operator==(const MultiLevelCriteriaEmbedding&, const MultiLevelCriteriaEmbedding&) = default;
};

[[nodiscard]] inline std::vector<std::string> whitespace_tokens(const std::string& text)
{
    std::istringstream in(text);
    std::vector<std::string> out;
    std::string tok;
    while (in >> tok) {
        out.push_back(tok);
    }
    return out;
}

/// Deterministic stand-in for the language model: every (token, level) pair
/// maps to its own seeded N(0,1) vector. At most 512 tokens are kept.
[[nodiscard]] inline MultiLevelCriteriaEmbedding toy_encode(const std::string& text, std::uint64_t seed,
                                                            std::size_t d_llm = kToyCriteriaWidth)
{
    auto tokens = whitespace_tokens(text);
    if (tokens.empty()) {
        throw DataError("eligibility criteria text is empty");
    }
    if (tokens.size() > kMaxCriteriaTokens) {
        tokens.resize(kMaxCriteriaTokens);
    }
    MultiLevelCriteriaEmbedding out;
    for (std::size_t level = 0; level < kCriteriaLevels; ++level) {
        Tensor<float> t({tokens.size(), d_llm});
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            Rng rng(hash_string(tokens[i], derive_seed(seed, 0xC0A5E + level)));
            for (auto& v : t.row_span(i)) {
                v = static_cast<float>(rng.normal());
            }
        }
        out.levels[level] = std::move(t);
    }
    return out;
}

} // namespace trialfuse
