// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "trialfuse/encoders/token_sequence.hpp"
#include "trialfuse/numerics/attention.hpp"

namespace trialfuse {

inline constexpr std::size_t kDefaultEnrichLayers = 4;

/// Residual self-attention stack: x <- x + MHA(LN(x), LN(x)) per layer.
template <typename T>
TokenSequence<T> enrich(const TokenSequence<T>& seq, const std::vector<SelfAttentionLayer<T>>& stack)
{
    auto x = seq.tokens;
    for (const auto& layer : stack) {
        x = layer.forward(x);
    }
    return TokenSequence<T>(std::move(x), seq.source_tag, seq.group_ids);
}

} // namespace trialfuse
