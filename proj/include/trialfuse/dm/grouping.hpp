// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "trialfuse/encoders/token_sequence.hpp"
#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/attention.hpp"

namespace trialfuse {

/// Cross-attention from trainable centroid tokens onto the input, followed by
/// pre-norm residual self-attention over the centroids. Output length is always the
/// centroid count.
template <typename T>
struct GroupingLayer {
    Parameter<T> centroids;  // c x d
    AttentionParams<T> cross;
    std::vector<SelfAttentionLayer<T>> self_stack;

    GroupingLayer() = default;

    GroupingLayer(std::size_t count, std::size_t width, std::size_t heads, std::size_t self_layers, Rng& rng)
        : centroids(Tensor<T>::normal({count, width}, rng)), cross(width, heads, rng)
    {
        for (std::size_t s = 0; s < self_layers; ++s) {
            self_stack.emplace_back(width, heads, rng);
        }
    }

    [[nodiscard]] std::size_t count() const { return centroids.shape()[0]; }

    [[nodiscard]] TokenSequence<T> forward(const TokenSequence<T>& input) const
    {
        if (input.width() != cross.d_model) {
            throw DimensionError("grouping layer expects width " + std::to_string(cross.d_model) + ", got "
                                 + std::to_string(input.width()));
        }
        auto x = multi_head_attention(centroids.var(), input.tokens, cross);
        for (const auto& layer : self_stack) {
            x = layer.forward(x);
        }
        return TokenSequence<T>(std::move(x), SourceTag::aggregate, std::vector<int>(count(), 0));
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn)
    {
        fn(prefix + ".centroids", centroids);
        cross.for_each_parameter(prefix + ".cross", fn);
        for (std::size_t s = 0; s < self_stack.size(); ++s) {
            self_stack[s].for_each_parameter(prefix + ".self" + std::to_string(s), fn);
        }
    }
};

template <typename T>
struct GroupingBlock {
    std::vector<GroupingLayer<T>> layers;

    GroupingBlock() = default;

    GroupingBlock(const std::vector<std::size_t>& schedule, std::size_t width, std::size_t heads,
                  std::size_t self_layers, Rng& rng)
    {
        if (schedule.empty()) {
            throw DimensionError("grouping block needs at least one layer");
        }
        for (std::size_t i = 0; i < schedule.size(); ++i) {
            if (schedule[i] == 0 || (i > 0 && schedule[i] * 2 != schedule[i - 1])) {
                throw DimensionError("grouping block centroid counts must halve layer to layer");
            }
            layers.emplace_back(schedule[i], width, heads, self_layers, rng);
        }
    }

    [[nodiscard]] std::size_t output_length() const { return layers.back().count(); }

    /// `lengths`, when given, receives the output length of every layer.
    [[nodiscard]] TokenSequence<T> forward(const TokenSequence<T>& input,
                                           std::vector<std::size_t>* lengths = nullptr) const
    {
        TokenSequence<T> x = input;
        for (const auto& layer : layers) {
            x = layer.forward(x);
            if (lengths) {
                lengths->push_back(x.length());
            }
        }
        return x;
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn)
    {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].for_each_parameter(prefix + ".layer" + std::to_string(i), fn);
        }
    }
};

} // namespace trialfuse
