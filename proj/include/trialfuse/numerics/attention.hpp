// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/autograd.hpp"
#include "trialfuse/numerics/ops.hpp"
#include "trialfuse/numerics/random.hpp"
#include "trialfuse/peft/lora.hpp"

namespace trialfuse {

enum class Projection : std::size_t { query = 0, key = 1, value = 2, output = 3 };

inline constexpr std::array<const char*, 4> kProjectionNames{"W_Q", "W_K", "W_V", "W_O"};

template <typename T>
struct AttentionParams {
    std::array<Parameter<T>, 4> weights;  // W_Q, W_K, W_V, W_O; each d_model x d_model
    std::array<std::optional<LoRAAdapter<T>>, 4> adapters;
    std::size_t num_heads = 1;
    std::size_t d_model = 0;

    AttentionParams() = default;

    /// Projections drawn from N(0, 1/d_model).
    AttentionParams(std::size_t width, std::size_t heads, Rng& rng) : num_heads(heads), d_model(width)
    {
        if (heads == 0 || width % heads != 0) {
            throw DimensionError("attention width " + std::to_string(width) + " not divisible by "
                                 + std::to_string(heads) + " heads");
        }
        const double stddev = 1.0 / std::sqrt(static_cast<double>(width));
        for (auto& w : weights) {
            w = Parameter<T>(Tensor<T>::normal({width, width}, rng, stddev));
        }
    }

    [[nodiscard]] std::size_t d_k() const { return d_model / num_heads; }

    [[nodiscard]] Parameter<T>& weight(Projection p) { return weights[static_cast<std::size_t>(p)]; }
    [[nodiscard]] const Parameter<T>& weight(Projection p) const { return weights[static_cast<std::size_t>(p)]; }

    /// x W (+ LoRA delta when an adapter is attached).
    [[nodiscard]] Var<T> project(const Var<T>& x, Projection p) const
    {
        const auto idx = static_cast<std::size_t>(p);
        auto y = matmul(x, weights[idx].var());
        if (adapters[idx]) {
            y = add(y, adapters[idx]->delta(x));
        }
        return y;
    }

    void attach_adapters(std::size_t rank, double alpha, Rng& rng)
    {
        for (auto& a : adapters) {
            a.emplace(d_model, rank, alpha, rng);
        }
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn)
    {
        for (std::size_t i = 0; i < 4; ++i) {
            fn(prefix + "." + kProjectionNames[i], weights[i]);
        }
        for (std::size_t i = 0; i < 4; ++i) {
            if (adapters[i]) {
                fn(prefix + "." + kProjectionNames[i] + ".lora_A", adapters[i]->a);
                fn(prefix + "." + kProjectionNames[i] + ".lora_B", adapters[i]->b);
            }
        }
    }
};

/// softmax(q W_Q (kv W_K)^T / sqrt(d_k)) kv W_V, per head, concatenated, then W_O.
/// Self-attention is q_src == kv_src.
template <typename T>
Var<T> multi_head_attention(const Var<T>& q_src, const Var<T>& kv_src, const AttentionParams<T>& p)
{
    if (q_src.cols() != p.d_model || kv_src.cols() != p.d_model) {
        throw DimensionError("multi_head_attention: inputs " + shape_string(q_src.shape()) + " and "
                             + shape_string(kv_src.shape()) + " do not match d_model "
                             + std::to_string(p.d_model));
    }
    const auto q = p.project(q_src, Projection::query);
    const auto k = p.project(kv_src, Projection::key);
    const auto v = p.project(kv_src, Projection::value);
    return p.project(attention_core(q, k, v, p.num_heads), Projection::output);
}

} // namespace trialfuse

namespace trialfuse {

/// Learnable per-token layer norm (gain 1, bias 0 at init).
template <typename T>
struct LayerNormParams {
    Parameter<T> gain;
    Parameter<T> bias;

    LayerNormParams() = default;
    explicit LayerNormParams(std::size_t width) : gain(Tensor<T>({1, width}, T{1})), bias(Tensor<T>({1, width})) {}

    [[nodiscard]] Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gain.var(), bias.var()); }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn)
    {
        fn(prefix + ".gain", gain);
        fn(prefix + ".bias", bias);
    }
};

/// Pre-norm residual self-attention: x + MHA(LN(x), LN(x)).
template <typename T>
struct SelfAttentionLayer {
    AttentionParams<T> attn;
    LayerNormParams<T> norm;

    SelfAttentionLayer() = default;
    SelfAttentionLayer(std::size_t width, std::size_t heads, Rng& rng) : attn(width, heads, rng), norm(width) {}

    [[nodiscard]] Var<T> forward(const Var<T>& x) const
    {
        const auto h = norm(x);
        return add(x, multi_head_attention(h, h, attn));
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn)
    {
        attn.for_each_parameter(prefix, fn);
        norm.for_each_parameter(prefix + ".norm", fn);
    }
};

} // namespace trialfuse
