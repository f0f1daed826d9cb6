// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "trialfuse/numerics/ops.hpp"
#include "trialfuse/numerics/random.hpp"

namespace trialfuse {

inline constexpr std::size_t kDefaultHeadHidden = 64;

/// h1 = relu(x W1 + b1); h2 = h1 + relu(h1 W2 + b2); logit = h2 W3 + b3.
template <typename T>
class PredictionHead {
public:
    PredictionHead() = default;

    PredictionHead(std::size_t input_width, std::size_t hidden, Rng& rng)
        : w1_(Tensor<T>::normal({input_width, hidden}, rng, std::sqrt(2.0 / static_cast<double>(input_width)))),
          b1_(Tensor<T>({1, hidden})),
          w2_(Tensor<T>::normal({hidden, hidden}, rng, std::sqrt(2.0 / static_cast<double>(hidden)))),
          b2_(Tensor<T>({1, hidden})),
          w3_(Tensor<T>::normal({hidden, 1}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)))),
          b3_(Tensor<T>({1, 1}))
    {
    }

    [[nodiscard]] std::size_t input_width() const { return w1_.value().rows(); }
    [[nodiscard]] std::size_t hidden_width() const { return w1_.value().cols(); }

    /// x: m x input_width -> m x 1 logits.
    [[nodiscard]] Var<T> logits(const Var<T>& x) const
    {
        if (x.value().rank() != 2 || x.cols() != input_width()) {
            throw DimensionError("prediction head expects width " + std::to_string(input_width()) + ", got "
                                 + shape_string(x.shape()));
        }
        const auto h1 = relu(add_row(matmul(x, w1_.var()), b1_.var()));
        const auto h2 = add(h1, relu(add_row(matmul(h1, w2_.var()), b2_.var())));
        return add_row(matmul(h2, w3_.var()), b3_.var());
    }

    [[nodiscard]] Var<T> probabilities(const Var<T>& x) const { return sigmoid(logits(x)); }

    void zero_output_layer()
    {
        w3_.mutable_value().fill(T{0});
        b3_.mutable_value().fill(T{0});
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn)
    {
        fn(prefix + ".layer1.weight", w1_);
        fn(prefix + ".layer1.bias", b1_);
        fn(prefix + ".layer2.weight", w2_);
        fn(prefix + ".layer2.bias", b2_);
        fn(prefix + ".layer3.weight", w3_);
        fn(prefix + ".layer3.bias", b3_);
    }

private:
    Parameter<T> w1_;
    Parameter<T> b1_;
    Parameter<T> w2_;
    Parameter<T> b2_;
    Parameter<T> w3_;
    Parameter<T> b3_;
};

} // namespace trialfuse
