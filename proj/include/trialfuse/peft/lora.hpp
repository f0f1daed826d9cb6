// SPDX-License-Identifier: Apache-2.0
#pragma once

// Low-rank additive delta on a d x d projection:
//   effective = W + (alpha / r) * B * A,   B: d x r (zeros), A: r x d ~ N(0, 1/r)
// Applied as x W + s (x B) A so the dense delta is never materialized.

#include <cmath>
#include <cstddef>
#include <cstdint>

#include "trialfuse/numerics/autograd.hpp"
#include "trialfuse/numerics/ops.hpp"
#include "trialfuse/numerics/random.hpp"

namespace trialfuse {

inline constexpr std::size_t kDefaultLoraRank = 8;

template <typename T>
struct LoRAAdapter {
    Parameter<T> a;
    Parameter<T> b;
    std::size_t rank = kDefaultLoraRank;
    double alpha = static_cast<double>(kDefaultLoraRank);

    LoRAAdapter() = default;

    LoRAAdapter(std::size_t width, std::size_t r, double alpha_value, Rng& rng)
        : a(Tensor<T>::normal({r, width}, rng, 1.0 / std::sqrt(static_cast<double>(r)))),
          b(Tensor<T>({width, r})),
          rank(r),
          alpha(alpha_value)
    {
    }

    [[nodiscard]] double scaling() const { return alpha / static_cast<double>(rank); }

    /// x (m x d) -> s * (x B) A
    [[nodiscard]] Var<T> delta(const Var<T>& x) const { return scale(matmul(matmul(x, b.var()), a.var()), scaling()); }

    /// Dense W + s B A, for inspection and tests.
    [[nodiscard]] Tensor<T> effective_weight(const Tensor<T>& w) const
    {
        NoGradGuard guard;
        const auto delta_w = scale(matmul(b.var(), a.var()), scaling());
        return add(constant(w), delta_w).value();
    }
};

} // namespace trialfuse
