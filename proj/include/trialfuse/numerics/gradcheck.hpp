// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "trialfuse/numerics/autograd.hpp"
#include "trialfuse/numerics/random.hpp"

namespace trialfuse {

struct GradCheckOptions {
    double eps = 1e-4;
    /// Parameters larger than this are checked on a seeded sample of this many coordinates.
    std::size_t max_coords_per_param = 48;
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    double magnitude_floor = 1e-6;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
};

/// Compare reverse-mode gradients of the scalar `f` against central differences
/// over the given parameters. `f` must rebuild its graph on every call.
template <typename T>
GradCheckResult finite_diff_check(const std::function<Var<T>()>& f, const ParameterList<T>& params,
                                  const GradCheckOptions& opts = {})
{
    zero_grads(params);
    backward(f());

    GradCheckResult result;
    Rng rng(opts.seed);
    for (const auto& [name, param] : params) {
        if (!param->trainable()) {
            continue;
        }
        const Tensor<T> analytic = param->gradient();
        const std::size_t n = param->value().size();
        std::vector<std::size_t> coords;
        if (n <= opts.max_coords_per_param) {
            for (std::size_t i = 0; i < n; ++i) {
                coords.push_back(i);
            }
        } else {
            coords = rng.sample_without_replacement(n, opts.max_coords_per_param);
            std::sort(coords.begin(), coords.end());
        }
        for (const auto i : coords) {
            auto& value = param->mutable_value();
            const T original = value[i];
            double plus = 0.0;
            double minus = 0.0;
            {
                NoGradGuard guard;
                value[i] = static_cast<T>(original + opts.eps);
                plus = static_cast<double>(f().item());
                value[i] = static_cast<T>(original - opts.eps);
                minus = static_cast<double>(f().item());
                value[i] = original;
            }
            const double numeric = (plus - minus) / (2.0 * opts.eps);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), opts.magnitude_floor});
            const double rel = std::abs(a - numeric) / denom;
            ++result.coords_checked;
            if (rel > result.max_rel_error || !std::isfinite(rel)) {
                result.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
                result.worst_parameter = name;
                result.worst_index = i;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    zero_grads(params);
    return result;
}

} // namespace trialfuse
