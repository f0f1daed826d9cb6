// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/ops.hpp"

namespace trialfuse {

inline constexpr double kDefaultTau = 0.6;

/// Row mean of an n x d matrix; n must be at least 1.
template <typename T>
[[nodiscard]] Var<T> avgpool(const Var<T>& seq)
{
    if (seq.value().rank() != 2 || seq.rows() == 0) {
        throw DimensionError("avgpool needs at least one row, got " + shape_string(seq.shape()));
    }
    return mean_rows(seq);
}

template <typename T>
[[nodiscard]] std::vector<double> avgpool(const Tensor<T>& seq)
{
    if (seq.rank() != 2 || seq.rows() == 0) {
        throw DimensionError("avgpool needs at least one row, got " + shape_string(seq.shape()));
    }
    std::vector<double> out(seq.cols(), 0.0);
    for (std::size_t i = 0; i < seq.rows(); ++i) {
        for (std::size_t j = 0; j < seq.cols(); ++j) {
            out[j] += seq(i, j);
        }
    }
    for (auto& v : out) {
        v /= static_cast<double>(seq.rows());
    }
    return out;
}

template <typename T>
struct PairBatch {
    Tensor<T> f_c;   // n x d
    Tensor<T> f_dm;  // n x d, row i from the same trial as row i of f_c
    std::vector<std::string> trial_ids;
};

namespace detail {

template <typename T>
void require_pair_shapes(const Tensor<T>& f_c, const Tensor<T>& f_dm)
{
    if (f_c.rank() != 2 || f_c.shape() != f_dm.shape() || f_c.rows() == 0) {
        throw DimensionError("pair batch needs equal n x d embeddings with n >= 1, got " + shape_string(f_c.shape())
                             + " and " + shape_string(f_dm.shape()));
    }
    for (const auto* t : {&f_c, &f_dm}) {
        for (const T v : t->data()) {
            if (!std::isfinite(static_cast<double>(v))) {
                throw DataError("non-finite value in pair-matching embeddings");
            }
        }
    }
}

} // namespace detail

/// Symmetric in-batch cross-entropy over logits = scale * f_c * f_dm^T, where
/// `log_scale` is a one-element Var and scale = exp(log_scale). Matching pairs
/// sit on the diagonal. With `cosine`, rows are unit-normalized first.
template <typename T>
[[nodiscard]] Var<T> pair_matching_loss(const Var<T>& f_c, const Var<T>& f_dm, const Var<T>& log_scale,
                                        bool cosine = false)
{
    detail::require_pair_shapes(f_c.value(), f_dm.value());
    const auto c = cosine ? l2_normalize_rows(f_c) : f_c;
    const auto m = cosine ? l2_normalize_rows(f_dm) : f_dm;
    const auto logits = scale_by(matmul(c, transpose(m)), exp(log_scale));
    std::vector<std::size_t> labels(f_c.rows());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = i;
    }
    return scale(add(softmax_cross_entropy(logits, labels), softmax_cross_entropy(transpose(logits), labels)), 0.5);
}

template <typename T>
[[nodiscard]] Var<T> pair_matching_loss(const Var<T>& f_c, const Var<T>& f_dm, double tau = kDefaultTau,
                                        bool cosine = false)
{
    return pair_matching_loss(f_c, f_dm, constant(Tensor<T>::scalar(static_cast<T>(tau))), cosine);
}

template <typename T>
[[nodiscard]] double pretrain_loss(const PairBatch<T>& batch, double tau = kDefaultTau, bool cosine = false)
{
    NoGradGuard guard;
    return static_cast<double>(pair_matching_loss(constant(batch.f_c), constant(batch.f_dm), tau, cosine).item());
}

} // namespace trialfuse
