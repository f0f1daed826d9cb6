// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "trialfuse/dm/dm_branch.hpp"
#include "trialfuse/eval/metrics.hpp"
#include "trialfuse/pretrain/pair_examples.hpp"
#include "trialfuse/pretrain/pair_loss.hpp"

namespace trialfuse {

/// Pooled embeddings for every example, computed without building a graph.
template <typename T>
[[nodiscard]] PairBatch<T> embed_pairs(const DMBranch<T>& model, const std::vector<PairExample>& examples)
{
    NoGradGuard guard;
    const std::size_t d = model.config().d_dm;
    PairBatch<T> batch{Tensor<T>({examples.size(), d}), Tensor<T>({examples.size(), d}), {}};
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto c = model.criteria_pair_embedding(examples[i].criteria);
        const auto m = model.pooled_dm(examples[i].input, examples[i].criteria);
        for (std::size_t j = 0; j < d; ++j) {
            batch.f_c(i, j) = c.value()[j];
            batch.f_dm(i, j) = m.value()[j];
        }
        batch.trial_ids.push_back(examples[i].trial_id);
    }
    return batch;
}

struct RetrievalResult {
    double top1_accuracy = 0.0;
    Tensor<double> similarity;  // row i: criteria i against every drug-disease embedding
};

/// Criteria i is a hit iff its own drug-disease embedding scores strictly
/// above every other one; any tie counts as a miss.
template <typename T>
[[nodiscard]] RetrievalResult retrieval_from_embeddings(const PairBatch<T>& batch, double tau = kDefaultTau)
{
    detail::require_pair_shapes(batch.f_c, batch.f_dm);
    const std::size_t n = batch.f_c.rows();
    const std::size_t d = batch.f_c.cols();
    RetrievalResult r{0.0, Tensor<double>({n, n})};
    const double s = std::exp(tau);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                dot += static_cast<double>(batch.f_c(i, k)) * batch.f_dm(j, k);
            }
            r.similarity(i, j) = s * dot;
        }
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        bool hit = true;
        for (std::size_t j = 0; j < n && hit; ++j) {
            hit = j == i || r.similarity(i, j) < r.similarity(i, i);
        }
        hits += hit ? 1 : 0;
    }
    r.top1_accuracy = static_cast<double>(hits) / static_cast<double>(n);
    return r;
}

template <typename T>
[[nodiscard]] RetrievalResult retrieval_eval(const DMBranch<T>& model, const std::vector<PairExample>& examples,
                                             double tau = kDefaultTau)
{
    if (examples.size() < 2) {
        throw DataError("retrieval evaluation needs at least 2 trials");
    }
    return retrieval_from_embeddings(embed_pairs(model, examples), tau);
}

/// Pair-matching score sigmoid(exp(tau) * <f_C, f_DM>) per example.
template <typename T>
[[nodiscard]] std::vector<ScoredExample> zero_shot_scores(const DMBranch<T>& model,
                                                          const std::vector<PairExample>& examples,
                                                          double tau = kDefaultTau)
{
    const auto batch = embed_pairs(model, examples);
    std::vector<ScoredExample> out;
    const double s = std::exp(tau);
    for (std::size_t i = 0; i < examples.size(); ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < batch.f_c.cols(); ++k) {
            dot += static_cast<double>(batch.f_c(i, k)) * batch.f_dm(i, k);
        }
        out.push_back({examples[i].trial_id, 1.0 / (1.0 + std::exp(-s * dot)), examples[i].label});
    }
    return out;
}

struct ZeroShotCall {
    double score = 0.5;
    int call = 0;
};

[[nodiscard]] inline ZeroShotCall zero_shot_call(double score, double threshold)
{
    return {score, score >= threshold ? 1 : 0};
}

} // namespace trialfuse
