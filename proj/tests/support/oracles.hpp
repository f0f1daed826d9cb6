// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "trialfuse/data/sct.hpp"
#include "trialfuse/eval/metrics.hpp"
#include "trialfuse/pretrain/pair_examples.hpp"
#include "support/synthetic_trials.hpp"
#include "support/test_models.hpp"

namespace trialfuse::testing {

// Symmetric pair-matching cross-entropy written out with scalar loops.
inline double loop_oracle(const Tensor<double>& fc, const Tensor<double>& fdm, double tau)
{
    const std::size_t n = fc.rows();
    std::vector<std::vector<double>> logits(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0;
            for (std::size_t k = 0; k < fc.cols(); ++k) dot += fc(i, k) * fdm(j, k);
            logits[i][j] = std::exp(tau) * dot;
        }
    }
    double rows = 0;
    double cols = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double zr = 0;
        double zc = 0;
        for (std::size_t j = 0; j < n; ++j) {
            zr += std::exp(logits[i][j]);
            zc += std::exp(logits[j][i]);
        }
        rows += std::log(zr) - logits[i][i];
        cols += std::log(zc) - logits[i][i];
    }
    return (rows / n + cols / n) / 2;
}

inline std::vector<ScoredExample> random_examples(std::size_t n, std::uint64_t seed, double pos_rate = 0.4)
{
    Rng rng(seed);
    std::vector<ScoredExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = rng.uniform() < pos_rate ? 1 : 0;
        out.push_back({"T" + std::to_string(1000 + i), rng.uniform() * 0.7 + 0.3 * label, label});
    }
    return out;
}

inline double pairwise_auc(const std::vector<ScoredExample>& ex)
{
    double hits = 0.0;
    double pairs = 0.0;
    for (const auto& p : ex) {
        for (const auto& n : ex) {
            if (p.label == 1 && n.label == 0) {
                pairs += 1.0;
                hits += p.score > n.score ? 1.0 : (p.score == n.score ? 0.5 : 0.0);
            }
        }
    }
    return hits / pairs;
}

// Sweep every distinct score as a threshold, accumulating precision times recall increment.
inline double sweep_average_precision(const std::vector<ScoredExample>& ex)
{
    std::vector<double> thresholds;
    double positives = 0.0;
    for (const auto& e : ex) {
        thresholds.push_back(e.score);
        positives += e.label;
    }
    std::sort(thresholds.rbegin(), thresholds.rend());
    double ap = 0.0;
    double prev_recall = 0.0;
    for (const double t : thresholds) {
        double tp = 0.0;
        double called = 0.0;
        for (const auto& e : ex) {
            if (e.score >= t) {
                called += 1.0;
                tp += e.label;
            }
        }
        const double recall = tp / positives;
        ap += (recall - prev_recall) * (tp / called);
        prev_recall = recall;
    }
    return ap;
}

// Label is 1 exactly when some diagnosis is a neoplasm (chapter C).
inline std::vector<PairExample> separable_examples(std::size_t n, std::uint64_t seed, std::size_t d_llm)
{
    auto trials = synthetic_model_trials(n, seed);
    for (auto& t : trials) {
        t.label = std::any_of(t.icd_codes.begin(), t.icd_codes.end(), [](const std::string& c) { return c[0] == 'C'; });
    }
    return make_pair_examples(trials, ToyCriteriaEncoder(seed, d_llm));
}

inline DrugEntityIndex fixture_index()
{
    return DrugEntityIndex::load(fixture_path("drug_synonyms.tsv"), fixture_path("marketed.txt"));
}

inline std::vector<TrialRecord> fixture_trials() { return load_trials(fixture_path("sct_trials.jsonl")).records; }

inline std::map<std::string, std::string> expected_outcomes()
{
    std::ifstream in(fixture_path("sct_expected.tsv"));
    std::map<std::string, std::string> out;
    std::string id;
    std::string outcome;
    while (in >> id >> outcome) {
        out[id] = outcome;
    }
    return out;
}

} // namespace trialfuse::testing
