// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "trialfuse/errors.hpp"

namespace trialfuse {

struct ScoredExample {
    std::string trial_id;
    double score = 0.0;
    int label = 0;

    friend bool operator==(const ScoredExample&, const ScoredExample&) = default;
};

namespace detail {

inline void require_finite_scores(const std::vector<ScoredExample>& ex)
{
    for (const auto& e : ex) {
        if (!std::isfinite(e.score)) {
            throw DataError("non-finite score for trial '" + e.trial_id + "'");
        }
        if (e.label != 0 && e.label != 1) {
            throw DataError("label for trial '" + e.trial_id + "' is not 0/1");
        }
    }
}

/// Indices ordered by score descending, then trial id ascending.
inline std::vector<std::size_t> ranking(const std::vector<ScoredExample>& ex)
{
    std::vector<std::size_t> order(ex.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (ex[a].score != ex[b].score) {
            return ex[a].score > ex[b].score;
        }
        return ex[a].trial_id < ex[b].trial_id;
    });
    return order;
}

inline std::size_t count_positives(const std::vector<ScoredExample>& ex)
{
    return static_cast<std::size_t>(
        std::count_if(ex.begin(), ex.end(), [](const ScoredExample& e) { return e.label == 1; }));
}

} // namespace detail

/// Mann-Whitney form: (sum of positive ranks - P(P+1)/2) / (P*N), tied scores
/// sharing their average rank.
[[nodiscard]] inline double roc_auc(const std::vector<ScoredExample>& ex)
{
    detail::require_finite_scores(ex);
    const std::size_t pos = detail::count_positives(ex);
    const std::size_t neg = ex.size() - pos;
    if (pos == 0 || neg == 0) {
        throw UndefinedMetricError("ROC-AUC needs both classes (positives=" + std::to_string(pos)
                                   + ", negatives=" + std::to_string(neg) + ")");
    }
    std::vector<std::size_t> order(ex.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ex[a].score < ex[b].score; });
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && ex[order[j]].score == ex[order[i]].score) {
            ++j;
        }
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (ex[order[k]].label == 1) {
                pos_rank_sum += avg_rank;
            }
        }
        i = j;
    }
    const double p = static_cast<double>(pos);
    return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

enum class PrAucMode { average_precision, trapezoid };

/// Area under the precision-recall curve over the (score desc, id asc)
/// ranking. Average precision by default; `trapezoid` interpolates linearly
/// between consecutive (recall, precision) points starting from (0, 1).
[[nodiscard]] inline double pr_auc(const std::vector<ScoredExample>& ex, PrAucMode mode = PrAucMode::average_precision)
{
    detail::require_finite_scores(ex);
    const std::size_t pos = detail::count_positives(ex);
    if (pos == 0) {
        throw UndefinedMetricError("PR-AUC needs at least one positive");
    }
    const auto order = detail::ranking(ex);
    const double p = static_cast<double>(pos);
    double area = 0.0;
    double tp = 0.0;
    double prev_recall = 0.0;
    double prev_precision = 1.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const bool hit = ex[order[k]].label == 1;
        tp += hit ? 1.0 : 0.0;
        const double precision = tp / static_cast<double>(k + 1);
        const double recall = tp / p;
        if (mode == PrAucMode::average_precision) {
            if (hit) {
                area += precision / p;
            }
        } else {
            area += (recall - prev_recall) * 0.5 * (precision + prev_precision);
        }
        prev_recall = recall;
        prev_precision = precision;
    }
    return area;
}

struct Confusion {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
};

/// Positive call iff score >= threshold.
[[nodiscard]] inline Confusion confusion_at(const std::vector<ScoredExample>& ex, double threshold)
{
    Confusion c;
    for (const auto& e : ex) {
        const bool call = e.score >= threshold;
        if (call) {
            (e.label == 1 ? c.tp : c.fp) += 1;
        } else {
            (e.label == 1 ? c.fn : c.tn) += 1;
        }
    }
    return c;
}

[[nodiscard]] inline double f1_score(const Confusion& c)
{
    const double denom = 2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fp + c.fn);
    return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / denom;
}

[[nodiscard]] inline double f1_at(const std::vector<ScoredExample>& ex, double threshold = 0.5)
{
    detail::require_finite_scores(ex);
    return f1_score(confusion_at(ex, threshold));
}

[[nodiscard]] inline double accuracy_at(const std::vector<ScoredExample>& ex, double threshold = 0.5)
{
    detail::require_finite_scores(ex);
    if (ex.empty()) {
        throw UndefinedMetricError("accuracy of an empty set");
    }
    const auto c = confusion_at(ex, threshold);
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(ex.size());
}

/// Threshold maximizing F1. Candidates are the distinct scores (calls are
/// `score >= t`); ties in F1 keep the highest threshold.
[[nodiscard]] inline double best_f1_threshold(const std::vector<ScoredExample>& ex)
{
    detail::require_finite_scores(ex);
    if (ex.empty()) {
        throw UndefinedMetricError("threshold selection on an empty set");
    }
    std::vector<double> cands;
    for (const auto& e : ex) {
        cands.push_back(e.score);
    }
    std::sort(cands.begin(), cands.end(), std::greater<>());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    double best_t = cands.front();
    double best = -1.0;
    for (const double t : cands) {
        const double f = f1_at(ex, t);
        if (f > best) {
            best = f;
            best_t = t;
        }
    }
    return best_t;
}

struct BinaryCall {
    std::string trial_id;
    int predicted = 0;
    int label = 0;
};

/// Correct calls of `ours` minus correct calls of `baseline` on the same trials.
[[nodiscard]] inline long long gain(const std::vector<BinaryCall>& ours, const std::vector<BinaryCall>& baseline)
{
    std::map<std::string, const BinaryCall*> base;
    for (const auto& c : baseline) {
        if (!base.emplace(c.trial_id, &c).second) {
            throw DataError("duplicate trial id '" + c.trial_id + "' in baseline calls");
        }
    }
    if (ours.size() != base.size()) {
        throw DataError("call sets cover different trials (" + std::to_string(ours.size()) + " vs "
                        + std::to_string(base.size()) + ")");
    }
    long long diff = 0;
    std::map<std::string, bool> seen;
    for (const auto& c : ours) {
        const auto it = base.find(c.trial_id);
        if (it == base.end()) {
            throw DataError("trial '" + c.trial_id + "' has no baseline call");
        }
        if (!seen.emplace(c.trial_id, true).second) {
            throw DataError("duplicate trial id '" + c.trial_id + "' in calls");
        }
        if (it->second->label != c.label) {
            throw DataError("label mismatch for trial '" + c.trial_id + "'");
        }
        diff += (c.predicted == c.label ? 1 : 0) - (it->second->predicted == it->second->label ? 1 : 0);
    }
    return diff;
}

[[nodiscard]] inline std::vector<BinaryCall> binary_calls(const std::vector<ScoredExample>& ex, double threshold)
{
    std::vector<BinaryCall> out;
    for (const auto& e : ex) {
        out.push_back({e.trial_id, e.score >= threshold ? 1 : 0, e.label});
    }
    return out;
}

} // namespace trialfuse
