// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trialfuse/config.hpp"
#include "trialfuse/eval/metrics.hpp"
#include "trialfuse/numerics/random.hpp"

namespace trialfuse {

enum class Metric { f1, pr_auc, roc_auc, accuracy };

[[nodiscard]] inline const char* metric_name(Metric m)
{
    switch (m) {
    case Metric::f1: return "f1";
    case Metric::pr_auc: return "pr_auc";
    case Metric::roc_auc: return "roc_auc";
    case Metric::accuracy: return "accuracy";
    }
    return "?";
}

inline const std::vector<Metric> kDefaultMetrics{Metric::f1, Metric::pr_auc, Metric::roc_auc};

struct MetricOptions {
    double threshold = 0.5;
    PrAucMode pr_mode = PrAucMode::average_precision;
};

[[nodiscard]] inline double compute_metric(Metric m, const std::vector<ScoredExample>& ex, const MetricOptions& opts = {})
{
    switch (m) {
    case Metric::f1: return f1_at(ex, opts.threshold);
    case Metric::pr_auc: return pr_auc(ex, opts.pr_mode);
    case Metric::roc_auc: return roc_auc(ex);
    case Metric::accuracy: return accuracy_at(ex, opts.threshold);
    }
    return 0.0;
}

struct MetricSummary {
    Metric metric = Metric::f1;
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> draws;
};

struct EvalReport {
    std::string subset;
    std::size_t n_draws = 0;
    double draw_fraction = 0.0;
    std::size_t draw_size = 0;
    std::uint64_t seed = 0;
    std::vector<MetricSummary> metrics;
    std::vector<std::string> notes;

    [[nodiscard]] const MetricSummary& get(Metric m) const
    {
        for (const auto& s : metrics) {
            if (s.metric == m) {
                return s;
            }
        }
        throw LookupError(std::string("metric not in report: ") + metric_name(m));
    }
};

struct BootstrapOptions {
    std::size_t n_draws = 10;
    double fraction = 0.8;
    std::uint64_t seed = 0;
    std::string subset = "test";
    MetricOptions metric;
    /// Attempts allowed per requested draw before giving up.
    std::size_t max_attempts_per_draw = 100;
};

/// Each draw is floor(fraction*n) examples sampled without replacement from a
/// seed derived from (seed, attempt). A draw on which some metric is
/// undefined is discarded, noted, and replaced by the next attempt.
[[nodiscard]] inline EvalReport bootstrap_eval(const std::vector<ScoredExample>& ex,
                                               const std::vector<Metric>& metrics = kDefaultMetrics,
                                               const BootstrapOptions& opts = {})
{
    if (ex.empty()) {
        throw DataError("bootstrap evaluation on an empty example set");
    }
    if (metrics.empty()) {
        throw ConfigError("bootstrap needs at least one metric");
    }
    if (opts.n_draws == 0 || !(opts.fraction > 0.0 && opts.fraction <= 1.0)) {
        throw ConfigError("bootstrap needs n_draws >= 1 and fraction in (0, 1]");
    }
    detail::require_finite_scores(ex);
    EvalReport report;
    report.subset = opts.subset;
    report.n_draws = opts.n_draws;
    report.draw_fraction = opts.fraction;
    report.seed = opts.seed;
    report.draw_size = static_cast<std::size_t>(std::floor(opts.fraction * static_cast<double>(ex.size()) + 1e-9));
    if (report.draw_size == 0) {
        throw DataError("bootstrap draw size is zero for " + std::to_string(ex.size()) + " examples");
    }
    for (const Metric m : metrics) {
        report.metrics.push_back({m, 0.0, 0.0, {}});
    }

    std::size_t attempt = 0;
    const std::size_t max_attempts = opts.n_draws * opts.max_attempts_per_draw;
    while (report.metrics.front().draws.size() < opts.n_draws) {
        if (attempt >= max_attempts) {
            throw UndefinedMetricError("no valid bootstrap draw after " + std::to_string(attempt) + " attempts on subset '"
                                       + opts.subset + "'");
        }
        Rng rng(derive_seed(opts.seed, attempt));
        std::vector<ScoredExample> draw;
        for (const std::size_t i : rng.sample_without_replacement(ex.size(), report.draw_size)) {
            draw.push_back(ex[i]);
        }
        std::vector<double> values;
        try {
            for (const Metric m : metrics) {
                values.push_back(compute_metric(m, draw, opts.metric));
            }
        } catch (const UndefinedMetricError& e) {
            report.notes.push_back("draw attempt " + std::to_string(attempt) + " resampled: " + e.what());
            ++attempt;
            continue;
        }
        for (std::size_t k = 0; k < values.size(); ++k) {
            report.metrics[k].draws.push_back(values[k]);
        }
        ++attempt;
    }
    for (auto& s : report.metrics) {
        double sum = 0.0;
        for (const double v : s.draws) {
            sum += v;
        }
        s.mean = sum / static_cast<double>(s.draws.size());
        double sq = 0.0;
        for (const double v : s.draws) {
            sq += (v - s.mean) * (v - s.mean);
        }
        s.std = std::sqrt(sq / static_cast<double>(s.draws.size()));
    }
    return report;
}

/// `metric,mean,std,n_draws,subset` rows, one per metric per report.
[[nodiscard]] inline std::string reports_to_csv(const std::vector<EvalReport>& reports)
{
    std::ostringstream out;
    out << "metric,mean,std,n_draws,subset\n";
    for (const auto& r : reports) {
        for (const auto& s : r.metrics) {
            out << metric_name(s.metric) << ',' << format_real(s.mean) << ',' << format_real(s.std) << ','
                << r.n_draws << ',' << r.subset << '\n';
        }
    }
    return out.str();
}

[[nodiscard]] inline nlohmann::ordered_json report_to_json(const EvalReport& r)
{
    nlohmann::ordered_json j;
    j["subset"] = r.subset;
    j["n_draws"] = r.n_draws;
    j["draw_fraction"] = r.draw_fraction;
    j["draw_size"] = r.draw_size;
    j["seed"] = r.seed;
    auto& ms = j["metrics"] = nlohmann::ordered_json::array();
    for (const auto& s : r.metrics) {
        ms.push_back({{"metric", metric_name(s.metric)}, {"mean", s.mean}, {"std", s.std}, {"draws", s.draws}});
    }
    j["notes"] = r.notes;
    return j;
}

} // namespace trialfuse
