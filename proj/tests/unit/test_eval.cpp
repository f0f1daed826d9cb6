// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "trialfuse/eval/bootstrap.hpp"
#include "support/oracles.hpp"

using namespace trialfuse;
using namespace trialfuse::testing;

TEST(RocAuc, PerfectAndInverted)
{
    std::vector<ScoredExample> ex{{"a", 0.9, 1}, {"b", 0.8, 1}, {"c", 0.2, 0}, {"d", 0.1, 0}};
    EXPECT_DOUBLE_EQ(roc_auc(ex), 1.0);
    for (auto& e : ex) e.label = 1 - e.label;
    EXPECT_DOUBLE_EQ(roc_auc(ex), 0.0);
}

TEST(RocAuc, MatchesPairwiseOracle)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto ex = random_examples(100, seed);
        EXPECT_NEAR(roc_auc(ex), pairwise_auc(ex), 1e-9);
        for (auto& e : ex) e.score = std::round(e.score * 10) / 10;  // heavy ties
        EXPECT_NEAR(roc_auc(ex), pairwise_auc(ex), 1e-9);
    }
}

TEST(RocAuc, InvariantUnderMonotoneTransform)
{
    auto ex = random_examples(60, 9);
    const double base = roc_auc(ex);
    for (auto& e : ex) e.score = std::exp(3 * e.score) - 7;
    EXPECT_DOUBLE_EQ(roc_auc(ex), base);
}

TEST(RocAuc, SingleClassIsUndefined)
{
    EXPECT_THROW((void)roc_auc({{"a", 0.3, 1}, {"b", 0.4, 1}}), UndefinedMetricError);
}

TEST(PrAuc, HandCases)
{
    EXPECT_DOUBLE_EQ(pr_auc({{"a", 0.9, 1}, {"b", 0.8, 1}, {"c", 0.1, 0}}), 1.0);
    std::vector<ScoredExample> last;
    for (int i = 0; i < 7; ++i) last.push_back({"t" + std::to_string(i), 1.0 - 0.1 * i, i == 6 ? 1 : 0});
    EXPECT_NEAR(pr_auc(last), 1.0 / 7.0, 1e-15);
    EXPECT_THROW((void)pr_auc({{"a", 0.5, 0}}), UndefinedMetricError);
}

TEST(PrAuc, MatchesThresholdSweepOracle)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto ex50 = random_examples(50, 100 + seed);
        EXPECT_NEAR(pr_auc(ex50), sweep_average_precision(ex50), 1e-9);
        const auto ex100 = random_examples(100, 200 + seed);
        EXPECT_NEAR(pr_auc(ex100), sweep_average_precision(ex100), 1e-9);
    }
}

TEST(PrAuc, TiesBrokenByIdAndTrapezoidToggle)
{
    const std::vector<ScoredExample> ex{{"b", 0.5, 0}, {"a", 0.5, 1}};
    EXPECT_DOUBLE_EQ(pr_auc(ex), 1.0);
    std::vector<ScoredExample> relabeled{{"a", 0.5, 0}, {"b", 0.5, 1}};
    EXPECT_DOUBLE_EQ(pr_auc(relabeled), 0.5);
    // (0,1) -> (1,1) -> (1,0.5): area 1.
    EXPECT_DOUBLE_EQ(pr_auc(ex, PrAucMode::trapezoid), 1.0);
    const std::vector<ScoredExample> inv{{"a", 0.9, 0}, {"b", 0.1, 1}};
    EXPECT_DOUBLE_EQ(pr_auc(inv, PrAucMode::trapezoid), 0.25);
}

TEST(PrAuc, InvariantUnderIdRelabeling)
{
    auto ex = random_examples(40, 3);
    const double pr = pr_auc(ex);
    const double f1 = f1_at(ex, 0.5);
    for (auto& e : ex) e.trial_id = "X" + e.trial_id;
    EXPECT_DOUBLE_EQ(pr_auc(ex), pr);
    EXPECT_DOUBLE_EQ(f1_at(ex, 0.5), f1);
}

TEST(F1, HandCases)
{
    const std::vector<ScoredExample> ex{{"1", 0.9, 1}, {"2", 0.8, 1}, {"3", 0.7, 0}, {"4", 0.2, 1}, {"5", 0.1, 0}};
    EXPECT_NEAR(f1_at(ex, 0.5), 2.0 / 3.0, 1e-15);
    EXPECT_DOUBLE_EQ(f1_at({{"1", 0.9, 1}, {"2", 0.1, 0}}, 0.5), 1.0);
    EXPECT_DOUBLE_EQ(f1_at({{"1", 0.2, 1}, {"2", 0.1, 0}}, 0.5), 0.0);
    EXPECT_DOUBLE_EQ(accuracy_at(ex, 0.5), 0.6);
}

TEST(F1, BestThresholdMatchesBruteForce)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto ex = random_examples(3, seed, 0.5);
        double best = -1;
        for (const auto& c : ex) best = std::max(best, f1_at(ex, c.score));
        EXPECT_DOUBLE_EQ(f1_at(ex, best_f1_threshold(ex)), best);
    }
}

TEST(Gain, CountsCorrectCallDifference)
{
    std::vector<BinaryCall> base;
    std::vector<BinaryCall> ours;
    for (int i = 0; i < 20; ++i) {
        const int label = i % 2;
        base.push_back({"N" + std::to_string(i), i < 9 ? 1 - label : label, label});
        ours.push_back({"N" + std::to_string(i), label, label});
    }
    EXPECT_EQ(gain(ours, base), 9);
    EXPECT_EQ(gain(base, base), 0);
    for (int i = 0; i < 20; ++i) {
        ours[static_cast<std::size_t>(i)].predicted = (i >= 4 && i < 9) || i >= 17 ? ours[static_cast<std::size_t>(i)].label : 1 - ours[static_cast<std::size_t>(i)].label;
    }
    // ours: correct on 4..8 (fixes 5) and 17..19; wrong on 0..3 and 9..16 (introduces 8).
    EXPECT_EQ(gain(ours, base), -3);
    base.pop_back();
    EXPECT_THROW((void)gain(ours, base), DataError);
}

TEST(Bootstrap, DeterministicAndBounded)
{
    const auto ex = random_examples(80, 21);
    BootstrapOptions opts;
    opts.seed = 5;
    const auto a = bootstrap_eval(ex, kDefaultMetrics, opts);
    const auto b = bootstrap_eval(ex, kDefaultMetrics, opts);
    EXPECT_EQ(reports_to_csv({a}), reports_to_csv({b}));
    EXPECT_EQ(a.draw_size, 64u);
    for (const auto& s : a.metrics) {
        ASSERT_EQ(s.draws.size(), 10u);
        EXPECT_GE(s.mean, *std::min_element(s.draws.begin(), s.draws.end()));
        EXPECT_LE(s.mean, *std::max_element(s.draws.begin(), s.draws.end()));
        EXPECT_GT(s.std, 0.0);
    }
    opts.seed = 6;
    EXPECT_NE(reports_to_csv({bootstrap_eval(ex, kDefaultMetrics, opts)}), reports_to_csv({a}));
}

TEST(Bootstrap, SingleFullDrawReproducesPlainMetrics)
{
    const auto ex = random_examples(50, 2);
    BootstrapOptions opts;
    opts.n_draws = 1;
    opts.fraction = 1.0;
    const auto r = bootstrap_eval(ex, {Metric::f1, Metric::pr_auc, Metric::roc_auc, Metric::accuracy}, opts);
    EXPECT_DOUBLE_EQ(r.get(Metric::f1).mean, f1_at(ex));
    EXPECT_DOUBLE_EQ(r.get(Metric::pr_auc).mean, pr_auc(ex));
    EXPECT_DOUBLE_EQ(r.get(Metric::roc_auc).mean, roc_auc(ex));
    EXPECT_DOUBLE_EQ(r.get(Metric::accuracy).mean, accuracy_at(ex));
    EXPECT_EQ(r.get(Metric::f1).std, 0.0);
}

TEST(Bootstrap, ConstantMetricHasZeroStd)
{
    std::vector<ScoredExample> ex;
    for (int i = 0; i < 30; ++i) ex.push_back({std::to_string(i), i % 3 == 0 ? 0.9 : 0.1, i % 3 == 0 ? 1 : 0});
    const auto r = bootstrap_eval(ex, {Metric::accuracy, Metric::f1});
    EXPECT_EQ(r.get(Metric::accuracy).std, 0.0);
    EXPECT_EQ(r.get(Metric::accuracy).mean, 1.0);
}

TEST(Bootstrap, ResamplesUndefinedDraws)
{
    std::vector<ScoredExample> ex;
    for (int i = 0; i < 10; ++i) ex.push_back({std::to_string(i), 0.1 * i, i == 0 ? 1 : 0});
    BootstrapOptions opts;
    opts.fraction = 0.5;
    const auto r = bootstrap_eval(ex, {Metric::roc_auc}, opts);
    EXPECT_EQ(r.get(Metric::roc_auc).draws.size(), 10u);
    EXPECT_FALSE(r.notes.empty());
    EXPECT_THROW((void)bootstrap_eval({{"a", 0.5, 1}, {"b", 0.4, 1}, {"c", 0.3, 1}}, {Metric::roc_auc}), UndefinedMetricError);
}

TEST(Bootstrap, CsvAndJsonLayout)
{
    const auto r = bootstrap_eval(random_examples(20, 1));
    const auto csv = reports_to_csv({r});
    EXPECT_EQ(csv.rfind("metric,mean,std,n_draws,subset\nf1,", 0), 0u);
    const auto j = report_to_json(r);
    EXPECT_EQ(j["metrics"].size(), 3u);
    EXPECT_EQ(j["n_draws"], 10);
}
