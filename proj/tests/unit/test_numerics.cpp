// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "trialfuse/numerics/attention.hpp"
#include "trialfuse/numerics/autograd.hpp"
#include "trialfuse/numerics/gradcheck.hpp"
#include "trialfuse/numerics/ops.hpp"
#include "trialfuse/numerics/optim.hpp"
#include "trialfuse/numerics/tensor.hpp"

using namespace trialfuse;
using Td = Tensor<double>;
using Vd = Var<double>;
using Pd = Parameter<double>;

namespace {

// Per-element reference attention written independently of attention_core:
// explicit projections, per-head score loops, no shared kernels.
Td naive_attention(const Td& xq, const Td& xkv, const AttentionParams<double>& p)
{
    const std::size_t m = xq.rows();
    const std::size_t n = xkv.rows();
    const std::size_t d = p.d_model;
    const std::size_t h = p.num_heads;
    const std::size_t dk = d / h;
    auto project = [d](const Td& x, const Td& w) {
        Td out({x.rows(), d});
        for (std::size_t i = 0; i < x.rows(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    s += x(i, k) * w(k, j);
                }
                out(i, j) = s;
            }
        }
        return out;
    };
    const Td q = project(xq, p.weights[0].value());
    const Td k = project(xkv, p.weights[1].value());
    const Td v = project(xkv, p.weights[2].value());
    Td concat({m, d});
    for (std::size_t head = 0; head < h; ++head) {
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<double> w(n);
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dk; ++c) {
                    s += q(i, head * dk + c) * k(j, head * dk + c);
                }
                w[j] = std::exp(s / std::sqrt(static_cast<double>(dk)));
                total += w[j];
            }
            for (std::size_t c = 0; c < dk; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    acc += w[j] / total * v(j, head * dk + c);
                }
                concat(i, head * dk + c) = acc;
            }
        }
    }
    return project(concat, p.weights[3].value());
}

Td random_matrix(std::size_t r, std::size_t c, std::uint64_t seed)
{
    Rng rng(seed);
    return Td::uniform({r, c}, rng, -1.0, 1.0);
}

} // namespace

TEST(Tensor, RejectsMismatchedDataLength)
{
    EXPECT_THROW(Td({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    EXPECT_THROW(Td({0, 2}), DimensionError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged)
{
    const Td m = random_matrix(3, 3, 1);
    const auto out = matmul(constant(Td::identity(3)), constant(m));
    EXPECT_EQ(out.value(), m);
}

TEST(Matmul, HandEvaluatedProduct)
{
    const auto out = matmul(constant(Td::matrix({{1, 2}, {3, 4}})), constant(Td::matrix({{1}, {1}})));
    EXPECT_EQ(out.value(), Td::matrix({{3}, {7}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes)
{
    try {
        (void)matmul(constant(Td({2, 3})), constant(Td({4, 2})));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
    }
}

TEST(Softmax, EqualRowIsUniform)
{
    const auto out = softmax_rows(constant(Td({1, 5}, 2.5)));
    for (const auto v : out.value().data()) {
        EXPECT_DOUBLE_EQ(v, 0.2);
    }
}

TEST(Softmax, HandEvaluated)
{
    const auto out = softmax_rows(constant(Td::row({0.0, std::log(3.0)})));
    EXPECT_NEAR(out.value()[0], 0.25, 1e-15);
    EXPECT_NEAR(out.value()[1], 0.75, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow)
{
    const auto out = softmax_rows(constant(Tensor<float>::row({1000.0f, 0.0f})));
    EXPECT_TRUE(out.value().all_finite());
    EXPECT_NEAR(out.value()[0], 1.0f, 1e-7);
    EXPECT_NEAR(out.value()[1], 0.0f, 1e-7);
}

TEST(Softmax, RowsSumToOneOnRandomInput)
{
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = Td::uniform({4, 9}, rng, -50.0, 50.0);
        const auto y = softmax_rows(constant(x)).value();
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (const auto v : y.row_span(i)) {
                EXPECT_GE(v, 0.0);
                s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(LayerNorm, ConstantRowMapsToZero)
{
    const auto out = layer_norm(constant(Td({1, 4}, 7.0)), constant(Td({1, 4}, 1.0)), constant(Td({1, 4}, 0.0)));
    for (const auto v : out.value().data()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(LayerNorm, HandNormalizedPair)
{
    const auto out = layer_norm(constant(Td::row({1.0, 3.0})), constant(Td({1, 2}, 1.0)), constant(Td({1, 2}, 0.0)), 0.0);
    EXPECT_NEAR(out.value()[0], -1.0, 1e-15);
    EXPECT_NEAR(out.value()[1], 1.0, 1e-15);
}

TEST(LayerNorm, RandomRowsHaveZeroMeanUnitStd)
{
    const auto x = random_matrix(6, 32, 5);
    const auto y = layer_norm(constant(x), constant(Td({1, 32}, 1.0)), constant(Td({1, 32}, 0.0)), 0.0).value();
    for (std::size_t i = 0; i < 6; ++i) {
        double mu = 0.0;
        for (const auto v : y.row_span(i)) {
            mu += v;
        }
        mu /= 32.0;
        double var = 0.0;
        for (const auto v : y.row_span(i)) {
            var += (v - mu) * (v - mu);
        }
        EXPECT_NEAR(mu, 0.0, 1e-6);
        EXPECT_NEAR(std::sqrt(var / 32.0), 1.0, 1e-6);
    }
}

TEST(Attention, SingleKeyReturnsValueRow)
{
    Rng rng(3);
    AttentionParams<double> p(4, 1, rng);
    for (auto& w : p.weights) {
        w.mutable_value() = Td::identity(4);
    }
    const Td kv = Td::row({0.5, -1.0, 2.0, 3.0});
    const auto out = multi_head_attention(constant(random_matrix(3, 4, 9)), constant(kv), p);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_DOUBLE_EQ(out.value()(i, j), kv[j]);
        }
    }
}

TEST(Attention, OutputShapeFollowsQueries)
{
    Rng rng(4);
    AttentionParams<float> p(16, 8, rng);
    Rng data(5);
    const auto out = multi_head_attention(constant(Tensor<float>::normal({7, 16}, data)),
                                          constant(Tensor<float>::normal({100, 16}, data)), p);
    EXPECT_EQ(out.shape(), (Shape{7, 16}));
}

TEST(Attention, MatchesNaiveOracle)
{
    for (std::size_t heads : {1u, 2u, 4u}) {
        Rng rng(100 + heads);
        AttentionParams<double> p(4, heads, rng);
        const Td xq = random_matrix(3, 4, 7);
        const Td xkv = random_matrix(5, 4, 8);
        const auto got = multi_head_attention(constant(xq), constant(xkv), p).value();
        EXPECT_LT(max_abs_diff(got, naive_attention(xq, xkv, p)), 1e-9) << heads << " heads";
        const auto self = multi_head_attention(constant(xq), constant(xq), p).value();
        EXPECT_LT(max_abs_diff(self, naive_attention(xq, xq, p)), 1e-9);
    }
}

TEST(Attention, RejectsWidthMismatch)
{
    Rng rng(1);
    AttentionParams<double> p(4, 2, rng);
    EXPECT_THROW((void)multi_head_attention(constant(Td({2, 4})), constant(Td({3, 6})), p), DimensionError);
    EXPECT_THROW(AttentionParams<double>(6, 4, rng), DimensionError);
}

TEST(Attention, QueryEquivariantAndKeyInvariantUnderPermutation)
{
    Rng rng(21);
    AttentionParams<double> p(8, 2, rng);
    const Td xq = random_matrix(4, 8, 22);
    const Td xkv = random_matrix(6, 8, 23);
    const auto base = multi_head_attention(constant(xq), constant(xkv), p).value();

    const std::vector<std::size_t> qperm{2, 0, 3, 1};
    const std::vector<std::size_t> kperm{5, 3, 1, 0, 4, 2};
    const auto permuted = multi_head_attention(gather_rows(constant(xq), qperm), gather_rows(constant(xkv), kperm), p)
                              .value();
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            EXPECT_NEAR(permuted(i, j), base(qperm[i], j), 1e-12);
        }
    }
}

TEST(Backward, SquareSumGradient)
{
    Pd x(Td::scalar(3.0));
    const auto loss = sum(mul(x.var(), x.var()));
    backward(loss);
    EXPECT_DOUBLE_EQ(x.gradient()[0], 6.0);
}

TEST(Backward, RepeatedCallsAccumulate)
{
    Pd x(Td::scalar(3.0));
    const auto loss = sum(mul(x.var(), x.var()));
    backward(loss);
    backward(loss);
    EXPECT_DOUBLE_EQ(x.gradient()[0], 12.0);
}

TEST(Backward, RejectsNonScalarLoss)
{
    Pd x(Td({2, 2}, 1.0));
    EXPECT_THROW(backward(mul(x.var(), x.var())), DimensionError);
}

TEST(Backward, SoftmaxCrossEntropyMatchesFiniteDifferences)
{
    Pd logits(random_matrix(4, 4, 31));
    const std::vector<std::size_t> labels{0, 3, 1, 1};
    const auto r = finite_diff_check<double>([&] { return softmax_cross_entropy(logits.var(), labels); },
                                             {{"logits", &logits}});
    EXPECT_LT(r.max_rel_error, 1e-3);
    EXPECT_EQ(r.coords_checked, 16u);
}

TEST(Backward, FrozenParameterIsNotUpdated)
{
    Pd frozen(random_matrix(2, 2, 41), false);
    Pd live(random_matrix(2, 2, 42));
    const Td before = frozen.value();
    const auto loss = sum(mul(matmul(frozen.var(), live.var()), matmul(frozen.var(), live.var())));
    backward(loss);
    for (const auto g : frozen.gradient().data()) {
        EXPECT_EQ(g, 0.0);
    }
    Adam<double> opt({.lr = 0.1});
    opt.add_group({{"frozen", &frozen}, {"live", &live}}, 0.1);
    opt.step();
    EXPECT_EQ(frozen.value(), before);
    EXPECT_NE(live.value(), random_matrix(2, 2, 42));
}

TEST(GradCheck, LinearFunctionIsExact)
{
    Pd w(random_matrix(3, 3, 51));
    const Td x = random_matrix(2, 3, 52);
    const auto r = finite_diff_check<double>([&] { return sum(matmul(constant(x), w.var())); }, {{"w", &w}});
    EXPECT_LE(r.max_rel_error, 1e-9);
}

TEST(GradCheck, QuadraticMatchesTwoX)
{
    Pd x(Td::scalar(1.7));
    zero_grads<double>({{"x", &x}});
    backward(sum(mul(x.var(), x.var())));
    EXPECT_NEAR(x.gradient()[0], 3.4, 1e-12);
    const auto r = finite_diff_check<double>([&] { return sum(mul(x.var(), x.var())); }, {{"x", &x}});
    EXPECT_LT(r.max_rel_error, 1e-9);
}

// Every differentiable primitive against central differences on inputs in [-1, 1].
TEST(GradCheck, EveryPrimitive)
{
    Pd a(random_matrix(3, 4, 61));
    Pd b(random_matrix(4, 5, 62));
    Pd c(random_matrix(3, 4, 63));
    Pd row(random_matrix(1, 4, 64));
    Pd s(Td::scalar(0.3));
    Pd gain(random_matrix(1, 4, 65));
    Pd bias(random_matrix(1, 4, 66));
    const Td weights = random_matrix(3, 5, 67);
    auto weighted = [&](const Vd& v) {
        Rng rng(99);
        return sum(mul(v, constant(Td::uniform(v.shape(), rng, -1.0, 1.0))));
    };

    struct Case {
        const char* name;
        std::function<Vd()> f;
        ParameterList<double> params;
    };
    const std::vector<Case> cases{
        {"matmul", [&] { return sum(mul(matmul(a.var(), b.var()), constant(weights))); }, {{"a", &a}, {"b", &b}}},
        {"transpose", [&] { return weighted(transpose(a.var())); }, {{"a", &a}}},
        {"add", [&] { return weighted(add(a.var(), c.var())); }, {{"a", &a}, {"c", &c}}},
        {"sub", [&] { return weighted(sub(a.var(), c.var())); }, {{"a", &a}, {"c", &c}}},
        {"mul", [&] { return weighted(mul(a.var(), c.var())); }, {{"a", &a}, {"c", &c}}},
        {"add_row", [&] { return weighted(add_row(a.var(), row.var())); }, {{"a", &a}, {"row", &row}}},
        {"scale", [&] { return weighted(scale(a.var(), -1.7)); }, {{"a", &a}}},
        {"scale_by", [&] { return weighted(scale_by(a.var(), s.var())); }, {{"a", &a}, {"s", &s}}},
        {"exp", [&] { return weighted(exp(a.var())); }, {{"a", &a}}},
        {"relu", [&] { return weighted(relu(a.var())); }, {{"a", &a}}},
        {"sigmoid", [&] { return weighted(sigmoid(a.var())); }, {{"a", &a}}},
        {"mean", [&] { return mean(mul(a.var(), a.var())); }, {{"a", &a}}},
        {"mean_rows", [&] { return weighted(mean_rows(a.var())); }, {{"a", &a}}},
        {"concat_rows", [&] { return weighted(concat_rows<double>({a.var(), c.var(), row.var()})); },
         {{"a", &a}, {"c", &c}, {"row", &row}}},
        {"concat_cols", [&] { return weighted(concat_cols<double>({a.var(), slice_rows(transpose(b.var()), 0, 3)})); },
         {{"a", &a}, {"b", &b}}},
        {"slice_rows", [&] { return weighted(slice_rows(a.var(), 1, 2)); }, {{"a", &a}}},
        {"gather_rows", [&] { return weighted(gather_rows(a.var(), {2, 0, 2, 1})); }, {{"a", &a}}},
        {"softmax_rows", [&] { return weighted(softmax_rows(a.var())); }, {{"a", &a}}},
        {"layer_norm", [&] { return weighted(layer_norm(a.var(), gain.var(), bias.var())); },
         {{"a", &a}, {"gain", &gain}, {"bias", &bias}}},
        {"l2_normalize_rows", [&] { return weighted(l2_normalize_rows(a.var())); }, {{"a", &a}}},
        {"softmax_cross_entropy", [&] { return softmax_cross_entropy(a.var(), {1, 3, 0}); }, {{"a", &a}}},
        {"weighted_bce", [&] { return weighted_bce(sigmoid(a.var()), std::vector<int>(12, 1), 0.7, 0.3); },
         {{"a", &a}}},
        {"attention_core",
         [&] { return weighted(attention_core(a.var(), c.var(), mul(c.var(), c.var()), 2)); },
         {{"a", &a}, {"c", &c}}},
    };
    for (const auto& cs : cases) {
        const auto r = finite_diff_check<double>(cs.f, cs.params);
        EXPECT_LT(r.max_rel_error, 1e-3) << cs.name << " worst " << r.worst_parameter << "[" << r.worst_index
                                         << "] analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
    }
}

TEST(GradCheck, MultiHeadAttentionWithAdapters)
{
    Rng rng(71);
    AttentionParams<double> p(8, 4, rng);
    p.attach_adapters(2, 2.0, rng);
    for (auto& ad : p.adapters) {
        Rng brng(72);
        ad->b.mutable_value() = Td::uniform({8, 2}, brng, -0.5, 0.5);
    }
    Pd xq(random_matrix(3, 8, 73));
    Pd xkv(random_matrix(5, 8, 74));
    ParameterList<double> params{{"xq", &xq}, {"xkv", &xkv}};
    p.for_each_parameter("attn", [&](const std::string& name, Pd& param) { params.push_back({name, &param}); });
    const Td w = random_matrix(3, 8, 75);
    const auto r = finite_diff_check<double>(
        [&] { return sum(mul(multi_head_attention(xq.var(), xkv.var(), p), constant(w))); }, params);
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst_parameter;
}

TEST(Lora, EffectiveWeightEqualsBaseAtInit)
{
    Rng rng(81);
    LoRAAdapter<float> ad(16, 8, 8.0, rng);
    const auto w = Tensor<float>::normal({16, 16}, rng);
    EXPECT_EQ(ad.effective_weight(w), w);
    AttentionParams<float> p(16, 8, rng);
    const auto x = constant(Tensor<float>::normal({5, 16}, rng));
    const auto before = multi_head_attention(x, x, p).value();
    p.attach_adapters(8, 8.0, rng);
    EXPECT_EQ(multi_head_attention(x, x, p).value(), before);
}

TEST(Determinism, SameSeedSameForward)
{
    auto run = [] {
        Rng rng(1234);
        AttentionParams<float> p(16, 8, rng);
        const auto x = constant(Tensor<float>::normal({9, 16}, rng));
        return multi_head_attention(x, x, p).value();
    };
    EXPECT_EQ(run(), run());
}
