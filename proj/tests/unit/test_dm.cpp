// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "trialfuse/checkpoint.hpp"
#include "trialfuse/dm/dm_branch.hpp"
#include "trialfuse/dm/op_count.hpp"
#include "trialfuse/numerics/gradcheck.hpp"
#include "support/test_models.hpp"

using namespace trialfuse;
using namespace trialfuse::testing;

namespace {

TokenSequence<float> random_tokens(std::size_t n, std::size_t d, std::uint64_t seed)
{
    Rng rng(seed);
    return TokenSequence<float>(constant(Tensor<float>::normal({n, d}, rng)), SourceTag::aggregate,
                                std::vector<int>(n, 0));
}

double max_diff(const Tensor<float>& a, const Tensor<float>& b) { return max_abs_diff(a, b); }

} // namespace

TEST(GroupingLayer, OutputLengthIsCentroidCount)
{
    Rng rng(1);
    GroupingLayer<float> layer(25, 16, 8, 2, rng);
    for (std::size_t n : {10u, 100u, 500u}) {
        const auto out = layer.forward(random_tokens(n, 16, n));
        EXPECT_EQ(out.length(), 25u);
        EXPECT_EQ(out.width(), 16u);
        EXPECT_EQ(out.source_tag, SourceTag::aggregate);
    }
}

TEST(GroupingLayer, InvariantToInputOrder)
{
    Rng rng(2);
    GroupingLayer<float> layer(6, 16, 8, 1, rng);
    const auto in = random_tokens(9, 16, 5);
    std::vector<std::size_t> perm{3, 0, 8, 1, 7, 2, 6, 4, 5};
    const TokenSequence<float> shuffled(gather_rows(in.tokens, perm), SourceTag::aggregate, std::vector<int>(9, 0));
    EXPECT_LT(max_diff(layer.forward(in).tokens.value(), layer.forward(shuffled).tokens.value()), 1e-5);
}

TEST(GroupingLayer, SingleTokenSingleCentroidGivesValueProjection)
{
    Rng rng(3);
    GroupingLayer<double> layer(1, 4, 2, 0, rng);
    for (auto p : {Projection::query, Projection::key, Projection::output}) {
        layer.cross.weight(p).mutable_value() = Tensor<double>::identity(4);
    }
    const auto token = Tensor<double>::matrix({{0.5, -1.0, 2.0, 0.25}});
    const TokenSequence<double> in(constant(token), SourceTag::aggregate, {0});
    const auto expected = matmul(constant(token), layer.cross.weight(Projection::value).var()).value();
    EXPECT_LT(max_abs_diff(layer.forward(in).tokens.value(), expected), 1e-12);
}

TEST(GroupingLayer, RejectsWidthMismatch)
{
    Rng rng(4);
    GroupingLayer<float> layer(4, 16, 8, 1, rng);
    EXPECT_THROW((void)layer.forward(random_tokens(3, 8, 1)), DimensionError);
}

TEST(GroupingBlock, HalvesCentroidsDownToTwentyFive)
{
    ModelConfig cfg;
    EXPECT_EQ(cfg.centroid_schedule(), (std::vector<std::size_t>{100, 50, 25}));
    Rng rng(5);
    GroupingBlock<float> block(cfg.centroid_schedule(), 16, 8, 2, rng);
    std::vector<std::size_t> lengths;
    const auto out = block.forward(random_tokens(40, 16, 2), &lengths);
    EXPECT_EQ(lengths, (std::vector<std::size_t>{100, 50, 25}));
    EXPECT_EQ(out.length(), 25u);
}

TEST(GroupingBlock, RejectsScheduleThatDoesNotHalve)
{
    Rng rng(6);
    EXPECT_THROW((GroupingBlock<float>({100, 40}, 16, 8, 1, rng)), DimensionError);
}

TEST(GroupingBlock, SingleLayerBlockMatchesLayer)
{
    Rng a(7);
    Rng b(7);
    GroupingBlock<float> block({25}, 16, 8, 2, a);
    GroupingLayer<float> layer(25, 16, 8, 2, b);
    const auto in = random_tokens(30, 16, 3);
    EXPECT_EQ(block.forward(in).tokens.value(), layer.forward(in).tokens.value());
}

class DMBranchTest : public ::testing::Test {
protected:
    ModelConfig cfg;
    DMBranch<float> model = make_branch<float>(cfg);
};

TEST_F(DMBranchTest, OutputIsTwentyFiveTokensForAnyCriteriaLength)
{
    for (std::size_t n : {10u, 100u, 500u}) {
        FuseTrace<float> trace;
        const auto out = model.forward(sample_input(), criteria(n), &trace);
        EXPECT_EQ(out.shape(), (Shape{25, 16})) << n;
        for (const auto& lengths : trace.layer_lengths) {
            EXPECT_EQ(lengths, (std::vector<std::size_t>{100, 50, 25}));
        }
    }
}

TEST_F(DMBranchTest, LaterBlocksSeeTwentyFivePlusCriteriaTokens)
{
    const auto mol = model.embed_molecules(sample_input().smiles);
    const auto dis = model.embed_diseases(sample_input().icd_codes);
    for (std::size_t n : {20u, 40u}) {
        FuseTrace<float> trace;
        (void)model.fuse_forward(mol, dis, criteria(n), &trace);
        EXPECT_EQ(trace.block_input_lengths[0], mol.length() + dis.length() + n);
        EXPECT_EQ(trace.block_input_lengths[1], 25 + n);
        EXPECT_EQ(trace.block_input_lengths[2], 25 + n);
    }
}

TEST_F(DMBranchTest, FineLevelOnlyAffectsLastBlock)
{
    const auto crit = criteria(12);
    FuseTrace<float> before;
    (void)model.forward(sample_input(), crit, &before);
    model.level_projection(2).mutable_value().fill(0.0f);
    FuseTrace<float> after;
    (void)model.forward(sample_input(), crit, &after);
    EXPECT_EQ(before.block_outputs[0], after.block_outputs[0]);
    EXPECT_EQ(before.block_outputs[1], after.block_outputs[1]);
    EXPECT_EQ(before.block_inputs[1], after.block_inputs[1]);
    EXPECT_FALSE(before.block_inputs[2] == after.block_inputs[2]);
}

TEST_F(DMBranchTest, PooledOutputInvariantToListOrder)
{
    const auto crit = criteria(8);
    const auto a = model.pooled_dm(sample_input(), crit).value();
    DrugDiseaseInput reordered = sample_input();
    std::reverse(reordered.smiles.begin(), reordered.smiles.end());
    std::rotate(reordered.icd_codes.begin(), reordered.icd_codes.begin() + 1, reordered.icd_codes.end());
    EXPECT_EQ(a, model.pooled_dm(reordered, crit).value());
}

TEST_F(DMBranchTest, EveryTrainableParameterReceivesGradient)
{
    const auto crit = criteria(10);
    const auto loss = sum(mul(model.pooled_dm(sample_input(), crit), model.criteria_pair_embedding(crit)));
    auto params = model.parameters();
    zero_grads(params);
    backward(loss);
    for (const auto& [name, p] : params) {
        ASSERT_TRUE(p->trainable()) << name;
        double norm = 0;
        for (const float g : p->gradient().data()) {
            norm += std::abs(g);
        }
        EXPECT_GT(norm, 0.0) << name;
    }
}

TEST_F(DMBranchTest, ParameterNamesAreUnique)
{
    std::set<std::string> names;
    for (const auto& p : model.parameters()) {
        EXPECT_TRUE(names.insert(p.name).second) << p.name;
    }
    EXPECT_TRUE(names.count("block.coarse.layer0.centroids"));
    EXPECT_TRUE(names.count("block.fine.layer2.self1.W_O"));
    EXPECT_TRUE(names.count("source_types"));
}

TEST_F(DMBranchTest, RejectsCriteriaOfWrongWidth)
{
    EXPECT_THROW((void)model.forward(sample_input(), criteria(4, 0, 7)), DimensionError);
}

TEST(DMBranchAblation, AllGroupingArmsConstructAndRun)
{
    for (std::size_t g = 1; g <= 3; ++g) {
        for (std::size_t s = 0; s <= 3; ++s) {
            ModelConfig cfg;
            cfg.grouping_layers = g;
            cfg.self_layers = s;
            auto model = make_branch<float>(cfg);
            const auto out = model.forward(sample_input(), criteria(6));
            EXPECT_EQ(out.shape(), (Shape{25, 16})) << "G=" << g << " S=" << s;
        }
    }
}

TEST(DMBranchGradient, FullFusionPathMatchesFiniteDifferences)
{
    auto model = make_branch<double>(tiny_config());
    const auto crit = criteria(4, 3, 5);
    auto params = model.parameters();
    const auto result = finite_diff_check<double>(
        [&] {
            const auto dm = model.pooled_dm(sample_input(), crit);
            const auto c = model.criteria_pair_embedding(crit);
            return sum(mul(exp(scale(dm, 0.5)), c));
        },
        params, {.max_coords_per_param = 12});
    EXPECT_LT(result.max_rel_error, 1e-3) << result.worst_parameter << "[" << result.worst_index << "]";
    EXPECT_GT(result.coords_checked, 500u);
}

TEST(DMBranchLora, AdaptersLeaveOutputUnchangedAtInit)
{
    ModelConfig cfg;
    auto model = make_branch<float>(cfg);
    const auto crit = criteria(9);
    const auto before = model.forward(sample_input(), crit).value();
    Rng rng(1);
    model.attach_lora(LoraSites::both, rng);
    EXPECT_EQ(before, model.forward(sample_input(), crit).value());
}

TEST(DMBranchLora, SiteSelectionAndFreeze)
{
    auto count_adapters = [](LoraSites sites, std::set<std::string>* names = nullptr) {
        auto model = make_branch<float>(tiny_config());
        Rng rng(2);
        model.attach_lora(sites, rng);
        model.freeze_backbone();
        std::size_t n = 0;
        for (const auto& p : model.parameters()) {
            const bool adapter = DMBranch<float>::is_adapter_name(p.name);
            EXPECT_EQ(p.param->trainable(), adapter) << p.name;
            if (adapter) {
                ++n;
                if (names) names->insert(p.name);
            }
        }
        return n;
    };
    const auto cfg = tiny_config();
    const std::size_t blocks = kFusionLevels * cfg.grouping_layers;
    const std::size_t cross_sites = blocks;
    const std::size_t self_sites = 2 * cfg.enrich_layers + blocks * cfg.self_layers;
    EXPECT_EQ(count_adapters(LoraSites::none), 0u);
    std::set<std::string> cross_names;
    EXPECT_EQ(count_adapters(LoraSites::cross, &cross_names), cross_sites * 8);
    for (const auto& n : cross_names) {
        EXPECT_NE(n.find(".cross."), std::string::npos) << n;
    }
    EXPECT_EQ(count_adapters(LoraSites::self), self_sites * 8);
    EXPECT_EQ(count_adapters(LoraSites::both), (cross_sites + self_sites) * 8);
    EXPECT_THROW((void)parse_lora_sites("all"), ConfigError);
}

TEST(OpCount, MeasuredForwardMatchesClosedForm)
{
    ModelConfig cfg;
    auto model = make_branch<float>(cfg);
    const auto input = sample_input();
    const auto n_mol = model.embed_molecules(input.smiles).length();
    const auto n_dis = model.embed_diseases(input.icd_codes).length();
    for (std::size_t n : {16u, 64u}) {
        const auto crit = criteria(n);
        NoGradGuard guard;
        mac_counter() = 0;
        (void)model.forward(input, crit);
        EXPECT_EQ(mac_counter(), forward_macs(cfg, n_mol, n_dis, n, model.tree().size())) << n;
    }
}

TEST(OpCount, GroupingLinearNoGroupingQuadratic)
{
    ModelConfig cfg;
    const auto r128 = count_attention_ops(cfg, 10, 3, 128);
    const auto r256 = count_attention_ops(cfg, 10, 3, 256);
    const auto r512 = count_attention_ops(cfg, 10, 3, 512);
    EXPECT_EQ(r256.grouping_criteria_cost(), 2 * r128.grouping_criteria_cost());
    EXPECT_EQ(r512.grouping_criteria_cost(), 4 * r128.grouping_criteria_cost());
    // Growth of the whole grouping cost is linear: equal increments per added token.
    EXPECT_EQ(r512.grouping_total() - r256.grouping_total(), 2 * (r256.grouping_total() - r128.grouping_total()));
    const double q2 = static_cast<double>(r256.no_grouping_quadratic()) / static_cast<double>(r128.no_grouping_quadratic());
    const double q4 = static_cast<double>(r512.no_grouping_quadratic()) / static_cast<double>(r128.no_grouping_quadratic());
    EXPECT_NEAR(q2, 4.0, 0.4);
    EXPECT_NEAR(q4, 16.0, 1.6);
    // Query side of every grouping cross-attention site is fixed by the centroid count.
    for (const auto& site : r512.grouping) {
        if (site.site.find(".cross") != std::string::npos) {
            EXPECT_LE(site.queries, 100u);
        }
    }
}

TEST(Checkpoint, RoundTripRestoresEveryParameter)
{
    auto a = make_branch<float>(ModelConfig{}, 1);
    auto b = make_branch<float>(ModelConfig{}, 2);
    const auto path = (std::filesystem::temp_directory_path() / "trialfuse_ckpt.bin").string();
    save_checkpoint(path, {.config_hash = 42, .seed = 1, .head_input_width = 48, .metadata = "k=v\n"}, a.parameters());
    const auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.header.config_hash, 42u);
    EXPECT_EQ(ck.header.head_input_width, 48u);
    EXPECT_EQ(ck.header.metadata, "k=v\n");
    apply_checkpoint(ck, b.parameters());
    const auto crit = criteria(5);
    EXPECT_EQ(a.forward(sample_input(), crit).value(), b.forward(sample_input(), crit).value());
    std::remove(path.c_str());
}

TEST(Checkpoint, DetectsCorruptionAndMismatch)
{
    auto a = make_branch<float>(tiny_config());
    auto bytes = encode_checkpoint({}, a.parameters());
    auto flipped = bytes;
    flipped[flipped.size() - 10] ^= 0x40;
    EXPECT_THROW((void)decode_checkpoint(flipped, "mem"), CorruptionError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW((void)decode_checkpoint(bad_magic, "mem"), CorruptionError);
    auto truncated = bytes;
    truncated.resize(truncated.size() / 2);
    EXPECT_THROW((void)decode_checkpoint(truncated, "mem"), CorruptionError);

    auto ck = decode_checkpoint(bytes, "mem");
    ModelConfig other = tiny_config();
    other.self_layers = 2;
    auto b = make_branch<float>(other);
    EXPECT_THROW(apply_checkpoint(ck, b.parameters()), LookupError);
}
