// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "trialfuse/encoders/disease_encoder.hpp"
#include "trialfuse/encoders/enrich.hpp"
#include "trialfuse/encoders/icd_tree.hpp"
#include "trialfuse/encoders/molecule_encoder.hpp"
#include "trialfuse/encoders/segment_dict.hpp"
#include "trialfuse/encoders/smiles.hpp"

using namespace trialfuse;

namespace {

const std::string kFixtures = TRIALFUSE_FIXTURE_DIR;

std::vector<std::string> fixture_smiles()
{
    std::ifstream in(kFixtures + "/smiles_corpus.txt");
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            out.push_back(line);
        }
    }
    return out;
}

std::vector<SelfAttentionLayer<double>> make_stack(std::size_t layers, std::size_t width, std::size_t heads,
                                                std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<SelfAttentionLayer<double>> out;
    for (std::size_t i = 0; i < layers; ++i) {
        out.emplace_back(width, heads, rng);
    }
    return out;
}

} // namespace

TEST(SegmentSmiles, SingleAtoms)
{
    EXPECT_EQ(segment_smiles("CCO"), (std::vector<std::string>{"C", "C", "O"}));
}

TEST(SegmentSmiles, TwoLetterAtomsAndBranches)
{
    EXPECT_EQ(segment_smiles("C(Cl)Br"), (std::vector<std::string>{"C", "(", "Cl", ")", "Br"}));
    EXPECT_EQ(segment_smiles("[Na+].[Cl-]"), (std::vector<std::string>{"[Na+]", ".", "[Cl-]"}));
    EXPECT_EQ(segment_smiles("C1CC%10C1"), (std::vector<std::string>{"C", "1", "C", "C", "%10", "C", "1"}));
}

TEST(SegmentSmiles, UnbalancedBracketReportsIndex)
{
    try {
        (void)segment_smiles("C[Na");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.position(), 1u);
    }
    EXPECT_THROW((void)segment_smiles("CC]"), ParseError);
    EXPECT_THROW((void)segment_smiles("C[N[a]"), ParseError);
    EXPECT_THROW((void)segment_smiles(""), ParseError);
}

TEST(SegmentSmiles, JoinReproducesEveryFixture)
{
    const auto corpus = fixture_smiles();
    ASSERT_GE(corpus.size(), 10u);
    for (const auto& s : corpus) {
        const auto segs = segment_smiles(s);
        EXPECT_EQ(std::accumulate(segs.begin(), segs.end(), std::string{}), s);
    }
}

TEST(SegmentDict, LoadsFileAndFallsBackToHash)
{
    const auto dict = SmilesSegmentDict::load(kFixtures + "/segment_dict.tsv");
    EXPECT_EQ(dict.width(), 4u);
    EXPECT_EQ(dict.source(), SmilesSegmentDict::Source::file_loaded);
    EXPECT_EQ(dict.lookup("Cl"), (std::vector<double>{-0.5, 0.0, 0.5, 1e-3}));
    const auto fallback = dict.lookup("Br");
    EXPECT_EQ(fallback.size(), 4u);
    EXPECT_EQ(fallback, dict.lookup("Br"));
}

TEST(SegmentDict, RejectsRaggedWidths)
{
    std::istringstream in("C\t1,2,3\nO\t1,2\n");
    try {
        (void)SmilesSegmentDict::parse(in);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.position(), 2u);
    }
}

TEST(SegmentDict, HashVectorsAreDeterministicAndSeeded)
{
    const SmilesSegmentDict a(64, 1);
    const SmilesSegmentDict b(64, 1);
    const SmilesSegmentDict c(64, 2);
    EXPECT_EQ(a.lookup("[Pt]"), b.lookup("[Pt]"));
    EXPECT_NE(a.lookup("[Pt]"), c.lookup("[Pt]"));
    EXPECT_NE(a.lookup("C"), a.lookup("O"));
}

TEST(IcdTree, LoadsFixtureAndWalksPaths)
{
    const auto tree = IcdTree::load(kFixtures + "/icd_tree.tsv");
    EXPECT_EQ(tree.chapter_count(), 4u);
    EXPECT_EQ(tree.path("C34.1"), (std::vector<std::string>{"C", "C34", "C34.1"}));
    EXPECT_EQ(tree.path("E"), (std::vector<std::string>{"E"}));
    EXPECT_EQ(tree.chapter_index("C50.9"), tree.chapter_index("C34.1"));
    EXPECT_NE(tree.chapter_index("E11.9"), tree.chapter_index("C34.1"));
    EXPECT_THROW((void)tree.node_index("Z99"), LookupError);
}

TEST(IcdTree, RejectsCyclesAndDanglingParents)
{
    EXPECT_THROW(IcdTree::from_edges({{"A", "ROOT"}, {"B", "C"}, {"C", "B"}}), ParseError);
    EXPECT_THROW(IcdTree::from_edges({{"A", "ROOT"}, {"B", "Q"}}), ParseError);
}

TEST(IcdTree, DerivesHierarchyFromCodes)
{
    const auto tree = IcdTree::from_codes({"C34.1", "C50.9", "E11"});
    EXPECT_EQ(tree.path("C34.1"), (std::vector<std::string>{"C", "C34", "C34.1"}));
    EXPECT_EQ(tree.path("E11"), (std::vector<std::string>{"E", "E11"}));
    EXPECT_EQ(tree.chapter_count(), 2u);
}

class MoleculeEncoderTest : public ::testing::Test {
protected:
    SmilesSegmentDict dict{64, 0};
    Rng rng{5};
    MoleculeEncoder<double> enc{64, 16, kMaxMoleculesPerTrial, rng};
};

TEST_F(MoleculeEncoderTest, TokenCountMatchesSegmentation)
{
    const auto seq = enc.embed({"CCO", "CC"}, dict);
    EXPECT_EQ(seq.length(), 5u);
    EXPECT_EQ(seq.width(), 16u);
    EXPECT_EQ(seq.source_tag, SourceTag::molecule);
    // canonical order puts "CC" (molecule 0) before "CCO" (molecule 1)
    EXPECT_EQ(seq.group_ids, (std::vector<int>{0, 0, 1, 1, 1}));
}

TEST_F(MoleculeEncoderTest, SameMoleculeSameBlockAcrossTrials)
{
    const auto a = enc.embed({"CC(=O)O"}, dict);
    const auto b = enc.embed({"CC(=O)O"}, dict);
    EXPECT_EQ(a.tokens.value(), b.tokens.value());
}

TEST_F(MoleculeEncoderTest, MoleculesDifferByPositionalEmbedding)
{
    // "CO" and "CN" share their first segment "C"; the two C tokens differ only by slot.
    const auto seq = enc.embed({"CO", "CN"}, dict);
    const auto& tok = seq.tokens.value();
    const auto& pos = enc.positions.value();
    // canonical order: "CN" -> slot 0 (rows 0,1), "CO" -> slot 1 (rows 2,3)
    for (std::size_t j = 0; j < 16; ++j) {
        EXPECT_NEAR(tok(2, j) - tok(0, j), pos(1, j) - pos(0, j), 1e-12);
    }
}

TEST_F(MoleculeEncoderTest, ListOrderDoesNotChangeTokens)
{
    EXPECT_EQ(enc.embed({"CCO", "c1ccccc1", "N"}, dict).tokens.value(),
              enc.embed({"N", "CCO", "c1ccccc1"}, dict).tokens.value());
}

TEST_F(MoleculeEncoderTest, ErrorPaths)
{
    try {
        (void)enc.embed({}, dict);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_STREQ(e.what(), "trial has no drug molecules");
    }
    EXPECT_THROW((void)enc.embed(std::vector<std::string>(17, "C"), dict), DataError);
    EXPECT_THROW((void)enc.embed({"C[Na"}, dict), ParseError);
    EXPECT_THROW((void)enc.embed({"C"}, SmilesSegmentDict(8)), DimensionError);
}

class DiseaseEncoderTest : public ::testing::Test {
protected:
    IcdTree tree = IcdTree::load(kFixtures + "/icd_tree.tsv");
    Rng rng{6};
    DiseaseEncoder<double> enc{tree, 16, rng};
};

TEST_F(DiseaseEncoderTest, ChapterCodeIsItsOwnNodePlusCategory)
{
    const auto seq = enc.embed({"E"}, tree);
    const auto& node = enc.nodes.value();
    const auto& cat = enc.categories.value();
    const std::size_t ni = tree.node_index("E");
    const std::size_t ci = tree.chapter_index("E");
    for (std::size_t j = 0; j < 16; ++j) {
        EXPECT_NEAR(seq.tokens.value()(0, j), node(ni, j) + cat(ci, j), 1e-12);
    }
}

TEST_F(DiseaseEncoderTest, PathIsDepthWeightedMean)
{
    const auto seq = enc.embed({"C34.1"}, tree);
    const auto& node = enc.nodes.value();
    const auto& cat = enc.categories.value();
    for (std::size_t j = 0; j < 16; ++j) {
        const double expected = (1.0 * node(tree.node_index("C"), j) + 2.0 * node(tree.node_index("C34"), j)
                                 + 3.0 * node(tree.node_index("C34.1"), j))
                                    / 6.0
                                + cat(tree.chapter_index("C"), j);
        EXPECT_NEAR(seq.tokens.value()(0, j), expected, 1e-12);
    }
}

TEST_F(DiseaseEncoderTest, SameChapterSharesCategoryComponent)
{
    const auto seq = enc.embed({"C34.1", "C50.9", "I10"}, tree);
    EXPECT_EQ(seq.length(), 3u);
    EXPECT_EQ(seq.group_ids[0], seq.group_ids[1]);
    EXPECT_NE(seq.group_ids[0], seq.group_ids[2]);
    // Zero the node table: what remains is the category component alone.
    auto zeroed = enc;
    zeroed.nodes.mutable_value().fill(0.0);
    const auto cat_only = zeroed.embed({"C34.1", "C50.9"}, tree).tokens.value();
    for (std::size_t j = 0; j < 16; ++j) {
        EXPECT_EQ(cat_only(0, j), cat_only(1, j));
    }
}

TEST_F(DiseaseEncoderTest, UnknownCodeNamesTheCode)
{
    try {
        (void)enc.embed({"C34.1", "Z99.9"}, tree);
        FAIL();
    } catch (const LookupError& e) {
        EXPECT_NE(std::string(e.what()).find("Z99.9"), std::string::npos);
    }
}

TEST(Enrich, PreservesShapeAndMetadata)
{
    SmilesSegmentDict dict(64);
    Rng rng(7);
    MoleculeEncoder<double> enc(64, 16, kMaxMoleculesPerTrial, rng);
    const auto seq = enc.embed({"CC(=O)OC1=CC=CC=C1C(=O)O"}, dict);
    const auto out = enrich(seq, make_stack(kDefaultEnrichLayers, 16, 8, 8));
    EXPECT_EQ(out.tokens.shape(), seq.tokens.shape());
    EXPECT_EQ(out.group_ids, seq.group_ids);
    EXPECT_EQ(out.source_tag, SourceTag::molecule);
    EXPECT_THROW((void)enrich(seq, make_stack(1, 8, 2, 9)), DimensionError);
}

TEST(Enrich, PermutingTokensPermutesOutput)
{
    Rng rng(10);
    const auto x = Tensor<double>::normal({6, 16}, rng);
    const auto stack = make_stack(4, 16, 8, 11);
    const std::vector<std::size_t> perm{3, 1, 5, 0, 2, 4};
    const auto base = enrich(TokenSequence<double>(constant(x), SourceTag::molecule, std::vector<int>(6, 0)), stack);
    const auto permuted = enrich(
        TokenSequence<double>(gather_rows(constant(x), perm), SourceTag::molecule, std::vector<int>(6, 0)), stack);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 16; ++j) {
            EXPECT_NEAR(permuted.tokens.value()(i, j), base.tokens.value()(perm[i], j), 1e-12);
        }
    }
}

TEST(Enrich, ZeroValueAndOutputProjectionsGiveIdentity)
{
    Rng rng(12);
    const auto x = Tensor<double>::normal({5, 16}, rng);
    auto stack = make_stack(4, 16, 8, 13);
    for (auto& layer : stack) {
        layer.attn.weight(Projection::value).mutable_value().fill(0.0);
        layer.attn.weight(Projection::output).mutable_value().fill(0.0);
    }
    const auto out = enrich(TokenSequence<double>(constant(x), SourceTag::disease, std::vector<int>(5, 0)), stack);
    EXPECT_EQ(out.tokens.value(), x);
}

TEST(Enrich, PooledMoleculeInvariantToSegmentOrder)
{
    SmilesSegmentDict dict(64);
    Rng rng(14);
    MoleculeEncoder<double> enc(64, 16, kMaxMoleculesPerTrial, rng);
    const auto stack = make_stack(4, 16, 8, 15);
    // Same segment multiset, different order within the molecule.
    const auto a = mean_rows(enrich(enc.embed({"CC(Cl)O"}, dict), stack).tokens).value();
    const auto b = mean_rows(enrich(enc.embed({"OC(C)Cl"}, dict), stack).tokens).value();
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
}
