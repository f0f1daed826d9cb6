// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "trialfuse/criteria/multi_level.hpp"
#include "trialfuse/dm/dm_branch.hpp"
#include "trialfuse/numerics/gradcheck.hpp"
#include "trialfuse/peft/finetune.hpp"
#include "trialfuse/pretrain/pair_loss.hpp"

namespace trialfuse {

inline constexpr double kGradCheckTolerance = 1e-3;

struct GradSuiteCase {
    std::string name;
    GradCheckResult result;
    [[nodiscard]] bool passed() const { return result.max_rel_error < kGradCheckTolerance; }
};

/// Narrow widths so double-precision central differences stay cheap.
[[nodiscard]] inline ModelConfig gradcheck_model_config()
{
    ModelConfig cfg;
    cfg.d_dm = 8;
    cfg.num_heads = 2;
    cfg.d_mol = 6;
    cfg.enrich_layers = 1;
    cfg.grouping_layers = 2;
    cfg.self_layers = 1;
    cfg.final_centroids = 2;
    cfg.d_llm = 5;
    cfg.lora_rank = 2;
    cfg.lora_alpha = 2.0;
    return cfg;
}

/// Central-difference checks (eps 1e-4) of every differentiable primitive,
/// attention with adapters, both losses, and the full fusion -> pooling ->
/// pair-matching and fusion -> head -> weighted BCE paths.
/// `tree` supplies the ICD codes used by the model-level cases.
inline std::vector<GradSuiteCase> run_gradient_suite(const IcdTree& tree,
                                                     const std::function<void(const GradSuiteCase&)>& on_case = {})
{
    using Td = Tensor<double>;
    using Vd = Var<double>;
    using Pd = Parameter<double>;
    std::vector<GradSuiteCase> out;
    auto check = [&](const std::string& name, const std::function<Vd()>& f, const ParameterList<double>& params,
                     GradCheckOptions opts = {}) {
        out.push_back({name, finite_diff_check<double>(f, params, opts)});
        if (on_case) on_case(out.back());
    };
    auto mat = [](std::size_t r, std::size_t c, std::uint64_t seed) {
        Rng rng(seed);
        return Td::uniform({r, c}, rng, -1.0, 1.0);
    };

    Pd a(mat(3, 4, 61));
    Pd b(mat(4, 5, 62));
    Pd c(mat(3, 4, 63));
    Pd row(mat(1, 4, 64));
    Pd s(Td::scalar(0.3));
    Pd gain(mat(1, 4, 65));
    Pd bias(mat(1, 4, 66));
    const Td proj = mat(3, 5, 67);
    auto weighted = [](const Vd& v) {
        Rng rng(99);
        return sum(mul(v, constant(Td::uniform(v.shape(), rng, -1.0, 1.0))));
    };
    check("matmul", [&] { return sum(mul(matmul(a.var(), b.var()), constant(proj))); }, {{"a", &a}, {"b", &b}});
    check("transpose", [&] { return weighted(transpose(a.var())); }, {{"a", &a}});
    check("add", [&] { return weighted(add(a.var(), c.var())); }, {{"a", &a}, {"c", &c}});
    check("sub", [&] { return weighted(sub(a.var(), c.var())); }, {{"a", &a}, {"c", &c}});
    check("mul", [&] { return weighted(mul(a.var(), c.var())); }, {{"a", &a}, {"c", &c}});
    check("add_row", [&] { return weighted(add_row(a.var(), row.var())); }, {{"a", &a}, {"row", &row}});
    check("scale", [&] { return weighted(scale(a.var(), -1.7)); }, {{"a", &a}});
    check("scale_by", [&] { return weighted(scale_by(a.var(), s.var())); }, {{"a", &a}, {"s", &s}});
    check("exp", [&] { return weighted(exp(a.var())); }, {{"a", &a}});
    check("relu", [&] { return weighted(relu(a.var())); }, {{"a", &a}});
    check("sigmoid", [&] { return weighted(sigmoid(a.var())); }, {{"a", &a}});
    check("sum", [&] { return sum(mul(a.var(), a.var())); }, {{"a", &a}});
    check("mean", [&] { return mean(mul(a.var(), a.var())); }, {{"a", &a}});
    check("mean_rows", [&] { return weighted(mean_rows(a.var())); }, {{"a", &a}});
    check("concat_rows", [&] { return weighted(concat_rows<double>({a.var(), c.var(), row.var()})); },
          {{"a", &a}, {"c", &c}, {"row", &row}});
    check("concat_cols", [&] { return weighted(concat_cols<double>({a.var(), slice_rows(transpose(b.var()), 0, 3)})); },
          {{"a", &a}, {"b", &b}});
    check("slice_rows", [&] { return weighted(slice_rows(a.var(), 1, 2)); }, {{"a", &a}});
    check("gather_rows", [&] { return weighted(gather_rows(a.var(), {2, 0, 2, 1})); }, {{"a", &a}});
    check("softmax_rows", [&] { return weighted(softmax_rows(a.var())); }, {{"a", &a}});
    check("layer_norm", [&] { return weighted(layer_norm(a.var(), gain.var(), bias.var())); },
          {{"a", &a}, {"gain", &gain}, {"bias", &bias}});
    check("l2_normalize_rows", [&] { return weighted(l2_normalize_rows(a.var())); }, {{"a", &a}});
    check("softmax_cross_entropy", [&] { return softmax_cross_entropy(a.var(), {1, 3, 0}); }, {{"a", &a}});
    check("weighted_bce", [&] {
        return weighted_bce(sigmoid(a.var()), {1, 0, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1}, 0.7, 0.3);
    }, {{"a", &a}});
    check("attention_core", [&] { return weighted(attention_core(a.var(), c.var(), mul(c.var(), c.var()), 2)); },
          {{"a", &a}, {"c", &c}});

    {
        Rng rng(71);
        AttentionParams<double> attn(8, 4, rng);
        attn.attach_adapters(2, 2.0, rng);
        for (auto& ad : attn.adapters) {
            ad->b.mutable_value() = Td::uniform({8, 2}, rng, -0.5, 0.5);
        }
        Pd xq(mat(3, 8, 73));
        Pd xkv(mat(5, 8, 74));
        ParameterList<double> params{{"xq", &xq}, {"xkv", &xkv}};
        attn.for_each_parameter("attn", [&](const std::string& name, Pd& p) { params.push_back({name, &p}); });
        check("multi_head_attention+lora", [&] { return weighted(multi_head_attention(xq.var(), xkv.var(), attn)); },
              params);
    }

    {
        Rng rng(5);
        Pd fc(Td::normal({5, 4}, rng));
        Pd fdm(Td::normal({5, 4}, rng));
        Pd temp(Td::scalar(0.6));
        const ParameterList<double> params{{"f_c", &fc}, {"f_dm", &fdm}, {"log_temperature", &temp}};
        check("pair_matching_loss", [&] { return pair_matching_loss(fc.var(), fdm.var(), temp.var()); }, params);
        check("pair_matching_loss(cosine)", [&] { return pair_matching_loss(fc.var(), fdm.var(), temp.var(), true); },
              params);
    }

    // Model-level paths.
    const auto cfg = gradcheck_model_config();
    const auto& nodes = tree.nodes();
    if (nodes.size() < 3) {
        throw DataError("gradient suite needs an ICD tree with at least 3 codes");
    }
    const std::vector<DrugDiseaseInput> inputs{
        {{"CC(=O)Oc1ccccc1C(=O)O", "CN1CCC[C@H]1c2cccnc2"}, {nodes[nodes.size() - 1], nodes[nodes.size() - 2]}},
        {{"CCO"}, {nodes[nodes.size() - 3]}},
        {{"c1ccccc1O", "CCN(CC)CC"}, {nodes[nodes.size() - 2], nodes[nodes.size() - 3]}}};
    const std::vector<MultiLevelCriteriaEmbedding> crit{toy_encode("adults aged 18 or older", 3, cfg.d_llm),
                                                        toy_encode("no prior chemotherapy", 4, cfg.d_llm),
                                                        toy_encode("stable renal function required today", 5, cfg.d_llm)};
    {
        DMBranch<double> model(cfg, tree, SmilesSegmentDict(cfg.d_mol, 0), 11);
        const auto params = model.parameters();
        check("fuse_forward->avgpool->pair_matching_loss", [&] {
            std::vector<Vd> c_rows;
            std::vector<Vd> m_rows;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                c_rows.push_back(model.criteria_pair_embedding(crit[i]));
                m_rows.push_back(avgpool(model.forward(inputs[i], crit[i])));
            }
            return pair_matching_loss(concat_rows(c_rows), concat_rows(m_rows), kDefaultTau);
        }, params, {.max_coords_per_param = 8});
    }
    {
        FinetuneModel<double> model(DMBranch<double>(cfg, tree, SmilesSegmentDict(cfg.d_mol, 0), 12), 6, 12);
        model.prepare_peft(LoraSites::both, 13);
        Rng rng(14);
        for (const auto& p : model.adapter_parameters()) {
            if (p.name.find(".lora_B") != std::string::npos) {
                p.param->mutable_value() = Td::uniform(p.param->shape(), rng, -0.3, 0.3);
            }
        }
        ParameterList<double> params;
        for (const auto& p : model.parameters()) {
            if (p.param->trainable()) params.push_back(p);
        }
        check("fuse_forward->head->weighted_bce (adapters)", [&] {
            std::vector<Vd> feats;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                PairExample ex{"t", inputs[i], crit[i], 0};
                feats.push_back(model.features(ex));
            }
            return weighted_bce(model.head().probabilities(concat_rows(feats)), {1, 0, 1}, 0.6, 0.4);
        }, params, {.max_coords_per_param = 8});
    }
    return out;
}

} // namespace trialfuse
