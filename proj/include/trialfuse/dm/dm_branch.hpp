// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trialfuse/criteria/multi_level.hpp"
#include "trialfuse/dm/grouping.hpp"
#include "trialfuse/dm/model_config.hpp"
#include "trialfuse/encoders/disease_encoder.hpp"
#include "trialfuse/encoders/enrich.hpp"
#include "trialfuse/encoders/icd_tree.hpp"
#include "trialfuse/encoders/molecule_encoder.hpp"
#include "trialfuse/encoders/segment_dict.hpp"
#include "trialfuse/numerics/ops.hpp"

namespace trialfuse {


enum class LoraSites { none, cross, self, both };

[[nodiscard]] inline LoraSites parse_lora_sites(const std::string& s)
{
    if (s == "none") return LoraSites::none;
    if (s == "cross" || s == "cross_only") return LoraSites::cross;
    if (s == "self" || s == "self_only") return LoraSites::self;
    if (s == "both") return LoraSites::both;
    throw ConfigError("unknown LoRA site selection '" + s + "' (expected none, cross, self or both)");
}

[[nodiscard]] inline const char* lora_sites_name(LoraSites s)
{
    switch (s) {
    case LoraSites::none: return "none";
    case LoraSites::cross: return "cross";
    case LoraSites::self: return "self";
    case LoraSites::both: return "both";
    }
    return "none";
}

struct DrugDiseaseInput {
    std::vector<std::string> smiles;
    std::vector<std::string> icd_codes;
};

/// Instrumentation filled by fuse_forward.
template <typename T>
struct FuseTrace {
    std::array<std::size_t, kFusionLevels> block_input_lengths{};
    std::array<std::size_t, kFusionLevels> kv_criteria_tokens{};
    std::vector<std::vector<std::size_t>> layer_lengths;  // per block
    std::array<Tensor<T>, kFusionLevels> block_inputs;
    std::array<Tensor<T>, kFusionLevels> block_outputs;
};

template <typename T>
class DMBranch {
public:
    DMBranch() = default;

    DMBranch(const ModelConfig& cfg, IcdTree tree, SmilesSegmentDict dict, std::uint64_t seed)
        : cfg_(cfg), tree_(std::move(tree)), dict_(std::move(dict))
    {
        cfg_.validate();
        if (dict_.width() != cfg_.d_mol) {
            throw DimensionError("segment dictionary width " + std::to_string(dict_.width()) + " differs from model.d_mol "
                                 + std::to_string(cfg_.d_mol));
        }
        Rng enc_rng(derive_seed(seed, 1));
        mol_ = MoleculeEncoder<T>(cfg_.d_mol, cfg_.d_dm, cfg_.max_molecules, enc_rng);
        dis_ = DiseaseEncoder<T>(tree_, cfg_.d_dm, enc_rng);
        Rng enrich_rng(derive_seed(seed, 2));
        for (std::size_t i = 0; i < cfg_.enrich_layers; ++i) {
            mol_enrich_.emplace_back(cfg_.d_dm, cfg_.num_heads, enrich_rng);
        }
        for (std::size_t i = 0; i < cfg_.enrich_layers; ++i) {
            dis_enrich_.emplace_back(cfg_.d_dm, cfg_.num_heads, enrich_rng);
        }
        Rng group_rng(derive_seed(seed, 3));
        for (auto& b : blocks_) {
            b = GroupingBlock<T>(cfg_.centroid_schedule(), cfg_.d_dm, cfg_.num_heads, cfg_.self_layers, group_rng);
        }
        Rng proj_rng(derive_seed(seed, 4));
        const double sd_llm = 1.0 / std::sqrt(static_cast<double>(cfg_.d_llm));
        for (auto& p : level_proj_) {
            p = Parameter<T>(Tensor<T>::normal({cfg_.d_llm, cfg_.d_dm}, proj_rng, sd_llm));
        }
        source_types_ = Parameter<T>(Tensor<T>::normal({kSourceTypeCount, cfg_.d_dm}, proj_rng));
        for (auto& n : block_norms_) {
            n = LayerNormParams<T>(cfg_.d_dm);
        }
        pair_proj_ = Parameter<T>(Tensor<T>::normal({cfg_.d_llm, cfg_.d_dm}, proj_rng, sd_llm));
    }

    [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const IcdTree& tree() const noexcept { return tree_; }
    [[nodiscard]] const SmilesSegmentDict& segment_dict() const noexcept { return dict_; }

    [[nodiscard]] TokenSequence<T> embed_molecules(const std::vector<std::string>& smiles) const
    {
        return mol_.embed(smiles, dict_);
    }
    [[nodiscard]] TokenSequence<T> embed_diseases(const std::vector<std::string>& codes) const
    {
        return dis_.embed(codes, tree_);
    }

    /// Multi-level fusion: enriched molecule and disease tokens plus projected
    /// coarse criteria feed block 1; each later block sees the previous block's
    /// layer-normalized output plus the next criteria level. Returns the
    /// layer-normalized final aggregate (final_centroids x d_dm).
    [[nodiscard]] Var<T> fuse_forward(const TokenSequence<T>& mol, const TokenSequence<T>& dis,
                                      const MultiLevelCriteriaEmbedding& crit, FuseTrace<T>* trace = nullptr) const
    {
        crit.validate();
        if (crit.d_llm() != cfg_.d_llm) {
            throw DimensionError("criteria width " + std::to_string(crit.d_llm()) + " does not match model.d_llm "
                                 + std::to_string(cfg_.d_llm));
        }
        const auto mol_x = with_source(enrich(mol, mol_enrich_).tokens, SourceTag::molecule);
        const auto dis_x = with_source(enrich(dis, dis_enrich_).tokens, SourceTag::disease);

        Var<T> aggregate;
        for (std::size_t level = 0; level < kFusionLevels; ++level) {
            const auto crit_tokens = criteria_tokens(crit, level);
            Var<T> input = level == 0 ? concat_rows<T>({mol_x, dis_x, crit_tokens})
                                      : concat_rows<T>({with_source(aggregate, SourceTag::aggregate), crit_tokens});
            std::vector<std::size_t> lengths;
            const TokenSequence<T> seq(input, SourceTag::aggregate, std::vector<int>(input.rows(), 0));
            const auto raw = blocks_[level].forward(seq, trace ? &lengths : nullptr).tokens;
            aggregate = block_norms_[level](raw);
            if (trace) {
                trace->block_input_lengths[level] = input.rows();
                trace->kv_criteria_tokens[level] = crit_tokens.rows();
                trace->layer_lengths.push_back(std::move(lengths));
                trace->block_inputs[level] = input.value();
                trace->block_outputs[level] = raw.value();
            }
        }
        return aggregate;
    }

    [[nodiscard]] Var<T> forward(const DrugDiseaseInput& in, const MultiLevelCriteriaEmbedding& crit,
                                 FuseTrace<T>* trace = nullptr) const
    {
        return fuse_forward(embed_molecules(in.smiles), embed_diseases(in.icd_codes), crit, trace);
    }

    /// Pooled drug-disease embedding f_DM (1 x d_dm).
    [[nodiscard]] Var<T> pooled_dm(const DrugDiseaseInput& in, const MultiLevelCriteriaEmbedding& crit) const
    {
        return mean_rows(forward(in, crit));
    }

    /// Pooled last-layer criteria (1 x d_llm); no trainable parameters involved.
    [[nodiscard]] static Var<T> pooled_criteria(const MultiLevelCriteriaEmbedding& crit)
    {
        return mean_rows(constant(crit.last().template cast<T>()));
    }

    /// Criteria side of the pair-matching objective, mapped to d_dm (1 x d_dm).
    [[nodiscard]] Var<T> criteria_pair_embedding(const MultiLevelCriteriaEmbedding& crit) const
    {
        return matmul(pooled_criteria(crit), pair_proj_.var());
    }

    void attach_lora(LoraSites sites, Rng& rng)
    {
        const bool self_sites = sites == LoraSites::self || sites == LoraSites::both;
        const bool cross_sites = sites == LoraSites::cross || sites == LoraSites::both;
        auto attach = [&](AttentionParams<T>& a) { a.attach_adapters(cfg_.lora_rank, cfg_.lora_alpha, rng); };
        if (self_sites) {
            for (auto& a : mol_enrich_) attach(a.attn);
            for (auto& a : dis_enrich_) attach(a.attn);
        }
        for (auto& b : blocks_) {
            for (auto& layer : b.layers) {
                if (cross_sites) attach(layer.cross);
                if (self_sites) {
                    for (auto& a : layer.self_stack) attach(a.attn);
                }
            }
        }
    }

    /// Everything except LoRA adapters becomes frozen; adapters stay trainable.
    void freeze_backbone()
    {
        for_each_parameter([](const std::string& name, Parameter<T>& p) {
            p.set_trainable(is_adapter_name(name));
        });
    }

    [[nodiscard]] static bool is_adapter_name(const std::string& name)
    {
        return name.find(".lora_A") != std::string::npos || name.find(".lora_B") != std::string::npos;
    }

    template <typename Fn>
    void for_each_parameter(Fn&& fn)
    {
        mol_.for_each_parameter("mol", fn);
        for (std::size_t i = 0; i < mol_enrich_.size(); ++i) {
            mol_enrich_[i].for_each_parameter("mol.enrich" + std::to_string(i), fn);
        }
        dis_.for_each_parameter("dis", fn);
        for (std::size_t i = 0; i < dis_enrich_.size(); ++i) {
            dis_enrich_[i].for_each_parameter("dis.enrich" + std::to_string(i), fn);
        }
        for (std::size_t b = 0; b < kFusionLevels; ++b) {
            blocks_[b].for_each_parameter(std::string("block.") + kFusionLevelNames[b], fn);
            if (b + 1 < kFusionLevels) {
                block_norms_[b].for_each_parameter(std::string("block.") + kFusionLevelNames[b] + ".norm", fn);
            }
        }
        for (std::size_t l = 0; l < kFusionLevels; ++l) {
            fn(std::string("proj.") + kFusionLevelNames[l], level_proj_[l]);
        }
        fn("source_types", source_types_);
        block_norms_.back().for_each_parameter("final_ln", fn);
        fn("pair_projection", pair_proj_);
    }

    [[nodiscard]] ParameterList<T> parameters()
    {
        ParameterList<T> out;
        for_each_parameter([&](const std::string& name, Parameter<T>& p) { out.push_back({name, &p}); });
        return out;
    }

    [[nodiscard]] Parameter<T>& level_projection(std::size_t level) { return level_proj_.at(level); }
    [[nodiscard]] GroupingBlock<T>& block(std::size_t level) { return blocks_.at(level); }

private:
    [[nodiscard]] Var<T> with_source(const Var<T>& x, SourceTag tag) const
    {
        return add_row(x, gather_rows(source_types_.var(), {static_cast<std::size_t>(tag)}));
    }

    [[nodiscard]] Var<T> criteria_tokens(const MultiLevelCriteriaEmbedding& crit, std::size_t level) const
    {
        auto projected = matmul(constant(crit.levels[level].template cast<T>()), level_proj_[level].var());
        return with_source(projected, SourceTag::criteria);
    }

    ModelConfig cfg_;
    IcdTree tree_;
    SmilesSegmentDict dict_;
    MoleculeEncoder<T> mol_;
    DiseaseEncoder<T> dis_;
    std::vector<SelfAttentionLayer<T>> mol_enrich_;
    std::vector<SelfAttentionLayer<T>> dis_enrich_;
    std::array<GroupingBlock<T>, kFusionLevels> blocks_;
    std::array<Parameter<T>, kFusionLevels> level_proj_;
    Parameter<T> source_types_;
    std::array<LayerNormParams<T>, kFusionLevels> block_norms_;  // the last one is the final norm
    Parameter<T> pair_proj_;
};

} // namespace trialfuse
