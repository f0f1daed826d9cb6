// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "trialfuse/config.hpp"
#include "trialfuse/criteria/multi_level.hpp"
#include "trialfuse/encoders/enrich.hpp"
#include "trialfuse/encoders/molecule_encoder.hpp"
#include "trialfuse/encoders/segment_dict.hpp"
#include "trialfuse/errors.hpp"
#include "trialfuse/peft/lora.hpp"

namespace trialfuse {

inline constexpr std::size_t kFusionLevels = 3;  // coarse, medium, fine
inline constexpr std::array<const char*, kFusionLevels> kFusionLevelNames{"coarse", "medium", "fine"};

struct ModelConfig {
    std::size_t d_dm = 16;
    std::size_t num_heads = 8;
    std::size_t d_mol = kDefaultSegmentWidth;
    std::size_t max_molecules = kMaxMoleculesPerTrial;
    std::size_t enrich_layers = kDefaultEnrichLayers;
    std::size_t grouping_layers = 3;  // G
    std::size_t self_layers = 2;      // S
    std::size_t final_centroids = 25;
    std::size_t d_llm = kToyCriteriaWidth;
    std::size_t lora_rank = kDefaultLoraRank;
    double lora_alpha = 8.0;
    std::uint64_t segment_seed = 0;

    /// Centroids per grouping layer, halving down to `final_centroids`.
    [[nodiscard]] std::vector<std::size_t> centroid_schedule() const
    {
        std::vector<std::size_t> out(grouping_layers);
        for (std::size_t i = 0; i < grouping_layers; ++i) {
            out[i] = final_centroids << (grouping_layers - 1 - i);
        }
        return out;
    }

    void validate() const
    {
        auto need = [](bool ok, const std::string& what) {
            if (!ok) {
                throw ConfigError("invalid model config: " + what);
            }
        };
        need(d_dm > 0 && num_heads > 0 && d_dm % num_heads == 0, "model.d_dm must be a positive multiple of model.heads");
        need(d_mol > 0 && d_llm > 0, "model.d_mol and model.d_llm must be positive");
        need(max_molecules > 0, "model.max_molecules must be positive");
        need(grouping_layers >= 1 && grouping_layers <= 16, "model.grouping_layers must be in [1, 16]");
        need(final_centroids >= 1, "model.final_centroids must be positive");
        need(lora_rank >= 1 && lora_alpha > 0, "lora.rank and lora.alpha must be positive");
    }

    void write_to(KeyValueConfig& kv) const
    {
        kv.set("model.d_dm", std::to_string(d_dm));
        kv.set("model.heads", std::to_string(num_heads));
        kv.set("model.d_mol", std::to_string(d_mol));
        kv.set("model.max_molecules", std::to_string(max_molecules));
        kv.set("model.enrich_layers", std::to_string(enrich_layers));
        kv.set("model.grouping_layers", std::to_string(grouping_layers));
        kv.set("model.self_layers", std::to_string(self_layers));
        kv.set("model.final_centroids", std::to_string(final_centroids));
        kv.set("model.d_llm", std::to_string(d_llm));
        kv.set("model.segment_seed", std::to_string(segment_seed));
        kv.set("lora.rank", std::to_string(lora_rank));
        kv.set("lora.alpha", format_real(lora_alpha));
    }

    static ModelConfig read_from(const KeyValueConfig& kv) { return read_from(kv, ModelConfig{}); }

    static ModelConfig read_from(const KeyValueConfig& kv, ModelConfig base)
    {
        auto size = [&](const char* key, std::size_t fallback) {
            const auto v = kv.get_int(key, static_cast<long long>(fallback));
            if (v < 0) {
                throw ConfigError(std::string("config key '") + key + "' must be non-negative");
            }
            return static_cast<std::size_t>(v);
        };
        base.d_dm = size("model.d_dm", base.d_dm);
        base.num_heads = size("model.heads", base.num_heads);
        base.d_mol = size("model.d_mol", base.d_mol);
        base.max_molecules = size("model.max_molecules", base.max_molecules);
        base.enrich_layers = size("model.enrich_layers", base.enrich_layers);
        base.grouping_layers = size("model.grouping_layers", base.grouping_layers);
        base.self_layers = size("model.self_layers", base.self_layers);
        base.final_centroids = size("model.final_centroids", base.final_centroids);
        base.d_llm = size("model.d_llm", base.d_llm);
        base.segment_seed = size("model.segment_seed", base.segment_seed);
        base.lora_rank = size("lora.rank", base.lora_rank);
        base.lora_alpha = kv.get_double("lora.alpha", base.lora_alpha);
        base.validate();
        return base;
    }
};

} // namespace trialfuse
