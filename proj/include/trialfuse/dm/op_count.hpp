// SPDX-License-Identifier: Apache-2.0
#pragma once

// Closed-form multiply-accumulate counts for the forward pass, matching what
// mac_counter() records for the same shapes.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "trialfuse/dm/model_config.hpp"
#include "trialfuse/errors.hpp"

namespace trialfuse {

struct AttentionSiteCost {
    std::string site;
    std::uint64_t queries = 0;
    std::uint64_t keys = 0;
    std::uint64_t query_side = 0;  // Q and O projections
    std::uint64_t kv_side = 0;     // K and V projections
    std::uint64_t core = 0;        // scores and weighted values
    std::uint64_t criteria_kv = 0; // part of kv_side + core attributable to criteria keys

    [[nodiscard]] std::uint64_t total() const { return query_side + kv_side + core; }
};

/// m queries attending over n keys at width d.
[[nodiscard]] inline AttentionSiteCost attention_site(std::string name, std::uint64_t m, std::uint64_t n,
                                                      std::uint64_t d, std::uint64_t criteria_keys = 0)
{
    AttentionSiteCost c;
    c.site = std::move(name);
    c.queries = m;
    c.keys = n;
    c.query_side = 2 * m * d * d;
    c.kv_side = 2 * n * d * d;
    c.core = 2 * m * n * d;
    c.criteria_kv = 2 * criteria_keys * d * d + 2 * m * criteria_keys * d;
    return c;
}

struct OpCountReport {
    std::vector<AttentionSiteCost> grouping;
    std::vector<AttentionSiteCost> no_grouping;

    [[nodiscard]] static std::uint64_t sum_total(const std::vector<AttentionSiteCost>& sites)
    {
        std::uint64_t s = 0;
        for (const auto& c : sites) s += c.total();
        return s;
    }

    [[nodiscard]] std::uint64_t grouping_total() const { return sum_total(grouping); }
    [[nodiscard]] std::uint64_t no_grouping_total() const { return sum_total(no_grouping); }

    /// Cost of attending to criteria tokens in the grouping architecture: linear in n_crit.
    [[nodiscard]] std::uint64_t grouping_criteria_cost() const
    {
        std::uint64_t s = 0;
        for (const auto& c : grouping) s += c.criteria_kv;
        return s;
    }

    /// Score/value term of the growing-sequence alternative: quadratic in total length.
    [[nodiscard]] std::uint64_t no_grouping_quadratic() const
    {
        std::uint64_t s = 0;
        for (const auto& c : no_grouping) s += c.core;
        return s;
    }
};

/// Attention costs per site for one trial with n_mol molecule segment tokens,
/// n_dis disease tokens and n_crit criteria tokens. The no-grouping variant
/// concatenates each criteria level onto a growing sequence and runs one
/// self-attention per level.
[[nodiscard]] inline OpCountReport count_attention_ops(const ModelConfig& cfg, std::size_t n_mol, std::size_t n_dis,
                                                       std::size_t n_crit)
{
    if (n_mol == 0 || n_dis == 0 || n_crit == 0) {
        throw DimensionError("count_attention_ops needs positive token counts");
    }
    const std::uint64_t d = cfg.d_dm;
    OpCountReport r;
    for (std::size_t i = 0; i < cfg.enrich_layers; ++i) {
        r.grouping.push_back(attention_site("mol.enrich" + std::to_string(i), n_mol, n_mol, d));
    }
    for (std::size_t i = 0; i < cfg.enrich_layers; ++i) {
        r.grouping.push_back(attention_site("dis.enrich" + std::to_string(i), n_dis, n_dis, d));
    }
    const auto schedule = cfg.centroid_schedule();
    for (std::size_t b = 0; b < kFusionLevels; ++b) {
        const std::string block = std::string("block.") + kFusionLevelNames[b];
        std::uint64_t n = (b == 0 ? n_mol + n_dis : schedule.back()) + n_crit;
        for (std::size_t l = 0; l < schedule.size(); ++l) {
            const std::uint64_t c = schedule[l];
            const std::string layer = block + ".layer" + std::to_string(l);
            r.grouping.push_back(attention_site(layer + ".cross", c, n, d, l == 0 ? n_crit : 0));
            for (std::size_t s = 0; s < cfg.self_layers; ++s) {
                r.grouping.push_back(attention_site(layer + ".self" + std::to_string(s), c, c, d));
            }
            n = c;
        }
    }
    for (std::size_t i = 0; i < cfg.enrich_layers; ++i) {
        r.no_grouping.push_back(attention_site("mol.enrich" + std::to_string(i), n_mol, n_mol, d));
    }
    for (std::size_t i = 0; i < cfg.enrich_layers; ++i) {
        r.no_grouping.push_back(attention_site("dis.enrich" + std::to_string(i), n_dis, n_dis, d));
    }
    for (std::size_t level = 1; level <= kFusionLevels; ++level) {
        const std::uint64_t len = n_mol + n_dis + level * n_crit;
        r.no_grouping.push_back(
            attention_site(std::string("concat.") + kFusionLevelNames[level - 1], len, len, d, level * n_crit));
    }
    return r;
}

/// Every forward matmul and attention MAC of DMBranch::forward (no adapters).
[[nodiscard]] inline std::uint64_t forward_macs(const ModelConfig& cfg, std::size_t n_mol, std::size_t n_dis,
                                                std::size_t n_crit, std::size_t icd_tree_size)
{
    const std::uint64_t d = cfg.d_dm;
    std::uint64_t total = count_attention_ops(cfg, n_mol, n_dis, n_crit).grouping_total();
    total += static_cast<std::uint64_t>(n_mol) * cfg.d_mol * d;
    total += static_cast<std::uint64_t>(n_dis) * icd_tree_size * d;
    total += kFusionLevels * static_cast<std::uint64_t>(n_crit) * cfg.d_llm * d;
    return total;
}

} // namespace trialfuse
