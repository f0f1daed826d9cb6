// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "trialfuse/data/drug_index.hpp"
#include "trialfuse/data/trial_record.hpp"
#include "trialfuse/numerics/random.hpp"

namespace trialfuse {

inline constexpr double kValidationFraction = 0.15;

struct DatasetSplit {
    std::vector<TrialRecord> train;
    std::vector<TrialRecord> validation;
    std::vector<TrialRecord> test;
    std::string cut_date;
    std::uint64_t seed = 0;
};

/// Seeded subset of round(fraction * n) indices, returned sorted.
[[nodiscard]] inline std::vector<std::size_t> validation_indices(std::size_t n, std::uint64_t seed,
                                                                 double fraction = kValidationFraction)
{
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    Rng rng(derive_seed(seed, 0x5A11D));
    auto idx = rng.sample_without_replacement(n, k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Trials starting on or before `cut_date` train, later ones test. A seeded
/// 15% of train becomes validation. Every subset is ordered by nct_id.
[[nodiscard]] inline DatasetSplit temporal_split(std::vector<TrialRecord> trials, const std::string& cut_date,
                                                 std::uint64_t seed)
{
    if (!is_iso_date(cut_date)) {
        throw ConfigError("cut date '" + cut_date + "' is not YYYY-MM-DD");
    }
    sort_by_id(trials);
    DatasetSplit split;
    split.cut_date = cut_date;
    split.seed = seed;
    std::vector<TrialRecord> train;
    for (auto& t : trials) {
        (t.start_date <= cut_date ? train : split.test).push_back(std::move(t));
    }
    if (train.empty() || split.test.empty()) {
        throw DataError("temporal split at " + cut_date + " leaves an empty " + (train.empty() ? "train" : "test")
                        + " side");
    }
    const auto val = validation_indices(train.size(), seed);
    std::size_t next = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (next < val.size() && val[next] == i) {
            split.validation.push_back(std::move(train[i]));
            ++next;
        } else {
            split.train.push_back(std::move(train[i]));
        }
    }
    return split;
}

struct LeakageReport {
    bool passed = true;
    std::vector<std::string> shared_ids;        // exact matches (failures)
    std::vector<std::string> case_only_matches; // equal ignoring case only (warnings)
};

[[nodiscard]] inline LeakageReport leakage_check(const std::vector<TrialRecord>& pretrain_set,
                                                 const std::vector<TrialRecord>& test_set)
{
    std::set<std::string> exact;
    std::set<std::string> folded;
    for (const auto& t : pretrain_set) {
        exact.insert(t.nct_id);
        folded.insert(normalize_drug_name(t.nct_id));
    }
    LeakageReport r;
    std::set<std::string> seen;
    for (const auto& t : test_set) {
        if (!seen.insert(t.nct_id).second) continue;
        if (exact.count(t.nct_id)) {
            r.shared_ids.push_back(t.nct_id);
        } else if (folded.count(normalize_drug_name(t.nct_id))) {
            r.case_only_matches.push_back(t.nct_id);
        }
    }
    std::sort(r.shared_ids.begin(), r.shared_ids.end());
    std::sort(r.case_only_matches.begin(), r.case_only_matches.end());
    r.passed = r.shared_ids.empty();
    return r;
}

/// Sorted multiset of a trial's ICD codes, as one key.
[[nodiscard]] inline std::string disease_combination(const TrialRecord& t)
{
    auto codes = t.icd_codes;
    std::sort(codes.begin(), codes.end());
    std::string key;
    for (const auto& c : codes) {
        key += c;
        key += '\x1f';
    }
    return key;
}

/// Test trials whose disease combination appears in no training set.
[[nodiscard]] inline std::vector<TrialRecord> new_disease_subset(const std::vector<std::vector<TrialRecord>>& train_sets,
                                                                 const std::vector<TrialRecord>& test_set)
{
    std::set<std::string> seen;
    for (const auto& set : train_sets) {
        for (const auto& t : set) {
            seen.insert(disease_combination(t));
        }
    }
    std::vector<TrialRecord> out;
    for (const auto& t : test_set) {
        if (!seen.count(disease_combination(t))) {
            out.push_back(t);
        }
    }
    return out;
}

} // namespace trialfuse
