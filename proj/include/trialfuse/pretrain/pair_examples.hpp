// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "trialfuse/criteria/criteria_source.hpp"
#include "trialfuse/data/trial_record.hpp"
#include "trialfuse/dm/dm_branch.hpp"

namespace trialfuse {

/// One trial ready for the model: drug-disease input plus its frozen criteria embedding.
struct PairExample {
    std::string trial_id;
    DrugDiseaseInput input;
    MultiLevelCriteriaEmbedding criteria;
    int label = -1;  // -1 when unlabeled
};

[[nodiscard]] inline std::vector<PairExample> make_pair_examples(const std::vector<TrialRecord>& trials,
                                                                 const CriteriaSource& encoder)
{
    std::vector<PairExample> out;
    out.reserve(trials.size());
    for (const auto& t : trials) {
        if (!t.eligible()) {
            throw DataError("trial '" + t.nct_id + "' lacks SMILES, ICD codes or criteria");
        }
        out.push_back({t.nct_id, {t.smiles, t.icd_codes}, encoder.encode(t.nct_id, t.criteria_text), t.label.value_or(-1)});
    }
    return out;
}

[[nodiscard]] inline std::vector<PairExample> select(const std::vector<PairExample>& all,
                                                     const std::vector<std::size_t>& idx)
{
    std::vector<PairExample> out;
    out.reserve(idx.size());
    for (const auto i : idx) {
        out.push_back(all.at(i));
    }
    return out;
}

} // namespace trialfuse
