// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "trialfuse/data/drug_index.hpp"
#include "trialfuse/data/trial_record.hpp"

namespace trialfuse {

struct Exclusion {
    std::string nct_id;
    std::string reason_code;
    std::string detail;
};

struct SctResult {
    std::vector<TrialRecord> labeled;  // label = 1, sorted by nct_id
    std::vector<Exclusion> excluded;   // sorted by nct_id
};

/// Success-labeled pre-training set. A phase I-III trial is labeled 1 when
/// every one of its drugs is marketed or has a trial in a later phase
/// (phase IV included). Phase IV trials serve only as evidence.
[[nodiscard]] inline SctResult build_sct(const std::vector<TrialRecord>& trials, const DrugEntityIndex& index)
{
    std::map<std::string, const TrialRecord*> by_id;
    for (const auto& t : trials) {
        if (!by_id.emplace(t.nct_id, &t).second) {
            throw DataError("duplicate nct_id '" + t.nct_id + "'");
        }
    }

    std::map<std::string, std::vector<std::string>> resolved;  // nct_id -> canonical ids
    std::map<std::string, std::string> unresolved;            // nct_id -> first unknown name
    std::map<std::string, int> max_phase;                     // canonical id -> highest phase seen
    for (const auto& [id, t] : by_id) {
        if (t->drug_keys().empty()) {
            unresolved[id] = "";
            continue;
        }
        std::set<std::string> ids;
        for (const auto& name : t->drug_keys()) {
            const auto c = index.resolve(name);
            if (!c) {
                unresolved.emplace(id, name);
                break;
            }
            ids.insert(*c);
        }
        if (unresolved.count(id)) continue;
        resolved[id] = {ids.begin(), ids.end()};
        for (const auto& c : ids) {
            auto& m = max_phase[c];
            m = std::max(m, static_cast<int>(t->phase));
        }
    }

    SctResult out;
    for (const auto& [id, t] : by_id) {
        if (t->phase == Phase::IV) {
            out.excluded.push_back({id, "phase_iv", "phase IV trials are used only as progression evidence"});
            continue;
        }
        if (const auto it = unresolved.find(id); it != unresolved.end()) {
            out.excluded.push_back({id, "unresolved_drug",
                                    it->second.empty() ? "trial lists no drugs" : "unknown drug '" + it->second + "'"});
            continue;
        }
        if (!t->eligible()) {
            out.excluded.push_back({id, "ineligible", t->smiles.empty() ? "no smiles" : "no icd_codes"});
            continue;
        }
        std::string failing;
        for (const auto& c : resolved.at(id)) {
            if (!index.marketed(c) && max_phase.at(c) <= static_cast<int>(t->phase)) {
                failing = c;
                break;
            }
        }
        if (!failing.empty()) {
            out.excluded.push_back({id, "uncertain_outcome",
                                    "drug '" + failing + "' is not marketed and has no later-phase trial"});
            continue;
        }
        TrialRecord r = *t;
        r.label = 1;
        out.labeled.push_back(std::move(r));
    }
    return out;
}

[[nodiscard]] inline std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
        return s;
    }
    std::string q = "\"";
    for (const char c : s) {
        q += c;
        if (c == '"') q += '"';
    }
    return q + "\"";
}

[[nodiscard]] inline std::string exclusion_report_csv(const std::vector<Exclusion>& excluded)
{
    std::ostringstream out;
    out << "nct_id,reason_code,detail\n";
    for (const auto& e : excluded) {
        out << csv_field(e.nct_id) << ',' << csv_field(e.reason_code) << ',' << csv_field(e.detail) << '\n';
    }
    return out.str();
}

struct SctStatistics {
    std::size_t trials = 0;
    std::size_t drugs = 0;
    std::size_t diseases = 0;
    double avg_criteria_words = 0.0;
    std::size_t drug_combinations = 0;
    std::size_t disease_combinations = 0;
};

/// Counts over canonical drug ids and ICD codes of the given trials.
[[nodiscard]] inline SctStatistics sct_statistics(const std::vector<TrialRecord>& trials, const DrugEntityIndex& index)
{
    SctStatistics s;
    s.trials = trials.size();
    std::set<std::string> drugs;
    std::set<std::string> diseases;
    std::set<std::set<std::string>> drug_sets;
    std::set<std::set<std::string>> disease_sets;
    std::size_t words = 0;
    for (const auto& t : trials) {
        std::set<std::string> ds;
        for (const auto& name : t.drug_keys()) {
            ds.insert(index.resolve(name).value_or(normalize_drug_name(name)));
        }
        drugs.insert(ds.begin(), ds.end());
        drug_sets.insert(ds);
        diseases.insert(t.icd_codes.begin(), t.icd_codes.end());
        disease_sets.insert(std::set<std::string>(t.icd_codes.begin(), t.icd_codes.end()));
        std::istringstream in(t.criteria_text);
        std::string w;
        while (in >> w) {
            ++words;
        }
    }
    s.drugs = drugs.size();
    s.diseases = diseases.size();
    s.drug_combinations = drug_sets.size();
    s.disease_combinations = disease_sets.size();
    s.avg_criteria_words = trials.empty() ? 0.0 : static_cast<double>(words) / static_cast<double>(trials.size());
    return s;
}

[[nodiscard]] inline std::string format_statistics(const SctStatistics& s)
{
    std::ostringstream out;
    out << "Statistic\tValue\n";
    out << "Number of trials\t" << s.trials << '\n';
    out << "Number of drugs\t" << s.drugs << '\n';
    out << "Number of diseases\t" << s.diseases << '\n';
    out << "Avg. words in eligibility criteria\t" << static_cast<long long>(std::llround(s.avg_criteria_words)) << '\n';
    out << "Unique drug combinations\t" << s.drug_combinations << '\n';
    out << "Unique disease combinations\t" << s.disease_combinations << '\n';
    return out.str();
}

} // namespace trialfuse

