// SPDX-License-Identifier: Apache-2.0
#pragma once

// Trials as UTF-8 JSON lines:
//   {"nct_id":..,"phase":"II","smiles":[..],"icd_codes":[..],"criteria_text":..,
//    "start_date":"YYYY-MM-DD","label":1,"drugs":[..]}
// `label` and `drugs` are optional.

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trialfuse/errors.hpp"

namespace trialfuse {

enum class Phase { I = 1, II = 2, III = 3, IV = 4 };

[[nodiscard]] inline const char* phase_name(Phase p)
{
    static constexpr std::array<const char*, 4> names{"I", "II", "III", "IV"};
    return names[static_cast<std::size_t>(p) - 1];
}

[[nodiscard]] inline std::optional<Phase> parse_phase(const std::string& s)
{
    if (s == "I") return Phase::I;
    if (s == "II") return Phase::II;
    if (s == "III") return Phase::III;
    if (s == "IV") return Phase::IV;
    return std::nullopt;
}

[[nodiscard]] inline bool is_iso_date(const std::string& s)
{
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') {
        return false;
    }
    for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
        if (s[i] < '0' || s[i] > '9') {
            return false;
        }
    }
    const int month = std::stoi(s.substr(5, 2));
    const int day = std::stoi(s.substr(8, 2));
    return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

struct TrialRecord {
    std::string nct_id;
    Phase phase = Phase::I;
    std::vector<std::string> smiles;
    std::vector<std::string> icd_codes;
    std::string criteria_text;
    std::string start_date;  // YYYY-MM-DD
    std::optional<int> label;
    std::vector<std::string> drugs;  // drug names for synonym resolution; SMILES are used when empty

    /// Usable as a model input: at least one molecule and one disease code.
    [[nodiscard]] bool eligible() const { return !smiles.empty() && !icd_codes.empty(); }

    [[nodiscard]] const std::vector<std::string>& drug_keys() const { return drugs.empty() ? smiles : drugs; }

    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

[[nodiscard]] inline std::string to_json_line(const TrialRecord& r)
{
    nlohmann::ordered_json j;
    j["nct_id"] = r.nct_id;
    j["phase"] = phase_name(r.phase);
    j["smiles"] = r.smiles;
    j["icd_codes"] = r.icd_codes;
    j["criteria_text"] = r.criteria_text;
    j["start_date"] = r.start_date;
    if (r.label) {
        j["label"] = *r.label;
    }
    if (!r.drugs.empty()) {
        j["drugs"] = r.drugs;
    }
    return j.dump();
}

struct TrialLoadResult {
    std::vector<TrialRecord> records;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string> string_array(const nlohmann::json& j, const char* key, std::size_t line, bool required)
{
    if (!j.contains(key)) {
        if (required) {
            throw ParseError("line " + std::to_string(line) + ": missing field '" + key + "'", line);
        }
        return {};
    }
    const auto& v = j.at(key);
    if (!v.is_array()) {
        throw ParseError("line " + std::to_string(line) + ": field '" + key + "' must be an array", line);
    }
    std::vector<std::string> out;
    for (const auto& e : v) {
        if (!e.is_string()) {
            throw ParseError("line " + std::to_string(line) + ": field '" + key + "' must hold strings", line);
        }
        out.push_back(e.get<std::string>());
    }
    return out;
}

inline std::string string_field(const nlohmann::json& j, const char* key, std::size_t line)
{
    if (!j.contains(key) || !j.at(key).is_string()) {
        throw ParseError("line " + std::to_string(line) + ": missing or non-string field '" + key + "'", line);
    }
    return j.at(key).get<std::string>();
}

} // namespace detail

[[nodiscard]] inline TrialRecord parse_trial(const std::string& text, std::size_t line)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("line " + std::to_string(line) + ": malformed JSON: " + e.what(), line);
    }
    if (!j.is_object()) {
        throw ParseError("line " + std::to_string(line) + ": expected a JSON object", line);
    }
    TrialRecord r;
    r.nct_id = detail::string_field(j, "nct_id", line);
    if (r.nct_id.empty()) {
        throw ParseError("line " + std::to_string(line) + ": empty nct_id", line);
    }
    const auto phase = parse_phase(detail::string_field(j, "phase", line));
    if (!phase) {
        throw ParseError("line " + std::to_string(line) + ": phase must be one of I, II, III, IV", line);
    }
    r.phase = *phase;
    r.smiles = detail::string_array(j, "smiles", line, false);
    r.icd_codes = detail::string_array(j, "icd_codes", line, false);
    r.criteria_text = detail::string_field(j, "criteria_text", line);
    r.start_date = detail::string_field(j, "start_date", line);
    if (!is_iso_date(r.start_date)) {
        throw ParseError("line " + std::to_string(line) + ": start_date '" + r.start_date + "' is not YYYY-MM-DD", line);
    }
    if (j.contains("label") && !j.at("label").is_null()) {
        const auto& l = j.at("label");
        if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1)) {
            throw ParseError("line " + std::to_string(line) + ": label must be 0 or 1", line);
        }
        r.label = l.get<int>();
    }
    r.drugs = detail::string_array(j, "drugs", line, false);
    return r;
}

[[nodiscard]] inline TrialLoadResult parse_trials(std::istream& in)
{
    TrialLoadResult out;
    std::map<std::string, std::size_t> first_line;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') {
            text.pop_back();
        }
        if (text.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        auto r = parse_trial(text, line);
        if (const auto [it, inserted] = first_line.emplace(r.nct_id, line); !inserted) {
            throw DataError("duplicate nct_id '" + r.nct_id + "' on lines " + std::to_string(it->second) + " and "
                            + std::to_string(line));
        }
        if (!r.eligible()) {
            out.warnings.push_back("line " + std::to_string(line) + ": trial " + r.nct_id + " has no "
                                   + (r.smiles.empty() ? "smiles" : "icd_codes") + "; kept but not model-eligible");
        }
        out.records.push_back(std::move(r));
    }
    return out;
}

[[nodiscard]] inline TrialLoadResult load_trials(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw LookupError("cannot open trial file " + path);
    }
    return parse_trials(in);
}

[[nodiscard]] inline std::string trials_to_jsonl(const std::vector<TrialRecord>& records)
{
    std::string out;
    for (const auto& r : records) {
        out += to_json_line(r);
        out += '\n';
    }
    return out;
}

inline void write_trials(const std::string& path, const std::vector<TrialRecord>& records)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write trial file " + path);
    }
    out << trials_to_jsonl(records);
}

inline void sort_by_id(std::vector<TrialRecord>& records)
{
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.nct_id < b.nct_id; });
}

} // namespace trialfuse
