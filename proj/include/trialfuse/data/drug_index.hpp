// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "trialfuse/errors.hpp"

namespace trialfuse {

[[nodiscard]] inline std::string normalize_drug_name(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    std::string out = s.substr(b, e - b + 1);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

/// Synonym -> canonical drug id, plus the set of marketed canonical ids.
/// Lookup is exact after lowercasing and trimming.
class DrugEntityIndex {
public:
    void add_synonym(const std::string& synonym, const std::string& canonical_id)
    {
        const auto key = normalize_drug_name(synonym);
        if (key.empty() || canonical_id.empty()) {
            throw DataError("empty synonym or canonical id");
        }
        const auto [it, inserted] = canonical_.emplace(key, canonical_id);
        if (!inserted && it->second != canonical_id) {
            throw DataError("synonym '" + synonym + "' maps to both '" + it->second + "' and '" + canonical_id + "'");
        }
        ids_.insert(canonical_id);
    }

    void add_marketed(const std::string& canonical_id)
    {
        if (!ids_.count(canonical_id)) {
            throw DataError("marketed drug '" + canonical_id + "' is not a canonical id of the synonym dictionary");
        }
        marketed_.insert(canonical_id);
    }

    [[nodiscard]] std::optional<std::string> resolve(const std::string& name) const
    {
        const auto it = canonical_.find(normalize_drug_name(name));
        if (it == canonical_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    [[nodiscard]] bool marketed(const std::string& canonical_id) const { return marketed_.count(canonical_id) != 0; }
    [[nodiscard]] std::size_t synonym_count() const noexcept { return canonical_.size(); }
    [[nodiscard]] std::size_t drug_count() const noexcept { return ids_.size(); }

    static DrugEntityIndex parse(std::istream& synonyms, std::istream* marketed)
    {
        DrugEntityIndex idx;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(synonyms, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.find_first_not_of(" \t") == std::string::npos) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw ParseError("synonym line " + std::to_string(lineno) + ": expected synonym<TAB>canonical_id", lineno);
            }
            auto id = line.substr(tab + 1);
            while (!id.empty() && (id.back() == ' ' || id.back() == '\t')) id.pop_back();
            idx.add_synonym(line.substr(0, tab), id);
        }
        if (marketed) {
            lineno = 0;
            while (std::getline(*marketed, line)) {
                ++lineno;
                if (!line.empty() && line.back() == '\r') line.pop_back();
                const auto b = line.find_first_not_of(" \t");
                if (b == std::string::npos) continue;
                idx.add_marketed(line.substr(b, line.find_last_not_of(" \t") - b + 1));
            }
        }
        return idx;
    }

    static DrugEntityIndex load(const std::string& synonyms_path, const std::string& marketed_path)
    {
        std::ifstream syn(synonyms_path);
        if (!syn) {
            throw LookupError("cannot open synonym dictionary " + synonyms_path);
        }
        if (marketed_path.empty()) {
            return parse(syn, nullptr);
        }
        std::ifstream mk(marketed_path);
        if (!mk) {
            throw LookupError("cannot open marketed drug list " + marketed_path);
        }
        return parse(syn, &mk);
    }

private:
    std::map<std::string, std::string> canonical_;
    std::set<std::string> ids_;
    std::set<std::string> marketed_;
};

} // namespace trialfuse
