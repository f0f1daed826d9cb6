// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/random.hpp"

namespace trialfuse {

inline constexpr std::size_t kDefaultSegmentWidth = 64;

/// Fixed (non-trainable) vectors per SMILES segment. Segments absent from a
/// loaded file fall back to the seeded hash vector, so lookups never fail.
class SmilesSegmentDict {
public:
    enum class Source { file_loaded, hash_fallback };

    explicit SmilesSegmentDict(std::size_t width = kDefaultSegmentWidth, std::uint64_t seed = 0)
        : width_(width), seed_(seed)
    {
        if (width == 0) {
            throw DimensionError("segment dictionary width must be positive");
        }
    }

    /// Text file, one `segment<TAB>v1,v2,...` record per line.
    static SmilesSegmentDict load(const std::string& path, std::uint64_t seed = 0)
    {
        std::ifstream in(path);
        if (!in) {
            throw LookupError("cannot open segment dictionary " + path);
        }
        return parse(in, seed);
    }

    static SmilesSegmentDict parse(std::istream& in, std::uint64_t seed = 0)
    {
        SmilesSegmentDict dict(1, seed);
        dict.width_ = 0;
        dict.source_ = Source::file_loaded;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            if (line.empty()) {
                continue;
            }
            const auto tab = line.find('\t');
            if (tab == std::string::npos || tab == 0) {
                throw ParseError("segment dictionary line " + std::to_string(line_no) + ": expected segment<TAB>values",
                                 line_no);
            }
            std::vector<double> values;
            std::stringstream fields(line.substr(tab + 1));
            std::string field;
            while (std::getline(fields, field, ',')) {
                try {
                    std::size_t used = 0;
                    values.push_back(std::stod(field, &used));
                    if (used != field.size()) {
                        throw std::invalid_argument(field);
                    }
                } catch (const std::exception&) {
                    throw ParseError("segment dictionary line " + std::to_string(line_no) + ": bad number '" + field
                                         + "'",
                                     line_no);
                }
            }
            if (dict.width_ == 0) {
                dict.width_ = values.size();
            }
            if (values.size() != dict.width_ || values.empty()) {
                throw ParseError("segment dictionary line " + std::to_string(line_no) + ": width "
                                     + std::to_string(values.size()) + " != " + std::to_string(dict.width_),
                                 line_no);
            }
            dict.entries_[line.substr(0, tab)] = std::move(values);
        }
        if (dict.width_ == 0) {
            throw ParseError("segment dictionary is empty", 0);
        }
        return dict;
    }

    [[nodiscard]] std::size_t width() const noexcept { return width_; }
    [[nodiscard]] Source source() const noexcept { return source_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] bool contains(const std::string& segment) const { return entries_.count(segment) != 0; }

    [[nodiscard]] std::vector<double> lookup(const std::string& segment) const
    {
        if (const auto it = entries_.find(segment); it != entries_.end()) {
            return it->second;
        }
        return hash_vector(segment);
    }

    /// Deterministic N(0,1) vector derived from the segment text and seed.
    [[nodiscard]] std::vector<double> hash_vector(const std::string& segment) const
    {
        Rng rng(hash_string(segment, seed_ ^ 0x5E61E47ULL));
        std::vector<double> v(width_);
        for (auto& x : v) {
            x = rng.normal();
        }
        return v;
    }

private:
    std::size_t width_;
    std::uint64_t seed_;
    Source source_ = Source::hash_fallback;
    std::map<std::string, std::vector<double>> entries_;
};

} // namespace trialfuse
