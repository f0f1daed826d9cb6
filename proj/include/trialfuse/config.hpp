// SPDX-License-Identifier: Apache-2.0
#pragma once

// UTF-8 `key = value` files with dotted namespaces; '#' starts a comment.

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>

#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/random.hpp"

namespace trialfuse {

class KeyValueConfig {
public:
    static KeyValueConfig load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) {
            throw ConfigError("cannot open config file " + path);
        }
        return parse(in);
    }

    static KeyValueConfig parse(std::istream& in)
    {
        KeyValueConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) {
                line.erase(hash);
            }
            const auto eq = line.find('=');
            if (trim(line).empty()) {
                continue;
            }
            if (eq == std::string::npos) {
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
            }
            auto key = trim(line.substr(0, eq));
            if (key.empty()) {
                throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            }
            cfg.values_[key] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }
    [[nodiscard]] const std::map<std::string, std::string>& values() const noexcept { return values_; }

    [[nodiscard]] std::string get(const std::string& key, const std::string& fallback) const
    {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    [[nodiscard]] long long get_int(const std::string& key, long long fallback) const
    {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            return fallback;
        }
        try {
            std::size_t used = 0;
            const long long v = std::stoll(it->second, &used);
            if (used == it->second.size()) {
                return v;
            }
        } catch (const std::exception&) {
        }
        throw ConfigError("config key '" + key + "' expects an integer, got '" + it->second + "'");
    }

    [[nodiscard]] double get_double(const std::string& key, double fallback) const
    {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            return fallback;
        }
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used == it->second.size()) {
                return v;
            }
        } catch (const std::exception&) {
        }
        throw ConfigError("config key '" + key + "' expects a number, got '" + it->second + "'");
    }

    [[nodiscard]] bool get_bool(const std::string& key, bool fallback) const
    {
        const auto v = get(key, fallback ? "true" : "false");
        if (v == "true" || v == "1") {
            return true;
        }
        if (v == "false" || v == "0") {
            return false;
        }
        throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
    }

    /// Sorted `key=value` lines; the canonical form used for hashing.
    [[nodiscard]] std::string to_text() const
    {
        std::ostringstream out;
        for (const auto& [k, v] : values_) {
            out << k << '=' << v << '\n';
        }
        return out.str();
    }

    [[nodiscard]] std::uint64_t hash() const { return hash_string(to_text()); }

private:
    static std::string trim(const std::string& s)
    {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) {
            return {};
        }
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

/// Shortest round-tripping decimal text for a double.
[[nodiscard]] inline std::string format_real(double v)
{
    std::ostringstream out;
    out.precision(17);
    out << v;
    std::string s = out.str();
    for (int p = 1; p <= 17; ++p) {
        std::ostringstream t;
        t.precision(p);
        t << v;
        if (std::stod(t.str()) == v) {
            return t.str();
        }
    }
    return s;
}

} // namespace trialfuse
