// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trialfuse/errors.hpp"

namespace trialfuse {

/// ICD-10 hierarchy. Node and chapter indices follow lexicographic code order,
/// so table layouts do not depend on file order.
class IcdTree {
public:
    static constexpr const char* kRoot = "ROOT";

    IcdTree() = default;

    /// Build from child -> parent edges; a parent of "ROOT" marks a chapter.
    static IcdTree from_edges(const std::vector<std::pair<std::string, std::string>>& edges)
    {
        IcdTree tree;
        for (const auto& [child, parent] : edges) {
            if (child.empty() || parent.empty() || child == kRoot) {
                throw ParseError("invalid ICD edge '" + child + "' -> '" + parent + "'", 0);
            }
            const auto [it, inserted] = tree.parent_.emplace(child, parent);
            if (!inserted && it->second != parent) {
                throw ParseError("ICD code '" + child + "' has two parents: '" + it->second + "' and '" + parent + "'",
                                 0);
            }
        }
        tree.finalize();
        return tree;
    }

    /// Text file, one `child<TAB>parent` pair per line.
    static IcdTree load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) {
            throw LookupError("cannot open ICD tree " + path);
        }
        return parse(in);
    }

    static IcdTree parse(std::istream& in)
    {
        std::vector<std::pair<std::string, std::string>> edges;
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
            if (tab == std::string::npos) {
                throw ParseError("ICD tree line " + std::to_string(line_no) + ": expected child<TAB>parent", line_no);
            }
            edges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
        }
        return from_edges(edges);
    }

    /// Derive a three-level tree (chapter letter -> 3-character category -> code)
    /// from the codes themselves.
    static IcdTree from_codes(const std::vector<std::string>& codes)
    {
        std::map<std::string, std::string> parent;
        for (const auto& code : codes) {
            if (code.empty()) {
                throw ParseError("empty ICD code", 0);
            }
            const std::string chapter = code.substr(0, 1);
            const std::string category = code.substr(0, std::min<std::size_t>(3, code.size()));
            parent.emplace(chapter, kRoot);
            if (category != chapter) {
                parent.emplace(category, chapter);
            }
            if (code != category) {
                parent.emplace(code, category);
            }
        }
        return from_edges({parent.begin(), parent.end()});
    }

    [[nodiscard]] bool contains(const std::string& code) const { return index_.count(code) != 0; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] std::size_t chapter_count() const noexcept { return chapters_.size(); }
    [[nodiscard]] const std::vector<std::string>& nodes() const noexcept { return nodes_; }
    [[nodiscard]] const std::vector<std::string>& chapters() const noexcept { return chapters_; }

    [[nodiscard]] std::size_t node_index(const std::string& code) const
    {
        const auto it = index_.find(code);
        if (it == index_.end()) {
            throw LookupError("unknown ICD-10 code '" + code + "'");
        }
        return it->second;
    }

    [[nodiscard]] const std::string& parent(const std::string& code) const
    {
        const auto it = parent_.find(code);
        if (it == parent_.end()) {
            throw LookupError("unknown ICD-10 code '" + code + "'");
        }
        return it->second;
    }

    /// Nodes from the chapter down to `code` (the ROOT sentinel excluded).
    [[nodiscard]] std::vector<std::string> path(const std::string& code) const
    {
        std::vector<std::string> out;
        std::string cur = code;
        while (cur != kRoot) {
            out.push_back(cur);
            cur = parent(cur);
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

    [[nodiscard]] std::size_t chapter_index(const std::string& code) const
    {
        const auto p = path(code);
        return static_cast<std::size_t>(
            std::lower_bound(chapters_.begin(), chapters_.end(), p.front()) - chapters_.begin());
    }

    [[nodiscard]] std::vector<std::pair<std::string, std::string>> edges() const
    {
        return {parent_.begin(), parent_.end()};
    }

private:
    void finalize()
    {
        std::set<std::string> all;
        for (const auto& [child, parent] : parent_) {
            all.insert(child);
            if (parent != kRoot) {
                all.insert(parent);
            }
        }
        for (const auto& code : all) {
            if (!parent_.count(code)) {
                throw ParseError("ICD code '" + code + "' has no parent entry", 0);
            }
        }
        // Every node must reach ROOT without revisiting a node.
        for (const auto& code : all) {
            std::set<std::string> seen;
            std::string cur = code;
            while (cur != kRoot) {
                if (!seen.insert(cur).second) {
                    throw ParseError("ICD tree has a cycle through '" + code + "'", 0);
                }
                cur = parent_.at(cur);
            }
        }
        nodes_.assign(all.begin(), all.end());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            index_[nodes_[i]] = i;
            if (parent_.at(nodes_[i]) == kRoot) {
                chapters_.push_back(nodes_[i]);
            }
        }
        if (chapters_.empty()) {
            throw ParseError("ICD tree has no chapter under ROOT", 0);
        }
    }

    std::map<std::string, std::string> parent_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::string> nodes_;
    std::vector<std::string> chapters_;
};

} // namespace trialfuse
