// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "trialfuse/encoders/icd_tree.hpp"
#include "trialfuse/encoders/token_sequence.hpp"
#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/ops.hpp"

namespace trialfuse {

/// One token per ICD code: depth-weighted mean of learnable node embeddings
/// along the chapter -> code path (node at depth k weighted by k), plus a
/// learnable embedding shared by every code in the same chapter.
template <typename T>
struct DiseaseEncoder {
    Parameter<T> nodes;       // tree.size() x d_dm
    Parameter<T> categories;  // tree.chapter_count() x d_dm

    DiseaseEncoder() = default;

    DiseaseEncoder(const IcdTree& tree, std::size_t d_dm, Rng& rng)
        : nodes(Tensor<T>::normal({tree.size(), d_dm}, rng)),
          categories(Tensor<T>::normal({tree.chapter_count(), d_dm}, rng))
    {
    }

    /// Row i holds the path weights of code i over all tree nodes.
    [[nodiscard]] static Tensor<T> path_weights(const std::vector<std::string>& codes, const IcdTree& tree)
    {
        Tensor<T> w({codes.size(), tree.size()});
        for (std::size_t i = 0; i < codes.size(); ++i) {
            const auto path = tree.path(codes[i]);
            const double total = static_cast<double>(path.size() * (path.size() + 1)) / 2.0;
            for (std::size_t depth = 0; depth < path.size(); ++depth) {
                w(i, tree.node_index(path[depth])) = static_cast<T>(static_cast<double>(depth + 1) / total);
            }
        }
        return w;
    }

    [[nodiscard]] TokenSequence<T> embed(const std::vector<std::string>& codes, const IcdTree& tree) const
    {
        if (codes.empty()) {
            throw DataError("trial has no ICD-10 codes");
        }
        for (const auto& code : codes) {
            if (!tree.contains(code)) {
                throw LookupError("unknown ICD-10 code '" + code + "'");
            }
        }
        if (tree.size() != nodes.shape()[0] || tree.chapter_count() != categories.shape()[0]) {
            throw DimensionError("ICD tree does not match the disease tables it was built with");
        }
        std::vector<std::string> canonical = codes;
        std::stable_sort(canonical.begin(), canonical.end());
        std::vector<int> groups;
        std::vector<std::size_t> chapter_rows;
        for (const auto& code : canonical) {
            chapter_rows.push_back(tree.chapter_index(code));
            groups.push_back(static_cast<int>(chapter_rows.back()));
        }
        auto tokens = add(matmul(constant(path_weights(canonical, tree)), nodes.var()),
                          gather_rows(categories.var(), chapter_rows));
        return TokenSequence<T>(std::move(tokens), SourceTag::disease, std::move(groups));
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn)
    {
        fn(prefix + ".nodes", nodes);
        fn(prefix + ".categories", categories);
    }
};

} // namespace trialfuse
