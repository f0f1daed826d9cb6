// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "trialfuse/encoders/segment_dict.hpp"
#include "trialfuse/encoders/smiles.hpp"
#include "trialfuse/encoders/token_sequence.hpp"
#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/ops.hpp"

namespace trialfuse {

inline constexpr std::size_t kMaxMoleculesPerTrial = 16;

/// Molecules in the order their positional slots are assigned. Sorting by
/// SMILES text makes the encoding independent of how the trial lists them.
[[nodiscard]] inline std::vector<std::string> canonical_molecule_order(std::vector<std::string> mols)
{
    std::stable_sort(mols.begin(), mols.end());
    return mols;
}

/// Segment tokens: dictionary vector projected to the branch width, plus a
/// learnable embedding of the molecule's slot (shared by all its segments).
template <typename T>
struct MoleculeEncoder {
    Parameter<T> projection;  // d_mol x d_dm
    Parameter<T> positions;   // max_molecules x d_dm

    MoleculeEncoder() = default;

    MoleculeEncoder(std::size_t d_mol, std::size_t d_dm, std::size_t max_molecules, Rng& rng)
        : projection(Tensor<T>::normal({d_mol, d_dm}, rng, 1.0 / std::sqrt(static_cast<double>(d_mol)))),
          positions(Tensor<T>::normal({max_molecules, d_dm}, rng))
    {
    }

    [[nodiscard]] std::size_t max_molecules() const { return positions.shape()[0]; }

    /// Dictionary vectors for every segment, before any learned transform.
    [[nodiscard]] static Tensor<T> base_tokens(const std::vector<std::string>& canonical, const SmilesSegmentDict& dict,
                                               std::vector<int>& group_ids)
    {
        std::vector<T> data;
        group_ids.clear();
        for (std::size_t m = 0; m < canonical.size(); ++m) {
            for (const auto& seg : segment_smiles(canonical[m])) {
                for (const double v : dict.lookup(seg)) {
                    data.push_back(static_cast<T>(v));
                }
                group_ids.push_back(static_cast<int>(m));
            }
        }
        const std::size_t n = group_ids.size();
        return Tensor<T>({n, dict.width()}, std::move(data));
    }

    [[nodiscard]] TokenSequence<T> embed(const std::vector<std::string>& mols, const SmilesSegmentDict& dict) const
    {
        if (mols.empty()) {
            throw DataError("trial has no drug molecules");
        }
        if (mols.size() > max_molecules()) {
            throw DataError("trial has " + std::to_string(mols.size()) + " molecules; at most "
                            + std::to_string(max_molecules()) + " are supported");
        }
        if (dict.width() != projection.shape()[0]) {
            throw DimensionError("segment dictionary width " + std::to_string(dict.width())
                                 + " does not match molecule projection " + shape_string(projection.shape()));
        }
        std::vector<int> groups;
        auto base = base_tokens(canonical_molecule_order(mols), dict, groups);
        std::vector<std::size_t> slots(groups.begin(), groups.end());
        auto tokens = add(matmul(constant(std::move(base)), projection.var()), gather_rows(positions.var(), slots));
        return TokenSequence<T>(std::move(tokens), SourceTag::molecule, std::move(groups));
    }

    template <typename Fn>
    void for_each_parameter(const std::string& prefix, Fn&& fn)
    {
        fn(prefix + ".projection", projection);
        fn(prefix + ".positions", positions);
    }
};

} // namespace trialfuse
