// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "trialfuse/errors.hpp"

namespace trialfuse {

/// Split a SMILES string into segments:
///   - bracket atoms "[...]" are one segment,
///   - the two-letter organic-subset atoms "Cl" and "Br" are one segment,
///   - "%nn" two-digit ring closures are one segment,
///   - everything else (atoms, ring digits, bonds, branches) is one character.
/// Concatenating the result reproduces the input.
[[nodiscard]] inline std::vector<std::string> segment_smiles(std::string_view smiles)
{
    if (smiles.empty()) {
        throw ParseError("empty SMILES string", 0);
    }
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < smiles.size()) {
        const char c = smiles[i];
        if (c == '[') {
            const auto close = smiles.find(']', i + 1);
            const auto reopen = smiles.find('[', i + 1);
            if (close == std::string_view::npos || (reopen != std::string_view::npos && reopen < close)) {
                throw ParseError("unbalanced '[' at index " + std::to_string(i) + " in SMILES \"" + std::string(smiles)
                                     + "\"",
                                 i);
            }
            out.emplace_back(smiles.substr(i, close - i + 1));
            i = close + 1;
        } else if (c == ']') {
            throw ParseError("unbalanced ']' at index " + std::to_string(i) + " in SMILES \"" + std::string(smiles) + "\"",
                             i);
        } else if ((c == 'C' && i + 1 < smiles.size() && smiles[i + 1] == 'l')
                   || (c == 'B' && i + 1 < smiles.size() && smiles[i + 1] == 'r')) {
            out.emplace_back(smiles.substr(i, 2));
            i += 2;
        } else if (c == '%' && i + 2 < smiles.size() && std::isdigit(static_cast<unsigned char>(smiles[i + 1]))
                   && std::isdigit(static_cast<unsigned char>(smiles[i + 2]))) {
            out.emplace_back(smiles.substr(i, 3));
            i += 3;
        } else {
            out.emplace_back(1, c);
            ++i;
        }
    }
    return out;
}

} // namespace trialfuse
