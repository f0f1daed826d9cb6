// SPDX-License-Identifier: Apache-2.0
#pragma once

// Portable deterministic randomness. The standard distributions are
// implementation-defined, so everything that must reproduce bit-for-bit
// (hash-fallback vectors, initialization, splits) goes through here.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <utility>
#include <vector>

namespace trialfuse {

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// FNV-1a over the bytes of `text`, mixed with `seed`.
[[nodiscard]] constexpr std::uint64_t hash_string(std::string_view text, std::uint64_t seed = 0) noexcept
{
    std::uint64_t h = 0xCBF29CE484222325ULL ^ splitmix64(seed);
    for (const char c : text) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001B3ULL;
    }
    return splitmix64(h);
}

/// Derive an independent stream seed from a master seed and a stream index.
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept
{
    return splitmix64(splitmix64(master) ^ (stream * 0xD1B54A32D192ED03ULL + 1));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept
    {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n) noexcept
    {
        // Lemire's multiply-shift; bias is negligible at the sizes used here.
        return static_cast<std::size_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller (one value per call, no caching).
    double normal() noexcept
    {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& items) noexcept
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

    /// `k` distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k)
    {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) {
            idx[i] = i;
        }
        if (k > n) {
            k = n;
        }
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(idx[i], idx[i + below(n - i)]);
        }
        idx.resize(k);
        return idx;
    }

private:
    std::uint64_t state_;
};

} // namespace trialfuse
