// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary store of precomputed criteria embeddings, little-endian throughout:
//
//   magic "CLDMEMB1" | u32 d_llm | u32 count
//   count x { u32 id_len | id (UTF-8) | u64 record offset }
//   per record: u32 n_c | 4 x (n_c x d_llm f32, row-major) | u32 CRC32(n_c .. last float)
//
// Offsets are absolute and strictly increasing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "trialfuse/binary_io.hpp"
#include "trialfuse/criteria/multi_level.hpp"
#include "trialfuse/errors.hpp"

namespace trialfuse {

inline constexpr char kEmbeddingStoreMagic[9] = "CLDMEMB1";

struct EmbeddingStoreHeader {
    std::uint32_t d_llm = 0;
    std::uint32_t count = 0;
    std::vector<std::pair<std::string, std::uint64_t>> index;  // file order
};

inline void write_embedding_store(const std::string& path,
                                  const std::vector<std::pair<std::string, MultiLevelCriteriaEmbedding>>& entries)
{
    if (entries.empty()) {
        throw DataError("embedding store needs at least one record");
    }
    const std::size_t d_llm = entries.front().second.d_llm();
    std::set<std::string> seen;
    for (const auto& [id, emb] : entries) {
        emb.validate();
        if (emb.d_llm() != d_llm) {
            throw DimensionError("embedding store record '" + id + "' has width " + std::to_string(emb.d_llm())
                                 + ", expected " + std::to_string(d_llm));
        }
        if (!seen.insert(id).second) {
            throw DataError("duplicate trial id '" + id + "' in embedding store");
        }
    }

    std::size_t header_size = 8 + 4 + 4;
    for (const auto& [id, emb] : entries) {
        header_size += 4 + id.size() + 8;
    }
    std::vector<binary::Writer> records;
    std::vector<std::uint64_t> offsets;
    std::uint64_t offset = header_size;
    for (const auto& [id, emb] : entries) {
        binary::Writer rec;
        rec.u32(static_cast<std::uint32_t>(emb.n_c()));
        for (const auto& level : emb.levels) {
            for (const float v : level.data()) {
                rec.f32(v);
            }
        }
        rec.u32(binary::crc32(rec.buffer()));
        offsets.push_back(offset);
        offset += rec.size();
        records.push_back(std::move(rec));
    }

    binary::Writer head;
    head.bytes(std::string_view(kEmbeddingStoreMagic, 8));
    head.u32(static_cast<std::uint32_t>(d_llm));
    head.u32(static_cast<std::uint32_t>(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        head.u32(static_cast<std::uint32_t>(entries[i].first.size()));
        head.bytes(entries[i].first);
        head.u64(offsets[i]);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write embedding store " + path);
    }
    head.write_to(out);
    for (const auto& rec : records) {
        rec.write_to(out);
    }
}

/// Read-only view of a store file. The header and index are validated on
/// open; records are read and checksummed on demand.
class EmbeddingStore {
public:
    explicit EmbeddingStore(std::string path) : path_(std::move(path))
    {
        std::ifstream in(path_, std::ios::binary);
        if (!in) {
            throw LookupError("cannot open embedding store " + path_);
        }
        file_size_ = std::filesystem::file_size(path_);
        std::vector<std::uint8_t> fixed(16);
        in.read(reinterpret_cast<char*>(fixed.data()), 16);
        if (in.gcount() != 16) {
            throw CorruptionError(path_ + ": file too short for an embedding store header");
        }
        if (std::string_view(reinterpret_cast<const char*>(fixed.data()), 8) != std::string_view(kEmbeddingStoreMagic, 8)) {
            throw CorruptionError(path_ + ": bad magic, not an embedding store");
        }
        binary::Reader r(fixed, path_);
        r.seek(8);
        header_.d_llm = r.u32();
        header_.count = r.u32();
        if (header_.d_llm == 0) {
            throw CorruptionError(path_ + ": zero embedding width");
        }

        // The index ends where the first record begins; read generously and re-read if short.
        std::vector<std::uint8_t> rest(static_cast<std::size_t>(file_size_ - 16));
        in.read(reinterpret_cast<char*>(rest.data()), static_cast<std::streamsize>(rest.size()));
        binary::Reader idx(rest, path_ + " index");
        std::uint64_t previous = 0;
        for (std::uint32_t i = 0; i < header_.count; ++i) {
            const auto len = idx.u32();
            auto id = idx.str(len);
            const auto off = idx.u64();
            if (i > 0 && off <= previous) {
                throw CorruptionError(path_ + ": record offsets are not strictly increasing at '" + id + "'");
            }
            previous = off;
            if (!by_id_.emplace(id, header_.index.size()).second) {
                throw CorruptionError(path_ + ": duplicate id '" + id + "' in index");
            }
            header_.index.emplace_back(std::move(id), off);
        }
        const std::uint64_t index_end = 16 + idx.position();
        if (!header_.index.empty() && (header_.index.front().second < index_end || previous >= file_size_)) {
            throw CorruptionError(path_ + ": record offsets fall outside the record region");
        }
    }

    [[nodiscard]] const EmbeddingStoreHeader& header() const noexcept { return header_; }
    [[nodiscard]] std::size_t d_llm() const noexcept { return header_.d_llm; }
    [[nodiscard]] std::size_t size() const noexcept { return header_.index.size(); }
    [[nodiscard]] bool contains(const std::string& id) const { return by_id_.count(id) != 0; }

    [[nodiscard]] std::vector<std::string> ids() const
    {
        std::vector<std::string> out;
        for (const auto& [id, off] : header_.index) {
            out.push_back(id);
        }
        return out;
    }

    [[nodiscard]] MultiLevelCriteriaEmbedding load(const std::string& trial_id) const
    {
        const auto it = by_id_.find(trial_id);
        if (it == by_id_.end()) {
            throw LookupError("trial id '" + trial_id + "' not found in embedding store " + path_);
        }
        const std::uint64_t begin = header_.index[it->second].second;
        const std::uint64_t end =
            it->second + 1 < header_.index.size() ? header_.index[it->second + 1].second : file_size_;

        std::ifstream in(path_, std::ios::binary);
        in.seekg(static_cast<std::streamoff>(begin));
        std::vector<std::uint8_t> bytes(static_cast<std::size_t>(end - begin));
        in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
            throw CorruptionError(path_ + ": record '" + trial_id + "' is truncated");
        }

        const std::string context = path_ + " record '" + trial_id + "'";
        binary::Reader r(bytes, context);
        const std::size_t n_c = r.u32();
        const std::size_t d = header_.d_llm;
        const std::size_t payload = 4 + 4 * kCriteriaLevels * n_c * d;
        if (n_c == 0 || bytes.size() != payload + 4) {
            throw CorruptionError(context + ": length does not match n_c=" + std::to_string(n_c));
        }
        MultiLevelCriteriaEmbedding out;
        for (auto& level : out.levels) {
            level = Tensor<float>({n_c, d});
            for (auto& v : level.data()) {
                v = r.f32();
            }
        }
        const std::uint32_t stored = r.u32();
        const std::uint32_t actual = binary::crc32(std::span<const std::uint8_t>(bytes).first(payload));
        if (stored != actual) {
            throw CorruptionError(context + ": checksum mismatch");
        }
        return out;
    }

    /// Load every record; throws on the first corrupt one.
    void validate_all() const
    {
        for (const auto& [id, off] : header_.index) {
            load(id).validate();
        }
    }

private:
    std::string path_;
    std::uint64_t file_size_ = 0;
    EmbeddingStoreHeader header_;
    std::map<std::string, std::size_t> by_id_;
};

} // namespace trialfuse
