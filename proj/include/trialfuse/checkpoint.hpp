// SPDX-License-Identifier: Apache-2.0
#pragma once

// Parameter checkpoint, little-endian:
//
//   magic "CLDMCKPT" | u32 version | u64 config hash | u64 seed | u32 head input width
//   u32 metadata length | metadata (UTF-8 text)
//   u32 record count
//   per record: u32 name_len | name | u32 rank | rank x u32 dims | f32 data | u32 CRC32(name_len .. data)

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "trialfuse/binary_io.hpp"
#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/autograd.hpp"

namespace trialfuse {

inline constexpr char kCheckpointMagic[9] = "CLDMCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::uint32_t head_input_width = 0;
    std::string metadata;
};

struct Checkpoint {
    CheckpointHeader header;
    std::vector<std::pair<std::string, Tensor<float>>> records;  // file order

    [[nodiscard]] const Tensor<float>* find(const std::string& name) const
    {
        for (const auto& [n, t] : records) {
            if (n == name) return &t;
        }
        return nullptr;
    }
};

[[nodiscard]] inline std::vector<std::uint8_t> encode_checkpoint(const CheckpointHeader& header,
                                                                 const ParameterList<float>& params)
{
    binary::Writer w;
    w.bytes(std::string_view(kCheckpointMagic, 8));
    w.u32(kCheckpointVersion);
    w.u64(header.config_hash);
    w.u64(header.seed);
    w.u32(header.head_input_width);
    w.u32(static_cast<std::uint32_t>(header.metadata.size()));
    w.bytes(header.metadata);
    w.u32(static_cast<std::uint32_t>(params.size()));
    std::set<std::string> seen;
    for (const auto& p : params) {
        if (!seen.insert(p.name).second) {
            throw DataError("duplicate parameter name '" + p.name + "' in checkpoint");
        }
        binary::Writer rec;
        rec.u32(static_cast<std::uint32_t>(p.name.size()));
        rec.bytes(p.name);
        const auto& value = p.param->value();
        rec.u32(static_cast<std::uint32_t>(value.rank()));
        for (const auto dim : value.shape()) {
            rec.u32(static_cast<std::uint32_t>(dim));
        }
        for (const float v : value.data()) {
            rec.f32(v);
        }
        const auto crc = binary::crc32(rec.buffer());
        w.bytes(rec.buffer());
        w.u32(crc);
    }
    return w.buffer();
}

inline void save_checkpoint(const std::string& path, const CheckpointHeader& header, const ParameterList<float>& params)
{
    const auto bytes = encode_checkpoint(header, params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write checkpoint " + path);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("failed writing checkpoint " + path);
    }
}

[[nodiscard]] inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context)
{
    binary::Reader r(bytes, context);
    if (r.str(8) != std::string_view(kCheckpointMagic, 8)) {
        throw CorruptionError(context + ": bad magic, not a checkpoint");
    }
    if (const auto version = r.u32(); version != kCheckpointVersion) {
        throw CorruptionError(context + ": unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.header.config_hash = r.u64();
    ck.header.seed = r.u64();
    ck.header.head_input_width = r.u32();
    ck.header.metadata = r.str(r.u32());
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto begin = r.position();
        auto name = r.str(r.u32());
        const auto rank = r.u32();
        if (rank == 0 || rank > 8) {
            throw CorruptionError(context + ": parameter '" + name + "' has invalid rank " + std::to_string(rank));
        }
        Shape shape(rank);
        std::uint64_t n = 1;
        for (auto& dim : shape) {
            dim = r.u32();
            n *= dim;
        }
        if (n == 0 || n * 4 > r.remaining()) {
            throw CorruptionError(context + ": parameter '" + name + "' is truncated");
        }
        Tensor<float> t(shape);
        for (auto& v : t.data()) {
            v = r.f32();
        }
        const auto end = r.position();
        if (r.u32() != binary::crc32(bytes.subspan(begin, end - begin))) {
            throw CorruptionError(context + ": checksum mismatch in parameter '" + name + "'");
        }
        ck.records.emplace_back(std::move(name), std::move(t));
    }
    if (r.remaining() != 0) {
        throw CorruptionError(context + ": trailing bytes after last record");
    }
    return ck;
}

[[nodiscard]] inline Checkpoint load_checkpoint(const std::string& path)
{
    const auto bytes = binary::read_file(path);
    return decode_checkpoint(bytes, path);
}

/// Copies every record into the parameter of the same name. Shapes must match;
/// with `strict`, the name sets must be identical.
inline void apply_checkpoint(const Checkpoint& ck, const ParameterList<float>& params, bool strict = true)
{
    std::map<std::string, const Tensor<float>*> by_name;
    for (const auto& [name, t] : ck.records) {
        by_name[name] = &t;
    }
    std::size_t used = 0;
    for (const auto& p : params) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            if (strict) {
                throw LookupError("checkpoint has no parameter '" + p.name + "'");
            }
            continue;
        }
        if (it->second->shape() != p.param->shape()) {
            throw DimensionError("checkpoint parameter '" + p.name + "' has shape " + shape_string(it->second->shape())
                                 + ", model expects " + shape_string(p.param->shape()));
        }
        p.param->mutable_value() = *it->second;
        ++used;
    }
    if (strict && used != by_name.size()) {
        for (const auto& [name, t] : by_name) {
            bool known = false;
            for (const auto& p : params) known |= p.name == name;
            if (!known) {
                throw LookupError("checkpoint parameter '" + name + "' does not exist in the model");
            }
        }
    }
}

/// Names whose tensors differ bitwise between two checkpoints, plus names present in only one.
[[nodiscard]] inline std::vector<std::string> checkpoint_diff(const Checkpoint& a, const Checkpoint& b)
{
    std::map<std::string, const Tensor<float>*> in_b;
    for (const auto& [name, t] : b.records) {
        in_b[name] = &t;
    }
    std::set<std::string> out;
    for (const auto& [name, t] : a.records) {
        const auto it = in_b.find(name);
        if (it == in_b.end() || it->second->shape() != t.shape()
            || std::memcmp(it->second->data().data(), t.data().data(), t.size() * sizeof(float)) != 0) {
            out.insert(name);
        }
        if (it != in_b.end()) {
            in_b.erase(it);
        }
    }
    for (const auto& [name, t] : in_b) {
        out.insert(name);
    }
    return {out.begin(), out.end()};
}

} // namespace trialfuse
