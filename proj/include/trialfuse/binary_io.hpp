// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian primitive encoding shared by the embedding store and checkpoints.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "trialfuse/errors.hpp"

namespace trialfuse::binary {

[[nodiscard]] inline std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t running = 0)
{
    return static_cast<std::uint32_t>(
        ::crc32(running, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

/// Append-only little-endian buffer.
class Writer {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void bytes(std::span<const std::uint8_t> s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    [[nodiscard]] const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    [[nodiscard]] std::size_t size() const noexcept { return buf_.size(); }

    void write_to(std::ostream& out) const
    {
        out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    }

private:
    void put(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i) {
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }

    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian cursor over a byte span.
class Reader {
public:
    Reader(std::span<const std::uint8_t> data, std::string context) : data_(data), context_(std::move(context)) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(u32()); }

    std::string str(std::size_t n)
    {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    [[nodiscard]] std::size_t position() const noexcept { return pos_; }
    [[nodiscard]] std::size_t remaining() const noexcept { return data_.size() - pos_; }
    void seek(std::size_t pos)
    {
        if (pos > data_.size()) {
            throw CorruptionError(context_ + ": offset " + std::to_string(pos) + " beyond end of data");
        }
        pos_ = pos;
    }

private:
    void need(std::size_t n) const
    {
        if (data_.size() - pos_ < n) {
            throw CorruptionError(context_ + ": truncated at byte " + std::to_string(pos_));
        }
    }

    std::uint64_t get(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string context_;
};

[[nodiscard]] inline std::vector<std::uint8_t> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw LookupError("cannot open " + path);
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace trialfuse::binary
