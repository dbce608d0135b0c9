// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/kvt_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace kvlab {

namespace {

constexpr char kMagic[4] = {'K', 'V', 'T', '1'};
// Refuse headers that would allocate more than this many floats.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

template <typename T>
void put_le(std::vector<char>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::vector<char>& in, std::size_t& pos) {
    if (in.size() - pos < sizeof(T)) throw KvtError(KvtError::Kind::Truncated, "kvt: truncated header");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += sizeof(T);
    return v;
}

}  // namespace

std::vector<char> encode_kvt(const Tensor& t) {
    std::vector<char> out(kMagic, kMagic + 4);
    out.reserve(8 + 8 * t.ndim() + 4 * t.size());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.dims()) put_le<std::uint64_t>(out, d);
    for (float v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

Tensor decode_kvt(const std::vector<char>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw KvtError(KvtError::Kind::BadMagic, "kvt: bad magic (expected KVT1)");
    }
    std::size_t pos = 4;
    const auto ndim = get_le<std::uint32_t>(bytes, pos);
    std::vector<std::size_t> dims;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        const auto extent = get_le<std::uint64_t>(bytes, pos);
        if (extent != 0 && count > kMaxElements / extent) {
            throw KvtError(KvtError::Kind::ExtentOverflow, "kvt: extents overflow element count");
        }
        count *= extent;
        dims.push_back(static_cast<std::size_t>(extent));
    }
    if (count > kMaxElements) throw KvtError(KvtError::Kind::ExtentOverflow, "kvt: tensor too large");
    const std::size_t payload = bytes.size() - pos;
    if (payload < count * 4) throw KvtError(KvtError::Kind::Truncated, "kvt: truncated payload");
    if (payload > count * 4) throw KvtError(KvtError::Kind::TrailingData, "kvt: trailing bytes after payload");
    std::vector<float> data(count);
    for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos));
    return Tensor(std::move(dims), std::move(data));
}

void write_kvt(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw KvtError(KvtError::Kind::Io, "kvt: cannot open " + path.string() + " for writing");
    const auto bytes = encode_kvt(t);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw KvtError(KvtError::Kind::Io, "kvt: write failed for " + path.string());
}

Tensor read_kvt(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw KvtError(KvtError::Kind::Io, "kvt: cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_kvt(bytes);
}

}  // namespace kvlab
