// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// KVT1 tensor files: "KVT1", u32 LE ndim, ndim x u64 LE extents, then
// row-major float32 LE payload.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "kvlab/tensor.hpp"

namespace kvlab {

class KvtError : public std::runtime_error {
public:
    enum class Kind { Io, BadMagic, Truncated, ExtentOverflow, TrailingData };

    KvtError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

std::vector<char> encode_kvt(const Tensor& t);
Tensor decode_kvt(const std::vector<char>& bytes);

void write_kvt(const std::filesystem::path& path, const Tensor& t);
Tensor read_kvt(const std::filesystem::path& path);

}  // namespace kvlab
