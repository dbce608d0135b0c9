// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>

#include "kvlab/kvstore.hpp"
#include "kvlab/selection.hpp"
#include "kvlab/tensor.hpp"

namespace kvlab {

struct AttentionOutput {
    Tensor output;  // [H x D]
    std::size_t tokens_used = 0;
    std::optional<double> rel_error_vs_full;
};

/// softmax(Q K^T / sqrt(D)) V for a single decode step.
AttentionOutput full_attention(const Tensor& queries, const Tensor& keys, const Tensor& values);

/// Attention restricted to sel.token_ids, softmax renormalized over the
/// subset. Offloaded tokens are read through the slow tier.
AttentionOutput sparse_attention(const Tensor& queries, const ChunkedKVStore& store, std::size_t kv_head,
                                 const SelectionResult& sel, const AttentionOutput* full = nullptr);

/// ||a - b||_2 / ||b||_2 over the whole output.
double relative_error(const Tensor& approx, const Tensor& reference);

}  // namespace kvlab
