// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "kvlab/numerics.hpp"

namespace kvlab {

AttentionOutput full_attention(const Tensor& queries, const Tensor& keys, const Tensor& values) {
    if (keys.ndim() != 2 || keys.rows() == 0) throw std::invalid_argument("attention: no tokens");
    if (values.dims() != keys.dims()) throw std::invalid_argument("attention: keys and values differ in shape");
    if (queries.ndim() != 2 || queries.cols() != keys.cols()) {
        throw std::invalid_argument("attention: query width differs from key width");
    }
    Tensor logits = matmul_transposed(queries, keys);
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(keys.cols()));
    for (float& v : logits.data()) v *= inv_sqrt_d;
    AttentionOutput out;
    out.output = matmul(softmax_rows(logits), values);
    out.output.require_finite("attention");
    out.tokens_used = keys.rows();
    return out;
}

AttentionOutput sparse_attention(const Tensor& queries, const ChunkedKVStore& store, std::size_t kv_head,
                                 const SelectionResult& sel, const AttentionOutput* full) {
    if (sel.token_ids.empty()) throw std::invalid_argument("sparse_attention: empty selection");
    if (sel.n_tokens != store.n_tokens()) throw std::invalid_argument("sparse_attention: selection from another store");
    const LoadedTokens kv = store.gather(kv_head, sel.token_ids);
    AttentionOutput out = full_attention(queries, kv.keys, kv.values);
    if (full) out.rel_error_vs_full = relative_error(out.output, full->output);
    return out;
}

double relative_error(const Tensor& approx, const Tensor& reference) {
    if (approx.dims() != reference.dims()) throw std::invalid_argument("relative_error: shape mismatch");
    double num = 0.0, den = 0.0;
    auto a = approx.data();
    auto b = reference.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = static_cast<double>(a[i]) - b[i];
        num += diff * diff;
        den += static_cast<double>(b[i]) * b[i];
    }
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(num / den);
}

}  // namespace kvlab
