// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "kvlab/quantization.hpp"
#include "kvlab/tensor.hpp"

namespace kvlab {

/// How the per-step token budget is split between categories.
struct BudgetConfig {
    double sparse_fraction = 0.0156;  // of all tokens, fetched per step
    std::size_t outlier_tokens = 384;  // always resident
    std::size_t local_window = 32;     // most recent tokens, always resident

    void validate() const;
    /// ceil(sparse_fraction * n), at least 1.
    std::size_t sparse_tokens(std::size_t n) const;

    friend bool operator==(const BudgetConfig&, const BudgetConfig&) = default;
};

struct TierTraffic {
    std::size_t tokens_loaded_from_slow_tier = 0;
    std::uint64_t fast_tier_resident_bits = 0;
};

struct StoreConfig {
    std::size_t chunk_size = 8;
    SchemeDescriptor landmark_scheme = SchemeDescriptor::none();
    std::optional<SchemeDescriptor> residual_scheme;
    /// Compression applied to offloaded keys. Values share it, except SVD
    /// which only applies to keys.
    SchemeDescriptor slow_tier_scheme = SchemeDescriptor::none();
    BudgetConfig budget;
};

struct LoadedTokens {
    std::vector<std::size_t> token_ids;
    Tensor keys;    // [m x D]
    Tensor values;  // [m x D]
    TierTraffic traffic;
};

/// Tiered KV cache for one layer: keys/values per kv-head, segmented into
/// fixed-size chunks summarized by (optionally quantized) landmarks, with
/// outlier chunks and a local window kept resident on the fast tier.
///
/// Immutable after build() apart from append(). append() needs a single
/// writer; concurrent readers are fine between appends.
class ChunkedKVStore {
public:
    /// keys/values: one [n x D] matrix per kv-head.
    static ChunkedKVStore build(std::vector<Tensor> keys, std::vector<Tensor> values, const StoreConfig& cfg);
    static ChunkedKVStore build(Tensor keys, Tensor values, const StoreConfig& cfg);

    std::size_t kv_heads() const noexcept { return heads_.size(); }
    std::size_t n_tokens() const noexcept { return n_; }
    std::size_t head_dim() const noexcept { return dim_; }
    std::size_t chunk_size() const noexcept { return cfg_.chunk_size; }
    std::size_t num_chunks() const noexcept { return (n_ + cfg_.chunk_size - 1) / cfg_.chunk_size; }
    const StoreConfig& config() const noexcept { return cfg_; }
    bool has_residuals() const noexcept { return cfg_.residual_scheme.has_value(); }

    /// [begin, end) token range of a chunk.
    std::pair<std::size_t, std::size_t> chunk_range(std::size_t chunk) const;
    std::size_t chunk_of(std::size_t token) const;

    const Tensor& keys(std::size_t head) const { return head_at(head).keys; }
    const Tensor& values(std::size_t head) const { return head_at(head).values; }

    const QuantizedBlock& landmark_block(std::size_t head) const { return head_at(head).landmark_block; }
    /// Dequantized landmarks, [num_chunks x D].
    const Tensor& landmarks(std::size_t head) const { return head_at(head).landmarks; }
    Tensor landmark_of(std::size_t head, std::size_t chunk) const;

    const QuantizedBlock& residual_block(std::size_t head) const;
    /// Dequantized residuals, [n x D].
    const Tensor& residuals(std::size_t head) const;
    /// Dequantized landmark of the token's chunk plus its dequantized residual.
    Tensor approx_key(std::size_t head, std::size_t token) const;

    const std::vector<std::size_t>& outlier_chunks(std::size_t head) const { return head_at(head).outliers; }
    /// Sorted ids of outlier-chunk and local-window tokens.
    std::vector<std::size_t> resident_tokens(std::size_t head) const;
    bool is_resident(std::size_t head, std::size_t token) const;

    /// Keys/values of every token in the requested chunks. Offloaded tokens
    /// come through the slow-tier scheme and count as traffic; resident
    /// tokens are served from the fast tier at full precision.
    LoadedTokens load_chunks(std::size_t head, std::span<const std::size_t> chunk_ids) const;
    LoadedTokens gather(std::size_t head, std::span<const std::size_t> token_ids) const;

    /// Landmark + residual bits for every key plus 16-bit keys and values of
    /// resident tokens, summed over heads.
    std::uint64_t fast_tier_resident_bits() const;

    /// Decode-time append of one token per kv-head. The tail chunk grows and
    /// its landmark is re-summarized; the local window slides.
    void append(std::span<const Tensor> key_rows, std::span<const Tensor> value_rows);

    /// Directory of KVT1 tensors plus manifest.txt. load() rebuilds the
    /// derived state from the raw tensors; landmarks and residuals come out
    /// bit-identical, outlier chunks are re-selected.
    void save(const std::filesystem::path& dir) const;
    static ChunkedKVStore load(const std::filesystem::path& dir);

private:
    struct Head {
        Tensor keys;
        Tensor values;
        QuantizedBlock landmark_block;
        Tensor landmarks;
        std::optional<QuantizedBlock> residual_block;
        Tensor residuals;
        Tensor slow_keys;
        Tensor slow_values;
        std::vector<std::size_t> outliers;
    };

    const Head& head_at(std::size_t head) const;
    void rebuild_head(Head& h, bool reselect_outliers) const;
    std::size_t local_window_begin() const;

    StoreConfig cfg_;
    std::size_t n_ = 0;
    std::size_t dim_ = 0;
    std::vector<Head> heads_;
};

/// Channel-wise mean of each chunk of `keys`, [ceil(n/chunk) x D].
Tensor chunk_means(const Tensor& keys, std::size_t chunk_size);

}  // namespace kvlab
