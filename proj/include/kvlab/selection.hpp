// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "kvlab/kvstore.hpp"
#include "kvlab/tensor.hpp"

namespace kvlab {

/// How per-query-head scores combine within a kv-head group.
enum class HeadAggregation { Sum, Max };

struct SelectionResult {
    std::vector<std::size_t> chunk_ids;  // selected (non-resident) chunks, ascending
    std::vector<std::size_t> token_ids;  // selected + resident tokens, ascending
    std::vector<float> scores;           // per chunk (landmark policies) or per token (oracle)
    double loaded_fraction = 0.0;        // token_ids.size() / n
    std::size_t n_tokens = 0;
};

/// Indices of the k largest scores, ties to the lowest index, returned in
/// rank order.
std::vector<std::size_t> top_k_indices(const std::vector<float>& scores, std::size_t k);

/// Aggregated q . row for every row of `rows` over the query heads of a group.
std::vector<float> group_scores(const Tensor& queries, const Tensor& rows,
                                HeadAggregation agg = HeadAggregation::Sum);

/// Ranks non-resident chunks by aggregated query-landmark dot products and
/// keeps the top ceil(sparse_fraction * n / chunk_size); resident tokens are
/// always part of the result.
SelectionResult select_by_landmarks(const ChunkedKVStore& store, std::size_t kv_head, const Tensor& queries,
                                    const BudgetConfig& budget, HeadAggregation agg = HeadAggregation::Sum);

/// Top-k tokens by exact summed query-key dot products.
SelectionResult oracle_select(const Tensor& keys, const Tensor& queries, std::size_t k,
                              HeadAggregation agg = HeadAggregation::Sum);

/// Per-token scores repeat(q . L) + q . R, aggregated over the group.
std::vector<float> residual_scores(const ChunkedKVStore& store, std::size_t kv_head, const Tensor& queries,
                                   HeadAggregation agg = HeadAggregation::Sum);

/// Landmark pre-selection of candidate_multiplier * ceil(k / chunk_size)
/// chunks, then residual-refined top-k tokens inside the candidates.
SelectionResult approx_topk_residual(const ChunkedKVStore& store, std::size_t kv_head, const Tensor& queries,
                                     std::size_t k, std::size_t candidate_multiplier,
                                     HeadAggregation agg = HeadAggregation::Sum);

/// |selected ∩ oracle| / |oracle|.
double recall(const SelectionResult& selected, const SelectionResult& oracle);

}  // namespace kvlab
