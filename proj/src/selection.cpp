// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace kvlab {

namespace {

float dot_f32(std::span<const float> a, std::span<const float> b) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

void check_queries(const Tensor& queries, std::size_t dim) {
    if (queries.ndim() != 2 || queries.rows() == 0 || queries.cols() != dim) {
        throw std::invalid_argument("selection: queries must be [H x D] with D matching the keys");
    }
}

std::vector<std::size_t> sorted_union(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
    a.insert(a.end(), b.begin(), b.end());
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    return a;
}

// Chunks that are not wholly resident on the fast tier.
std::vector<bool> offloaded_chunks(const ChunkedKVStore& store, std::size_t head) {
    std::vector<bool> offloaded(store.num_chunks(), false);
    for (std::size_t c = 0; c < store.num_chunks(); ++c) {
        const auto [begin, end] = store.chunk_range(c);
        for (std::size_t t = begin; t < end && !offloaded[c]; ++t) offloaded[c] = !store.is_resident(head, t);
    }
    return offloaded;
}

void finish(SelectionResult& r, const ChunkedKVStore& store, std::size_t head, std::vector<std::size_t> tokens) {
    std::sort(r.chunk_ids.begin(), r.chunk_ids.end());
    r.token_ids = sorted_union(std::move(tokens), store.resident_tokens(head));
    r.n_tokens = store.n_tokens();
    r.loaded_fraction = static_cast<double>(r.token_ids.size()) / static_cast<double>(r.n_tokens);
}

}  // namespace

std::vector<std::size_t> top_k_indices(const std::vector<float>& scores, std::size_t k) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    k = std::min(k, idx.size());
    auto better = [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    idx.resize(k);
    return idx;
}

std::vector<float> group_scores(const Tensor& queries, const Tensor& rows, HeadAggregation agg) {
    check_queries(queries, rows.cols());
    const std::size_t n = rows.rows(), h = queries.rows();
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = rows.row(i);
        float acc = agg == HeadAggregation::Sum ? 0.0f : -std::numeric_limits<float>::infinity();
        for (std::size_t q = 0; q < h; ++q) {
            const float s = dot_f32(queries.row(q), r);
            acc = agg == HeadAggregation::Sum ? acc + s : std::max(acc, s);
        }
        out[i] = acc;
    }
    return out;
}

SelectionResult select_by_landmarks(const ChunkedKVStore& store, std::size_t kv_head, const Tensor& queries,
                                    const BudgetConfig& budget, HeadAggregation agg) {
    const std::size_t n = store.n_tokens();
    const std::size_t wanted = (budget.sparse_tokens(n) + store.chunk_size() - 1) / store.chunk_size();
    const std::vector<float> all = group_scores(queries, store.landmarks(kv_head), agg);
    const auto offloaded = offloaded_chunks(store, kv_head);

    std::vector<std::size_t> candidates;
    std::vector<float> cand_scores;
    for (std::size_t c = 0; c < all.size(); ++c) {
        if (!offloaded[c]) continue;
        candidates.push_back(c);
        cand_scores.push_back(all[c]);
    }
    SelectionResult r;
    r.scores = all;
    std::vector<std::size_t> tokens;
    for (std::size_t i : top_k_indices(cand_scores, wanted)) {
        const std::size_t c = candidates[i];
        r.chunk_ids.push_back(c);
        const auto [begin, end] = store.chunk_range(c);
        for (std::size_t t = begin; t < end; ++t) tokens.push_back(t);
    }
    finish(r, store, kv_head, std::move(tokens));
    return r;
}

SelectionResult oracle_select(const Tensor& keys, const Tensor& queries, std::size_t k, HeadAggregation agg) {
    const std::size_t n = keys.rows();
    if (k < 1 || k > n) throw std::invalid_argument("oracle_select: k outside [1, n]");
    SelectionResult r;
    r.scores = group_scores(queries, keys, agg);
    r.token_ids = top_k_indices(r.scores, k);
    std::sort(r.token_ids.begin(), r.token_ids.end());
    r.chunk_ids = r.token_ids;
    r.n_tokens = n;
    r.loaded_fraction = static_cast<double>(k) / static_cast<double>(n);
    return r;
}

std::vector<float> residual_scores(const ChunkedKVStore& store, std::size_t kv_head, const Tensor& queries,
                                   HeadAggregation agg) {
    const Tensor& res = store.residuals(kv_head);
    check_queries(queries, store.head_dim());
    const Tensor& lm = store.landmarks(kv_head);
    const std::size_t h = queries.rows(), n = store.n_tokens();
    // Per-head landmark scores, computed once per chunk and repeated.
    std::vector<float> lscore(lm.rows() * h);
    for (std::size_t c = 0; c < lm.rows(); ++c)
        for (std::size_t q = 0; q < h; ++q) lscore[c * h + q] = dot_f32(queries.row(q), lm.row(c));
    std::vector<float> out(n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t c = t / store.chunk_size();
        float acc = agg == HeadAggregation::Sum ? 0.0f : -std::numeric_limits<float>::infinity();
        for (std::size_t q = 0; q < h; ++q) {
            const float s = lscore[c * h + q] + dot_f32(queries.row(q), res.row(t));
            acc = agg == HeadAggregation::Sum ? acc + s : std::max(acc, s);
        }
        out[t] = acc;
    }
    return out;
}

SelectionResult approx_topk_residual(const ChunkedKVStore& store, std::size_t kv_head, const Tensor& queries,
                                     std::size_t k, std::size_t candidate_multiplier, HeadAggregation agg) {
    if (candidate_multiplier < 1) throw std::invalid_argument("approx_topk_residual: multiplier must be >= 1");
    const Tensor& res = store.residuals(kv_head);
    const std::size_t cs = store.chunk_size();
    const std::vector<float> lscores = group_scores(queries, store.landmarks(kv_head), agg);
    const auto offloaded = offloaded_chunks(store, kv_head);

    std::vector<std::size_t> chunks;
    std::vector<float> chunk_scores;
    for (std::size_t c = 0; c < lscores.size(); ++c) {
        if (!offloaded[c]) continue;
        chunks.push_back(c);
        chunk_scores.push_back(lscores[c]);
    }
    const std::size_t n_cand = candidate_multiplier * ((k + cs - 1) / cs);
    const auto picked = top_k_indices(chunk_scores, n_cand);

    // Residual refinement inside the candidate chunks only.
    const std::size_t h = queries.rows();
    std::vector<std::size_t> cand_tokens;
    std::vector<float> cand_scores;
    std::vector<std::size_t> cand_chunks;
    for (std::size_t i : picked) cand_chunks.push_back(chunks[i]);
    std::sort(cand_chunks.begin(), cand_chunks.end());
    const Tensor& lm = store.landmarks(kv_head);
    for (std::size_t c : cand_chunks) {
        std::vector<float> lq(h);
        for (std::size_t q = 0; q < h; ++q) lq[q] = dot_f32(queries.row(q), lm.row(c));
        const auto [begin, end] = store.chunk_range(c);
        for (std::size_t t = begin; t < end; ++t) {
            if (store.is_resident(kv_head, t)) continue;
            float acc = agg == HeadAggregation::Sum ? 0.0f : -std::numeric_limits<float>::infinity();
            for (std::size_t q = 0; q < h; ++q) {
                const float s = lq[q] + dot_f32(queries.row(q), res.row(t));
                acc = agg == HeadAggregation::Sum ? acc + s : std::max(acc, s);
            }
            cand_tokens.push_back(t);
            cand_scores.push_back(acc);
        }
    }
    SelectionResult r;
    r.scores = cand_scores;
    std::vector<std::size_t> tokens;
    for (std::size_t i : top_k_indices(cand_scores, k)) tokens.push_back(cand_tokens[i]);
    std::sort(tokens.begin(), tokens.end());
    for (std::size_t t : tokens) {
        if (r.chunk_ids.empty() || r.chunk_ids.back() != t / cs) r.chunk_ids.push_back(t / cs);
    }
    finish(r, store, kv_head, std::move(tokens));
    return r;
}

double recall(const SelectionResult& selected, const SelectionResult& oracle) {
    if (oracle.token_ids.empty()) throw std::invalid_argument("recall: empty oracle set");
    if (selected.n_tokens != oracle.n_tokens) throw std::invalid_argument("recall: selections over different n");
    std::vector<std::size_t> a = selected.token_ids, b = oracle.token_ids;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    return static_cast<double>(both.size()) / static_cast<double>(b.size());
}

}  // namespace kvlab
