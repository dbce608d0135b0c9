// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "kvlab/selection.hpp"
#include "oracles.hpp"

using namespace kvlab;

namespace {

StoreConfig config(std::size_t chunk, double fraction = 0.1) {
    StoreConfig c;
    c.chunk_size = chunk;
    c.budget.sparse_fraction = fraction;
    c.budget.outlier_tokens = 0;
    c.budget.local_window = 0;
    return c;
}

SelectionResult tokens(std::vector<std::size_t> ids, std::size_t n) {
    SelectionResult r;
    r.token_ids = std::move(ids);
    r.n_tokens = n;
    return r;
}

}  // namespace

TEST_CASE("oracle selection") {
    const Tensor k = oracle::gaussian(64, 8, 1);
    const Tensor q = oracle::gaussian(2, 8, 2);
    CHECK(oracle_select(k, q, 64).token_ids.size() == 64);
    CHECK_THROWS_AS(oracle_select(k, q, 0), std::invalid_argument);
    CHECK_THROWS_AS(oracle_select(k, q, 65), std::invalid_argument);

    // Exhaustive sort oracle in double (summed over heads).
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t t = 0; t < 64; ++t) {
        double s = 0.0;
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t j = 0; j < 8; ++j) s += static_cast<double>(q(h, j)) * k(t, j);
        ranked.emplace_back(-s, t);
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < 8; ++i) expect.push_back(ranked[i].second);
    std::sort(expect.begin(), expect.end());
    CHECK(oracle_select(k, q, 8).token_ids == expect);

    // Planted key among orthogonal noise.
    Tensor planted({32, 8});
    for (std::size_t t = 0; t < 32; ++t) planted(t, 1 + t % 7) = 0.5f;
    planted(13, 0) = 1.0f;
    CHECK(oracle_select(planted, Tensor::matrix(1, 8, {1, 0, 0, 0, 0, 0, 0, 0}), 1).token_ids ==
          std::vector<std::size_t>{13});
}

TEST_CASE("ties go to the lowest index") {
    CHECK(top_k_indices({1, 3, 3, 2, 3}, 2) == std::vector<std::size_t>{1, 2});
    CHECK(top_k_indices({0, 0, 0}, 5) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("landmark selection") {
    const Tensor k = oracle::gaussian(256, 16, 3);
    const Tensor q = oracle::gaussian(4, 16, 4);
    const auto full = ChunkedKVStore::build(k, k, config(8, 1.0));
    CHECK(select_by_landmarks(full, 0, q, full.config().budget).chunk_ids.size() == 32);

    // One landmark equal to the query, the others orthogonal to it.
    Tensor ortho({64, 4});
    for (std::size_t t = 0; t < 64; ++t) ortho(t, 1 + t % 3) = 1.0f;
    for (std::size_t t = 40; t < 48; ++t) ortho(t, 0) = 1.0f, ortho(t, 1) = ortho(t, 2) = ortho(t, 3) = 0.0f;
    const auto s = ChunkedKVStore::build(ortho, ortho, config(8, 0.125));
    const auto r = select_by_landmarks(s, 0, Tensor::matrix(1, 4, {1, 0, 0, 0}), s.config().budget);
    CHECK(r.chunk_ids == std::vector<std::size_t>{5});

    // chunk_size 1, lossless: identical to the oracle at k = budget tokens.
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Tensor kk = oracle::gaussian(500, 16, 100 + seed);
        const Tensor qq = oracle::gaussian(4, 16, 200 + seed);
        const auto st = ChunkedKVStore::build(kk, kk, config(1, 0.05));
        const auto sel = select_by_landmarks(st, 0, qq, st.config().budget);
        CHECK(sel.token_ids == oracle_select(kk, qq, 25).token_ids);
    }
}

TEST_CASE("landmark recall is monotone in the budget") {
    const Tensor k = oracle::gaussian(2048, 32, 5);
    const Tensor q = oracle::gaussian(4, 32, 6);
    const auto ref = oracle_select(k, q, 32);
    double prev = 0.0;
    for (double f : {0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0}) {
        const auto s = ChunkedKVStore::build(k, k, config(8, f));
        const double r = recall(select_by_landmarks(s, 0, q, s.config().budget), ref);
        CHECK(r >= prev);
        prev = r;
    }
    CHECK(prev == 1.0);
}

TEST_CASE("residual scores") {
    const Tensor k = oracle::gaussian(200, 32, 7);
    const Tensor q = oracle::gaussian(3, 32, 8);

    StoreConfig exact = config(8);
    exact.residual_scheme = SchemeDescriptor::none();
    const auto se = ChunkedKVStore::build(k, k, exact);
    const auto scores = residual_scores(se, 0, q);
    const auto truth = group_scores(q, k);
    for (std::size_t t = 0; t < 200; ++t) CHECK(scores[t] == doctest::Approx(truth[t]).epsilon(1e-5));

    // Identical keys inside every chunk: residuals vanish, scores are flat per chunk.
    Tensor flat({64, 4});
    for (std::size_t t = 0; t < 64; ++t)
        for (std::size_t j = 0; j < 4; ++j) flat(t, j) = static_cast<float>((t / 8) * 0.1 + j);
    const auto sf = ChunkedKVStore::build(flat, flat, exact);
    const auto fs = residual_scores(sf, 0, Tensor::matrix(1, 4, {1, -1, 0.5, 2}));
    for (std::size_t t = 0; t < 64; ++t) CHECK(fs[t] == fs[(t / 8) * 8]);

    CHECK_THROWS(residual_scores(ChunkedKVStore::build(k, k, config(8)), 0, q));

    // Direct reconstruction for a lossy combination.
    StoreConfig lossy = config(8);
    lossy.landmark_scheme = SchemeDescriptor::nvfp4();
    lossy.residual_scheme = SchemeDescriptor::higgs_bits(2, 64, 3);
    const auto sl = ChunkedKVStore::build(k, k, lossy);
    const auto ls = residual_scores(sl, 0, q);
    for (std::size_t t = 0; t < 200; ++t) {
        double direct = 0.0;
        const Tensor a = sl.approx_key(0, t);
        for (std::size_t h = 0; h < 3; ++h) direct += dot(q.row(h), a.data());
        CHECK(ls[t] == doctest::Approx(direct).epsilon(1e-5));
    }
}

TEST_CASE("approximate top-k with residuals") {
    const Tensor k = oracle::gaussian(1024, 32, 9);
    const Tensor q = oracle::gaussian(4, 32, 10);
    StoreConfig c = config(8);
    c.landmark_scheme = SchemeDescriptor::higgs_bits(4, 256, 1);
    c.residual_scheme = SchemeDescriptor::higgs_bits(1, 256, 2);
    const auto s = ChunkedKVStore::build(k, k, c);

    // Exhaustive candidates reproduce the full residual top-k.
    const auto scores = residual_scores(s, 0, q);
    auto exact = top_k_indices(scores, 40);
    std::sort(exact.begin(), exact.end());
    const auto all = approx_topk_residual(s, 0, q, 40, s.num_chunks());
    CHECK(all.token_ids == exact);

    double prev = 0.0;
    const auto ref = tokens(exact, 1024);
    for (std::size_t m : {1, 2, 4, 8}) {
        const double r = recall(approx_topk_residual(s, 0, q, 40, m), ref);
        CHECK(r >= prev);
        prev = r;
    }
    CHECK_THROWS(approx_topk_residual(s, 0, q, 40, 0));

    // chunk size 1: the residual carries nothing beyond the landmark ranking.
    StoreConfig c1 = config(1, 0.02);
    c1.residual_scheme = SchemeDescriptor::none();
    const auto s1 = ChunkedKVStore::build(k, k, c1);
    const auto budget_tokens = c1.budget.sparse_tokens(1024);
    CHECK(approx_topk_residual(s1, 0, q, budget_tokens, 1).token_ids ==
          select_by_landmarks(s1, 0, q, c1.budget).token_ids);
}

TEST_CASE("recall") {
    CHECK(recall(tokens({1, 2, 3}, 10), tokens({1, 2, 3}, 10)) == 1.0);
    CHECK(recall(tokens({4, 5}, 10), tokens({1, 2, 3}, 10)) == 0.0);
    CHECK(recall(tokens({1, 2, 7, 8}, 10), tokens({1, 2, 3, 4}, 10)) == 0.5);
    CHECK_THROWS(recall(tokens({1}, 10), tokens({}, 10)));
}

TEST_CASE("resident tokens are always part of a selection") {
    const Tensor k = oracle::gaussian(512, 16, 11);
    StoreConfig c = config(8, 0.02);
    c.budget.outlier_tokens = 32;
    c.budget.local_window = 16;
    const auto s = ChunkedKVStore::build(k, k, c);
    const auto r = select_by_landmarks(s, 0, oracle::gaussian(2, 16, 12), c.budget);
    for (std::size_t t : s.resident_tokens(0)) CHECK(std::binary_search(r.token_ids.begin(), r.token_ids.end(), t));
    for (std::size_t ch : r.chunk_ids) CHECK(std::find(s.outlier_chunks(0).begin(), s.outlier_chunks(0).end(), ch) == s.outlier_chunks(0).end());
    CHECK(r.token_ids.size() == s.resident_tokens(0).size() + 16);
    CHECK(r.loaded_fraction == doctest::Approx(static_cast<double>(r.token_ids.size()) / 512.0));
}
