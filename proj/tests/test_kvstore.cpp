// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>

#include "kvlab/kvstore.hpp"
#include "oracles.hpp"

using namespace kvlab;

namespace {

StoreConfig lossless(std::size_t chunk, std::size_t outliers = 0, std::size_t local = 0) {
    StoreConfig c;
    c.chunk_size = chunk;
    c.budget.outlier_tokens = outliers;
    c.budget.local_window = local;
    return c;
}

}  // namespace

TEST_CASE("landmarks are chunk means") {
    const Tensor k = oracle::gaussian(4096, 16, 1), v = oracle::gaussian(4096, 16, 2);
    const auto s1 = ChunkedKVStore::build(k, v, lossless(1));
    CHECK(s1.landmarks(0) == k);

    const auto s8 = ChunkedKVStore::build(k, v, lossless(8));
    CHECK(s8.num_chunks() == 512);
    CHECK(s8.landmarks(0).rows() == 512);
    for (std::size_t c : {0, 17, 511}) {
        const Tensor l = s8.landmark_of(0, c);
        for (std::size_t j = 0; j < 16; ++j) {
            double mean = 0.0;
            for (std::size_t t = c * 8; t < c * 8 + 8; ++t) mean += k(t, j);
            CHECK(l[j] == doctest::Approx(mean / 8).epsilon(1e-6));
        }
    }
    CHECK_THROWS_AS(s8.landmark_of(0, 512), std::out_of_range);

    // Ragged tail chunk.
    const auto s3 = ChunkedKVStore::build(k.slice_rows(0, 10), v.slice_rows(0, 10), lossless(4));
    CHECK(s3.num_chunks() == 3);
    CHECK(s3.landmark_of(0, 2)[0] == doctest::Approx((k(8, 0) + k(9, 0)) / 2.0));

    // chunk_size larger than n: one chunk.
    CHECK(ChunkedKVStore::build(k.slice_rows(0, 5), v.slice_rows(0, 5), lossless(8)).num_chunks() == 1);
}

TEST_CASE("quantized landmarks come straight from the quantization module") {
    const Tensor k = oracle::gaussian(512, 64, 3), v = oracle::gaussian(512, 64, 4);
    StoreConfig c = lossless(4);
    c.landmark_scheme = SchemeDescriptor::higgs_bits(4, 256, 9);
    const auto s = ChunkedKVStore::build(k, v, c);
    CHECK(s.landmarks(0) == dequantize(quantize(chunk_means(k, 4), c.landmark_scheme)));
}

TEST_CASE("residual decomposition") {
    std::vector<float> same(8 * 4);
    for (std::size_t i = 0; i < same.size(); ++i) same[i] = static_cast<float>(i % 4) - 1.5f;
    const Tensor rep = Tensor::matrix(8, 4, same);
    StoreConfig c = lossless(8);
    c.residual_scheme = SchemeDescriptor::none();
    const auto s = ChunkedKVStore::build(rep, rep, c);
    for (float r : s.residuals(0).data()) CHECK(r == 0.0f);
    CHECK(s.approx_key(0, 3) == s.landmark_of(0, 0));

    const Tensor k = oracle::gaussian(256, 32, 5);
    const auto exact = ChunkedKVStore::build(k, k, c);
    for (std::size_t t = 0; t < 256; t += 17) {
        const Tensor a = exact.approx_key(0, t);
        for (std::size_t j = 0; j < 32; ++j) CHECK(a[j] == doctest::Approx(k(t, j)).epsilon(1e-6));
    }
    const auto chunk1 = ChunkedKVStore::build(k, k, lossless(1));
    CHECK_THROWS_AS(chunk1.approx_key(0, 0), std::logic_error);
    CHECK_THROWS_AS(chunk1.residuals(0), std::logic_error);
}

TEST_CASE("q . approx_key equals repeated landmark score plus residual score") {
    const Tensor k = oracle::gaussian(300, 64, 6);
    const Tensor q = oracle::gaussian(1, 64, 7);
    StoreConfig c = lossless(8);
    c.landmark_scheme = SchemeDescriptor::higgs_bits(4, 1024, 1);
    c.residual_scheme = SchemeDescriptor::higgs_bits(1, 1024, 2);
    const auto s = ChunkedKVStore::build(k, k, c);
    for (std::size_t t = 0; t < 300; ++t) {
        const double direct = dot(q.row(0), s.approx_key(0, t).data());
        const double split = dot(q.row(0), s.landmarks(0).row(t / 8)) + dot(q.row(0), s.residuals(0).row(t));
        CHECK(direct == doctest::Approx(split).epsilon(1e-5));
    }
}

TEST_CASE("residency and traffic") {
    const Tensor k = oracle::gaussian(1000, 8, 8), v = oracle::gaussian(1000, 8, 9);
    const auto s = ChunkedKVStore::build(k, v, lossless(8, 64, 32));
    const auto& outliers = s.outlier_chunks(0);
    CHECK(outliers.size() == 8);
    CHECK(outliers.front() == 0);
    const auto resident = s.resident_tokens(0);
    CHECK(resident.size() == 64 + 32);
    CHECK(s.is_resident(0, 999));
    CHECK(s.is_resident(0, 0));

    CHECK(s.load_chunks(0, std::vector<std::size_t>{}).traffic.tokens_loaded_from_slow_tier == 0);
    std::vector<std::size_t> all(s.num_chunks());
    for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
    const LoadedTokens every = s.load_chunks(0, all);
    CHECK(every.traffic.tokens_loaded_from_slow_tier == 1000 - resident.size());
    CHECK(every.keys == k);
    CHECK(every.values == v);

    // Fewer tokens than the outlier budget: everything resident.
    const auto tiny = ChunkedKVStore::build(k.slice_rows(0, 50), v.slice_rows(0, 50), lossless(8, 384, 32));
    CHECK(tiny.resident_tokens(0).size() == 50);
}

TEST_CASE("outliers are the worst summarized chunks") {
    Tensor k = oracle::gaussian(64, 8, 10);
    // Chunks 3 and 5 hold aligned keys, so their landmark fits perfectly;
    // chunk 6 holds alternating opposite keys, which fit worst.
    for (std::size_t t = 48; t < 56; ++t)
        for (std::size_t j = 0; j < 8; ++j) k(t, j) = (t % 2 ? 1.0f : -1.0f) * (j == 0 ? 1.0f : 0.1f) + (j == 1 ? 0.05f : 0.0f);
    for (std::size_t c : {3, 5})
        for (std::size_t t = c * 8; t < c * 8 + 8; ++t)
            for (std::size_t j = 0; j < 8; ++j) k(t, j) = 1.0f;
    const auto s = ChunkedKVStore::build(k, k, lossless(8, 16, 0));
    CHECK(s.outlier_chunks(0) == std::vector<std::size_t>{0, 6});
}

TEST_CASE("equal-memory configurations use equal fast-tier bits") {
    const Tensor k = oracle::gaussian(2048, 128, 11);
    auto make = [&](SchemeDescriptor lm, std::size_t chunk) {
        StoreConfig c = lossless(chunk, 64, 32);
        c.landmark_scheme = lm;
        return ChunkedKVStore::build(k, k, c).fast_tier_resident_bits();
    };
    const auto a = make(SchemeDescriptor::none(), 8);
    CHECK(a == make(SchemeDescriptor::higgs_bits(4, 1024), 2));
    CHECK(a == make(SchemeDescriptor::higgs_bits(2, 1024), 1));
}

TEST_CASE("rebuilds and reloads are bit identical") {
    const Tensor k = oracle::gaussian(512, 64, 12), v = oracle::gaussian(512, 64, 13);
    StoreConfig c = lossless(8, 64, 32);
    c.landmark_scheme = SchemeDescriptor::higgs_bits(4, 1024, 3);
    c.residual_scheme = SchemeDescriptor::higgs_bits(1, 1024, 4);
    c.slow_tier_scheme = SchemeDescriptor::fp8(64);
    const auto a = ChunkedKVStore::build(k, v, c);
    const auto b = ChunkedKVStore::build(k, v, c);
    CHECK(a.landmark_block(0) == b.landmark_block(0));
    CHECK(a.residual_block(0) == b.residual_block(0));
    CHECK(a.outlier_chunks(0) == b.outlier_chunks(0));

    const auto dir = std::filesystem::temp_directory_path() / "kvlab_test_store";
    std::filesystem::remove_all(dir);
    a.save(dir);
    const auto r = ChunkedKVStore::load(dir);
    CHECK(r.landmark_block(0) == a.landmark_block(0));
    CHECK(r.residuals(0) == a.residuals(0));
    CHECK(r.outlier_chunks(0) == a.outlier_chunks(0));
    CHECK(r.config().slow_tier_scheme == c.slow_tier_scheme);
    std::filesystem::remove_all(dir);
}

TEST_CASE("slow tier compression") {
    const Tensor k = oracle::gaussian(256, 32, 14), v = oracle::gaussian(256, 32, 15);
    StoreConfig c = lossless(8);
    c.slow_tier_scheme = SchemeDescriptor::fp8(32);
    const auto s = ChunkedKVStore::build(k, v, c);
    const std::vector<std::size_t> ids{5, 100};
    const LoadedTokens got = s.gather(0, ids);
    CHECK(got.keys.row(0)[0] == dequantize(quantize(k, c.slow_tier_scheme))(5, 0));

    StoreConfig sv = lossless(8);
    sv.slow_tier_scheme = SchemeDescriptor::svd(8, 0, 0);
    const auto ss = ChunkedKVStore::build(k, v, sv);
    const LoadedTokens lv = ss.gather(0, ids);
    CHECK(lv.values.row(1)[3] == v(100, 3));  // values stay uncompressed under SVD
    CHECK_FALSE(lv.keys.row(1)[3] == k(100, 3));
}

TEST_CASE("append grows the tail and slides the local window") {
    const Tensor k = oracle::gaussian(20, 4, 16);
    auto s = ChunkedKVStore::build(k.slice_rows(0, 19), k.slice_rows(0, 19), lossless(8, 0, 4));
    CHECK(s.num_chunks() == 3);
    const Tensor row = k.slice_rows(19, 1).reshaped({4});
    s.append(std::vector<Tensor>{row}, std::vector<Tensor>{row});
    CHECK(s.n_tokens() == 20);
    CHECK(s.num_chunks() == 3);
    CHECK(s.is_resident(0, 19));
    CHECK_FALSE(s.is_resident(0, 15));
    CHECK(s.landmark_of(0, 2)[1] == doctest::Approx((k(16, 1) + k(17, 1) + k(18, 1) + k(19, 1)) / 4.0));
    CHECK_THROWS(s.append(std::vector<Tensor>{Tensor::vector({1, 2})}, std::vector<Tensor>{row}));
}

TEST_CASE("invalid stores") {
    CHECK_THROWS_AS(ChunkedKVStore::build(Tensor({0, 4}), Tensor({0, 4}), lossless(8)), std::invalid_argument);
    CHECK_THROWS_AS(ChunkedKVStore::build(oracle::gaussian(4, 4, 1), oracle::gaussian(4, 4, 1), lossless(0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(ChunkedKVStore::build(oracle::gaussian(4, 4, 1), oracle::gaussian(5, 4, 1), lossless(2)),
                    std::invalid_argument);
}
