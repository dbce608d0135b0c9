// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

// Reference implementations used only by the tests. They are written
// independently of the library: plain loops, double precision, no shared
// helpers beyond the Tensor container.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "kvlab/tensor.hpp"

namespace oracle {

inline kvlab::Tensor gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed, double stddev = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, stddev);
    kvlab::Tensor t({rows, cols});
    for (float& v : t.data()) v = static_cast<float>(nd(rng));
    return t;
}

// Row-major [m x n] result in double.
inline std::vector<double> matmul(const kvlab::Tensor& a, const kvlab::Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(a(i, p)) * b(p, j);
            out[i * n + j] = acc;
        }
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x) mx = std::max(mx, v);
    std::vector<double> e(x.size());
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (e[i] = std::exp(x[i] - mx));
    for (double& v : e) v /= s;
    return e;
}

// softmax(Q K^T / sqrt(D)) V, [H x D] in double.
inline std::vector<double> attention(const kvlab::Tensor& q, const kvlab::Tensor& k, const kvlab::Tensor& v) {
    const std::size_t h = q.rows(), n = k.rows(), d = k.cols();
    std::vector<double> out(h * d, 0.0);
    for (std::size_t i = 0; i < h; ++i) {
        std::vector<double> logits(n);
        for (std::size_t t = 0; t < n; ++t) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += static_cast<double>(q(i, j)) * k(t, j);
            logits[t] = acc / std::sqrt(static_cast<double>(d));
        }
        const auto w = softmax(logits);
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t j = 0; j < d; ++j) out[i * d + j] += w[t] * v(t, j);
    }
    return out;
}

// Value of every E4M3 code (bias 7, 3 mantissa bits, 0x7F/0xFF NaN).
inline double e4m3_value(std::uint8_t code) {
    const int sign = code >> 7, exp = (code >> 3) & 0xF, man = code & 0x7;
    if (exp == 0xF && man == 0x7) return std::numeric_limits<double>::quiet_NaN();
    const double mag = exp == 0 ? std::ldexp(man / 8.0, -6) : std::ldexp(1.0 + man / 8.0, exp - 7);
    return sign ? -mag : mag;
}

// Exhaustive nearest over the 256-entry table, ties to the even code,
// saturating at the largest finite magnitude.
inline double e4m3_round(double x) {
    std::uint8_t best = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (int c = 0; c < 256; ++c) {
        const double v = e4m3_value(static_cast<std::uint8_t>(c));
        if (std::isnan(v)) continue;
        if (v == 0.0 && (c & 0x80)) continue;  // keep +0 as the zero code
        const double err = std::abs(v - x);
        if (err < best_err || (err == best_err && (c & 1) == 0 && (best & 1) == 1)) {
            best_err = err;
            best = static_cast<std::uint8_t>(c);
        }
    }
    return e4m3_value(best);
}

// Orthonormal Walsh-Hadamard transform by explicit butterflies in double.
inline void wht(std::vector<double>& x) {
    for (std::size_t len = 1; len < x.size(); len <<= 1)
        for (std::size_t i = 0; i < x.size(); i += len << 1)
            for (std::size_t j = i; j < i + len; ++j) {
                const double a = x[j], b = x[j + len];
                x[j] = a + b;
                x[j + len] = a - b;
            }
    const double s = 1.0 / std::sqrt(static_cast<double>(x.size()));
    for (double& v : x) v *= s;
}

// Relative Frobenius error of the best rank-r approximation of k, from
// block subspace iteration on the Gram matrix k^T k with Gram-Schmidt
// re-orthonormalisation. Deterministic start.
inline double best_rank_error(const kvlab::Tensor& k, std::size_t r, int iters = 40) {
    const std::size_t n = k.rows(), d = k.cols();
    std::vector<double> g(d * d, 0.0);
    double total = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        auto row = k.row(t);
        for (std::size_t i = 0; i < d; ++i) {
            const double ri = row[i];
            total += ri * ri;
            double* gi = g.data() + i * d;
            for (std::size_t j = i; j < d; ++j) gi[j] += ri * row[j];
        }
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < i; ++j) g[i * d + j] = g[j * d + i];

    // Columns of q stored as rows: q[c * d + i].
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> nd;
    std::vector<double> q(r * d), z(r * d);
    for (double& v : q) v = nd(rng);
    auto orthonormalize = [&](std::vector<double>& m) {
        for (std::size_t c = 0; c < r; ++c) {
            double* mc = m.data() + c * d;
            for (int pass = 0; pass < 2; ++pass)
                for (std::size_t p = 0; p < c; ++p) {
                    const double* mp = m.data() + p * d;
                    double dp = 0.0;
                    for (std::size_t i = 0; i < d; ++i) dp += mc[i] * mp[i];
                    for (std::size_t i = 0; i < d; ++i) mc[i] -= dp * mp[i];
                }
            double nrm = 0.0;
            for (std::size_t i = 0; i < d; ++i) nrm += mc[i] * mc[i];
            nrm = std::sqrt(nrm);
            for (std::size_t i = 0; i < d; ++i) mc[i] /= nrm;
        }
    };
    orthonormalize(q);
    for (int it = 0; it < iters; ++it) {
        for (std::size_t c = 0; c < r; ++c) {
            const double* qc = q.data() + c * d;
            double* zc = z.data() + c * d;
            for (std::size_t i = 0; i < d; ++i) {
                const double* gi = g.data() + i * d;
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += gi[j] * qc[j];
                zc[i] = acc;
            }
        }
        q.swap(z);
        orthonormalize(q);
    }
    double captured = 0.0;
    for (std::size_t c = 0; c < r; ++c) {
        const double* qc = q.data() + c * d;
        for (std::size_t i = 0; i < d; ++i) {
            const double* gi = g.data() + i * d;
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += gi[j] * qc[j];
            captured += qc[i] * acc;
        }
    }
    return std::sqrt(std::max(0.0, total - captured) / total);
}

inline double rel_frobenius(const kvlab::Tensor& approx, const kvlab::Tensor& ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = static_cast<double>(approx.data()[i]) - ref.data()[i];
        num += d * d;
        den += static_cast<double>(ref.data()[i]) * ref.data()[i];
    }
    return std::sqrt(num / den);
}

}  // namespace oracle
