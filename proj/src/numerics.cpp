// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace kvlab {

namespace {

void require_matrix(const Tensor& t, const char* what) {
    if (t.ndim() != 2) throw std::invalid_argument(std::string(what) + ": expected a matrix");
}

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

MatrixRM to_eigen(const Tensor& t) {
    MatrixRM m(t.rows(), t.cols());
    auto src = t.data();
    for (std::size_t i = 0; i < src.size(); ++i) m.data()[i] = src[i];
    return m;
}

Tensor from_eigen(const MatrixRM& m) {
    std::vector<float> out(static_cast<std::size_t>(m.size()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(m.data()[i]);
    return Tensor::matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), std::move(out));
}

// Deterministic sign convention: the largest-magnitude entry of each
// eigenvector is positive.
void canonicalize_signs(Eigen::MatrixXd& vecs) {
    for (Eigen::Index c = 0; c < vecs.cols(); ++c) {
        Eigen::Index arg = 0;
        vecs.col(c).cwiseAbs().maxCoeff(&arg);
        if (vecs(arg, c) < 0) vecs.col(c) *= -1.0;
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(k) + " vs " +
                                    std::to_string(b.rows()) + ")");
    }
    std::vector<float> out(m * n, 0.0f);
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        float* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const float av = ad[i * k + p];
            const float* brow = bd.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return Tensor::matrix(m, n, std::move(out));
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_transposed");
    require_matrix(b, "matmul_transposed");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) throw std::invalid_argument("matmul_transposed: inner dimensions differ");
    std::vector<float> out(m * n, 0.0f);
    for (std::size_t i = 0; i < m; ++i) {
        auto ar = a.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            auto br = b.row(j);
            float acc = 0.0f;
            for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
            out[i * n + j] = acc;
        }
    }
    return Tensor::matrix(m, n, std::move(out));
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(j, i) = a(i, j);
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    require_matrix(x, "softmax_rows");
    x.require_finite("softmax_rows");
    const std::size_t m = x.rows(), n = x.cols();
    if (n == 0) throw std::invalid_argument("softmax_rows: empty row");
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        auto in = x.row(i);
        auto o = out.row(i);
        const float mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(static_cast<double>(in[j]) - mx);
            o[j] = static_cast<float>(e);
            sum += e;
        }
        for (std::size_t j = 0; j < n; ++j) o[j] = static_cast<float>(o[j] / sum);
    }
    return out;
}

Tensor SvdFactors::reconstruct() const { return matmul(left, right); }

SvdFactors truncated_svd(const Tensor& k, std::size_t rank) {
    require_matrix(k, "truncated_svd");
    k.require_finite("truncated_svd");
    const std::size_t n = k.rows(), d = k.cols();
    if (rank < 1 || rank > std::min(n, d)) {
        throw std::invalid_argument("truncated_svd: rank " + std::to_string(rank) + " outside [1, " +
                                    std::to_string(std::min(n, d)) + "]");
    }
    const MatrixRM km = to_eigen(k);
    const auto r = static_cast<Eigen::Index>(rank);

    // Eigen-decompose the smaller Gram matrix.
    const bool wide = n < d;
    Eigen::MatrixXd gram = wide ? Eigen::MatrixXd(km * km.transpose()) : Eigen::MatrixXd(km.transpose() * km);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) {
        throw ConvergenceError("truncated_svd: eigen-solver did not converge");
    }
    // Eigenvalues come back ascending; keep the last `rank`, largest first.
    Eigen::MatrixXd top = solver.eigenvectors().rightCols(r).rowwise().reverse();
    Eigen::VectorXd lambda = solver.eigenvalues().tail(r).reverse();
    canonicalize_signs(top);

    SvdFactors f;
    f.rank = rank;
    if (!wide) {
        // top: [d x r] right singular vectors.
        MatrixRM right = top.transpose();
        MatrixRM left = km * top;
        f.left = from_eigen(left);
        f.right = from_eigen(right);
    } else {
        // top: [n x r] left singular vectors; recover right vectors from k.
        MatrixRM proj = top.transpose() * km;  // rows are sigma_i * v_i^T
        MatrixRM right(r, static_cast<Eigen::Index>(d));
        MatrixRM left(static_cast<Eigen::Index>(n), r);
        for (Eigen::Index i = 0; i < r; ++i) {
            const double sigma = std::sqrt(std::max(lambda(i), 0.0));
            if (sigma > std::numeric_limits<double>::epsilon() * std::max(1.0, std::sqrt(lambda(0)))) {
                right.row(i) = proj.row(i) / sigma;
                left.col(i) = top.col(i) * sigma;
            } else {
                right.row(i).setZero();
                left.col(i).setZero();
            }
        }
        f.left = from_eigen(left);
        f.right = from_eigen(right);
    }
    return f;
}

bool is_power_of_two(std::size_t v) noexcept { return v != 0 && (v & (v - 1)) == 0; }

std::vector<float> hadamard_signs(std::size_t g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<float> signs(g);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < g; ++i) {
        if (i % 64 == 0) bits = rng();
        signs[i] = (bits >> (i % 64)) & 1u ? -1.0f : 1.0f;
    }
    return signs;
}

void walsh_hadamard_inplace(std::span<float> x) {
    const std::size_t g = x.size();
    if (!is_power_of_two(g)) {
        throw std::invalid_argument("walsh_hadamard: length " + std::to_string(g) + " is not a power of two");
    }
    for (std::size_t h = 1; h < g; h <<= 1) {
        for (std::size_t i = 0; i < g; i += h << 1) {
            for (std::size_t j = i; j < i + h; ++j) {
                const float a = x[j], b = x[j + h];
                x[j] = a + b;
                x[j + h] = a - b;
            }
        }
    }
    const float norm = 1.0f / std::sqrt(static_cast<float>(g));
    for (float& v : x) v *= norm;
}

Tensor randomized_hadamard(const Tensor& x, std::uint64_t seed) {
    x.require_finite("randomized_hadamard");
    const auto signs = hadamard_signs(x.size(), seed);
    Tensor out = x;
    auto d = out.data();
    if (!is_power_of_two(d.size())) throw std::invalid_argument("randomized_hadamard: length is not a power of two");
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= signs[i];
    walsh_hadamard_inplace(d);
    return out;
}

Tensor inverse_randomized_hadamard(const Tensor& y, std::uint64_t seed) {
    y.require_finite("inverse_randomized_hadamard");
    Tensor out = y;
    auto d = out.data();
    walsh_hadamard_inplace(d);
    const auto signs = hadamard_signs(d.size(), seed);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= signs[i];
    return out;
}

}  // namespace kvlab
