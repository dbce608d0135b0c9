// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "kvlab/tensor.hpp"

namespace kvlab {

/// Raised when an iterative routine hits its iteration cap.
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// [m x k] * [k x n]. Loop order is fixed (i, p, j) so results are
/// reproducible bit-for-bit within a build.
Tensor matmul(const Tensor& a, const Tensor& b);

/// a * b^T without materialising the transpose; same fixed loop order.
Tensor matmul_transposed(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);

/// Low-rank factorisation k ~= left * right.
struct SvdFactors {
    Tensor left;   // [n x r], columns are U * diag(sigma)
    Tensor right;  // [r x D], rows are orthonormal right singular vectors
    std::size_t rank = 0;

    Tensor reconstruct() const;
};

/// Truncated SVD of k [n x D] keeping `rank` components.
///
/// Computes the top eigenpairs of the Gram matrix k^T k in double precision
/// and projects k onto them, so the result is deterministic and does not
/// depend on any random start.
SvdFactors truncated_svd(const Tensor& k, std::size_t rank);

/// Sign-flip vector (+1/-1) drawn from `seed`; shared by every group a
/// quantizer transforms with that seed.
std::vector<float> hadamard_signs(std::size_t g, std::uint64_t seed);

/// In-place normalized Walsh-Hadamard transform (scaled by 1/sqrt(g)).
void walsh_hadamard_inplace(std::span<float> x);

/// Seeded random sign flips followed by the orthonormal WHT.
Tensor randomized_hadamard(const Tensor& x, std::uint64_t seed);
/// Inverse of randomized_hadamard for the same seed.
Tensor inverse_randomized_hadamard(const Tensor& y, std::uint64_t seed);

bool is_power_of_two(std::size_t v) noexcept;

}  // namespace kvlab
