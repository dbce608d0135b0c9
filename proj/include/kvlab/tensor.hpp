// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace kvlab {

/// Dense row-major float32 tensor. Carrier for queries, keys, values,
/// landmarks and residuals.
///
/// Invariant: product(dims) == data.size(). A tensor with no dims is a
/// scalar holding one value.
class Tensor {
public:
    Tensor() : dims_{0} {}
    Tensor(std::vector<std::size_t> dims, std::vector<float> data);
    explicit Tensor(std::vector<std::size_t> dims);

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> data);
    static Tensor vector(std::vector<float> data);

    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    std::size_t ndim() const noexcept { return dims_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Leading extent for matrices; rows() * cols() == size() for ndim == 2.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const float> data() const noexcept { return data_; }
    std::span<float> data() noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    float operator[](std::size_t i) const { return data_[i]; }
    float& operator[](std::size_t i) { return data_[i]; }

    std::span<const float> row(std::size_t r) const;
    std::span<float> row(std::size_t r);

    /// Rows [first, first + count) of a matrix as a new matrix.
    Tensor slice_rows(std::size_t first, std::size_t count) const;
    Tensor reshaped(std::vector<std::size_t> dims) const;

    bool all_finite() const noexcept;
    /// Throws std::domain_error naming `what` when any element is NaN/Inf.
    void require_finite(const char* what) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> dims_;
    std::vector<float> data_;
};

std::size_t element_count(const std::vector<std::size_t>& dims);

double frobenius_norm(const Tensor& t);
double dot(std::span<const float> a, std::span<const float> b);

}  // namespace kvlab
