// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kvlab {

std::size_t element_count(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<float> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
    if (element_count(dims_) != data_.size()) {
        throw std::invalid_argument("tensor: dims describe " + std::to_string(element_count(dims_)) +
                                    " elements but data holds " + std::to_string(data_.size()));
    }
}

Tensor::Tensor(std::vector<std::size_t> dims) : dims_(std::move(dims)), data_(element_count(dims_), 0.0f) {}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<float> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::vector(std::vector<float> data) {
    const std::size_t n = data.size();
    return Tensor({n}, std::move(data));
}

std::size_t Tensor::rows() const {
    if (dims_.size() != 2) throw std::invalid_argument("tensor: rows() requires a matrix");
    return dims_[0];
}

std::size_t Tensor::cols() const {
    if (dims_.size() != 2) throw std::invalid_argument("tensor: cols() requires a matrix");
    return dims_[1];
}

std::span<const float> Tensor::row(std::size_t r) const {
    const std::size_t c = cols();
    if (r >= dims_[0]) throw std::out_of_range("tensor: row index out of range");
    return std::span<const float>(data_).subspan(r * c, c);
}

std::span<float> Tensor::row(std::size_t r) {
    const std::size_t c = cols();
    if (r >= dims_[0]) throw std::out_of_range("tensor: row index out of range");
    return std::span<float>(data_).subspan(r * c, c);
}

Tensor Tensor::slice_rows(std::size_t first, std::size_t count) const {
    const std::size_t c = cols();
    if (first + count > dims_[0]) throw std::out_of_range("tensor: row slice out of range");
    std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(first * c),
                           data_.begin() + static_cast<std::ptrdiff_t>((first + count) * c));
    return Tensor::matrix(count, c, std::move(out));
}

Tensor Tensor::reshaped(std::vector<std::size_t> dims) const { return Tensor(std::move(dims), data_); }

bool Tensor::all_finite() const noexcept {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::require_finite(const char* what) const {
    if (!all_finite()) throw std::domain_error(std::string(what) + ": non-finite value");
}

double frobenius_norm(const Tensor& t) {
    double acc = 0.0;
    for (float v : t.data()) acc += static_cast<double>(v) * v;
    return std::sqrt(acc);
}

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

}  // namespace kvlab
