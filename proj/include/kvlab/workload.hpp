// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "kvlab/tensor.hpp"

namespace kvlab {

/// Planted multi-needle retrieval instance. Each decode step has a query
/// direction per kv-head and a distinct set of needle keys aligned with it.
struct WorkloadSpec {
    std::size_t n_tokens = 8192;
    std::size_t kv_heads = 1;
    std::size_t query_heads_per_group = 4;
    std::size_t head_dim = 128;
    std::size_t n_needles = 16;       // per decode step and kv-head
    double needle_alignment = 0.9;    // cosine between needle and query direction
    double noise_scale = 1.0;         // std multiplier of haystack keys
    std::size_t decode_steps = 4;
    std::uint64_t seed = 0;
    std::size_t local_window = 32;    // trailing tokens never hold needles

    void validate() const;
};

struct Workload {
    WorkloadSpec spec;
    std::vector<Tensor> keys;     // per kv-head, [n x D]
    std::vector<Tensor> values;   // per kv-head, [n x D]
    std::vector<Tensor> queries;  // per step, [kv_heads * group x D]
    /// needles[step][kv_head]: planted token ids, ascending.
    std::vector<std::vector<std::vector<std::size_t>>> needles;

    /// Query rows of one kv-head group at one step, [group x D].
    Tensor group_queries(std::size_t step, std::size_t kv_head) const;
};

/// Haystack keys ~ N(0, noise_scale^2 I / D), values ~ N(0, I / D). Needle
/// keys are alpha * u + sqrt(1 - alpha^2) * xi with xi ~ N(0, I / D); query
/// heads are small perturbations of u scaled so that needle logits sit near
/// alpha * ln(n).
Workload generate(const WorkloadSpec& spec);

Tensor import_kvt(const std::filesystem::path& path);

/// Imports exported tensors from a directory holding keys.kvt and
/// values.kvt ([n x D] or [heads x n x D]) and queries.kvt ([H x D] or
/// [steps x H x D]). No needles are known for imported data.
Workload import_workload(const std::filesystem::path& dir);

/// Inverse of import_workload: keys.kvt and values.kvt as [heads x n x D],
/// queries.kvt as [steps x H x D], plus needles.txt ("step head id...").
void export_workload(const Workload& w, const std::filesystem::path& dir);

}  // namespace kvlab
