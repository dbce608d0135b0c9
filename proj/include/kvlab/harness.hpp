// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kvlab/kvstore.hpp"
#include "kvlab/selection.hpp"
#include "kvlab/workload.hpp"

namespace kvlab {

enum class SelectionPolicy { Landmark, Oracle, ResidualTopk };

SelectionPolicy parse_policy(std::string_view name);
std::string_view to_string(SelectionPolicy p);

/// One point of the scheme matrix, with schemes in parse_scheme() syntax.
struct SchemeEntry {
    std::string landmark = "bf16";
    std::size_t chunk_size = 8;
    std::optional<std::string> residual;
    std::string slow_tier = "none";
};

struct ExperimentConfig {
    WorkloadSpec workload;
    /// When set, tensors come from this directory instead of the generator
    /// and the sweep makes a single pass regardless of the seed list.
    std::optional<std::filesystem::path> import_dir;
    std::vector<SchemeEntry> schemes;
    std::vector<BudgetConfig> budgets;
    SelectionPolicy policy = SelectionPolicy::Landmark;
    HeadAggregation aggregation = HeadAggregation::Sum;
    std::vector<std::uint64_t> seeds{0};
    std::size_t higgs_group = 1024;
    std::uint64_t quant_seed = 0;
    /// Candidate chunks for residual-topk as a multiple of ceil(k / chunk);
    /// 0 scores every offloaded token.
    std::size_t candidate_multiplier = 0;
    /// Size of the reference top-k set; 0 means the planted needle count, or
    /// the sparse budget for imported tensors.
    std::size_t recall_k = 0;
    std::filesystem::path output = "sweep.csv";

    void validate() const;
};

/// INI file with [workload], [sweep] and one [scheme.<label>] section per
/// scheme entry, in file order.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(std::string_view ini_text);

struct SweepRow {
    std::string scheme;
    std::size_t chunk_size = 0;
    double bits_per_key = 0.0;
    double loaded_fraction = 0.0;
    double recall = 0.0;
    double rel_error = 0.0;
    std::size_t n_seeds = 0;
};

/// Names the grid point that failed; wraps the underlying error message.
class SweepError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Scheme id as it appears in the CSV, e.g. "higgs4+higgs1" or "bf16/svd160".
std::string scheme_id(const SchemeEntry& e, std::size_t higgs_group, std::uint64_t quant_seed);

/// Rows ordered by scheme entry, then budget. Deterministic given cfg.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg);

extern const char* const kCsvHeader;

void emit_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
std::string format_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_csv(std::string_view text);

/// One whitespace-separated series file per (scheme, chunk) in `dir`:
/// loaded_fraction recall rel_error bits_per_key. Returns the files written.
std::vector<std::filesystem::path> emit_plot_data(const std::vector<SweepRow>& rows, const std::filesystem::path& dir);

}  // namespace kvlab
