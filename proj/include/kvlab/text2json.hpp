// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace kvlab::text2json {

enum class Subset { Doctors, Movies, Organizations, Products };

Subset parse_subset(std::string_view name);
std::string_view to_string(Subset s);
/// The two non-name fields every record of the subset carries.
std::pair<std::string, std::string> required_fields(Subset s);

struct EntryRecord {
    std::string name;
    std::map<std::string, std::string> fields;

    friend bool operator==(const EntryRecord&, const EntryRecord&) = default;
};

struct Text2JsonInstance {
    Subset subset = Subset::Doctors;
    std::string prompt_text;
    std::vector<EntryRecord> gold;
    std::size_t n_passages = 0;
};

struct ScoreReport {
    double score = 0.0;
    std::size_t matched = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
    std::vector<std::pair<std::string, double>> per_entry;
    bool parse_error = false;
};

/// Reads a filler corpus: passages separated by blank lines. Throws
/// std::runtime_error when the file cannot be read or holds no passage.
std::vector<std::string> load_filler_corpus(const std::filesystem::path& path);

/// 3..20 entry cards and 3..10 filler passages in seeded order, joined by
/// blank lines. Uses the built-in passage pool when `filler` is empty.
Text2JsonInstance generate_instance(Subset subset, std::uint64_t seed,
                                    const std::vector<std::string>& filler = {});

/// Name-anchored soft-IoU score of a model's JSON output against gold.
ScoreReport score(std::string_view prediction_text, const std::vector<EntryRecord>& gold);

std::string extraction_prompt(Subset subset);
std::string extraction_prompt(std::string_view subset);

/// Unicode NFC followed by trimming surrounding whitespace.
std::string normalize(std::string_view text);

nlohmann::json to_json(const std::vector<EntryRecord>& records);
std::vector<EntryRecord> records_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScoreReport& report);

}  // namespace kvlab::text2json
