// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "kvlab/harness.hpp"
#include "kvlab/kvt_io.hpp"
#include "kvlab/text2json.hpp"
#include "kvlab/workload.hpp"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text) || !out.flush()) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kvlab: KV-cache offloading lab"};
    app.require_subcommand(1);

    // gen-workload
    kvlab::WorkloadSpec spec;
    std::string wl_out = "workload";
    auto* gen = app.add_subcommand("gen-workload", "Generate a planted-needle workload as KVT tensors");
    gen->add_option("--seed", spec.seed, "RNG seed");
    gen->add_option("--n-tokens", spec.n_tokens);
    gen->add_option("--kv-heads", spec.kv_heads);
    gen->add_option("--query-heads-per-group", spec.query_heads_per_group);
    gen->add_option("--head-dim", spec.head_dim);
    gen->add_option("--needles", spec.n_needles, "Needles per step and kv-head");
    gen->add_option("--alignment", spec.needle_alignment, "Needle/query cosine in (0, 1]");
    gen->add_option("--noise-scale", spec.noise_scale);
    gen->add_option("--steps", spec.decode_steps);
    gen->add_option("--local-window", spec.local_window);
    gen->add_option("-o,--out", wl_out, "Output directory");

    // run-sweep
    std::string config_path, csv_override, plot_dir;
    std::optional<std::uint64_t> sweep_seed;
    std::optional<std::string> policy_override;
    auto* sweep = app.add_subcommand("run-sweep", "Run a scheme x budget x seed sweep and write CSV");
    sweep->add_option("-c,--config", config_path, "INI experiment config")->required()->check(CLI::ExistingFile);
    sweep->add_option("--seed", sweep_seed, "Run a single seed instead of the configured list");
    sweep->add_option("--policy", policy_override, "landmark | oracle | residual-topk");
    sweep->add_option("-o,--output", csv_override, "CSV path (overrides the config)");
    sweep->add_option("--plot-dir", plot_dir, "Also write per-scheme series files here");

    // gen-text2json
    std::string subset_name = "doctors", t2j_out = "text2json", filler_path;
    std::uint64_t t2j_seed = 0;
    auto* t2j = app.add_subcommand("gen-text2json", "Generate a structured-extraction instance");
    t2j->add_option("--subset", subset_name, "doctors | movies | organizations | products");
    t2j->add_option("--seed", t2j_seed);
    t2j->add_option("--filler", filler_path, "Text file of blank-line separated passages");
    t2j->add_option("-o,--out", t2j_out, "Output directory");

    // score-text2json
    std::string gold_path, pred_path, report_path;
    std::uint64_t score_seed = 0;
    auto* sc = app.add_subcommand("score-text2json", "Score a JSON prediction against gold records");
    sc->add_option("--gold", gold_path)->required()->check(CLI::ExistingFile);
    sc->add_option("--prediction", pred_path)->required()->check(CLI::ExistingFile);
    sc->add_option("--seed", score_seed, "Accepted for uniformity; scoring is deterministic");
    sc->add_option("-o,--out", report_path, "Write the report here instead of stdout");

    // import-kvt
    std::string kvt_path;
    std::uint64_t import_seed = 0;
    auto* imp = app.add_subcommand("import-kvt", "Validate a KVT tensor file and print a summary");
    imp->add_option("input", kvt_path)->required();
    imp->add_option("--seed", import_seed, "Accepted for uniformity; import is deterministic");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const kvlab::Workload w = kvlab::generate(spec);
            kvlab::export_workload(w, wl_out);
            std::cout << "wrote " << wl_out << " (" << w.keys.size() << " heads x " << spec.n_tokens << " tokens)\n";
        } else if (*sweep) {
            kvlab::ExperimentConfig cfg = kvlab::load_config(config_path);
            if (sweep_seed) cfg.seeds = {*sweep_seed};
            if (policy_override) cfg.policy = kvlab::parse_policy(*policy_override);
            if (!csv_override.empty()) cfg.output = csv_override;
            const auto rows = kvlab::run_sweep(cfg);
            kvlab::emit_csv(rows, cfg.output);
            if (!plot_dir.empty()) kvlab::emit_plot_data(rows, plot_dir);
            std::cout << "wrote " << rows.size() << " rows to " << cfg.output.string() << "\n";
        } else if (*t2j) {
            const auto subset = kvlab::text2json::parse_subset(subset_name);
            std::vector<std::string> filler;
            if (!filler_path.empty()) filler = kvlab::text2json::load_filler_corpus(filler_path);
            const auto inst = kvlab::text2json::generate_instance(subset, t2j_seed, filler);
            std::filesystem::create_directories(t2j_out);
            const std::filesystem::path dir = t2j_out;
            write_file(dir / "prompt.txt", inst.prompt_text);
            write_file(dir / "gold.json", kvlab::text2json::to_json(inst.gold).dump(2) + "\n");
            write_file(dir / "instruction.txt", kvlab::text2json::extraction_prompt(subset) + "\n");
            std::cout << "wrote " << inst.gold.size() << " entries and " << inst.n_passages << " passages to "
                      << t2j_out << "\n";
        } else if (*sc) {
            const auto gold = kvlab::text2json::records_from_json(nlohmann::json::parse(read_file(gold_path)));
            const auto report = kvlab::text2json::score(read_file(pred_path), gold);
            const std::string text = kvlab::text2json::to_json(report).dump(2) + "\n";
            if (report_path.empty()) {
                std::cout << text;
            } else {
                write_file(report_path, text);
            }
        } else if (*imp) {
            const kvlab::Tensor t = kvlab::import_kvt(kvt_path);
            t.require_finite("import-kvt");
            nlohmann::json j;
            j["path"] = kvt_path;
            j["dims"] = t.dims();
            j["elements"] = t.size();
            j["frobenius_norm"] = kvlab::frobenius_norm(t);
            std::cout << j.dump(2) << "\n";
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
