// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "kvlab/attention.hpp"

namespace kvlab {

namespace {

namespace pt = boost::property_tree;

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> parts;
    boost::split(parts, text, boost::is_any_of(", "), boost::token_compress_on);
    parts.erase(std::remove_if(parts.begin(), parts.end(), [](const std::string& s) { return s.empty(); }),
                parts.end());
    return parts;
}

// "0,3,7" or "0..199" (inclusive), mixed freely.
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    for (const auto& p : split_list(text)) {
        const auto dots = p.find("..");
        if (dots == std::string::npos) {
            out.push_back(std::stoull(p));
        } else {
            const std::uint64_t lo = std::stoull(p.substr(0, dots)), hi = std::stoull(p.substr(dots + 2));
            if (hi < lo) throw std::invalid_argument("config: empty seed range " + p);
            for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
        }
    }
    return out;
}

HeadAggregation parse_aggregation(const std::string& s) {
    if (s == "sum") return HeadAggregation::Sum;
    if (s == "max") return HeadAggregation::Max;
    throw std::invalid_argument("config: unknown aggregation '" + s + "'");
}

struct ResolvedScheme {
    SchemeDescriptor landmark;
    std::optional<SchemeDescriptor> residual;
    SchemeDescriptor slow;
};

ResolvedScheme resolve(const SchemeEntry& e, std::size_t group, std::uint64_t seed) {
    ResolvedScheme r;
    r.landmark = parse_scheme(e.landmark, group, seed);
    if (e.residual) r.residual = parse_scheme(*e.residual, group, seed);
    r.slow = parse_scheme(e.slow_tier, group, seed);
    return r;
}

struct Accumulator {
    double recall = 0.0;
    double rel_error = 0.0;
    double loaded = 0.0;
    std::size_t samples = 0;
};

// Oracle policy: exact top-k among offloaded tokens plus everything resident.
SelectionResult oracle_policy(const ChunkedKVStore& store, std::size_t head, const Tensor& q, std::size_t k,
                              HeadAggregation agg) {
    std::vector<float> scores = group_scores(q, store.keys(head), agg);
    for (std::size_t t : store.resident_tokens(head)) scores[t] = -std::numeric_limits<float>::infinity();
    SelectionResult r;
    const std::size_t offloaded = store.n_tokens() - store.resident_tokens(head).size();
    r.token_ids = top_k_indices(scores, std::min(k, offloaded));
    const auto res = store.resident_tokens(head);
    r.token_ids.insert(r.token_ids.end(), res.begin(), res.end());
    std::sort(r.token_ids.begin(), r.token_ids.end());
    r.token_ids.erase(std::unique(r.token_ids.begin(), r.token_ids.end()), r.token_ids.end());
    r.n_tokens = store.n_tokens();
    r.loaded_fraction = static_cast<double>(r.token_ids.size()) / static_cast<double>(r.n_tokens);
    r.scores = std::move(scores);
    return r;
}

SelectionResult apply_policy(const ExperimentConfig& cfg, const ChunkedKVStore& store, std::size_t head,
                             const Tensor& q, const BudgetConfig& budget) {
    const std::size_t k = budget.sparse_tokens(store.n_tokens());
    switch (cfg.policy) {
        case SelectionPolicy::Landmark: return select_by_landmarks(store, head, q, budget, cfg.aggregation);
        case SelectionPolicy::Oracle: return oracle_policy(store, head, q, k, cfg.aggregation);
        case SelectionPolicy::ResidualTopk:
            if (!store.has_residuals()) return select_by_landmarks(store, head, q, budget, cfg.aggregation);
            return approx_topk_residual(store, head, q, k,
                                        cfg.candidate_multiplier == 0 ? store.num_chunks() : cfg.candidate_multiplier,
                                        cfg.aggregation);
    }
    throw std::logic_error("unknown policy");
}

std::string fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

SelectionPolicy parse_policy(std::string_view name) {
    if (name == "landmark") return SelectionPolicy::Landmark;
    if (name == "oracle") return SelectionPolicy::Oracle;
    if (name == "residual-topk") return SelectionPolicy::ResidualTopk;
    throw std::invalid_argument("unknown selection policy '" + std::string(name) + "'");
}

std::string_view to_string(SelectionPolicy p) {
    switch (p) {
        case SelectionPolicy::Landmark: return "landmark";
        case SelectionPolicy::Oracle: return "oracle";
        case SelectionPolicy::ResidualTopk: return "residual-topk";
    }
    return "?";
}

void ExperimentConfig::validate() const {
    if (!import_dir) workload.validate();
    if (schemes.empty()) throw std::invalid_argument("config: no schemes");
    if (budgets.empty()) throw std::invalid_argument("config: no budgets");
    if (seeds.empty()) throw std::invalid_argument("config: no seeds");
    for (const auto& b : budgets) b.validate();
    for (std::size_t i = 1; i < budgets.size(); ++i) {
        if (!(budgets[i - 1].sparse_fraction < budgets[i].sparse_fraction)) {
            throw std::invalid_argument("config: budgets must be sorted by ascending sparse fraction");
        }
    }
    for (const auto& e : schemes) {
        if (e.chunk_size == 0) throw std::invalid_argument("config: chunk size must be positive");
        const ResolvedScheme r = resolve(e, higgs_group, quant_seed);
        (void)bits_per_key(r.landmark, e.chunk_size, r.residual);
    }
}

ExperimentConfig parse_config(std::string_view ini_text) {
    pt::ptree tree;
    std::istringstream in{std::string(ini_text)};
    pt::read_ini(in, tree);

    ExperimentConfig cfg;
    if (auto w = tree.get_child_optional("workload")) {
        WorkloadSpec& s = cfg.workload;
        s.n_tokens = w->get("n_tokens", s.n_tokens);
        s.kv_heads = w->get("kv_heads", s.kv_heads);
        s.query_heads_per_group = w->get("query_heads_per_group", s.query_heads_per_group);
        s.head_dim = w->get("head_dim", s.head_dim);
        s.n_needles = w->get("n_needles", s.n_needles);
        s.needle_alignment = w->get("needle_alignment", s.needle_alignment);
        s.noise_scale = w->get("noise_scale", s.noise_scale);
        s.decode_steps = w->get("decode_steps", s.decode_steps);
        s.local_window = w->get("local_window", s.local_window);
        if (auto p = w->get_optional<std::string>("import")) cfg.import_dir = *p;
    }

    BudgetConfig base;
    std::vector<double> fractions{base.sparse_fraction};
    if (auto s = tree.get_child_optional("sweep")) {
        cfg.policy = parse_policy(s->get<std::string>("policy", "landmark"));
        cfg.aggregation = parse_aggregation(s->get<std::string>("aggregation", "sum"));
        if (auto v = s->get_optional<std::string>("seeds")) cfg.seeds = parse_seeds(*v);
        if (auto v = s->get_optional<std::string>("sparse_fractions")) {
            fractions.clear();
            for (const auto& p : split_list(*v)) fractions.push_back(std::stod(p));
        }
        base.outlier_tokens = s->get("outlier_tokens", base.outlier_tokens);
        base.local_window = s->get("local_window", base.local_window);
        cfg.higgs_group = s->get("higgs_group", cfg.higgs_group);
        cfg.quant_seed = s->get("quant_seed", cfg.quant_seed);
        cfg.candidate_multiplier = s->get("candidate_multiplier", cfg.candidate_multiplier);
        cfg.recall_k = s->get("recall_k", cfg.recall_k);
        cfg.output = s->get<std::string>("output", cfg.output.string());
    }
    for (double f : fractions) {
        BudgetConfig b = base;
        b.sparse_fraction = f;
        cfg.budgets.push_back(b);
    }
    for (const auto& [section, body] : tree) {
        if (!section.starts_with("scheme")) continue;
        SchemeEntry e;
        e.landmark = body.get<std::string>("landmark", e.landmark);
        e.chunk_size = body.get("chunk", e.chunk_size);
        if (auto r = body.get_optional<std::string>("residual"); r && !r->empty() && *r != "none") e.residual = *r;
        e.slow_tier = body.get<std::string>("slow_tier", e.slow_tier);
        cfg.schemes.push_back(std::move(e));
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    ExperimentConfig cfg = parse_config(ss.str());
    if (cfg.import_dir && cfg.import_dir->is_relative()) cfg.import_dir = path.parent_path() / *cfg.import_dir;
    return cfg;
}

std::string scheme_id(const SchemeEntry& e, std::size_t higgs_group, std::uint64_t quant_seed) {
    const ResolvedScheme r = resolve(e, higgs_group, quant_seed);
    std::string id = r.landmark.id();
    if (r.residual) id += "+" + r.residual->id();
    if (r.slow.kind != SchemeKind::None) id += "/" + r.slow.id();
    return id;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::size_t n_schemes = cfg.schemes.size(), n_budgets = cfg.budgets.size();
    std::vector<Accumulator> acc(n_schemes * n_budgets);
    std::vector<ResolvedScheme> resolved;
    for (const auto& e : cfg.schemes) resolved.push_back(resolve(e, cfg.higgs_group, cfg.quant_seed));

    std::optional<Workload> imported;
    if (cfg.import_dir) imported = import_workload(*cfg.import_dir);
    const std::vector<std::uint64_t> seeds = imported ? std::vector<std::uint64_t>{0} : cfg.seeds;

    for (std::uint64_t seed : seeds) {
        Workload w;
        if (imported) {
            w = *imported;
        } else {
            WorkloadSpec spec = cfg.workload;
            spec.seed = seed;
            w = generate(spec);
        }
        const std::size_t steps = w.queries.size(), heads = w.keys.size(), n = w.keys.front().rows();

        // Full attention and reference top-k per (step, head), shared by all schemes.
        std::vector<AttentionOutput> full(steps * heads);
        std::map<std::size_t, std::vector<SelectionResult>> refs;
        auto reference = [&](std::size_t k, std::size_t idx) -> const SelectionResult& {
            auto [it, fresh] = refs.try_emplace(k);
            if (fresh) {
                for (std::size_t s = 0; s < steps; ++s)
                    for (std::size_t h = 0; h < heads; ++h)
                        it->second.push_back(oracle_select(w.keys[h], w.group_queries(s, h), k, cfg.aggregation));
            }
            return it->second[idx];
        };
        for (std::size_t s = 0; s < steps; ++s)
            for (std::size_t h = 0; h < heads; ++h)
                full[s * heads + h] = full_attention(w.group_queries(s, h), w.keys[h], w.values[h]);

        for (std::size_t si = 0; si < n_schemes; ++si) {
            const SchemeEntry& e = cfg.schemes[si];
            // Stores depend on the resident part of the budget only.
            std::map<std::pair<std::size_t, std::size_t>, ChunkedKVStore> stores;
            for (std::size_t bi = 0; bi < n_budgets; ++bi) {
                const BudgetConfig& b = cfg.budgets[bi];
                try {
                    const auto key = std::make_pair(b.outlier_tokens, b.local_window);
                    auto it = stores.find(key);
                    if (it == stores.end()) {
                        StoreConfig sc;
                        sc.chunk_size = e.chunk_size;
                        sc.landmark_scheme = resolved[si].landmark;
                        sc.residual_scheme = resolved[si].residual;
                        sc.slow_tier_scheme = resolved[si].slow;
                        sc.budget = b;
                        it = stores.emplace(key, ChunkedKVStore::build(w.keys, w.values, sc)).first;
                    }
                    const ChunkedKVStore& store = it->second;
                    std::size_t k_ref = cfg.recall_k;
                    if (k_ref == 0) k_ref = w.spec.n_needles > 0 ? w.spec.n_needles : b.sparse_tokens(n);
                    k_ref = std::min(k_ref, n);
                    Accumulator& a = acc[si * n_budgets + bi];
                    double recall_sum = 0.0, err_sum = 0.0, frac_sum = 0.0;
                    for (std::size_t s = 0; s < steps; ++s) {
                        for (std::size_t h = 0; h < heads; ++h) {
                            const Tensor q = w.group_queries(s, h);
                            const SelectionResult sel = apply_policy(cfg, store, h, q, b);
                            recall_sum += recall(sel, reference(k_ref, s * heads + h));
                            const AttentionOutput out = sparse_attention(q, store, h, sel, &full[s * heads + h]);
                            err_sum += *out.rel_error_vs_full;
                            frac_sum += sel.loaded_fraction;
                        }
                    }
                    const double m = static_cast<double>(steps * heads);
                    a.recall += recall_sum / m;
                    a.rel_error += err_sum / m;
                    a.loaded += frac_sum / m;
                    ++a.samples;
                } catch (const std::exception& ex) {
                    throw SweepError("grid point scheme=" + scheme_id(e, cfg.higgs_group, cfg.quant_seed) +
                                     " chunk=" + std::to_string(e.chunk_size) +
                                     " sparse_fraction=" + fixed(b.sparse_fraction) + " seed=" + std::to_string(seed) +
                                     ": " + ex.what());
                }
            }
        }
    }

    std::vector<SweepRow> rows;
    for (std::size_t si = 0; si < n_schemes; ++si) {
        const SchemeEntry& e = cfg.schemes[si];
        const double bits = to_double(bits_per_key(resolved[si].landmark, e.chunk_size, resolved[si].residual));
        for (std::size_t bi = 0; bi < n_budgets; ++bi) {
            const Accumulator& a = acc[si * n_budgets + bi];
            const double cnt = static_cast<double>(a.samples);
            rows.push_back(SweepRow{scheme_id(e, cfg.higgs_group, cfg.quant_seed), e.chunk_size, bits, a.loaded / cnt,
                                    a.recall / cnt, a.rel_error / cnt, a.samples});
        }
    }
    return rows;
}

const char* const kCsvHeader = "scheme,chunk,bits_per_key,loaded_fraction,recall,rel_error,n_seeds";

std::string format_csv(const std::vector<SweepRow>& rows) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : rows) {
        out += r.scheme + "," + std::to_string(r.chunk_size) + "," + fixed(r.bits_per_key) + "," +
               fixed(r.loaded_fraction) + "," + fixed(r.recall) + "," + fixed(r.rel_error) + "," +
               std::to_string(r.n_seeds) + "\n";
    }
    return out;
}

void emit_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
    if (rows.empty()) throw std::invalid_argument("emit_csv: no rows");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("emit_csv: cannot write " + path.string());
    out << format_csv(rows);
    if (!out.flush()) throw std::runtime_error("emit_csv: write failed for " + path.string());
}

std::vector<SweepRow> parse_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw std::invalid_argument("parse_csv: bad header");
    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        boost::split(f, line, boost::is_any_of(","));
        if (f.size() != 7) throw std::invalid_argument("parse_csv: expected 7 fields in '" + line + "'");
        rows.push_back(SweepRow{f[0], std::stoul(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]),
                                std::stod(f[5]), std::stoul(f[6])});
    }
    return rows;
}

std::vector<std::filesystem::path> emit_plot_data(const std::vector<SweepRow>& rows, const std::filesystem::path& dir) {
    if (rows.empty()) throw std::invalid_argument("emit_plot_data: no rows");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("emit_plot_data: cannot create " + dir.string());
    std::map<std::string, std::vector<const SweepRow*>> series;
    std::vector<std::string> order;
    for (const auto& r : rows) {
        std::string name;
        for (char c : r.scheme) name += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
        name += "_c" + std::to_string(r.chunk_size) + ".dat";
        if (!series.count(name)) order.push_back(name);
        series[name].push_back(&r);
    }
    std::vector<std::filesystem::path> written;
    for (const auto& name : order) {
        const auto path = dir / name;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("emit_plot_data: cannot write " + path.string());
        out << "# loaded_fraction recall rel_error bits_per_key\n";
        for (const SweepRow* r : series[name]) {
            out << fixed(r->loaded_fraction) << ' ' << fixed(r->recall) << ' ' << fixed(r->rel_error) << ' '
                << fixed(r->bits_per_key) << '\n';
        }
        if (!out.flush()) throw std::runtime_error("emit_plot_data: write failed for " + path.string());
        written.push_back(path);
    }
    return written;
}

}  // namespace kvlab
