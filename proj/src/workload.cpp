// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "kvlab/kvt_io.hpp"

namespace kvlab {

namespace {

constexpr double kQueryJitter = 0.2;

std::vector<Tensor> split_heads(const Tensor& t, const char* what) {
    std::vector<Tensor> out;
    if (t.ndim() == 2) {
        out.push_back(t);
    } else if (t.ndim() == 3) {
        const std::size_t h = t.dims()[0], n = t.dims()[1], d = t.dims()[2];
        for (std::size_t i = 0; i < h; ++i) {
            auto src = t.data().subspan(i * n * d, n * d);
            out.push_back(Tensor::matrix(n, d, std::vector<float>(src.begin(), src.end())));
        }
    } else {
        throw std::invalid_argument(std::string("import_workload: ") + what + " must be 2-D or 3-D");
    }
    return out;
}

Tensor stack(const std::vector<Tensor>& parts) {
    const std::size_t r = parts.front().rows(), c = parts.front().cols();
    std::vector<float> data;
    data.reserve(parts.size() * r * c);
    for (const auto& p : parts) {
        if (p.rows() != r || p.cols() != c) throw std::invalid_argument("export_workload: ragged tensors");
        data.insert(data.end(), p.data().begin(), p.data().end());
    }
    return Tensor({parts.size(), r, c}, std::move(data));
}

}  // namespace

void WorkloadSpec::validate() const {
    if (n_tokens == 0 || kv_heads == 0 || query_heads_per_group == 0 || head_dim == 0 || decode_steps == 0) {
        throw std::invalid_argument("workload: sizes must be positive");
    }
    if (!(needle_alignment > 0.0 && needle_alignment <= 1.0)) {
        throw std::invalid_argument("workload: needle alignment must be in (0, 1]");
    }
    if (!(noise_scale > 0.0)) throw std::invalid_argument("workload: noise scale must be positive");
    if (n_needles > n_tokens) throw std::invalid_argument("workload: more needles than tokens");
    const std::size_t usable = n_tokens > local_window ? n_tokens - local_window : 0;
    if (n_needles * decode_steps > usable) {
        throw std::invalid_argument("workload: needles for all steps do not fit outside the local window");
    }
}

Tensor Workload::group_queries(std::size_t step, std::size_t kv_head) const {
    const std::size_t g = spec.query_heads_per_group;
    return queries.at(step).slice_rows(kv_head * g, g);
}

Workload generate(const WorkloadSpec& spec) {
    spec.validate();
    const std::size_t n = spec.n_tokens, d = spec.head_dim, g = spec.query_heads_per_group;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double alpha = spec.needle_alignment;
    const double ortho = std::sqrt(std::max(0.0, 1.0 - alpha * alpha));
    const double query_norm = std::sqrt(static_cast<double>(d)) * std::log(static_cast<double>(std::max<std::size_t>(n, 3)));

    Workload w;
    w.spec = spec;
    w.queries.assign(spec.decode_steps, Tensor({spec.kv_heads * g, d}));
    w.needles.assign(spec.decode_steps, std::vector<std::vector<std::size_t>>(spec.kv_heads));

    for (std::size_t h = 0; h < spec.kv_heads; ++h) {
        Tensor keys({n, d}), values({n, d});
        for (float& v : keys.data()) v = static_cast<float>(normal(rng) * spec.noise_scale * inv_sqrt_d);
        for (float& v : values.data()) v = static_cast<float>(normal(rng) * inv_sqrt_d);

        // Distinct needle positions for all steps, outside the local window.
        const std::size_t usable = n - std::min(n, spec.local_window);
        std::vector<std::size_t> pool(usable);
        std::iota(pool.begin(), pool.end(), 0);
        const std::size_t total = spec.n_needles * spec.decode_steps;
        for (std::size_t i = 0; i < total; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, usable - 1);
            std::swap(pool[i], pool[pick(rng)]);
        }

        for (std::size_t step = 0; step < spec.decode_steps; ++step) {
            std::vector<double> u(d);
            double norm = 0.0;
            for (double& v : u) {
                v = normal(rng);
                norm += v * v;
            }
            norm = std::sqrt(norm);
            for (double& v : u) v /= norm;

            auto& ids = w.needles[step][h];
            ids.assign(pool.begin() + static_cast<std::ptrdiff_t>(step * spec.n_needles),
                       pool.begin() + static_cast<std::ptrdiff_t>((step + 1) * spec.n_needles));
            std::sort(ids.begin(), ids.end());
            for (std::size_t t : ids) {
                auto row = keys.row(t);
                for (std::size_t j = 0; j < d; ++j) {
                    row[j] = static_cast<float>(alpha * u[j] + ortho * normal(rng) * inv_sqrt_d);
                }
            }

            for (std::size_t q = 0; q < g; ++q) {
                std::vector<double> dir(d);
                double qn = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    dir[j] = u[j] + kQueryJitter * normal(rng) * inv_sqrt_d;
                    qn += dir[j] * dir[j];
                }
                qn = std::sqrt(qn);
                auto row = w.queries[step].row(h * g + q);
                for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(dir[j] / qn * query_norm);
            }
        }
        w.keys.push_back(std::move(keys));
        w.values.push_back(std::move(values));
    }
    return w;
}

Tensor import_kvt(const std::filesystem::path& path) { return read_kvt(path); }

Workload import_workload(const std::filesystem::path& dir) {
    Workload w;
    w.keys = split_heads(read_kvt(dir / "keys.kvt"), "keys");
    w.values = split_heads(read_kvt(dir / "values.kvt"), "values");
    if (w.keys.size() != w.values.size()) throw std::invalid_argument("import_workload: head counts differ");
    const Tensor q = read_kvt(dir / "queries.kvt");
    const std::size_t d = w.keys.front().cols();
    if (q.ndim() == 2) {
        w.queries.push_back(q);
    } else if (q.ndim() == 3) {
        for (auto& t : split_heads(q, "queries")) w.queries.push_back(std::move(t));
    } else {
        throw std::invalid_argument("import_workload: queries must be 2-D or 3-D");
    }
    const std::size_t hq = w.queries.front().rows();
    if (w.queries.front().cols() != d || hq % w.keys.size() != 0) {
        throw std::invalid_argument("import_workload: query shape does not match keys");
    }
    w.spec.n_tokens = w.keys.front().rows();
    w.spec.kv_heads = w.keys.size();
    w.spec.query_heads_per_group = hq / w.keys.size();
    w.spec.head_dim = d;
    w.spec.decode_steps = w.queries.size();
    w.spec.n_needles = 0;
    w.needles.assign(w.queries.size(), std::vector<std::vector<std::size_t>>(w.keys.size()));
    return w;
}

void export_workload(const Workload& w, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("export_workload: cannot create " + dir.string());
    write_kvt(dir / "keys.kvt", stack(w.keys));
    write_kvt(dir / "values.kvt", stack(w.values));
    write_kvt(dir / "queries.kvt", stack(w.queries));
    std::ofstream out(dir / "needles.txt");
    for (std::size_t s = 0; s < w.needles.size(); ++s) {
        for (std::size_t h = 0; h < w.needles[s].size(); ++h) {
            out << s << ' ' << h;
            for (std::size_t t : w.needles[s][h]) out << ' ' << t;
            out << '\n';
        }
    }
    if (!out.flush()) throw std::runtime_error("export_workload: cannot write needles.txt");
}

}  // namespace kvlab
