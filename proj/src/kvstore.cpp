// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/kvstore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "kvlab/kvt_io.hpp"

namespace kvlab {

void BudgetConfig::validate() const {
    if (!(sparse_fraction > 0.0 && sparse_fraction <= 1.0)) {
        throw std::invalid_argument("budget: sparse_fraction must be in (0, 1]");
    }
}

std::size_t BudgetConfig::sparse_tokens(std::size_t n) const {
    validate();
    // Guard against 0.0156 * n landing a hair above an integer.
    const double raw = sparse_fraction * static_cast<double>(n);
    const auto tokens = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    return std::clamp<std::size_t>(tokens, 1, std::max<std::size_t>(n, 1));
}

Tensor chunk_means(const Tensor& keys, std::size_t chunk_size) {
    if (chunk_size == 0) throw std::invalid_argument("chunk_means: chunk size must be >= 1");
    const std::size_t n = keys.rows(), d = keys.cols();
    const std::size_t chunks = (n + chunk_size - 1) / chunk_size;
    Tensor out({chunks, d});
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t begin = c * chunk_size, end = std::min(n, begin + chunk_size);
        auto o = out.row(c);
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t t = begin; t < end; ++t) acc += keys(t, j);
            o[j] = static_cast<float>(acc / static_cast<double>(end - begin));
        }
    }
    return out;
}

namespace {

double cosine(std::span<const float> a, std::span<const float> b) {
    const double na = std::sqrt(dot(a, a)), nb = std::sqrt(dot(b, b));
    if (na == 0.0 || nb == 0.0) return 1.0;
    return dot(a, b) / (na * nb);
}

// SVD compresses all heads jointly as one [n x (heads * D)] matrix.
std::vector<Tensor> svd_slow_tier(const std::vector<Tensor>& keys, const SchemeDescriptor& scheme) {
    const std::size_t n = keys.front().rows(), d = keys.front().cols(), h = keys.size();
    Tensor joint({n, h * d});
    for (std::size_t head = 0; head < h; ++head)
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t j = 0; j < d; ++j) joint(t, head * d + j) = keys[head](t, j);
    const Tensor approx = dequantize(svd_quantize(joint, scheme.rank));
    std::vector<Tensor> out;
    for (std::size_t head = 0; head < h; ++head) {
        Tensor k({n, d});
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t j = 0; j < d; ++j) k(t, j) = approx(t, head * d + j);
        out.push_back(std::move(k));
    }
    return out;
}

}  // namespace

ChunkedKVStore ChunkedKVStore::build(Tensor keys, Tensor values, const StoreConfig& cfg) {
    std::vector<Tensor> k, v;
    k.push_back(std::move(keys));
    v.push_back(std::move(values));
    return build(std::move(k), std::move(v), cfg);
}

ChunkedKVStore ChunkedKVStore::build(std::vector<Tensor> keys, std::vector<Tensor> values, const StoreConfig& cfg) {
    if (keys.empty() || keys.size() != values.size()) {
        throw std::invalid_argument("build_store: need matching non-empty key/value head lists");
    }
    if (cfg.chunk_size == 0) throw std::invalid_argument("build_store: chunk size must be >= 1");
    cfg.budget.validate();
    ChunkedKVStore s;
    s.cfg_ = cfg;
    s.n_ = keys.front().ndim() == 2 ? keys.front().rows() : 0;
    s.dim_ = keys.front().ndim() == 2 ? keys.front().cols() : 0;
    if (s.n_ == 0 || s.dim_ == 0) throw std::invalid_argument("build_store: empty key matrix");
    for (std::size_t h = 0; h < keys.size(); ++h) {
        if (keys[h].dims() != keys.front().dims() || values[h].dims() != keys.front().dims()) {
            throw std::invalid_argument("build_store: every head needs [n x D] keys and values");
        }
        keys[h].require_finite("build_store keys");
        values[h].require_finite("build_store values");
        Head head;
        head.keys = std::move(keys[h]);
        head.values = std::move(values[h]);
        s.heads_.push_back(std::move(head));
    }
    for (auto& h : s.heads_) s.rebuild_head(h, true);
    if (cfg.slow_tier_scheme.kind == SchemeKind::Svd) {
        std::vector<Tensor> ks;
        for (const auto& h : s.heads_) ks.push_back(h.keys);
        auto approx = svd_slow_tier(ks, cfg.slow_tier_scheme);
        for (std::size_t h = 0; h < s.heads_.size(); ++h) s.heads_[h].slow_keys = std::move(approx[h]);
    }
    return s;
}

void ChunkedKVStore::rebuild_head(Head& h, bool reselect_outliers) const {
    const Tensor means = chunk_means(h.keys, cfg_.chunk_size);
    h.landmark_block = quantize(means, cfg_.landmark_scheme);
    h.landmarks = dequantize(h.landmark_block);

    if (cfg_.residual_scheme) {
        Tensor raw = h.keys;
        for (std::size_t t = 0; t < n_; ++t) {
            auto r = raw.row(t);
            auto l = h.landmarks.row(t / cfg_.chunk_size);
            for (std::size_t j = 0; j < dim_; ++j) r[j] -= l[j];
        }
        h.residual_block = quantize(raw, *cfg_.residual_scheme);
        h.residuals = dequantize(*h.residual_block);
    } else {
        h.residual_block.reset();
        h.residuals = Tensor();
    }

    const auto& slow = cfg_.slow_tier_scheme;
    if (slow.kind != SchemeKind::Svd) {
        h.slow_keys = fake_quantize(h.keys, slow);
        h.slow_values = fake_quantize(h.values, slow);
    } else {
        h.slow_values = h.values;
    }

    if (!reselect_outliers) return;
    h.outliers.clear();
    const std::size_t chunks = num_chunks();
    if (cfg_.budget.outlier_tokens >= n_) {
        h.outliers.resize(chunks);
        std::iota(h.outliers.begin(), h.outliers.end(), 0);
        return;
    }
    const std::size_t cap = std::min(chunks, cfg_.budget.outlier_tokens / cfg_.chunk_size);
    if (cap == 0) return;
    // Sink chunk first, then the chunks whose landmark summarizes its keys
    // worst. Chunks already inside the local window are not candidates.
    std::vector<std::pair<double, std::size_t>> fit;
    for (std::size_t c = 1; c < chunks; ++c) {
        const auto [begin, end] = chunk_range(c);
        if (begin >= local_window_begin()) break;
        double acc = 0.0;
        for (std::size_t t = begin; t < end; ++t) acc += cosine(h.keys.row(t), h.landmarks.row(c));
        fit.emplace_back(acc / static_cast<double>(end - begin), c);
    }
    std::sort(fit.begin(), fit.end());
    h.outliers.push_back(0);
    for (std::size_t i = 0; i + 1 < cap && i < fit.size(); ++i) h.outliers.push_back(fit[i].second);
    std::sort(h.outliers.begin(), h.outliers.end());
}

const ChunkedKVStore::Head& ChunkedKVStore::head_at(std::size_t head) const {
    if (head >= heads_.size()) throw std::out_of_range("store: kv-head index out of range");
    return heads_[head];
}

std::pair<std::size_t, std::size_t> ChunkedKVStore::chunk_range(std::size_t chunk) const {
    if (chunk >= num_chunks()) throw std::out_of_range("store: chunk id " + std::to_string(chunk) + " out of range");
    const std::size_t begin = chunk * cfg_.chunk_size;
    return {begin, std::min(n_, begin + cfg_.chunk_size)};
}

std::size_t ChunkedKVStore::chunk_of(std::size_t token) const {
    if (token >= n_) throw std::out_of_range("store: token id out of range");
    return token / cfg_.chunk_size;
}

Tensor ChunkedKVStore::landmark_of(std::size_t head, std::size_t chunk) const {
    const auto& h = head_at(head);
    if (chunk >= num_chunks()) throw std::out_of_range("landmark_of: chunk id out of range");
    auto row = h.landmarks.row(chunk);
    return Tensor::vector(std::vector<float>(row.begin(), row.end()));
}

const QuantizedBlock& ChunkedKVStore::residual_block(std::size_t head) const {
    const auto& h = head_at(head);
    if (!h.residual_block) throw std::logic_error("store: built without residuals");
    return *h.residual_block;
}

const Tensor& ChunkedKVStore::residuals(std::size_t head) const {
    const auto& h = head_at(head);
    if (!h.residual_block) throw std::logic_error("store: built without residuals");
    return h.residuals;
}

Tensor ChunkedKVStore::approx_key(std::size_t head, std::size_t token) const {
    const Tensor& r = residuals(head);
    const auto& h = head_at(head);
    auto l = h.landmarks.row(chunk_of(token));
    auto rr = r.row(token);
    std::vector<float> out(dim_);
    for (std::size_t j = 0; j < dim_; ++j) out[j] = l[j] + rr[j];
    return Tensor::vector(std::move(out));
}

std::size_t ChunkedKVStore::local_window_begin() const {
    return n_ > cfg_.budget.local_window ? n_ - cfg_.budget.local_window : 0;
}

bool ChunkedKVStore::is_resident(std::size_t head, std::size_t token) const {
    const auto& h = head_at(head);
    if (token >= n_) throw std::out_of_range("store: token id out of range");
    if (token >= local_window_begin()) return true;
    return std::binary_search(h.outliers.begin(), h.outliers.end(), token / cfg_.chunk_size);
}

std::vector<std::size_t> ChunkedKVStore::resident_tokens(std::size_t head) const {
    const auto& h = head_at(head);
    std::vector<std::size_t> out;
    const std::size_t local = local_window_begin();
    for (std::size_t c : h.outliers) {
        const auto [begin, end] = chunk_range(c);
        for (std::size_t t = begin; t < std::min(end, local); ++t) out.push_back(t);
    }
    for (std::size_t t = local; t < n_; ++t) out.push_back(t);
    return out;
}

LoadedTokens ChunkedKVStore::gather(std::size_t head, std::span<const std::size_t> token_ids) const {
    const auto& h = head_at(head);
    LoadedTokens out;
    out.token_ids.assign(token_ids.begin(), token_ids.end());
    out.keys = Tensor({token_ids.size(), dim_});
    out.values = Tensor({token_ids.size(), dim_});
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
        const std::size_t t = token_ids[i];
        const bool resident = is_resident(head, t);
        const Tensor& ks = resident ? h.keys : h.slow_keys;
        const Tensor& vs = resident ? h.values : h.slow_values;
        std::copy_n(ks.row(t).begin(), dim_, out.keys.row(i).begin());
        std::copy_n(vs.row(t).begin(), dim_, out.values.row(i).begin());
        if (!resident) ++out.traffic.tokens_loaded_from_slow_tier;
    }
    out.traffic.fast_tier_resident_bits = fast_tier_resident_bits();
    return out;
}

LoadedTokens ChunkedKVStore::load_chunks(std::size_t head, std::span<const std::size_t> chunk_ids) const {
    std::vector<std::size_t> tokens;
    for (std::size_t c : chunk_ids) {
        const auto [begin, end] = chunk_range(c);
        for (std::size_t t = begin; t < end; ++t) tokens.push_back(t);
    }
    return gather(head, tokens);
}

std::uint64_t ChunkedKVStore::fast_tier_resident_bits() const {
    const Rational per_key = bits_per_key(cfg_.landmark_scheme, cfg_.chunk_size, cfg_.residual_scheme);
    std::uint64_t total = 0;
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        const Rational summary = per_key * Rational(static_cast<std::int64_t>(n_ * dim_));
        // Round partial bits up to whole storage.
        const auto summary_bits = static_cast<std::uint64_t>((summary.numerator() + summary.denominator() - 1) /
                                                             summary.denominator());
        total += summary_bits + static_cast<std::uint64_t>(resident_tokens(h).size()) * dim_ * 16 * 2;
    }
    return total;
}

void ChunkedKVStore::append(std::span<const Tensor> key_rows, std::span<const Tensor> value_rows) {
    if (key_rows.size() != heads_.size() || value_rows.size() != heads_.size()) {
        throw std::invalid_argument("append: need one key and one value row per kv-head");
    }
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        if (key_rows[h].size() != dim_ || value_rows[h].size() != dim_) {
            throw std::invalid_argument("append: row length differs from head dim");
        }
        key_rows[h].require_finite("append");
        value_rows[h].require_finite("append");
    }
    ++n_;
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        auto grow = [&](Tensor& t, const Tensor& row) {
            std::vector<float> data(t.values());
            data.insert(data.end(), row.data().begin(), row.data().end());
            t = Tensor::matrix(n_, dim_, std::move(data));
        };
        grow(heads_[h].keys, key_rows[h]);
        grow(heads_[h].values, value_rows[h]);
        rebuild_head(heads_[h], false);
    }
    if (cfg_.slow_tier_scheme.kind == SchemeKind::Svd) {
        std::vector<Tensor> ks;
        for (const auto& h : heads_) ks.push_back(h.keys);
        auto approx = svd_slow_tier(ks, cfg_.slow_tier_scheme);
        for (std::size_t h = 0; h < heads_.size(); ++h) heads_[h].slow_keys = std::move(approx[h]);
    }
}

void ChunkedKVStore::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        write_kvt(dir / ("keys_" + std::to_string(h) + ".kvt"), heads_[h].keys);
        write_kvt(dir / ("values_" + std::to_string(h) + ".kvt"), heads_[h].values);
    }
    std::ofstream m(dir / "manifest.txt", std::ios::trunc);
    if (!m) throw std::runtime_error("store: cannot write manifest in " + dir.string());
    m.precision(17);
    m << "kv_heads " << heads_.size() << '\n';
    m << "chunk_size " << cfg_.chunk_size << '\n';
    m << "landmark " << serialize_scheme(cfg_.landmark_scheme) << '\n';
    if (cfg_.residual_scheme) m << "residual " << serialize_scheme(*cfg_.residual_scheme) << '\n';
    m << "slow_tier " << serialize_scheme(cfg_.slow_tier_scheme) << '\n';
    m << "sparse_fraction " << cfg_.budget.sparse_fraction << '\n';
    m << "outlier_tokens " << cfg_.budget.outlier_tokens << '\n';
    m << "local_window " << cfg_.budget.local_window << '\n';
    // Outlier chunks are recomputed on load; recorded for inspection only.
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        m << "outliers_" << h;
        for (std::size_t c : heads_[h].outliers) m << ' ' << c;
        m << '\n';
    }
}

ChunkedKVStore ChunkedKVStore::load(const std::filesystem::path& dir) {
    std::ifstream m(dir / "manifest.txt");
    if (!m) throw std::runtime_error("store: missing manifest in " + dir.string());
    StoreConfig cfg;
    std::size_t heads = 0;
    std::string line;
    while (std::getline(m, line)) {
        const auto sp = line.find(' ');
        const std::string key = line.substr(0, sp);
        const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
        if (key == "kv_heads") heads = std::stoul(rest);
        else if (key == "chunk_size") cfg.chunk_size = std::stoul(rest);
        else if (key == "landmark") cfg.landmark_scheme = deserialize_scheme(rest);
        else if (key == "residual") cfg.residual_scheme = deserialize_scheme(rest);
        else if (key == "slow_tier") cfg.slow_tier_scheme = deserialize_scheme(rest);
        else if (key == "sparse_fraction") cfg.budget.sparse_fraction = std::stod(rest);
        else if (key == "outlier_tokens") cfg.budget.outlier_tokens = std::stoul(rest);
        else if (key == "local_window") cfg.budget.local_window = std::stoul(rest);
        else if (key.starts_with("outliers_") || key.empty()) continue;
        else throw std::runtime_error("store: unknown manifest key '" + key + "'");
    }
    if (heads == 0) throw std::runtime_error("store: manifest lists no kv-heads");
    std::vector<Tensor> keys, values;
    for (std::size_t h = 0; h < heads; ++h) {
        keys.push_back(read_kvt(dir / ("keys_" + std::to_string(h) + ".kvt")));
        values.push_back(read_kvt(dir / ("values_" + std::to_string(h) + ".kvt")));
    }
    return build(std::move(keys), std::move(values), cfg);
}

}  // namespace kvlab
