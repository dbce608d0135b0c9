// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/quantization.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "kvlab/kvt_io.hpp"
#include "kvlab/numerics.hpp"

namespace kvlab {

namespace {

class BitWriter {
public:
    void put(std::uint32_t value, std::size_t width) {
        for (std::size_t i = 0; i < width; ++i) {
            if (bit_ % 8 == 0) bytes_.push_back(0);
            if ((value >> i) & 1u) bytes_.back() |= static_cast<std::uint8_t>(1u << (bit_ % 8));
            ++bit_;
        }
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t bit_ = 0;
};

class BitReader {
public:
    BitReader(const std::vector<std::uint8_t>& bytes, std::size_t count, std::size_t width)
        : bytes_(bytes), width_(width) {
        if (bytes.size() != (count * width + 7) / 8) {
            throw std::invalid_argument("dequantize: code stream holds " + std::to_string(bytes.size()) +
                                        " bytes, expected " + std::to_string((count * width + 7) / 8));
        }
    }
    std::uint32_t get() {
        std::uint32_t v = 0;
        for (std::size_t i = 0; i < width_; ++i, ++bit_) {
            if ((bytes_[bit_ / 8] >> (bit_ % 8)) & 1u) v |= 1u << i;
        }
        return v;
    }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t width_;
    std::size_t bit_ = 0;
};

int log2_exact(int n) {
    if (n <= 0 || !is_power_of_two(static_cast<std::size_t>(n))) {
        throw std::invalid_argument("expected a power of two, got " + std::to_string(n));
    }
    int b = 0;
    while ((1 << b) < n) ++b;
    return b;
}

float round_half(float v) { return static_cast<float>(Eigen::half(v)); }
std::uint16_t bf16_bits(float v) { return Eigen::numext::bit_cast<std::uint16_t>(Eigen::bfloat16(v)); }
float bf16_value(std::uint16_t bits) { return static_cast<float>(Eigen::numext::bit_cast<Eigen::bfloat16>(bits)); }

constexpr float kE2M1Grid[8] = {0.0f, 0.5f, 1.0f, 1.5f, 2.0f, 3.0f, 4.0f, 6.0f};

QuantizedBlock fp8_quantize_slices(const Tensor& x, std::size_t slice) {
    x.require_finite("fp8_e4m3_quantize");
    const std::size_t count = x.size();
    if (slice == 0 || count % slice != 0) throw std::invalid_argument("fp8_e4m3_quantize: bad scale slice length");
    QuantizedBlock b;
    b.scheme = SchemeDescriptor::fp8(slice);
    b.original_dims = x.dims();
    const std::size_t slices = count / slice;
    std::vector<float> scales(slices);
    b.codes.resize(count);
    b.code_count = count;
    auto xd = x.data();
    for (std::size_t s = 0; s < slices; ++s) {
        float max_abs = 0.0f;
        for (std::size_t i = 0; i < slice; ++i) max_abs = std::max(max_abs, std::fabs(xd[s * slice + i]));
        const float scale = max_abs > 0.0f ? max_abs / kE4M3Max : 1.0f;
        scales[s] = scale;
        for (std::size_t i = 0; i < slice; ++i) b.codes[s * slice + i] = e4m3_encode(xd[s * slice + i] / scale);
    }
    b.scales = Tensor::vector(std::move(scales));
    return b;
}

Tensor fp8_dequantize(const QuantizedBlock& b) {
    const std::size_t slice = b.scheme.block_size;
    if (b.codes.size() != b.value_count() || b.code_count != b.value_count()) {
        throw std::invalid_argument("dequantize: fp8 code stream length mismatch");
    }
    std::vector<float> out(b.value_count());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = e4m3_decode(b.codes[i]) * b.scales[i / slice];
    return Tensor(b.original_dims, std::move(out));
}

Tensor nvfp4_dequantize(const QuantizedBlock& b) {
    const std::size_t block = b.scheme.block_size;
    const std::size_t count = b.value_count();
    const std::size_t blocks = (count + block - 1) / block;
    if (b.code_count != blocks * block || b.scales.size() != blocks) {
        throw std::invalid_argument("dequantize: nvfp4 block layout mismatch");
    }
    BitReader reader(b.codes, b.code_count, 4);
    std::vector<float> out(count);
    for (std::size_t i = 0; i < b.code_count; ++i) {
        const float v = e2m1_decode(static_cast<std::uint8_t>(reader.get())) * b.scales[i / block];
        if (i < count) out[i] = v;
    }
    return Tensor(b.original_dims, std::move(out));
}

Tensor higgs_dequantize(const QuantizedBlock& b) {
    const auto& s = b.scheme;
    const HiggsCodebook& cb = shared_higgs_codebook(s.higgs_d, s.higgs_n, s.codebook_seed);
    const std::size_t g = s.group_size;
    const std::size_t count = b.value_count();
    const std::size_t groups = (count + g - 1) / g;
    const std::size_t per_group = g / static_cast<std::size_t>(cb.d);
    if (b.code_count != groups * per_group || b.scales.size() != groups) {
        throw std::invalid_argument("dequantize: higgs block layout mismatch");
    }
    BitReader reader(b.codes, b.code_count, static_cast<std::size_t>(log2_exact(cb.n)));
    const auto signs = hadamard_signs(g, s.seed);
    std::vector<float> out(count);
    std::vector<float> y(g);
    const std::size_t d = static_cast<std::size_t>(cb.d);
    for (std::size_t grp = 0; grp < groups; ++grp) {
        double energy = 0.0;
        for (std::size_t j = 0; j < per_group; ++j) {
            const auto cw = cb.codewords.row(reader.get());
            for (std::size_t t = 0; t < d; ++t) {
                y[j * d + t] = cw[t];
                energy += static_cast<double>(cw[t]) * cw[t];
            }
        }
        const float scale = b.scales[grp];
        const double rms = std::sqrt(energy / static_cast<double>(g));
        // Reconstructions carry exactly the recorded group RMS.
        const float gain = (scale == 0.0f || rms == 0.0) ? 0.0f : static_cast<float>(scale / rms);
        for (float& v : y) v *= gain;
        walsh_hadamard_inplace(y);
        for (std::size_t i = 0; i < g; ++i) {
            const std::size_t idx = grp * g + i;
            if (idx < count) out[idx] = y[i] * signs[i];
        }
    }
    return Tensor(b.original_dims, std::move(out));
}

Tensor svd_dequantize(const QuantizedBlock& b) {
    const auto& s = b.scheme;
    const std::size_t left_n = s.rows * s.rank, right_n = s.rank * s.cols;
    if (b.code_count != left_n + right_n) throw std::invalid_argument("dequantize: svd factor count mismatch");
    BitReader reader(b.codes, b.code_count, 16);
    Tensor left({s.rows, s.rank}), right({s.rank, s.cols});
    for (auto& v : left.data()) v = bf16_value(static_cast<std::uint16_t>(reader.get()));
    for (auto& v : right.data()) v = bf16_value(static_cast<std::uint16_t>(reader.get()));
    return matmul(left, right).reshaped(b.original_dims);
}

void sort_rows_lexicographic(std::vector<double>& c, std::size_t n, std::size_t d) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::lexicographical_compare(c.begin() + static_cast<std::ptrdiff_t>(a * d),
                                            c.begin() + static_cast<std::ptrdiff_t>((a + 1) * d),
                                            c.begin() + static_cast<std::ptrdiff_t>(b * d),
                                            c.begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
    });
    std::vector<double> sorted(n * d);
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(c.begin() + static_cast<std::ptrdiff_t>(order[i] * d), d,
                    sorted.begin() + static_cast<std::ptrdiff_t>(i * d));
    c = std::move(sorted);
}

// Nearest row of `c` (sorted by first coordinate) to v; lowest index on ties.
template <typename T, typename V>
std::uint32_t nearest_sorted(const T* c, std::size_t n, std::size_t d, const V* v) {
    auto dist = [&](std::size_t i) {
        double acc = 0.0;
        for (std::size_t t = 0; t < d; ++t) {
            const double diff = static_cast<double>(v[t]) - static_cast<double>(c[i * d + t]);
            acc += diff * diff;
        }
        return acc;
    };
    // First index whose leading coordinate is >= v[0].
    std::size_t lo = 0, hi = n;
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (static_cast<double>(c[mid * d]) < static_cast<double>(v[0])) lo = mid + 1;
        else hi = mid;
    }
    std::size_t best = n;
    double best_d = 0.0;
    auto consider = [&](std::size_t i) {
        const double di = dist(i);
        if (best == n || di < best_d || (di == best_d && i < best)) {
            best = i;
            best_d = di;
        }
    };
    for (std::size_t i = lo; i < n; ++i) {
        const double dx = static_cast<double>(c[i * d]) - static_cast<double>(v[0]);
        if (best != n && dx * dx > best_d) break;
        consider(i);
    }
    for (std::size_t i = lo; i-- > 0;) {
        const double dx = static_cast<double>(v[0]) - static_cast<double>(c[i * d]);
        if (best != n && dx * dx > best_d) break;
        consider(i);
    }
    return static_cast<std::uint32_t>(best);
}

}  // namespace

std::string_view to_string(SchemeKind kind) {
    switch (kind) {
        case SchemeKind::None: return "NONE";
        case SchemeKind::Fp8E4M3: return "FP8_E4M3";
        case SchemeKind::Nvfp4: return "NVFP4";
        case SchemeKind::Higgs: return "HIGGS";
        case SchemeKind::Svd: return "SVD";
    }
    return "?";
}

SchemeDescriptor SchemeDescriptor::none() { return {}; }

SchemeDescriptor SchemeDescriptor::fp8(std::size_t slice_len) {
    SchemeDescriptor s;
    s.kind = SchemeKind::Fp8E4M3;
    s.block_size = slice_len;
    return s;
}

SchemeDescriptor SchemeDescriptor::nvfp4() {
    SchemeDescriptor s;
    s.kind = SchemeKind::Nvfp4;
    s.block_size = 16;
    return s;
}

SchemeDescriptor SchemeDescriptor::higgs(int d, int n, std::size_t group_size, std::uint64_t seed,
                                         std::uint64_t codebook_seed) {
    if (d != 1 && d != 2 && d != 4) throw std::invalid_argument("higgs: d must be 1, 2 or 4");
    log2_exact(n);
    if (!is_power_of_two(group_size) || group_size < static_cast<std::size_t>(d)) {
        throw std::invalid_argument("higgs: group size must be a power of two >= d");
    }
    SchemeDescriptor s;
    s.kind = SchemeKind::Higgs;
    s.higgs_d = d;
    s.higgs_n = n;
    s.group_size = group_size;
    s.seed = seed;
    s.codebook_seed = codebook_seed;
    return s;
}

SchemeDescriptor SchemeDescriptor::higgs_bits(int bits, std::size_t group_size, std::uint64_t seed,
                                              std::uint64_t codebook_seed) {
    switch (bits) {
        case 4: return higgs(2, 256, group_size, seed, codebook_seed);
        case 2: return higgs(2, 16, group_size, seed, codebook_seed);
        case 1: return higgs(2, 4, group_size, seed, codebook_seed);
        default: throw std::invalid_argument("higgs: supported widths are 1, 2 and 4 bits");
    }
}

SchemeDescriptor SchemeDescriptor::svd(std::size_t rank, std::size_t rows, std::size_t cols) {
    if (rank == 0) throw std::invalid_argument("svd: rank must be positive");
    SchemeDescriptor s;
    s.kind = SchemeKind::Svd;
    s.rank = rank;
    s.rows = rows;
    s.cols = cols;
    return s;
}

Rational SchemeDescriptor::code_bits() const {
    switch (kind) {
        case SchemeKind::None: return Rational(16);
        case SchemeKind::Fp8E4M3: return Rational(8);
        case SchemeKind::Nvfp4: return Rational(9, 2);
        case SchemeKind::Higgs: return Rational(log2_exact(higgs_n), higgs_d);
        case SchemeKind::Svd: return bits_per_value();
    }
    return Rational(0);
}

Rational SchemeDescriptor::bits_per_value() const {
    switch (kind) {
        case SchemeKind::None: return Rational(16);
        case SchemeKind::Fp8E4M3:
            if (block_size == 0) throw std::invalid_argument("fp8: scale slice length not resolved");
            return Rational(8) + Rational(32, static_cast<std::int64_t>(block_size));
        case SchemeKind::Nvfp4: return Rational(4) + Rational(8, static_cast<std::int64_t>(block_size));
        case SchemeKind::Higgs:
            return Rational(log2_exact(higgs_n), higgs_d) + Rational(16, static_cast<std::int64_t>(group_size));
        case SchemeKind::Svd: {
            if (rows == 0 || cols == 0) throw std::invalid_argument("svd: factor shape not resolved");
            const auto r = static_cast<std::int64_t>(rank), n = static_cast<std::int64_t>(rows),
                       d = static_cast<std::int64_t>(cols);
            return Rational(16 * r * (n + d), n * d);
        }
    }
    return Rational(0);
}

std::string SchemeDescriptor::id() const {
    switch (kind) {
        case SchemeKind::None: return "bf16";
        case SchemeKind::Fp8E4M3: return "fp8";
        case SchemeKind::Nvfp4: return "nvfp4";
        case SchemeKind::Higgs:
            if (higgs_d == 2 && (higgs_n == 4 || higgs_n == 16 || higgs_n == 256)) {
                return "higgs" + std::to_string(log2_exact(higgs_n) / 2);
            }
            return "higgs_d" + std::to_string(higgs_d) + "n" + std::to_string(higgs_n);
        case SchemeKind::Svd: return "svd" + std::to_string(rank);
    }
    return "?";
}

SchemeDescriptor parse_scheme(std::string_view text, std::size_t group_size, std::uint64_t seed) {
    auto number = [&](std::string_view s) {
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) {
            throw std::invalid_argument("scheme: bad number in '" + std::string(text) + "'");
        }
        return v;
    };
    if (text == "none" || text == "bf16" || text == "16bit") return SchemeDescriptor::none();
    if (text == "fp8") return SchemeDescriptor::fp8(0);
    if (text == "nvfp4") return SchemeDescriptor::nvfp4();
    if (text.starts_with("higgs:")) {
        const auto rest = text.substr(6);
        const auto colon = rest.find(':');
        if (colon == std::string_view::npos) throw std::invalid_argument("scheme: expected higgs:<d>:<n>");
        return SchemeDescriptor::higgs(static_cast<int>(number(rest.substr(0, colon))),
                                       static_cast<int>(number(rest.substr(colon + 1))), group_size, seed);
    }
    if (text.starts_with("higgs")) {
        return SchemeDescriptor::higgs_bits(static_cast<int>(number(text.substr(5))), group_size, seed);
    }
    if (text.starts_with("svd")) return SchemeDescriptor::svd(number(text.substr(3)), 0, 0);
    throw std::invalid_argument("scheme: unknown '" + std::string(text) + "'");
}

std::string serialize_scheme(const SchemeDescriptor& s) {
    std::ostringstream out;
    out << "kind=" << to_string(s.kind) << " d=" << s.higgs_d << " n=" << s.higgs_n << " group=" << s.group_size
        << " seed=" << s.seed << " codebook_seed=" << s.codebook_seed << " block=" << s.block_size
        << " rank=" << s.rank << " rows=" << s.rows << " cols=" << s.cols;
    return out.str();
}

SchemeDescriptor deserialize_scheme(std::string_view line) {
    SchemeDescriptor s;
    std::istringstream in{std::string(line)};
    std::string tok;
    bool have_kind = false;
    while (in >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("scheme: malformed field '" + tok + "'");
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        auto num = [&] { return static_cast<std::uint64_t>(std::stoull(val)); };
        if (key == "kind") {
            have_kind = true;
            if (val == "NONE") s.kind = SchemeKind::None;
            else if (val == "FP8_E4M3") s.kind = SchemeKind::Fp8E4M3;
            else if (val == "NVFP4") s.kind = SchemeKind::Nvfp4;
            else if (val == "HIGGS") s.kind = SchemeKind::Higgs;
            else if (val == "SVD") s.kind = SchemeKind::Svd;
            else throw std::invalid_argument("scheme: unknown kind '" + val + "'");
        } else if (key == "d") s.higgs_d = static_cast<int>(num());
        else if (key == "n") s.higgs_n = static_cast<int>(num());
        else if (key == "group") s.group_size = num();
        else if (key == "seed") s.seed = num();
        else if (key == "codebook_seed") s.codebook_seed = num();
        else if (key == "block") s.block_size = num();
        else if (key == "rank") s.rank = num();
        else if (key == "rows") s.rows = num();
        else if (key == "cols") s.cols = num();
        else throw std::invalid_argument("scheme: unknown field '" + key + "'");
    }
    if (!have_kind) throw std::invalid_argument("scheme: missing kind");
    return s;
}

std::size_t QuantizedBlock::code_width() const {
    switch (scheme.kind) {
        case SchemeKind::None: return 0;
        case SchemeKind::Fp8E4M3: return 8;
        case SchemeKind::Nvfp4: return 4;
        case SchemeKind::Higgs: return static_cast<std::size_t>(log2_exact(scheme.higgs_n));
        case SchemeKind::Svd: return 16;
    }
    return 0;
}

std::size_t QuantizedBlock::stored_bits() const {
    std::size_t scale_width = 0;
    switch (scheme.kind) {
        case SchemeKind::None: scale_width = 16; break;
        case SchemeKind::Fp8E4M3: scale_width = 32; break;
        case SchemeKind::Nvfp4: scale_width = 8; break;
        case SchemeKind::Higgs: scale_width = 16; break;
        case SchemeKind::Svd: scale_width = 0; break;
    }
    return code_count * code_width() + scales.size() * scale_width;
}

std::uint8_t e4m3_encode(float v) {
    const std::uint8_t sign = std::signbit(v) ? 0x80 : 0x00;
    const float a = std::fabs(v);
    if (a >= kE4M3Max) return sign | 0x7E;
    constexpr float kMinNormal = 0.015625f;  // 2^-6
    if (a < kMinNormal) {
        // Subnormal step 2^-9; a result of 8 is the smallest normal.
        const auto m = static_cast<std::uint8_t>(std::nearbyint(std::ldexp(a, 9)));
        return sign | m;
    }
    int e2 = 0;
    std::frexp(a, &e2);
    int e = e2 - 1;  // a in [2^e, 2^(e+1))
    auto m = static_cast<int>(std::nearbyint((std::ldexp(a, -e) - 1.0f) * 8.0f));
    if (m == 8) {
        m = 0;
        ++e;
    }
    const int field = e + 7;
    if (field > 15 || (field == 15 && m > 6)) return sign | 0x7E;
    return static_cast<std::uint8_t>(sign | (field << 3) | m);
}

float e4m3_decode(std::uint8_t code) {
    const bool neg = code & 0x80;
    const int field = (code >> 3) & 0xF;
    const int m = code & 0x7;
    float mag;
    if (field == 15 && m == 7) {
        mag = std::numeric_limits<float>::quiet_NaN();
    } else if (field == 0) {
        mag = std::ldexp(static_cast<float>(m), -9);
    } else {
        mag = std::ldexp(1.0f + static_cast<float>(m) / 8.0f, field - 7);
    }
    return neg ? -mag : mag;
}

std::uint8_t e2m1_encode(float v) {
    const std::uint8_t sign = std::signbit(v) ? 0x8 : 0x0;
    const float a = std::fabs(v);
    std::uint8_t best = 0;
    float best_err = std::fabs(a - kE2M1Grid[0]);
    for (std::uint8_t i = 1; i < 8; ++i) {
        const float err = std::fabs(a - kE2M1Grid[i]);
        // Ties go to the even code (round-half-to-even on the grid).
        if (err < best_err || (err == best_err && (i % 2 == 0))) {
            best = i;
            best_err = err;
        }
    }
    return sign | best;
}

float e2m1_decode(std::uint8_t code) {
    const float mag = kE2M1Grid[code & 0x7];
    return (code & 0x8) ? -mag : mag;
}

QuantizedBlock fp8_e4m3_quantize(const Tensor& x, ScaleAxis axis) {
    std::size_t slice = x.size();
    if (axis == ScaleAxis::PerRow && x.ndim() >= 1) slice = x.dims().back();
    if (slice == 0) throw std::invalid_argument("fp8_e4m3_quantize: empty tensor");
    return fp8_quantize_slices(x, slice);
}

QuantizedBlock nvfp4_quantize(const Tensor& x) {
    x.require_finite("nvfp4_quantize");
    QuantizedBlock b;
    b.scheme = SchemeDescriptor::nvfp4();
    b.original_dims = x.dims();
    const std::size_t block = b.scheme.block_size;
    const std::size_t count = x.size();
    const std::size_t blocks = (count + block - 1) / block;
    auto xd = x.data();
    std::vector<float> scales(blocks);
    BitWriter writer;
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        const std::size_t begin = blk * block, end = std::min(count, begin + block);
        float max_abs = 0.0f;
        for (std::size_t i = begin; i < end; ++i) max_abs = std::max(max_abs, std::fabs(xd[i]));
        float scale = 1.0f;
        if (max_abs > 0.0f) {
            scale = e4m3_decode(e4m3_encode(max_abs / kE2M1Max));
            if (scale == 0.0f) scale = e4m3_decode(0x01);
        }
        scales[blk] = scale;
        for (std::size_t i = begin; i < begin + block; ++i) {
            const float v = i < end ? xd[i] / scale : 0.0f;
            writer.put(e2m1_encode(v), 4);
        }
    }
    b.codes = writer.take();
    b.code_count = blocks * block;
    b.scales = Tensor::vector(std::move(scales));
    return b;
}

std::uint32_t HiggsCodebook::nearest(std::span<const float> v) const {
    if (v.size() != static_cast<std::size_t>(d)) throw std::invalid_argument("higgs: sub-vector length mismatch");
    return nearest_sorted(codewords.data().data(), static_cast<std::size_t>(n), static_cast<std::size_t>(d),
                          v.data());
}

HiggsCodebook build_higgs_codebook(int d, int n, std::uint64_t seed) {
    if (d != 1 && d != 2 && d != 4) throw std::invalid_argument("higgs codebook: d must be 1, 2 or 4");
    log2_exact(n);
    const std::size_t samples = kHiggsTrainingSamples;
    const auto du = static_cast<std::size_t>(d), nu = static_cast<std::size_t>(n);
    if (nu > samples) throw std::invalid_argument("higgs codebook: too many codewords");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> x(samples * du);
    for (double& v : x) v = normal(rng);

    // Seeded initialisation: n distinct samples (partial Fisher-Yates).
    std::vector<std::size_t> idx(samples);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<double> c(nu * du);
    for (std::size_t i = 0; i < nu; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, samples - 1);
        std::swap(idx[i], idx[pick(rng)]);
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(idx[i] * du), du,
                    c.begin() + static_cast<std::ptrdiff_t>(i * du));
    }
    sort_rows_lexicographic(c, nu, du);

    std::vector<double> sum(nu * du);
    std::vector<std::size_t> count(nu);
    for (int iter = 0; iter < kHiggsKMeansIterations; ++iter) {
        std::fill(sum.begin(), sum.end(), 0.0);
        std::fill(count.begin(), count.end(), 0);
        for (std::size_t s = 0; s < samples; ++s) {
            const double* v = x.data() + s * du;
            const std::uint32_t k = nearest_sorted(c.data(), nu, du, v);
            ++count[k];
            for (std::size_t t = 0; t < du; ++t) sum[k * du + t] += v[t];
        }
        for (std::size_t k = 0; k < nu; ++k) {
            if (count[k] == 0) continue;
            for (std::size_t t = 0; t < du; ++t) c[k * du + t] = sum[k * du + t] / static_cast<double>(count[k]);
        }
        // Empty clusters: split the most populated one along its first axis.
        for (std::size_t k = 0; k < nu; ++k) {
            if (count[k] != 0) continue;
            const auto big = static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
            for (std::size_t t = 0; t < du; ++t) c[k * du + t] = c[big * du + t];
            c[k * du] += 1e-3;
            c[big * du] -= 1e-3;
            count[k] = count[big] / 2;
            count[big] -= count[k];
        }
        sort_rows_lexicographic(c, nu, du);
    }

    HiggsCodebook cb;
    cb.d = d;
    cb.n = n;
    cb.seed = seed;
    std::vector<float> cw(c.begin(), c.end());
    cb.codewords = Tensor::matrix(nu, du, std::move(cw));
    for (std::size_t k = 1; k < nu; ++k) {
        auto a = cb.codewords.row(k - 1), b = cb.codewords.row(k);
        if (std::equal(a.begin(), a.end(), b.begin())) {
            throw std::runtime_error("higgs codebook: duplicate codewords after k-means");
        }
    }
    return cb;
}

const HiggsCodebook& shared_higgs_codebook(int d, int n, std::uint64_t seed) {
    static std::mutex mu;
    static std::map<std::tuple<int, int, std::uint64_t>, HiggsCodebook> cache;
    std::lock_guard lock(mu);
    const auto key = std::make_tuple(d, n, seed);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, build_higgs_codebook(d, n, seed)).first;
    return it->second;
}

QuantizedBlock higgs_quantize(const Tensor& x, const HiggsCodebook& codebook, std::size_t group_size,
                              std::uint64_t hadamard_seed) {
    x.require_finite("higgs_quantize");
    QuantizedBlock b;
    b.scheme = SchemeDescriptor::higgs(codebook.d, codebook.n, group_size, hadamard_seed, codebook.seed);
    b.original_dims = x.dims();
    const std::size_t g = group_size;
    const std::size_t count = x.size();
    const std::size_t groups = (count + g - 1) / g;
    const auto d = static_cast<std::size_t>(codebook.d);
    const std::size_t width = static_cast<std::size_t>(log2_exact(codebook.n));
    const auto signs = hadamard_signs(g, hadamard_seed);
    auto xd = x.data();
    std::vector<float> y(g);
    std::vector<float> scales(groups);
    const std::vector<float> zero(d, 0.0f);
    const std::uint32_t zero_code = codebook.nearest(zero);
    BitWriter writer;
    for (std::size_t grp = 0; grp < groups; ++grp) {
        for (std::size_t i = 0; i < g; ++i) {
            const std::size_t idx = grp * g + i;
            y[i] = idx < count ? xd[idx] * signs[i] : 0.0f;
        }
        walsh_hadamard_inplace(y);
        double energy = 0.0;
        for (float v : y) energy += static_cast<double>(v) * v;
        const float scale = round_half(static_cast<float>(std::sqrt(energy / static_cast<double>(g))));
        scales[grp] = scale;
        if (scale == 0.0f) {
            // Zero (or fp16-underflowing) group: zero scale, zero-vector codes.
            for (std::size_t j = 0; j < g / d; ++j) writer.put(zero_code, width);
            continue;
        }
        const float inv = 1.0f / scale;
        float sub[4];
        for (std::size_t j = 0; j < g / d; ++j) {
            for (std::size_t t = 0; t < d; ++t) sub[t] = y[j * d + t] * inv;
            writer.put(codebook.nearest(std::span<const float>(sub, d)), width);
        }
    }
    b.codes = writer.take();
    b.code_count = groups * (g / d);
    b.scales = Tensor::vector(std::move(scales));
    return b;
}

void save_codebook(const HiggsCodebook& cb, const std::filesystem::path& stem) {
    auto kvt = stem;
    kvt += ".kvt";
    auto txt = stem;
    txt += ".txt";
    write_kvt(kvt, cb.codewords);
    std::ofstream f(txt, std::ios::trunc);
    if (!f) throw std::runtime_error("codebook: cannot write " + txt.string());
    f << cb.d << ' ' << cb.n << ' ' << cb.seed << '\n';
}

HiggsCodebook load_codebook(const std::filesystem::path& stem) {
    auto kvt = stem;
    kvt += ".kvt";
    auto txt = stem;
    txt += ".txt";
    std::ifstream f(txt);
    HiggsCodebook cb;
    if (!(f >> cb.d >> cb.n >> cb.seed)) throw std::runtime_error("codebook: bad header in " + txt.string());
    cb.codewords = read_kvt(kvt);
    if (cb.codewords.ndim() != 2 || cb.codewords.rows() != static_cast<std::size_t>(cb.n) ||
        cb.codewords.cols() != static_cast<std::size_t>(cb.d)) {
        throw std::runtime_error("codebook: codeword tensor does not match header");
    }
    return cb;
}

QuantizedBlock svd_quantize(const Tensor& x, std::size_t rank) {
    const SvdFactors f = truncated_svd(x, rank);
    QuantizedBlock b;
    b.scheme = SchemeDescriptor::svd(rank, x.rows(), x.cols());
    b.original_dims = x.dims();
    BitWriter writer;
    for (float v : f.left.data()) writer.put(bf16_bits(v), 16);
    for (float v : f.right.data()) writer.put(bf16_bits(v), 16);
    b.codes = writer.take();
    b.code_count = f.left.size() + f.right.size();
    b.scales = Tensor::vector({});
    return b;
}

QuantizedBlock quantize(const Tensor& x, const SchemeDescriptor& scheme) {
    switch (scheme.kind) {
        case SchemeKind::None: {
            x.require_finite("quantize");
            QuantizedBlock b;
            b.scheme = scheme;
            b.original_dims = x.dims();
            b.scales = x;
            return b;
        }
        case SchemeKind::Fp8E4M3:
            if (scheme.block_size == 0) return fp8_e4m3_quantize(x, ScaleAxis::PerRow);
            return fp8_quantize_slices(x, scheme.block_size);
        case SchemeKind::Nvfp4: return nvfp4_quantize(x);
        case SchemeKind::Higgs:
            return higgs_quantize(x, shared_higgs_codebook(scheme.higgs_d, scheme.higgs_n, scheme.codebook_seed),
                                  scheme.group_size, scheme.seed);
        case SchemeKind::Svd: return svd_quantize(x, scheme.rank);
    }
    throw std::invalid_argument("quantize: unknown scheme");
}

Tensor dequantize(const QuantizedBlock& b) {
    switch (b.scheme.kind) {
        case SchemeKind::None:
            if (b.scales.size() != b.value_count()) throw std::invalid_argument("dequantize: payload size mismatch");
            return b.scales.reshaped(b.original_dims);
        case SchemeKind::Fp8E4M3: return fp8_dequantize(b);
        case SchemeKind::Nvfp4: return nvfp4_dequantize(b);
        case SchemeKind::Higgs: return higgs_dequantize(b);
        case SchemeKind::Svd: return svd_dequantize(b);
    }
    throw std::invalid_argument("dequantize: unknown scheme");
}

Tensor fake_quantize(const Tensor& x, const SchemeDescriptor& scheme) {
    if (scheme.kind == SchemeKind::None) return x;
    return dequantize(quantize(x, scheme));
}

Rational bits_per_key(const SchemeDescriptor& landmark, std::size_t chunk_size,
                      const std::optional<SchemeDescriptor>& residual) {
    if (chunk_size == 0) throw std::invalid_argument("bits_per_key: chunk size must be >= 1");
    Rational bits = landmark.code_bits() / Rational(static_cast<std::int64_t>(chunk_size));
    if (residual) bits += residual->code_bits();
    return bits;
}

double to_double(const Rational& r) {
    return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator());
}

}  // namespace kvlab
