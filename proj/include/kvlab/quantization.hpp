// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Software emulation of the key-compression formats compared in the lab:
// FP8 E4M3, NVFP4 (E2M1 values with E4M3 micro-scales per 16 values), HIGGS
// (randomized Hadamard transform + small-dimensional vector quantization) and
// truncated SVD with 16-bit factors. Every format goes through QuantizedBlock
// so that storage is self-describing and bit accounting is exact.

#include <boost/rational.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kvlab/tensor.hpp"

namespace kvlab {

using Rational = boost::rational<std::int64_t>;

enum class SchemeKind { None, Fp8E4M3, Nvfp4, Higgs, Svd };

std::string_view to_string(SchemeKind kind);

struct SchemeDescriptor {
    SchemeKind kind = SchemeKind::None;

    // HIGGS: sub-vector dimension, codeword count, transform group length,
    // Hadamard sign seed and codebook seed.
    int higgs_d = 0;
    int higgs_n = 0;
    std::size_t group_size = 0;
    std::uint64_t seed = 0;
    std::uint64_t codebook_seed = 0;

    // FP8: values sharing one fp32 scale. NVFP4: micro-block length (16).
    std::size_t block_size = 0;

    // SVD: rank and the [rows x cols] shape it was fitted to.
    std::size_t rank = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    static SchemeDescriptor none();
    static SchemeDescriptor fp8(std::size_t slice_len);
    static SchemeDescriptor nvfp4();
    static SchemeDescriptor higgs(int d, int n, std::size_t group_size, std::uint64_t seed = 0,
                                  std::uint64_t codebook_seed = 0);
    /// 4-bit -> d=2,n=256; 2-bit -> d=2,n=16; 1-bit -> d=2,n=4.
    static SchemeDescriptor higgs_bits(int bits, std::size_t group_size, std::uint64_t seed = 0,
                                       std::uint64_t codebook_seed = 0);
    static SchemeDescriptor svd(std::size_t rank, std::size_t rows, std::size_t cols);

    /// Exact amortized storage cost per value, scales included.
    Rational bits_per_value() const;
    /// Nominal code width per value (scales excluded): 16 for uncompressed,
    /// 8 for FP8, log2(n)/d for HIGGS, 4.5 for NVFP4.
    Rational code_bits() const;

    /// Short stable identifier, e.g. "bf16", "fp8", "nvfp4", "higgs4", "svd160".
    std::string id() const;

    friend bool operator==(const SchemeDescriptor&, const SchemeDescriptor&) = default;
};

/// Single-line "key=value" form carrying every descriptor field; used by
/// store manifests.
std::string serialize_scheme(const SchemeDescriptor& s);
SchemeDescriptor deserialize_scheme(std::string_view line);

/// Parses "none"/"bf16", "fp8", "nvfp4", "higgs<bits>" or "higgs:<d>:<n>",
/// "svd<rank>". Group size and seeds come from the caller.
SchemeDescriptor parse_scheme(std::string_view text, std::size_t group_size, std::uint64_t seed = 0);

struct QuantizedBlock {
    SchemeDescriptor scheme;
    std::vector<std::uint8_t> codes;  // packed LSB-first
    std::size_t code_count = 0;
    Tensor scales;                    // NONE keeps the raw payload here
    std::vector<std::size_t> original_dims;

    std::size_t value_count() const { return element_count(original_dims); }
    std::size_t code_width() const;
    /// Bits the block occupies on the slow tier: codes plus stored scales.
    std::size_t stored_bits() const;

    friend bool operator==(const QuantizedBlock&, const QuantizedBlock&) = default;
};

// --- scalar formats -------------------------------------------------------

inline constexpr float kE4M3Max = 448.0f;
inline constexpr float kE2M1Max = 6.0f;

/// Round-to-nearest-even, saturating at +-448. Input must be finite.
std::uint8_t e4m3_encode(float v);
float e4m3_decode(std::uint8_t code);
/// 4-bit code: bit 3 sign, bits 0-2 index into {0,.5,1,1.5,2,3,4,6}.
std::uint8_t e2m1_encode(float v);
float e2m1_decode(std::uint8_t code);

enum class ScaleAxis { PerRow, PerTensor };

QuantizedBlock fp8_e4m3_quantize(const Tensor& x, ScaleAxis axis = ScaleAxis::PerRow);
QuantizedBlock nvfp4_quantize(const Tensor& x);

// --- HIGGS ----------------------------------------------------------------

struct HiggsCodebook {
    int d = 0;
    int n = 0;
    Tensor codewords;  // [n x d], sorted lexicographically
    std::uint64_t seed = 0;

    /// Nearest codeword by Euclidean distance, lowest index on ties.
    std::uint32_t nearest(std::span<const float> v) const;

    friend bool operator==(const HiggsCodebook&, const HiggsCodebook&) = default;
};

inline constexpr std::size_t kHiggsTrainingSamples = std::size_t{1} << 18;
inline constexpr int kHiggsKMeansIterations = 40;

/// k-means on standard Gaussian d-dimensional samples. d in {1,2,4}, n a
/// power of two.
HiggsCodebook build_higgs_codebook(int d, int n, std::uint64_t seed);
/// Process-wide memoized build_higgs_codebook.
const HiggsCodebook& shared_higgs_codebook(int d, int n, std::uint64_t seed);

QuantizedBlock higgs_quantize(const Tensor& x, const HiggsCodebook& codebook, std::size_t group_size,
                              std::uint64_t hadamard_seed);

/// Codewords go to `<stem>.kvt`, "d n seed" to `<stem>.txt`.
void save_codebook(const HiggsCodebook& cb, const std::filesystem::path& stem);
HiggsCodebook load_codebook(const std::filesystem::path& stem);

// --- generic --------------------------------------------------------------

QuantizedBlock svd_quantize(const Tensor& x, std::size_t rank);

/// Dispatches on the descriptor. FP8 uses one scale per row of a matrix
/// (per tensor otherwise); SVD needs a matrix.
QuantizedBlock quantize(const Tensor& x, const SchemeDescriptor& scheme);
Tensor dequantize(const QuantizedBlock& b);

/// dequantize(quantize(x)) in one call.
Tensor fake_quantize(const Tensor& x, const SchemeDescriptor& scheme);

/// Fast-tier bits per key coordinate: landmark code bits amortized over
/// the chunk, plus per-key residual code bits when present.
Rational bits_per_key(const SchemeDescriptor& landmark, std::size_t chunk_size,
                      const std::optional<SchemeDescriptor>& residual);

double to_double(const Rational& r);

}  // namespace kvlab
