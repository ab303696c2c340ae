// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "stpyr/rng.hpp"
#include "stpyr/schedule.hpp"
#include "stpyr/volume.hpp"

namespace stpyr {

/// One b-bit code per (t, h, w) position. Bit i is the sign of channel i
/// (1 = non-negative); codes are packed little-endian, ceil(b/8) bytes each.
class BitTensor {
public:
    BitTensor() = default;
    BitTensor(int t, int h, int w, int bitwidth);

    /// Throws FormatError when the byte count does not match the dimensions.
    static BitTensor from_bytes(int t, int h, int w, int bitwidth, std::vector<std::uint8_t> bytes);

    int frames() const { return t_; }
    int height() const { return h_; }
    int width() const { return w_; }
    int bitwidth() const { return bitwidth_; }
    std::int64_t positions() const { return static_cast<std::int64_t>(t_) * h_ * w_; }
    std::size_t bytes_per_code() const { return static_cast<std::size_t>((bitwidth_ + 7) / 8); }
    std::int64_t total_bits() const { return positions() * bitwidth_; }

    bool bit(std::int64_t pos, int i) const {
        return (bytes_[byte_index(pos, i)] >> (i & 7)) & 1u;
    }
    void set_bit(std::int64_t pos, int i, bool v) {
        auto& byte = bytes_[byte_index(pos, i)];
        const auto m = static_cast<std::uint8_t>(1u << (i & 7));
        byte = v ? static_cast<std::uint8_t>(byte | m) : static_cast<std::uint8_t>(byte & ~m);
    }
    void flip_bit(std::int64_t pos, int i) { bytes_[byte_index(pos, i)] ^= static_cast<std::uint8_t>(1u << (i & 7)); }

    std::uint64_t code(std::int64_t pos) const;
    void set_code(std::int64_t pos, std::uint64_t code);

    std::span<const std::uint8_t> bytes() const { return bytes_; }
    bool matches(const ScaleTuple& s) const {
        return t_ == s.t && h_ == s.h && w_ == s.w && bitwidth_ == s.bitwidth;
    }
    bool operator==(const BitTensor&) const = default;

private:
    std::size_t byte_index(std::int64_t pos, int i) const {
        return static_cast<std::size_t>(pos) * bytes_per_code() + static_cast<std::size_t>(i >> 3);
    }

    int t_ = 0;
    int h_ = 0;
    int w_ = 0;
    int bitwidth_ = 0;
    std::vector<std::uint8_t> bytes_;
};

/// Learned linear map d -> b in front of the quantizer and b -> d behind it.
/// Empty matrices mean the identity (b == d, the parameter-free case).
struct ChannelAdapter {
    int latent_dim = 0;
    int bitwidth = 0;
    std::vector<double> down;  // bitwidth x latent_dim, row-major
    std::vector<double> up;    // latent_dim x bitwidth, row-major

    bool is_identity() const { return down.empty(); }

    static ChannelAdapter identity(int d);
    /// Keeps the first b channels; the deterministic starting point before training.
    static ChannelAdapter truncation(int d, int b);
    /// identity when b == d, truncation when b < d.
    static ChannelAdapter for_bitwidth(int d, int b);

    bool operator==(const ChannelAdapter&) const = default;
};

using ScaleAdapters = std::vector<ChannelAdapter>;

/// Per-pyramid-kind adapters for every scale of the image and clip schedules.
struct Tokenizer {
    int latent_dim = 0;
    ResizeMode resize_mode = ResizeMode::bilinear;
    ScaleAdapters image_adapters;
    ScaleAdapters clip_adapters;

    static Tokenizer create(int latent_dim, const ScheduleConfig& config, ResizeMode mode = ResizeMode::bilinear);
    const ScaleAdapters& adapters_for(PyramidKind kind) const {
        return kind == PyramidKind::image ? image_adapters : clip_adapters;
    }
    std::size_t parameter_count() const;
    bool operator==(const Tokenizer&) const = default;
};

struct QuantizedBlock {
    BitTensor codes;
    LatentVolume dequantized;
};

/// Sign quantization on the unit sphere; sign(0) = +1.
QuantizedBlock quantize_block(const LatentVolume& residual, int bitwidth, const ChannelAdapter* adapter = nullptr);

/// Channel i = +-1/sqrt(b), mapped back to the adapter's latent dimension.
LatentVolume dequantize_block(const BitTensor& codes, int latent_dim, const ChannelAdapter* adapter = nullptr);

struct SqdMask {
    std::vector<bool> retained;

    static SqdMask all(std::size_t n) { return SqdMask{std::vector<bool>(n, true)}; }
    std::size_t retained_count() const;
    bool operator==(const SqdMask&) const = default;
};

/// Each of the last n_droppable scales is dropped independently with probability p.
SqdMask sample_sqd(std::size_t n_scales, int n_droppable, double p, Rng& rng);

/// acc += up(dequantize(codes)) at acc's spatial size.
void accumulate_block(LatentVolume& acc, const BitTensor& codes, const ChannelAdapter& adapter, ResizeMode mode);

/// Residual codes for the retained scales of one pyramid, in schedule order.
std::vector<BitTensor> encode_pyramid(const LatentVolume& features, const ScaleSchedule& schedule, const SqdMask& sqd,
                                      const ScaleAdapters& adapters, ResizeMode mode = ResizeMode::bilinear);

/// Sum of upsampled dequantizations. codes[i] belongs to the i-th retained scale;
/// fewer codes than retained scales decodes a prefix.
LatentVolume decode_pyramid(std::span<const BitTensor> codes, const ScaleSchedule& schedule, const SqdMask& sqd,
                            const ScaleAdapters& adapters, int latent_dim, int height, int width,
                            ResizeMode mode = ResizeMode::bilinear);

struct QuantizerLoss {
    double commitment = 0.0;
    double entropy_penalty = 0.0;
};

/// Commitment: mean squared distance between each scale's pre-quantization residual
/// and its dequantization. Entropy penalty (per scale, averaged): sum over bits of
/// mean_n H(p_ni) - H(mean_n p_ni) with p = sigmoid(tau * u), u the unit-sphere
/// projection. The penalty is <= 0 and reaches its maximum 0 on codebook collapse.
QuantizerLoss quantizer_loss(const LatentVolume& features, std::span<const BitTensor> codes,
                             const ScaleSchedule& schedule, const SqdMask& sqd, const ScaleAdapters& adapters,
                             double tau, ResizeMode mode = ResizeMode::bilinear);

/// Unit-sphere projections (positions x bitwidth, row-major) of one residual block.
std::vector<double> sphere_projection(const LatentVolume& residual, int bitwidth, const ChannelAdapter* adapter);

/// Per-bit entropy penalty of soft bits sigmoid(tau * u) for n positions of b bits.
double soft_bit_entropy_penalty(std::span<const double> u, int bitwidth, double tau);

/// Codes of one pyramid as stored in a token file.
struct PyramidCodes {
    ScaleSchedule schedule;
    SqdMask sqd;
    std::vector<BitTensor> codes;  // retained scales only
    bool operator==(const PyramidCodes&) const = default;
};

void write_token_file(std::ostream& os, std::span<const PyramidCodes> pyramids);
std::vector<PyramidCodes> read_token_file(std::istream& is);

}  // namespace stpyr
