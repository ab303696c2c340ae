// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/bsq.hpp"

#include <cmath>
#include <string>

#include "stpyr/binary_io.hpp"
#include "stpyr/errors.hpp"

namespace stpyr {

BitTensor::BitTensor(int t, int h, int w, int bitwidth) : t_(t), h_(h), w_(w), bitwidth_(bitwidth) {
    if (t < 1 || h < 1 || w < 1 || bitwidth < 1 || bitwidth > 64) {
        throw ShapeError("BitTensor: invalid dimensions");
    }
    bytes_.assign(static_cast<std::size_t>(positions()) * bytes_per_code(), 0);
}

BitTensor BitTensor::from_bytes(int t, int h, int w, int bitwidth, std::vector<std::uint8_t> bytes) {
    BitTensor out(t, h, w, bitwidth);
    if (bytes.size() != out.bytes_.size()) {
        throw FormatError("BitTensor: packed length " + std::to_string(bytes.size()) + " does not match expected " +
                          std::to_string(out.bytes_.size()));
    }
    out.bytes_ = std::move(bytes);
    return out;
}

std::uint64_t BitTensor::code(std::int64_t pos) const {
    std::uint64_t c = 0;
    const std::size_t base = static_cast<std::size_t>(pos) * bytes_per_code();
    for (std::size_t j = 0; j < bytes_per_code(); ++j) {
        c |= static_cast<std::uint64_t>(bytes_[base + j]) << (8 * j);
    }
    return c;
}

void BitTensor::set_code(std::int64_t pos, std::uint64_t code) {
    const std::size_t base = static_cast<std::size_t>(pos) * bytes_per_code();
    for (std::size_t j = 0; j < bytes_per_code(); ++j) {
        bytes_[base + j] = static_cast<std::uint8_t>((code >> (8 * j)) & 0xFF);
    }
    // clear padding bits above bitwidth
    if (bitwidth_ % 8 != 0) {
        bytes_[base + bytes_per_code() - 1] &= static_cast<std::uint8_t>((1u << (bitwidth_ % 8)) - 1);
    }
}

ChannelAdapter ChannelAdapter::identity(int d) { return ChannelAdapter{d, d, {}, {}}; }

ChannelAdapter ChannelAdapter::truncation(int d, int b) {
    if (b > d || b < 1) {
        throw ConfigError("adapter bitwidth " + std::to_string(b) + " must lie in [1, latent_dim=" +
                          std::to_string(d) + "]");
    }
    ChannelAdapter a{d, b, std::vector<double>(static_cast<std::size_t>(b) * d, 0.0),
                     std::vector<double>(static_cast<std::size_t>(d) * b, 0.0)};
    for (int i = 0; i < b; ++i) {
        a.down[static_cast<std::size_t>(i) * d + i] = 1.0;
        a.up[static_cast<std::size_t>(i) * b + i] = 1.0;
    }
    return a;
}

ChannelAdapter ChannelAdapter::for_bitwidth(int d, int b) { return b == d ? identity(d) : truncation(d, b); }

Tokenizer Tokenizer::create(int latent_dim, const ScheduleConfig& config, ResizeMode mode) {
    Tokenizer tok;
    tok.latent_dim = latent_dim;
    tok.resize_mode = mode;
    for (const auto& s : image_schedule(config)) {
        tok.image_adapters.push_back(ChannelAdapter::for_bitwidth(latent_dim, s.bitwidth));
    }
    for (const auto& s : clip_schedule(config, config.t_latent)) {
        tok.clip_adapters.push_back(ChannelAdapter::for_bitwidth(latent_dim, s.bitwidth));
    }
    return tok;
}

std::size_t Tokenizer::parameter_count() const {
    std::size_t n = 0;
    for (const auto* bank : {&image_adapters, &clip_adapters}) {
        for (const auto& a : *bank) {
            n += a.down.size() + a.up.size();
        }
    }
    return n;
}

namespace {

void check_adapter(const ChannelAdapter* adapter, int channels, int bitwidth) {
    if (adapter == nullptr || adapter->is_identity()) {
        if (bitwidth != channels) {
            throw ShapeError("bitwidth " + std::to_string(bitwidth) + " differs from channel count " +
                             std::to_string(channels) + " and no adapter was supplied");
        }
        return;
    }
    if (adapter->latent_dim != channels || adapter->bitwidth != bitwidth) {
        throw ShapeError("channel adapter dimensions do not match the block");
    }
}

// z = A x for one position (or x itself for the identity adapter).
void project_down(const LatentVolume& v, std::int64_t pos, const ChannelAdapter* adapter, int bitwidth,
                  std::vector<double>& z) {
    const int d = v.channels();
    const auto data = v.data();
    const std::size_t stride = v.channel_stride();
    z.assign(static_cast<std::size_t>(bitwidth), 0.0);
    if (adapter == nullptr || adapter->is_identity()) {
        for (int c = 0; c < d; ++c) {
            z[static_cast<std::size_t>(c)] = data[static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(pos)];
        }
        return;
    }
    for (int c = 0; c < d; ++c) {
        const double x = data[static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(pos)];
        if (x == 0.0) {
            continue;
        }
        for (int i = 0; i < bitwidth; ++i) {
            z[static_cast<std::size_t>(i)] += adapter->down[static_cast<std::size_t>(i) * d + c] * x;
        }
    }
}

}  // namespace

QuantizedBlock quantize_block(const LatentVolume& residual, int bitwidth, const ChannelAdapter* adapter) {
    check_adapter(adapter, residual.channels(), bitwidth);
    QuantizedBlock out{BitTensor(residual.frames(), residual.height(), residual.width(), bitwidth), {}};
    std::vector<double> z;
    for (std::int64_t p = 0; p < residual.positions(); ++p) {
        project_down(residual, p, adapter, bitwidth, z);
        for (int i = 0; i < bitwidth; ++i) {
            out.codes.set_bit(p, i, z[static_cast<std::size_t>(i)] >= 0.0);
        }
    }
    out.dequantized = dequantize_block(out.codes, residual.channels(), adapter);
    return out;
}

LatentVolume dequantize_block(const BitTensor& codes, int latent_dim, const ChannelAdapter* adapter) {
    const int b = codes.bitwidth();
    check_adapter(adapter, latent_dim, b);
    LatentVolume out(latent_dim, codes.frames(), codes.height(), codes.width());
    const double mag = 1.0 / std::sqrt(static_cast<double>(b));
    const std::size_t stride = out.channel_stride();
    auto data = out.data();
    std::vector<double> q(static_cast<std::size_t>(b));
    for (std::int64_t p = 0; p < codes.positions(); ++p) {
        for (int i = 0; i < b; ++i) {
            q[static_cast<std::size_t>(i)] = codes.bit(p, i) ? mag : -mag;
        }
        if (adapter == nullptr || adapter->is_identity()) {
            for (int c = 0; c < latent_dim; ++c) {
                data[static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(p)] = q[static_cast<std::size_t>(c)];
            }
            continue;
        }
        for (int c = 0; c < latent_dim; ++c) {
            double y = 0.0;
            const double* row = &adapter->up[static_cast<std::size_t>(c) * b];
            for (int i = 0; i < b; ++i) {
                y += row[i] * q[static_cast<std::size_t>(i)];
            }
            data[static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(p)] = y;
        }
    }
    return out;
}

std::size_t SqdMask::retained_count() const {
    std::size_t n = 0;
    for (bool r : retained) {
        n += r ? 1 : 0;
    }
    return n;
}

SqdMask sample_sqd(std::size_t n_scales, int n_droppable, double p, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ConfigError("sample_sqd: drop probability must lie in [0, 1]");
    }
    if (n_droppable < 0 || static_cast<std::size_t>(n_droppable) >= n_scales) {
        throw ConfigError("sample_sqd: n_droppable must be smaller than the scale count");
    }
    SqdMask mask = SqdMask::all(n_scales);
    for (std::size_t k = n_scales - static_cast<std::size_t>(n_droppable); k < n_scales; ++k) {
        mask.retained[k] = !(rng.uniform() < p);
    }
    return mask;
}

void accumulate_block(LatentVolume& acc, const BitTensor& codes, const ChannelAdapter& adapter, ResizeMode mode) {
    const auto deq = dequantize_block(codes, acc.channels(), &adapter);
    acc += resize_spatial(deq, acc.height(), acc.width(), mode);
}

namespace {

void check_pyramid_inputs(const LatentVolume& features, const ScaleSchedule& schedule, const SqdMask& sqd,
                          const ScaleAdapters& adapters) {
    if (schedule.empty()) {
        throw ShapeError("empty scale schedule");
    }
    const auto& top = schedule.back();
    if (features.frames() != top.t || features.height() != top.h || features.width() != top.w) {
        throw ShapeError("feature dims (" + std::to_string(features.frames()) + "," +
                         std::to_string(features.height()) + "," + std::to_string(features.width()) +
                         ") do not match the largest scale");
    }
    if (sqd.retained.size() != schedule.size()) {
        throw ShapeError("SQD mask length does not match the schedule");
    }
    if (adapters.size() != schedule.size()) {
        throw ShapeError("adapter count does not match the schedule");
    }
}

}  // namespace

std::vector<BitTensor> encode_pyramid(const LatentVolume& features, const ScaleSchedule& schedule, const SqdMask& sqd,
                                      const ScaleAdapters& adapters, ResizeMode mode) {
    check_pyramid_inputs(features, schedule, sqd, adapters);
    std::vector<BitTensor> codes;
    LatentVolume acc(features.channels(), features.frames(), features.height(), features.width());
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        if (!sqd.retained[k]) {
            continue;
        }
        const auto& s = schedule[k];
        const auto residual = resize_spatial(features - acc, s.h, s.w, mode);
        auto q = quantize_block(residual, s.bitwidth, &adapters[k]);
        accumulate_block(acc, q.codes, adapters[k], mode);
        codes.push_back(std::move(q.codes));
    }
    return codes;
}

LatentVolume decode_pyramid(std::span<const BitTensor> codes, const ScaleSchedule& schedule, const SqdMask& sqd,
                            const ScaleAdapters& adapters, int latent_dim, int height, int width, ResizeMode mode) {
    if (sqd.retained.size() != schedule.size() || adapters.size() != schedule.size()) {
        throw ShapeError("decode_pyramid: schedule, SQD mask and adapters disagree in length");
    }
    if (codes.size() > sqd.retained_count()) {
        throw ShapeError("decode_pyramid: more code blocks than retained scales");
    }
    const int t = schedule.empty() ? 1 : schedule.back().t;
    LatentVolume acc(latent_dim, t, height, width);
    std::size_t next = 0;
    for (std::size_t k = 0; k < schedule.size() && next < codes.size(); ++k) {
        if (!sqd.retained[k]) {
            continue;
        }
        if (!codes[next].matches(schedule[k])) {
            throw ShapeError("decode_pyramid: code block " + std::to_string(next) + " does not match scale " +
                             std::to_string(k));
        }
        accumulate_block(acc, codes[next], adapters[k], mode);
        ++next;
    }
    return acc;
}

std::vector<double> sphere_projection(const LatentVolume& residual, int bitwidth, const ChannelAdapter* adapter) {
    check_adapter(adapter, residual.channels(), bitwidth);
    std::vector<double> u(static_cast<std::size_t>(residual.positions()) * bitwidth);
    std::vector<double> z;
    for (std::int64_t p = 0; p < residual.positions(); ++p) {
        project_down(residual, p, adapter, bitwidth, z);
        double n2 = 0.0;
        for (double x : z) {
            n2 += x * x;
        }
        const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
        for (int i = 0; i < bitwidth; ++i) {
            u[static_cast<std::size_t>(p) * bitwidth + i] = z[static_cast<std::size_t>(i)] * inv;
        }
    }
    return u;
}

namespace {

double binary_entropy(double p) {
    double h = 0.0;
    if (p > 0.0) {
        h -= p * std::log(p);
    }
    if (p < 1.0) {
        h -= (1.0 - p) * std::log1p(-p);
    }
    return h;
}

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

double soft_bit_entropy_penalty(std::span<const double> u, int bitwidth, double tau) {
    const std::size_t b = static_cast<std::size_t>(bitwidth);
    const std::size_t n = u.size() / b;
    if (n == 0) {
        return 0.0;
    }
    std::vector<double> mean_p(b, 0.0);
    double mean_h = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t i = 0; i < b; ++i) {
            const double q = sigmoid(tau * u[p * b + i]);
            mean_p[i] += q;
            mean_h += binary_entropy(q);
        }
    }
    mean_h /= static_cast<double>(n);
    double h_mean = 0.0;
    for (double m : mean_p) {
        h_mean += binary_entropy(m / static_cast<double>(n));
    }
    return mean_h - h_mean;
}

QuantizerLoss quantizer_loss(const LatentVolume& features, std::span<const BitTensor> codes,
                             const ScaleSchedule& schedule, const SqdMask& sqd, const ScaleAdapters& adapters,
                             double tau, ResizeMode mode) {
    check_pyramid_inputs(features, schedule, sqd, adapters);
    if (codes.size() != sqd.retained_count()) {
        throw ShapeError("quantizer_loss: one code block per retained scale required");
    }
    QuantizerLoss loss;
    LatentVolume acc(features.channels(), features.frames(), features.height(), features.width());
    double commit_sum = 0.0;
    std::size_t commit_count = 0;
    std::size_t scales = 0;
    std::size_t next = 0;
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        if (!sqd.retained[k]) {
            continue;
        }
        const auto& s = schedule[k];
        const auto& c = codes[next++];
        if (!c.matches(s)) {
            throw ShapeError("quantizer_loss: code block does not match its scale");
        }
        const auto residual = resize_spatial(features - acc, s.h, s.w, mode);
        const auto deq = dequantize_block(c, features.channels(), &adapters[k]);
        const auto r = residual.data();
        const auto q = deq.data();
        for (std::size_t i = 0; i < r.size(); ++i) {
            commit_sum += (r[i] - q[i]) * (r[i] - q[i]);
        }
        commit_count += r.size();
        const auto u = sphere_projection(residual, s.bitwidth, &adapters[k]);
        loss.entropy_penalty += soft_bit_entropy_penalty(u, s.bitwidth, tau);
        ++scales;
        acc += resize_spatial(deq, acc.height(), acc.width(), mode);
    }
    if (commit_count > 0) {
        loss.commitment = commit_sum / static_cast<double>(commit_count);
    }
    if (scales > 0) {
        loss.entropy_penalty /= static_cast<double>(scales);
    }
    return loss;
}

void write_token_file(std::ostream& os, std::span<const PyramidCodes> pyramids) {
    io::put_magic(os, "ISTK");
    io::put_u32(os, 1);
    io::put_u32(os, static_cast<std::uint32_t>(pyramids.size()));
    for (const auto& p : pyramids) {
        if (p.sqd.retained.size() != p.schedule.size() || p.codes.size() != p.sqd.retained_count()) {
            throw ShapeError("write_token_file: codes do not match schedule/retained flags");
        }
        io::put_u32(os, static_cast<std::uint32_t>(p.schedule.size()));
        for (std::size_t k = 0; k < p.schedule.size(); ++k) {
            const auto& s = p.schedule[k];
            io::put_u16(os, static_cast<std::uint16_t>(s.t));
            io::put_u16(os, static_cast<std::uint16_t>(s.h));
            io::put_u16(os, static_cast<std::uint16_t>(s.w));
            io::put_u16(os, static_cast<std::uint16_t>(s.bitwidth));
            io::put_u8(os, p.sqd.retained[k] ? 1 : 0);
        }
        for (const auto& c : p.codes) {
            const auto bytes = c.bytes();
            os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        }
    }
}

std::vector<PyramidCodes> read_token_file(std::istream& is) {
    io::expect_magic(is, "ISTK");
    io::expect_version(is, 1, "ISTK");
    const auto n_pyr = io::get_u32(is);
    if (n_pyr > 1u << 16) {
        throw FormatError("ISTK: implausible pyramid count");
    }
    std::vector<PyramidCodes> out(n_pyr);
    for (auto& p : out) {
        const auto n_scales = io::get_u32(is);
        if (n_scales > 1u << 12) {
            throw FormatError("ISTK: implausible scale count");
        }
        for (std::uint32_t k = 0; k < n_scales; ++k) {
            ScaleTuple s;
            s.t = io::get_u16(is);
            s.h = io::get_u16(is);
            s.w = io::get_u16(is);
            s.bitwidth = io::get_u16(is);
            p.sqd.retained.push_back(io::get_u8(is) != 0);
            p.schedule.push_back(s);
        }
        for (std::uint32_t k = 0; k < n_scales; ++k) {
            if (!p.sqd.retained[k]) {
                continue;
            }
            const auto& s = p.schedule[k];
            if (s.t < 1 || s.h < 1 || s.w < 1 || s.bitwidth < 1 || s.bitwidth > 64) {
                throw FormatError("ISTK: invalid scale tuple");
            }
            std::vector<std::uint8_t> bytes(static_cast<std::size_t>(s.tokens()) *
                                            static_cast<std::size_t>((s.bitwidth + 7) / 8));
            is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
            if (!is) {
                throw FormatError("ISTK: truncated code block");
            }
            p.codes.push_back(BitTensor::from_bytes(s.t, s.h, s.w, s.bitwidth, std::move(bytes)));
        }
    }
    return out;
}

}  // namespace stpyr
