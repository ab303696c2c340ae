// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stpyr/binary_io.hpp"
#include "stpyr/errors.hpp"

namespace stpyr {

LatentVolume::LatentVolume(int channels, int t, int h, int w, double fill)
    : channels_(channels), t_(t), h_(h), w_(w) {
    if (channels < 1 || t < 1 || h < 1 || w < 1) {
        throw ShapeError("volume dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(channels) * t * h * w, fill);
}

LatentVolume& LatentVolume::operator+=(const LatentVolume& o) {
    if (!same_shape(o)) {
        throw ShapeError("volume shape mismatch in +=");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += o.data_[i];
    }
    return *this;
}

LatentVolume& LatentVolume::operator-=(const LatentVolume& o) {
    if (!same_shape(o)) {
        throw ShapeError("volume shape mismatch in -=");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] -= o.data_[i];
    }
    return *this;
}

LatentVolume& LatentVolume::operator*=(double s) {
    for (auto& x : data_) {
        x *= s;
    }
    return *this;
}

LatentVolume LatentVolume::slice_frames(int begin, int count) const {
    if (begin < 0 || count < 1 || begin + count > t_) {
        throw ShapeError("frame slice out of range");
    }
    LatentVolume out(channels_, count, h_, w_);
    const std::size_t plane = static_cast<std::size_t>(h_) * w_;
    for (int c = 0; c < channels_; ++c) {
        std::copy_n(&data_[index(c, begin, 0, 0)], plane * count, &out.data_[out.index(c, 0, 0, 0)]);
    }
    return out;
}

LatentVolume LatentVolume::repeat_frames(int t) const {
    if (t % t_ != 0) {
        throw ShapeError("repeat_frames target must be a multiple of the frame count");
    }
    const int factor = t / t_;
    LatentVolume out(channels_, t, h_, w_);
    const std::size_t plane = static_cast<std::size_t>(h_) * w_;
    for (int c = 0; c < channels_; ++c) {
        for (int f = 0; f < t; ++f) {
            std::copy_n(&data_[index(c, f / factor, 0, 0)], plane, &out.data_[out.index(c, f, 0, 0)]);
        }
    }
    return out;
}

bool LatentVolume::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double LatentVolume::squared_norm() const {
    double s = 0.0;
    for (double x : data_) {
        s += x * x;
    }
    return s;
}

ResizeMode parse_resize_mode(std::string_view s) {
    if (s == "nearest") {
        return ResizeMode::nearest;
    }
    if (s == "bilinear") {
        return ResizeMode::bilinear;
    }
    throw ConfigError("unknown resize mode '" + std::string(s) + "'");
}

std::string_view to_string(ResizeMode m) { return m == ResizeMode::nearest ? "nearest" : "bilinear"; }

namespace {

// 1-D interpolation taps for one output coordinate.
struct Taps {
    int i0 = 0;
    int i1 = 0;
    double w0 = 1.0;
    double w1 = 0.0;
};

std::vector<Taps> make_taps(int in, int out, ResizeMode mode) {
    std::vector<Taps> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        Taps& t = taps[static_cast<std::size_t>(o)];
        if (in == out) {
            t = Taps{o, o, 1.0, 0.0};
            continue;
        }
        if (mode == ResizeMode::nearest) {
            const int i = std::min(in - 1, static_cast<int>(std::floor((o + 0.5) * scale)));
            t = Taps{i, i, 1.0, 0.0};
            continue;
        }
        const double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, in - 1);
        const double frac = src - i0;
        t = Taps{i0, i1, 1.0 - frac, frac};
    }
    return taps;
}

void check_finite(const LatentVolume& v) {
    if (!v.all_finite()) {
        throw NumericError("resize_spatial: non-finite input value");
    }
}

}  // namespace

LatentVolume resize_spatial(const LatentVolume& v, int h, int w, ResizeMode mode) {
    if (h < 1 || w < 1) {
        throw ShapeError("resize_spatial: target size must be positive");
    }
    check_finite(v);
    if (h == v.height() && w == v.width()) {
        return v;
    }
    const auto ty = make_taps(v.height(), h, mode);
    const auto tx = make_taps(v.width(), w, mode);
    LatentVolume out(v.channels(), v.frames(), h, w);
    for (int c = 0; c < v.channels(); ++c) {
        for (int f = 0; f < v.frames(); ++f) {
            for (int y = 0; y < h; ++y) {
                const Taps& a = ty[static_cast<std::size_t>(y)];
                for (int x = 0; x < w; ++x) {
                    const Taps& b = tx[static_cast<std::size_t>(x)];
                    // lerp form keeps constant fields exact
                    const double v00 = v.at(c, f, a.i0, b.i0);
                    const double v10 = v.at(c, f, a.i1, b.i0);
                    const double top = v00 + b.w1 * (v.at(c, f, a.i0, b.i1) - v00);
                    const double bot = v10 + b.w1 * (v.at(c, f, a.i1, b.i1) - v10);
                    out.at(c, f, y, x) = top + a.w1 * (bot - top);
                }
            }
        }
    }
    return out;
}

LatentVolume resize_spatial_adjoint(const LatentVolume& grad, int h_in, int w_in, ResizeMode mode) {
    if (h_in == grad.height() && w_in == grad.width()) {
        return grad;
    }
    const auto ty = make_taps(h_in, grad.height(), mode);
    const auto tx = make_taps(w_in, grad.width(), mode);
    LatentVolume out(grad.channels(), grad.frames(), h_in, w_in);
    for (int c = 0; c < grad.channels(); ++c) {
        for (int f = 0; f < grad.frames(); ++f) {
            for (int y = 0; y < grad.height(); ++y) {
                const Taps& a = ty[static_cast<std::size_t>(y)];
                for (int x = 0; x < grad.width(); ++x) {
                    const Taps& b = tx[static_cast<std::size_t>(x)];
                    const double g = grad.at(c, f, y, x);
                    out.at(c, f, a.i0, b.i0) += a.w0 * b.w0 * g;
                    out.at(c, f, a.i0, b.i1) += a.w0 * b.w1 * g;
                    out.at(c, f, a.i1, b.i0) += a.w1 * b.w0 * g;
                    out.at(c, f, a.i1, b.i1) += a.w1 * b.w1 * g;
                }
            }
        }
    }
    return out;
}

double mean_squared_error(const LatentVolume& a, const LatentVolume& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("mean_squared_error: shape mismatch");
    }
    const auto da = a.data();
    const auto db = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) {
        const double d = da[i] - db[i];
        s += d * d;
    }
    return s / static_cast<double>(da.size());
}

double psnr(const LatentVolume& a, const LatentVolume& b, double peak) {
    if (!(peak > 0.0)) {
        throw ConfigError("psnr: peak must be positive");
    }
    const double mse = mean_squared_error(a, b);
    if (mse == 0.0) {
        return kInfinitePsnr;
    }
    return 10.0 * std::log10(peak * peak / mse);
}

void write_volume(std::ostream& os, const LatentVolume& v) {
    io::put_magic(os, "ISVL");
    io::put_u32(os, 1);
    io::put_u32(os, static_cast<std::uint32_t>(v.channels()));
    io::put_u32(os, static_cast<std::uint32_t>(v.frames()));
    io::put_u32(os, static_cast<std::uint32_t>(v.height()));
    io::put_u32(os, static_cast<std::uint32_t>(v.width()));
    for (double x : v.data()) {
        io::put_f64(os, x);
    }
}

LatentVolume read_volume(std::istream& is) {
    io::expect_magic(is, "ISVL");
    io::expect_version(is, 1, "ISVL");
    const auto d = io::get_u32(is);
    const auto t = io::get_u32(is);
    const auto h = io::get_u32(is);
    const auto w = io::get_u32(is);
    if (d == 0 || t == 0 || h == 0 || w == 0 || d > (1u << 16) || t > (1u << 16) || h > (1u << 16) || w > (1u << 16)) {
        throw FormatError("ISVL: implausible dimensions");
    }
    LatentVolume v(static_cast<int>(d), static_cast<int>(t), static_cast<int>(h), static_cast<int>(w));
    for (auto& x : v.data()) {
        x = io::get_f64(is);
    }
    return v;
}

}  // namespace stpyr
