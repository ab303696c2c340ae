// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

namespace stpyr {

/// Real-valued (channels, t, h, w) array stored row-major in that order.
class LatentVolume {
public:
    LatentVolume() = default;
    LatentVolume(int channels, int t, int h, int w, double fill = 0.0);

    int channels() const { return channels_; }
    int frames() const { return t_; }
    int height() const { return h_; }
    int width() const { return w_; }
    std::int64_t positions() const { return static_cast<std::int64_t>(t_) * h_ * w_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool same_shape(const LatentVolume& o) const {
        return channels_ == o.channels_ && t_ == o.t_ && h_ == o.h_ && w_ == o.w_;
    }

    std::size_t index(int c, int t, int y, int x) const {
        return ((static_cast<std::size_t>(c) * t_ + t) * h_ + y) * w_ + x;
    }
    double& at(int c, int t, int y, int x) { return data_[index(c, t, y, x)]; }
    double at(int c, int t, int y, int x) const { return data_[index(c, t, y, x)]; }

    /// Element stride between consecutive channels of one position.
    std::size_t channel_stride() const { return static_cast<std::size_t>(positions()); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    LatentVolume& operator+=(const LatentVolume& o);
    LatentVolume& operator-=(const LatentVolume& o);
    LatentVolume& operator*=(double s);
    friend LatentVolume operator+(LatentVolume a, const LatentVolume& b) { return a += b; }
    friend LatentVolume operator-(LatentVolume a, const LatentVolume& b) { return a -= b; }
    friend LatentVolume operator*(LatentVolume a, double s) { return a *= s; }

    bool operator==(const LatentVolume&) const = default;

    /// Frames [begin, begin + count).
    LatentVolume slice_frames(int begin, int count) const;
    /// Replicate every frame so the result has `t` frames (t must be a multiple of frames()).
    LatentVolume repeat_frames(int t) const;

    bool all_finite() const;
    double squared_norm() const;

private:
    int channels_ = 0;
    int t_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<double> data_;
};

enum class ResizeMode { nearest, bilinear };

ResizeMode parse_resize_mode(std::string_view s);
std::string_view to_string(ResizeMode m);

/// Per-frame, per-channel 2-D resampling to (h, w). Half-pixel-centre alignment.
LatentVolume resize_spatial(const LatentVolume& v, int h, int w, ResizeMode mode = ResizeMode::bilinear);

/// Adjoint of resize_spatial: maps a gradient at (h_out, w_out) back to (h_in, w_in).
LatentVolume resize_spatial_adjoint(const LatentVolume& grad, int h_in, int w_in, ResizeMode mode = ResizeMode::bilinear);

constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10*log10(peak^2 / MSE); kInfinitePsnr when the volumes are identical.
double psnr(const LatentVolume& a, const LatentVolume& b, double peak);

double mean_squared_error(const LatentVolume& a, const LatentVolume& b);

void write_volume(std::ostream& os, const LatentVolume& v);
LatentVolume read_volume(std::istream& is);

}  // namespace stpyr
