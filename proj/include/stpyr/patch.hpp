// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "stpyr/schedule.hpp"
#include "stpyr/synth.hpp"
#include "stpyr/volume.hpp"

namespace stpyr {

enum class PatchMode { fixed, learned };

PatchMode parse_patch_mode(std::string_view s);
std::string_view to_string(PatchMode m);

/// Invertible front-end between raw RGB frames and latent volumes. Pixels map
/// to [-1, 1]; each (pt, ph, pw) patch becomes one latent position with
/// 3*pt*ph*pw channels. Learned mode rotates those channels onto an orthonormal
/// basis fitted by PCA, so its inverse is the transpose.
class PatchTransform {
public:
    PatchTransform() = default;
    PatchTransform(int pt, int ph, int pw);

    int pt() const { return pt_; }
    int ph() const { return ph_; }
    int pw() const { return pw_; }
    PatchMode mode() const { return basis_.empty() ? PatchMode::fixed : PatchMode::learned; }
    int latent_dim() const { return 3 * pt_ * ph_ * pw_; }
    /// Row-major latent_dim x latent_dim basis (rows = components); empty in fixed mode.
    const std::vector<double>& basis() const { return basis_; }
    void set_basis(std::vector<double> basis);

    /// Second-moment PCA over every patch of the given videos.
    static PatchTransform fit_learned(int pt, int ph, int pw, std::span<const RawVideo> videos);

    /// Latent volume of the listed raw frames (count must be a multiple of pt).
    LatentVolume patchify(const RawVideo& v, std::span<const int> frames) const;
    LatentVolume patchify(const RawVideo& v) const;
    /// Raw frames (t*pt of them); values are clamped and rounded to 8 bits.
    RawVideo unpatchify(const LatentVolume& z) const;

private:
    std::vector<double> to_rows(const LatentVolume& z) const;
    int pt_ = 2;
    int ph_ = 4;
    int pw_ = 4;
    std::vector<double> basis_;
};

/// Pixel-domain PSNR between two raw videos (peak 255).
double video_psnr(const RawVideo& a, const RawVideo& b);

/// Raw frames feeding each pyramid of `layout`: the image pyramid repeats frame
/// 0 pt times; clip c covers frames 1 + (c-1)*T*pt onwards.
std::vector<std::vector<int>> pyramid_frames(const VideoLayout& layout, int pt);

/// Frames a raw video needs for `layout`.
int required_frames(const VideoLayout& layout, int pt);

/// One latent feature volume per pyramid.
std::vector<LatentVolume> pyramid_features(const PatchTransform& transform, const RawVideo& v,
                                           const VideoLayout& layout);

}  // namespace stpyr
