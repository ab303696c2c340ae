// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/patch.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "stpyr/errors.hpp"

namespace stpyr {

PatchMode parse_patch_mode(std::string_view s) {
    if (s == "fixed") {
        return PatchMode::fixed;
    }
    if (s == "learned") {
        return PatchMode::learned;
    }
    throw ConfigError("unknown patch mode '" + std::string(s) + "'");
}

std::string_view to_string(PatchMode m) { return m == PatchMode::fixed ? "fixed" : "learned"; }

PatchTransform::PatchTransform(int pt, int ph, int pw) : pt_(pt), ph_(ph), pw_(pw) {
    if (pt < 1 || ph < 1 || pw < 1) {
        throw ConfigError("patch dimensions must be >= 1");
    }
}

void PatchTransform::set_basis(std::vector<double> basis) {
    const auto d = static_cast<std::size_t>(latent_dim());
    if (!basis.empty() && basis.size() != d * d) {
        throw ShapeError("patch basis must be latent_dim x latent_dim");
    }
    basis_ = std::move(basis);
}

namespace {

// Channel index of (rgb channel, dt, dy, dx) in fixed mode.
int channel_of(int ch, int dt, int dy, int dx, int pt, int ph, int pw) { return ((ch * pt + dt) * ph + dy) * pw + dx; }

}  // namespace

LatentVolume PatchTransform::patchify(const RawVideo& v, std::span<const int> frames) const {
    if (frames.empty() || frames.size() % static_cast<std::size_t>(pt_) != 0) {
        throw ShapeError("patchify: frame count must be a positive multiple of pt");
    }
    if (v.height % ph_ != 0 || v.width % pw_ != 0) {
        throw ShapeError("patchify: frame size " + std::to_string(v.height) + "x" + std::to_string(v.width) +
                         " is not divisible by the patch size");
    }
    for (int f : frames) {
        if (f < 0 || f >= v.frames) {
            throw ShapeError("patchify: frame index out of range");
        }
    }
    const int t = static_cast<int>(frames.size()) / pt_;
    const int h = v.height / ph_;
    const int w = v.width / pw_;
    LatentVolume z(latent_dim(), t, h, w);
    for (int lt = 0; lt < t; ++lt) {
        for (int dt = 0; dt < pt_; ++dt) {
            const int f = frames[static_cast<std::size_t>(lt * pt_ + dt)];
            for (int y = 0; y < v.height; ++y) {
                for (int x = 0; x < v.width; ++x) {
                    for (int ch = 0; ch < 3; ++ch) {
                        const double val = v.at(f, y, x, ch) / 127.5 - 1.0;
                        z.at(channel_of(ch, dt, y % ph_, x % pw_, pt_, ph_, pw_), lt, y / ph_, x / pw_) = val;
                    }
                }
            }
        }
    }
    if (basis_.empty()) {
        return z;
    }
    const int d = latent_dim();
    LatentVolume out(d, t, h, w);
    const std::int64_t P = z.positions();
    const auto src = z.data();
    auto dst = out.data();
    for (int r = 0; r < d; ++r) {
        const double* row = &basis_[static_cast<std::size_t>(r) * d];
        for (int k = 0; k < d; ++k) {
            const double b = row[k];
            for (std::int64_t p = 0; p < P; ++p) {
                dst[static_cast<std::size_t>(r) * P + p] += b * src[static_cast<std::size_t>(k) * P + p];
            }
        }
    }
    return out;
}

LatentVolume PatchTransform::patchify(const RawVideo& v) const {
    std::vector<int> frames(static_cast<std::size_t>(v.frames - v.frames % pt_));
    for (std::size_t i = 0; i < frames.size(); ++i) {
        frames[i] = static_cast<int>(i);
    }
    return patchify(v, frames);
}

RawVideo PatchTransform::unpatchify(const LatentVolume& zin) const {
    if (zin.channels() != latent_dim()) {
        throw ShapeError("unpatchify: channel count does not match the patch transform");
    }
    LatentVolume z = zin;
    if (!basis_.empty()) {
        const int d = latent_dim();
        const std::int64_t P = zin.positions();
        z = LatentVolume(d, zin.frames(), zin.height(), zin.width());
        const auto src = zin.data();
        auto dst = z.data();
        for (int r = 0; r < d; ++r) {
            const double* row = &basis_[static_cast<std::size_t>(r) * d];
            for (int k = 0; k < d; ++k) {
                const double b = row[k];
                for (std::int64_t p = 0; p < P; ++p) {
                    dst[static_cast<std::size_t>(k) * P + p] += b * src[static_cast<std::size_t>(r) * P + p];
                }
            }
        }
    }
    RawVideo v(z.frames() * pt_, z.height() * ph_, z.width() * pw_);
    for (int f = 0; f < v.frames; ++f) {
        for (int y = 0; y < v.height; ++y) {
            for (int x = 0; x < v.width; ++x) {
                for (int ch = 0; ch < 3; ++ch) {
                    const double val = z.at(channel_of(ch, f % pt_, y % ph_, x % pw_, pt_, ph_, pw_), f / pt_, y / ph_, x / pw_);
                    const double px = std::clamp(std::round((val + 1.0) * 127.5), 0.0, 255.0);
                    v.at(f, y, x, ch) = static_cast<std::uint8_t>(px);
                }
            }
        }
    }
    return v;
}

PatchTransform PatchTransform::fit_learned(int pt, int ph, int pw, std::span<const RawVideo> videos) {
    PatchTransform fixed(pt, ph, pw);
    const int d = fixed.latent_dim();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    std::int64_t count = 0;
    for (const auto& v : videos) {
        const auto z = fixed.patchify(v);
        const std::int64_t P = z.positions();
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> rows(z.data().data(), d, P);
        m.noalias() += rows * rows.transpose();
        count += P;
    }
    if (count == 0) {
        throw ConfigError("fit_learned: no patches to fit");
    }
    m /= static_cast<double>(count);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) {
        throw NumericError("fit_learned: eigen decomposition failed");
    }
    // descending energy; fix each component's sign so its largest entry is positive
    std::vector<double> basis(static_cast<std::size_t>(d) * d);
    for (int r = 0; r < d; ++r) {
        Eigen::VectorXd col = es.eigenvectors().col(d - 1 - r);
        Eigen::Index arg = 0;
        col.cwiseAbs().maxCoeff(&arg);
        if (col(arg) < 0) {
            col = -col;
        }
        for (int k = 0; k < d; ++k) {
            basis[static_cast<std::size_t>(r) * d + k] = col(k);
        }
    }
    fixed.set_basis(std::move(basis));
    return fixed;
}

double video_psnr(const RawVideo& a, const RawVideo& b) {
    if (a.frames != b.frames || a.height != b.height || a.width != b.width) {
        throw ShapeError("video_psnr: shape mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = static_cast<double>(a.rgb[i]) - b.rgb[i];
        s += d * d;
    }
    const double mse = s / static_cast<double>(a.rgb.size());
    return mse == 0.0 ? kInfinitePsnr : 10.0 * std::log10(255.0 * 255.0 / mse);
}

std::vector<std::vector<int>> pyramid_frames(const VideoLayout& layout, int pt) {
    std::vector<std::vector<int>> out;
    for (const auto& p : layout.pyramids) {
        std::vector<int> frames;
        const int t = p.largest().t;
        if (p.kind == PyramidKind::image) {
            frames.assign(static_cast<std::size_t>(pt), 0);
        } else {
            const int first = (layout.has_image_pyramid() ? 1 : 0) + (p.clip_index - 1) * t * pt;
            for (int i = 0; i < t * pt; ++i) {
                frames.push_back(first + i);
            }
        }
        out.push_back(std::move(frames));
    }
    return out;
}

int required_frames(const VideoLayout& layout, int pt) {
    int need = 1;
    for (const auto& f : pyramid_frames(layout, pt)) {
        need = std::max(need, f.back() + 1);
    }
    return need;
}

std::vector<LatentVolume> pyramid_features(const PatchTransform& transform, const RawVideo& v,
                                           const VideoLayout& layout) {
    std::vector<LatentVolume> out;
    for (const auto& frames : pyramid_frames(layout, transform.pt())) {
        out.push_back(transform.patchify(v, frames));
    }
    for (std::size_t p = 0; p < out.size(); ++p) {
        const auto& top = layout.pyramids[p].largest();
        if (out[p].height() != top.h || out[p].width() != top.w || out[p].frames() != top.t) {
            throw ShapeError("video latent grid " + std::to_string(out[p].height()) + "x" +
                             std::to_string(out[p].width()) + " does not match the largest scale " +
                             std::to_string(top.h) + "x" + std::to_string(top.w));
        }
    }
    return out;
}

}  // namespace stpyr
