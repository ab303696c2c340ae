// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace stpyr {

/// One prediction block of a pyramid: a (t, h, w) token grid with b bits per token.
struct ScaleTuple {
    int t = 1;
    int h = 1;
    int w = 1;
    int bitwidth = 1;
    bool is_repeat = false;

    std::int64_t tokens() const { return static_cast<std::int64_t>(t) * h * w; }
    std::int64_t area() const { return static_cast<std::int64_t>(h) * w; }
    bool same_grid(const ScaleTuple& o) const { return t == o.t && h == o.h && w == o.w; }
    bool operator==(const ScaleTuple&) const = default;
};

using ScaleSchedule = std::vector<ScaleTuple>;

enum class PyramidKind { image, clip, pseudo };

struct Pyramid {
    PyramidKind kind = PyramidKind::image;
    /// 0 for the image pyramid, 1-based for clip pyramids.
    int clip_index = 0;
    ScaleSchedule scales;

    const ScaleTuple& largest() const { return scales.back(); }
    std::int64_t tokens() const;
    bool operator==(const Pyramid&) const = default;
};

/// Position of a block in the flattened token sequence.
struct FlatBlock {
    int pyramid = 0;
    int scale = 0;
    std::int64_t tokens = 0;
    std::int64_t offset = 0;
    bool operator==(const FlatBlock&) const = default;
};

struct Repetition {
    int k_s = 0;
    int reps = 1;
    bool operator==(const Repetition&) const = default;
};

struct VideoLayout {
    /// Image pyramid first (unless pseudo), followed by the clip pyramids.
    std::vector<Pyramid> pyramids;
    int n_clips = 0;
    int t_latent = 1;
    Repetition repetition;
    bool pseudo = false;
    std::vector<FlatBlock> flat_blocks;

    bool has_image_pyramid() const { return !pseudo && !pyramids.empty() && pyramids.front().kind == PyramidKind::image; }
    const Pyramid& pyramid_of(const FlatBlock& b) const { return pyramids[static_cast<std::size_t>(b.pyramid)]; }
    const ScaleTuple& tuple_of(const FlatBlock& b) const { return pyramid_of(b).scales[static_cast<std::size_t>(b.scale)]; }
    std::int64_t total_tokens() const;
    bool operator==(const VideoLayout&) const = default;
};

struct ScheduleConfig {
    /// Base (h, w) ladder, strictly increasing in h*w.
    std::vector<std::pair<int, int>> ladder{{1, 1}, {2, 2}, {3, 3}, {4, 4}, {6, 6}, {8, 8}};
    int t_latent = 4;
    int n_clips = 2;
    int k_s = 2;
    int reps = 2;
    int small_bits = 16;
    int large_bits = 32;
    /// Tuples with h*w strictly below this use small_bits.
    int small_bits_area_threshold = 16;

    void validate() const;
    bool operator==(const ScheduleConfig&) const = default;
};

struct TokenCounts {
    std::int64_t image = 0;
    std::vector<std::int64_t> clips;
    std::int64_t total = 0;
};

/// Bits per token for a tuple of the given spatial area.
int bitwidth_for_area(const ScheduleConfig& config, std::int64_t area);

/// Image pyramid (t=1) followed by n_clips clip pyramids with shared t; semantic
/// repetition applies to clip pyramids only.
VideoLayout build_layout(const ScheduleConfig& config);

/// Layout holding only the clip pyramids (used when history is supplied as conditions).
VideoLayout clip_only_layout(const ScheduleConfig& config);

/// Single pyramid with t = config.t_latent constant across every scale.
VideoLayout pseudo_spacetime_layout(const ScheduleConfig& config);

/// Clip pyramid schedule with the first k_s tuples repeated reps times as a group.
ScaleSchedule clip_schedule(const ScheduleConfig& config, int t);

ScaleSchedule image_schedule(const ScheduleConfig& config);

TokenCounts token_counts(const VideoLayout& layout);

/// Flat blocks restricted to retained scales, with offsets recomputed contiguously.
/// `retained[p][k]` marks scale k of pyramid p; an empty outer vector keeps all.
std::vector<FlatBlock> restrict_blocks(const VideoLayout& layout, const std::vector<std::vector<bool>>& retained);

/// Recompute flat_blocks from pyramids.
void rebuild_flat_blocks(VideoLayout& layout);

}  // namespace stpyr
