// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/schedule.hpp"

#include <string>

#include "stpyr/errors.hpp"

namespace stpyr {

std::int64_t Pyramid::tokens() const {
    std::int64_t n = 0;
    for (const auto& s : scales) {
        n += s.tokens();
    }
    return n;
}

std::int64_t VideoLayout::total_tokens() const {
    if (flat_blocks.empty()) {
        return 0;
    }
    return flat_blocks.back().offset + flat_blocks.back().tokens;
}

void ScheduleConfig::validate() const {
    if (ladder.empty()) {
        throw ConfigError("schedule.ladder must not be empty");
    }
    std::int64_t prev_area = 0;
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        const auto [h, w] = ladder[i];
        if (h < 1 || w < 1) {
            throw ConfigError("schedule.ladder entry " + std::to_string(i) + " has non-positive size");
        }
        const std::int64_t area = static_cast<std::int64_t>(h) * w;
        if (area <= prev_area) {
            throw ConfigError("schedule.ladder must be strictly increasing in h*w (entry " + std::to_string(i) + ")");
        }
        if (i > 0 && (h < ladder[i - 1].first || w < ladder[i - 1].second)) {
            throw ConfigError("schedule.ladder must be non-decreasing in h and w (entry " + std::to_string(i) + ")");
        }
        prev_area = area;
    }
    if (t_latent < 1) {
        throw ConfigError("schedule.t_latent must be >= 1");
    }
    if (n_clips < 0) {
        throw ConfigError("schedule.n_clips must be >= 0");
    }
    if (k_s < 0 || k_s > static_cast<int>(ladder.size())) {
        throw ConfigError("schedule.k_s (" + std::to_string(k_s) + ") exceeds ladder length " +
                          std::to_string(ladder.size()));
    }
    if (reps < 1) {
        throw ConfigError("schedule.reps must be >= 1");
    }
    if (small_bits < 1 || small_bits > 64 || large_bits < 1 || large_bits > 64) {
        throw ConfigError("schedule bit widths must lie in [1, 64]");
    }
}

int bitwidth_for_area(const ScheduleConfig& config, std::int64_t area) {
    return area < config.small_bits_area_threshold ? config.small_bits : config.large_bits;
}

namespace {

ScaleTuple make_tuple(const ScheduleConfig& config, int t, std::pair<int, int> hw, bool repeat) {
    return ScaleTuple{t, hw.first, hw.second,
                      bitwidth_for_area(config, static_cast<std::int64_t>(hw.first) * hw.second), repeat};
}

}  // namespace

ScaleSchedule image_schedule(const ScheduleConfig& config) {
    ScaleSchedule out;
    out.reserve(config.ladder.size());
    for (const auto& hw : config.ladder) {
        out.push_back(make_tuple(config, 1, hw, false));
    }
    return out;
}

ScaleSchedule clip_schedule(const ScheduleConfig& config, int t) {
    ScaleSchedule out;
    for (int r = 0; r < config.reps; ++r) {
        for (int k = 0; k < config.k_s; ++k) {
            out.push_back(make_tuple(config, t, config.ladder[static_cast<std::size_t>(k)], r > 0));
        }
    }
    for (std::size_t k = static_cast<std::size_t>(config.k_s); k < config.ladder.size(); ++k) {
        out.push_back(make_tuple(config, t, config.ladder[k], false));
    }
    return out;
}

void rebuild_flat_blocks(VideoLayout& layout) {
    layout.flat_blocks.clear();
    std::int64_t offset = 0;
    for (std::size_t p = 0; p < layout.pyramids.size(); ++p) {
        const auto& scales = layout.pyramids[p].scales;
        for (std::size_t k = 0; k < scales.size(); ++k) {
            const auto n = scales[k].tokens();
            layout.flat_blocks.push_back(FlatBlock{static_cast<int>(p), static_cast<int>(k), n, offset});
            offset += n;
        }
    }
}

VideoLayout build_layout(const ScheduleConfig& config) {
    config.validate();
    VideoLayout layout;
    layout.n_clips = config.n_clips;
    layout.t_latent = config.t_latent;
    layout.repetition = Repetition{config.k_s, config.reps};
    layout.pyramids.push_back(Pyramid{PyramidKind::image, 0, image_schedule(config)});
    const auto clip = clip_schedule(config, config.t_latent);
    for (int c = 1; c <= config.n_clips; ++c) {
        layout.pyramids.push_back(Pyramid{PyramidKind::clip, c, clip});
    }
    rebuild_flat_blocks(layout);
    return layout;
}

VideoLayout clip_only_layout(const ScheduleConfig& config) {
    auto layout = build_layout(config);
    layout.pyramids.erase(layout.pyramids.begin());
    rebuild_flat_blocks(layout);
    return layout;
}

VideoLayout pseudo_spacetime_layout(const ScheduleConfig& config) {
    config.validate();
    if (config.n_clips != 1) {
        throw ConfigError("pseudo-spacetime layout requires n_clips == 1 (got " + std::to_string(config.n_clips) + ")");
    }
    VideoLayout layout;
    layout.pseudo = true;
    layout.n_clips = 1;
    layout.t_latent = config.t_latent;
    layout.repetition = Repetition{config.k_s, config.reps};
    layout.pyramids.push_back(Pyramid{PyramidKind::pseudo, 1, clip_schedule(config, config.t_latent)});
    rebuild_flat_blocks(layout);
    return layout;
}

TokenCounts token_counts(const VideoLayout& layout) {
    TokenCounts counts;
    for (const auto& p : layout.pyramids) {
        if (p.kind == PyramidKind::image) {
            counts.image += p.tokens();
        } else {
            counts.clips.push_back(p.tokens());
        }
    }
    counts.total = layout.total_tokens();
    return counts;
}

std::vector<FlatBlock> restrict_blocks(const VideoLayout& layout, const std::vector<std::vector<bool>>& retained) {
    if (retained.empty()) {
        return layout.flat_blocks;
    }
    if (retained.size() != layout.pyramids.size()) {
        throw ShapeError("retained-scale mask count does not match pyramid count");
    }
    std::vector<FlatBlock> out;
    std::int64_t offset = 0;
    for (const auto& b : layout.flat_blocks) {
        const auto& mask = retained[static_cast<std::size_t>(b.pyramid)];
        if (mask.size() != layout.pyramid_of(b).scales.size()) {
            throw ShapeError("retained-scale mask length does not match schedule");
        }
        if (!mask[static_cast<std::size_t>(b.scale)]) {
            continue;
        }
        out.push_back(FlatBlock{b.pyramid, b.scale, b.tokens, offset});
        offset += b.tokens;
    }
    return out;
}

}  // namespace stpyr
