// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/interact.hpp"

#include <cmath>
#include <string>

#include "stpyr/errors.hpp"

namespace stpyr {

ChunkPlan plan_chunks(int total_clips, double clip_seconds) {
    if (total_clips < 2) {
        throw ConfigError("plan_chunks: need at least 2 clips, got " + std::to_string(total_clips));
    }
    if (!(clip_seconds > 0.0)) {
        throw ConfigError("plan_chunks: clip length must be positive");
    }
    ChunkPlan plan;
    plan.clip_seconds = clip_seconds;
    plan.stride = clip_seconds;
    for (int i = 0; i + 1 < total_clips; ++i) {
        plan.chunks.push_back(Chunk{i, i, i + 1, i * clip_seconds});
    }
    return plan;
}

namespace {

int ceil_div(int n, double s) { return static_cast<int>(std::ceil(n / s - 1e-12)); }

}  // namespace

SemDetCondition build_condition(const LatentVolume& prev, const LatentVolume& anchor, int k, double stride,
                                ResizeMode mode) {
    if (k < 1 || k > prev.frames()) {
        throw ShapeError("build_condition: K=" + std::to_string(k) + " outside [1, " + std::to_string(prev.frames()) + "]");
    }
    if (!(stride >= 1.0)) {
        throw ConfigError("build_condition: stride must be >= 1");
    }
    if (anchor.channels() != prev.channels() || anchor.frames() != 1) {
        throw ShapeError("build_condition: anchor must be one frame with the clip's channel count");
    }
    SemDetCondition c;
    const int hs = std::max(1, ceil_div(prev.height(), stride));
    const int ws = std::max(1, ceil_div(prev.width(), stride));
    c.sem = resize_spatial(prev, hs, ws, mode);
    c.det = prev.slice_frames(prev.frames() - k, k);
    c.anchor = anchor;
    c.sem_tokens = c.sem.positions();
    c.det_tokens = c.det.positions();
    c.anchor_tokens = c.anchor.positions();
    c.full_tokens = prev.positions();
    c.compression_warning = c.sem_tokens + c.det_tokens >= c.full_tokens;
    return c;
}

ConditionTokens condition_tokens(const SemDetCondition& c) {
    ConditionTokens t;
    const int T = c.sem.frames();
    t.volumes = {c.sem, c.det, c.anchor};
    t.types = {CondType::sem, CondType::det, CondType::anchor};
    t.t_offsets = {1, T - c.det.frames() + 1, 0};
    return t;
}

VideoLayout interactive_layout(const ScheduleConfig& config) {
    ScheduleConfig c = config;
    c.n_clips = 2;
    VideoLayout full = build_layout(c);
    VideoLayout out;
    out.pyramids.push_back(full.pyramids.back());
    out.n_clips = 1;
    out.t_latent = full.t_latent;
    out.repetition = full.repetition;
    rebuild_flat_blocks(out);
    return out;
}

ConditionBudget condition_budget(const ScheduleConfig& config, int k, double stride) {
    const auto& top = config.ladder.back();
    const int T = config.t_latent;
    if (k < 1 || k > T) {
        throw ShapeError("condition_budget: K outside [1, T]");
    }
    ConditionBudget b;
    b.sem = static_cast<std::int64_t>(T) * std::max(1, ceil_div(top.first, stride)) * std::max(1, ceil_div(top.second, stride));
    b.det = static_cast<std::int64_t>(k) * top.first * top.second;
    b.anchor = static_cast<std::int64_t>(top.first) * top.second;
    b.full_scale = static_cast<std::int64_t>(T) * top.first * top.second;
    const auto layout = interactive_layout(config);
    b.clip_pyramid = token_counts(layout).total;
    return b;
}

InteractiveRound interactive_generate(const ModelParams<float>& params, const Tokenizer& tokenizer,
                                      const ScheduleConfig& schedule, const LatentVolume& anchor,
                                      std::span<const BitTensor> prev_clip_codes, const std::vector<int>& prompt,
                                      int k, double stride, const GenerateOptions& options) {
    const VideoLayout layout = interactive_layout(schedule);
    const auto& pyr = layout.pyramids.front();
    const auto& top = pyr.largest();
    const LatentVolume prev =
        decode_pyramid(prev_clip_codes, pyr.scales, SqdMask::all(pyr.scales.size()), tokenizer.clip_adapters,
                       tokenizer.latent_dim, top.h, top.w, tokenizer.resize_mode);
    InteractiveRound r;
    r.condition = build_condition(prev, anchor, k, stride, tokenizer.resize_mode);
    const ConditionTokens cond = condition_tokens(r.condition);
    r.condition_tokens = cond.count();
    const auto g = generate(params, tokenizer, layout, prompt, cond, {}, options, &prev);
    r.codes = g.codes;
    r.reconstruction = g.reconstructions.front();
    return r;
}

TrainExample interactive_example(const Tokenizer& tokenizer, const ScheduleConfig& schedule, const LatentVolume& prev,
                                 const LatentVolume& target, const LatentVolume& anchor, const std::vector<int>& prompt,
                                 int k, double stride, double flip_p, MaskPolicy policy, Rng& rng) {
    const VideoLayout layout = interactive_layout(schedule);
    const SemDetCondition c = build_condition(prev, anchor, k, stride, tokenizer.resize_mode);
    BscOptions opt;
    opt.flip_p = flip_p;
    opt.prior = &prev;
    const std::vector<LatentVolume> feats{target};
    const auto out = encode_with_bsc(feats, layout, tokenizer, rng, opt);
    return TrainExample{make_sequence(layout, out, prompt, condition_tokens(c), policy), out.labels};
}

}  // namespace stpyr
