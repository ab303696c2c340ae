// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "stpyr/bsq.hpp"
#include "stpyr/codec.hpp"
#include "stpyr/model.hpp"
#include "stpyr/schedule.hpp"
#include "stpyr/volume.hpp"

namespace stpyr {

struct Chunk {
    int index = 0;
    int first_clip = 0;   // 0-based clip indices
    int second_clip = 0;
    double start_time = 0.0;
};

/// Sliding window of two-clip chunks; consecutive chunks share one clip.
struct ChunkPlan {
    std::vector<Chunk> chunks;
    double clip_seconds = 5.0;
    double stride = 5.0;
    double chunk_seconds() const { return 2.0 * clip_seconds; }
};

ChunkPlan plan_chunks(int total_clips, double clip_seconds = 5.0);

/// Compressed view of the previous clip plus the anchor frame.
struct SemDetCondition {
    LatentVolume sem;     // t x ceil(H/s) x ceil(W/s)
    LatentVolume det;     // last K frames at full size
    LatentVolume anchor;  // first frame of the earliest clip
    std::int64_t sem_tokens = 0;
    std::int64_t det_tokens = 0;
    std::int64_t anchor_tokens = 0;
    /// Positions of the full previous clip at full scale (t * H * W).
    std::int64_t full_tokens = 0;
    /// Set when sem + det do not compress the previous clip.
    bool compression_warning = false;
    std::int64_t total_tokens() const { return sem_tokens + det_tokens + anchor_tokens; }
};

SemDetCondition build_condition(const LatentVolume& prev, const LatentVolume& anchor, int k, double stride,
                                ResizeMode mode = ResizeMode::bilinear);

/// Condition tokens with rotary time ids: the previous clip occupies t = 1..T,
/// the anchor t = 0.
ConditionTokens condition_tokens(const SemDetCondition& c);

/// One clip pyramid numbered as the second clip, so its time ids follow the
/// previous clip's.
VideoLayout interactive_layout(const ScheduleConfig& config);

/// Token accounting of a condition against the clip pyramid it replaces.
struct ConditionBudget {
    std::int64_t sem = 0;
    std::int64_t det = 0;
    std::int64_t anchor = 0;
    std::int64_t clip_pyramid = 0;  // all scales of one clip pyramid
    std::int64_t full_scale = 0;    // largest scale of one clip
    std::int64_t total() const { return sem + det + anchor; }
    double ratio_to_pyramid() const { return static_cast<double>(total()) / static_cast<double>(clip_pyramid); }
    double ratio_to_full_scale() const { return static_cast<double>(total()) / static_cast<double>(full_scale); }
};

/// Computed from dims alone (no volumes needed).
ConditionBudget condition_budget(const ScheduleConfig& config, int k, double stride);

struct InteractiveRound {
    std::vector<BitTensor> codes;     // next clip pyramid
    LatentVolume reconstruction;      // decoded next clip features
    SemDetCondition condition;
    std::int64_t condition_tokens = 0;  // as placed in the sequence (text excluded)
};

/// Decodes the previous clip, builds the condition and generates the next clip.
InteractiveRound interactive_generate(const ModelParams<float>& params, const Tokenizer& tokenizer,
                                      const ScheduleConfig& schedule, const LatentVolume& anchor,
                                      std::span<const BitTensor> prev_clip_codes, const std::vector<int>& prompt,
                                      int k, double stride, const GenerateOptions& options);

/// Teacher-forced training sequence for interactive fine-tuning: `prev` and
/// `target` are consecutive clip features, `anchor` the first latent frame.
TrainExample interactive_example(const Tokenizer& tokenizer, const ScheduleConfig& schedule, const LatentVolume& prev,
                                 const LatentVolume& target, const LatentVolume& anchor, const std::vector<int>& prompt,
                                 int k, double stride, double flip_p, MaskPolicy policy, Rng& rng);

}  // namespace stpyr
