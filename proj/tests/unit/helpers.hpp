// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "stpyr/codec.hpp"
#include "stpyr/model.hpp"
#include "stpyr/rng.hpp"
#include "stpyr/schedule.hpp"
#include "stpyr/volume.hpp"

namespace testing_support {

inline stpyr::LatentVolume random_volume(int d, int t, int h, int w, stpyr::Rng& rng, double sigma = 1.0) {
    stpyr::LatentVolume v(d, t, h, w);
    for (auto& x : v.data()) {
        x = sigma * rng.normal();
    }
    return v;
}

/// Random features for every pyramid of a layout.
inline std::vector<stpyr::LatentVolume> random_features(const stpyr::VideoLayout& layout, int d, stpyr::Rng& rng,
                                                        double sigma = 1.0) {
    std::vector<stpyr::LatentVolume> out;
    for (const auto& p : layout.pyramids) {
        const auto& s = p.largest();
        out.push_back(random_volume(d, s.t, s.h, s.w, rng, sigma));
    }
    return out;
}

/// Tiny schedule used by model-level tests: image (1,1),(2,2) and one clip.
inline stpyr::ScheduleConfig tiny_schedule() {
    stpyr::ScheduleConfig c;
    c.ladder = {{1, 1}, {2, 2}};
    c.t_latent = 2;
    c.n_clips = 1;
    c.k_s = 1;
    c.reps = 2;
    c.small_bits = 4;
    c.large_bits = 6;
    c.small_bits_area_threshold = 4;
    return c;
}

inline stpyr::ModelConfig tiny_model() {
    stpyr::ModelConfig m;
    m.layers = 2;
    m.heads = 2;
    m.head_dim = 8;
    m.mlp_ratio = 2;
    m.latent_dim = 6;
    m.bitwidths = {4, 6};
    m.text_vocab = 5;
    m.text_len = 3;
    return m;
}

}  // namespace testing_support
