// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "stpyr/errors.hpp"
#include "stpyr/interact.hpp"

using namespace stpyr;
using testing_support::random_volume;

TEST_CASE("chunk plans") {
    CHECK(plan_chunks(2).chunks.size() == 1);
    const auto p = plan_chunks(5);
    REQUIRE(p.chunks.size() == 4);
    CHECK(p.chunk_seconds() == 10.0);
    CHECK(p.stride == 5.0);
    std::set<int> covered;
    for (std::size_t i = 0; i < p.chunks.size(); ++i) {
        const auto& c = p.chunks[i];
        CHECK(c.second_clip == c.first_clip + 1);
        covered.insert(c.first_clip);
        covered.insert(c.second_clip);
        if (i + 1 < p.chunks.size()) {
            CHECK(p.chunks[i + 1].first_clip == c.second_clip);  // one shared clip
            CHECK(p.chunks[i + 1].start_time - c.start_time == doctest::Approx(5.0));
        }
    }
    CHECK(covered == std::set<int>{0, 1, 2, 3, 4});
    CHECK_THROWS_AS(plan_chunks(1), ConfigError);
}

TEST_CASE("semantic and detail conditions") {
    Rng rng(1);
    const auto prev = random_volume(3, 4, 16, 16, rng);
    const auto anchor = random_volume(3, 1, 16, 16, rng);
    const auto c = build_condition(prev, anchor, 2, std::sqrt(32.0));
    CHECK(c.sem.frames() == 4);
    CHECK(c.sem.height() == 3);
    CHECK(c.sem.width() == 3);
    CHECK(c.sem_tokens == 36);
    CHECK(c.det_tokens == 512);
    CHECK(c.full_tokens == 1024);
    CHECK(c.sem_tokens + c.det_tokens == 548);
    CHECK_FALSE(c.compression_warning);
    CHECK(c.det == prev.slice_frames(2, 2));
    CHECK(c.anchor == anchor);
    CHECK(c.sem == resize_spatial(prev, 3, 3));

    const auto loose = build_condition(prev, anchor, 4, 1.0);
    CHECK(loose.sem_tokens + loose.det_tokens >= loose.full_tokens);
    CHECK(loose.compression_warning);
    CHECK_THROWS_AS(build_condition(prev, anchor, 5, 2.0), ShapeError);
    CHECK_THROWS_AS(build_condition(prev, anchor, 0, 2.0), ShapeError);
}

TEST_CASE("compression warning matches the budget") {
    for (int t : {2, 3, 4, 6, 20}) {
        for (int k = 1; k < t; ++k) {
            for (double s : {1.5, 2.0, std::sqrt(32.0), 9.0}) {
                ScheduleConfig c;
                c.t_latent = t;
                const auto b = condition_budget(c, k, s);
                Rng rng(static_cast<std::uint64_t>(t * 100 + k));
                const int h = c.ladder.back().first, w = c.ladder.back().second;
                const auto cond = build_condition(random_volume(2, t, h, w, rng), random_volume(2, 1, h, w, rng), k, s);
                CHECK(cond.sem_tokens == b.sem);
                CHECK(cond.det_tokens == b.det);
                CHECK(cond.compression_warning == (b.sem + b.det >= b.full_scale));
                // clear margin: ceil-rounded sem grid plus K frames stays under T frames
                const double sem_frames = static_cast<double>(b.sem) / (h * w);
                if (sem_frames + k < t) {
                    CHECK_FALSE(cond.compression_warning);
                }
            }
        }
    }
    // small T with a mild stride does not compress: 2x(6x6) + 64 >= 128
    ScheduleConfig c;
    c.t_latent = 2;
    const auto b = condition_budget(c, 1, 1.5);
    CHECK(b.sem + b.det >= 2 * 64);
    // default setting compresses for every T >= 3
    for (int t = 3; t <= 20; ++t) {
        ScheduleConfig d;
        d.t_latent = t;
        const auto e = condition_budget(d, 2, std::sqrt(32.0));
        CHECK(e.sem + e.det < static_cast<std::int64_t>(t) * 64);
    }
}

TEST_CASE("condition tokens and their time ids") {
    Rng rng(2);
    const auto c = build_condition(random_volume(3, 4, 8, 8, rng), random_volume(3, 1, 8, 8, rng), 2, 2.0);
    const auto tok = condition_tokens(c);
    CHECK(tok.count() == c.total_tokens());
    const auto ids = condition_rope_ids(3, tok);
    REQUIRE(static_cast<std::int64_t>(ids.size()) == 3 + tok.count());
    for (int i = 0; i < 3; ++i) {
        CHECK(ids[static_cast<std::size_t>(i)] == RopeId{0, 0, 0, 0});
    }
    int max_t = 0;
    for (const auto& id : ids) {
        CHECK(id[0] == 0);
        max_t = std::max(max_t, id[1]);
    }
    CHECK(max_t == 4);  // previous clip occupies t = 1..T
    const auto l = interactive_layout(ScheduleConfig{});
    REQUIRE(l.pyramids.size() == 1);
    const auto rope = rope_ids(l, 0);
    CHECK(rope.ids.front()[1] == 5);  // continues after the previous clip
}

TEST_CASE("toy budget") {
    const auto b = condition_budget(ScheduleConfig{}, 2, std::sqrt(32.0));
    CHECK(b.sem == 16);
    CHECK(b.det == 128);
    CHECK(b.anchor == 64);
    CHECK(b.total() == 208);
    CHECK(b.clip_pyramid == 540);
    CHECK(b.full_scale == 256);
    CHECK(b.ratio_to_pyramid() < 0.6);
}

TEST_CASE("480p budget is near the reported compression") {
    // 480x832 frames, 16x spatial and 4x temporal compression, 80-frame clips
    ScheduleConfig c;
    c.ladder = {{1, 1}, {2, 4}, {4, 7}, {8, 14}, {15, 26}, {30, 52}};
    c.t_latent = 20;
    c.k_s = 0;
    c.reps = 1;
    const auto b = condition_budget(c, 2, std::sqrt(32.0));
    CHECK(b.full_scale == 31200);
    CHECK(b.total() == 5880);
    CHECK(std::abs(static_cast<double>(b.total()) / 5800.0 - 1.0) < 0.1);
    CHECK(std::abs(static_cast<double>(b.full_scale) / 33600.0 - 1.0) < 0.15);
}
