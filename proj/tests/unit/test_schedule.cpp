// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include <numeric>

#include "doctest.h"
#include "stpyr/errors.hpp"
#include "stpyr/schedule.hpp"

using namespace stpyr;

namespace {

ScheduleConfig small(int k_s, int reps, int n_clips = 1) {
    ScheduleConfig c;
    c.ladder = {{1, 1}, {2, 2}, {4, 4}};
    c.t_latent = 4;
    c.n_clips = n_clips;
    c.k_s = k_s;
    c.reps = reps;
    return c;
}

std::vector<std::int64_t> sizes(const Pyramid& p) {
    std::vector<std::int64_t> out;
    for (const auto& s : p.scales) {
        out.push_back(s.tokens());
    }
    return out;
}

}  // namespace

TEST_CASE("three-step ladder without repetition") {
    const auto l = build_layout(small(0, 1));
    REQUIRE(l.pyramids.size() == 2);
    CHECK(sizes(l.pyramids[0]) == std::vector<std::int64_t>{1, 4, 16});
    CHECK(sizes(l.pyramids[1]) == std::vector<std::int64_t>{4, 16, 64});
    CHECK(l.total_tokens() == 105);
    const auto c = token_counts(l);
    CHECK(c.image == 21);
    CHECK(c.clips == std::vector<std::int64_t>{84});
    CHECK(c.total == 105);
}

TEST_CASE("semantic repetition prepends copies") {
    const auto sched = clip_schedule(small(1, 2), 4);
    REQUIRE(sched.size() == 4);
    CHECK(sched[0].same_grid(ScaleTuple{4, 1, 1}));
    CHECK(sched[1].same_grid(ScaleTuple{4, 1, 1}));
    CHECK(sched[2].same_grid(ScaleTuple{4, 2, 2}));
    CHECK(sched[3].same_grid(ScaleTuple{4, 4, 4}));
    CHECK_FALSE(sched[0].is_repeat);
    CHECK(sched[1].is_repeat);
    std::int64_t total = 0;
    for (const auto& s : sched) {
        total += s.tokens();
    }
    CHECK(total == 88);
}

TEST_CASE("repetition adds (reps-1) times the repeated tokens") {
    for (int k_s = 0; k_s <= 3; ++k_s) {
        for (int reps = 1; reps <= 3; ++reps) {
            const auto base = token_counts(build_layout(small(0, 1))).clips[0];
            const auto with = token_counts(build_layout(small(k_s, reps))).clips[0];
            std::int64_t rep = 0;
            const auto plain = clip_schedule(small(0, 1), 4);
            for (int k = 0; k < k_s; ++k) {
                rep += plain[static_cast<std::size_t>(k)].tokens();
            }
            CHECK(with - base == (reps - 1) * rep);
        }
    }
}

TEST_CASE("default layout structure") {
    const ScheduleConfig c;
    const auto l = build_layout(c);
    CHECK(l == build_layout(c));
    REQUIRE(l.pyramids.size() == 3);
    CHECK(l.pyramids[0].kind == PyramidKind::image);
    for (const auto& s : l.pyramids[0].scales) {
        CHECK(s.t == 1);
    }
    for (std::size_t p = 1; p < 3; ++p) {
        CHECK(l.pyramids[p].kind == PyramidKind::clip);
        CHECK(l.pyramids[p].clip_index == static_cast<int>(p));
        for (const auto& s : l.pyramids[p].scales) {
            CHECK(s.t == 4);
        }
        // spatial size non-decreasing over the non-repeat tuples
        int last = 0;
        for (const auto& s : l.pyramids[p].scales) {
            if (!s.is_repeat) {
                CHECK(s.area() >= last);
                last = static_cast<int>(s.area());
            }
        }
    }
    // offsets contiguous from 0
    std::int64_t off = 0;
    for (const auto& b : l.flat_blocks) {
        CHECK(b.offset == off);
        CHECK(b.tokens == l.tuple_of(b).tokens());
        off += b.tokens;
    }
    CHECK(off == l.total_tokens());
    CHECK(l.total_tokens() == 1210);
    CHECK(token_counts(l).clips == std::vector<std::int64_t>{540, 540});
}

TEST_CASE("bitwidth split by area") {
    const ScheduleConfig c;
    CHECK(bitwidth_for_area(c, 1) == 16);
    CHECK(bitwidth_for_area(c, 9) == 16);
    CHECK(bitwidth_for_area(c, 16) == 32);
    CHECK(bitwidth_for_area(c, 64) == 32);
}

TEST_CASE("image-only layout") {
    auto c = small(0, 1, 0);
    const auto l = build_layout(c);
    CHECK(l.pyramids.size() == 1);
    CHECK(token_counts(l).total == token_counts(l).image);
    CHECK(token_counts(l).total == 21);
}

TEST_CASE("pseudo-spacetime layout") {
    ScheduleConfig c;
    c.ladder = {{1, 1}, {2, 2}};
    c.t_latent = 8;
    c.n_clips = 1;
    c.k_s = 0;
    c.reps = 1;
    const auto l = pseudo_spacetime_layout(c);
    REQUIRE(l.pyramids.size() == 1);
    CHECK(sizes(l.pyramids[0]) == std::vector<std::int64_t>{8, 32});
    c.n_clips = 2;
    CHECK_THROWS_AS(pseudo_spacetime_layout(c), ConfigError);

    // without repetition one long pyramid costs the same as image + clip
    ScheduleConfig flat;
    flat.n_clips = 1;
    flat.k_s = 0;
    flat.reps = 1;
    ScheduleConfig ps = flat;
    ps.t_latent = flat.t_latent + 1;
    CHECK(pseudo_spacetime_layout(ps).total_tokens() == build_layout(flat).total_tokens());
    // repeated small scales are paid once per pyramid, so the counts differ
    ScheduleConfig toy;
    toy.n_clips = 1;
    ps = toy;
    ps.t_latent = toy.t_latent + 1;
    CHECK(pseudo_spacetime_layout(ps).total_tokens() != build_layout(toy).total_tokens());
}

TEST_CASE("schedule validation") {
    ScheduleConfig c;
    c.ladder = {{2, 2}, {1, 1}};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ScheduleConfig{};
    c.t_latent = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ScheduleConfig{};
    c.k_s = 9;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ScheduleConfig{};
    c.reps = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_NOTHROW(ScheduleConfig{}.validate());
}

TEST_CASE("large-scale clip schedule") {
    // 80 frames at 4x temporal compression, 12 repeated scales, 3 copies
    ScheduleConfig c;
    c.ladder.clear();
    for (int i = 1; i <= 16; ++i) {
        c.ladder.push_back({i, i});
    }
    c.t_latent = 80 / 4;
    c.k_s = 12;
    c.reps = 3;
    const auto s = clip_schedule(c, c.t_latent);
    CHECK(s.size() == 16 + 2 * 12);
    for (const auto& t : s) {
        CHECK(t.t == 20);
    }
}

TEST_CASE("restrict_blocks recomputes offsets") {
    const auto l = build_layout(small(0, 1));
    std::vector<std::vector<bool>> keep{{true, true, true}, {true, false, true}};
    const auto b = restrict_blocks(l, keep);
    REQUIRE(b.size() == 5);
    std::vector<std::int64_t> off;
    for (const auto& x : b) {
        off.push_back(x.offset);
    }
    CHECK(off == std::vector<std::int64_t>{0, 1, 5, 21, 25});
    CHECK(b.back().scale == 2);
}
