// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "stpyr/codec.hpp"
#include "stpyr/errors.hpp"

using namespace stpyr;
using testing_support::random_features;

namespace {

struct Fixture {
    ScheduleConfig sc = [] {
        ScheduleConfig c;
        c.ladder = {{1, 1}, {2, 2}, {4, 4}};
        c.n_clips = 1;
        c.k_s = 0;
        c.reps = 1;
        c.small_bits = 8;
        c.large_bits = 12;
        c.small_bits_area_threshold = 16;
        return c;
    }();
    VideoLayout layout = build_layout(sc);
    int d = 12;
    Tokenizer tok = Tokenizer::create(d, sc);
};

}  // namespace

TEST_CASE("flip_p = 0 matches plain pyramid encoding") {
    Fixture f;
    Rng rng(1);
    for (int i = 0; i < 10; ++i) {
        const auto feats = random_features(f.layout, f.d, rng);
        BscOptions opt;
        opt.flip_p = 0.0;
        const auto out = encode_with_bsc(feats, f.layout, f.tok, rng, opt);
        std::vector<BitTensor> expect;
        for (std::size_t p = 0; p < feats.size(); ++p) {
            const auto& pyr = f.layout.pyramids[p];
            const auto c = encode_pyramid(feats[p], pyr.scales, SqdMask::all(pyr.scales.size()),
                                          f.tok.adapters_for(pyr.kind));
            expect.insert(expect.end(), c.begin(), c.end());
        }
        CHECK(out.labels == expect);
        CHECK(out.labels.size() == out.inputs.size());
        CHECK(out.initial_input.empty());
        // inputs are clean prefix reconstructions sized for the next block
        for (std::size_t j = 0; j + 1 < out.blocks.size(); ++j) {
            const auto& next = f.layout.tuple_of(out.blocks[j + 1]);
            CHECK(out.inputs[j].frames() == next.t);
            CHECK(out.inputs[j].height() == next.h);
            CHECK(out.inputs[j].width() == next.w);
        }
        CHECK(out.inputs.back().empty());
    }
}

TEST_CASE("labels are defined against the corrupted history") {
    Fixture f;
    Rng data_rng(2);
    const auto feats = random_features(f.layout, f.d, data_rng);
    for (double p : {0.1, 0.5, 1.0}) {
        Rng rng(3);
        CodecTrace trace;
        BscOptions opt;
        opt.flip_p = p;
        opt.trace = &trace;
        const auto out = encode_with_bsc(feats, f.layout, f.tok, rng, opt);
        REQUIRE(trace.history.size() == out.blocks.size());
        for (std::size_t j = 0; j < out.blocks.size(); ++j) {
            const auto& b = out.blocks[j];
            const auto& s = f.layout.tuple_of(b);
            const auto& ad = f.tok.adapters_for(f.layout.pyramid_of(b).kind)[static_cast<std::size_t>(b.scale)];
            const auto r = resize_spatial(feats[static_cast<std::size_t>(b.pyramid)] - trace.history[j], s.h, s.w);
            CHECK(quantize_block(r, s.bitwidth, &ad).codes == out.labels[j]);
        }
        Rng again(3);
        CHECK(encode_with_bsc(feats, f.layout, f.tok, again, opt).labels == out.labels);
    }
}

TEST_CASE("flip_p = 1 inverts every bit fed forward") {
    Fixture f;
    Rng rng(4);
    const auto feats = random_features(f.layout, f.d, rng);
    CodecTrace trace;
    BscOptions opt;
    opt.flip_p = 1.0;
    opt.trace = &trace;
    const auto out = encode_with_bsc(feats, f.layout, f.tok, rng, opt);
    // history of block 1 is exactly the dequantized complement of label 0
    BitTensor inv = out.labels[0];
    for (std::int64_t p = 0; p < inv.positions(); ++p) {
        for (int i = 0; i < inv.bitwidth(); ++i) {
            inv.flip_bit(p, i);
        }
    }
    LatentVolume acc(f.d, 1, 4, 4);
    accumulate_block(acc, inv, f.tok.image_adapters[0], ResizeMode::bilinear);
    CHECK(trace.history[1] == acc);
}

TEST_CASE("empirical flip rate") {
    Rng rng(5);
    BitTensor t(1, 100, 100, 12);
    const auto flipped = random_flip(t, 0.1, rng);
    std::int64_t n = 0;
    for (std::int64_t p = 0; p < t.positions(); ++p) {
        for (int i = 0; i < 12; ++i) {
            n += flipped.bit(p, i);
        }
    }
    CHECK(std::abs(static_cast<double>(n) / 120000.0 - 0.1) < 0.01);
    Rng again(5);
    CHECK(random_flip(t, 0.1, again) == flipped);
}

TEST_CASE("flatten offsets and round trip") {
    ScheduleConfig sc;
    sc.ladder = {{1, 1}, {2, 2}, {4, 4}};
    sc.n_clips = 1;
    sc.k_s = 0;
    sc.reps = 1;
    const auto layout = build_layout(sc);
    const Tokenizer tok = Tokenizer::create(40, sc);
    Rng rng(6);
    const auto feats = random_features(layout, 40, rng);
    BscOptions opt;
    const auto out = encode_with_bsc(feats, layout, tok, rng, opt);
    const auto seq = flatten(out, layout);
    CHECK(seq.boundaries == std::vector<std::int64_t>{0, 1, 5, 21, 25, 41, 105});
    CHECK(unflatten(seq) == out.labels);

    // drop the middle clip scale: later blocks shift down
    std::vector<SqdMask> masks{SqdMask::all(3), SqdMask{{true, false, true}}};
    opt.sqd = masks;
    const auto drop = encode_with_bsc(feats, layout, tok, rng, opt);
    const auto s2 = flatten(drop, layout);
    CHECK(s2.boundaries == std::vector<std::int64_t>{0, 1, 5, 21, 25, 89});
    CHECK(unflatten(s2) == drop.labels);
}

TEST_CASE("reconstruct matches per-pyramid decoding") {
    Fixture f;
    Rng rng(7);
    const auto feats = random_features(f.layout, f.d, rng);
    BscOptions opt;
    opt.flip_p = 0.0;
    const auto out = encode_with_bsc(feats, f.layout, f.tok, rng, opt);
    const auto coarse = reconstruct(out.labels, out.blocks, f.layout, f.tok, 0);
    REQUIRE(coarse.size() == 1);
    CHECK(coarse[0] == decode_pyramid(std::span(out.labels).subspan(0, 1), f.layout.pyramids[0].scales,
                                      SqdMask::all(3), f.tok.image_adapters, f.d, 4, 4));
    const auto all = reconstruct(out.labels, out.blocks, f.layout, f.tok, out.blocks.size() - 1);
    REQUIRE(all.size() == 2);
    CHECK(all[0] == out.reconstructions[0]);
    CHECK(all[1] == out.reconstructions[1]);
    CHECK_THROWS_AS(reconstruct(out.labels, out.blocks, f.layout, f.tok, out.blocks.size()), ShapeError);
}

TEST_CASE("image accumulation feeds the first clip block") {
    Fixture f;
    const auto& next = f.layout.pyramids[1].scales[0];
    LatentVolume img(f.d, 1, 4, 4, 1.5);
    const auto in = next_block_input(img, next, ResizeMode::bilinear);
    CHECK(in.frames() == next.t);
    CHECK(in.height() == next.h);
    for (double x : in.data()) {
        CHECK(x == doctest::Approx(1.5));
    }
}

TEST_CASE("codec errors and training-pair files") {
    Fixture f;
    Rng rng(8);
    auto feats = random_features(f.layout, f.d, rng);
    BscOptions opt;
    opt.flip_p = 1.5;
    CHECK_THROWS_AS(encode_with_bsc(feats, f.layout, f.tok, rng, opt), ConfigError);
    opt.flip_p = 0.1;
    feats.pop_back();
    CHECK_THROWS_AS(encode_with_bsc(feats, f.layout, f.tok, rng, opt), ShapeError);
    feats = random_features(f.layout, f.d, rng);
    const auto out = encode_with_bsc(feats, f.layout, f.tok, rng, opt);
    std::stringstream ss;
    write_training_pair(ss, out, f.layout);
    const auto pair = read_training_pair(ss);
    REQUIRE(pair.labels.size() == 2);
    CHECK(pair.inputs.size() == out.inputs.size() - 1);
    CHECK(pair.inputs[2] == out.inputs[2]);
}
