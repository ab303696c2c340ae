// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "stpyr/bsq.hpp"
#include "stpyr/errors.hpp"

using namespace stpyr;
using testing_support::random_volume;

namespace {

ScaleSchedule full_res_schedule(int n, int d) {
    return ScaleSchedule(static_cast<std::size_t>(n), ScaleTuple{1, 3, 3, d, false});
}

ScaleAdapters identity_adapters(std::size_t n, int d) {
    return ScaleAdapters(n, ChannelAdapter::identity(d));
}

}  // namespace

TEST_CASE("fixed point of the quantizer") {
    LatentVolume v(4, 1, 1, 1);
    const double x[4] = {0.5, -0.5, 0.5, -0.5};
    for (int c = 0; c < 4; ++c) {
        v.at(c, 0, 0, 0) = x[c];
    }
    const auto q = quantize_block(v, 4);
    CHECK(q.codes.bit(0, 0));
    CHECK_FALSE(q.codes.bit(0, 1));
    CHECK(q.codes.bit(0, 2));
    CHECK_FALSE(q.codes.bit(0, 3));
    CHECK(q.codes.code(0) == 0b0101);
    CHECK(q.dequantized == v);
}

TEST_CASE("zero vector maps to the all-ones code") {
    const LatentVolume v(4, 1, 1, 2, 0.0);
    const auto q = quantize_block(v, 4);
    CHECK(q.codes.code(0) == 0b1111);
    CHECK(q.codes.code(1) == 0b1111);
    for (double x : q.dequantized.data()) {
        CHECK(x == 0.5);
    }
}

TEST_CASE("sign quantization equals exhaustive nearest codeword") {
    Rng rng(1);
    for (int b : {1, 2, 3, 5, 8, 10}) {
        const auto v = random_volume(b, 1, 10, 10, rng);
        const auto q = quantize_block(v, b);
        std::vector<double> x(static_cast<std::size_t>(b));
        for (int p = 0; p < 100; ++p) {
            for (int c = 0; c < b; ++c) {
                x[static_cast<std::size_t>(c)] = v.at(c, 0, p / 10, p % 10);
            }
            CHECK(q.codes.code(p) == oracle::nearest_codeword(x));
        }
    }
}

TEST_CASE("dequantized vectors have unit norm and quantization is idempotent") {
    Rng rng(2);
    const auto v = random_volume(6, 2, 3, 3, rng);
    const auto q = quantize_block(v, 6);
    for (std::int64_t p = 0; p < q.dequantized.positions(); ++p) {
        double n = 0.0;
        for (int c = 0; c < 6; ++c) {
            const double y = q.dequantized.data()[static_cast<std::size_t>(c) * q.dequantized.channel_stride() +
                                                  static_cast<std::size_t>(p)];
            n += y * y;
        }
        CHECK(n == doctest::Approx(1.0).epsilon(1e-14));
    }
    const auto again = quantize_block(q.dequantized, 6);
    CHECK(again.codes == q.codes);
    CHECK(again.dequantized == q.dequantized);
}

TEST_CASE("all-zero code dequantizes to -1/sqrt(b)") {
    const BitTensor z(1, 2, 2, 4);
    const auto d = dequantize_block(z, 4);
    for (double x : d.data()) {
        CHECK(x == -0.5);
    }
}

TEST_CASE("bit tensor packing") {
    Rng rng(3);
    BitTensor t(2, 3, 3, 13);
    CHECK(t.bytes().size() == 2u * 18);
    for (std::int64_t p = 0; p < t.positions(); ++p) {
        t.set_code(p, rng.below(1u << 13));
    }
    const auto copy = BitTensor::from_bytes(2, 3, 3, 13, {t.bytes().begin(), t.bytes().end()});
    CHECK(copy == t);
    CHECK_THROWS_AS(BitTensor::from_bytes(2, 3, 3, 13, std::vector<std::uint8_t>(5)), FormatError);

    std::vector<PyramidCodes> file{{ScaleSchedule{{2, 3, 3, 13, false}}, SqdMask::all(1), {t}}};
    std::stringstream ss;
    write_token_file(ss, file);
    CHECK(read_token_file(ss) == file);
    std::stringstream bad("XXXX");
    CHECK_THROWS_AS(read_token_file(bad), FormatError);
}

TEST_CASE("single full-resolution scale reconstructs codewords exactly") {
    const int d = 4;
    Rng rng(4);
    const auto f = quantize_block(random_volume(d, 1, 3, 3, rng), d).dequantized;
    const auto sched = full_res_schedule(1, d);
    const auto ad = identity_adapters(1, d);
    const auto codes = encode_pyramid(f, sched, SqdMask::all(1), ad);
    CHECK(decode_pyramid(codes, sched, SqdMask::all(1), ad, d, 3, 3) == f);
    const auto loss = quantizer_loss(f, codes, sched, SqdMask::all(1), ad, 10.0);
    CHECK(loss.commitment == 0.0);
}

TEST_CASE("empty prefix decodes to zero") {
    const auto sched = full_res_schedule(2, 4);
    const auto z = decode_pyramid({}, sched, SqdMask::all(2), identity_adapters(2, 4), 4, 3, 3);
    for (double x : z.data()) {
        CHECK(x == 0.0);
    }
}

TEST_CASE("dropped trailing scale gives the prefix encoding") {
    ScheduleConfig sc;
    sc.n_clips = 1;
    const auto sched = clip_schedule(sc, sc.t_latent);
    const int d = 40;
    const Tokenizer tok = Tokenizer::create(d, sc);
    Rng rng(5);
    const auto f = random_volume(d, sc.t_latent, 8, 8, rng);
    const auto all = encode_pyramid(f, sched, SqdMask::all(sched.size()), tok.clip_adapters);
    SqdMask drop = SqdMask::all(sched.size());
    drop.retained.back() = false;
    const auto some = encode_pyramid(f, sched, drop, tok.clip_adapters);
    REQUIRE(some.size() == all.size() - 1);
    for (std::size_t i = 0; i < some.size(); ++i) {
        CHECK(some[i] == all[i]);
    }
}

TEST_CASE("full-resolution residual error is non-increasing") {
    const int d = 8;
    Rng rng(6);
    const auto sched = full_res_schedule(6, d);
    const auto ad = identity_adapters(6, d);
    for (int trial = 0; trial < 5; ++trial) {
        const auto f = random_volume(d, 1, 3, 3, rng, 3.0);
        const auto codes = encode_pyramid(f, sched, SqdMask::all(6), ad);
        double prev = f.squared_norm();
        for (std::size_t k = 1; k <= 6; ++k) {
            const auto rec = decode_pyramid(std::span(codes).subspan(0, k), sched, SqdMask::all(6), ad, d, 3, 3);
            const double err = (f - rec).squared_norm();
            CHECK(err <= prev + 1e-12);
            prev = err;
        }
    }
}

TEST_CASE("residuals telescope") {
    ScheduleConfig sc;
    sc.n_clips = 1;
    const auto sched = clip_schedule(sc, sc.t_latent);
    const Tokenizer tok = Tokenizer::create(40, sc);
    Rng rng(7);
    const auto f = random_volume(40, sc.t_latent, 8, 8, rng);
    const auto codes = encode_pyramid(f, sched, SqdMask::all(sched.size()), tok.clip_adapters);
    LatentVolume acc(40, sc.t_latent, 8, 8);
    for (std::size_t k = 0; k < codes.size(); ++k) {
        accumulate_block(acc, codes[k], tok.clip_adapters[k], ResizeMode::bilinear);
    }
    CHECK(acc == decode_pyramid(codes, sched, SqdMask::all(sched.size()), tok.clip_adapters, 40, 8, 8));
    CHECK(encode_pyramid(f, sched, SqdMask::all(sched.size()), tok.clip_adapters) == codes);
}

TEST_CASE("stochastic depth sampling") {
    Rng rng(8);
    CHECK(sample_sqd(6, 2, 0.0, rng) == SqdMask::all(6));
    const auto one = sample_sqd(6, 2, 1.0, rng);
    CHECK(one.retained == std::vector<bool>{true, true, true, true, false, false});
    int dropped[2] = {0, 0};
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto m = sample_sqd(6, 2, 0.5, rng);
        dropped[0] += !m.retained[4];
        dropped[1] += !m.retained[5];
        for (int k = 0; k < 4; ++k) {
            CHECK(m.retained[static_cast<std::size_t>(k)]);
        }
    }
    CHECK(std::abs(dropped[0] / double(n) - 0.5) < 0.02);
    CHECK(std::abs(dropped[1] / double(n) - 0.5) < 0.02);
}

TEST_CASE("entropy penalty") {
    Rng rng(9);
    const int b = 4, n = 1000;
    std::vector<double> u(static_cast<std::size_t>(n * b));
    for (auto& x : u) {
        x = 0.5 * rng.normal();
    }
    CHECK(soft_bit_entropy_penalty(u, b, 10.0) ==
          doctest::Approx(oracle::entropy_penalty_histogram(u, b, 10.0)).epsilon(1e-6));
    CHECK(soft_bit_entropy_penalty(u, b, 10.0) <= 0.0);
    // identical codes everywhere: the batch term collapses and the penalty is maximal
    std::vector<double> same(static_cast<std::size_t>(n * b));
    for (std::size_t i = 0; i < same.size(); ++i) {
        same[i] = (i % 2 ? -0.5 : 0.5);
    }
    CHECK(soft_bit_entropy_penalty(same, b, 10.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(soft_bit_entropy_penalty(same, b, 10.0) > soft_bit_entropy_penalty(u, b, 10.0));
}

TEST_CASE("adapters and tokenizer shapes") {
    CHECK(ChannelAdapter::for_bitwidth(8, 8).is_identity());
    const auto t = ChannelAdapter::for_bitwidth(8, 4);
    CHECK(t.down.size() == 32);
    CHECK(t.up.size() == 32);
    const ScheduleConfig sc;
    const Tokenizer tok = Tokenizer::create(96, sc);
    CHECK(tok.image_adapters.size() == sc.ladder.size());
    CHECK(tok.clip_adapters.size() == clip_schedule(sc, sc.t_latent).size());
    CHECK(tok.parameter_count() > 0);
    CHECK_THROWS(quantize_block(LatentVolume(4, 1, 1, 1), 8));
}
