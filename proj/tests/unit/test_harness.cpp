// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "stpyr/config.hpp"
#include "stpyr/errors.hpp"
#include "stpyr/experiments.hpp"
#include "stpyr/patch.hpp"
#include "stpyr/synth.hpp"
#include "stpyr/tokenizer_train.hpp"

using namespace stpyr;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path temp_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("stpyr_unit_" + name);
    fs::remove_all(d);
    return d;
}

}  // namespace

TEST_CASE("shape motion matches a step-by-step walk") {
    SceneTemplate tmpl;
    tmpl.frames = 40;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto scene = random_scene(tmpl, seed);
        for (const auto& s : scene.shapes) {
            const auto xs = oracle::reflect_walk(s.x, s.vx, scene.width - s.box_width(), scene.frames);
            const auto ys = oracle::reflect_walk(s.y, s.vy, scene.height - s.box_height(), scene.frames);
            for (int f = 0; f < scene.frames; ++f) {
                const auto [x, y] = shape_position(s, f, scene.height, scene.width);
                CHECK(x == doctest::Approx(xs[static_cast<std::size_t>(f)]).epsilon(1e-9));
                CHECK(y == doctest::Approx(ys[static_cast<std::size_t>(f)]).epsilon(1e-9));
                CHECK(x >= 0.0);
                CHECK(x <= scene.width - s.box_width());
            }
        }
    }
}

TEST_CASE("rendering is deterministic and captions use the vocabulary") {
    SceneTemplate tmpl;
    const auto a = render(random_scene(tmpl, 5));
    const auto b = render(random_scene(tmpl, 5));
    CHECK(a == b);
    CHECK(a.frames == 17);
    const auto& vocab = caption_vocabulary();
    const std::set<std::string> words(vocab.begin(), vocab.end());
    for (std::uint64_t s = 0; s < 50; ++s) {
        std::istringstream is(caption(random_scene(tmpl, s)));
        for (std::string w; is >> w;) {
            CHECK(words.count(w) == 1);
        }
    }
    const auto ids = encode_caption("red square moves right", 6);
    CHECK(ids.size() == 6);
    CHECK(ids[4] == 0);
    CHECK_THROWS_AS(encode_caption("purple square", 4), ConfigError);
}

TEST_CASE("dataset files are byte-identical across runs") {
    SceneTemplate tmpl;
    const auto d1 = temp_dir("ds1"), d2 = temp_dir("ds2");
    const auto items = render_dataset(tmpl, 3, 11, d1);
    render_dataset(tmpl, 3, 11, d2);
    CHECK(items.size() == 3);
    for (const auto& e : fs::directory_iterator(d1)) {
        CHECK(slurp(e.path()) == slurp(d2 / e.path().filename()));
    }
    std::ifstream is(d1 / items[0].file, std::ios::binary);
    CHECK(read_raw_video(is) == render(items[0].scene));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("raw video format") {
    RawVideo v(2, 4, 4);
    v.at(1, 3, 2, 1) = 200;
    std::stringstream ss;
    write_raw_video(ss, v);
    CHECK(ss.str().substr(0, 4) == "ISRV");
    CHECK(read_raw_video(ss) == v);
    std::stringstream bad("ISRVxx");
    CHECK_THROWS_AS(read_raw_video(bad), FormatError);
}

TEST_CASE("fixed patchify is exactly invertible") {
    SceneTemplate tmpl;
    tmpl.frames = 4;
    const auto v = render(random_scene(tmpl, 2));
    const PatchTransform t(2, 4, 4);
    const auto z = t.patchify(v);
    CHECK(z.channels() == 96);
    CHECK(z.frames() == 2);
    CHECK(z.height() == 8);
    CHECK(t.unpatchify(z) == v);
    CHECK_THROWS_AS(PatchTransform(2, 5, 4).patchify(v), ShapeError);
    CHECK(std::isinf(video_psnr(v, v)));
}

TEST_CASE("learned patch basis is orthonormal") {
    SceneTemplate tmpl;
    tmpl.frames = 4;
    std::vector<RawVideo> vids;
    for (int i = 0; i < 4; ++i) {
        vids.push_back(render(random_scene(tmpl, static_cast<std::uint64_t>(i))));
    }
    const auto t = PatchTransform::fit_learned(2, 4, 4, vids);
    CHECK(t.mode() == PatchMode::learned);
    const auto& b = t.basis();
    const int d = t.latent_dim();
    for (int i = 0; i < d; i += 7) {
        for (int j = 0; j < d; j += 5) {
            double dot = 0.0;
            for (int k = 0; k < d; ++k) {
                dot += b[static_cast<std::size_t>(i * d + k)] * b[static_cast<std::size_t>(j * d + k)];
            }
            CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));
        }
    }
    CHECK(t.unpatchify(t.patchify(vids[0])) == vids[0]);
}

TEST_CASE("pyramid frame selection") {
    ScheduleConfig c;
    const auto l = build_layout(c);
    const auto frames = pyramid_frames(l, 2);
    REQUIRE(frames.size() == 3);
    CHECK(frames[0] == std::vector<int>{0, 0});
    CHECK(frames[1].front() == 1);
    CHECK(frames[2].front() == 9);
    CHECK(required_frames(l, 2) == 17);
}

TEST_CASE("config parsing") {
    const ExperimentConfig def;
    CHECK(parse_config(def.canonical()).canonical() == def.canonical());
    CHECK(parse_config(def.canonical()).hash() == def.hash());
    const auto c = parse_config("# comment\nseed = 7\nschedule.ladder = 1x1,2x2,4x4\ndata.height = 16\ndata.width = 16\ninteract.stride = sqrt32\n"
                                "train.variant = preceding_only\n\n");
    CHECK(c.seed == 7);
    CHECK(c.schedule.ladder.size() == 3);
    CHECK(c.interact.stride == doctest::Approx(std::sqrt(32.0)));
    CHECK(c.train.variant.variant == MaskVariant::preceding_only);
    CHECK(c.hash() != def.hash());
    try {
        parse_config("seed = 1\nmodel.nope = 2\n", "x.cfg");
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("x.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("seed = 1\nseed = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("train.steps = many\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("no equals sign\n"), ConfigError);
    // latent grid must match the top of the ladder
    CHECK_THROWS_AS(parse_config("patch.ph = 8\n").validate(), ConfigError);
    CHECK_NOTHROW(def.validate());
    const auto mc = def.model_config();
    CHECK(mc.latent_dim == 96);
    CHECK(mc.bitwidths == std::vector<int>{16, 32});
}

TEST_CASE("adapter training lowers the loss deterministically") {
    ScheduleConfig sc;
    sc.n_clips = 1;
    const int d = 40;
    Rng rng(3);
    std::vector<PyramidSample> data;
    for (int i = 0; i < 4; ++i) {
        LatentVolume f(d, sc.t_latent, 8, 8);
        for (auto& x : f.data()) {
            x = rng.normal();
        }
        data.push_back({PyramidKind::clip, f});
    }
    TokenizerTrainConfig tc;
    tc.steps = 40;
    Tokenizer a = Tokenizer::create(d, sc);
    const Tokenizer before = a;
    const auto log = train_tokenizer(a, sc, data, tc);
    REQUIRE(log.size() == 40);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 5; ++i) {
        first += log[static_cast<std::size_t>(i)].loss.reconstruction;
        last += log[log.size() - 1 - static_cast<std::size_t>(i)].loss.reconstruction;
    }
    CHECK(last < first);
    CHECK(a.image_adapters == before.image_adapters);  // no image samples, untouched
    CHECK_FALSE(a.clip_adapters == before.clip_adapters);
    Tokenizer b = Tokenizer::create(d, sc);
    train_tokenizer(b, sc, data, tc);
    CHECK(a == b);
}

TEST_CASE("metrics rows carry the config hash") {
    const auto dir = temp_dir("metrics");
    {
        MetricsWriter m(dir / "m.jsonl", "abc");
        m.write({{"kind", "x"}, {"v", 1}});
    }
    const auto line = slurp(dir / "m.jsonl");
    CHECK(line == "{\"config_hash\":\"abc\",\"kind\":\"x\",\"v\":1}\n");
    fs::remove_all(dir);
}

TEST_CASE("mask report reproduces the square-ladder counts") {
    const auto rows = mask_report(ExperimentConfig{});
    int found = 0;
    for (const auto& r : rows) {
        if (r["layout"] == "square_1pyr" && r["variant"] == "var_full") {
            CHECK(r["pairs"] == 147);
            ++found;
        }
        if (r["layout"] == "square_1pyr" && r["variant"] == "preceding_only") {
            CHECK(r["pairs"] == 49);
            ++found;
        }
        if (r["layout"] == "square_2pyr" && r["variant"] == "ssa:1") {
            CHECK(r["pairs"] == 420);
            ++found;
        }
    }
    CHECK(found == 3);
}

TEST_CASE("checkpoint save and load through the harness") {
    ExperimentConfig cfg;
    cfg.data.videos = 3;
    cfg.data.held_out = 1;
    cfg.tokenizer.steps = 3;
    const auto data = make_dataset(cfg, cfg.schedule.n_clips, 1);
    const auto tr = make_transform(cfg, data);
    MetricsWriter m;
    const auto tok = run_tokenizer_experiment(cfg, data, tr, true, m);
    CHECK(tok.prefix_psnr.size() == clip_schedule(cfg.schedule, cfg.schedule.t_latent).size());
    const auto params = init_params<float>(cfg.model_config(), 1);
    const auto dir = temp_dir("ck");
    save_checkpoint(dir / "a.isck", make_checkpoint(cfg, &params, tok.tokenizer, tr));
    const auto back = load_checkpoint(dir / "a.isck");
    CHECK(back.cfg.canonical() == cfg.canonical());
    REQUIRE(back.params.has_value());
    CHECK(back.params->values == params.values);
    CHECK(back.tokenizer == tok.tokenizer);
    fs::remove_all(dir);
}
