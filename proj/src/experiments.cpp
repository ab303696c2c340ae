// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/experiments.hpp"

#include <chrono>
#include <cmath>

#include "stpyr/errors.hpp"

namespace stpyr {

MetricsWriter::MetricsWriter(const std::filesystem::path& path, std::string config_hash) : hash_(std::move(config_hash)) {
    if (!path.empty()) {
        if (path.has_parent_path()) {
            std::filesystem::create_directories(path.parent_path());
        }
        out_.open(path, std::ios::binary);
        if (!out_) {
            throw ConfigError("cannot open metrics file " + path.string());
        }
    }
}

void MetricsWriter::write(nlohmann::ordered_json row) {
    nlohmann::ordered_json full;
    full["config_hash"] = hash_;
    for (auto it = row.begin(); it != row.end(); ++it) {
        full[it.key()] = it.value();
    }
    if (out_.is_open()) {
        out_ << full.dump() << "\n";
        out_.flush();
    }
    rows_.push_back(std::move(full));
}

Dataset make_dataset(const ExperimentConfig& cfg, int n_clips, std::uint64_t seed) {
    ScheduleConfig sc = cfg.schedule;
    sc.n_clips = n_clips;
    const VideoLayout layout = build_layout(sc);
    SceneTemplate tmpl;
    tmpl.height = cfg.data.height;
    tmpl.width = cfg.data.width;
    tmpl.max_shapes = cfg.data.max_shapes;
    tmpl.frames = required_frames(layout, cfg.patch.pt);
    Dataset d;
    d.items = render_dataset(tmpl, cfg.data.videos, seed);
    for (const auto& it : d.items) {
        d.videos.push_back(render(it.scene));
        d.text.push_back(encode_caption(it.caption, cfg.model.text_len));
    }
    d.n_train = cfg.data.videos - cfg.data.held_out;
    return d;
}

PatchTransform make_transform(const ExperimentConfig& cfg, const Dataset& data) {
    if (cfg.patch.mode == PatchMode::fixed) {
        return PatchTransform(cfg.patch.pt, cfg.patch.ph, cfg.patch.pw);
    }
    return PatchTransform::fit_learned(cfg.patch.pt, cfg.patch.ph, cfg.patch.pw,
                                       std::span<const RawVideo>(data.videos).subspan(0, static_cast<std::size_t>(data.n_train)));
}

std::vector<std::vector<LatentVolume>> dataset_features(const PatchTransform& t, const Dataset& data,
                                                        const VideoLayout& layout) {
    std::vector<std::vector<LatentVolume>> out;
    for (const auto& v : data.videos) {
        out.push_back(pyramid_features(t, v, layout));
    }
    return out;
}

std::vector<double> prefix_psnr_curve(const Tokenizer& tok, const ScaleSchedule& schedule,
                                      const std::vector<LatentVolume>& features) {
    std::vector<double> curve(schedule.size(), 0.0);
    if (features.empty()) {
        return curve;
    }
    const auto all = SqdMask::all(schedule.size());
    for (const auto& f : features) {
        const auto codes = encode_pyramid(f, schedule, all, tok.clip_adapters, tok.resize_mode);
        for (std::size_t k = 1; k <= codes.size(); ++k) {
            const auto rec = decode_pyramid(std::span<const BitTensor>(codes).subspan(0, k), schedule, all,
                                            tok.clip_adapters, tok.latent_dim, f.height(), f.width(), tok.resize_mode);
            curve[k - 1] += psnr(f, rec, 2.0);
        }
    }
    for (auto& v : curve) {
        v /= static_cast<double>(features.size());
    }
    return curve;
}

namespace {

void round_to_f32(Tokenizer& tok) {
    for (auto* set : {&tok.image_adapters, &tok.clip_adapters}) {
        for (auto& a : *set) {
            for (auto* m : {&a.down, &a.up}) {
                for (auto& x : *m) {
                    x = static_cast<double>(static_cast<float>(x));
                }
            }
        }
    }
}

}  // namespace

TokenizerRun run_tokenizer_experiment(const ExperimentConfig& cfg, const Dataset& data, const PatchTransform& transform,
                                      bool sqd, MetricsWriter& metrics) {
    ScheduleConfig sc = cfg.schedule;
    sc.n_clips = std::max(1, sc.n_clips);
    const VideoLayout layout = build_layout(sc);
    std::vector<PyramidSample> samples;
    std::vector<LatentVolume> held_out;
    for (std::size_t i = 0; i < data.videos.size(); ++i) {
        const auto feats = pyramid_features(transform, data.videos[i], layout);
        for (std::size_t p = 0; p < feats.size(); ++p) {
            const auto kind = layout.pyramids[p].kind;
            if (static_cast<int>(i) < data.n_train) {
                samples.push_back(PyramidSample{kind, feats[p]});
            } else if (kind == PyramidKind::clip) {
                held_out.push_back(feats[p]);
            }
        }
    }
    TokenizerRun run;
    run.tokenizer = Tokenizer::create(transform.latent_dim(), cfg.schedule, cfg.resize_mode);
    TokenizerTrainConfig tc = cfg.tokenizer;
    tc.sqd = sqd;
    tc.seed = cfg.seed;
    const int every = std::max(1, tc.steps / 30);
    train_tokenizer(run.tokenizer, cfg.schedule, samples, tc, [&](const TokenizerTrainLog& log) {
        if (log.step % every == 0 || log.step + 1 == tc.steps) {
            metrics.write({{"kind", "tokenizer_step"},
                           {"sqd", sqd},
                           {"step", log.step},
                           {"loss", log.loss.total},
                           {"reconstruction", log.loss.reconstruction},
                           {"commitment", log.loss.commitment},
                           {"entropy", log.loss.entropy}});
        }
    });
    round_to_f32(run.tokenizer);
    run.prefix_psnr = prefix_psnr_curve(run.tokenizer, layout.pyramids.back().scales, held_out);
    metrics.write({{"kind", "prefix_psnr"}, {"sqd", sqd}, {"held_out", held_out.size()}, {"psnr", run.prefix_psnr}});
    return run;
}

ExampleSource::ExampleSource(const ExperimentConfig& cfg, const Tokenizer& tok, const VideoLayout& layout,
                             std::vector<std::vector<LatentVolume>> features, std::vector<std::vector<int>> text)
    : cfg_(&cfg), tok_(&tok), layout_(layout), features_(std::move(features)), text_(std::move(text)) {
    if (features_.size() != text_.size()) {
        throw ShapeError("ExampleSource: one caption per video required");
    }
}

TrainExample ExampleSource::make(std::size_t video, Rng& rng, double flip_p, bool sqd) const {
    BscOptions opt;
    opt.flip_p = flip_p;
    std::vector<SqdMask> masks;
    if (sqd) {
        for (const auto& p : layout_.pyramids) {
            masks.push_back(sample_sqd(p.scales.size(), cfg_->tokenizer.sqd_n_droppable, cfg_->tokenizer.sqd_p, rng));
        }
        opt.sqd = masks;
    }
    const auto out = encode_with_bsc(features_[video], layout_, *tok_, rng, opt);
    return TrainExample{make_sequence(layout_, out, text_[video], {}, cfg_->train.variant), out.labels};
}

namespace {

template <typename MakeBatch>
TrainingRun train_loop(const ExperimentConfig& cfg, ModelParams<float> params, int steps, MetricsWriter& metrics,
                       const char* kind, const MakeBatch& make_batch) {
    TrainingRun run{std::move(params), {}};
    ModelTrainer<float> trainer(run.params, cfg.train.adam);
    auto t0 = std::chrono::steady_clock::now();
    std::int64_t tokens = 0;
    double loss_acc = 0.0;
    double acc_acc = 0.0;
    int count = 0;
    for (int step = 0; step < steps; ++step) {
        const std::vector<TrainExample> batch = make_batch(step);
        for (const auto& ex : batch) {
            tokens += ex.seq.n_content();
        }
        run.last = trainer.step(batch);
        loss_acc += run.last.loss;
        acc_acc += run.last.accuracy;
        ++count;
        if ((step + 1) % cfg.train.log_every == 0 || step + 1 == steps) {
            const auto t1 = std::chrono::steady_clock::now();
            const double secs = std::chrono::duration<double>(t1 - t0).count();
            metrics.write({{"kind", kind},
                           {"step", step + 1},
                           {"loss", loss_acc / count},
                           {"accuracy", acc_acc / count},
                           {"tokens_per_sec", secs > 0 ? static_cast<double>(tokens) / secs : 0.0}});
            t0 = t1;
            tokens = 0;
            loss_acc = acc_acc = 0.0;
            count = 0;
        }
    }
    return run;
}

}  // namespace

TrainingRun run_training(const ExperimentConfig& cfg, const ExampleSource& source, ModelParams<float> params,
                         int steps, MetricsWriter& metrics) {
    if (source.size() == 0) {
        throw ConfigError("run_training: no training videos");
    }
    const Rng root(cfg.seed ^ 0x7261696eull);
    return train_loop(cfg, std::move(params), steps, metrics, "train", [&](int step) {
        Rng rng = root.fork(static_cast<std::uint64_t>(step));
        std::vector<TrainExample> batch;
        for (int b = 0; b < cfg.train.batch; ++b) {
            const auto v = static_cast<std::size_t>(rng.below(source.size()));
            batch.push_back(source.make(v, rng, cfg.bsc_flip_p, cfg.train.sqd));
        }
        return batch;
    });
}

LossStats evaluate(const ModelParams<float>& params, const ExampleSource& source, double flip_p, std::uint64_t seed) {
    LossStats total;
    double loss = 0.0;
    double acc = 0.0;
    const Rng root(seed);
    for (std::size_t i = 0; i < source.size(); ++i) {
        Rng rng = root.fork(i);
        const std::vector<TrainExample> one{source.make(i, rng, flip_p, false)};
        const auto st = loss_and_grad(params, std::span<const TrainExample>(one), nullptr);
        loss += st.loss * static_cast<double>(st.bits);
        acc += st.accuracy * static_cast<double>(st.bits);
        total.bits += st.bits;
    }
    if (total.bits > 0) {
        total.loss = loss / static_cast<double>(total.bits);
        total.accuracy = acc / static_cast<double>(total.bits);
    }
    return total;
}

Checkpoint make_checkpoint(const ExperimentConfig& cfg, const ModelParams<float>* params, const Tokenizer& tok,
                           const PatchTransform& transform) {
    Checkpoint ck;
    ck.config_echo = cfg.canonical();
    if (params != nullptr) {
        ck.blobs = param_blobs(*params);
    }
    const auto tb = tokenizer_blobs(tok);
    ck.blobs.insert(ck.blobs.end(), tb.begin(), tb.end());
    if (!transform.basis().empty()) {
        ck.blobs.push_back(Blob{"patch.basis", std::vector<float>(transform.basis().begin(), transform.basis().end())});
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot write " + path.string());
    }
    write_checkpoint(os, ck);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("cannot open checkpoint " + path.string());
    }
    const Checkpoint ck = read_checkpoint(is);
    LoadedCheckpoint out;
    out.cfg = parse_config(ck.config_echo, path.string() + " (config echo)");
    out.transform = PatchTransform(out.cfg.patch.pt, out.cfg.patch.ph, out.cfg.patch.pw);
    if (const Blob* b = ck.find("patch.basis")) {
        out.transform.set_basis(std::vector<double>(b->values.begin(), b->values.end()));
    }
    out.tokenizer = Tokenizer::create(out.transform.latent_dim(), out.cfg.schedule, out.cfg.resize_mode);
    load_tokenizer_blobs(out.tokenizer, ck.blobs);
    if (ck.find("model.sos") != nullptr) {
        out.params = params_from_blobs(out.cfg.model_config(), ck.blobs);
    }
    return out;
}

RawVideo decode_video(const PatchTransform& t, const std::vector<LatentVolume>& recon, const VideoLayout& layout) {
    std::vector<RawVideo> parts;
    int frames = 0;
    for (std::size_t p = 0; p < recon.size(); ++p) {
        RawVideo v = t.unpatchify(recon[p]);
        if (layout.pyramids[p].kind == PyramidKind::image) {
            v.frames = 1;
            v.rgb.resize(static_cast<std::size_t>(v.height) * v.width * 3);
        }
        frames += v.frames;
        parts.push_back(std::move(v));
    }
    if (parts.empty()) {
        throw ShapeError("decode_video: nothing to decode");
    }
    RawVideo out(frames, parts.front().height, parts.front().width);
    std::size_t off = 0;
    for (const auto& v : parts) {
        std::copy(v.rgb.begin(), v.rgb.end(), out.rgb.begin() + static_cast<std::ptrdiff_t>(off));
        off += v.rgb.size();
    }
    return out;
}

TrainingRun run_interactive_finetune(const ExperimentConfig& cfg, const Tokenizer& tok, const PatchTransform& transform,
                                     const Dataset& data, ModelParams<float> params, int steps, MetricsWriter& metrics) {
    ScheduleConfig sc = cfg.schedule;
    sc.n_clips = 2;
    const VideoLayout layout = build_layout(sc);
    struct Pair {
        LatentVolume prev, target, anchor;
        const std::vector<int>* text;
    };
    std::vector<Pair> pairs;
    for (int i = 0; i < data.n_train; ++i) {
        const auto feats = pyramid_features(transform, data.videos[static_cast<std::size_t>(i)], layout);
        Rng rng(0);
        BscOptions opt;
        opt.flip_p = 0.0;
        const std::vector<LatentVolume> head{feats[0], feats[1]};
        VideoLayout first = build_layout([&] {
            auto s = sc;
            s.n_clips = 1;
            return s;
        }());
        const auto out = encode_with_bsc(head, first, tok, rng, opt);
        pairs.push_back(Pair{out.reconstructions[1], feats[2], out.reconstructions[0],
                             &data.text[static_cast<std::size_t>(i)]});
    }
    if (pairs.empty()) {
        throw ConfigError("interactive fine-tune: no training videos");
    }
    const Rng root(cfg.seed ^ 0x696e7465ull);
    return train_loop(cfg, std::move(params), steps, metrics, "interact_finetune", [&](int step) {
        Rng rng = root.fork(static_cast<std::uint64_t>(step));
        std::vector<TrainExample> batch;
        for (int b = 0; b < cfg.train.batch; ++b) {
            const auto& p = pairs[static_cast<std::size_t>(rng.below(pairs.size()))];
            batch.push_back(interactive_example(tok, cfg.schedule, p.prev, p.target, p.anchor, *p.text, cfg.interact.k,
                                                cfg.interact.stride, cfg.bsc_flip_p, cfg.train.variant, rng));
        }
        return batch;
    });
}

VideoLayout small_square_layout(int n) {
    VideoLayout l;
    for (int p = 0; p < n; ++p) {
        Pyramid pyr;
        pyr.kind = p == 0 ? PyramidKind::image : PyramidKind::clip;
        pyr.clip_index = p;
        for (int s = 1; s <= 3; ++s) {
            pyr.scales.push_back(ScaleTuple{1, s, s, 1, false});
        }
        l.pyramids.push_back(pyr);
    }
    l.n_clips = std::max(0, n - 1);
    l.t_latent = 1;
    rebuild_flat_blocks(l);
    return l;
}

std::vector<nlohmann::ordered_json> mask_report(const ExperimentConfig& cfg) {
    std::vector<nlohmann::ordered_json> rows;
    const int hd = cfg.model.head_dim;
    struct Named {
        std::string name;
        VideoLayout layout;
    };
    std::vector<Named> layouts{{"square_1pyr", small_square_layout(1)},
                               {"square_2pyr", small_square_layout(2)},
                               {"config", build_layout(cfg.schedule)}};
    for (const auto& [name, layout] : layouts) {
        for (const char* v : {"var_full", "full_history", "preceding_only", "ssa:1", "ssa:3", "ssa:6"}) {
            const auto policy = MaskPolicy::parse(v);
            nlohmann::ordered_json row;
            row["layout"] = name;
            row["variant"] = policy.name();
            row["tokens"] = layout.total_tokens();
            try {
                const auto mask = build_mask(layout, 0, policy);
                const auto d = mask_density(mask);
                const auto kv = kv_cache_profile(mask);
                row["pairs"] = d.allowed_pairs;
                row["density"] = d.density;
                row["attention_flops"] = 2.0 * hd * static_cast<double>(d.allowed_pairs);
                row["peak_kv_tokens"] = kv.peak;
            } catch (const ConfigError& e) {
                row["error"] = e.what();
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace stpyr

namespace stpyr {

void save_tokens(const std::filesystem::path& path, std::span<const BitTensor> labels,
                 std::span<const FlatBlock> blocks, const VideoLayout& layout) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot write " + path.string());
    }
    const auto codes = to_pyramid_codes(labels, blocks, layout);
    write_token_file(os, codes);
}

void save_video(const std::filesystem::path& path, const RawVideo& v) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot write " + path.string());
    }
    write_raw_video(os, v);
}

RawVideo load_video(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("cannot open " + path.string());
    }
    return read_raw_video(is);
}

namespace {

ScheduleConfig with_clips(ScheduleConfig s, int n) {
    s.n_clips = n;
    return s;
}

}  // namespace

GenerationRun run_generation(const LoadedCheckpoint& ck, const std::vector<int>& text, int n_clips,
                             const RawVideo* history, int history_clips, std::uint64_t seed) {
    if (!ck.params) {
        throw ConfigError("checkpoint holds no model weights");
    }
    const auto& cfg = ck.cfg;
    GenerationRun run;
    run.layout = build_layout(with_clips(cfg.schedule, n_clips));
    std::vector<BitTensor> prefix;
    if (history != nullptr && history_clips >= 0) {
        if (history_clips > n_clips) {
            throw ConfigError("history covers more clips than requested");
        }
        const VideoLayout hl = build_layout(with_clips(cfg.schedule, history_clips));
        const auto feats = pyramid_features(ck.transform, *history, hl);
        Rng rng(seed);
        BscOptions opt;
        opt.flip_p = 0.0;
        prefix = encode_with_bsc(feats, hl, ck.tokenizer, rng, opt).labels;
    }
    GenerateOptions opt;
    opt.temperature = cfg.generate.temperature;
    opt.seed = seed;
    opt.policy = cfg.train.variant;
    run.result = generate(*ck.params, ck.tokenizer, run.layout, text, {}, prefix, opt);
    run.video = decode_video(ck.transform, run.result.reconstructions, run.layout);
    return run;
}

InteractiveSession run_interactive_session(const LoadedCheckpoint& ck, const std::vector<std::string>& prompts,
                                           int rounds, std::uint64_t seed, MetricsWriter& metrics) {
    if (!ck.params) {
        throw ConfigError("checkpoint holds no model weights");
    }
    if (rounds < 1) {
        throw ConfigError("interactive session needs at least one round");
    }
    const auto& cfg = ck.cfg;
    const VideoLayout layout = build_layout(with_clips(cfg.schedule, rounds + 1));
    SceneTemplate tmpl;
    tmpl.height = cfg.data.height;
    tmpl.width = cfg.data.width;
    tmpl.max_shapes = cfg.data.max_shapes;
    tmpl.frames = required_frames(layout, cfg.patch.pt);
    const SceneSpec scene = random_scene(tmpl, Rng(seed).fork(0x7363656eull).next_u64());
    const RawVideo truth = render(scene);
    const auto feats = pyramid_features(ck.transform, truth, layout);
    Rng rng(seed);
    BscOptions bo;
    bo.flip_p = 0.0;
    const CodecOutput tf = encode_with_bsc(feats, layout, ck.tokenizer, rng, bo);

    const LatentVolume& anchor = tf.reconstructions[0];
    const auto& clip_sched = layout.pyramids[1].scales;
    std::vector<BitTensor> prev(tf.labels.begin() + static_cast<std::ptrdiff_t>(layout.pyramids[0].scales.size()),
                                tf.labels.begin() +
                                    static_cast<std::ptrdiff_t>(layout.pyramids[0].scales.size() + clip_sched.size()));
    InteractiveSession session;
    std::vector<LatentVolume> recon{tf.reconstructions[0], tf.reconstructions[1]};
    VideoLayout shown = build_layout(with_clips(cfg.schedule, 1));
    const std::string fallback = caption(scene);
    for (int r = 1; r <= rounds; ++r) {
        const std::string& prompt =
            prompts.empty() ? fallback : prompts[std::min(prompts.size(), static_cast<std::size_t>(r)) - 1];
        GenerateOptions opt;
        opt.temperature = cfg.generate.temperature;
        opt.seed = Rng(seed).fork(static_cast<std::uint64_t>(r)).next_u64();
        opt.policy = cfg.train.variant;
        auto round = interactive_generate(*ck.params, ck.tokenizer, cfg.schedule, anchor, prev,
                                          encode_caption(prompt, cfg.model.text_len), cfg.interact.k,
                                          cfg.interact.stride, opt);
        const auto& reference = tf.reconstructions[static_cast<std::size_t>(r + 1)];
        metrics.write({{"kind", "drift"},
                       {"round", r},
                       {"prompt", prompt},
                       {"condition_tokens", round.condition_tokens},
                       {"psnr_vs_teacher_forced", psnr(round.reconstruction, reference, 2.0)},
                       {"psnr_vs_features", psnr(round.reconstruction, feats[static_cast<std::size_t>(r + 1)], 2.0)}});
        prev = round.codes;
        recon.push_back(round.reconstruction);
        session.rounds.push_back(std::move(round));
    }
    session.video = decode_video(ck.transform, recon, layout);
    return session;
}

}  // namespace stpyr
