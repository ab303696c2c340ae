// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "acceptance.hpp"
#include "stpyr/errors.hpp"
#include "stpyr/experiments.hpp"

using namespace stpyr;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::string variant;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "config file (key = value)");
    sub->add_option("--seed", c.seed, "overrides the config seed");
    sub->add_option("--out", c.out, "output directory")->capture_default_str();
    sub->add_option("--variant", c.variant, "attention mask: var_full | preceding_only | ssa:M | full_history");
}

void apply_overrides(ExperimentConfig& cfg, const Common& c) {
    if (c.seed) {
        cfg.seed = *c.seed;
    }
    if (!c.variant.empty()) {
        cfg.train.variant = MaskPolicy::parse(c.variant);
    }
    cfg.validate();
}

/// Config from --config (or defaults), validated with overrides applied.
ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    apply_overrides(cfg, c);
    return cfg;
}

/// Checkpoint commands use the embedded config; --seed and --variant still apply.
LoadedCheckpoint resolve_checkpoint(const Common& c, const std::string& path) {
    if (!c.variant.empty()) {
        MaskPolicy::parse(c.variant);
    }
    if (!c.config.empty()) {
        throw ConfigError("--config is not used with --checkpoint; the checkpoint carries its config");
    }
    LoadedCheckpoint ck = load_checkpoint(path);
    apply_overrides(ck.cfg, c);
    return ck;
}

std::vector<int> prompt_ids(const ExperimentConfig& cfg, const std::string& prompt) {
    return encode_caption(prompt, cfg.model.text_len);
}

int cmd_synth(const Common& c, int count) {
    ExperimentConfig cfg = resolve(c);
    if (count > 0) {
        cfg.data.videos = count;
    }
    SceneTemplate tmpl;
    tmpl.height = cfg.data.height;
    tmpl.width = cfg.data.width;
    tmpl.max_shapes = cfg.data.max_shapes;
    tmpl.frames = required_frames(build_layout(cfg.schedule), cfg.patch.pt);
    const auto items = render_dataset(tmpl, cfg.data.videos, cfg.seed, c.out);
    std::cout << "wrote " << items.size() << " videos of " << tmpl.frames << " frames to " << c.out << "\n";
    return 0;
}

int cmd_train_tokenizer(const Common& c, bool compare) {
    const ExperimentConfig cfg = resolve(c);
    const Dataset data = make_dataset(cfg, cfg.schedule.n_clips, cfg.seed);
    const PatchTransform transform = make_transform(cfg, data);
    MetricsWriter metrics(fs::path(c.out) / "tokenizer.jsonl", cfg.hash());
    const auto run = run_tokenizer_experiment(cfg, data, transform, cfg.tokenizer.sqd, metrics);
    if (compare) {
        run_tokenizer_experiment(cfg, data, transform, !cfg.tokenizer.sqd, metrics);
    }
    save_checkpoint(fs::path(c.out) / "tokenizer.isck", make_checkpoint(cfg, nullptr, run.tokenizer, transform));
    std::cout << "held-out prefix PSNR:";
    for (double p : run.prefix_psnr) {
        std::cout << " " << p;
    }
    std::cout << "\n";
    return 0;
}

int cmd_tokenize(const Common& c, const std::string& checkpoint, const std::vector<std::string>& inputs,
                 bool pairs) {
    const LoadedCheckpoint ck = resolve_checkpoint(c, checkpoint);
    const VideoLayout layout = build_layout(ck.cfg.schedule);
    fs::create_directories(c.out);
    for (const auto& in : inputs) {
        const RawVideo v = load_video(in);
        const auto feats = pyramid_features(ck.transform, v, layout);
        Rng rng(ck.cfg.seed);
        BscOptions opt;
        opt.flip_p = 0.0;
        const auto clean = encode_with_bsc(feats, layout, ck.tokenizer, rng, opt);
        const fs::path stem = fs::path(c.out) / fs::path(in).stem();
        save_tokens(stem.string() + ".istk", clean.labels, clean.blocks, layout);
        if (pairs) {
            opt.flip_p = ck.cfg.bsc_flip_p;
            const auto noisy = encode_with_bsc(feats, layout, ck.tokenizer, rng, opt);
            std::ofstream os(stem.string() + ".isbc", std::ios::binary);
            write_training_pair(os, noisy, layout);
        }
        std::cout << in << " -> " << stem.string() << ".istk\n";
    }
    return 0;
}

int cmd_train_model(const Common& c, const std::string& tokenizer_path, const std::string& init_path,
                    bool interactive) {
    ExperimentConfig cfg = resolve(c);
    const Dataset data = make_dataset(cfg, cfg.schedule.n_clips, cfg.seed);
    PatchTransform transform;
    Tokenizer tok;
    MetricsWriter metrics(fs::path(c.out) / "train.jsonl", cfg.hash());
    if (!tokenizer_path.empty()) {
        const LoadedCheckpoint t = load_checkpoint(tokenizer_path);
        if (t.cfg.schedule != cfg.schedule || t.transform.latent_dim() != cfg.model_config().latent_dim) {
            throw ConfigError(tokenizer_path + ": tokenizer schedule or latent size differs from the config");
        }
        transform = t.transform;
        tok = t.tokenizer;
    } else {
        transform = make_transform(cfg, data);
        tok = run_tokenizer_experiment(cfg, data, transform, cfg.tokenizer.sqd, metrics).tokenizer;
    }
    auto params = init_params<float>(cfg.model_config(), cfg.seed);
    if (!init_path.empty()) {
        const LoadedCheckpoint prev = load_checkpoint(init_path);
        if (!prev.params) {
            throw ConfigError(init_path + ": no model weights");
        }
        params = extend_params(*prev.params, cfg.model_config(), cfg.seed);
    }
    const VideoLayout layout = build_layout(cfg.schedule);
    auto feats = dataset_features(transform, data, layout);
    const auto n = static_cast<std::ptrdiff_t>(data.n_train);
    const ExampleSource train(cfg, tok, layout, {feats.begin(), feats.begin() + n},
                              {data.text.begin(), data.text.begin() + n});
    TrainingRun run;
    if (interactive) {
        run = run_interactive_finetune(cfg, tok, transform, data, std::move(params), cfg.interact.finetune_steps,
                                       metrics);
    } else {
        run = run_training(cfg, train, std::move(params), cfg.train.steps, metrics);
    }
    const auto ev = evaluate(run.params, train, cfg.bsc_flip_p, cfg.seed + 1);
    nlohmann::ordered_json row{{"kind", "eval"}, {"train_loss", ev.loss}, {"train_accuracy", ev.accuracy}};
    if (data.n_train < static_cast<int>(feats.size())) {
        const ExampleSource held(cfg, tok, layout, {feats.begin() + n, feats.end()},
                                 {data.text.begin() + n, data.text.end()});
        const auto h = evaluate(run.params, held, cfg.bsc_flip_p, cfg.seed + 1);
        row["held_out_loss"] = h.loss;
        row["held_out_accuracy"] = h.accuracy;
    }
    std::cout << row.dump() << "\n";
    metrics.write(row);
    save_checkpoint(fs::path(c.out) / "model.isck", make_checkpoint(cfg, &run.params, tok, transform));
    return 0;
}

void write_generation(const fs::path& dir, const std::string& name, const GenerationRun& g) {
    save_tokens(dir / (name + ".istk"), g.result.codes, g.result.blocks, g.layout);
    save_video(dir / (name + ".isrv"), g.video);
    std::cout << "wrote " << (dir / (name + ".istk")).string() << " and " << name << ".isrv (" << g.video.frames
              << " frames, peak cached keys " << g.result.peak_cached_keys << ")\n";
}

int cmd_generate(const Common& c, const std::string& checkpoint, const std::string& prompt, int clips) {
    const LoadedCheckpoint ck = resolve_checkpoint(c, checkpoint);
    const auto text = prompt_ids(ck.cfg, prompt);
    const auto g = run_generation(ck, text, clips < 0 ? ck.cfg.schedule.n_clips : clips, nullptr, -1, ck.cfg.seed);
    write_generation(c.out, "generate", g);
    return 0;
}

int cmd_continue(const Common& c, const std::string& checkpoint, const std::string& input, const std::string& prompt,
                 int history_clips, int clips) {
    const LoadedCheckpoint ck = resolve_checkpoint(c, checkpoint);
    const auto text = prompt_ids(ck.cfg, prompt);
    const RawVideo v = load_video(input);
    const auto g = run_generation(ck, text, clips < 0 ? ck.cfg.generate.extrapolate_clips : clips, &v,
                                  history_clips, ck.cfg.seed);
    write_generation(c.out, "continue", g);
    return 0;
}

int cmd_interact(const Common& c, const std::string& checkpoint, const std::string& session, int rounds) {
    const LoadedCheckpoint ck = resolve_checkpoint(c, checkpoint);
    std::vector<std::string> prompts;
    if (!session.empty()) {
        std::ifstream is(session);
        if (!is) {
            throw ConfigError("cannot open session file " + session);
        }
        for (std::string line; std::getline(is, line);) {
            if (!line.empty()) {
                encode_caption(line, ck.cfg.model.text_len);  // reject unknown words early
                prompts.push_back(line);
            }
        }
    }
    const int n = rounds > 0 ? rounds : (prompts.empty() ? ck.cfg.interact.rounds : static_cast<int>(prompts.size()));
    MetricsWriter drift(fs::path(c.out) / "drift.jsonl", ck.cfg.hash());
    const auto s = run_interactive_session(ck, prompts, n, ck.cfg.seed, drift);
    const VideoLayout il = interactive_layout(ck.cfg.schedule);
    for (std::size_t i = 0; i < s.rounds.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "round_%02zu.istk", i + 1);
        save_tokens(fs::path(c.out) / name, s.rounds[i].codes, il.flat_blocks, il);
    }
    save_video(fs::path(c.out) / "interactive.isrv", s.video);
    for (const auto& row : drift.rows()) {
        std::cout << row.dump() << "\n";
    }
    return 0;
}

int cmd_masks(const Common& c) {
    const ExperimentConfig cfg = resolve(c);
    MetricsWriter m(fs::path(c.out) / "masks.jsonl", cfg.hash());
    for (auto& row : mask_report(cfg)) {
        std::cout << row.dump() << "\n";
        m.write(std::move(row));
    }
    return 0;
}

int cmd_accept(const Common& c, const std::vector<int>& only) {
    acceptance::Options opt;
    opt.cfg = resolve(c);
    opt.out = c.out;
    opt.only = only;
    const auto results = acceptance::run(opt, std::cout);
    int failed = 0;
    for (const auto& r : results) {
        failed += !r.pass;
    }
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stpyr: spacetime pyramid tokenizer and next-scale video model"};
    app.require_subcommand(1);

    Common synth_c, tokz_c, trt_c, trm_c, gen_c, cont_c, int_c, mask_c, acc_c;
    int count = 0;
    auto* synth = app.add_subcommand("synth", "render the synthetic dataset");
    add_common(synth, synth_c);
    synth->add_option("--count", count, "number of videos (default data.videos)");

    bool compare = false;
    auto* trt = app.add_subcommand("train-tokenizer", "train the quantizer adapters");
    add_common(trt, trt_c);
    trt->add_flag("--compare-sqd", compare, "also train with stochastic depth toggled");

    std::string tokz_ck;
    std::vector<std::string> tokz_in;
    bool pairs = false;
    auto* tokz = app.add_subcommand("tokenize", "encode raw videos into token files");
    add_common(tokz, tokz_c);
    tokz->add_option("--checkpoint", tokz_ck, "tokenizer or model checkpoint")->required();
    tokz->add_option("--input", tokz_in, "ISRV files")->required();
    tokz->add_flag("--pairs", pairs, "also write self-corrected training pairs (.isbc)");

    std::string trm_tok, trm_init;
    bool interactive = false;
    auto* trm = app.add_subcommand("train-model", "train the transformer");
    add_common(trm, trm_c);
    trm->add_option("--tokenizer", trm_tok, "tokenizer checkpoint (trained from scratch when omitted)");
    trm->add_option("--init", trm_init, "start from a checkpoint; tensors that no longer fit are re-initialised");
    trm->add_flag("--interactive", interactive, "fine-tune with semantic/detail conditions");

    std::string gen_ck, gen_prompt = "red square moves right";
    int gen_clips = -1;
    auto* gen = app.add_subcommand("generate", "sample a video from a caption");
    add_common(gen, gen_c);
    gen->add_option("--checkpoint", gen_ck, "model checkpoint")->required();
    gen->add_option("--prompt", gen_prompt, "caption")->capture_default_str();
    gen->add_option("--clips", gen_clips, "clips after the first frame (default schedule.n_clips)");

    std::string cont_ck, cont_in, cont_prompt = "red square moves right";
    int cont_hist = 0, cont_clips = -1;
    auto* cont = app.add_subcommand("continue", "image-to-video or extrapolation from a history");
    add_common(cont, cont_c);
    cont->add_option("--checkpoint", cont_ck, "model checkpoint")->required();
    cont->add_option("--input", cont_in, "ISRV history video")->required();
    cont->add_option("--prompt", cont_prompt, "caption")->capture_default_str();
    cont->add_option("--history-clips", cont_hist, "clips of the input kept as history (0 = first frame only)")
        ->capture_default_str();
    cont->add_option("--clips", cont_clips, "total clips (default generate.extrapolate_clips)");

    std::string int_ck, int_session;
    int int_rounds = 0;
    auto* inter = app.add_subcommand("interact", "multi-round generation with compressed conditions");
    add_common(inter, int_c);
    inter->add_option("--checkpoint", int_ck, "model checkpoint")->required();
    inter->add_option("--session", int_session, "one prompt per line");
    inter->add_option("--rounds", int_rounds, "rounds (default: prompts in the session, else interact.rounds)");

    auto* masks = app.add_subcommand("masks", "pair counts and densities per attention variant");
    add_common(masks, mask_c);

    std::vector<int> only;
    auto* acc = app.add_subcommand("accept", "run the acceptance suite");
    add_common(acc, acc_c);
    acc->add_option("--only", only, "criterion ids");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*synth) return cmd_synth(synth_c, count);
        if (*trt) return cmd_train_tokenizer(trt_c, compare);
        if (*tokz) return cmd_tokenize(tokz_c, tokz_ck, tokz_in, pairs);
        if (*trm) return cmd_train_model(trm_c, trm_tok, trm_init, interactive);
        if (*gen) return cmd_generate(gen_c, gen_ck, gen_prompt, gen_clips);
        if (*cont) return cmd_continue(cont_c, cont_ck, cont_in, cont_prompt, cont_hist, cont_clips);
        if (*inter) return cmd_interact(int_c, int_ck, int_session, int_rounds);
        if (*masks) return cmd_masks(mask_c);
        if (*acc) return cmd_accept(acc_c, only);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
