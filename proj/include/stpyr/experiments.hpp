// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stpyr/config.hpp"
#include "stpyr/interact.hpp"
#include "stpyr/model.hpp"
#include "stpyr/patch.hpp"
#include "stpyr/synth.hpp"

namespace stpyr {

/// JSON-lines writer stamping every row with the config hash. A default
/// constructed writer only keeps rows in memory.
class MetricsWriter {
public:
    MetricsWriter() = default;
    MetricsWriter(const std::filesystem::path& path, std::string config_hash);
    void write(nlohmann::ordered_json row);
    const std::vector<nlohmann::ordered_json>& rows() const { return rows_; }

private:
    std::string hash_;
    std::ofstream out_;
    std::vector<nlohmann::ordered_json> rows_;
};

/// Rendered videos with captions; the last `held_out` are kept for evaluation.
struct Dataset {
    std::vector<DatasetItem> items;
    std::vector<RawVideo> videos;
    std::vector<std::vector<int>> text;
    int n_train = 0;
};

/// Renders `cfg.data.videos` scenes long enough for `n_clips` clips.
Dataset make_dataset(const ExperimentConfig& cfg, int n_clips, std::uint64_t seed);

/// Fixed or PCA-fitted patch transform per the config (fitted on training videos).
PatchTransform make_transform(const ExperimentConfig& cfg, const Dataset& data);

/// Per-video pyramid features for a layout.
std::vector<std::vector<LatentVolume>> dataset_features(const PatchTransform& t, const Dataset& data,
                                                        const VideoLayout& layout);

/// Mean PSNR (peak 2, the latent pixel range) of clip-pyramid prefix decodes;
/// entry k uses the first k+1 scales.
std::vector<double> prefix_psnr_curve(const Tokenizer& tok, const ScaleSchedule& clip_schedule,
                                      const std::vector<LatentVolume>& clip_features);

struct TokenizerRun {
    Tokenizer tokenizer;
    std::vector<double> prefix_psnr;  // held-out curve
};

/// Trains adapters (weights rounded to f32 so checkpoints are lossless).
TokenizerRun run_tokenizer_experiment(const ExperimentConfig& cfg, const Dataset& data, const PatchTransform& transform,
                                      bool sqd, MetricsWriter& metrics);

struct TrainingRun {
    ModelParams<float> params;
    LossStats last;
};

/// Per-step training examples drawn from pre-computed features.
class ExampleSource {
public:
    ExampleSource(const ExperimentConfig& cfg, const Tokenizer& tok, const VideoLayout& layout,
                  std::vector<std::vector<LatentVolume>> features, std::vector<std::vector<int>> text);
    /// Fresh BSC flips (and optional SQD drops) drawn from `rng`.
    TrainExample make(std::size_t video, Rng& rng, double flip_p, bool sqd) const;
    std::size_t size() const { return features_.size(); }
    const VideoLayout& layout() const { return layout_; }

private:
    const ExperimentConfig* cfg_;
    const Tokenizer* tok_;
    VideoLayout layout_;
    std::vector<std::vector<LatentVolume>> features_;
    std::vector<std::vector<int>> text_;
};

TrainingRun run_training(const ExperimentConfig& cfg, const ExampleSource& source, ModelParams<float> params,
                         int steps, MetricsWriter& metrics);

/// Mean per-bit BCE and accuracy over every example of the source, using
/// flips drawn from a fixed evaluation seed.
LossStats evaluate(const ModelParams<float>& params, const ExampleSource& source, double flip_p, std::uint64_t seed);

/// Self-contained checkpoint: config echo, model, tokenizer and patch basis.
Checkpoint make_checkpoint(const ExperimentConfig& cfg, const ModelParams<float>* params, const Tokenizer& tok,
                           const PatchTransform& transform);

struct LoadedCheckpoint {
    ExperimentConfig cfg;
    std::optional<ModelParams<float>> params;
    Tokenizer tokenizer;
    PatchTransform transform;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);

/// Decoded raw video of per-pyramid latent reconstructions, concatenated in time
/// (the image pyramid contributes its first frame only).
RawVideo decode_video(const PatchTransform& t, const std::vector<LatentVolume>& recon, const VideoLayout& layout);

/// Interactive fine-tuning on consecutive clip pairs of the training videos.
TrainingRun run_interactive_finetune(const ExperimentConfig& cfg, const Tokenizer& tok, const PatchTransform& transform,
                                     const Dataset& data, ModelParams<float> params, int steps, MetricsWriter& metrics);

/// ISTK file of the given blocks (one entry per pyramid).
void save_tokens(const std::filesystem::path& path, std::span<const BitTensor> labels,
                 std::span<const FlatBlock> blocks, const VideoLayout& layout);
void save_video(const std::filesystem::path& path, const RawVideo& v);
RawVideo load_video(const std::filesystem::path& path);

struct GenerationRun {
    VideoLayout layout;
    GenerateResult result;
    RawVideo video;
};

/// Samples `n_clips` clips (0 = image only). When `history` is given, its first
/// `history_clips + 1` pyramids (image pyramid included) are encoded without
/// flips and teacher-forced; `history_clips < 0` means no history.
GenerationRun run_generation(const LoadedCheckpoint& ck, const std::vector<int>& text, int n_clips,
                             const RawVideo* history, int history_clips, std::uint64_t seed);

struct InteractiveSession {
    std::vector<InteractiveRound> rounds;
    RawVideo video;  // anchor frame, first clip, then every generated clip
};

/// Multi-round interactive generation on a rendered scene. The first clip is
/// the teacher-forced encoding of the scene; each round's clip is compared
/// with the teacher-forced reconstruction of the same clip of the scene
/// (drift rows in `metrics`).
InteractiveSession run_interactive_session(const LoadedCheckpoint& ck, const std::vector<std::string>& prompts,
                                           int rounds, std::uint64_t seed, MetricsWriter& metrics);

/// `n` single-frame pyramids with scales 1x1, 2x2, 3x3 (block sizes 1, 4, 9).
VideoLayout small_square_layout(int n);

/// Pair counts, densities and attention FLOPs (2 * head_dim * pairs) per variant.
std::vector<nlohmann::ordered_json> mask_report(const ExperimentConfig& cfg);

}  // namespace stpyr
