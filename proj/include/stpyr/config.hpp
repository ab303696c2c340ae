// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "stpyr/attention.hpp"
#include "stpyr/model.hpp"
#include "stpyr/patch.hpp"
#include "stpyr/schedule.hpp"
#include "stpyr/tokenizer_train.hpp"

namespace stpyr {

struct DataConfig {
    int videos = 72;
    int held_out = 8;
    int height = 32;
    int width = 32;
    int max_shapes = 2;
};

struct PatchConfig {
    int pt = 2;
    int ph = 4;
    int pw = 4;
    PatchMode mode = PatchMode::fixed;
};

struct TrainConfig {
    int steps = 2000;
    int batch = 1;
    AdamConfig adam{1e-3, 0.9, 0.95, 1e-8, 100, 1.0};
    int log_every = 50;
    MaskPolicy variant;
    /// Stochastic depth drops in the codec during model training.
    bool sqd = false;
};

struct GenerateConfig {
    double temperature = 1.0;
    /// Total clips for `continue` (extrapolation beyond the training length).
    int extrapolate_clips = 4;
};

struct InteractConfig {
    int k = 2;
    double stride = 5.656854249492381;  // sqrt(32)
    int rounds = 4;
    int finetune_steps = 300;
    double clip_seconds = 5.0;
};

/// Every knob of the pipeline, read from a flat `section.key = value` file.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    ScheduleConfig schedule;
    ResizeMode resize_mode = ResizeMode::bilinear;
    TokenizerTrainConfig tokenizer;
    double bsc_flip_p = 0.1;
    PatchConfig patch;
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    GenerateConfig generate;
    InteractConfig interact;

    /// Canonical `key = value` dump; parse(canonical()) reproduces the config.
    std::string canonical() const;
    /// FNV-1a of the canonical dump, as 16 hex digits.
    std::string hash() const;
    /// Cross-field checks (latent grid vs ladder, bitwidth heads, ...).
    void validate() const;
    /// Model config with the derived fields filled in.
    ModelConfig model_config() const;
};

/// Parses config text; unknown keys and bad values raise ConfigError naming
/// `source:line` and the key.
ExperimentConfig parse_config(std::string_view text, std::string_view source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Distinct bitwidths used by a layout, ascending.
std::vector<int> layout_bitwidths(const VideoLayout& layout);

}  // namespace stpyr
