// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "stpyr/bsq.hpp"
#include "stpyr/optim.hpp"

namespace stpyr {

struct TokenizerLossWeights {
    double reconstruction = 1.0;
    double commitment = 0.25;
    double entropy = 0.1;
    double tau = 10.0;
};

/// One pyramid's features and the kind of schedule it is tokenized with.
struct PyramidSample {
    PyramidKind kind = PyramidKind::clip;
    LatentVolume features;
};

struct TokenizerTrainConfig {
    TokenizerLossWeights weights;
    AdamConfig adam{1e-2, 0.9, 0.99, 1e-8, 0, 1.0};
    int steps = 300;
    int batch = 4;
    /// Stochastic quantizer depth: last n_droppable scales dropped with probability sqd_p.
    bool sqd = true;
    int sqd_n_droppable = 2;
    double sqd_p = 0.5;
    std::uint64_t seed = 0;
};

struct TokenizerStepLoss {
    double total = 0.0;
    double reconstruction = 0.0;
    double commitment = 0.0;
    double entropy = 0.0;
};

/// Loss and adapter gradients of one pyramid. Residual inputs to each scale are
/// treated as constants; sign quantization passes gradients straight through.
/// `grads` holds one (down, up) pair per scale, same layout as the adapters.
TokenizerStepLoss tokenizer_loss_and_grad(const LatentVolume& features, const ScaleSchedule& schedule,
                                          const SqdMask& sqd, const ScaleAdapters& adapters,
                                          const TokenizerLossWeights& weights, ResizeMode mode,
                                          std::vector<ChannelAdapter>* grads);

struct TokenizerTrainLog {
    int step = 0;
    TokenizerStepLoss loss;
};

/// Trains every non-identity adapter of `tokenizer` in place.
std::vector<TokenizerTrainLog> train_tokenizer(Tokenizer& tokenizer, const ScheduleConfig& schedule,
                                               const std::vector<PyramidSample>& data,
                                               const TokenizerTrainConfig& config,
                                               const std::function<void(const TokenizerTrainLog&)>& on_step = {});

}  // namespace stpyr
