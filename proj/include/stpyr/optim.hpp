// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace stpyr {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    int warmup_steps = 0;
    /// Global gradient-norm clip; <= 0 disables.
    double grad_clip = 1.0;
};

/// First/second-moment optimizer with bias correction and linear warmup.
template <typename Real>
class Adam {
public:
    Adam() = default;
    Adam(AdamConfig config, std::size_t n) : config_(config), m_(n, 0.0), v_(n, 0.0) {}

    int steps() const { return step_; }
    const AdamConfig& config() const { return config_; }

    double learning_rate() const {
        if (config_.warmup_steps > 0 && step_ < config_.warmup_steps) {
            return config_.lr * static_cast<double>(step_ + 1) / config_.warmup_steps;
        }
        return config_.lr;
    }

    /// Returns the pre-clip gradient norm.
    double update(std::span<Real> params, std::span<const double> grads) {
        double norm2 = 0.0;
        for (double g : grads) {
            norm2 += g * g;
        }
        const double norm = std::sqrt(norm2);
        const double clip = (config_.grad_clip > 0.0 && norm > config_.grad_clip) ? config_.grad_clip / norm : 1.0;
        const double lr = learning_rate();
        ++step_;
        const double bc1 = 1.0 - std::pow(config_.beta1, step_);
        const double bc2 = 1.0 - std::pow(config_.beta2, step_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grads[i] * clip;
            m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
            v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            params[i] = static_cast<Real>(params[i] - lr * mhat / (std::sqrt(vhat) + config_.eps));
        }
        return norm;
    }

private:
    AdamConfig config_;
    std::vector<double> m_;
    std::vector<double> v_;
    int step_ = 0;
};

}  // namespace stpyr
