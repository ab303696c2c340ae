// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/tokenizer_train.hpp"

#include <algorithm>
#include <cmath>

#include "stpyr/errors.hpp"

namespace stpyr {

namespace {

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

struct ScaleForward {
    std::size_t scale = 0;
    LatentVolume residual;      // x_k, d channels at (t, h_k, w_k)
    LatentVolume dequantized;   // y_k
    std::vector<double> z_norm; // |z| per position
    std::vector<double> u;      // positions x b
    std::vector<double> q;      // positions x b
};

}  // namespace

TokenizerStepLoss tokenizer_loss_and_grad(const LatentVolume& features, const ScaleSchedule& schedule,
                                          const SqdMask& sqd, const ScaleAdapters& adapters,
                                          const TokenizerLossWeights& weights, ResizeMode mode,
                                          std::vector<ChannelAdapter>* grads) {
    if (adapters.size() != schedule.size() || sqd.retained.size() != schedule.size()) {
        throw ShapeError("tokenizer_loss_and_grad: schedule/adapters/mask disagree");
    }
    const int d = features.channels();
    LatentVolume acc(d, features.frames(), features.height(), features.width());
    std::vector<ScaleForward> fwd;
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        if (!sqd.retained[k]) {
            continue;
        }
        const auto& s = schedule[k];
        const auto& a = adapters[k];
        ScaleForward f;
        f.scale = k;
        f.residual = resize_spatial(features - acc, s.h, s.w, mode);
        const std::int64_t n = f.residual.positions();
        const int b = s.bitwidth;
        f.u = sphere_projection(f.residual, b, &a);
        f.z_norm.assign(static_cast<std::size_t>(n), 0.0);
        // |z| is recovered from the unnormalized projection
        {
            const auto r = f.residual.data();
            const std::size_t stride = f.residual.channel_stride();
            for (std::int64_t p = 0; p < n; ++p) {
                double n2 = 0.0;
                for (int i = 0; i < b; ++i) {
                    double z = 0.0;
                    if (a.is_identity()) {
                        z = r[static_cast<std::size_t>(i) * stride + static_cast<std::size_t>(p)];
                    } else {
                        for (int c = 0; c < d; ++c) {
                            z += a.down[static_cast<std::size_t>(i) * d + c] *
                                 r[static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(p)];
                        }
                    }
                    n2 += z * z;
                }
                f.z_norm[static_cast<std::size_t>(p)] = std::sqrt(n2);
            }
        }
        auto qb = quantize_block(f.residual, b, &a);
        f.q.resize(static_cast<std::size_t>(n) * b);
        const double mag = 1.0 / std::sqrt(static_cast<double>(b));
        for (std::int64_t p = 0; p < n; ++p) {
            for (int i = 0; i < b; ++i) {
                f.q[static_cast<std::size_t>(p) * b + i] = qb.codes.bit(p, i) ? mag : -mag;
            }
        }
        f.dequantized = std::move(qb.dequantized);
        acc += resize_spatial(f.dequantized, acc.height(), acc.width(), mode);
        fwd.push_back(std::move(f));
    }

    TokenizerStepLoss loss;
    loss.reconstruction = mean_squared_error(features, acc);
    std::size_t commit_count = 0;
    double commit_sum = 0.0;
    for (const auto& f : fwd) {
        const auto r = f.residual.data();
        const auto y = f.dequantized.data();
        for (std::size_t i = 0; i < r.size(); ++i) {
            commit_sum += (r[i] - y[i]) * (r[i] - y[i]);
        }
        commit_count += r.size();
        loss.entropy += soft_bit_entropy_penalty(f.u, schedule[f.scale].bitwidth, weights.tau);
    }
    loss.commitment = commit_count ? commit_sum / static_cast<double>(commit_count) : 0.0;
    if (!fwd.empty()) {
        loss.entropy /= static_cast<double>(fwd.size());
    }
    loss.total = weights.reconstruction * loss.reconstruction + weights.commitment * loss.commitment +
                 weights.entropy * loss.entropy;
    if (grads == nullptr) {
        return loss;
    }

    grads->clear();
    for (const auto& a : adapters) {
        ChannelAdapter g = a;
        std::fill(g.down.begin(), g.down.end(), 0.0);
        std::fill(g.up.begin(), g.up.end(), 0.0);
        grads->push_back(std::move(g));
    }

    // dL/dF_hat at full resolution
    LatentVolume g_full = acc - features;
    g_full *= 2.0 * weights.reconstruction / static_cast<double>(features.size());
    const double commit_scale = commit_count ? 2.0 * weights.commitment / static_cast<double>(commit_count) : 0.0;
    const double ent_scale = fwd.empty() ? 0.0 : weights.entropy / static_cast<double>(fwd.size());

    for (const auto& f : fwd) {
        const auto& a = adapters[f.scale];
        if (a.is_identity()) {
            continue;
        }
        auto& g = (*grads)[f.scale];
        const auto& s = schedule[f.scale];
        const int b = s.bitwidth;
        LatentVolume g_y = resize_spatial_adjoint(g_full, s.h, s.w, mode);
        {
            auto gy = g_y.data();
            const auto r = f.residual.data();
            const auto y = f.dequantized.data();
            for (std::size_t i = 0; i < gy.size(); ++i) {
                gy[i] += commit_scale * (y[i] - r[i]);
            }
        }
        const std::int64_t n = f.residual.positions();
        // bit marginals for the entropy gradient
        std::vector<double> mean_p(static_cast<std::size_t>(b), 0.0);
        for (std::int64_t p = 0; p < n; ++p) {
            for (int i = 0; i < b; ++i) {
                mean_p[static_cast<std::size_t>(i)] += sigmoid(weights.tau * f.u[static_cast<std::size_t>(p) * b + i]);
            }
        }
        std::vector<double> dh_mean(static_cast<std::size_t>(b));
        for (int i = 0; i < b; ++i) {
            const double m = std::clamp(mean_p[static_cast<std::size_t>(i)] / static_cast<double>(n), 1e-12, 1.0 - 1e-12);
            dh_mean[static_cast<std::size_t>(i)] = std::log((1.0 - m) / m);
        }

        const auto gy = g_y.data();
        const auto r = f.residual.data();
        const std::size_t stride = f.residual.channel_stride();
        std::vector<double> g_q(static_cast<std::size_t>(b));
        std::vector<double> g_u(static_cast<std::size_t>(b));
        for (std::int64_t p = 0; p < n; ++p) {
            const double* q = &f.q[static_cast<std::size_t>(p) * b];
            const double* u = &f.u[static_cast<std::size_t>(p) * b];
            std::fill(g_q.begin(), g_q.end(), 0.0);
            for (int c = 0; c < d; ++c) {
                const double gyc = gy[static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(p)];
                const double* up_row = &a.up[static_cast<std::size_t>(c) * b];
                double* gup_row = &g.up[static_cast<std::size_t>(c) * b];
                for (int i = 0; i < b; ++i) {
                    gup_row[i] += gyc * q[i];
                    g_q[static_cast<std::size_t>(i)] += up_row[i] * gyc;
                }
            }
            double ug = 0.0;
            for (int i = 0; i < b; ++i) {
                const double pi = sigmoid(weights.tau * u[i]);
                // d/dp H(p) = log((1-p)/p) = -tau*u for p = sigmoid(tau*u)
                const double dpen_dp = (-weights.tau * u[i] - dh_mean[static_cast<std::size_t>(i)]) / static_cast<double>(n);
                g_u[static_cast<std::size_t>(i)] = g_q[static_cast<std::size_t>(i)] +
                                                   ent_scale * dpen_dp * weights.tau * pi * (1.0 - pi);
                ug += u[i] * g_u[static_cast<std::size_t>(i)];
            }
            const double zn = f.z_norm[static_cast<std::size_t>(p)];
            if (zn == 0.0) {
                continue;
            }
            for (int i = 0; i < b; ++i) {
                const double gz = (g_u[static_cast<std::size_t>(i)] - u[i] * ug) / zn;
                double* gdown_row = &g.down[static_cast<std::size_t>(i) * d];
                for (int c = 0; c < d; ++c) {
                    gdown_row[c] += gz * r[static_cast<std::size_t>(c) * stride + static_cast<std::size_t>(p)];
                }
            }
        }
    }
    return loss;
}

namespace {

std::vector<double*> parameter_views(Tokenizer& tok, std::vector<std::size_t>& sizes) {
    std::vector<double*> views;
    for (auto* bank : {&tok.image_adapters, &tok.clip_adapters}) {
        for (auto& a : *bank) {
            if (a.is_identity()) {
                continue;
            }
            views.push_back(a.down.data());
            sizes.push_back(a.down.size());
            views.push_back(a.up.data());
            sizes.push_back(a.up.size());
        }
    }
    return views;
}

}  // namespace

std::vector<TokenizerTrainLog> train_tokenizer(Tokenizer& tokenizer, const ScheduleConfig& schedule,
                                               const std::vector<PyramidSample>& data,
                                               const TokenizerTrainConfig& config,
                                               const std::function<void(const TokenizerTrainLog&)>& on_step) {
    if (data.empty()) {
        throw ConfigError("train_tokenizer: empty dataset");
    }
    std::vector<std::size_t> sizes;
    auto views = parameter_views(tokenizer, sizes);
    std::size_t total = 0;
    for (auto n : sizes) {
        total += n;
    }
    std::vector<TokenizerTrainLog> logs;
    if (total == 0) {
        return logs;
    }
    std::vector<double> flat(total);
    std::vector<double> flat_grad(total);
    Adam<double> adam(config.adam, total);
    Rng rng(config.seed);

    const auto image_sched = image_schedule(schedule);
    for (int step = 0; step < config.steps; ++step) {
        std::fill(flat_grad.begin(), flat_grad.end(), 0.0);
        TokenizerStepLoss mean_loss;
        for (int bi = 0; bi < config.batch; ++bi) {
            const auto& item = data[static_cast<std::size_t>(rng.below(data.size()))];
            const bool image = item.kind == PyramidKind::image;
            const auto sched = image ? image_sched : clip_schedule(schedule, item.features.frames());
            auto& adapters = image ? tokenizer.image_adapters : tokenizer.clip_adapters;
            SqdMask mask = SqdMask::all(sched.size());
            if (config.sqd && config.sqd_n_droppable > 0) {
                mask = sample_sqd(sched.size(), config.sqd_n_droppable, config.sqd_p, rng);
            }
            std::vector<ChannelAdapter> grads;
            const auto l = tokenizer_loss_and_grad(item.features, sched, mask, adapters, config.weights,
                                                   tokenizer.resize_mode, &grads);
            mean_loss.total += l.total / config.batch;
            mean_loss.reconstruction += l.reconstruction / config.batch;
            mean_loss.commitment += l.commitment / config.batch;
            mean_loss.entropy += l.entropy / config.batch;
            // scatter into the flat gradient in parameter_views order
            std::size_t offset = 0;
            for (auto* bank : {&tokenizer.image_adapters, &tokenizer.clip_adapters}) {
                for (std::size_t k = 0; k < bank->size(); ++k) {
                    const auto& a = (*bank)[k];
                    if (a.is_identity()) {
                        continue;
                    }
                    if (bank == &adapters) {
                        const auto& g = grads[k];
                        for (std::size_t i = 0; i < g.down.size(); ++i) {
                            flat_grad[offset + i] += g.down[i] / config.batch;
                        }
                        for (std::size_t i = 0; i < g.up.size(); ++i) {
                            flat_grad[offset + a.down.size() + i] += g.up[i] / config.batch;
                        }
                    }
                    offset += a.down.size() + a.up.size();
                }
            }
        }
        std::size_t offset = 0;
        for (std::size_t v = 0; v < views.size(); ++v) {
            std::copy_n(views[v], sizes[v], flat.begin() + static_cast<std::ptrdiff_t>(offset));
            offset += sizes[v];
        }
        adam.update(std::span<double>(flat), std::span<const double>(flat_grad));
        offset = 0;
        for (std::size_t v = 0; v < views.size(); ++v) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), sizes[v], views[v]);
            offset += sizes[v];
        }
        TokenizerTrainLog log{step, mean_loss};
        if (on_step) {
            on_step(log);
        }
        logs.push_back(log);
    }
    return logs;
}

}  // namespace stpyr
