// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "stpyr/attention.hpp"
#include "stpyr/bsq.hpp"
#include "stpyr/codec.hpp"
#include "stpyr/optim.hpp"
#include "stpyr/rng.hpp"
#include "stpyr/schedule.hpp"
#include "stpyr/volume.hpp"

namespace stpyr {

struct ModelConfig {
    int layers = 2;
    int heads = 4;
    int head_dim = 16;
    int mlp_ratio = 4;
    int latent_dim = 96;
    /// One input projection and one bitwise head per distinct bitwidth.
    std::vector<int> bitwidths{16, 32};
    int text_vocab = 16;
    int text_len = 10;
    std::array<double, 4> rope_bases = kDefaultRopeBases;
    double init_std = 0.02;

    int width() const { return heads * head_dim; }
    int hidden() const { return mlp_ratio * width(); }
    void validate() const;
    bool has_bitwidth(int b) const;
    bool operator==(const ModelConfig&) const = default;
};

/// Named tensor inside the flat parameter vector. Linear weights are stored
/// input-major (rows = inputs, cols = outputs).
struct TensorSpec {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;
    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

struct LayerOffsets {
    std::size_t norm1, wq, wk, wv, wo, norm2, w1, b1, w2, b2;
};

struct BitwidthOffsets {
    int bitwidth = 0;
    std::size_t in_proj, in_bias, head, head_bias;
};

class ParamLayout {
public:
    ParamLayout() = default;
    explicit ParamLayout(const ModelConfig& config);

    std::size_t size() const { return size_; }
    const std::vector<TensorSpec>& tensors() const { return tensors_; }
    const TensorSpec* find(const std::string& name) const;

    std::size_t text_embed = 0, text_pos = 0, sos = 0, cond_proj = 0, cond_bias = 0, cond_type = 0, final_norm = 0;
    std::vector<LayerOffsets> layers;
    std::vector<BitwidthOffsets> bits;
    const BitwidthOffsets& for_bitwidth(int b) const;

private:
    std::size_t add(const std::string& name, int rows, int cols);
    std::vector<TensorSpec> tensors_;
    std::size_t size_ = 0;
};

template <typename Real>
struct ModelParams {
    ModelConfig config;
    ParamLayout layout;
    std::vector<Real> values;

    const Real* at(std::size_t offset) const { return values.data() + offset; }
    Real* at(std::size_t offset) { return values.data() + offset; }
    bool all_finite() const;
    template <typename Other>
    ModelParams<Other> cast() const {
        ModelParams<Other> out{config, layout, std::vector<Other>(values.begin(), values.end())};
        return out;
    }
};

/// Deterministic given the seed. Output heads start small so initial logits are
/// near zero and the per-bit loss starts near ln 2.
template <typename Real>
ModelParams<Real> init_params(const ModelConfig& config, std::uint64_t seed);

/// Copies every tensor whose name and shape match into a fresh init of the new
/// config (progressive schedules that add a bitwidth get fresh heads).
template <typename Real>
ModelParams<Real> extend_params(const ModelParams<Real>& old, const ModelConfig& config, std::uint64_t seed);

enum class CondType { sem = 0, det = 1, anchor = 2 };

/// Condition volumes placed after the text prefix, one token per (t, h, w) position.
struct ConditionTokens {
    std::vector<LatentVolume> volumes;
    std::vector<CondType> types;
    /// Temporal rotary id of each volume's first frame.
    std::vector<int> t_offsets;
    std::int64_t count() const;
};

/// One sequence: text prefix, condition tokens, then content blocks.
struct Sequence {
    std::vector<int> text;
    ConditionTokens cond;
    std::vector<ScaleTuple> tuples;
    /// Input volume per content block at that block's grid; empty = start token.
    std::vector<LatentVolume> inputs;
    AttentionMask mask;
    RopeIds rope;
    std::int64_t n_cond() const { return static_cast<std::int64_t>(text.size()) + cond.count(); }
    std::int64_t n_content() const;
};

/// Rotary ids for the text and condition prefix: text all zero, condition
/// tokens (0, t_offset + f, y, x).
std::vector<RopeId> condition_rope_ids(std::size_t text_len, const ConditionTokens& cond);

/// Teacher-forced sequence from codec output.
Sequence make_sequence(const VideoLayout& layout, const CodecOutput& out, std::vector<int> text,
                       ConditionTokens cond, MaskPolicy policy);

/// Per-token bit logits for every content token, block by block.
template <typename Real>
struct Logits {
    std::vector<Real> values;
    /// Start of each block in `values`, plus the total.
    std::vector<std::size_t> block_offsets;
    std::span<const Real> block(std::size_t j) const {
        return std::span<const Real>(values).subspan(block_offsets[j], block_offsets[j + 1] - block_offsets[j]);
    }
};

template <typename Real>
Logits<Real> forward(const ModelParams<Real>& params, const Sequence& seq);

/// Mean over bits of the numerically stable binary cross-entropy.
double bitwise_bce(std::span<const float> logits, const BitTensor& labels);
double bitwise_bce(std::span<const double> logits, const BitTensor& labels);

struct TrainExample {
    Sequence seq;
    std::vector<BitTensor> labels;
};

struct LossStats {
    double loss = 0.0;
    double accuracy = 0.0;
    std::int64_t bits = 0;
};

/// Mean BCE over every label bit of the batch; gradients (same layout as the
/// params) are written to `grad` when non-null.
template <typename Real>
LossStats loss_and_grad(const ModelParams<Real>& params, std::span<const TrainExample> batch,
                        std::vector<double>* grad);

template <typename Real>
class ModelTrainer {
public:
    ModelTrainer(ModelParams<Real>& params, AdamConfig adam) : params_(&params), adam_(adam, params.values.size()) {}
    /// One optimizer step; throws NumericError on a non-finite loss.
    LossStats step(std::span<const TrainExample> batch);
    int steps() const { return adam_.steps(); }

private:
    ModelParams<Real>* params_;
    Adam<Real> adam_;
    std::vector<double> grad_;
};

struct GenerateOptions {
    double temperature = 1.0;
    std::uint64_t seed = 0;
    MaskPolicy policy;
    /// Keep the logits of every block (history blocks included).
    bool record_logits = false;
};

struct GenerateResult {
    std::vector<BitTensor> codes;
    std::vector<FlatBlock> blocks;
    /// Accumulated reconstruction per pyramid.
    std::vector<LatentVolume> reconstructions;
    std::vector<std::vector<float>> logits;
    /// Live cached keys after each block is appended, and their maximum.
    std::vector<std::int64_t> live_keys;
    std::int64_t peak_cached_keys = 0;
};

/// Block-by-block sampling with a per-block KV cache; blocks no later query can
/// see are evicted. `history` supplies codes for a prefix of the layout's
/// blocks, which are teacher-forced instead of sampled. `prior` seeds the first
/// block's input (interactive mode); otherwise it is the start token.
GenerateResult generate(const ModelParams<float>& params, const Tokenizer& tokenizer, const VideoLayout& layout,
                        const std::vector<int>& text, const ConditionTokens& cond,
                        std::span<const BitTensor> history, const GenerateOptions& options,
                        const LatentVolume* prior = nullptr);

/// Named f32 blobs of a checkpoint.
struct Blob {
    std::string name;
    std::vector<float> values;
};

struct Checkpoint {
    std::string config_echo;
    std::vector<Blob> blobs;
    const Blob* find(const std::string& name) const;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& is);

std::vector<Blob> param_blobs(const ModelParams<float>& params);
ModelParams<float> params_from_blobs(const ModelConfig& config, std::span<const Blob> blobs);

std::vector<Blob> tokenizer_blobs(const Tokenizer& tokenizer);
/// Restores adapter weights into a tokenizer created for the same schedule.
void load_tokenizer_blobs(Tokenizer& tokenizer, std::span<const Blob> blobs);

}  // namespace stpyr
