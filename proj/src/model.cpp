// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <string>

#include "stpyr/binary_io.hpp"
#include "stpyr/errors.hpp"

namespace stpyr {

// ---------------------------------------------------------------------------
// config and parameter layout

void ModelConfig::validate() const {
    if (layers < 1 || heads < 1 || mlp_ratio < 1 || latent_dim < 1) {
        throw ConfigError("model: layers, heads, mlp_ratio and latent_dim must be >= 1");
    }
    if (head_dim <= 0 || head_dim % 8 != 0) {
        throw ConfigError("model: head_dim must be a positive multiple of 8 (got " + std::to_string(head_dim) + ")");
    }
    if (bitwidths.empty()) {
        throw ConfigError("model: at least one bitwidth required");
    }
    std::set<int> seen;
    for (int b : bitwidths) {
        if (b < 1 || b > 64 || !seen.insert(b).second) {
            throw ConfigError("model: bitwidths must be distinct values in [1, 64]");
        }
    }
    if (text_vocab < 1 || text_len < 0) {
        throw ConfigError("model: text_vocab must be >= 1 and text_len >= 0");
    }
    if (!(init_std > 0.0)) {
        throw ConfigError("model: init_std must be positive");
    }
}

bool ModelConfig::has_bitwidth(int b) const { return std::find(bitwidths.begin(), bitwidths.end(), b) != bitwidths.end(); }

std::size_t ParamLayout::add(const std::string& name, int rows, int cols) {
    const std::size_t off = size_;
    tensors_.push_back(TensorSpec{name, off, rows, cols});
    size_ += tensors_.back().size();
    return off;
}

ParamLayout::ParamLayout(const ModelConfig& c) {
    c.validate();
    const int W = c.width();
    const int F = c.hidden();
    const int d = c.latent_dim;
    text_embed = add("text.embed", c.text_vocab, W);
    text_pos = add("text.pos", c.text_len, W);
    sos = add("sos", 1, W);
    cond_proj = add("cond.proj", d, W);
    cond_bias = add("cond.bias", 1, W);
    cond_type = add("cond.type", 3, W);
    for (int b : c.bitwidths) {
        BitwidthOffsets o;
        o.bitwidth = b;
        const std::string p = "in.b" + std::to_string(b);
        o.in_proj = add(p + ".proj", d, W);
        o.in_bias = add(p + ".bias", 1, W);
        bits.push_back(o);
    }
    for (int l = 0; l < c.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerOffsets o{};
        o.norm1 = add(p + "norm1", 1, W);
        o.wq = add(p + "wq", W, W);
        o.wk = add(p + "wk", W, W);
        o.wv = add(p + "wv", W, W);
        o.wo = add(p + "wo", W, W);
        o.norm2 = add(p + "norm2", 1, W);
        o.w1 = add(p + "w1", W, F);
        o.b1 = add(p + "b1", 1, F);
        o.w2 = add(p + "w2", F, W);
        o.b2 = add(p + "b2", 1, W);
        layers.push_back(o);
    }
    final_norm = add("final.norm", 1, W);
    for (auto& o : bits) {
        const std::string p = "head.b" + std::to_string(o.bitwidth);
        o.head = add(p + ".proj", W, o.bitwidth);
        o.head_bias = add(p + ".bias", 1, o.bitwidth);
    }
}

const TensorSpec* ParamLayout::find(const std::string& name) const {
    for (const auto& t : tensors_) {
        if (t.name == name) {
            return &t;
        }
    }
    return nullptr;
}

const BitwidthOffsets& ParamLayout::for_bitwidth(int b) const {
    for (const auto& o : bits) {
        if (o.bitwidth == b) {
            return o;
        }
    }
    throw ShapeError("model has no head for bitwidth " + std::to_string(b));
}

template <typename Real>
bool ModelParams<Real>::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](Real x) { return std::isfinite(static_cast<double>(x)); });
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) { return s.size() >= suffix.size() && s.ends_with(suffix); }

// Initial value generator for one named tensor; every tensor draws from its own
// stream so adding a tensor does not shift the others.
template <typename Real>
void init_tensor(const TensorSpec& t, const ModelConfig& c, const Rng& root, std::size_t index, Real* out) {
    Rng rng = root.fork(index);
    const auto& n = t.name;
    const std::size_t size = t.size();
    if (ends_with(n, "norm1") || ends_with(n, "norm2") || n == "final.norm") {
        std::fill_n(out, size, Real(1));
        return;
    }
    if (ends_with(n, ".bias") || ends_with(n, ".b1") || ends_with(n, ".b2")) {
        std::fill_n(out, size, Real(0));
        return;
    }
    double std_dev;
    if (n == "text.embed" || n == "text.pos" || n == "sos" || n == "cond.type") {
        std_dev = 0.5;
    } else if (n.starts_with("head.")) {
        std_dev = c.init_std;
    } else {
        std_dev = 1.0 / std::sqrt(static_cast<double>(t.rows));
        if (ends_with(n, ".wo") || ends_with(n, ".w2")) {
            std_dev /= std::sqrt(2.0 * c.layers);
        }
    }
    for (std::size_t i = 0; i < size; ++i) {
        out[i] = static_cast<Real>(std_dev * rng.normal());
    }
}

}  // namespace

template <typename Real>
ModelParams<Real> init_params(const ModelConfig& config, std::uint64_t seed) {
    ModelParams<Real> p;
    p.config = config;
    p.layout = ParamLayout(config);
    p.values.assign(p.layout.size(), Real(0));
    const Rng root(seed);
    // stream per tensor name so layouts that differ only in extra tensors agree
    for (const auto& t : p.layout.tensors()) {
        std::uint64_t h = 1469598103934665603ull;
        for (char ch : t.name) {
            h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ull;
        }
        init_tensor(t, config, root, h, p.values.data() + t.offset);
    }
    return p;
}

template <typename Real>
ModelParams<Real> extend_params(const ModelParams<Real>& old, const ModelConfig& config, std::uint64_t seed) {
    ModelParams<Real> p = init_params<Real>(config, seed);
    for (const auto& t : p.layout.tensors()) {
        const TensorSpec* o = old.layout.find(t.name);
        if (o != nullptr && o->rows == t.rows && o->cols == t.cols) {
            std::copy_n(old.values.data() + o->offset, t.size(), p.values.data() + t.offset);
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// sequences

std::int64_t ConditionTokens::count() const {
    std::int64_t n = 0;
    for (const auto& v : volumes) {
        n += v.positions();
    }
    return n;
}

std::int64_t Sequence::n_content() const {
    std::int64_t n = 0;
    for (const auto& s : tuples) {
        n += s.tokens();
    }
    return n;
}

std::vector<RopeId> condition_rope_ids(std::size_t text_len, const ConditionTokens& cond) {
    std::vector<RopeId> ids(text_len, RopeId{0, 0, 0, 0});
    for (std::size_t i = 0; i < cond.volumes.size(); ++i) {
        const auto& v = cond.volumes[i];
        const int t0 = i < cond.t_offsets.size() ? cond.t_offsets[i] : 0;
        for (int f = 0; f < v.frames(); ++f) {
            for (int y = 0; y < v.height(); ++y) {
                for (int x = 0; x < v.width(); ++x) {
                    ids.push_back(RopeId{0, t0 + f, y, x});
                }
            }
        }
    }
    return ids;
}

Sequence make_sequence(const VideoLayout& layout, const CodecOutput& out, std::vector<int> text, ConditionTokens cond,
                       MaskPolicy policy) {
    Sequence s;
    s.text = std::move(text);
    s.cond = std::move(cond);
    for (std::size_t j = 0; j < out.blocks.size(); ++j) {
        s.tuples.push_back(layout.tuple_of(out.blocks[j]));
        s.inputs.push_back(out.input_for(j));
    }
    s.mask = build_mask(layout, out.blocks, s.n_cond(), policy);
    s.rope = rope_ids(layout, out.blocks, condition_rope_ids(s.text.size(), s.cond));
    return s;
}

// ---------------------------------------------------------------------------
// kernels

namespace {

// y[i] = bias + x[i] * wt, wt stored input-major (in x out).
template <typename Real>
void linear(const Real* x, std::int64_t n, int in, const Real* wt, const Real* bias, int out, Real* y) {
    for (std::int64_t i = 0; i < n; ++i) {
        Real* __restrict yi = y + i * out;
        if (bias != nullptr) {
            std::copy_n(bias, out, yi);
        } else {
            std::fill_n(yi, out, Real(0));
        }
        const Real* xi = x + i * in;
        for (int k = 0; k < in; ++k) {
            const Real a = xi[k];
            const Real* __restrict wk = wt + static_cast<std::size_t>(k) * out;
            for (int o = 0; o < out; ++o) {
                yi[o] += a * wk[o];
            }
        }
    }
}

template <typename Real>
std::vector<Real> transpose(const Real* a, int rows, int cols) {
    std::vector<Real> t(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            t[static_cast<std::size_t>(c) * rows + r] = a[static_cast<std::size_t>(r) * cols + c];
        }
    }
    return t;
}

// Accumulates dx += dy * w^T (when dx is set), dwt += x^T dy, db += sum dy.
template <typename Real>
void linear_backward(const Real* x, const Real* dy, std::int64_t n, int in, int out, const Real* wt, Real* dx,
                     Real* dwt, Real* db) {
    std::vector<Real> w;
    if (dx != nullptr) {
        w = transpose(wt, in, out);  // out x in
    }
    for (std::int64_t i = 0; i < n; ++i) {
        const Real* dyi = dy + i * out;
        const Real* xi = x + i * in;
        if (dx != nullptr) {
            Real* __restrict dxi = dx + i * in;
            for (int o = 0; o < out; ++o) {
                const Real g = dyi[o];
                const Real* __restrict wo = w.data() + static_cast<std::size_t>(o) * in;
                for (int k = 0; k < in; ++k) {
                    dxi[k] += g * wo[k];
                }
            }
        }
        for (int k = 0; k < in; ++k) {
            const Real a = xi[k];
            Real* __restrict dw = dwt + static_cast<std::size_t>(k) * out;
            for (int o = 0; o < out; ++o) {
                dw[o] += a * dyi[o];
            }
        }
        if (db != nullptr) {
            for (int o = 0; o < out; ++o) {
                db[o] += dyi[o];
            }
        }
    }
}

constexpr double kNormEps = 1e-6;

template <typename Real>
void rmsnorm(const Real* x, std::int64_t n, int W, const Real* g, Real* y, Real* r) {
    for (std::int64_t i = 0; i < n; ++i) {
        const Real* xi = x + i * W;
        double ss = 0.0;
        for (int k = 0; k < W; ++k) {
            ss += static_cast<double>(xi[k]) * xi[k];
        }
        const Real ri = static_cast<Real>(1.0 / std::sqrt(ss / W + kNormEps));
        r[i] = ri;
        for (int k = 0; k < W; ++k) {
            y[i * W + k] = xi[k] * ri * g[k];
        }
    }
}

template <typename Real>
void rmsnorm_backward(const Real* x, const Real* r, const Real* g, const Real* dy, std::int64_t n, int W, Real* dx,
                      Real* dg) {
    for (std::int64_t i = 0; i < n; ++i) {
        const Real* xi = x + i * W;
        const Real* dyi = dy + i * W;
        const Real ri = r[i];
        double s = 0.0;
        for (int k = 0; k < W; ++k) {
            dg[k] += dyi[k] * xi[k] * ri;
            s += static_cast<double>(g[k]) * dyi[k] * xi[k];
        }
        const Real coef = static_cast<Real>(s / W) * ri * ri * ri;
        for (int k = 0; k < W; ++k) {
            dx[i * W + k] += ri * g[k] * dyi[k] - xi[k] * coef;
        }
    }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename Real>
Real gelu(Real u) {
    const Real t = std::tanh(static_cast<Real>(kGeluC) * (u + static_cast<Real>(kGeluA) * u * u * u));
    return Real(0.5) * u * (Real(1) + t);
}

template <typename Real>
Real gelu_grad(Real u) {
    const Real c = static_cast<Real>(kGeluC);
    const Real a = static_cast<Real>(kGeluA);
    const Real t = std::tanh(c * (u + a * u * u * u));
    return Real(0.5) * (Real(1) + t) + Real(0.5) * u * (Real(1) - t * t) * c * (Real(1) + Real(3) * a * u * u);
}

template <typename Real>
struct KeySpan {
    const Real* k;
    const Real* v;
    std::int64_t count;
};

// Softmax attention of one query head over ordered key spans; writes the
// probabilities (one per visited key) and the head output.
template <typename Real>
void attend_query(const Real* q, std::span<const KeySpan<Real>> spans, int W, int hd, int head, Real scale,
                  Real* probs, Real* out) {
    const std::size_t hoff = static_cast<std::size_t>(head) * hd;
    std::int64_t n = 0;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (const auto& s : spans) {
        for (std::int64_t r = 0; r < s.count; ++r) {
            const Real* kr = s.k + r * W + hoff;
            Real dot = 0;
            for (int i = 0; i < hd; ++i) {
                dot += q[i] * kr[i];
            }
            dot *= scale;
            probs[n++] = dot;
            mx = std::max(mx, dot);
        }
    }
    Real sum = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        probs[i] = std::exp(probs[i] - mx);
        sum += probs[i];
    }
    const Real inv = Real(1) / sum;
    for (std::int64_t i = 0; i < n; ++i) {
        probs[i] *= inv;
    }
    std::fill_n(out, hd, Real(0));
    n = 0;
    for (const auto& s : spans) {
        for (std::int64_t r = 0; r < s.count; ++r) {
            const Real* vr = s.v + r * W + hoff;
            const Real p = probs[n++];
            for (int i = 0; i < hd; ++i) {
                out[i] += p * vr[i];
            }
        }
    }
}

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double stable_bce(double z, bool y) { return std::max(z, 0.0) - (y ? z : 0.0) + std::log1p(std::exp(-std::abs(z))); }

// Rotary cos/sin tables for a run of tokens.
struct RopeCache {
    int half = 0;
    std::vector<double> cos_v;
    std::vector<double> sin_v;
    void build(const RopeTable& table, std::span<const RopeId> ids) {
        half = table.head_dim() / 2;
        cos_v.resize(ids.size() * static_cast<std::size_t>(half));
        sin_v.resize(ids.size() * static_cast<std::size_t>(half));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            table.angles(ids[i], &cos_v[i * static_cast<std::size_t>(half)], &sin_v[i * static_cast<std::size_t>(half)]);
        }
    }
    const double* c(std::int64_t i) const { return &cos_v[static_cast<std::size_t>(i) * static_cast<std::size_t>(half)]; }
    const double* s(std::int64_t i) const { return &sin_v[static_cast<std::size_t>(i) * static_cast<std::size_t>(half)]; }
};

template <typename Real>
void rope_rows(Real* x, std::int64_t n, const ModelConfig& c, const RopeCache& rc, bool inverse) {
    const int W = c.width();
    for (std::int64_t i = 0; i < n; ++i) {
        for (int h = 0; h < c.heads; ++h) {
            Real* xh = x + i * W + static_cast<std::int64_t>(h) * c.head_dim;
            if (inverse) {
                RopeTable::rotate_inverse(xh, rc.c(i), rc.s(i), c.head_dim);
            } else {
                RopeTable::rotate(xh, rc.c(i), rc.s(i), c.head_dim);
            }
        }
    }
}

// Gathers a (channels, positions) volume into positions x channels rows.
template <typename Real>
std::vector<Real> gather_rows(const LatentVolume& v) {
    const std::int64_t P = v.positions();
    const int d = v.channels();
    std::vector<Real> rows(static_cast<std::size_t>(P) * d);
    const auto data = v.data();
    for (int ch = 0; ch < d; ++ch) {
        for (std::int64_t p = 0; p < P; ++p) {
            rows[static_cast<std::size_t>(p) * d + ch] = static_cast<Real>(data[static_cast<std::size_t>(ch) * P + p]);
        }
    }
    return rows;
}

template <typename Real>
void embed_text(const ModelParams<Real>& P, std::span<const int> text, Real* x) {
    const auto& c = P.config;
    const int W = c.width();
    if (static_cast<int>(text.size()) != c.text_len) {
        throw ShapeError("model: expected " + std::to_string(c.text_len) + " text tokens, got " +
                         std::to_string(text.size()));
    }
    for (std::size_t i = 0; i < text.size(); ++i) {
        const int id = text[i];
        if (id < 0 || id >= c.text_vocab) {
            throw ShapeError("model: text token " + std::to_string(id) + " outside the vocabulary");
        }
        const Real* e = P.at(P.layout.text_embed) + static_cast<std::size_t>(id) * W;
        const Real* pe = P.at(P.layout.text_pos) + i * static_cast<std::size_t>(W);
        for (int k = 0; k < W; ++k) {
            x[i * static_cast<std::size_t>(W) + k] = e[k] + pe[k];
        }
    }
}

template <typename Real>
void embed_cond(const ModelParams<Real>& P, const ConditionTokens& cond, Real* x) {
    const auto& c = P.config;
    const int W = c.width();
    if (cond.types.size() != cond.volumes.size()) {
        throw ShapeError("model: one type per condition volume required");
    }
    std::int64_t row = 0;
    for (std::size_t i = 0; i < cond.volumes.size(); ++i) {
        const auto& v = cond.volumes[i];
        if (v.channels() != c.latent_dim) {
            throw ShapeError("model: condition volume channel count differs from latent_dim");
        }
        const auto rows = gather_rows<Real>(v);
        Real* xi = x + row * W;
        linear(rows.data(), v.positions(), c.latent_dim, P.at(P.layout.cond_proj), P.at(P.layout.cond_bias), W, xi);
        const Real* te = P.at(P.layout.cond_type) + static_cast<std::size_t>(cond.types[i]) * W;
        for (std::int64_t p = 0; p < v.positions(); ++p) {
            for (int k = 0; k < W; ++k) {
                xi[p * W + k] += te[k];
            }
        }
        row += v.positions();
    }
}

template <typename Real>
void embed_block(const ModelParams<Real>& P, const ScaleTuple& s, const LatentVolume& input, Real* x) {
    const auto& c = P.config;
    const int W = c.width();
    if (input.empty()) {
        const Real* sos = P.at(P.layout.sos);
        for (std::int64_t p = 0; p < s.tokens(); ++p) {
            std::copy_n(sos, W, x + p * W);
        }
        return;
    }
    if (input.channels() != c.latent_dim || input.frames() != s.t || input.height() != s.h || input.width() != s.w) {
        throw ShapeError("model: block input does not match its scale");
    }
    const auto& bo = P.layout.for_bitwidth(s.bitwidth);
    const auto rows = gather_rows<Real>(input);
    linear(rows.data(), s.tokens(), c.latent_dim, P.at(bo.in_proj), P.at(bo.in_bias), W, x);
}

// Everything one layer keeps for the backward pass.
template <typename Real>
struct LayerCache {
    std::vector<Real> x, r1, h1, q, k, v, att, x2, r2, h2, u, a;
    std::vector<Real> probs;
    std::vector<std::size_t> prob_off;  // per (query, head)
};

template <typename Real>
struct ForwardCache {
    std::vector<LayerCache<Real>> layers;
    std::vector<Real> xf, rf, hf;
    RopeCache rope;
};

// Attention + MLP sublayers for rows [0, n) given the keys that are visible to
// each query. `keys_for(i)` returns the spans of query row i.
template <typename Real, typename KeysFor>
void layer_rows(const ModelParams<Real>& P, const LayerOffsets& L, std::int64_t n, const RopeCache& rc, Real* x,
                LayerCache<Real>& lc, const KeysFor& keys_for, bool keep) {
    const auto& c = P.config;
    const int W = c.width();
    const int F = c.hidden();
    const std::size_t nw = static_cast<std::size_t>(n) * W;
    lc.x.assign(x, x + nw);
    lc.r1.resize(static_cast<std::size_t>(n));
    lc.h1.resize(nw);
    rmsnorm(x, n, W, P.at(L.norm1), lc.h1.data(), lc.r1.data());
    lc.q.resize(nw);
    lc.k.resize(nw);
    lc.v.resize(nw);
    linear(lc.h1.data(), n, W, P.at(L.wq), static_cast<const Real*>(nullptr), W, lc.q.data());
    linear(lc.h1.data(), n, W, P.at(L.wk), static_cast<const Real*>(nullptr), W, lc.k.data());
    linear(lc.h1.data(), n, W, P.at(L.wv), static_cast<const Real*>(nullptr), W, lc.v.data());
    rope_rows(lc.q.data(), n, c, rc, false);
    rope_rows(lc.k.data(), n, c, rc, false);

    const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(c.head_dim)));
    lc.att.assign(nw, Real(0));
    lc.prob_off.assign(static_cast<std::size_t>(n) * c.heads + 1, 0);
    lc.probs.clear();
    std::vector<Real> scratch;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::vector<KeySpan<Real>> spans = keys_for(i, lc);
        std::int64_t nk = 0;
        for (const auto& s : spans) {
            nk += s.count;
        }
        for (int h = 0; h < c.heads; ++h) {
            const std::size_t slot = static_cast<std::size_t>(i) * c.heads + h;
            Real* probs;
            if (keep) {
                lc.prob_off[slot] = lc.probs.size();
                lc.probs.resize(lc.probs.size() + static_cast<std::size_t>(nk));
                probs = lc.probs.data() + lc.prob_off[slot];
            } else {
                scratch.resize(static_cast<std::size_t>(nk));
                probs = scratch.data();
            }
            attend_query<Real>(lc.q.data() + i * W + static_cast<std::int64_t>(h) * c.head_dim, spans, W, c.head_dim,
                               h, scale, probs, lc.att.data() + i * W + static_cast<std::int64_t>(h) * c.head_dim);
        }
    }
    lc.prob_off.back() = lc.probs.size();

    std::vector<Real> o(nw);
    linear(lc.att.data(), n, W, P.at(L.wo), static_cast<const Real*>(nullptr), W, o.data());
    for (std::size_t i = 0; i < nw; ++i) {
        x[i] += o[i];
    }
    lc.x2.assign(x, x + nw);
    lc.r2.resize(static_cast<std::size_t>(n));
    lc.h2.resize(nw);
    rmsnorm(x, n, W, P.at(L.norm2), lc.h2.data(), lc.r2.data());
    const std::size_t nf = static_cast<std::size_t>(n) * F;
    lc.u.resize(nf);
    lc.a.resize(nf);
    linear(lc.h2.data(), n, W, P.at(L.w1), P.at(L.b1), F, lc.u.data());
    for (std::size_t i = 0; i < nf; ++i) {
        lc.a[i] = gelu(lc.u[i]);
    }
    linear(lc.a.data(), n, F, P.at(L.w2), P.at(L.b2), W, o.data());
    for (std::size_t i = 0; i < nw; ++i) {
        x[i] += o[i];
    }
}

struct BlockRange {
    std::int64_t begin;
    std::int64_t size;
    int bitwidth;
};

template <typename Real>
std::vector<BlockRange> content_ranges(const Sequence& seq) {
    std::vector<BlockRange> out;
    std::int64_t pos = seq.n_cond();
    for (const auto& s : seq.tuples) {
        out.push_back(BlockRange{pos, s.tokens(), s.bitwidth});
        pos += s.tokens();
    }
    return out;
}

template <typename Real>
void check_sequence(const ModelParams<Real>& P, const Sequence& seq) {
    const std::int64_t n = seq.n_cond() + seq.n_content();
    if (seq.inputs.size() != seq.tuples.size()) {
        throw ShapeError("model: one input volume per block required");
    }
    if (seq.mask.n_tokens() != n || seq.mask.n_cond() != seq.n_cond() || seq.mask.blocks().size() != seq.tuples.size()) {
        throw ShapeError("model: mask does not match the sequence length");
    }
    if (static_cast<std::int64_t>(seq.rope.size()) != n) {
        throw ShapeError("model: rotary ids do not match the sequence length");
    }
    for (const auto& s : seq.tuples) {
        if (!P.config.has_bitwidth(s.bitwidth)) {
            throw ShapeError("model has no head for bitwidth " + std::to_string(s.bitwidth));
        }
    }
}

// Teacher-forced forward over the whole sequence.
template <typename Real>
Logits<Real> forward_impl(const ModelParams<Real>& P, const Sequence& seq, ForwardCache<Real>* cache) {
    check_sequence(P, seq);
    const auto& c = P.config;
    const int W = c.width();
    const std::int64_t n = seq.n_cond() + seq.n_content();
    std::vector<Real> x(static_cast<std::size_t>(n) * W);
    embed_text(P, seq.text, x.data());
    embed_cond(P, seq.cond, x.data() + static_cast<std::int64_t>(seq.text.size()) * W);
    const auto ranges = content_ranges<Real>(seq);
    for (std::size_t j = 0; j < ranges.size(); ++j) {
        embed_block(P, seq.tuples[j], seq.inputs[j], x.data() + ranges[j].begin * W);
    }
    ForwardCache<Real> local;
    ForwardCache<Real>& fc = cache != nullptr ? *cache : local;
    fc.rope.build(RopeTable(c.head_dim, c.rope_bases), seq.rope.ids);
    fc.layers.resize(static_cast<std::size_t>(c.layers));
    const bool keep = cache != nullptr;
    for (int l = 0; l < c.layers; ++l) {
        auto& lc = fc.layers[static_cast<std::size_t>(l)];
        auto keys_for = [&](std::int64_t i, const LayerCache<Real>& cur) {
            std::vector<KeySpan<Real>> spans;
            for (const auto& iv : seq.mask.intervals(i)) {
                spans.push_back(KeySpan<Real>{cur.k.data() + iv.begin * W, cur.v.data() + iv.begin * W, iv.size()});
            }
            return spans;
        };
        layer_rows(P, P.layout.layers[static_cast<std::size_t>(l)], n, fc.rope, x.data(), lc, keys_for, keep);
    }
    fc.xf = x;
    fc.rf.resize(static_cast<std::size_t>(n));
    fc.hf.resize(x.size());
    rmsnorm(x.data(), n, W, P.at(P.layout.final_norm), fc.hf.data(), fc.rf.data());

    Logits<Real> out;
    out.block_offsets.push_back(0);
    for (const auto& r : ranges) {
        const auto& bo = P.layout.for_bitwidth(r.bitwidth);
        const std::size_t base = out.values.size();
        out.values.resize(base + static_cast<std::size_t>(r.size) * r.bitwidth);
        linear(fc.hf.data() + r.begin * W, r.size, W, P.at(bo.head), P.at(bo.head_bias), r.bitwidth,
               out.values.data() + base);
        out.block_offsets.push_back(out.values.size());
    }
    return out;
}

// Backward of one sequence; grad accumulates in Real, dlogits already scaled.
template <typename Real>
void backward_impl(const ModelParams<Real>& P, const Sequence& seq, const ForwardCache<Real>& fc,
                   const std::vector<Real>& dlogits, const Logits<Real>& logits, std::vector<Real>& g) {
    const auto& c = P.config;
    const auto& PL = P.layout;
    const int W = c.width();
    const int F = c.hidden();
    const int hd = c.head_dim;
    const std::int64_t n = seq.n_cond() + seq.n_content();
    const std::size_t nw = static_cast<std::size_t>(n) * W;
    const auto ranges = content_ranges<Real>(seq);

    std::vector<Real> dh(nw, Real(0));
    for (std::size_t j = 0; j < ranges.size(); ++j) {
        const auto& r = ranges[j];
        const auto& bo = PL.for_bitwidth(r.bitwidth);
        linear_backward(fc.hf.data() + r.begin * W, dlogits.data() + logits.block_offsets[j], r.size, W, r.bitwidth,
                        P.at(bo.head), dh.data() + r.begin * W, g.data() + bo.head, g.data() + bo.head_bias);
    }
    std::vector<Real> dx(nw, Real(0));
    rmsnorm_backward(fc.xf.data(), fc.rf.data(), P.at(PL.final_norm), dh.data(), n, W, dx.data(),
                     g.data() + PL.final_norm);

    const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(hd)));
    for (int l = c.layers - 1; l >= 0; --l) {
        const auto& L = PL.layers[static_cast<std::size_t>(l)];
        const auto& lc = fc.layers[static_cast<std::size_t>(l)];
        // MLP
        const std::size_t nf = static_cast<std::size_t>(n) * F;
        std::vector<Real> da(nf, Real(0));
        linear_backward(lc.a.data(), dx.data(), n, F, W, P.at(L.w2), da.data(), g.data() + L.w2, g.data() + L.b2);
        for (std::size_t i = 0; i < nf; ++i) {
            da[i] *= gelu_grad(lc.u[i]);
        }
        std::vector<Real> dh2(nw, Real(0));
        linear_backward(lc.h2.data(), da.data(), n, W, F, P.at(L.w1), dh2.data(), g.data() + L.w1, g.data() + L.b1);
        rmsnorm_backward(lc.x2.data(), lc.r2.data(), P.at(L.norm2), dh2.data(), n, W, dx.data(), g.data() + L.norm2);
        // attention output projection
        std::vector<Real> datt(nw, Real(0));
        linear_backward(lc.att.data(), dx.data(), n, W, W, P.at(L.wo), datt.data(), g.data() + L.wo,
                        static_cast<Real*>(nullptr));
        std::vector<Real> dq(nw, Real(0));
        std::vector<Real> dk(nw, Real(0));
        std::vector<Real> dv(nw, Real(0));
        std::vector<Real> dp;
        for (std::int64_t i = 0; i < n; ++i) {
            const auto ivs = seq.mask.intervals(i);
            for (int h = 0; h < c.heads; ++h) {
                const std::size_t slot = static_cast<std::size_t>(i) * c.heads + h;
                const Real* probs = lc.probs.data() + lc.prob_off[slot];
                const std::size_t nk = lc.prob_off[slot + 1] - lc.prob_off[slot];
                const std::size_t hoff = static_cast<std::size_t>(h) * hd;
                const Real* dout = datt.data() + i * W + hoff;
                const Real* qi = lc.q.data() + i * W + hoff;
                dp.resize(nk);
                std::size_t m = 0;
                Real dot_sum = 0;
                for (const auto& iv : ivs) {
                    for (std::int64_t kpos = iv.begin; kpos < iv.end; ++kpos) {
                        const Real* vr = lc.v.data() + kpos * W + hoff;
                        Real s = 0;
                        for (int e = 0; e < hd; ++e) {
                            s += dout[e] * vr[e];
                        }
                        dp[m] = s;
                        dot_sum += probs[m] * s;
                        ++m;
                    }
                }
                Real* dqi = dq.data() + i * W + hoff;
                m = 0;
                for (const auto& iv : ivs) {
                    for (std::int64_t kpos = iv.begin; kpos < iv.end; ++kpos) {
                        const Real p = probs[m];
                        const Real ds = p * (dp[m] - dot_sum) * scale;
                        const Real* kr = lc.k.data() + kpos * W + hoff;
                        Real* dkr = dk.data() + kpos * W + hoff;
                        Real* dvr = dv.data() + kpos * W + hoff;
                        for (int e = 0; e < hd; ++e) {
                            dqi[e] += ds * kr[e];
                            dkr[e] += ds * qi[e];
                            dvr[e] += p * dout[e];
                        }
                        ++m;
                    }
                }
            }
        }
        rope_rows(dq.data(), n, c, fc.rope, true);
        rope_rows(dk.data(), n, c, fc.rope, true);
        std::vector<Real> dh1(nw, Real(0));
        linear_backward(lc.h1.data(), dq.data(), n, W, W, P.at(L.wq), dh1.data(), g.data() + L.wq,
                        static_cast<Real*>(nullptr));
        linear_backward(lc.h1.data(), dk.data(), n, W, W, P.at(L.wk), dh1.data(), g.data() + L.wk,
                        static_cast<Real*>(nullptr));
        linear_backward(lc.h1.data(), dv.data(), n, W, W, P.at(L.wv), dh1.data(), g.data() + L.wv,
                        static_cast<Real*>(nullptr));
        rmsnorm_backward(lc.x.data(), lc.r1.data(), P.at(L.norm1), dh1.data(), n, W, dx.data(), g.data() + L.norm1);
    }

    // embeddings
    for (std::size_t i = 0; i < seq.text.size(); ++i) {
        Real* ge = g.data() + PL.text_embed + static_cast<std::size_t>(seq.text[i]) * W;
        Real* gp = g.data() + PL.text_pos + i * static_cast<std::size_t>(W);
        for (int k = 0; k < W; ++k) {
            ge[k] += dx[i * static_cast<std::size_t>(W) + k];
            gp[k] += dx[i * static_cast<std::size_t>(W) + k];
        }
    }
    std::int64_t row = static_cast<std::int64_t>(seq.text.size());
    for (std::size_t i = 0; i < seq.cond.volumes.size(); ++i) {
        const auto& v = seq.cond.volumes[i];
        const auto rows = gather_rows<Real>(v);
        linear_backward(rows.data(), dx.data() + row * W, v.positions(), c.latent_dim, W, P.at(PL.cond_proj),
                        static_cast<Real*>(nullptr), g.data() + PL.cond_proj, g.data() + PL.cond_bias);
        Real* gt = g.data() + PL.cond_type + static_cast<std::size_t>(seq.cond.types[i]) * W;
        for (std::int64_t p = 0; p < v.positions(); ++p) {
            for (int k = 0; k < W; ++k) {
                gt[k] += dx[static_cast<std::size_t>(row + p) * W + k];
            }
        }
        row += v.positions();
    }
    for (std::size_t j = 0; j < ranges.size(); ++j) {
        const auto& r = ranges[j];
        const Real* dxb = dx.data() + r.begin * W;
        if (seq.inputs[j].empty()) {
            Real* gs = g.data() + PL.sos;
            for (std::int64_t p = 0; p < r.size; ++p) {
                for (int k = 0; k < W; ++k) {
                    gs[k] += dxb[p * W + k];
                }
            }
            continue;
        }
        const auto& bo = PL.for_bitwidth(r.bitwidth);
        const auto rows = gather_rows<Real>(seq.inputs[j]);
        linear_backward(rows.data(), dxb, r.size, c.latent_dim, W, P.at(bo.in_proj), static_cast<Real*>(nullptr),
                        g.data() + bo.in_proj, g.data() + bo.in_bias);
    }
}

template <typename Real>
double bce_impl(std::span<const Real> logits, const BitTensor& labels) {
    if (static_cast<std::int64_t>(logits.size()) != labels.total_bits()) {
        throw ShapeError("bitwise_bce: logit count does not match the label bits");
    }
    if (logits.empty()) {
        return 0.0;
    }
    const int b = labels.bitwidth();
    double s = 0.0;
    for (std::int64_t p = 0; p < labels.positions(); ++p) {
        for (int i = 0; i < b; ++i) {
            s += stable_bce(static_cast<double>(logits[static_cast<std::size_t>(p * b + i)]), labels.bit(p, i));
        }
    }
    return s / static_cast<double>(logits.size());
}

}  // namespace

template <typename Real>
Logits<Real> forward(const ModelParams<Real>& params, const Sequence& seq) {
    return forward_impl<Real>(params, seq, nullptr);
}

double bitwise_bce(std::span<const float> logits, const BitTensor& labels) { return bce_impl(logits, labels); }
double bitwise_bce(std::span<const double> logits, const BitTensor& labels) { return bce_impl(logits, labels); }

template <typename Real>
LossStats loss_and_grad(const ModelParams<Real>& params, std::span<const TrainExample> batch,
                        std::vector<double>* grad) {
    std::int64_t total_bits = 0;
    for (const auto& ex : batch) {
        if (ex.labels.size() != ex.seq.tuples.size()) {
            throw ShapeError("loss: one label tensor per block required");
        }
        for (std::size_t j = 0; j < ex.labels.size(); ++j) {
            if (!ex.labels[j].matches(ex.seq.tuples[j])) {
                throw ShapeError("loss: label " + std::to_string(j) + " does not match its block");
            }
            total_bits += ex.labels[j].total_bits();
        }
    }
    LossStats st;
    st.bits = total_bits;
    if (total_bits == 0) {
        if (grad != nullptr) {
            grad->assign(params.values.size(), 0.0);
        }
        return st;
    }
    std::vector<Real> g;
    if (grad != nullptr) {
        g.assign(params.values.size(), Real(0));
    }
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    const double inv_total = 1.0 / static_cast<double>(total_bits);
    for (const auto& ex : batch) {
        ForwardCache<Real> fc;
        const auto logits = forward_impl<Real>(params, ex.seq, grad != nullptr ? &fc : nullptr);
        std::vector<Real> dlogits(logits.values.size());
        for (std::size_t j = 0; j < ex.labels.size(); ++j) {
            const auto& lab = ex.labels[j];
            const int b = lab.bitwidth();
            const std::size_t base = logits.block_offsets[j];
            for (std::int64_t p = 0; p < lab.positions(); ++p) {
                for (int i = 0; i < b; ++i) {
                    const std::size_t idx = base + static_cast<std::size_t>(p * b + i);
                    const double z = static_cast<double>(logits.values[idx]);
                    const bool y = lab.bit(p, i);
                    loss_sum += stable_bce(z, y);
                    correct += ((z >= 0.0) == y) ? 1 : 0;
                    dlogits[idx] = static_cast<Real>((sigmoid(z) - (y ? 1.0 : 0.0)) * inv_total);
                }
            }
        }
        if (grad != nullptr) {
            backward_impl(params, ex.seq, fc, dlogits, logits, g);
        }
    }
    st.loss = loss_sum * inv_total;
    st.accuracy = static_cast<double>(correct) * inv_total;
    if (grad != nullptr) {
        grad->assign(g.begin(), g.end());
    }
    return st;
}

template <typename Real>
LossStats ModelTrainer<Real>::step(std::span<const TrainExample> batch) {
    const LossStats st = loss_and_grad(*params_, batch, &grad_);
    if (!std::isfinite(st.loss)) {
        throw NumericError("training loss is not finite at step " + std::to_string(adam_.steps()));
    }
    for (double x : grad_) {
        if (!std::isfinite(x)) {
            throw NumericError("non-finite gradient at step " + std::to_string(adam_.steps()));
        }
    }
    adam_.update(params_->values, grad_);
    return st;
}

// ---------------------------------------------------------------------------
// generation

namespace {

struct KvBlock {
    std::vector<float> k;
    std::vector<float> v;
    std::int64_t begin = 0;
    std::int64_t size = 0;
    bool live = false;
};

}  // namespace

GenerateResult generate(const ModelParams<float>& P, const Tokenizer& tokenizer, const VideoLayout& layout,
                        const std::vector<int>& text, const ConditionTokens& cond,
                        std::span<const BitTensor> history, const GenerateOptions& options,
                        const LatentVolume* prior) {
    const auto& c = P.config;
    const int W = c.width();
    const auto& blocks = layout.flat_blocks;
    if (history.size() > blocks.size()) {
        throw ShapeError("generate: history is longer than the layout");
    }
    for (std::size_t j = 0; j < history.size(); ++j) {
        if (!history[j].matches(layout.tuple_of(blocks[j]))) {
            throw ShapeError("generate: history block " + std::to_string(j) + " is inconsistent with the layout");
        }
    }
    if (tokenizer.latent_dim != c.latent_dim) {
        throw ShapeError("generate: tokenizer and model latent dims differ");
    }
    const std::int64_t n_cond = static_cast<std::int64_t>(text.size()) + cond.count();
    const AttentionMask mask = build_mask(layout, n_cond, options.policy);
    const KvCacheProfile profile = kv_cache_profile(mask);
    const RopeIds ids = rope_ids(layout, blocks, condition_rope_ids(text.size(), cond));
    const RopeTable table(c.head_dim, c.rope_bases);

    // caches per layer: the condition prefix plus one entry per block
    std::vector<KvBlock> prefix(static_cast<std::size_t>(c.layers));
    std::vector<std::vector<KvBlock>> kv(static_cast<std::size_t>(c.layers), std::vector<KvBlock>(blocks.size()));
    std::vector<LayerCache<float>> scratch(static_cast<std::size_t>(c.layers));

    auto spans_for_block = [&](int l, std::span<const KeyInterval> ivs) {
        std::vector<KeySpan<float>> spans;
        const auto& pre = prefix[static_cast<std::size_t>(l)];
        for (const auto& iv : ivs) {
            std::int64_t b = iv.begin;
            while (b < iv.end) {
                if (b < n_cond) {
                    const std::int64_t e = std::min(iv.end, n_cond);
                    spans.push_back(KeySpan<float>{pre.k.data() + b * W, pre.v.data() + b * W, e - b});
                    b = e;
                    continue;
                }
                const int jb = mask.block_of(b);
                const auto& kb = kv[static_cast<std::size_t>(l)][static_cast<std::size_t>(jb)];
                if (!kb.live) {
                    throw ShapeError("generate: attended block was evicted");
                }
                const std::int64_t e = std::min(iv.end, kb.begin + kb.size);
                spans.push_back(KeySpan<float>{kb.k.data() + (b - kb.begin) * W, kb.v.data() + (b - kb.begin) * W, e - b});
                b = e;
            }
        }
        return spans;
    };

    GenerateResult res;
    res.blocks = blocks;
    // prefix
    if (n_cond > 0) {
        std::vector<float> x(static_cast<std::size_t>(n_cond) * W);
        embed_text(P, text, x.data());
        embed_cond(P, cond, x.data() + static_cast<std::int64_t>(text.size()) * W);
        RopeCache rc;
        rc.build(table, std::span<const RopeId>(ids.ids).subspan(0, static_cast<std::size_t>(n_cond)));
        const std::vector<KeyInterval> ivs{KeyInterval{0, n_cond}};
        for (int l = 0; l < c.layers; ++l) {
            auto keys_for = [&](std::int64_t, const LayerCache<float>& cur) {
                auto& pre = prefix[static_cast<std::size_t>(l)];
                if (pre.k.empty()) {
                    pre.k = cur.k;
                    pre.v = cur.v;
                }
                return spans_for_block(l, ivs);
            };
            layer_rows(P, P.layout.layers[static_cast<std::size_t>(l)], n_cond, rc, x.data(),
                       scratch[static_cast<std::size_t>(l)], keys_for, false);
        }
    }

    std::vector<LatentVolume> accs;
    for (const auto& p : layout.pyramids) {
        const auto& top = p.largest();
        accs.emplace_back(c.latent_dim, top.t, top.h, top.w);
    }
    Rng rng(options.seed);
    LatentVolume input;
    if (prior != nullptr && !blocks.empty()) {
        input = next_block_input(*prior, layout.tuple_of(blocks.front()), tokenizer.resize_mode);
    }
    std::int64_t begin = n_cond;
    for (std::size_t j = 0; j < blocks.size(); ++j) {
        const auto& blk = blocks[j];
        const auto& s = layout.tuple_of(blk);
        const std::int64_t nb = s.tokens();
        std::vector<float> x(static_cast<std::size_t>(nb) * W);
        embed_block(P, s, input, x.data());
        RopeCache rc;
        rc.build(table, std::span<const RopeId>(ids.ids).subspan(static_cast<std::size_t>(begin), static_cast<std::size_t>(nb)));
        for (int l = 0; l < c.layers; ++l) {
            auto keys_for = [&](std::int64_t, const LayerCache<float>& cur) {
                auto& kb = kv[static_cast<std::size_t>(l)][j];
                if (!kb.live) {
                    kb.k = cur.k;
                    kb.v = cur.v;
                    kb.begin = begin;
                    kb.size = nb;
                    kb.live = true;
                }
                return spans_for_block(l, mask.block_intervals(j));
            };
            layer_rows(P, P.layout.layers[static_cast<std::size_t>(l)], nb, rc, x.data(),
                       scratch[static_cast<std::size_t>(l)], keys_for, false);
        }
        std::vector<float> hf(x.size());
        std::vector<float> rf(static_cast<std::size_t>(nb));
        rmsnorm(x.data(), nb, W, P.at(P.layout.final_norm), hf.data(), rf.data());
        const auto& bo = P.layout.for_bitwidth(s.bitwidth);
        std::vector<float> logits(static_cast<std::size_t>(nb) * s.bitwidth);
        linear(hf.data(), nb, W, P.at(bo.head), P.at(bo.head_bias), s.bitwidth, logits.data());

        BitTensor codes(s.t, s.h, s.w, s.bitwidth);
        if (j < history.size()) {
            codes = history[j];
        } else {
            for (std::int64_t p = 0; p < nb; ++p) {
                for (int i = 0; i < s.bitwidth; ++i) {
                    const double z = logits[static_cast<std::size_t>(p * s.bitwidth + i)];
                    bool bit;
                    if (options.temperature <= 0.0) {
                        bit = z >= 0.0;
                    } else {
                        bit = rng.uniform() < sigmoid(z / options.temperature);
                    }
                    codes.set_bit(p, i, bit);
                }
            }
        }
        if (options.record_logits) {
            res.logits.push_back(std::move(logits));
        }

        // cache accounting, then evict blocks no later query can see
        std::int64_t live = n_cond;
        for (std::size_t i = 0; i <= j; ++i) {
            if (kv.front()[i].live) {
                live += kv.front()[i].size;
            }
        }
        res.live_keys.push_back(live);
        res.peak_cached_keys = std::max(res.peak_cached_keys, live);
        for (std::size_t i = 0; i <= j; ++i) {
            if (profile.last_use[i] <= j) {
                for (auto& layer_kv : kv) {
                    layer_kv[i] = KvBlock{};
                }
            }
        }

        const auto& pyr = layout.pyramid_of(blk);
        auto& acc = accs[static_cast<std::size_t>(blk.pyramid)];
        accumulate_block(acc, codes, tokenizer.adapters_for(pyr.kind)[static_cast<std::size_t>(blk.scale)],
                         tokenizer.resize_mode);
        res.codes.push_back(std::move(codes));
        if (j + 1 < blocks.size()) {
            input = next_block_input(acc, layout.tuple_of(blocks[j + 1]), tokenizer.resize_mode);
        }
        begin += nb;
    }
    res.peak_cached_keys = std::max(res.peak_cached_keys, n_cond);
    res.reconstructions = std::move(accs);
    return res;
}

// ---------------------------------------------------------------------------
// checkpoints

const Blob* Checkpoint::find(const std::string& name) const {
    for (const auto& b : blobs) {
        if (b.name == name) {
            return &b;
        }
    }
    return nullptr;
}

void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    io::put_magic(os, "ISCK");
    io::put_u32(os, 1);
    io::put_u32(os, static_cast<std::uint32_t>(ck.config_echo.size()));
    os.write(ck.config_echo.data(), static_cast<std::streamsize>(ck.config_echo.size()));
    io::put_u32(os, static_cast<std::uint32_t>(ck.blobs.size()));
    for (const auto& b : ck.blobs) {
        io::put_u32(os, static_cast<std::uint32_t>(b.name.size()));
        os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
        io::put_u64(os, b.values.size());
        for (float v : b.values) {
            io::put_f32(os, v);
        }
    }
    if (!os) {
        throw FormatError("failed to write checkpoint");
    }
}

namespace {

std::string get_string(std::istream& is, std::uint32_t limit) {
    const std::uint32_t n = io::get_u32(is);
    if (n > limit) {
        throw FormatError("checkpoint string length " + std::to_string(n) + " exceeds limit");
    }
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) {
        throw FormatError("truncated checkpoint string");
    }
    return s;
}

}  // namespace

Checkpoint read_checkpoint(std::istream& is) {
    io::expect_magic(is, "ISCK");
    io::expect_version(is, 1, "checkpoint");
    Checkpoint ck;
    ck.config_echo = get_string(is, 1u << 24);
    const std::uint32_t count = io::get_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        Blob b;
        b.name = get_string(is, 4096);
        const std::uint64_t n = io::get_u64(is);
        if (n > (1ull << 32)) {
            throw FormatError("checkpoint blob '" + b.name + "' is implausibly large");
        }
        b.values.resize(n);
        for (auto& v : b.values) {
            v = io::get_f32(is);
        }
        ck.blobs.push_back(std::move(b));
    }
    return ck;
}

std::vector<Blob> param_blobs(const ModelParams<float>& params) {
    std::vector<Blob> out;
    for (const auto& t : params.layout.tensors()) {
        const auto* p = params.values.data() + t.offset;
        out.push_back(Blob{"model." + t.name, std::vector<float>(p, p + t.size())});
    }
    return out;
}

ModelParams<float> params_from_blobs(const ModelConfig& config, std::span<const Blob> blobs) {
    ModelParams<float> p;
    p.config = config;
    p.layout = ParamLayout(config);
    p.values.assign(p.layout.size(), 0.0f);
    std::map<std::string, const Blob*> by_name;
    for (const auto& b : blobs) {
        by_name[b.name] = &b;
    }
    for (const auto& t : p.layout.tensors()) {
        const auto it = by_name.find("model." + t.name);
        if (it == by_name.end()) {
            throw FormatError("checkpoint is missing tensor '" + t.name + "'");
        }
        if (it->second->values.size() != t.size()) {
            throw FormatError("checkpoint tensor '" + t.name + "' has the wrong size");
        }
        std::copy(it->second->values.begin(), it->second->values.end(), p.values.begin() + static_cast<std::ptrdiff_t>(t.offset));
    }
    return p;
}

namespace {

std::string adapter_name(const char* kind, std::size_t k, const char* part) {
    return std::string("tokenizer.") + kind + "." + std::to_string(k) + "." + part;
}

}  // namespace

std::vector<Blob> tokenizer_blobs(const Tokenizer& tokenizer) {
    std::vector<Blob> out;
    auto add = [&](const char* kind, const ScaleAdapters& adapters) {
        for (std::size_t k = 0; k < adapters.size(); ++k) {
            const auto& a = adapters[k];
            if (a.is_identity()) {
                continue;
            }
            out.push_back(Blob{adapter_name(kind, k, "down"), std::vector<float>(a.down.begin(), a.down.end())});
            out.push_back(Blob{adapter_name(kind, k, "up"), std::vector<float>(a.up.begin(), a.up.end())});
        }
    };
    add("image", tokenizer.image_adapters);
    add("clip", tokenizer.clip_adapters);
    return out;
}

void load_tokenizer_blobs(Tokenizer& tokenizer, std::span<const Blob> blobs) {
    std::map<std::string, const Blob*> by_name;
    for (const auto& b : blobs) {
        by_name[b.name] = &b;
    }
    auto load = [&](const char* kind, ScaleAdapters& adapters) {
        for (std::size_t k = 0; k < adapters.size(); ++k) {
            auto& a = adapters[k];
            if (a.is_identity()) {
                continue;
            }
            for (const char* part : {"down", "up"}) {
                const auto it = by_name.find(adapter_name(kind, k, part));
                auto& dst = std::string_view(part) == "down" ? a.down : a.up;
                if (it == by_name.end() || it->second->values.size() != dst.size()) {
                    throw FormatError("tokenizer checkpoint lacks a matching '" + adapter_name(kind, k, part) + "'");
                }
                dst.assign(it->second->values.begin(), it->second->values.end());
            }
        }
    };
    load("image", tokenizer.image_adapters);
    load("clip", tokenizer.clip_adapters);
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const ModelConfig&, std::uint64_t);
template ModelParams<float> extend_params<float>(const ModelParams<float>&, const ModelConfig&, std::uint64_t);
template ModelParams<double> extend_params<double>(const ModelParams<double>&, const ModelConfig&, std::uint64_t);
template Logits<float> forward<float>(const ModelParams<float>&, const Sequence&);
template Logits<double> forward<double>(const ModelParams<double>&, const Sequence&);
template LossStats loss_and_grad<float>(const ModelParams<float>&, std::span<const TrainExample>, std::vector<double>*);
template LossStats loss_and_grad<double>(const ModelParams<double>&, std::span<const TrainExample>, std::vector<double>*);
template class ModelTrainer<float>;
template class ModelTrainer<double>;

}  // namespace stpyr
