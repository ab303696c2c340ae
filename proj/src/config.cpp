// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "stpyr/errors.hpp"
#include "stpyr/synth.hpp"

namespace stpyr {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

long long parse_int(const std::string& v) {
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError("expected an integer, got '" + v + "'");
    }
    return out;
}

double parse_double(const std::string& v) {
    if (v == "sqrt32") {
        return 5.656854249492381;
    }
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) {
        throw ConfigError("expected a number, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "off") {
        return false;
    }
    throw ConfigError("expected a boolean, got '" + v + "'");
}

std::vector<std::pair<int, int>> parse_ladder(const std::string& v) {
    std::vector<std::pair<int, int>> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        const auto x = item.find('x');
        if (x == std::string::npos) {
            throw ConfigError("ladder entries look like HxW, got '" + item + "'");
        }
        out.emplace_back(static_cast<int>(parse_int(item.substr(0, x))), static_cast<int>(parse_int(item.substr(x + 1))));
    }
    if (out.empty()) {
        throw ConfigError("ladder must not be empty");
    }
    return out;
}

std::string fmt_ladder(const std::vector<std::pair<int, int>>& l) {
    std::string s;
    for (std::size_t i = 0; i < l.size(); ++i) {
        s += (i ? "," : "") + std::to_string(l[i].first) + "x" + std::to_string(l[i].second);
    }
    return s;
}

struct Field {
    const char* key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define INT_FIELD(KEY, MEMBER)                                                                          \
    Field {                                                                                             \
        KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = static_cast<int>(parse_int(v)); }, \
            [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }                          \
    }
#define DOUBLE_FIELD(KEY, MEMBER)                                                               \
    Field {                                                                                     \
        KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_double(v); },     \
            [](const ExperimentConfig& c) { return fmt_double(c.MEMBER); }                      \
    }
#define BOOL_FIELD(KEY, MEMBER)                                                                 \
    Field {                                                                                     \
        KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_bool(v); },       \
            [](const ExperimentConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }  \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> f{
        Field{"seed", [](ExperimentConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(parse_int(v)); },
              [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
        Field{"schedule.ladder", [](ExperimentConfig& c, const std::string& v) { c.schedule.ladder = parse_ladder(v); },
              [](const ExperimentConfig& c) { return fmt_ladder(c.schedule.ladder); }},
        INT_FIELD("schedule.t_latent", schedule.t_latent),
        INT_FIELD("schedule.n_clips", schedule.n_clips),
        INT_FIELD("schedule.k_s", schedule.k_s),
        INT_FIELD("schedule.reps", schedule.reps),
        INT_FIELD("schedule.small_bits", schedule.small_bits),
        INT_FIELD("schedule.large_bits", schedule.large_bits),
        INT_FIELD("schedule.small_bits_area_threshold", schedule.small_bits_area_threshold),
        Field{"bsq.resize_mode", [](ExperimentConfig& c, const std::string& v) { c.resize_mode = parse_resize_mode(v); },
              [](const ExperimentConfig& c) { return std::string(to_string(c.resize_mode)); }},
        DOUBLE_FIELD("bsq.entropy_tau", tokenizer.weights.tau),
        DOUBLE_FIELD("bsq.reconstruction_weight", tokenizer.weights.reconstruction),
        DOUBLE_FIELD("bsq.commitment_weight", tokenizer.weights.commitment),
        DOUBLE_FIELD("bsq.entropy_weight", tokenizer.weights.entropy),
        BOOL_FIELD("bsq.sqd", tokenizer.sqd),
        INT_FIELD("bsq.sqd_n_droppable", tokenizer.sqd_n_droppable),
        DOUBLE_FIELD("bsq.sqd_p", tokenizer.sqd_p),
        INT_FIELD("tokenizer.steps", tokenizer.steps),
        INT_FIELD("tokenizer.batch", tokenizer.batch),
        DOUBLE_FIELD("tokenizer.lr", tokenizer.adam.lr),
        DOUBLE_FIELD("codec.bsc_flip_p", bsc_flip_p),
        INT_FIELD("patch.pt", patch.pt),
        INT_FIELD("patch.ph", patch.ph),
        INT_FIELD("patch.pw", patch.pw),
        Field{"patch.mode", [](ExperimentConfig& c, const std::string& v) { c.patch.mode = parse_patch_mode(v); },
              [](const ExperimentConfig& c) { return std::string(to_string(c.patch.mode)); }},
        INT_FIELD("data.videos", data.videos),
        INT_FIELD("data.held_out", data.held_out),
        INT_FIELD("data.height", data.height),
        INT_FIELD("data.width", data.width),
        INT_FIELD("data.max_shapes", data.max_shapes),
        INT_FIELD("model.layers", model.layers),
        INT_FIELD("model.heads", model.heads),
        INT_FIELD("model.head_dim", model.head_dim),
        INT_FIELD("model.mlp_ratio", model.mlp_ratio),
        INT_FIELD("model.text_len", model.text_len),
        DOUBLE_FIELD("model.init_std", model.init_std),
        DOUBLE_FIELD("model.rope_base_scale", model.rope_bases[0]),
        DOUBLE_FIELD("model.rope_base_t", model.rope_bases[1]),
        DOUBLE_FIELD("model.rope_base_h", model.rope_bases[2]),
        DOUBLE_FIELD("model.rope_base_w", model.rope_bases[3]),
        INT_FIELD("train.steps", train.steps),
        INT_FIELD("train.batch", train.batch),
        DOUBLE_FIELD("train.lr", train.adam.lr),
        DOUBLE_FIELD("train.beta1", train.adam.beta1),
        DOUBLE_FIELD("train.beta2", train.adam.beta2),
        INT_FIELD("train.warmup", train.adam.warmup_steps),
        DOUBLE_FIELD("train.grad_clip", train.adam.grad_clip),
        INT_FIELD("train.log_every", train.log_every),
        BOOL_FIELD("train.sqd", train.sqd),
        Field{"train.variant", [](ExperimentConfig& c, const std::string& v) { c.train.variant = MaskPolicy::parse(v); },
              [](const ExperimentConfig& c) { return c.train.variant.name(); }},
        DOUBLE_FIELD("generate.temperature", generate.temperature),
        INT_FIELD("generate.extrapolate_clips", generate.extrapolate_clips),
        INT_FIELD("interact.k", interact.k),
        DOUBLE_FIELD("interact.stride", interact.stride),
        INT_FIELD("interact.rounds", interact.rounds),
        INT_FIELD("interact.finetune_steps", interact.finetune_steps),
        DOUBLE_FIELD("interact.clip_seconds", interact.clip_seconds),
    };
    return f;
}

}  // namespace

std::string ExperimentConfig::canonical() const {
    std::string out;
    for (const auto& f : fields()) {
        out += std::string(f.key) + " = " + f.get(*this) + "\n";
    }
    return out;
}

std::string ExperimentConfig::hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : canonical()) {
        h = (h ^ ch) * 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<int> layout_bitwidths(const VideoLayout& layout) {
    std::set<int> b;
    for (const auto& p : layout.pyramids) {
        for (const auto& s : p.scales) {
            b.insert(s.bitwidth);
        }
    }
    return {b.begin(), b.end()};
}

ModelConfig ExperimentConfig::model_config() const {
    ModelConfig m = model;
    m.latent_dim = 3 * patch.pt * patch.ph * patch.pw;
    auto sched = schedule;
    sched.n_clips = std::max(1, sched.n_clips);
    m.bitwidths = layout_bitwidths(build_layout(sched));
    m.text_vocab = static_cast<int>(caption_vocabulary().size());
    return m;
}

void ExperimentConfig::validate() const {
    schedule.validate();
    PatchTransform(patch.pt, patch.ph, patch.pw);
    if (data.videos < 1 || data.held_out < 0 || data.held_out >= data.videos) {
        throw ConfigError("data.held_out must lie in [0, data.videos)");
    }
    if (data.height % patch.ph != 0 || data.width % patch.pw != 0) {
        throw ConfigError("data.height/width must be divisible by patch.ph/pw");
    }
    const auto& top = schedule.ladder.back();
    if (data.height / patch.ph != top.first || data.width / patch.pw != top.second) {
        throw ConfigError("latent grid " + std::to_string(data.height / patch.ph) + "x" +
                          std::to_string(data.width / patch.pw) + " must equal the largest ladder entry " +
                          std::to_string(top.first) + "x" + std::to_string(top.second));
    }
    if (!(bsc_flip_p >= 0.0 && bsc_flip_p <= 1.0)) {
        throw ConfigError("codec.bsc_flip_p must lie in [0, 1]");
    }
    if (!(tokenizer.sqd_p >= 0.0 && tokenizer.sqd_p <= 1.0)) {
        throw ConfigError("bsq.sqd_p must lie in [0, 1]");
    }
    if (tokenizer.steps < 0 || tokenizer.batch < 1 || train.steps < 0 || train.batch < 1 || train.log_every < 1) {
        throw ConfigError("step counts must be >= 0 and batch sizes >= 1");
    }
    if (interact.k < 1 || interact.k > schedule.t_latent || !(interact.stride >= 1.0) || interact.rounds < 1) {
        throw ConfigError("interact.k must lie in [1, t_latent], stride >= 1, rounds >= 1");
    }
    if (generate.extrapolate_clips < 1) {
        throw ConfigError("generate.extrapolate_clips must be >= 1");
    }
    model_config().validate();
}

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
    ExperimentConfig c;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        const std::string t = trim(line);
        if (t.empty()) {
            continue;
        }
        const std::string where = std::string(source) + ":" + std::to_string(line_no);
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(where + ": expected 'key = value'");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        const auto& fs = fields();
        const auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return key == f.key; });
        if (it == fs.end()) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
        if (!seen.insert(key).second) {
            throw ConfigError(where + ": duplicate key '" + key + "'");
        }
        try {
            it->set(c, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": key '" + key + "': " + e.what());
        }
    }
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(source) + ": " + e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

}  // namespace stpyr
