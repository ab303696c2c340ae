// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/attention.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "stpyr/errors.hpp"

namespace stpyr {

MaskPolicy MaskPolicy::parse(std::string_view s) {
    if (s == "var_full") {
        return {MaskVariant::var_full, 1};
    }
    if (s == "preceding_only") {
        return {MaskVariant::preceding_only, 1};
    }
    if (s == "full_history") {
        return {MaskVariant::full_history, 1};
    }
    if (s == "ssa") {
        return {MaskVariant::ssa, 1};
    }
    if (s.starts_with("ssa:")) {
        int m = 0;
        const auto digits = s.substr(4);
        const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), m);
        if (ec != std::errc() || ptr != digits.data() + digits.size() || m < 1) {
            throw ConfigError("invalid ssa depth in '" + std::string(s) + "'");
        }
        return {MaskVariant::ssa, m};
    }
    throw ConfigError("unknown attention variant '" + std::string(s) + "'");
}

std::string MaskPolicy::name() const {
    switch (variant) {
        case MaskVariant::var_full:
            return "var_full";
        case MaskVariant::preceding_only:
            return "preceding_only";
        case MaskVariant::full_history:
            return "full_history";
        case MaskVariant::ssa:
            return "ssa:" + std::to_string(ssa_depth);
    }
    return "unknown";
}

AttentionMask::AttentionMask(std::int64_t n_cond, MaskPolicy policy, std::vector<MaskBlock> blocks,
                             std::vector<std::vector<KeyInterval>> block_intervals)
    : n_cond_(n_cond), policy_(policy), blocks_(std::move(blocks)), block_intervals_(std::move(block_intervals)) {
    n_tokens_ = blocks_.empty() ? n_cond_ : blocks_.back().end();
    if (n_cond_ > 0) {
        cond_intervals_.push_back(KeyInterval{0, n_cond_});
    }
}

int AttentionMask::block_of(std::int64_t query) const {
    if (query < n_cond_) {
        return -1;
    }
    const auto it = std::upper_bound(blocks_.begin(), blocks_.end(), query,
                                     [](std::int64_t q, const MaskBlock& b) { return q < b.begin; });
    return static_cast<int>(std::distance(blocks_.begin(), it)) - 1;
}

std::span<const KeyInterval> AttentionMask::intervals(std::int64_t query) const {
    const int b = block_of(query);
    if (b < 0) {
        return cond_intervals_;
    }
    return block_intervals_[static_cast<std::size_t>(b)];
}

bool AttentionMask::allowed(std::int64_t query, std::int64_t key) const {
    for (const auto& iv : intervals(query)) {
        if (key >= iv.begin && key < iv.end) {
            return true;
        }
    }
    return false;
}

std::int64_t AttentionMask::allowed_count(std::int64_t query) const {
    std::int64_t n = 0;
    for (const auto& iv : intervals(query)) {
        n += iv.size();
    }
    return n;
}

namespace {

void push_interval(std::vector<KeyInterval>& out, KeyInterval iv) {
    if (iv.size() <= 0) {
        return;
    }
    if (!out.empty() && out.back().end == iv.begin) {
        out.back().end = iv.end;
        return;
    }
    out.push_back(iv);
}

}  // namespace

AttentionMask build_mask(const VideoLayout& layout, std::span<const FlatBlock> blocks, std::int64_t n_cond,
                         MaskPolicy policy) {
    if (n_cond < 0) {
        throw ConfigError("build_mask: negative condition count");
    }
    if (policy.variant == MaskVariant::ssa && policy.ssa_depth < 1) {
        throw ConfigError("build_mask: ssa depth must be >= 1");
    }
    std::vector<MaskBlock> mblocks;
    std::int64_t pos = n_cond;
    for (const auto& b : blocks) {
        mblocks.push_back(MaskBlock{b.pyramid, b.scale, pos, b.tokens});
        pos += b.tokens;
    }
    (void)layout;

    // first/last block index of each pyramid run, in sequence order
    std::vector<std::size_t> run_start(mblocks.size());
    std::vector<std::size_t> prev_run_start(mblocks.size(), SIZE_MAX);
    std::vector<std::size_t> prev_run_end(mblocks.size(), SIZE_MAX);
    {
        std::size_t start = 0;
        std::size_t p_start = SIZE_MAX;
        std::size_t p_end = SIZE_MAX;
        for (std::size_t j = 0; j < mblocks.size(); ++j) {
            if (j > 0 && mblocks[j].pyramid != mblocks[j - 1].pyramid) {
                p_start = start;
                p_end = j;
                start = j;
            }
            run_start[j] = start;
            prev_run_start[j] = p_start;
            prev_run_end[j] = p_end;
        }
    }

    std::vector<std::vector<KeyInterval>> intervals(mblocks.size());
    for (std::size_t j = 0; j < mblocks.size(); ++j) {
        auto& iv = intervals[j];
        push_interval(iv, KeyInterval{0, n_cond});
        const auto& b = mblocks[j];
        switch (policy.variant) {
            case MaskVariant::var_full:
            case MaskVariant::full_history:
                push_interval(iv, KeyInterval{n_cond, b.end()});
                break;
            case MaskVariant::preceding_only:
                push_interval(iv, KeyInterval{mblocks[run_start[j]].begin, b.begin});
                break;
            case MaskVariant::ssa: {
                if (prev_run_start[j] != SIZE_MAX) {
                    const std::size_t count = prev_run_end[j] - prev_run_start[j];
                    if (static_cast<std::size_t>(policy.ssa_depth) > count) {
                        throw ConfigError("build_mask: ssa depth " + std::to_string(policy.ssa_depth) +
                                          " exceeds the preceding pyramid's " + std::to_string(count) + " scales");
                    }
                    const auto& vis = mblocks[prev_run_end[j] - static_cast<std::size_t>(policy.ssa_depth)];
                    push_interval(iv, KeyInterval{vis.begin, vis.end()});
                }
                push_interval(iv, KeyInterval{mblocks[run_start[j]].begin, b.end()});
                break;
            }
        }
    }
    return AttentionMask(n_cond, policy, std::move(mblocks), std::move(intervals));
}

AttentionMask build_mask(const VideoLayout& layout, std::int64_t n_cond, MaskPolicy policy) {
    return build_mask(layout, layout.flat_blocks, n_cond, policy);
}

MaskDensity mask_density(const AttentionMask& mask) {
    MaskDensity d;
    d.allowed_pairs = mask.n_cond() * mask.n_cond();
    for (std::size_t j = 0; j < mask.blocks().size(); ++j) {
        std::int64_t per_query = 0;
        for (const auto& iv : mask.block_intervals(j)) {
            per_query += iv.size();
        }
        d.allowed_pairs += per_query * mask.blocks()[j].size;
    }
    const auto n = mask.n_tokens();
    d.density = n > 0 ? static_cast<double>(d.allowed_pairs) / (static_cast<double>(n) * static_cast<double>(n)) : 0.0;
    return d;
}

KvCacheProfile kv_cache_profile(const AttentionMask& mask) {
    const auto& blocks = mask.blocks();
    KvCacheProfile prof;
    prof.last_use.resize(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        prof.last_use[i] = i;
    }
    for (std::size_t j = 0; j < blocks.size(); ++j) {
        for (const auto& iv : mask.block_intervals(j)) {
            for (std::size_t i = 0; i < j; ++i) {
                if (blocks[i].begin < iv.end && blocks[i].end() > iv.begin) {
                    prof.last_use[i] = std::max(prof.last_use[i], j);
                }
            }
        }
    }
    prof.peak = mask.n_cond();
    for (std::size_t j = 0; j < blocks.size(); ++j) {
        std::int64_t live = mask.n_cond();
        for (std::size_t i = 0; i <= j; ++i) {
            if (prof.last_use[i] >= j) {
                live += blocks[i].size;
            }
        }
        prof.live_keys.push_back(live);
        prof.peak = std::max(prof.peak, live);
    }
    return prof;
}

RopeIds rope_ids(const VideoLayout& layout, std::span<const FlatBlock> blocks, std::span<const RopeId> cond_ids) {
    RopeIds out;
    out.ids.assign(cond_ids.begin(), cond_ids.end());
    int scale_id = 1;
    for (const auto& b : blocks) {
        const auto& pyr = layout.pyramid_of(b);
        const auto& s = layout.tuple_of(b);
        const int t_base = pyr.kind == PyramidKind::image ? 0 : (pyr.clip_index - 1) * layout.t_latent + 1;
        for (int f = 0; f < s.t; ++f) {
            const int t_id = pyr.kind == PyramidKind::image ? 0 : t_base + f;
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) {
                    out.ids.push_back(RopeId{scale_id, t_id, y, x});
                }
            }
        }
        ++scale_id;
    }
    return out;
}

RopeIds rope_ids(const VideoLayout& layout, std::int64_t n_cond) {
    const std::vector<RopeId> cond(static_cast<std::size_t>(n_cond), RopeId{0, 0, 0, 0});
    return rope_ids(layout, layout.flat_blocks, cond);
}

RopeTable::RopeTable(int head_dim, std::array<double, 4> bases) : head_dim_(head_dim) {
    if (head_dim <= 0 || head_dim % 8 != 0) {
        throw ConfigError("RoPE head_dim must be a positive multiple of 8 (got " + std::to_string(head_dim) + ")");
    }
    for (double b : bases) {
        if (!(b > 0.0)) {
            throw ConfigError("RoPE bases must be positive");
        }
    }
    const int group = head_dim / 4;
    for (int c = 0; c < 4; ++c) {
        for (int p = 0; p < group / 2; ++p) {
            inv_freq_.push_back(std::pow(bases[static_cast<std::size_t>(c)], -2.0 * p / group));
            component_.push_back(c);
        }
    }
}

void RopeTable::angles(const RopeId& id, double* cos_out, double* sin_out) const {
    for (std::size_t p = 0; p < inv_freq_.size(); ++p) {
        const double a = id[static_cast<std::size_t>(component_[p])] * inv_freq_[p];
        cos_out[p] = std::cos(a);
        sin_out[p] = std::sin(a);
    }
}

void apply_rope(std::span<double> seq, const RopeIds& ids, int head_dim, std::array<double, 4> bases) {
    const RopeTable table(head_dim, bases);
    if (seq.size() != ids.size() * static_cast<std::size_t>(head_dim)) {
        throw ShapeError("apply_rope: sequence length does not match ids");
    }
    std::vector<double> c(static_cast<std::size_t>(head_dim / 2));
    std::vector<double> s(static_cast<std::size_t>(head_dim / 2));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        table.angles(ids.ids[i], c.data(), s.data());
        RopeTable::rotate(&seq[i * static_cast<std::size_t>(head_dim)], c.data(), s.data(), head_dim);
    }
}

}  // namespace stpyr
