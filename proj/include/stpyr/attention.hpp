// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stpyr/schedule.hpp"

namespace stpyr {

enum class MaskVariant { var_full, preceding_only, ssa, full_history };

/// Attention variant plus, for spacetime sparse attention, which trailing block
/// of the preceding pyramid stays visible (1 = largest scale).
struct MaskPolicy {
    MaskVariant variant = MaskVariant::ssa;
    int ssa_depth = 1;

    /// "var_full", "preceding_only", "full_history", "ssa" or "ssa:M".
    static MaskPolicy parse(std::string_view s);
    std::string name() const;
    bool operator==(const MaskPolicy&) const = default;
};

/// Half-open key range [begin, end) in the full sequence (condition tokens first).
struct KeyInterval {
    std::int64_t begin = 0;
    std::int64_t end = 0;
    std::int64_t size() const { return end - begin; }
    bool operator==(const KeyInterval&) const = default;
};

struct MaskBlock {
    int pyramid = 0;
    int scale = 0;
    std::int64_t begin = 0;  // includes the condition prefix
    std::int64_t size = 0;
    std::int64_t end() const { return begin + size; }
};

/// Block-interval attention mask. All queries of a block share one interval list;
/// condition tokens form a globally visible prefix.
class AttentionMask {
public:
    AttentionMask() = default;
    AttentionMask(std::int64_t n_cond, MaskPolicy policy, std::vector<MaskBlock> blocks,
                  std::vector<std::vector<KeyInterval>> block_intervals);

    std::int64_t n_tokens() const { return n_tokens_; }
    std::int64_t n_cond() const { return n_cond_; }
    const MaskPolicy& policy() const { return policy_; }
    const std::vector<MaskBlock>& blocks() const { return blocks_; }

    /// Block index of a query, or -1 for a condition token.
    int block_of(std::int64_t query) const;
    std::span<const KeyInterval> intervals(std::int64_t query) const;
    std::span<const KeyInterval> block_intervals(std::size_t block) const { return block_intervals_[block]; }
    bool allowed(std::int64_t query, std::int64_t key) const;
    std::int64_t allowed_count(std::int64_t query) const;

private:
    std::int64_t n_tokens_ = 0;
    std::int64_t n_cond_ = 0;
    MaskPolicy policy_;
    std::vector<MaskBlock> blocks_;
    std::vector<std::vector<KeyInterval>> block_intervals_;
    std::vector<KeyInterval> cond_intervals_;
};

AttentionMask build_mask(const VideoLayout& layout, std::int64_t n_cond, MaskPolicy policy);

/// Mask over a subset of layout blocks (e.g. after stochastic depth drops).
AttentionMask build_mask(const VideoLayout& layout, std::span<const FlatBlock> blocks, std::int64_t n_cond,
                         MaskPolicy policy);

struct MaskDensity {
    std::int64_t allowed_pairs = 0;
    double density = 0.0;
};

MaskDensity mask_density(const AttentionMask& mask);

/// Keys that must stay cached while generating block by block.
struct KvCacheProfile {
    /// Live keys (condition tokens included) right after each block is appended.
    std::vector<std::int64_t> live_keys;
    std::int64_t peak = 0;
    /// For each block, the last block whose queries can see it.
    std::vector<std::size_t> last_use;
};

KvCacheProfile kv_cache_profile(const AttentionMask& mask);

/// (scale, t, h, w) rotary ids of one token.
using RopeId = std::array<int, 4>;

struct RopeIds {
    std::vector<RopeId> ids;
    std::size_t size() const { return ids.size(); }
};

/// Condition tokens get all-zero ids; content block j gets scale id j+1. Image
/// tokens have t = 0; clip c at local frame f has t = (c-1)*T + f + 1.
RopeIds rope_ids(const VideoLayout& layout, std::int64_t n_cond);

/// Same rules over a block subset, with caller-chosen ids for the condition prefix.
RopeIds rope_ids(const VideoLayout& layout, std::span<const FlatBlock> blocks, std::span<const RopeId> cond_ids);

/// Four equal head-dim groups (scale, t, h, w), each rotated pairwise by its id.
class RopeTable {
public:
    RopeTable() = default;
    RopeTable(int head_dim, std::array<double, 4> bases);

    int head_dim() const { return head_dim_; }
    /// cos/sin of every rotation angle for one token (head_dim / 2 entries each).
    void angles(const RopeId& id, double* cos_out, double* sin_out) const;

    template <typename Real>
    static void rotate(Real* x, const double* cos_v, const double* sin_v, int head_dim) {
        for (int p = 0; p < head_dim / 2; ++p) {
            const double a = x[2 * p];
            const double b = x[2 * p + 1];
            x[2 * p] = static_cast<Real>(a * cos_v[p] - b * sin_v[p]);
            x[2 * p + 1] = static_cast<Real>(a * sin_v[p] + b * cos_v[p]);
        }
    }

    template <typename Real>
    static void rotate_inverse(Real* x, const double* cos_v, const double* sin_v, int head_dim) {
        for (int p = 0; p < head_dim / 2; ++p) {
            const double a = x[2 * p];
            const double b = x[2 * p + 1];
            x[2 * p] = static_cast<Real>(a * cos_v[p] + b * sin_v[p]);
            x[2 * p + 1] = static_cast<Real>(-a * sin_v[p] + b * cos_v[p]);
        }
    }

private:
    int head_dim_ = 0;
    std::vector<double> inv_freq_;  // head_dim / 2, grouped by component
    std::vector<int> component_;    // component of each pair
};

constexpr std::array<double, 4> kDefaultRopeBases{10000.0, 10000.0, 10000.0, 10000.0};

/// Rotates a (n x head_dim) row-major sequence in place.
void apply_rope(std::span<double> seq, const RopeIds& ids, int head_dim,
                std::array<double, 4> bases = kDefaultRopeBases);

}  // namespace stpyr
