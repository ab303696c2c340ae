// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "stpyr/bsq.hpp"
#include "stpyr/rng.hpp"
#include "stpyr/schedule.hpp"
#include "stpyr/volume.hpp"

namespace stpyr {

/// Aligned (transformer input, bit label) queues for every retained block.
struct CodecOutput {
    /// Labels computed against the (possibly corrupted) history, before flipping.
    std::vector<BitTensor> labels;
    /// inputs[j] is the accumulated reconstruction resized for block j+1; the last
    /// entry has no successor and is left empty.
    std::vector<LatentVolume> inputs;
    /// Input of the first block; empty means a learned start token.
    LatentVolume initial_input;
    /// Retained blocks with contiguous offsets.
    std::vector<FlatBlock> blocks;
    /// Retained flags per pyramid.
    std::vector<SqdMask> retained;
    /// Final accumulated (flipped) reconstruction per pyramid.
    std::vector<LatentVolume> reconstructions;

    /// Input volume feeding block j (initial_input for j == 0).
    const LatentVolume& input_for(std::size_t j) const { return j == 0 ? initial_input : inputs[j - 1]; }
};

/// Full-resolution accumulated history F^flip_{k-1} seen by each block.
struct CodecTrace {
    std::vector<LatentVolume> history;
};

struct BscOptions {
    double flip_p = 0.1;
    /// Per-pyramid retained flags; empty keeps every scale.
    std::span<const SqdMask> sqd = {};
    /// Reconstruction preceding the first pyramid (interactive conditioning); its
    /// resized copy becomes initial_input.
    const LatentVolume* prior = nullptr;
    CodecTrace* trace = nullptr;
};

/// Spacetime pyramid encoding with bitwise self-correction. One feature volume
/// per pyramid of `layout`, each at that pyramid's largest scale.
CodecOutput encode_with_bsc(std::span<const LatentVolume> features, const VideoLayout& layout,
                            const Tokenizer& tokenizer, Rng& rng, const BscOptions& options);

/// Resize the full-resolution accumulation for the next block. An image-pyramid
/// accumulation (t = 1) is replicated to the clip frame count; a longer history
/// keeps its last frames.
LatentVolume next_block_input(const LatentVolume& acc, const ScaleTuple& next, ResizeMode mode);

/// Flip every bit independently with probability p.
BitTensor random_flip(const BitTensor& codes, double p, Rng& rng);

struct TokenSequence {
    std::vector<FlatBlock> blocks;
    std::vector<ScaleTuple> tuples;
    std::vector<std::uint64_t> codes;
    /// Block start offsets followed by the total length.
    std::vector<std::int64_t> boundaries;
};

/// Pyramid-major, scale-major, then (t, h, w) row-major token order.
TokenSequence flatten(const CodecOutput& out, const VideoLayout& layout);
TokenSequence flatten(std::span<const BitTensor> labels, std::span<const FlatBlock> blocks, const VideoLayout& layout);
std::vector<BitTensor> unflatten(const TokenSequence& seq);

/// Cumulative per-pyramid decode using blocks 0..upto (inclusive) of `blocks`.
/// Returns one volume per pyramid touched by the prefix.
std::vector<LatentVolume> reconstruct(std::span<const BitTensor> labels, std::span<const FlatBlock> blocks,
                                      const VideoLayout& layout, const Tokenizer& tokenizer, std::size_t upto);

/// Group a block-ordered label list into per-pyramid token-file records.
std::vector<PyramidCodes> to_pyramid_codes(std::span<const BitTensor> labels, std::span<const FlatBlock> blocks,
                                           const VideoLayout& layout);

/// ISBC dump: magic, ISTK labels, then the ISVL inputs that feed blocks 1..n-1.
void write_training_pair(std::ostream& os, const CodecOutput& out, const VideoLayout& layout);

struct TrainingPair {
    std::vector<PyramidCodes> labels;
    std::vector<LatentVolume> inputs;
};
TrainingPair read_training_pair(std::istream& is);

}  // namespace stpyr
