// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/codec.hpp"

#include <string>

#include "stpyr/binary_io.hpp"
#include "stpyr/errors.hpp"

namespace stpyr {

LatentVolume next_block_input(const LatentVolume& acc, const ScaleTuple& next, ResizeMode mode) {
    LatentVolume v = resize_spatial(acc, next.h, next.w, mode);
    if (v.frames() == next.t) {
        return v;
    }
    if (v.frames() == 1) {
        return v.repeat_frames(next.t);
    }
    if (v.frames() > next.t) {
        return v.slice_frames(v.frames() - next.t, next.t);
    }
    throw ShapeError("next_block_input: cannot map " + std::to_string(v.frames()) + " frames to " +
                     std::to_string(next.t));
}

BitTensor random_flip(const BitTensor& codes, double p, Rng& rng) {
    BitTensor out = codes;
    if (p <= 0.0) {
        return out;
    }
    for (std::int64_t pos = 0; pos < codes.positions(); ++pos) {
        for (int i = 0; i < codes.bitwidth(); ++i) {
            if (rng.uniform() < p) {
                out.flip_bit(pos, i);
            }
        }
    }
    return out;
}

CodecOutput encode_with_bsc(std::span<const LatentVolume> features, const VideoLayout& layout,
                            const Tokenizer& tokenizer, Rng& rng, const BscOptions& options) {
    if (!(options.flip_p >= 0.0 && options.flip_p <= 1.0)) {
        throw ConfigError("encode_with_bsc: flip probability must lie in [0, 1]");
    }
    if (features.size() != layout.pyramids.size()) {
        throw ShapeError("encode_with_bsc: expected " + std::to_string(layout.pyramids.size()) +
                         " feature volumes, got " + std::to_string(features.size()));
    }
    CodecOutput out;
    if (options.sqd.empty()) {
        for (const auto& p : layout.pyramids) {
            out.retained.push_back(SqdMask::all(p.scales.size()));
        }
    } else {
        if (options.sqd.size() != layout.pyramids.size()) {
            throw ShapeError("encode_with_bsc: one SQD mask per pyramid required");
        }
        out.retained.assign(options.sqd.begin(), options.sqd.end());
    }
    {
        std::vector<std::vector<bool>> flags;
        for (const auto& m : out.retained) {
            flags.push_back(m.retained);
        }
        out.blocks = restrict_blocks(layout, flags);
    }
    const ResizeMode mode = tokenizer.resize_mode;
    const int d = tokenizer.latent_dim;

    for (std::size_t p = 0; p < layout.pyramids.size(); ++p) {
        const auto& top = layout.pyramids[p].largest();
        const auto& f = features[p];
        if (f.channels() != d || f.frames() != top.t || f.height() != top.h || f.width() != top.w) {
            throw ShapeError("encode_with_bsc: features of pyramid " + std::to_string(p) +
                             " do not match its largest scale");
        }
    }
    if (options.prior != nullptr && !out.blocks.empty()) {
        out.initial_input = next_block_input(*options.prior, layout.tuple_of(out.blocks.front()), mode);
    }

    std::vector<LatentVolume> accs;
    for (const auto& p : layout.pyramids) {
        const auto& top = p.largest();
        accs.emplace_back(d, top.t, top.h, top.w);
    }
    for (std::size_t j = 0; j < out.blocks.size(); ++j) {
        const auto& blk = out.blocks[j];
        const auto& pyr = layout.pyramid_of(blk);
        const auto& s = layout.tuple_of(blk);
        const auto& adapter = tokenizer.adapters_for(pyr.kind)[static_cast<std::size_t>(blk.scale)];
        auto& acc = accs[static_cast<std::size_t>(blk.pyramid)];
        if (options.trace != nullptr) {
            options.trace->history.push_back(acc);
        }
        const auto residual = resize_spatial(features[static_cast<std::size_t>(blk.pyramid)] - acc, s.h, s.w, mode);
        auto q = quantize_block(residual, s.bitwidth, &adapter);
        const BitTensor flipped = random_flip(q.codes, options.flip_p, rng);
        accumulate_block(acc, flipped, adapter, mode);
        out.labels.push_back(std::move(q.codes));
        if (j + 1 < out.blocks.size()) {
            out.inputs.push_back(next_block_input(acc, layout.tuple_of(out.blocks[j + 1]), mode));
        } else {
            out.inputs.emplace_back();
        }
    }
    out.reconstructions = std::move(accs);
    return out;
}

TokenSequence flatten(std::span<const BitTensor> labels, std::span<const FlatBlock> blocks, const VideoLayout& layout) {
    if (labels.size() != blocks.size()) {
        throw ShapeError("flatten: label/block count mismatch");
    }
    TokenSequence seq;
    std::int64_t offset = 0;
    for (std::size_t j = 0; j < blocks.size(); ++j) {
        const auto& s = layout.tuple_of(blocks[j]);
        if (!labels[j].matches(s)) {
            throw ShapeError("flatten: label " + std::to_string(j) + " does not match its block");
        }
        FlatBlock b = blocks[j];
        b.offset = offset;
        seq.blocks.push_back(b);
        seq.tuples.push_back(s);
        seq.boundaries.push_back(offset);
        for (std::int64_t p = 0; p < labels[j].positions(); ++p) {
            seq.codes.push_back(labels[j].code(p));
        }
        offset += s.tokens();
    }
    seq.boundaries.push_back(offset);
    return seq;
}

TokenSequence flatten(const CodecOutput& out, const VideoLayout& layout) {
    return flatten(out.labels, out.blocks, layout);
}

std::vector<BitTensor> unflatten(const TokenSequence& seq) {
    std::vector<BitTensor> out;
    for (std::size_t j = 0; j < seq.tuples.size(); ++j) {
        const auto& s = seq.tuples[j];
        BitTensor b(s.t, s.h, s.w, s.bitwidth);
        const auto begin = seq.boundaries[j];
        for (std::int64_t p = 0; p < b.positions(); ++p) {
            b.set_code(p, seq.codes[static_cast<std::size_t>(begin + p)]);
        }
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<LatentVolume> reconstruct(std::span<const BitTensor> labels, std::span<const FlatBlock> blocks,
                                      const VideoLayout& layout, const Tokenizer& tokenizer, std::size_t upto) {
    if (upto >= blocks.size() || upto >= labels.size()) {
        throw ShapeError("reconstruct: labels do not cover block " + std::to_string(upto));
    }
    std::vector<LatentVolume> out;
    int current = -1;
    for (std::size_t j = 0; j <= upto; ++j) {
        const auto& blk = blocks[j];
        const auto& pyr = layout.pyramid_of(blk);
        if (blk.pyramid != current) {
            const auto& top = pyr.largest();
            out.emplace_back(tokenizer.latent_dim, top.t, top.h, top.w);
            current = blk.pyramid;
        }
        if (!labels[j].matches(layout.tuple_of(blk))) {
            throw ShapeError("reconstruct: label " + std::to_string(j) + " does not match its block");
        }
        accumulate_block(out.back(), labels[j], tokenizer.adapters_for(pyr.kind)[static_cast<std::size_t>(blk.scale)],
                         tokenizer.resize_mode);
    }
    return out;
}

std::vector<PyramidCodes> to_pyramid_codes(std::span<const BitTensor> labels, std::span<const FlatBlock> blocks,
                                           const VideoLayout& layout) {
    std::vector<PyramidCodes> out;
    for (const auto& p : layout.pyramids) {
        out.push_back(PyramidCodes{p.scales, SqdMask{std::vector<bool>(p.scales.size(), false)}, {}});
    }
    for (std::size_t j = 0; j < blocks.size(); ++j) {
        auto& pc = out[static_cast<std::size_t>(blocks[j].pyramid)];
        pc.sqd.retained[static_cast<std::size_t>(blocks[j].scale)] = true;
        pc.codes.push_back(labels[j]);
    }
    return out;
}

void write_training_pair(std::ostream& os, const CodecOutput& out, const VideoLayout& layout) {
    io::put_magic(os, "ISBC");
    const auto codes = to_pyramid_codes(out.labels, out.blocks, layout);
    write_token_file(os, codes);
    for (std::size_t j = 0; j + 1 < out.inputs.size(); ++j) {
        write_volume(os, out.inputs[j]);
    }
}

TrainingPair read_training_pair(std::istream& is) {
    io::expect_magic(is, "ISBC");
    TrainingPair pair;
    pair.labels = read_token_file(is);
    std::size_t n = 0;
    for (const auto& p : pair.labels) {
        n += p.codes.size();
    }
    for (std::size_t j = 0; j + 1 < n; ++j) {
        pair.inputs.push_back(read_volume(is));
    }
    return pair;
}

}  // namespace stpyr
