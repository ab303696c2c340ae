// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "stpyr/rng.hpp"

namespace stpyr {

/// 8-bit RGB frames, row-major (frame, y, x, channel).
struct RawVideo {
    int frames = 0;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;

    RawVideo() = default;
    RawVideo(int f, int h, int w);
    std::size_t index(int f, int y, int x, int c) const {
        return ((static_cast<std::size_t>(f) * height + y) * width + x) * 3 + c;
    }
    std::uint8_t& at(int f, int y, int x, int c) { return rgb[index(f, y, x, c)]; }
    std::uint8_t at(int f, int y, int x, int c) const { return rgb[index(f, y, x, c)]; }
    bool operator==(const RawVideo&) const = default;
};

void write_raw_video(std::ostream& os, const RawVideo& v);
RawVideo read_raw_video(std::istream& is);

enum class ShapeKind { square, circle, bar };

struct ShapeSpec {
    ShapeKind kind = ShapeKind::square;
    int color = 0;  // index into the palette
    double x = 0.0;  // top-left corner at frame 0
    double y = 0.0;
    double vx = 0.0;  // pixels per frame
    double vy = 0.0;
    int size = 6;
    int box_width() const { return size; }
    int box_height() const { return kind == ShapeKind::bar ? (size + 2) / 3 : size; }
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int height = 32;
    int width = 32;
    int frames = 17;
    std::vector<ShapeSpec> shapes;
};

struct SceneTemplate {
    int height = 32;
    int width = 32;
    int frames = 17;
    int max_shapes = 2;
};

/// Top-left corner of a shape at a frame: straight-line motion reflected at the
/// frame borders, in closed form.
std::pair<double, double> shape_position(const ShapeSpec& s, int frame, int height, int width);

SceneSpec random_scene(const SceneTemplate& tmpl, std::uint64_t seed);
RawVideo render(const SceneSpec& scene);

/// Caption vocabulary; id 0 is padding.
const std::vector<std::string>& caption_vocabulary();
std::string caption(const SceneSpec& scene);
/// Word ids padded (or truncated) to `length`. Unknown words throw ConfigError.
std::vector<int> encode_caption(std::string_view text, int length);

struct DatasetItem {
    std::string file;
    std::string caption;
    SceneSpec scene;
};

/// Renders n scenes seeded from `seed`; writes ISRV files and manifest.jsonl
/// when `dir` is non-empty.
std::vector<DatasetItem> render_dataset(const SceneTemplate& tmpl, int n, std::uint64_t seed,
                                        const std::filesystem::path& dir = {});

}  // namespace stpyr
