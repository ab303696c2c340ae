// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#include "stpyr/synth.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "stpyr/binary_io.hpp"
#include "stpyr/errors.hpp"
#include "json.hpp"

namespace stpyr {

namespace {

struct Color {
    const char* name;
    std::uint8_t r, g, b;
};

constexpr Color kPalette[] = {
    {"red", 220, 40, 40}, {"green", 40, 200, 60}, {"blue", 50, 80, 230}, {"yellow", 230, 210, 40}, {"white", 235, 235, 235},
};
constexpr int kPaletteSize = static_cast<int>(sizeof(kPalette) / sizeof(kPalette[0]));

const char* kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::square:
            return "square";
        case ShapeKind::circle:
            return "circle";
        case ShapeKind::bar:
            return "bar";
    }
    return "?";
}

// Triangle wave folding an unbounded coordinate into [0, limit].
double reflect(double p, double limit) {
    if (limit <= 0.0) {
        return 0.0;
    }
    const double period = 2.0 * limit;
    double q = std::fmod(p, period);
    if (q < 0.0) {
        q += period;
    }
    return q <= limit ? q : period - q;
}

bool covers(const ShapeSpec& s, double px, double py, int x, int y) {
    const double cx = x + 0.5;
    const double cy = y + 0.5;
    switch (s.kind) {
        case ShapeKind::square:
        case ShapeKind::bar:
            return cx >= px && cx < px + s.box_width() && cy >= py && cy < py + s.box_height();
        case ShapeKind::circle: {
            const double r = s.size / 2.0;
            const double dx = cx - (px + r);
            const double dy = cy - (py + r);
            return dx * dx + dy * dy <= r * r;
        }
    }
    return false;
}

}  // namespace

RawVideo::RawVideo(int f, int h, int w) : frames(f), height(h), width(w) {
    if (f < 1 || h < 1 || w < 1) {
        throw ShapeError("raw video dimensions must be positive");
    }
    rgb.assign(static_cast<std::size_t>(f) * h * w * 3, 0);
}

void write_raw_video(std::ostream& os, const RawVideo& v) {
    io::put_magic(os, "ISRV");
    io::put_u32(os, 1);
    io::put_u32(os, static_cast<std::uint32_t>(v.frames));
    io::put_u32(os, static_cast<std::uint32_t>(v.height));
    io::put_u32(os, static_cast<std::uint32_t>(v.width));
    os.write(reinterpret_cast<const char*>(v.rgb.data()), static_cast<std::streamsize>(v.rgb.size()));
    if (!os) {
        throw FormatError("failed to write raw video");
    }
}

RawVideo read_raw_video(std::istream& is) {
    io::expect_magic(is, "ISRV");
    io::expect_version(is, 1, "raw video");
    const auto f = io::get_u32(is);
    const auto h = io::get_u32(is);
    const auto w = io::get_u32(is);
    if (f == 0 || h == 0 || w == 0 || static_cast<std::uint64_t>(f) * h * w > (1ull << 31)) {
        throw FormatError("raw video header has implausible dimensions");
    }
    RawVideo v(static_cast<int>(f), static_cast<int>(h), static_cast<int>(w));
    is.read(reinterpret_cast<char*>(v.rgb.data()), static_cast<std::streamsize>(v.rgb.size()));
    if (!is) {
        throw FormatError("truncated raw video");
    }
    return v;
}

std::pair<double, double> shape_position(const ShapeSpec& s, int frame, int height, int width) {
    return {reflect(s.x + s.vx * frame, width - s.box_width()), reflect(s.y + s.vy * frame, height - s.box_height())};
}

SceneSpec random_scene(const SceneTemplate& tmpl, std::uint64_t seed) {
    Rng rng(seed);
    SceneSpec scene;
    scene.seed = seed;
    scene.height = tmpl.height;
    scene.width = tmpl.width;
    scene.frames = tmpl.frames;
    const int count = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, tmpl.max_shapes))));
    for (int i = 0; i < count; ++i) {
        ShapeSpec s;
        s.kind = static_cast<ShapeKind>(rng.below(3));
        s.color = static_cast<int>(rng.below(kPaletteSize));
        s.size = 6 + static_cast<int>(rng.below(5));
        s.x = rng.uniform(0.0, std::max(0.0, static_cast<double>(tmpl.width - s.box_width())));
        s.y = rng.uniform(0.0, std::max(0.0, static_cast<double>(tmpl.height - s.box_height())));
        const double speed = rng.uniform(0.75, 2.0);
        switch (rng.below(4)) {
            case 0:
                s.vx = speed;
                break;
            case 1:
                s.vx = -speed;
                break;
            case 2:
                s.vy = -speed;
                break;
            default:
                s.vy = speed;
                break;
        }
        scene.shapes.push_back(s);
    }
    return scene;
}

RawVideo render(const SceneSpec& scene) {
    RawVideo v(scene.frames, scene.height, scene.width);
    for (int f = 0; f < scene.frames; ++f) {
        for (const auto& s : scene.shapes) {
            const auto [px, py] = shape_position(s, f, scene.height, scene.width);
            const auto& col = kPalette[s.color % kPaletteSize];
            const int y0 = std::max(0, static_cast<int>(std::floor(py)));
            const int y1 = std::min(scene.height, static_cast<int>(std::ceil(py + s.box_height())) + 1);
            const int x0 = std::max(0, static_cast<int>(std::floor(px)));
            const int x1 = std::min(scene.width, static_cast<int>(std::ceil(px + s.box_width())) + 1);
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    if (covers(s, px, py, x, y)) {
                        v.at(f, y, x, 0) = col.r;
                        v.at(f, y, x, 1) = col.g;
                        v.at(f, y, x, 2) = col.b;
                    }
                }
            }
        }
    }
    return v;
}

const std::vector<std::string>& caption_vocabulary() {
    static const std::vector<std::string> vocab{"<pad>", "red",   "green", "blue", "yellow", "white", "square", "circle",
                                                "bar",   "moves", "left",  "right", "up",    "down",  "and"};
    return vocab;
}

std::string caption(const SceneSpec& scene) {
    std::string out;
    for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
        const auto& s = scene.shapes[i];
        const char* dir;
        if (std::abs(s.vx) >= std::abs(s.vy)) {
            dir = s.vx >= 0 ? "right" : "left";
        } else {
            dir = s.vy >= 0 ? "down" : "up";
        }
        if (i > 0) {
            out += " and ";
        }
        out += std::string(kPalette[s.color % kPaletteSize].name) + " " + kind_name(s.kind) + " moves " + dir;
    }
    return out;
}

std::vector<int> encode_caption(std::string_view text, int length) {
    const auto& vocab = caption_vocabulary();
    std::vector<int> ids;
    std::istringstream ss{std::string(text)};
    std::string word;
    while (ss >> word) {
        const auto it = std::find(vocab.begin(), vocab.end(), word);
        if (it == vocab.end() || it == vocab.begin()) {
            throw ConfigError("word '" + word + "' is not in the caption vocabulary");
        }
        ids.push_back(static_cast<int>(it - vocab.begin()));
    }
    ids.resize(static_cast<std::size_t>(std::max(0, length)), 0);
    return ids;
}

std::vector<DatasetItem> render_dataset(const SceneTemplate& tmpl, int n, std::uint64_t seed,
                                        const std::filesystem::path& dir) {
    if (n < 1) {
        throw ConfigError("dataset size must be >= 1");
    }
    std::vector<DatasetItem> items;
    const Rng root(seed);
    std::ofstream manifest;
    if (!dir.empty()) {
        std::filesystem::create_directories(dir);
        manifest.open(dir / "manifest.jsonl", std::ios::binary);
    }
    for (int i = 0; i < n; ++i) {
        DatasetItem item;
        char name[32];
        std::snprintf(name, sizeof(name), "video_%04d.isrv", i);
        item.file = name;
        item.scene = random_scene(tmpl, root.fork(static_cast<std::uint64_t>(i)).next_u64());
        item.caption = caption(item.scene);
        if (!dir.empty()) {
            std::ofstream os(dir / item.file, std::ios::binary);
            write_raw_video(os, render(item.scene));
            nlohmann::ordered_json row;
            row["file"] = item.file;
            row["caption"] = item.caption;
            row["seed"] = item.scene.seed;
            manifest << row.dump() << "\n";
        }
        items.push_back(std::move(item));
    }
    return items;
}

}  // namespace stpyr
