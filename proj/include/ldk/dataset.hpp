#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldk/image.hpp"
#include "ldk/png_io.hpp"
#include "ldk/rng.hpp"

namespace ldk {

// Synthetic shapes corpus: every sample is derived from (seed, index) alone,
// so datasets are reproducible and sample i never depends on how many other
// samples were drawn. Each image carries 1-3 anti-aliased shapes (circle,
// square, triangle) in palette colors over a smooth noise background, and
// every supervision signal the tasks need comes with it: the dominant
// shape's class id, a short caption over a fixed 32-word vocabulary, and a
// per-pixel label map (0 = background, 1 + shape kind otherwise).

inline constexpr int kNumClasses = 3;                      // circle, square, triangle
inline constexpr int kSemanticChannels = kNumClasses + 1;  // + background plane

inline const std::vector<std::string>& caption_vocab() {
    static const std::vector<std::string> words = {
        "<pad>",  // id 0, also the padding/null token
        "a",        "small",   "large",  "red",    "green", "blue",   "yellow", "magenta",
        "cyan",     "white",   "gray",   "circle", "square", "triangle", "upper", "lower",
        "center",   "left",    "right",  "middle", "on",     "plain",  "busy",   "background",
        "and",      "another", "shape",  "shapes", "one",    "two",    "three"};
    return words;
}

inline int vocab_id(const std::string& word) {
    const auto& v = caption_vocab();
    for (size_t i = 0; i < v.size(); ++i)
        if (v[i] == word) return static_cast<int>(i);
    fail(ErrKind::vocab, "dataset", "word '" + word + "' is not in the caption vocabulary");
}

inline std::string tokens_to_string(const std::vector<int>& tokens) {
    const auto& v = caption_vocab();
    std::string out;
    for (int t : tokens) {
        LDK_CHECK(t >= 0 && t < static_cast<int>(v.size()), ErrKind::vocab, "dataset",
                  "token id " + std::to_string(t) + " out of range");
        if (t == 0) continue;  // padding carries no text
        if (!out.empty()) out += ' ';
        out += v[t];
    }
    return out;
}

struct DatasetSpec {
    int count = 64;
    int resolution = 32;
    uint64_t seed = 0;
};

template <class T>
struct Sample {
    Tensor<T> image;              // [3,H,W], values in [-1,1]
    int class_id = 0;             // dominant shape kind, 0..kNumClasses-1
    std::vector<int> tokens;      // caption token ids, no padding
    std::string caption;          // same caption as text
    std::vector<uint8_t> labels;  // H*W semantic labels, scanline order
};

namespace detail {

struct ShapeSpec {
    int kind = 0;   // 0 circle, 1 square, 2 triangle
    int color = 0;  // palette index
    double cx = 0, cy = 0, r = 0;
    bool flipped = false;  // triangles only: pointing down
};

// Palette in [-1,1] pixel units; names line up with the caption vocabulary.
inline const std::vector<std::array<double, 3>>& shape_palette() {
    static const std::vector<std::array<double, 3>> p = {
        {0.9, -0.7, -0.7},  // red
        {-0.7, 0.9, -0.7},  // green
        {-0.7, -0.7, 0.9},  // blue
        {0.9, 0.9, -0.7},   // yellow
        {0.9, -0.7, 0.9},   // magenta
        {-0.7, 0.9, 0.9},   // cyan
        {0.9, 0.9, 0.9},    // white
        {0.1, 0.1, 0.1},    // gray
    };
    return p;
}

inline const char* palette_word(int color) {
    static const char* words[] = {"red",  "green",   "blue",  "yellow",
                                  "magenta", "cyan", "white", "gray"};
    return words[color];
}

// Signed distance to the shape boundary in pixels, positive inside.
inline double shape_sdf(const ShapeSpec& s, double x, double y) {
    double dx = x - s.cx, dy = y - s.cy;
    switch (s.kind) {
        case 0:
            return s.r - std::sqrt(dx * dx + dy * dy);
        case 1:
            return s.r - std::max(std::abs(dx), std::abs(dy));
        default: {
            // equilateral triangle with circumradius r: intersection of the
            // three inward half-planes (exact inside, conservative at the
            // outer corners, which is all anti-aliasing needs)
            double yy = s.flipped ? -dy : dy;
            double d = s.r * 0.5 - yy;  // bottom edge, apex up (y grows down)
            for (int sgn : {-1, 1}) {
                // side edges: unit outward normals (+-sqrt(3)/2, -1/2)
                double side = s.r * 0.5 - (sgn * 0.8660254037844386 * dx - 0.5 * yy);
                d = std::min(d, side);
            }
            return d;
        }
    }
}

inline const char* size_word(double r, int H) { return r > 0.24 * H ? "large" : "small"; }

inline const char* vertical_word(double cy, int H) {
    if (cy < 0.45 * H) return "upper";
    if (cy > 0.55 * H) return "lower";
    return "center";
}

inline const char* horizontal_word(double cx, int W) {
    if (cx < 0.45 * W) return "left";
    if (cx > 0.55 * W) return "right";
    return "middle";
}

}  // namespace detail

// Builds sample `index` of the dataset. All randomness comes from a stream
// keyed by the index, so any subset can be produced in any order.
template <class T = float>
Sample<T> make_sample(const DatasetSpec& spec, int index) {
    LDK_CHECK(spec.resolution >= 8, ErrKind::config, "dataset",
              "resolution must be at least 8");
    LDK_CHECK(index >= 0, ErrKind::config, "dataset", "sample index must be non-negative");
    int H = spec.resolution, W = spec.resolution;
    Rng rng = Rng(spec.seed, "dataset").child(static_cast<uint64_t>(index));

    Sample<T> out;
    out.labels.assign(static_cast<size_t>(H) * W, 0);

    // smooth background: per-channel base level plus low-frequency noise
    Tensor<T> coarse({3, 4, 4});
    for (int c = 0; c < 3; ++c) {
        double base = rng.uniform(-0.35, 0.35);
        for (int i = 0; i < 16; ++i)
            coarse[c * 16 + i] = static_cast<T>(base + 0.22 * rng.normal());
    }
    out.image = bicubic_resize(coarse, H, W);

    // dominant shape first (largest radius), then up to two smaller ones
    int n_shapes = 1 + static_cast<int>(rng.below(3));
    std::vector<detail::ShapeSpec> shapes(n_shapes);
    for (int i = 0; i < n_shapes; ++i) {
        detail::ShapeSpec& s = shapes[i];
        s.kind = static_cast<int>(rng.below(kNumClasses));
        s.color = static_cast<int>(rng.below(detail::shape_palette().size()));
        s.r = (i == 0 ? rng.uniform(0.18, 0.30) : rng.uniform(0.08, 0.16)) * H;
        s.cx = rng.uniform(0.25, 0.75) * W;
        s.cy = rng.uniform(0.25, 0.75) * H;
        s.flipped = rng.below(2) == 1;
    }
    out.class_id = shapes[0].kind;

    for (int i = 0; i < n_shapes; ++i) {
        const detail::ShapeSpec& s = shapes[i];
        const auto& col = detail::shape_palette()[s.color];
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double d = detail::shape_sdf(s, x + 0.5, y + 0.5);
                double a = std::clamp(d + 0.5, 0.0, 1.0);  // ~1px anti-aliasing band
                if (a <= 0.0) continue;
                for (int c = 0; c < 3; ++c) {
                    T& px = out.image[(static_cast<int64_t>(c) * H + y) * W + x];
                    px = static_cast<T>((1.0 - a) * px + a * col[c]);
                }
                if (a > 0.5)
                    out.labels[static_cast<size_t>(y) * W + x] =
                        static_cast<uint8_t>(1 + s.kind);
            }
    }

    // bicubic upsampling overshoots near steep background cells; pin the
    // final image to the pixel range the 8-bit codec enforces anyway
    for (int64_t i = 0; i < out.image.size(); ++i)
        out.image[i] = std::clamp(out.image[i], T(-1), T(1));

    const detail::ShapeSpec& s0 = shapes[0];
    const char* shape_words[] = {"circle", "square", "triangle"};
    for (const char* w : {"a", detail::size_word(s0.r, H), detail::palette_word(s0.color),
                          shape_words[s0.kind], detail::vertical_word(s0.cy, H),
                          detail::horizontal_word(s0.cx, W)})
        out.tokens.push_back(vocab_id(w));
    out.caption = tokens_to_string(out.tokens);
    return out;
}

// Majority vote over each f x f cell; ties go to the smallest label so the
// result is order-free and deterministic.
inline std::vector<uint8_t> majority_downsample(const std::vector<uint8_t>& labels, int H, int W,
                                                int f) {
    LDK_CHECK(f >= 1 && H % f == 0 && W % f == 0, ErrKind::shape, "dataset.majority",
              "spatial dims must be divisible by the factor");
    LDK_CHECK(labels.size() == static_cast<size_t>(H) * W, ErrKind::shape, "dataset.majority",
              "label count does not match dimensions");
    int h = H / f, w = W / f;
    std::vector<uint8_t> out(static_cast<size_t>(h) * w, 0);
    std::array<int, 256> votes{};
    for (int cy = 0; cy < h; ++cy)
        for (int cx = 0; cx < w; ++cx) {
            votes.fill(0);
            for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx)
                    ++votes[labels[static_cast<size_t>(cy * f + dy) * W + cx * f + dx]];
            int best = 0;
            for (int v = 1; v < 256; ++v)
                if (votes[v] > votes[best]) best = v;
            out[static_cast<size_t>(cy) * w + cx] = static_cast<uint8_t>(best);
        }
    return out;
}

template <class T>
Tensor<T> one_hot_map(const std::vector<uint8_t>& labels, int H, int W,
                      int channels = kSemanticChannels) {
    LDK_CHECK(labels.size() == static_cast<size_t>(H) * W, ErrKind::shape, "dataset.one_hot",
              "label count does not match dimensions");
    Tensor<T> out({1, channels, H, W});
    out.fill(T(0));
    for (int i = 0; i < H * W; ++i) {
        int c = labels[i];
        LDK_CHECK(c < channels, ErrKind::shape, "dataset.one_hot",
                  "label " + std::to_string(c) + " exceeds channel count");
        out[static_cast<int64_t>(c) * H * W + i] = T(1);
    }
    return out;
}

// Binary inpainting mask: union of 1-3 rectangles (the first sized for an
// area fraction in [0.1, 0.35]) plus up to two 2px-wide diagonal strokes.
namespace detail {

inline std::vector<uint8_t> paint_inpaint_mask(int H, int W, Rng& rng) {
    std::vector<uint8_t> mask(static_cast<size_t>(H) * W, 0);
    auto paint_rect = [&](int x0, int y0, int rw, int rh) {
        for (int y = std::max(0, y0); y < std::min(H, y0 + rh); ++y)
            for (int x = std::max(0, x0); x < std::min(W, x0 + rw); ++x)
                mask[static_cast<size_t>(y) * W + x] = 1;
    };
    int n_rects = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < n_rects; ++i) {
        double frac = i == 0 ? rng.uniform(0.12, 0.32) : rng.uniform(0.01, 0.05);
        double aspect = rng.uniform(0.5, 2.0);
        int rw = std::max(1, static_cast<int>(std::lround(std::sqrt(frac * H * W * aspect))));
        int rh = std::max(1, static_cast<int>(std::lround(frac * H * W / rw)));
        rw = std::min(rw, W);
        rh = std::min(rh, H);
        paint_rect(static_cast<int>(rng.below(W - rw + 1)),
                   static_cast<int>(rng.below(H - rh + 1)), rw, rh);
    }
    int n_strokes = static_cast<int>(rng.below(3));
    for (int i = 0; i < n_strokes; ++i) {
        double x = rng.uniform(0, W), y = rng.uniform(0, H);
        double ang = rng.uniform(0, 2 * M_PI);
        double step_x = std::cos(ang), step_y = std::sin(ang);
        int len = 4 + static_cast<int>(rng.below(std::max(1, W / 4)));
        for (int s = 0; s < len; ++s) {
            paint_rect(static_cast<int>(x) - 1, static_cast<int>(y) - 1, 2, 2);
            x += step_x;
            y += step_y;
        }
    }
    return mask;
}

}  // namespace detail

// Masked area is kept inside [0.1, 0.5] of the image by redrawing the rare
// layouts that rounding or stroke overlap pushes out of range.
inline std::vector<uint8_t> make_inpaint_mask(int H, int W, Rng& rng) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        std::vector<uint8_t> mask = detail::paint_inpaint_mask(H, W, rng);
        int64_t on = std::count(mask.begin(), mask.end(), uint8_t(1));
        double frac = static_cast<double>(on) / (static_cast<double>(H) * W);
        if (frac >= 0.10 && frac <= 0.50) return mask;
    }
    fail(ErrKind::divergence, "dataset.mask", "mask area never landed in [0.1, 0.5]");
}

// ---- disk format ----

// A dataset directory holds 000000.png ... plus 000000_mask.png label maps
// (raw label value per byte, gray) and meta.jsonl with one record per line:
// {"file","mask","class","tokens","caption"}.

namespace detail {

inline std::string sample_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", index);
    return buf;
}

}  // namespace detail

template <class T = float>
void write_dataset(const std::string& dir, const DatasetSpec& spec,
                   const std::map<std::string, std::string>& stamp = {}) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    LDK_CHECK(!ec, ErrKind::io, "dataset", "cannot create directory " + dir);
    std::ofstream meta(dir + "/meta.jsonl", std::ios::binary | std::ios::trunc);
    LDK_CHECK(meta.good(), ErrKind::io, "dataset", "cannot write " + dir + "/meta.jsonl");
    for (int i = 0; i < spec.count; ++i) {
        Sample<T> s = make_sample<T>(spec, i);
        std::string base = detail::sample_name(i);

        PngImage img;
        img.width = spec.resolution;
        img.height = spec.resolution;
        img.rgb = image_to_bytes(s.image);
        img.text = stamp;
        write_png(dir + "/" + base + ".png", img);

        PngImage mask;
        mask.width = spec.resolution;
        mask.height = spec.resolution;
        mask.rgb.resize(s.labels.size() * 3);
        for (size_t p = 0; p < s.labels.size(); ++p)
            mask.rgb[3 * p] = mask.rgb[3 * p + 1] = mask.rgb[3 * p + 2] = s.labels[p];
        mask.text = stamp;
        write_png(dir + "/" + base + "_mask.png", mask);

        nlohmann::json rec;
        rec["file"] = base + ".png";
        rec["mask"] = base + "_mask.png";
        rec["class"] = s.class_id;
        rec["tokens"] = s.tokens;
        rec["caption"] = s.caption;
        meta << rec.dump() << "\n";
    }
    LDK_CHECK(meta.good(), ErrKind::io, "dataset", "write failed for " + dir + "/meta.jsonl");
}

template <class T = float>
std::vector<Sample<T>> load_dataset(const std::string& dir) {
    std::ifstream meta(dir + "/meta.jsonl", std::ios::binary);
    LDK_CHECK(meta.good(), ErrKind::io, "dataset", "cannot open " + dir + "/meta.jsonl");
    std::vector<Sample<T>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(meta, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            fail(ErrKind::io, "dataset",
                 dir + "/meta.jsonl line " + std::to_string(lineno) + ": " + e.what());
        }
        Sample<T> s;
        PngImage img = read_png(dir + "/" + rec.at("file").get<std::string>());
        s.image = image_from_bytes<T>(img.rgb, img.height, img.width);
        PngImage mask = read_png(dir + "/" + rec.at("mask").get<std::string>());
        s.labels.resize(static_cast<size_t>(mask.width) * mask.height);
        for (size_t p = 0; p < s.labels.size(); ++p) s.labels[p] = mask.rgb[3 * p];
        s.class_id = rec.at("class").get<int>();
        s.tokens = rec.at("tokens").get<std::vector<int>>();
        s.caption = rec.at("caption").get<std::string>();
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace ldk
