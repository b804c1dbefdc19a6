#pragma once

// Synthetic scenes: a flat-coloured target blob with a wavy outline over a smooth textured
// background with a few distractor blobs. Used in place of the public benchmarks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "zoomseg/core.hpp"
#include "zoomseg/interact.hpp"

namespace zoomseg {

struct Scene {
    std::string id;
    RasterImage image;
    BinaryMask gt;
};

struct SceneConfig {
    int height = 256;
    int width = 256;
    double min_area_fraction = 0.05;
    double max_area_fraction = 0.25;
    int outline_harmonics = 5;   // highest harmonic of the target outline
    double outline_wobble = 0.12;  // amplitude of each harmonic, relative to the radius
    int distractors = 3;
    bool textured_background = true;
    double min_color_distance = 0.45;  // between target colour and background base colour
    double pixel_noise = 0.0;          // amplitude of uniform per-pixel noise on every channel
};

namespace detail {

inline double scene_uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform_unit(rng); }

struct StarBlob {
    double cy, cx, radius;
    std::vector<double> amp, phase;

    double edge_radius(double theta) const {
        double r = 1.0;
        for (std::size_t k = 0; k < amp.size(); ++k) r += amp[k] * std::sin(static_cast<double>(k + 2) * theta + phase[k]);
        return radius * r;
    }
    bool contains(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        return std::hypot(dy, dx) <= edge_radius(std::atan2(dy, dx));
    }
};

inline StarBlob random_blob(Rng& rng, double radius, int harmonics, double wobble, int h, int w) {
    StarBlob b;
    b.radius = radius;
    for (int k = 2; k <= harmonics; ++k) {
        b.amp.push_back(scene_uniform(rng, 0.0, wobble));
        b.phase.push_back(scene_uniform(rng, 0.0, 6.283185307179586));
    }
    const double reach = radius * (1.0 + wobble * static_cast<double>(b.amp.size())) + 2.0;
    const double my = std::min(reach, 0.5 * h), mx = std::min(reach, 0.5 * w);
    b.cy = scene_uniform(rng, my, h - my);
    b.cx = scene_uniform(rng, mx, w - mx);
    return b;
}

inline std::array<float, 3> random_color(Rng& rng) {
    return {static_cast<float>(uniform_unit(rng)), static_cast<float>(uniform_unit(rng)), static_cast<float>(uniform_unit(rng))};
}

inline double color_distance(const std::array<float, 3>& a, const std::array<float, 3>& b) {
    return std::sqrt(double(a[0] - b[0]) * (a[0] - b[0]) + double(a[1] - b[1]) * (a[1] - b[1]) + double(a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace detail

inline Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg = {}) {
    Rng rng(seed ^ 0x5ce9e5ce9e5ce9eULL);
    const int h = cfg.height, w = cfg.width;
    Scene s;
    s.id = "scene_" + std::to_string(seed);
    s.image = RasterImage(h, w);
    s.gt = BinaryMask(h, w, 0);

    const auto bg = detail::random_color(rng);
    std::array<float, 3> fg;
    do {
        fg = detail::random_color(rng);
    } while (detail::color_distance(fg, bg) < cfg.min_color_distance);

    // Smooth background texture: two low-amplitude plane waves per channel.
    std::array<std::array<double, 6>, 3> waves{};
    for (auto& wv : waves) {
        wv = {detail::scene_uniform(rng, 0.02, 0.12), detail::scene_uniform(rng, 0.0, 6.28),
              detail::scene_uniform(rng, 0.02, 0.12), detail::scene_uniform(rng, 0.0, 6.28),
              cfg.textured_background ? detail::scene_uniform(rng, 0.02, 0.07) : 0.0,
              detail::scene_uniform(rng, 0.0, 6.28)};
    }
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            for (int k = 0; k < 3; ++k) {
                const auto& wv = waves[static_cast<std::size_t>(k)];
                const double tex = wv[4] * (std::sin(wv[0] * r + wv[1]) + std::sin(wv[2] * c + wv[3]) +
                                            std::sin(0.7 * (wv[0] * c + wv[2] * r) + wv[5]));
                s.image.channel(k)(r, c) = static_cast<float>(std::clamp(bg[static_cast<std::size_t>(k)] + tex, 0.0, 1.0));
            }
        }
    }

    const double fraction = detail::scene_uniform(rng, cfg.min_area_fraction, cfg.max_area_fraction);
    const double radius = std::sqrt(fraction * h * w / 3.14159265358979323846);
    for (int d = 0; d < cfg.distractors; ++d) {
        const auto blob = detail::random_blob(rng, radius * detail::scene_uniform(rng, 0.3, 0.8), 3, 0.1, h, w);
        auto col = detail::random_color(rng);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                if (blob.contains(r, c))
                    for (int k = 0; k < 3; ++k) s.image.channel(k)(r, c) = col[static_cast<std::size_t>(k)];
    }
    const auto target = detail::random_blob(rng, radius, cfg.outline_harmonics, cfg.outline_wobble, h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (!target.contains(r, c)) continue;
            s.gt(r, c) = 1;
            for (int k = 0; k < 3; ++k) s.image.channel(k)(r, c) = fg[static_cast<std::size_t>(k)];
        }
    }
    if (cfg.pixel_noise > 0.0) {
        for (int k = 0; k < 3; ++k)
            for (auto& v : s.image.channel(k))
                v = static_cast<float>(std::clamp(v + detail::scene_uniform(rng, -cfg.pixel_noise, cfg.pixel_noise), 0.0, 1.0));
    }
    // Keep the target a single 4-connected piece.
    s.gt = largest_connected_component(s.gt);
    return s;
}

}  // namespace zoomseg
