#pragma once

// Fitting the toy segmenter with MaskMatch steps, and the held-out measurement of how far
// apart its predictions are for the two initial-mask variants of the same instance.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "zoomseg/interact.hpp"
#include "zoomseg/maskmatch.hpp"
#include "zoomseg/scenes.hpp"
#include "zoomseg/segmenter.hpp"

namespace zoomseg {

struct AdamState {
    double lr = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int t = 0;
    ToyGradient m{};
    ToyGradient v{};

    void apply(ToyModelParams& p, const ToyGradient& g) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
        for (std::size_t k = 0; k < g.size(); ++k) {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            p.values[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
        }
    }
};

/// Small noisy scenes for toy training; a single click leaves a visibly imperfect mask.
inline SceneConfig toy_scene_config() {
    SceneConfig c;
    c.height = 40;
    c.width = 40;
    c.min_area_fraction = 0.08;
    c.max_area_fraction = 0.25;
    c.distractors = 1;
    c.pixel_noise = 0.1;
    c.min_color_distance = 0.35;
    return c;
}

inline std::vector<Scene> generate_scenes(std::uint64_t first_seed, int n, const SceneConfig& cfg) {
    std::vector<Scene> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) out.push_back(generate_scene(first_seed + static_cast<std::uint64_t>(k), cfg));
    return out;
}

struct ToyTrainConfig {
    int steps = 400;
    double lr = 0.05;
    bool decay = true;  // linear learning-rate decay to zero over the run
    std::uint64_t seed = 0;
    MaskMatchConfig maskmatch;
    ToyModelParams init = default_toy_params();
};

struct ToyTrainResult {
    ToyModelParams params;
    std::vector<double> losses;  // total loss per step
    int gate_open_steps = 0;
};

inline ToyTrainResult train_toy(const std::vector<Scene>& scenes, const ToyTrainConfig& cfg,
                                const std::function<void(int, const ToyModelParams&, const MaskMatchStepResult&)>& on_step = {}) {
    if (scenes.empty()) throw std::invalid_argument("train_toy: no scenes");
    if (cfg.steps < 0) throw std::invalid_argument("train_toy: negative step count");
    Rng rng(cfg.seed);
    AdamState adam;
    adam.lr = cfg.lr;
    ToyTrainResult out;
    out.params = cfg.init;
    for (int s = 0; s < cfg.steps; ++s) {
        const auto& scene = scenes[uniform_index(rng, scenes.size())];
        const auto step = maskmatch_training_step(out.params, scene.image, scene.gt, rng(), cfg.maskmatch);
        out.losses.push_back(step.breakdown.total);
        out.gate_open_steps += step.breakdown.gate_open ? 1 : 0;
        if (cfg.decay) adam.lr = cfg.lr * (1.0 - static_cast<double>(s) / static_cast<double>(cfg.steps));
        adam.apply(out.params, step.gradient);
        if (on_step) on_step(s + 1, out.params, step);
    }
    return out;
}

/// Mean over scenes of mean|sigma(O11) - sigma(O12)| for freshly generated variant pairs.
inline double heldout_gap(const ToyModelParams& params, const std::vector<Scene>& scenes, std::uint64_t seed,
                          const MaskMatchConfig& cfg = {}) {
    if (scenes.empty()) throw std::invalid_argument("heldout_gap: no scenes");
    Rng rng(seed);
    double total = 0.0;
    for (const auto& scene : scenes) {
        const auto pair = generate_maskmatch_pair(params, scene.image, scene.gt, rng(), cfg);
        total += mean_probability_gap(toy_forward(params, pair.variant1), toy_forward(params, pair.variant2));
    }
    return total / static_cast<double>(scenes.size());
}

}  // namespace zoomseg
