#pragma once

// One MaskMatch training step against the toy segmenter: synthesize two initial masks of
// matching quality (model output from a single click, and a perturbed ground truth),
// continue each for K simulated rounds, then score the pair with the supervised loss and
// the gated matching regularizer. Gradients flow back to the toy parameters.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "zoomseg/core.hpp"
#include "zoomseg/interact.hpp"
#include "zoomseg/losses.hpp"
#include "zoomseg/segmenter.hpp"

namespace zoomseg {

struct MaskMatchConfig {
    LossConfig loss;
    double pad_ratio = kDefaultPadRatio;
    double perturb_tolerance = 0.03;
    int disc_radius = kDiscRadius;
    bool use_matching = true;  // false drops L_mr (ablation)
    /// Overrides variant 2 with a copy of variant 1 (degenerate pairing).
    bool force_identical_variants = false;
};

/// Everything a step decided discretely; fixed once generated.
struct MaskMatchPair {
    SegmenterInput variant1;  // (I, D1, M01)
    SegmenterInput variant2;  // (I, D2, M02)
    SegmenterInput refine_input;  // crop of (I, D1, thresholded O11)
    CropRegion crop;
    BinaryMask gt;
    BinaryMask gt_crop;
    BinaryMask edge_gt_crop;
    int extra_steps = 0;     // K
    double first_iou = 0.0;  // IoU(M'01, G)
};

using ToyGradient = std::array<double, kToyFeatures + 1>;

/// Stop-gradient quantities held fixed when finite-differencing the step.
struct FrozenStepState {
    LogitMap teacher;
    std::array<double, 3> normalizers{};
};

struct MaskMatchStepResult {
    LossBreakdown breakdown;
    ToyGradient gradient{};
    FrozenStepState frozen;
    double prediction_gap = 0.0;  // mean |sigma(O11) - sigma(O12)|
};

/// Edge head on top of refined logits: large where the prediction is uncertain (near 0.5).
inline double edge_logit(double z) {
    const double s = sigmoid(z);
    return 8.0 * (4.0 * s * (1.0 - s)) - 4.0;
}

inline double edge_logit_derivative(double z) {
    const double s = sigmoid(z);
    return 32.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
}

inline double mean_probability_gap(const LogitMap& a, const LogitMap& b) {
    require_same_shape(a, b, "mean_probability_gap");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(sigmoid(a[i]) - sigmoid(b[i]));
    return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

namespace detail {

inline BinaryMask toy_mask(const ToyModelParams& p, const RasterImage& img, const ClickList& clicks, const BinaryMask& init, int radius) {
    return threshold(toy_forward(p, make_input(img, render_discs(clicks, img.height(), img.width(), radius), init)));
}

// K extra simulated rounds from an initial mask; afterwards one more click from the final
// mask's errors forms the click map fed alongside it.
inline SegmenterInput continue_session(const ToyModelParams& p, const RasterImage& img, const BinaryMask& gt,
                                       BinaryMask mask, ClickList clicks, int extra_steps, int radius) {
    int round = static_cast<int>(clicks.size());
    for (int k = 0; k < extra_steps; ++k) {
        if (auto c = next_click(mask, gt, ++round)) clicks.push_back(*c);
        mask = toy_mask(p, img, clicks, mask, radius);
    }
    if (auto c = next_click(mask, gt, ++round)) clicks.push_back(*c);
    return make_input(img, render_discs(clicks, img.height(), img.width(), radius), std::move(mask));
}

}  // namespace detail

inline MaskMatchPair generate_maskmatch_pair(const ToyModelParams& params, const RasterImage& image, const BinaryMask& gt,
                                             std::uint64_t seed, const MaskMatchConfig& cfg) {
    require_same_shape(image.r, gt, "generate_maskmatch_pair");
    Rng rng(seed);
    const int h = image.height(), w = image.width();
    const BinaryMask blank(h, w, 0);

    // Variant 1: blank mask plus one synthesized click through the model.
    ClickList clicks1;
    if (auto c = next_click(blank, gt, 1)) clicks1.push_back(*c);
    const auto m01_prime = detail::toy_mask(params, image, clicks1, blank, cfg.disc_radius);
    const double first_iou = iou(m01_prime, gt);

    // Variant 2: ground truth perturbed down to variant 1's quality.
    PerturbConfig pc;
    pc.tolerance = cfg.perturb_tolerance;
    pc.seed = rng();
    pc.target_iou = std::clamp(first_iou, 0.05, 0.995);
    const auto m02_prime = perturb_to_iou(gt, pc);

    MaskMatchPair pair;
    pair.first_iou = first_iou;
    pair.extra_steps = session_restart_steps(rng);
    pair.gt = gt;
    pair.variant1 = detail::continue_session(params, image, gt, m01_prime, clicks1, pair.extra_steps, cfg.disc_radius);
    pair.variant2 = cfg.force_identical_variants
                        ? pair.variant1
                        : detail::continue_session(params, image, gt, m02_prime, clicks1, pair.extra_steps, cfg.disc_radius);

    const auto o11 = toy_forward(params, pair.variant1);
    const auto m1 = threshold(o11);
    pair.crop = select_refinement_crop(m1, pair.variant1.initial_mask, cfg.pad_ratio).value_or(CropRegion{0, 0, h, w});
    pair.refine_input = crop(pair.variant1, pair.crop);
    pair.refine_input.initial_mask = crop(m1, pair.crop);
    pair.gt_crop = crop(gt, pair.crop);
    pair.edge_gt_crop = crop(edge_map(gt), pair.crop);
    return pair;
}

/// Loss and parameter gradient for a generated pair. With `frozen`, the teacher logits and
/// focal normalizers are taken from it instead of being recomputed.
inline MaskMatchStepResult evaluate_maskmatch(const ToyModelParams& params, const MaskMatchPair& pair,
                                              const MaskMatchConfig& cfg, const FrozenStepState* frozen = nullptr) {
    cfg.loss.validate();
    const auto f1 = toy_features(pair.variant1);
    const auto f2 = toy_features(pair.variant2);
    const auto fr = toy_features(pair.refine_input);
    const auto o11 = toy_forward(params, f1);
    const auto o12 = toy_forward(params, f2);
    const auto refined = toy_forward(params, fr);
    LogitMap edge(refined.height(), refined.width());
    for (std::size_t i = 0; i < edge.size(); ++i) edge[i] = edge_logit(refined[i]);

    MaskMatchStepResult out;
    out.frozen.teacher = frozen ? frozen->teacher : o11;
    const auto sup = supervised_loss(o11, pair.gt, refined, pair.gt_crop, edge, pair.edge_gt_crop, cfg.loss,
                                     frozen ? std::optional(frozen->normalizers) : std::nullopt);
    out.frozen.normalizers = sup.normalizers;
    const auto mr = cfg.use_matching ? mask_matching_loss(out.frozen.teacher, o12, cfg.loss)
                                     : MatchingLoss{0.0, LogitMap(o12.height(), o12.width(), 0.0), {}, 0};
    out.breakdown = total_loss(sup.value, mr.value, pair.variant1.initial_mask, pair.gt, cfg.loss);
    out.prediction_gap = mean_probability_gap(o11, o12);

    LogitMap grad_refined = sup.grad_refined;
    for (std::size_t i = 0; i < grad_refined.size(); ++i) grad_refined[i] += sup.grad_edge[i] * edge_logit_derivative(refined[i]);
    const auto g1 = toy_backward(f1, sup.grad_coarse);
    const auto gr = toy_backward(fr, grad_refined);
    for (std::size_t k = 0; k < out.gradient.size(); ++k) out.gradient[k] = g1[k] + gr[k];
    if (out.breakdown.gate_open) {
        const auto g2 = toy_backward(f2, mr.grad_student);
        for (std::size_t k = 0; k < out.gradient.size(); ++k) out.gradient[k] += g2[k];
    }
    return out;
}

inline MaskMatchStepResult maskmatch_training_step(const ToyModelParams& params, const RasterImage& image, const BinaryMask& gt,
                                                   std::uint64_t seed, const MaskMatchConfig& cfg) {
    return evaluate_maskmatch(params, generate_maskmatch_pair(params, image, gt, seed, cfg), cfg);
}

}  // namespace zoomseg
