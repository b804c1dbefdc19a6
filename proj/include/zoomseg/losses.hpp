#pragma once

// Loss terms over logit maps, each returning its value together with the analytic
// gradient with respect to the logits it is differentiated through.

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "zoomseg/core.hpp"

namespace zoomseg {

struct LossConfig {
    double confidence_threshold = 0.9;
    double gate_alpha = 0.8;
    double focal_gamma = 2.0;
    double edge_weight = 1.0;

    void validate() const {
        if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0))
            throw std::invalid_argument("LossConfig: confidence_threshold must be in (0,1)");
        // 1.0 is accepted for the gate: it disables the matching term entirely.
        if (!(gate_alpha > 0.0 && gate_alpha <= 1.0)) throw std::invalid_argument("LossConfig: gate_alpha must be in (0,1]");
        if (!(focal_gamma >= 0.0)) throw std::invalid_argument("LossConfig: focal_gamma must be >= 0");
    }
};

/// Probabilities are clamped to [eps, 1-eps] before every logarithm.
inline constexpr double kProbEps = 1e-7;

struct LossValue {
    double value = 0.0;
    LogitMap gradient;
    /// Focal-weight normalizer N / sum(beta); held constant in the backward pass.
    double normalizer = 1.0;
};

/// Normalized focal loss. Per pixel, with p_t the probability of the true class,
///   beta = (1 - p_t)^gamma,  l = -log p_t,
/// and the loss is (1/N) * sum(m * beta * l) with m = N / sum(beta). Pass `fixed_normalizer`
/// to evaluate with a given m (used when checking the gradient, which treats m as constant).
inline LossValue nf_loss(const LogitMap& logits, const BinaryMask& gt, const LossConfig& cfg,
                         std::optional<double> fixed_normalizer = std::nullopt) {
    require_same_shape(logits, gt, "nf_loss");
    const std::size_t n = logits.size();
    if (n == 0) throw DimensionError("nf_loss: empty input");
    const double gamma = cfg.focal_gamma;
    LossValue out{0.0, LogitMap(logits.height(), logits.width(), 0.0), 1.0};
    std::vector<double> pt(n), beta(n);
    double beta_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double sign = gt[i] ? 1.0 : -1.0;
        pt[i] = sigmoid(sign * logits[i]);
        beta[i] = gamma == 0.0 ? 1.0 : std::pow(1.0 - pt[i], gamma);
        beta_sum += beta[i];
    }
    const double nn = static_cast<double>(n);
    out.normalizer = fixed_normalizer ? *fixed_normalizer : (beta_sum > 0.0 ? nn / beta_sum : 1.0);
    const double scale = out.normalizer / nn;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double sign = gt[i] ? 1.0 : -1.0;
        const bool clamped = pt[i] < kProbEps || pt[i] > 1.0 - kProbEps;
        const double pc = std::clamp(pt[i], kProbEps, 1.0 - kProbEps);
        const double log_p = std::log(pc);
        total += beta[i] * -log_p;
        // d/dz [(1-pt)^g * -log c(pt)] with dpt/dz = sign * pt(1-pt):
        //   sign * [ g pt (1-pt)^g log c(pt) - (1-pt)^(g+1) * [pt not clamped] ]
        const double one_minus = 1.0 - pt[i];
        double d = gamma == 0.0 ? 0.0 : gamma * pt[i] * beta[i] * log_p;
        if (!clamped) d -= beta[i] * one_minus;
        out.gradient[i] = scale * sign * d;
    }
    out.value = scale * total;
    return out;
}

/// Binary cross-entropy of prediction p against soft target q (natural log).
inline double bce(double p, double q) {
    const double pc = std::clamp(p, kProbEps, 1.0 - kProbEps);
    return -(q * std::log(pc) + (1.0 - q) * std::log(1.0 - pc));
}

struct MatchingLoss {
    double value = 0.0;
    LogitMap grad_student;
    LogitMap grad_teacher;  // always zero: the teacher is a stop-gradient target
    std::size_t confident_pixels = 0;
};

/// Mean over all pixels of [sigma(teacher) > threshold] * BCE(sigma(student), sigma(teacher)).
/// Pixels outside the confidence mask contribute zero but still count in the mean.
inline MatchingLoss mask_matching_loss(const LogitMap& teacher, const LogitMap& student, const LossConfig& cfg) {
    require_same_shape(teacher, student, "mask_matching_loss");
    const std::size_t n = teacher.size();
    if (n == 0) throw DimensionError("mask_matching_loss: empty input");
    MatchingLoss out{0.0, LogitMap(student.height(), student.width(), 0.0), LogitMap(teacher.height(), teacher.width(), 0.0), 0};
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double q = sigmoid(teacher[i]);
        if (!(q > cfg.confidence_threshold)) continue;
        ++out.confident_pixels;
        const double p = sigmoid(student[i]);
        total += bce(p, q);
        if (p >= kProbEps && p <= 1.0 - kProbEps) out.grad_student[i] = (p - q) * inv_n;
    }
    out.value = total * inv_n;
    return out;
}

struct SupervisedLoss {
    double value = 0.0;
    std::array<double, 3> terms{};        // coarse, refined crop, weighted edge
    std::array<double, 3> normalizers{};  // focal normalizers of the three terms
    LogitMap grad_coarse;
    LogitMap grad_refined;
    LogitMap grad_edge;
};

/// nf(coarse, G) + nf(refined crop, G_crop) + edge_weight * nf(edge crop, edge GT).
inline SupervisedLoss supervised_loss(const LogitMap& coarse, const BinaryMask& gt, const LogitMap& refined_crop,
                                      const BinaryMask& gt_crop, const LogitMap& edge_logits_crop,
                                      const BinaryMask& edge_gt_crop, const LossConfig& cfg,
                                      std::optional<std::array<double, 3>> fixed_normalizers = std::nullopt) {
    require_same_shape(refined_crop, edge_logits_crop, "supervised_loss crops");
    const auto fixed = [&](int k) -> std::optional<double> {
        if (!fixed_normalizers) return std::nullopt;
        return (*fixed_normalizers)[static_cast<std::size_t>(k)];
    };
    auto a = nf_loss(coarse, gt, cfg, fixed(0));
    auto b = nf_loss(refined_crop, gt_crop, cfg, fixed(1));
    auto e = nf_loss(edge_logits_crop, edge_gt_crop, cfg, fixed(2));
    SupervisedLoss out;
    out.terms = {a.value, b.value, cfg.edge_weight * e.value};
    out.normalizers = {a.normalizer, b.normalizer, e.normalizer};
    out.value = out.terms[0] + out.terms[1] + out.terms[2];
    for (auto& v : e.gradient) v *= cfg.edge_weight;
    out.grad_coarse = std::move(a.gradient);
    out.grad_refined = std::move(b.gradient);
    out.grad_edge = std::move(e.gradient);
    return out;
}

struct LossBreakdown {
    double l_sup = 0.0;
    double l_mr = 0.0;
    bool gate_open = false;
    double gate_iou = 0.0;
    double total = 0.0;
};

/// L = L_sup + [IoU(M01, G) > alpha] * L_mr.
inline LossBreakdown total_loss(double sup, double mr, const BinaryMask& m01, const BinaryMask& gt, const LossConfig& cfg) {
    LossBreakdown out;
    out.l_sup = sup;
    out.l_mr = mr;
    out.gate_iou = iou(m01, gt);
    out.gate_open = out.gate_iou > cfg.gate_alpha;
    out.total = out.gate_open ? sup + mr : sup;
    return out;
}

}  // namespace zoomseg
