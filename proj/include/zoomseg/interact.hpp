#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "zoomseg/core.hpp"

namespace zoomseg {

using Rng = std::mt19937_64;

/// Uniform integer in [0, n). Rejection sampling keeps the draw identical across standard libraries.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    static_assert(Rng::min() == 0 && Rng::max() == ~std::uint64_t{0});
    const std::uint64_t rem = (Rng::max() % n + 1) % n;  // 2^64 mod n
    std::uint64_t x;
    do {
        x = rng();
    } while (rem != 0 && x > Rng::max() - rem);
    return x % n;
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform_unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct ErrorDecomposition {
    BinaryMask false_negatives;
    BinaryMask false_positives;
};

inline ErrorDecomposition decompose_errors(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_shape(pred, gt, "decompose_errors");
    ErrorDecomposition e{BinaryMask(gt.height(), gt.width(), 0), BinaryMask(gt.height(), gt.width(), 0)};
    for (std::size_t i = 0; i < gt.size(); ++i) {
        e.false_negatives[i] = (gt[i] && !pred[i]) ? 1 : 0;
        e.false_positives[i] = (pred[i] && !gt[i]) ? 1 : 0;
    }
    return e;
}

/// Interior pixel of `region` farthest from its boundary (image exterior counts as boundary).
/// Ties go to the raster-earliest pixel.
inline std::pair<int, int> pole_of_inaccessibility(const BinaryMask& region) {
    const auto dist = inner_distance_sq(region);
    std::pair<int, int> best{-1, -1};
    double best_d = -1.0;
    for (int r = 0; r < region.height(); ++r) {
        for (int c = 0; c < region.width(); ++c) {
            if (region(r, c) && dist(r, c) > best_d) {
                best_d = dist(r, c);
                best = {r, c};
            }
        }
    }
    return best;
}

/// Simulated user click: targets the largest 4-connected error component, placed at its
/// pole of inaccessibility. Positive for a false-negative component, negative for false-positive.
inline std::optional<Click> next_click(const BinaryMask& pred, const BinaryMask& gt, int round) {
    const auto errors = decompose_errors(pred, gt);
    const auto fn = label_components(errors.false_negatives);
    const auto fp = label_components(errors.false_positives);
    const Component* best = nullptr;
    bool best_is_fn = true;
    for (const auto& c : fn.components)
        if (!best || bigger_component(c, *best)) best = &c, best_is_fn = true;
    for (const auto& c : fp.components)
        if (!best || bigger_component(c, *best)) best = &c, best_is_fn = false;
    if (!best) return std::nullopt;
    const auto region = component_mask(best_is_fn ? fn : fp, best->label);
    const auto [row, col] = pole_of_inaccessibility(region);
    return Click{row, col, best_is_fn ? Polarity::positive : Polarity::negative, round};
}

enum class PerturbOp : int { dilate = 0, erode = 1, drop_region = 2, add_region = 3 };

struct PerturbConfig {
    double target_iou = 0.8;
    double tolerance = 0.03;
    int max_steps = 400;
    std::array<double, 4> op_weights{1.0, 1.0, 1.0, 1.0};  // dilate, erode, drop, add
    std::uint64_t seed = 0;
};

class PerturbationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

struct PixelChange {
    std::size_t index;
    double order;  // ascending = applied first
};

inline std::vector<PixelChange> sorted_changes(std::vector<PixelChange> changes) {
    std::stable_sort(changes.begin(), changes.end(),
                     [](const PixelChange& a, const PixelChange& b) { return a.order < b.order; });
    return changes;
}

inline int pick_weighted(Rng& rng, double w0, double w1, int id0, int id1) {
    const double total = w0 + w1;
    if (total <= 0.0) return uniform_index(rng, 2) == 0 ? id0 : id1;
    return uniform_unit(rng) * total < w0 ? id0 : id1;
}

// Candidate change set for one random operation, in magnitude order.
inline std::vector<PixelChange> propose(const BinaryMask& m, std::size_t gt_area, PerturbOp op, Rng& rng) {
    std::vector<PixelChange> out;
    const int h = m.height(), w = m.width();
    switch (op) {
        case PerturbOp::dilate: {
            const int radius = 1 + static_cast<int>(uniform_index(rng, 5));
            const auto d = squared_distance_transform(h, w, [&](int r, int c) { return m(r, c) != 0; }, false);
            for (std::size_t i = 0; i < m.size(); ++i)
                if (!m[i] && d[i] <= double(radius) * radius) out.push_back({i, d[i]});
            break;
        }
        case PerturbOp::erode: {
            const int radius = 1 + static_cast<int>(uniform_index(rng, 5));
            const auto d = inner_distance_sq(m);
            for (std::size_t i = 0; i < m.size(); ++i)
                if (m[i] && d[i] <= double(radius) * radius) out.push_back({i, d[i]});
            break;
        }
        case PerturbOp::drop_region:
        case PerturbOp::add_region: {
            const double max_area = std::max(1.0, 0.05 * static_cast<double>(gt_area));
            const int rmax = std::max(1, static_cast<int>(std::sqrt(max_area / 3.14159265358979323846)));
            const int radius = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(rmax)));
            int cr, cc;
            if (op == PerturbOp::drop_region) {
                std::vector<std::size_t> fg;
                for (std::size_t i = 0; i < m.size(); ++i)
                    if (m[i]) fg.push_back(i);
                if (fg.empty()) return out;
                const auto pick = fg[uniform_index(rng, fg.size())];
                cr = static_cast<int>(pick / w);
                cc = static_cast<int>(pick % w);
            } else {
                cr = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(h)));
                cc = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(w)));
            }
            const bool want = op == PerturbOp::add_region;
            for (int r = std::max(0, cr - radius); r <= std::min(h - 1, cr + radius); ++r) {
                for (int c = std::max(0, cc - radius); c <= std::min(w - 1, cc + radius); ++c) {
                    const double d2 = double(r - cr) * (r - cr) + double(c - cc) * (c - cc);
                    const auto i = m.index(r, c);
                    if (d2 <= double(radius) * radius && (m[i] != 0) != want) {
                        // Drops shrink from the rim inwards; additions grow outwards from the centre.
                        out.push_back({i, want ? d2 : -d2});
                    }
                }
            }
            break;
        }
    }
    return sorted_changes(std::move(out));
}

}  // namespace detail

/// Randomly degrades `gt` with boundary and region operations until its IoU with `gt`
/// lands within `tolerance` of the target. The operation that crosses the target is
/// applied partially (bisection over its magnitude-ordered pixel changes).
inline BinaryMask perturb_to_iou(const BinaryMask& gt, const PerturbConfig& cfg) {
    if (!(cfg.target_iou > 0.0 && cfg.target_iou < 1.0)) throw std::invalid_argument("perturb_to_iou: target_iou must be in (0,1)");
    if (!(cfg.tolerance > 0.0)) throw std::invalid_argument("perturb_to_iou: tolerance must be > 0");
    if (cfg.max_steps < 1) throw std::invalid_argument("perturb_to_iou: max_steps must be >= 1");
    const std::size_t gt_area = count(gt);
    if (gt_area == 0) throw std::invalid_argument("perturb_to_iou: ground truth is empty");
    if (1.0 - cfg.target_iou <= cfg.tolerance) return gt;

    Rng rng(cfg.seed);
    BinaryMask m = gt;
    std::size_t inter = gt_area, uni = gt_area;
    const auto& wts = cfg.op_weights;
    for (int step = 0; step < cfg.max_steps; ++step) {
        const bool boundary = step % 2 == 0;
        const auto op = static_cast<PerturbOp>(boundary ? detail::pick_weighted(rng, wts[0], wts[1], 0, 1)
                                                         : detail::pick_weighted(rng, wts[2], wts[3], 2, 3));
        const auto changes = detail::propose(m, gt_area, op, rng);
        if (changes.empty()) continue;

        // IoU after applying the first k changes, k = 0..n.
        std::vector<double> prefix(changes.size() + 1);
        std::size_t pi = inter, pu = uni;
        prefix[0] = double(pi) / double(pu);
        for (std::size_t k = 0; k < changes.size(); ++k) {
            const auto i = changes[k].index;
            const bool adding = m[i] == 0;
            if (gt[i]) adding ? ++pi : --pi;
            else adding ? ++pu : --pu;
            prefix[k + 1] = pu == 0 ? 1.0 : double(pi) / double(pu);
        }
        const double full = prefix.back();
        if (full >= prefix[0]) continue;  // no progress toward the target

        std::size_t take = changes.size();
        if (full < cfg.target_iou - cfg.tolerance) {
            // Bisect for adjacent prefixes straddling the target.
            std::size_t lo = 0, hi = changes.size();
            while (hi - lo > 1) {
                const std::size_t mid = lo + (hi - lo) / 2;
                (prefix[mid] >= cfg.target_iou ? lo : hi) = mid;
            }
            take = std::abs(prefix[hi] - cfg.target_iou) < std::abs(prefix[lo] - cfg.target_iou) ? hi : lo;
            if (std::abs(prefix[take] - cfg.target_iou) > cfg.tolerance) take = lo;
        }
        for (std::size_t k = 0; k < take; ++k) {
            const auto i = changes[k].index;
            const bool adding = m[i] == 0;
            if (gt[i]) adding ? ++inter : --inter;
            else adding ? ++uni : --uni;
            m[i] = adding ? 1 : 0;
        }
        const double now = double(inter) / double(uni);
        if (std::abs(now - cfg.target_iou) <= cfg.tolerance) return m;
    }
    throw PerturbationError("perturb_to_iou: no convergence within max_steps");
}

/// Number of extra simulated-click rounds, uniform over {0,1,2,3}.
inline int session_restart_steps(Rng& rng) { return static_cast<int>(uniform_index(rng, 4)); }

inline int session_restart_steps(std::uint64_t seed) {
    Rng rng(seed);
    return session_restart_steps(rng);
}

}  // namespace zoomseg
