#pragma once

// Target-aware zooming: a separable, guidance-weighted resampling that spends more
// output samples on salient rows and columns. Each axis gets an inverse mapping
// T(u) = sum_i x_i w_i K(u, x_i) / sum_i w_i K(u, x_i) with a Gaussian kernel K, sampled
// on a uniform target grid; normalized coordinate 0 is the first pixel and 1 the last.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "zoomseg/core.hpp"

namespace zoomseg {

using GuidanceMap = Grid<double>;

/// Kernel width in source pixels.
inline constexpr double kDefaultSigmaPx = 11.0;

inline double grid_coord(int i, int n) { return n <= 1 ? 0.5 : static_cast<double>(i) / (n - 1); }

struct Marginals {
    std::vector<double> cols;  // s_x, length W
    std::vector<double> rows;  // s_y, length H
};

/// Row and column sums of the guidance, floored at 1e-6 * max(1, max(s)) so every weight is positive.
inline Marginals marginalize(const GuidanceMap& s) {
    Marginals m{std::vector<double>(static_cast<std::size_t>(s.width()), 0.0),
                std::vector<double>(static_cast<std::size_t>(s.height()), 0.0)};
    double peak = 0.0;
    for (int r = 0; r < s.height(); ++r) {
        for (int c = 0; c < s.width(); ++c) {
            const double v = s(r, c);
            if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("guidance must be finite and nonnegative");
            m.rows[r] += v;
            m.cols[c] += v;
            peak = std::max(peak, v);
        }
    }
    const double floor = 1e-6 * std::max(1.0, peak);
    for (auto& v : m.rows) v = std::max(v, floor);
    for (auto& v : m.cols) v = std::max(v, floor);
    return m;
}

class AxisMapping {
public:
    AxisMapping() = default;
    AxisMapping(int source_size, double sigma, std::vector<double> forward)
        : source_size_(source_size), sigma_(sigma), forward_(std::move(forward)) {
        inverse_.resize(static_cast<std::size_t>(source_size_));
        for (int i = 0; i < source_size_; ++i) inverse_[i] = inverse_at(grid_coord(i, source_size_));
    }

    int source_size() const { return source_size_; }
    int target_size() const { return static_cast<int>(forward_.size()); }
    double sigma() const { return sigma_; }

    /// Source coordinate in [0,1] for each target sample.
    const std::vector<double>& forward() const { return forward_; }
    /// Target coordinate in [0,1] for each source pixel.
    const std::vector<double>& inverse() const { return inverse_; }

    bool monotone() const {
        for (std::size_t j = 1; j < forward_.size(); ++j)
            if (!(forward_[j] >= forward_[j - 1])) return false;
        return true;
    }

    /// Piecewise-linear inverse of the forward samples. Source coordinates outside the
    /// sampled range clamp to the ends; a plateau resolves to its midpoint.
    double inverse_at(double s) const {
        const int n = target_size();
        if (n == 0) throw std::logic_error("empty AxisMapping");
        if (s <= forward_.front()) {
            if (s < forward_.front()) return grid_coord(0, n);
            return plateau_mid(0, s);
        }
        if (s >= forward_.back()) {
            if (s > forward_.back()) return grid_coord(n - 1, n);
            return plateau_mid(static_cast<int>(std::lower_bound(forward_.begin(), forward_.end(), s) - forward_.begin()), s);
        }
        const auto lo = std::lower_bound(forward_.begin(), forward_.end(), s);
        const int j = static_cast<int>(lo - forward_.begin());
        if (*lo == s) return plateau_mid(j, s);
        const double f0 = forward_[j - 1], f1 = forward_[j];
        const double u0 = grid_coord(j - 1, n), u1 = grid_coord(j, n);
        return u0 + (s - f0) / (f1 - f0) * (u1 - u0);
    }

private:
    double plateau_mid(int first, double s) const {
        int last = first;
        while (last + 1 < target_size() && forward_[last + 1] == s) ++last;
        return 0.5 * (grid_coord(first, target_size()) + grid_coord(last, target_size()));
    }

    int source_size_ = 0;
    double sigma_ = 0.0;
    std::vector<double> forward_;
    std::vector<double> inverse_;
};

/// `sigma` is in normalized [0,1] units.
inline AxisMapping build_axis_mapping(const std::vector<double>& weights, int target_size, double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("build_axis_mapping: sigma must be > 0");
    if (weights.empty() || target_size < 1) throw std::invalid_argument("build_axis_mapping: empty axis");
    for (double w : weights)
        if (!std::isfinite(w) || !(w > 0.0)) throw std::invalid_argument("build_axis_mapping: weights must be finite and > 0");
    const int n_src = static_cast<int>(weights.size());
    std::vector<double> xs(weights.size());
    for (int i = 0; i < n_src; ++i) xs[i] = grid_coord(i, n_src);
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> forward(static_cast<std::size_t>(target_size));
    for (int j = 0; j < target_size; ++j) {
        const double u = grid_coord(j, target_size);
        // Shift exponents by the nearest sample's so the largest kernel term is exp(0).
        double min_d2 = std::numeric_limits<double>::infinity();
        for (double x : xs) min_d2 = std::min(min_d2, (u - x) * (u - x));
        double num = 0.0, den = 0.0;
        for (int i = 0; i < n_src; ++i) {
            const double d2 = (u - xs[i]) * (u - xs[i]);
            const double k = weights[i] * std::exp(-(d2 - min_d2) * inv_two_var);
            num += xs[i] * k;
            den += k;
        }
        forward[j] = std::clamp(num / den, 0.0, 1.0);
    }
    // Guard against round-off inversions on near-flat stretches.
    for (int j = 1; j < target_size; ++j) forward[j] = std::max(forward[j], forward[j - 1]);
    return AxisMapping(n_src, sigma, std::move(forward));
}

struct ZoomMappings {
    AxisMapping cols;  // T_x
    AxisMapping rows;  // T_y
};

/// Builds both axis mappings for a guidance map; `sigma_px` is measured in source pixels per axis.
inline ZoomMappings build_zoom(const GuidanceMap& guidance, int target_h, int target_w, double sigma_px = kDefaultSigmaPx) {
    const auto m = marginalize(guidance);
    return {build_axis_mapping(m.cols, target_w, sigma_px / guidance.width()),
            build_axis_mapping(m.rows, target_h, sigma_px / guidance.height())};
}

/// Source pixel coordinates hit by each target sample.
inline std::vector<double> source_pixels(const AxisMapping& m) {
    std::vector<double> out(m.forward().size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = m.forward()[j] * (m.source_size() - 1);
    return out;
}

inline void check_sources(int height, int width, const AxisMapping& mx, const AxisMapping& my) {
    if (mx.source_size() != width || my.source_size() != height)
        throw DimensionError("warp: mapping source sizes do not match the raster");
}

template <typename T>
Grid<double> warp_grid(const Grid<T>& g, const AxisMapping& mx, const AxisMapping& my) {
    check_sources(g.height(), g.width(), mx, my);
    return resample(g, source_pixels(my), source_pixels(mx));
}

inline RasterImage warp_image(const RasterImage& img, const AxisMapping& mx, const AxisMapping& my) {
    check_sources(img.height(), img.width(), mx, my);
    return resample(img, source_pixels(my), source_pixels(mx));
}

inline BinaryMask warp_mask(const BinaryMask& m, const AxisMapping& mx, const AxisMapping& my) {
    const auto soft = warp_grid(m, mx, my);
    BinaryMask out(soft.height(), soft.width(), 0);
    for (std::size_t i = 0; i < soft.size(); ++i) out[i] = soft[i] >= 0.5 ? 1 : 0;
    return out;
}

/// Moves click centres into the zoomed grid through the inverse mappings.
inline ClickList warp_clicks(const ClickList& clicks, const AxisMapping& mx, const AxisMapping& my) {
    ClickList out;
    out.reserve(clicks.size());
    const int th = my.target_size(), tw = mx.target_size();
    for (auto c : clicks) {
        const double v = my.inverse_at(grid_coord(c.row, my.source_size()));
        const double u = mx.inverse_at(grid_coord(c.col, mx.source_size()));
        c.row = std::clamp(static_cast<int>(std::lround(v * (th - 1))), 0, th - 1);
        c.col = std::clamp(static_cast<int>(std::lround(u * (tw - 1))), 0, tw - 1);
        out.push_back(c);
    }
    return out;
}

/// Resamples a logit map from the zoomed grid back to an `out_h` x `out_w` raster.
inline LogitMap unwarp_logits(const LogitMap& o, const AxisMapping& mx, const AxisMapping& my, int out_h, int out_w) {
    if (o.height() != my.target_size() || o.width() != mx.target_size())
        throw DimensionError("unwarp_logits: logit map does not match mapping target sizes");
    if (!mx.monotone() || !my.monotone()) throw std::invalid_argument("unwarp_logits: corrupted (non-monotone) mapping");
    std::vector<double> rows(static_cast<std::size_t>(out_h)), cols(static_cast<std::size_t>(out_w));
    for (int y = 0; y < out_h; ++y) rows[y] = my.inverse_at(grid_coord(y, out_h)) * (o.height() - 1);
    for (int x = 0; x < out_w; ++x) cols[x] = mx.inverse_at(grid_coord(x, out_w)) * (o.width() - 1);
    return resample(o, rows, cols);
}

/// Source pixels inside the span sampled by the zoomed grid on both axes. Outside it the
/// unwarped logits are only the clamped edge of the zoomed view.
inline BinaryMask zoom_coverage(const AxisMapping& mx, const AxisMapping& my) {
    const auto rows = source_pixels(my), cols = source_pixels(mx);
    BinaryMask out(my.source_size(), mx.source_size(), 0);
    for (int y = 0; y < out.height(); ++y) {
        if (y < rows.front() - 0.5 || y > rows.back() + 0.5) continue;
        for (int x = 0; x < out.width(); ++x) out(y, x) = (x >= cols.front() - 0.5 && x <= cols.back() + 0.5) ? 1 : 0;
    }
    return out;
}

/// Blend weight for the zoomed branch: zero before half the budget, t/T afterwards.
class FusionSchedule {
public:
    explicit FusionSchedule(int budget) : budget_(budget) {
        if (budget < 1) throw std::invalid_argument("FusionSchedule: budget must be >= 1");
    }

    int budget() const { return budget_; }

    double lambda(int round) const {
        if (2 * round < budget_) return 0.0;
        return std::max(0.5 * budget_, static_cast<double>(round)) / budget_;
    }

private:
    int budget_;
};

inline LogitMap fuse(const LogitMap& o2, const LogitMap& o2_tilde, int round, const FusionSchedule& sched) {
    require_same_shape(o2, o2_tilde, "fuse");
    if (round < 1 || round > sched.budget()) throw std::out_of_range("fuse: round outside [1, T]");
    const double lambda = sched.lambda(round);
    if (lambda == 0.0) return o2;
    if (lambda == 1.0) return o2_tilde;
    LogitMap out(o2.height(), o2.width());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - lambda) * o2[i] + lambda * o2_tilde[i];
    return out;
}

}  // namespace zoomseg
