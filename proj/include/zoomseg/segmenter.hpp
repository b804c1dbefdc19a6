#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "zoomseg/core.hpp"

namespace zoomseg {

/// Original-image pixel coordinate of every input row and column. All resampling in the
/// pipeline is separable (resize, crop, zoom), so two lookup tables describe it exactly.
struct SourceFrame {
    std::vector<double> rows;
    std::vector<double> cols;

    static SourceFrame identity(int height, int width) {
        SourceFrame f;
        f.rows.resize(static_cast<std::size_t>(height));
        f.cols.resize(static_cast<std::size_t>(width));
        for (int r = 0; r < height; ++r) f.rows[r] = r;
        for (int c = 0; c < width; ++c) f.cols[c] = c;
        return f;
    }
};

namespace detail {

inline std::vector<double> compose_axis(const std::vector<double>& outer, const std::vector<double>& coords) {
    std::vector<double> out(coords.size());
    const int n = static_cast<int>(outer.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const double x = std::clamp(coords[i], 0.0, static_cast<double>(n - 1));
        const int x0 = static_cast<int>(std::floor(x));
        const int x1 = std::min(x0 + 1, n - 1);
        out[i] = outer[x0] + (x - x0) * (outer[x1] - outer[x0]);
    }
    return out;
}

}  // namespace detail

/// Frame of a raster resampled from `f` at the given fractional row/column coordinates.
inline SourceFrame resample_frame(const SourceFrame& f, const std::vector<double>& rows, const std::vector<double>& cols) {
    return {detail::compose_axis(f.rows, rows), detail::compose_axis(f.cols, cols)};
}

inline SourceFrame crop_frame(const SourceFrame& f, const CropRegion& region) {
    SourceFrame out;
    out.rows.assign(f.rows.begin() + region.top, f.rows.begin() + region.bottom());
    out.cols.assign(f.cols.begin() + region.left, f.cols.begin() + region.right());
    return out;
}

struct SegmenterInput {
    RasterImage image;
    DiscMap discs;
    BinaryMask initial_mask;
    SourceFrame frame;

    int height() const { return image.height(); }
    int width() const { return image.width(); }

    void validate() const {
        require_same_shape(image.r, discs.positive, "SegmenterInput discs");
        require_same_shape(image.r, discs.negative, "SegmenterInput discs");
        require_same_shape(image.r, initial_mask, "SegmenterInput initial mask");
        if (static_cast<int>(frame.rows.size()) != height() || static_cast<int>(frame.cols.size()) != width())
            throw DimensionError("SegmenterInput frame does not match the image");
    }
};

inline SegmenterInput make_input(RasterImage image, DiscMap discs, BinaryMask initial_mask) {
    SegmenterInput in{std::move(image), std::move(discs), std::move(initial_mask), {}};
    in.frame = SourceFrame::identity(in.height(), in.width());
    in.validate();
    return in;
}

inline SegmenterInput crop(const SegmenterInput& in, const CropRegion& region) {
    return {crop(in.image, region), crop(in.discs, region), crop(in.initial_mask, region), crop_frame(in.frame, region)};
}

/// Contract for the coarse segmentation module: (image, click discs, initial mask) -> logits.
/// Implementations are stateless per call and safe to share across threads.
class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual LogitMap segment(const SegmenterInput& input) const = 0;
    virtual std::string name() const = 0;
};

/// Forces disc pixels that belong to exactly one polarity onto the matching side of zero.
inline void clamp_click_pixels(LogitMap& logits, const DiscMap& discs, double margin = 1.0) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const bool pos = discs.positive[i] != 0, neg = discs.negative[i] != 0;
        if (pos && !neg) logits[i] = std::max(logits[i], margin);
        if (neg && !pos) logits[i] = std::min(logits[i], -margin);
    }
}

inline bool has_clicks(const DiscMap& d) { return count(d.positive) + count(d.negative) > 0; }

/// Multi-source geodesic distance on the 8-neighbour grid. Step cost is the RGB difference
/// plus `spatial_weight` per unit of pixel distance.
inline Grid<double> geodesic_distance(const RasterImage& img, const BinaryMask& seeds, double spatial_weight) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const int h = img.height(), w = img.width();
    Grid<double> dist(h, w, inf);
    using Entry = std::pair<double, std::size_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (seeds[i]) {
            dist[i] = 0.0;
            heap.emplace(0.0, i);
        }
    }
    constexpr int dy[8] = {-1, 1, 0, 0, -1, -1, 1, 1};
    constexpr int dx[8] = {0, 0, -1, 1, -1, 1, -1, 1};
    constexpr double len[8] = {1, 1, 1, 1, M_SQRT2, M_SQRT2, M_SQRT2, M_SQRT2};
    while (!heap.empty()) {
        const auto [d, i] = heap.top();
        heap.pop();
        if (d > dist[i]) continue;
        const int r = static_cast<int>(i / w), c = static_cast<int>(i % w);
        for (int k = 0; k < 8; ++k) {
            const int y = r + dy[k], x = c + dx[k];
            if (!dist.contains(y, x)) continue;
            const auto j = dist.index(y, x);
            const double dr = img.r[i] - img.r[j], dg = img.g[i] - img.g[j], db = img.b[i] - img.b[j];
            const double nd = d + std::sqrt(dr * dr + dg * dg + db * db) + spatial_weight * len[k];
            if (nd < dist[j]) {
                dist[j] = nd;
                heap.emplace(nd, j);
            }
        }
    }
    return dist;
}

/// Signed Euclidean distance to the mask boundary in pixels: positive inside, negative outside.
/// An empty mask is -inf everywhere and a full mask +inf.
inline Grid<double> signed_distance(const BinaryMask& m) {
    const auto outside = squared_distance_transform(m.height(), m.width(), [&](int r, int c) { return m(r, c) != 0; }, false);
    const auto inside = squared_distance_transform(m.height(), m.width(), [&](int r, int c) { return m(r, c) == 0; }, false);
    Grid<double> out(m.height(), m.width());
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] ? std::sqrt(inside[i]) : -std::sqrt(outside[i]);
    return out;
}

struct GeodesicConfig {
    double spatial_weight = 1e-3;
    double reach = 0.5;           // geodesic distances saturate here
    double prior_scale_px = 10.0;  // tanh scale of the initial-mask signed distance
    double geodesic_share = 0.7;
    double logit_scale = 8.0;
};

/// Classical baseline: geodesic competition between positive and negative click discs,
/// blended with a signed-distance prior from the initial mask.
class GeodesicSegmenter final : public Segmenter {
public:
    explicit GeodesicSegmenter(GeodesicConfig cfg = {}) : cfg_(cfg) {}

    LogitMap segment(const SegmenterInput& in) const override {
        in.validate();
        const auto dpos = geodesic_distance(in.image, in.discs.positive, cfg_.spatial_weight);
        const auto dneg = geodesic_distance(in.image, in.discs.negative, cfg_.spatial_weight);
        const auto sd = signed_distance(in.initial_mask);
        LogitMap out(in.height(), in.width());
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double p = std::min(dpos[i], cfg_.reach), n = std::min(dneg[i], cfg_.reach);
            const double geo = (n - p) / (n + p + 1e-12);
            const double prior = std::tanh(sd[i] / cfg_.prior_scale_px);
            out[i] = cfg_.logit_scale * (cfg_.geodesic_share * geo + (1.0 - cfg_.geodesic_share) * prior);
        }
        clamp_click_pixels(out, in.discs);
        return out;
    }

    std::string name() const override { return "geodesic"; }

private:
    GeodesicConfig cfg_;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Test-only segmenter that reads the ground truth through the input's source frame and
/// knocks out a seeded subset of boundary pixels (at most `jitter_fraction` of the area).
class OracleSegmenter final : public Segmenter {
public:
    OracleSegmenter(BinaryMask gt, std::uint64_t seed, double jitter_fraction = 0.02)
        : gt_(std::move(gt)), seed_(seed), jitter_fraction_(jitter_fraction) {}

    LogitMap segment(const SegmenterInput& in) const override {
        in.validate();
        LogitMap out(in.height(), in.width(), -kMagnitude);
        if (!has_clicks(in.discs) && count(in.initial_mask) == 0) return out;
        BinaryMask sampled(in.height(), in.width(), 0);
        std::vector<int> src_r(in.frame.rows.size()), src_c(in.frame.cols.size());
        for (std::size_t r = 0; r < src_r.size(); ++r)
            src_r[r] = std::clamp(static_cast<int>(std::lround(in.frame.rows[r])), 0, gt_.height() - 1);
        for (std::size_t c = 0; c < src_c.size(); ++c)
            src_c[c] = std::clamp(static_cast<int>(std::lround(in.frame.cols[c])), 0, gt_.width() - 1);
        for (int r = 0; r < in.height(); ++r)
            for (int c = 0; c < in.width(); ++c) sampled(r, c) = gt_(src_r[r], src_c[c]);

        const auto budget = static_cast<std::size_t>(jitter_fraction_ * static_cast<double>(count(sampled)));
        std::vector<std::pair<std::uint64_t, std::size_t>> candidates;
        for (int r = 0; r < in.height(); ++r) {
            for (int c = 0; c < in.width(); ++c) {
                if (!sampled(r, c)) continue;
                const bool edge = !sampled.contains(r - 1, c) || !sampled(r - 1, c) || !sampled.contains(r + 1, c) ||
                                  !sampled(r + 1, c) || !sampled.contains(r, c - 1) || !sampled(r, c - 1) ||
                                  !sampled.contains(r, c + 1) || !sampled(r, c + 1);
                if (!edge) continue;
                const auto key = detail::splitmix64(seed_ ^ (static_cast<std::uint64_t>(src_r[r]) << 32) ^
                                                    static_cast<std::uint64_t>(src_c[c]));
                if (key & 1) candidates.emplace_back(key, sampled.index(r, c));
            }
        }
        std::sort(candidates.begin(), candidates.end());
        for (std::size_t k = 0; k < std::min(budget, candidates.size()); ++k) sampled[candidates[k].second] = 0;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = sampled[i] ? kMagnitude : -kMagnitude;
        clamp_click_pixels(out, in.discs);
        return out;
    }

    std::string name() const override { return "oracle"; }

private:
    static constexpr double kMagnitude = 4.0;
    BinaryMask gt_;
    std::uint64_t seed_;
    double jitter_fraction_;
};

/// Stub that never predicts foreground.
class EmptySegmenter final : public Segmenter {
public:
    LogitMap segment(const SegmenterInput& in) const override {
        in.validate();
        return LogitMap(in.height(), in.width(), -1.0);
    }
    std::string name() const override { return "empty"; }
};

// ---------------------------------------------------------------------------
// Toy differentiable model

inline constexpr int kToyFeatures = 8;

/// Per-pixel linear scorer: 8 feature weights followed by a bias.
struct ToyModelParams {
    std::array<double, kToyFeatures + 1> values{};

    double weight(int k) const { return values[static_cast<std::size_t>(k)]; }
    double bias() const { return values[kToyFeatures]; }

    friend bool operator==(const ToyModelParams&, const ToyModelParams&) = default;
};

/// RGB, positive disc, negative disc, initial mask, normalized geodesic distance to the
/// nearest positive and negative click (1 where unreachable or absent).
using ToyFeatures = std::array<Grid<double>, kToyFeatures>;

inline ToyFeatures toy_features(const SegmenterInput& in, const GeodesicConfig& geo = {}) {
    in.validate();
    ToyFeatures f;
    for (auto& g : f) g = Grid<double>(in.height(), in.width(), 0.0);
    const auto dpos = geodesic_distance(in.image, in.discs.positive, geo.spatial_weight);
    const auto dneg = geodesic_distance(in.image, in.discs.negative, geo.spatial_weight);
    for (std::size_t i = 0; i < f[0].size(); ++i) {
        f[0][i] = in.image.r[i];
        f[1][i] = in.image.g[i];
        f[2][i] = in.image.b[i];
        f[3][i] = in.discs.positive[i];
        f[4][i] = in.discs.negative[i];
        f[5][i] = in.initial_mask[i];
        f[6][i] = std::min(dpos[i], geo.reach) / geo.reach;
        f[7][i] = std::min(dneg[i], geo.reach) / geo.reach;
    }
    return f;
}

inline LogitMap toy_forward(const ToyModelParams& p, const ToyFeatures& f) {
    for (double v : p.values)
        if (!std::isfinite(v)) throw std::invalid_argument("toy_forward: non-finite parameter");
    LogitMap out(f[0].height(), f[0].width(), p.bias());
    for (int k = 0; k < kToyFeatures; ++k) {
        const double w = p.weight(k);
        if (w == 0.0) continue;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * f[k][i];
    }
    return out;
}

inline LogitMap toy_forward(const ToyModelParams& p, const SegmenterInput& in) { return toy_forward(p, toy_features(in)); }

/// d(loss)/d(params) given d(loss)/d(logit) for every pixel of a toy forward pass.
inline std::array<double, kToyFeatures + 1> toy_backward(const ToyFeatures& f, const LogitMap& grad_logits) {
    std::array<double, kToyFeatures + 1> g{};
    for (int k = 0; k < kToyFeatures; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < grad_logits.size(); ++i) s += grad_logits[i] * f[k][i];
        g[static_cast<std::size_t>(k)] = s;
    }
    double s = 0.0;
    for (double v : grad_logits) s += v;
    g[kToyFeatures] = s;
    return g;
}

/// A starting point that already segments sensibly: close to the positive click, far from the negative one.
inline ToyModelParams default_toy_params() {
    ToyModelParams p;
    p.values = {0.0, 0.0, 0.0, 2.0, -2.0, 1.0, -6.0, 4.0, 0.0};
    return p;
}

class ToySegmenter final : public Segmenter {
public:
    explicit ToySegmenter(ToyModelParams params) : params_(params) {}
    LogitMap segment(const SegmenterInput& in) const override { return toy_forward(params_, in); }
    std::string name() const override { return "toy"; }
    const ToyModelParams& params() const { return params_; }

private:
    ToyModelParams params_;
};

// ---------------------------------------------------------------------------
// Local refinement

inline constexpr double kDefaultPadRatio = 0.4;

/// Bounding box of the largest component of m1 XOR m0, grown by `pad_ratio` of its own
/// height/width on each side and clamped to the image.
inline std::optional<CropRegion> select_refinement_crop(const BinaryMask& m1, const BinaryMask& m0, double pad_ratio = kDefaultPadRatio) {
    const auto diff = xor_mask(m1, m0);
    const auto lab = label_components(diff);
    if (lab.components.empty()) return std::nullopt;
    const auto& c = *std::min_element(lab.components.begin(), lab.components.end(), bigger_component);
    const int bh = c.bottom - c.top + 1, bw = c.right - c.left + 1;
    const int pr = static_cast<int>(std::lround(pad_ratio * bh));
    const int pc = static_cast<int>(std::lround(pad_ratio * bw));
    const int top = std::max(0, c.top - pr), left = std::max(0, c.left - pc);
    const int bottom = std::min(m1.height() - 1, c.bottom + pr), right = std::min(m1.width() - 1, c.right + pc);
    return CropRegion{top, left, bottom - top + 1, right - left + 1};
}

/// Re-runs the segmenter on `region` (image, discs and the coarse mask cropped) and pastes
/// the result into the coarse logits. Crops larger than `max_side` are processed at reduced size.
inline LogitMap refine_local(const LogitMap& coarse_logit, const CropRegion& region, const SegmenterInput& full,
                             const Segmenter& seg, int max_side = 256) {
    require_same_shape(coarse_logit, full.initial_mask, "refine_local");
    if (region.height < 1 || region.width < 1 || region.top < 0 || region.left < 0 ||
        region.bottom() > coarse_logit.height() || region.right() > coarse_logit.width())
        throw std::out_of_range("refine_local: crop outside the image");
    SegmenterInput local = crop(full, region);
    local.initial_mask = crop(threshold(coarse_logit), region);
    const double scale = std::min(1.0, static_cast<double>(max_side) / std::max(region.height, region.width));
    LogitMap patch;
    if (scale < 1.0) {
        const int h = std::max(1, static_cast<int>(std::lround(region.height * scale)));
        const int w = std::max(1, static_cast<int>(std::lround(region.width * scale)));
        const auto rows = resize_coords(region.height, h), cols = resize_coords(region.width, w);
        SegmenterInput small{resample(local.image, rows, cols), {}, {}, resample_frame(local.frame, rows, cols)};
        small.discs.positive = resize_mask(local.discs.positive, h, w);
        small.discs.negative = resize_mask(local.discs.negative, h, w);
        small.initial_mask = resize_mask(local.initial_mask, h, w);
        patch = resize_bilinear(seg.segment(small), region.height, region.width);
    } else {
        patch = seg.segment(local);
    }
    LogitMap out = coarse_logit;
    for (int r = 0; r < region.height; ++r)
        for (int c = 0; c < region.width; ++c) out(region.top + r, region.left + c) = patch(r, c);
    return out;
}

}  // namespace zoomseg
