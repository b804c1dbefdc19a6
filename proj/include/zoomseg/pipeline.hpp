#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "zoomseg/core.hpp"
#include "zoomseg/interact.hpp"
#include "zoomseg/segmenter.hpp"
#include "zoomseg/taiz.hpp"

namespace zoomseg {

struct PipelineConfig {
    int working_size = 256;  // both passes run on a working_size x working_size raster
    double sigma_px = kDefaultSigmaPx;
    bool use_taiz = true;  // false keeps lambda at 0 (single bilinear pass)
    bool refine = true;
    double pad_ratio = kDefaultPadRatio;
    int disc_radius = kDiscRadius;
};

class BudgetExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SessionState {
    RasterImage image;
    std::optional<BinaryMask> gt;
    ClickList clicks;
    LogitMap current_logit;
    BinaryMask current_mask;
    int round = 0;
    int budget = 20;
    std::vector<double> timings;  // seconds per completed round
    std::vector<double> lambdas;  // fusion weight used in each round
    int zoom_mappings_built = 0;  // instrumentation: zoomed-branch passes so far
    std::optional<ZoomMappings> last_zoom;  // mappings of the latest round, if the zoomed branch ran
};

inline SessionState start_session(RasterImage image, std::optional<BinaryMask> gt, int budget) {
    if (budget < 1) throw std::invalid_argument("start_session: budget must be >= 1");
    if (image.height() < 1 || image.width() < 1) throw DimensionError("start_session: empty image");
    if (gt) require_same_shape(image.r, *gt, "start_session ground truth");
    SessionState s;
    s.current_logit = LogitMap(image.height(), image.width(), -1.0);
    s.current_mask = BinaryMask(image.height(), image.width(), 0);
    s.image = std::move(image);
    s.gt = std::move(gt);
    s.budget = budget;
    return s;
}

/// Guidance for zooming: pixel-wise max of the current mask and both click-disc channels.
inline GuidanceMap build_guidance(const BinaryMask& m2, const DiscMap& discs) {
    require_same_shape(m2, discs.positive, "build_guidance");
    require_same_shape(m2, discs.negative, "build_guidance");
    GuidanceMap g(m2.height(), m2.width(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (m2[i] || discs.positive[i] || discs.negative[i]) ? 1.0 : 0.0;
    return g;
}

inline ClickList scale_clicks(const ClickList& clicks, int src_h, int src_w, int dst_h, int dst_w) {
    ClickList out = clicks;
    const auto scale = [](int v, int src, int dst) {
        if (src <= 1) return (dst - 1) / 2;
        return std::clamp(static_cast<int>(std::lround(static_cast<double>(v) * (dst - 1) / (src - 1))), 0, dst - 1);
    };
    for (auto& c : out) {
        c.row = scale(c.row, src_h, dst_h);
        c.col = scale(c.col, src_w, dst_w);
    }
    return out;
}

/// One interaction round: bilinear coarse pass, then (once lambda > 0) a second pass on the
/// target-aware zoom of the inputs, unwarped and blended in; finally local refinement of the
/// region that changed most.
inline SessionState step(SessionState state, Click click, const Segmenter& seg, const PipelineConfig& cfg = {}) {
    if (state.round >= state.budget) throw BudgetExhausted("step: click budget exhausted");
    const int H = state.image.height(), W = state.image.width();
    if (click.row < 0 || click.col < 0 || click.row >= H || click.col >= W) throw std::out_of_range("step: click outside the image");
    const auto started = std::chrono::steady_clock::now();
    const int t = state.round + 1;
    const int ws = cfg.working_size;
    click.round = t;
    state.clicks.push_back(click);

    // Pass 1: plain bilinear downsample.
    const auto rows = resize_coords(H, ws), cols = resize_coords(W, ws);
    SegmenterInput coarse{resample(state.image, rows, cols),
                          render_discs(scale_clicks(state.clicks, H, W, ws, ws), ws, ws, cfg.disc_radius),
                          resize_mask(state.current_mask, ws, ws),
                          {rows, cols}};
    const LogitMap o2 = resize_bilinear(seg.segment(coarse), H, W);

    const FusionSchedule schedule(state.budget);
    const double lambda = cfg.use_taiz ? schedule.lambda(t) : 0.0;
    LogitMap fused = o2;
    const DiscMap full_discs = render_discs(state.clicks, H, W, cfg.disc_radius);
    state.last_zoom.reset();
    if (lambda > 0.0) {
        // Pass 2: zoom towards the current mask and clicks.
        const BinaryMask m2 = threshold(o2);
        auto zoom = build_zoom(build_guidance(m2, full_discs), ws, ws, cfg.sigma_px);
        ++state.zoom_mappings_built;
        SegmenterInput zoomed{warp_image(state.image, zoom.cols, zoom.rows),
                              render_discs(warp_clicks(state.clicks, zoom.cols, zoom.rows), ws, ws, cfg.disc_radius),
                              warp_mask(m2, zoom.cols, zoom.rows),
                              {source_pixels(zoom.rows), source_pixels(zoom.cols)}};
        LogitMap o2_tilde = unwarp_logits(seg.segment(zoomed), zoom.cols, zoom.rows, H, W);
        const auto covered = zoom_coverage(zoom.cols, zoom.rows);
        for (std::size_t i = 0; i < o2_tilde.size(); ++i)
            if (!covered[i]) o2_tilde[i] = o2[i];
        fused = fuse(o2, o2_tilde, t, schedule);
        state.last_zoom = std::move(zoom);
    }

    if (cfg.refine) {
        if (const auto region = select_refinement_crop(threshold(fused), state.current_mask, cfg.pad_ratio)) {
            const auto full = make_input(state.image, full_discs, state.current_mask);
            fused = refine_local(fused, *region, full, seg, ws);
        }
    }

    state.current_logit = std::move(fused);
    state.current_mask = threshold(state.current_logit);
    state.round = t;
    state.lambdas.push_back(lambda);
    state.timings.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
    return state;
}

struct RoundTrace {
    int round = 0;
    Click click;
    double iou = 0.0;
    double biou = 0.0;
    double seconds = 0.0;
    double lambda = 0.0;
};

struct SessionTrace {
    std::string image_id;
    int budget = 20;
    std::vector<double> thresholds;
    std::vector<std::optional<int>> reached_at;  // first round meeting each threshold
    std::vector<RoundTrace> rounds;

    double final_iou() const { return rounds.empty() ? 0.0 : rounds.back().iou; }
};

/// Simulated session: next_click + step until every threshold has been reached or the budget is spent.
/// With no thresholds the session always runs to the budget (or until the mask is perfect).
inline SessionTrace run_session(const RasterImage& image, const BinaryMask& gt, const Segmenter& seg, int budget,
                                std::vector<double> thresholds, const PipelineConfig& cfg = {}, std::string image_id = {}) {
    if (count(gt) == 0) throw std::invalid_argument("run_session: ground truth is empty");
    SessionTrace trace;
    trace.image_id = std::move(image_id);
    trace.budget = budget;
    trace.thresholds = std::move(thresholds);
    trace.reached_at.assign(trace.thresholds.size(), std::nullopt);
    const int band = default_boundary_band(gt.height(), gt.width());
    auto state = start_session(image, gt, budget);
    while (state.round < budget) {
        const auto click = next_click(state.current_mask, gt, state.round + 1);
        if (!click) break;
        state = step(std::move(state), *click, seg, cfg);
        RoundTrace rt;
        rt.round = state.round;
        rt.click = state.clicks.back();
        rt.iou = iou(state.current_mask, gt);
        rt.biou = boundary_iou(state.current_mask, gt, band);
        rt.seconds = state.timings.back();
        rt.lambda = state.lambdas.back();
        trace.rounds.push_back(rt);
        bool all = !trace.thresholds.empty();
        for (std::size_t k = 0; k < trace.thresholds.size(); ++k) {
            if (!trace.reached_at[k] && rt.iou >= trace.thresholds[k]) trace.reached_at[k] = rt.round;
            all = all && trace.reached_at[k].has_value();
        }
        if (all) break;
    }
    return trace;
}

}  // namespace zoomseg
