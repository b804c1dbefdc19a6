#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "zoomseg/taiz.hpp"

using namespace zoomseg;

namespace {

// Direct evaluation of the kernel-weighted average in long double, no exponent shift.
std::vector<double> naive_forward(const std::vector<double>& w, int n, double sigma) {
    const int m = static_cast<int>(w.size());
    std::vector<double> out(n);
    for (int j = 0; j < n; ++j) {
        const long double u = n == 1 ? 0.5L : static_cast<long double>(j) / (n - 1);
        long double num = 0, den = 0;
        for (int i = 0; i < m; ++i) {
            const long double x = m == 1 ? 0.5L : static_cast<long double>(i) / (m - 1);
            const long double k = w[i] * std::exp(-(u - x) * (u - x) / (2.0L * sigma * sigma));
            num += x * k;
            den += k;
        }
        out[j] = static_cast<double>(num / den);
    }
    return out;
}

GuidanceMap random_guidance(std::mt19937_64& rng, int h, int w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GuidanceMap g(h, w, 0.0);
    // sparse blobs on zero background, sometimes fully empty
    const int blobs = static_cast<int>(u(rng) * 4);
    for (int b = 0; b < blobs; ++b) {
        const int r0 = static_cast<int>(u(rng) * h), c0 = static_cast<int>(u(rng) * w);
        const int rh = 1 + static_cast<int>(u(rng) * h / 3), cw = 1 + static_cast<int>(u(rng) * w / 3);
        for (int r = r0; r < std::min(h, r0 + rh); ++r)
            for (int c = c0; c < std::min(w, c0 + cw); ++c) g(r, c) = u(rng) < 0.9 ? 1.0 : u(rng);
    }
    return g;
}

}  // namespace

TEST(Marginals, SumsAndFloor) {
    GuidanceMap g(2, 3, 0.0);
    g(0, 1) = 2.0;
    g(1, 1) = 1.0;
    const auto m = marginalize(g);
    EXPECT_DOUBLE_EQ(m.cols[1], 3.0);
    EXPECT_DOUBLE_EQ(m.rows[0], 2.0);
    EXPECT_DOUBLE_EQ(m.cols[0], 2e-6);  // floor = 1e-6 * max(1, 2)
    GuidanceMap bad(1, 1, -1.0);
    EXPECT_THROW(marginalize(bad), std::invalid_argument);
}

TEST(AxisMapping, MatchesNaiveKernelAverage) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.01, 3.0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> w(40 + trial * 3);
        for (auto& v : w) v = u(rng);
        const double sigma = 11.0 / static_cast<double>(w.size());
        const auto m = build_axis_mapping(w, 25, sigma);
        const auto ref = naive_forward(w, 25, sigma);
        for (int j = 0; j < 25; ++j) EXPECT_NEAR(m.forward()[j], ref[j], 1e-12);
    }
}

TEST(AxisMapping, SymmetricWeightsGiveSymmetricMap) {
    std::vector<double> w(64, 1.0);
    for (int i = 20; i < 44; ++i) w[i] = 5.0;
    const auto m = build_axis_mapping(w, 33, 11.0 / 64);
    for (int j = 0; j < 33; ++j) EXPECT_NEAR(m.forward()[j] + m.forward()[32 - j], 1.0, 1e-12);
    EXPECT_NEAR(m.forward()[16], 0.5, 1e-12);
}

TEST(AxisMapping, SurvivesTinySigma) {
    // without the exponent shift every kernel term would underflow to zero
    std::vector<double> w(500, 1.0);
    const auto m = build_axis_mapping(w, 37, 1e-4);
    for (double v : m.forward()) EXPECT_TRUE(std::isfinite(v));
    EXPECT_TRUE(m.monotone());
}

TEST(AxisMapping, RejectsBadInputs) {
    EXPECT_THROW(build_axis_mapping({1.0, 1.0}, 4, 0.0), std::invalid_argument);
    EXPECT_THROW(build_axis_mapping({1.0, 1.0}, 4, -1.0), std::invalid_argument);
    EXPECT_THROW(build_axis_mapping({1.0, 0.0}, 4, 0.1), std::invalid_argument);
    EXPECT_THROW(build_axis_mapping({1.0, NAN}, 4, 0.1), std::invalid_argument);
    EXPECT_THROW(build_axis_mapping({}, 4, 0.1), std::invalid_argument);
}

TEST(AxisMapping, InversePlateauAndClamping) {
    const AxisMapping m(11, 0.1, {0.2, 0.5, 0.5, 0.8});
    const double u1 = 1.0 / 3.0, u2 = 2.0 / 3.0;
    EXPECT_DOUBLE_EQ(m.inverse_at(0.5), 0.5 * (u1 + u2));
    EXPECT_DOUBLE_EQ(m.inverse_at(0.0), 0.0);  // below the sampled range
    EXPECT_DOUBLE_EQ(m.inverse_at(1.0), 1.0);  // above
    EXPECT_DOUBLE_EQ(m.inverse_at(0.35), 0.5 * u1);
    EXPECT_EQ(m.inverse().size(), 11u);
}

TEST(AxisMapping, PropertiesOnRandomGuidance) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 60; ++trial) {
        const int h = 20 + static_cast<int>(rng() % 80), w = 20 + static_cast<int>(rng() % 80);
        const int th = 8 + static_cast<int>(rng() % 60), tw = 8 + static_cast<int>(rng() % 60);
        const auto z = build_zoom(random_guidance(rng, h, w), th, tw);
        for (const AxisMapping* m : {&z.cols, &z.rows}) {
            ASSERT_TRUE(m->monotone());
            const int n = m->target_size();
            for (int j = 0; j < n; ++j) {
                const double f = m->forward()[j];
                ASSERT_GE(f, 0.0);
                ASSERT_LE(f, 1.0);
                ASSERT_LE(std::abs(m->inverse_at(f) - grid_coord(j, n)), 2.0 / n);
            }
        }
    }
}

TEST(Zoom, BoxGuidanceIsMagnified) {
    GuidanceMap g(100, 100, 0.0);
    for (int r = 40; r < 60; ++r)
        for (int c = 30; c < 50; ++c) g(r, c) = 1.0;
    const auto z = build_zoom(g, 50, 50);
    BinaryMask box(100, 100, 0);
    for (int r = 40; r < 60; ++r)
        for (int c = 30; c < 50; ++c) box(r, c) = 1;
    const auto warped = warp_mask(box, z.cols, z.rows);
    EXPECT_GT(static_cast<double>(count(warped)) / warped.size(), 0.04 * 1.5);
}

TEST(Zoom, EmptyGuidanceIsSymmetricAndPulledInward) {
    const auto z = build_zoom(GuidanceMap(64, 64, 0.0), 33, 33);
    EXPECT_NEAR(z.cols.forward()[16], 0.5, 1e-12);
    EXPECT_GT(z.cols.forward()[0], 0.0);  // truncated kernel at the border
    EXPECT_LT(z.cols.forward()[32], 1.0);
    EXPECT_TRUE(z.cols.monotone());
}

TEST(Zoom, AttractionIntoSalientInterval) {
    // guidance on [a,b]: at least a (b-a) share of the target samples land inside it
    std::vector<double> w(200, 0.0);
    for (int i = 60; i < 100; ++i) w[i] = 1.0;
    for (auto& v : w) v = std::max(v, 1e-6);
    const auto m = build_axis_mapping(w, 80, 11.0 / 200);
    const double a = grid_coord(60, 200), b = grid_coord(99, 200);
    int inside = 0;
    for (double f : m.forward()) inside += (f >= a && f <= b);
    EXPECT_GE(inside / 80.0, b - a);
}

TEST(Zoom, CoverageSpansSampledRange) {
    GuidanceMap g(256, 256, 0.0);
    for (int r = 100; r < 140; ++r)
        for (int c = 100; c < 140; ++c) g(r, c) = 1.0;
    const auto z = build_zoom(g, 128, 128);
    const auto cov = zoom_coverage(z.cols, z.rows);
    const auto rows = source_pixels(z.rows);
    EXPECT_EQ(cov(120, 120), 1);
    EXPECT_EQ(cov(static_cast<int>(std::floor(rows.front())) - 1, 120), 0);
    EXPECT_EQ(cov(static_cast<int>(std::lround(rows.back())), 120), 1);
}

TEST(Warp, ClicksFollowTheMapping) {
    GuidanceMap g(80, 80, 0.0);
    for (int r = 10; r < 30; ++r)
        for (int c = 50; c < 70; ++c) g(r, c) = 1.0;
    const auto z = build_zoom(g, 40, 40);
    const auto moved = warp_clicks({{20, 60, Polarity::positive, 1}}, z.cols, z.rows);
    ASSERT_EQ(moved.size(), 1u);
    const auto src_r = source_pixels(z.rows)[moved[0].row], src_c = source_pixels(z.cols)[moved[0].col];
    EXPECT_NEAR(src_r, 20.0, 1.5);
    EXPECT_NEAR(src_c, 60.0, 1.5);
    EXPECT_EQ(moved[0].polarity, Polarity::positive);
}

TEST(Warp, UnwarpRejectsMismatchAndCorruption) {
    const auto z = build_zoom(GuidanceMap(30, 30, 1.0), 10, 12);
    EXPECT_THROW(unwarp_logits(LogitMap(12, 10, 0.0), z.cols, z.rows, 30, 30), DimensionError);
    const AxisMapping broken(30, 0.1, {0.0, 0.6, 0.4, 0.6, 0.7, 0.8, 0.9, 0.95, 0.97, 0.99, 1.0, 1.0});
    EXPECT_THROW(unwarp_logits(LogitMap(10, 12, 0.0), broken, z.rows, 30, 30), std::invalid_argument);
    EXPECT_THROW(warp_image(RasterImage(31, 30), z.cols, z.rows), DimensionError);
}

TEST(Warp, RoundTripPreservesBlob) {
    BinaryMask blob(256, 256, 0);
    for (int r = 0; r < 256; ++r)
        for (int c = 0; c < 256; ++c) blob(r, c) = (r - 128) * (r - 128) + (c - 120) * (c - 120) <= 40 * 40;
    GuidanceMap g(256, 256, 0.0);
    LogitMap enc(256, 256);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = blob[i];
        enc[i] = blob[i] ? 1.0 : -1.0;
    }
    const auto z = build_zoom(g, 128, 128);
    const auto back = threshold(unwarp_logits(warp_grid(enc, z.cols, z.rows), z.cols, z.rows, 256, 256));
    EXPECT_GE(iou(back, blob), 0.95);
}

TEST(Warp, ConstantInputsStayConstant) {
    GuidanceMap g(50, 40, 0.0);
    g(10, 10) = 1.0;
    const auto z = build_zoom(g, 20, 30);
    RasterImage img(50, 40, 0.25f);
    const auto w = warp_image(img, z.cols, z.rows);
    for (float v : w.g) EXPECT_FLOAT_EQ(v, 0.25f);
    const auto u = unwarp_logits(LogitMap(20, 30, -2.0), z.cols, z.rows, 50, 40);
    for (double v : u) EXPECT_DOUBLE_EQ(v, -2.0);
}

TEST(Warp, UniformGuidanceMatchesBilinearInInterior) {
    const auto z = build_zoom(GuidanceMap(90, 90, 1.0), 90, 90);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1, 1);
    LogitMap o(90, 90);
    // smooth field so that sub-pixel shifts stay small
    for (int r = 0; r < 90; ++r)
        for (int c = 0; c < 90; ++c) o(r, c) = std::sin(r * 0.05) + std::cos(c * 0.04);
    const auto w = warp_grid(o, z.cols, z.rows);
    for (int r = 30; r < 60; ++r)
        for (int c = 30; c < 60; ++c) EXPECT_NEAR(w(r, c), o(r, c), 0.05);
    const auto moved = warp_clicks({{45, 40, Polarity::negative, 3}}, z.cols, z.rows);
    EXPECT_LE(std::abs(moved[0].row - 45), 1);
    EXPECT_LE(std::abs(moved[0].col - 40), 1);
    EXPECT_EQ(moved[0].round, 3);
}

TEST(Fusion, ScheduleValues) {
    const FusionSchedule s(20);
    for (int t = 1; t <= 9; ++t) EXPECT_EQ(s.lambda(t), 0.0) << t;
    EXPECT_EQ(s.lambda(10), 0.5);
    EXPECT_EQ(s.lambda(16), 0.8);
    EXPECT_EQ(s.lambda(20), 1.0);
    // odd budget: 2t < T switches at t = ceil(T/2)
    const FusionSchedule odd(5);
    EXPECT_EQ(odd.lambda(2), 0.0);
    EXPECT_DOUBLE_EQ(odd.lambda(3), 0.6);
    EXPECT_THROW(FusionSchedule(0), std::invalid_argument);
}

TEST(Fusion, BlendIdentities) {
    const FusionSchedule s(20);
    LogitMap a(2, 2, 1.0), b(2, 2, -3.0);
    EXPECT_EQ(fuse(a, b, 3, s), a);
    EXPECT_EQ(fuse(a, b, 20, s), b);
    EXPECT_DOUBLE_EQ(fuse(a, b, 16, s)[0], 0.2 * 1.0 + 0.8 * -3.0);
    EXPECT_EQ(fuse(a, a, 12, s), a);
    EXPECT_THROW(fuse(a, b, 0, s), std::out_of_range);
    EXPECT_THROW(fuse(a, b, 21, s), std::out_of_range);
    EXPECT_THROW(fuse(a, LogitMap(2, 3), 12, s), DimensionError);
}
