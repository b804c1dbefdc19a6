#include <gtest/gtest.h>

#include "zoomseg/pipeline.hpp"
#include "zoomseg/scenes.hpp"

using namespace zoomseg;

namespace {

Scene scene_of(std::uint64_t seed, int size = 96) {
    SceneConfig cfg;
    cfg.height = cfg.width = size;
    return generate_scene(seed, cfg);
}

PipelineConfig small_config(int ws = 48) {
    PipelineConfig cfg;
    cfg.working_size = ws;
    return cfg;
}

// Plays `rounds` simulated clicks against gt, returning every intermediate state.
std::vector<SessionState> play(const Scene& s, const Segmenter& seg, int budget, int rounds, const PipelineConfig& cfg) {
    std::vector<SessionState> out;
    auto state = start_session(s.image, s.gt, budget);
    for (int k = 0; k < rounds; ++k) {
        auto click = next_click(state.current_mask, s.gt, state.round + 1);
        if (!click) click = Click{s.gt.height() / 2, s.gt.width() / 2, Polarity::positive, state.round + 1};
        state = step(std::move(state), *click, seg, cfg);
        out.push_back(state);
    }
    return out;
}

}  // namespace

TEST(Guidance, EmptyMaskOnePositiveDisc) {
    const auto discs = render_discs({{5, 5, Polarity::positive, 1}}, 12, 12, 2);
    const auto g = build_guidance(BinaryMask(12, 12, 0), discs);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g[i], discs.positive[i] ? 1.0 : 0.0);
}

TEST(Guidance, MaskCoveringDiscsIsTheMask) {
    BinaryMask m(12, 12, 0);
    for (int r = 2; r < 10; ++r)
        for (int c = 2; c < 10; ++c) m(r, c) = 1;
    const auto discs = render_discs({{5, 5, Polarity::positive, 1}, {6, 7, Polarity::negative, 2}}, 12, 12, 2);
    const auto g = build_guidance(m, discs);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g[i], static_cast<double>(m[i]));
}

TEST(Guidance, NegativeDiscsAlsoAttract) {
    BinaryMask m(12, 12, 0);
    m(1, 1) = 1;
    const auto discs = render_discs({{9, 9, Polarity::negative, 1}}, 12, 12, 1);
    const auto g = build_guidance(m, discs);
    EXPECT_EQ(g(1, 1), 1.0);
    EXPECT_EQ(g(9, 9), 1.0);
    EXPECT_EQ(g(8, 9), 1.0);
    EXPECT_EQ(g(5, 5), 0.0);
    EXPECT_THROW(build_guidance(BinaryMask(11, 12, 0), discs), DimensionError);
}

TEST(ScaleClicks, MapsCornersToCorners) {
    const ClickList in{{0, 0, Polarity::positive, 1}, {99, 49, Polarity::negative, 2}, {50, 25, Polarity::positive, 3}};
    const auto out = scale_clicks(in, 100, 50, 10, 10);
    EXPECT_EQ(out[0].row, 0);
    EXPECT_EQ(out[1].row, 9);
    EXPECT_EQ(out[1].col, 9);
    EXPECT_EQ(out[2].row, 5);
    EXPECT_EQ(out[1].polarity, Polarity::negative);
}

TEST(Step, EarlyRoundsMatchSinglePassBitForBit) {
    const auto s = scene_of(3);
    const GeodesicSegmenter seg;
    auto plain = small_config();
    plain.use_taiz = false;
    const auto a = play(s, seg, 20, 12, small_config());
    const auto b = play(s, seg, 20, 12, plain);
    for (int t = 1; t <= 12; ++t) {
        const auto& x = a[t - 1];
        const auto& y = b[t - 1];
        if (t < 10) {
            EXPECT_EQ(x.current_logit, y.current_logit) << "round " << t;
            EXPECT_EQ(x.lambdas.back(), 0.0);
        } else {
            EXPECT_GT(x.lambdas.back(), 0.0) << "round " << t;
        }
        EXPECT_EQ(y.lambdas.back(), 0.0);
    }
}

TEST(Step, ZoomBranchOnlyRunsInTheSecondHalf) {
    const auto s = scene_of(4);
    const auto states = play(s, GeodesicSegmenter(), 10, 10, small_config());
    for (int t = 1; t <= 10; ++t) {
        const auto& st = states[t - 1];
        const int expected = std::max(0, t - 4);  // lambda > 0 from round 5 of 10
        EXPECT_EQ(st.zoom_mappings_built, expected) << "round " << t;
        EXPECT_EQ(st.last_zoom.has_value(), t >= 5);
        if (st.last_zoom) {
            EXPECT_EQ(st.last_zoom->rows.target_size(), 48);
            EXPECT_EQ(st.last_zoom->cols.target_size(), 48);
        }
        EXPECT_EQ(st.current_logit.height(), 96);
        EXPECT_EQ(st.current_logit.width(), 96);
    }
}

TEST(Step, MaskIsTheThresholdedLogitAndCountsAgree) {
    const auto s = scene_of(5);
    for (const auto& st : play(s, GeodesicSegmenter(), 8, 8, small_config())) {
        EXPECT_EQ(st.current_mask, threshold(st.current_logit));
        EXPECT_EQ(st.clicks.size(), static_cast<std::size_t>(st.round));
        EXPECT_EQ(st.timings.size(), static_cast<std::size_t>(st.round));
        EXPECT_EQ(st.lambdas.size(), static_cast<std::size_t>(st.round));
        EXPECT_EQ(st.clicks.back().round, st.round);
    }
}

TEST(Step, OracleReachesHighIouAfterOneRound) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto s = scene_of(seed, 128);
        const OracleSegmenter oracle(s.gt, seed);
        const auto states = play(s, oracle, 20, 1, small_config(64));
        EXPECT_GE(iou(states[0].current_mask, s.gt), 0.95) << seed;
    }
}

TEST(Step, RejectsExhaustedBudgetAndOutOfBoundsClicks) {
    const auto s = scene_of(6, 32);
    auto state = start_session(s.image, s.gt, 1);
    const EmptySegmenter seg;
    EXPECT_THROW(step(state, Click{32, 0, Polarity::positive, 1}, seg, small_config(16)), std::out_of_range);
    EXPECT_THROW(step(state, Click{0, -1, Polarity::positive, 1}, seg, small_config(16)), std::out_of_range);
    state = step(std::move(state), Click{3, 3, Polarity::positive, 1}, seg, small_config(16));
    EXPECT_THROW(step(state, Click{3, 3, Polarity::positive, 2}, seg, small_config(16)), BudgetExhausted);
}

TEST(StartSession, ValidatesArguments) {
    EXPECT_THROW(start_session(RasterImage(4, 4), std::nullopt, 0), std::invalid_argument);
    EXPECT_THROW(start_session(RasterImage(4, 4), BinaryMask(4, 5, 0), 3), DimensionError);
    const auto st = start_session(RasterImage(4, 4), std::nullopt, 3);
    EXPECT_EQ(count(st.current_mask), 0u);
    EXPECT_EQ(st.round, 0);
}

TEST(RunSession, OracleMeetsBothThresholdsAtRoundOne) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        const auto s = scene_of(seed, 128);
        const auto trace = run_session(s.image, s.gt, OracleSegmenter(s.gt, seed), 20, {0.85, 0.9}, small_config(64));
        ASSERT_EQ(trace.rounds.size(), 1u);
        EXPECT_EQ(trace.reached_at[0], 1);
        EXPECT_EQ(trace.reached_at[1], 1);
    }
}

TEST(RunSession, EmptySegmenterUsesTheWholeBudget) {
    const auto s = scene_of(7, 48);
    const auto trace = run_session(s.image, s.gt, EmptySegmenter(), 6, {0.85, 0.9}, small_config(24));
    EXPECT_EQ(trace.rounds.size(), 6u);
    EXPECT_FALSE(trace.reached_at[0]);
    EXPECT_FALSE(trace.reached_at[1]);
    for (std::size_t k = 0; k < trace.rounds.size(); ++k) {
        EXPECT_EQ(trace.rounds[k].round, static_cast<int>(k) + 1);
        EXPECT_EQ(trace.rounds[k].iou, 0.0);
    }
}

TEST(RunSession, NoThresholdsRunsToBudget) {
    const auto s = scene_of(8, 48);
    const auto trace = run_session(s.image, s.gt, OracleSegmenter(s.gt, 1, 0.2), 4, {}, small_config(24));
    EXPECT_EQ(trace.rounds.size(), 4u);
}

TEST(RunSession, DeterministicApartFromTiming) {
    const auto s = scene_of(9, 64);
    const GeodesicSegmenter seg;
    const auto a = run_session(s.image, s.gt, seg, 8, {0.99}, small_config(32), "x");
    const auto b = run_session(s.image, s.gt, seg, 8, {0.99}, small_config(32), "x");
    ASSERT_EQ(a.rounds.size(), b.rounds.size());
    EXPECT_EQ(a.reached_at, b.reached_at);
    for (std::size_t k = 0; k < a.rounds.size(); ++k) {
        EXPECT_EQ(a.rounds[k].click, b.rounds[k].click);
        EXPECT_EQ(a.rounds[k].iou, b.rounds[k].iou);
        EXPECT_EQ(a.rounds[k].biou, b.rounds[k].biou);
        EXPECT_EQ(a.rounds[k].lambda, b.rounds[k].lambda);
        EXPECT_GE(a.rounds[k].seconds, 0.0);
    }
}

TEST(RunSession, EmptyGroundTruthRejected) {
    EXPECT_THROW(run_session(RasterImage(8, 8), BinaryMask(8, 8, 0), EmptySegmenter(), 3, {0.9}), std::invalid_argument);
}
