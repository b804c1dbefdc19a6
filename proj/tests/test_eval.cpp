#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "zoomseg/eval.hpp"

using namespace zoomseg;
namespace fs = std::filesystem;

namespace {

SessionTrace trace_of(std::vector<double> ious, std::vector<double> seconds = {}) {
    SessionTrace t;
    for (std::size_t k = 0; k < ious.size(); ++k) {
        RoundTrace r;
        r.round = static_cast<int>(k) + 1;
        r.iou = ious[k];
        r.biou = ious[k] / 2;
        r.seconds = k < seconds.size() ? seconds[k] : 0.0;
        r.click = Click{static_cast<int>(k), 2, k % 2 ? Polarity::negative : Polarity::positive, r.round};
        t.rounds.push_back(r);
    }
    return t;
}

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() / ("zoomseg_eval_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }
    std::string str() const { return path_.string(); }

private:
    fs::path path_;
};

std::vector<Scene> small_scenes(int n, int size = 64) {
    SceneConfig cfg;
    cfg.height = cfg.width = size;
    std::vector<Scene> out;
    for (int k = 0; k < n; ++k) {
        auto s = generate_scene(static_cast<std::uint64_t>(k + 1), cfg);
        s.id = "scene" + std::to_string(k);
        out.push_back(std::move(s));
    }
    return out;
}

EvalConfig small_eval(const std::string& seg) {
    EvalConfig cfg;
    cfg.segmenter = seg;
    cfg.pipeline.working_size = 64;
    cfg.seed = 17;
    return cfg;
}

}  // namespace

TEST(Noc, Examples) {
    EXPECT_EQ(noc(trace_of({0.7, 0.86, 0.92}), 0.9, 20), 3);
    EXPECT_EQ(noc(trace_of({0.95}), 0.9, 20), 1);
    EXPECT_EQ(noc(trace_of(std::vector<double>(20, 0.5)), 0.9, 20), 20);
    EXPECT_EQ(noc(trace_of({}), 0.9, 20), 20);
}

TEST(Noc, MonotoneInThreshold) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> ious(10);
        for (auto& v : ious) v = u(rng);
        const auto t = trace_of(ious);
        for (double a = 0.1; a < 1.0; a += 0.1) EXPECT_LE(noc(t, a, 10), noc(t, a + 0.05, 10));
    }
}

TEST(Nof, Examples) {
    const std::vector<SessionTrace> ok{trace_of({0.95}), trace_of({0.5, 0.91})};
    EXPECT_EQ(nof(ok, 0.9, 20), 0);
    auto mixed = ok;
    mixed.push_back(trace_of({0.3, 0.6}));
    EXPECT_EQ(nof(mixed, 0.9, 20), 1);
}

TEST(Nof, AgreesWithNocAndFinalIou) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.5, 1.0);
    std::vector<SessionTrace> traces;
    for (int k = 0; k < 40; ++k) {
        std::vector<double> ious(1 + k % 6);
        for (auto& v : ious) v = u(rng);
        traces.push_back(trace_of(ious));
    }
    for (double thr : {0.8, 0.9, 0.95}) {
        const int budget = 6;
        int expected = 0;
        for (const auto& t : traces) {
            if (noc(t, thr, budget) == budget && t.final_iou() < thr) ++expected;
        }
        EXPECT_EQ(nof(traces, thr, budget), expected) << thr;
    }
}

TEST(IouAt, Examples) {
    EXPECT_DOUBLE_EQ(iou_at({trace_of({0.3, 0.6, 0.7})}, 2), 0.6);
    EXPECT_DOUBLE_EQ(iou_at({trace_of({1.0}), trace_of({0.2, 1.0})}, 2), 1.0);
    EXPECT_DOUBLE_EQ(iou_at({trace_of({0, 0, 0, 0, 0.8}), trace_of({0, 0, 0, 0, 0.9})}, 5), 0.85);
    EXPECT_DOUBLE_EQ(biou_at({trace_of({0.3, 0.6, 0.7})}, 3), 0.35);
}

TEST(IouAt, ShortSessionsCarryTheirFinalValue) {
    EXPECT_DOUBLE_EQ(iou_at({trace_of({0.4, 0.93})}, 5), 0.93);
    EXPECT_DOUBLE_EQ(iou_at({trace_of({})}, 5), 0.0);
    EXPECT_DOUBLE_EQ(iou_at({}, 5), 0.0);
}

TEST(Spc, Examples) {
    EXPECT_DOUBLE_EQ(spc({trace_of({0.1, 0.2, 0.3}, {0.05, 0.05, 0.05})}), 0.05);
    EXPECT_DOUBLE_EQ(spc({trace_of({0.1}, {0.02}), trace_of({0.1}, {0.04})}), 0.03);
    EXPECT_THROW(spc({}), std::invalid_argument);
    EXPECT_THROW(spc({trace_of({})}), std::invalid_argument);
}

TEST(MetricKey, Format) {
    EXPECT_EQ(metric_key("noc", 0.85), "noc@85");
    EXPECT_EQ(metric_key("nof", 0.9), "nof@90");
}

TEST(Aggregates, PermutationInvariant) {
    std::vector<SessionTrace> traces{trace_of({0.5, 0.88, 0.93}, {0.1, 0.2, 0.3}), trace_of({0.95}, {0.4}),
                                     trace_of({0.2, 0.3}, {0.5, 0.6})};
    EvalConfig cfg;
    cfg.budget = 3;
    const auto a = compute_aggregates(traces, cfg);
    std::reverse(traces.begin(), traces.end());
    const auto b = compute_aggregates(traces, cfg);
    ASSERT_EQ(a.size(), b.size());
    for (const auto& [k, v] : a) EXPECT_NEAR(v, b.at(k), 1e-12) << k;
    EXPECT_EQ(a.count("noc@85"), 1u);
    EXPECT_EQ(a.count("nof@90"), 1u);
    EXPECT_EQ(a.count("iou@5"), 1u);
    EXPECT_EQ(a.count("biou@5"), 1u);
    EXPECT_EQ(a.count("spc"), 1u);
}

TEST(TraceJson, RoundTrips) {
    auto t = trace_of({0.4, 0.91}, {0.01, 0.02});
    t.image_id = "img/0";
    t.budget = 20;
    t.thresholds = {0.85, 0.9};
    t.reached_at = {2, std::nullopt};
    const auto j = to_json(t);
    EXPECT_TRUE(j["thresholds_met"][1]["round"].is_null());
    EXPECT_EQ(j["rounds"][1]["click"]["polarity"], "negative");
    const auto back = trace_from_json(j);
    EXPECT_EQ(back.image_id, t.image_id);
    EXPECT_EQ(back.reached_at, t.reached_at);
    ASSERT_EQ(back.rounds.size(), 2u);
    EXPECT_EQ(back.rounds[1].click, t.rounds[1].click);
    EXPECT_EQ(back.rounds[1].iou, 0.91);
    EXPECT_EQ(to_json(back), j);
}

TEST(TraceJson, BadPolarityRejected) {
    EXPECT_THROW(click_from_json(json{{"row", 1}, {"col", 2}, {"polarity", "up"}}, 1), std::invalid_argument);
}

TEST(Segmenters, SelectionBySpec) {
    const BinaryMask gt(4, 4, 1);
    EXPECT_EQ(make_segmenter("geodesic", nullptr, 0)->name(), "geodesic");
    EXPECT_EQ(make_segmenter("empty", nullptr, 0)->name(), "empty");
    EXPECT_EQ(make_segmenter("oracle", &gt, 0)->name(), "oracle");
    EXPECT_EQ(make_segmenter("toy", nullptr, 0)->name(), "toy");
    EXPECT_THROW(make_segmenter("oracle", nullptr, 0), std::invalid_argument);
    EXPECT_THROW(make_segmenter("magic", nullptr, 0), std::invalid_argument);
    EXPECT_TRUE(valid_segmenter_spec("toy:/x.json"));
    EXPECT_FALSE(valid_segmenter_spec("Geodesic"));
}

TEST(Segmenters, ToyParamsFile) {
    TempDir dir;
    const auto good = (dir.path() / "p.json").string(), bare = (dir.path() / "b.json").string(), bad = (dir.path() / "x.json").string();
    ToyModelParams p;
    for (std::size_t k = 0; k < p.values.size(); ++k) p.values[k] = 0.5 * static_cast<double>(k) - 1.0;
    std::ofstream(good) << toy_params_json(p).dump();
    std::ofstream(bare) << json(p.values).dump();
    std::ofstream(bad) << "[1, 2, 3]";
    EXPECT_EQ(load_toy_params(good), p);
    EXPECT_EQ(load_toy_params(bare), p);
    EXPECT_THROW(load_toy_params(bad), io::ImageIoError);
    EXPECT_THROW(load_toy_params((dir.path() / "missing.json").string()), io::ImageIoError);
    const auto seg = make_segmenter("toy:" + good, nullptr, 0);
    EXPECT_EQ(dynamic_cast<const ToySegmenter&>(*seg).params(), p);
}

TEST(Dataset, WriteThenLoadWithIndex) {
    TempDir dir;
    const auto scenes = small_scenes(3, 24);
    write_dataset(dir.str(), scenes);
    const auto idx = load_dataset(dir.str());
    ASSERT_EQ(idx.entries.size(), 3u);
    EXPECT_EQ(idx.entries[1].id(), "scene1/0");
    EXPECT_EQ(io::load_mask(idx.entries[2].mask_path), scenes[2].gt);
}

TEST(Dataset, DirectoryLayoutWithoutIndex) {
    TempDir dir;
    const auto scenes = small_scenes(2, 20);
    write_dataset(dir.str(), scenes);
    fs::remove(dir.path() / "index.tsv");
    // A second instance for the first image and an image without masks.
    io::save_mask((dir.path() / "masks" / "scene0" / "1.png").string(), scenes[1].gt);
    io::save_image((dir.path() / "images" / "lonely.png").string(), scenes[0].image);
    const auto idx = load_dataset(dir.str());
    ASSERT_EQ(idx.entries.size(), 3u);
    EXPECT_EQ(idx.entries[0].id(), "scene0/0");
    EXPECT_EQ(idx.entries[1].id(), "scene0/1");
    EXPECT_EQ(idx.entries[2].id(), "scene1/0");
}

TEST(Dataset, MissingRootFails) {
    EXPECT_THROW(load_dataset("/nonexistent/zoomseg"), io::ImageIoError);
    TempDir dir;
    EXPECT_THROW(load_dataset(dir.str()), io::ImageIoError);
}

TEST(Evaluate, OracleNeedsOneClick) {
    TempDir dir;
    write_dataset(dir.str(), small_scenes(6, 96));
    auto cfg = small_eval("oracle");
    cfg.threads = 2;
    const auto report = evaluate(load_dataset(dir.str()), cfg);
    ASSERT_EQ(report.traces.size(), 6u);
    EXPECT_TRUE(report.errors.empty());
    EXPECT_EQ(report.aggregates.at("noc@85"), 1.0);
    EXPECT_EQ(report.aggregates.at("noc@90"), 1.0);
    EXPECT_EQ(report.aggregates.at("nof@90"), 0.0);
}

TEST(Evaluate, EmptySegmenterHitsTheCap) {
    TempDir dir;
    write_dataset(dir.str(), small_scenes(3, 48));
    auto cfg = small_eval("empty");
    cfg.budget = 6;
    cfg.pipeline.working_size = 24;
    const auto report = evaluate(load_dataset(dir.str()), cfg);
    EXPECT_EQ(report.aggregates.at("noc@85"), 6.0);
    EXPECT_EQ(report.aggregates.at("noc@90"), 6.0);
    EXPECT_EQ(report.aggregates.at("nof@90"), 3.0);
    EXPECT_EQ(report.aggregates.at("iou@5"), 0.0);
}

TEST(Evaluate, AggregatesRecomputableFromJson) {
    TempDir dir;
    write_dataset(dir.str(), small_scenes(3, 64));
    auto cfg = small_eval("geodesic");
    cfg.budget = 6;
    cfg.pipeline.working_size = 32;
    const auto j = to_json(evaluate(load_dataset(dir.str()), cfg));
    std::vector<SessionTrace> traces;
    for (const auto& t : j.at("traces")) traces.push_back(trace_from_json(t));
    const auto again = compute_aggregates(traces, cfg);
    for (const auto& [k, v] : again) EXPECT_DOUBLE_EQ(j.at("aggregates").at(k).get<double>(), v) << k;
    EXPECT_EQ(j.at("config").at("working_size"), 32);
    EXPECT_TRUE(j.at("host").contains("hardware_threads"));
}

TEST(Evaluate, BitReproducibleApartFromTiming) {
    TempDir dir;
    write_dataset(dir.str(), small_scenes(4, 64));
    auto cfg = small_eval("oracle");
    cfg.budget = 5;
    cfg.pipeline.working_size = 32;
    const auto idx = load_dataset(dir.str());
    const auto a = strip_timing(to_json(evaluate(idx, cfg)));
    cfg.threads = 3;
    const auto b = strip_timing(to_json(evaluate(idx, cfg)));
    auto ca = a, cb = b;
    ca.erase("config");
    cb.erase("config");
    EXPECT_EQ(ca, cb);
    EXPECT_FALSE(a["aggregates"].contains("spc"));
}

TEST(Evaluate, PerEntryErrorsAreReported) {
    TempDir dir;
    write_dataset(dir.str(), small_scenes(2, 32));
    std::ofstream(dir.path() / "index.tsv", std::ios::app) << "images/missing.png\tmasks/missing/0.png\t0\n";
    auto cfg = small_eval("oracle");
    cfg.pipeline.working_size = 32;
    const auto report = evaluate(load_dataset(dir.str()), cfg);
    EXPECT_EQ(report.traces.size(), 2u);
    ASSERT_EQ(report.errors.size(), 1u);
    EXPECT_EQ(report.errors[0].entry, "missing/0");
}

TEST(Evaluate, RejectsEmptyDatasetAndUnknownSegmenter) {
    EXPECT_THROW(evaluate(DatasetIndex{}, {}), std::invalid_argument);
    DatasetIndex idx{"x", {{"a.png", "b.png", "0"}}};
    EXPECT_THROW(evaluate(idx, small_eval("magic")), std::invalid_argument);
}
