#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "json.hpp"
#include "zoomseg/core.hpp"
#include "zoomseg/io.hpp"
#include "zoomseg/pipeline.hpp"
#include "zoomseg/scenes.hpp"
#include "zoomseg/segmenter.hpp"

namespace zoomseg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Metrics over session traces

/// First round whose IoU reaches `threshold`; `budget` if it never does.
inline int noc(const SessionTrace& trace, double threshold, int budget) {
    for (const auto& r : trace.rounds)
        if (r.iou >= threshold) return r.round;
    return budget;
}

/// Number of sessions that never reach `threshold` within the budget.
inline int nof(const std::vector<SessionTrace>& traces, double threshold, int budget) {
    int failures = 0;
    for (const auto& t : traces) {
        const bool reached = std::any_of(t.rounds.begin(), t.rounds.end(),
                                         [&](const RoundTrace& r) { return r.round <= budget && r.iou >= threshold; });
        failures += reached ? 0 : 1;
    }
    return failures;
}

namespace detail {

// Value at round n, carrying the last recorded value forward for shorter sessions.
template <typename Field>
double value_at(const SessionTrace& t, int n, Field field) {
    if (t.rounds.empty()) return 0.0;
    const RoundTrace* best = &t.rounds.front();
    for (const auto& r : t.rounds) {
        if (r.round > n) break;
        best = &r;
    }
    if (best->round > n) return 0.0;  // no click yet at round n
    return field(*best);
}

}  // namespace detail

inline double iou_at(const std::vector<SessionTrace>& traces, int n) {
    if (traces.empty()) return 0.0;
    double s = 0.0;
    for (const auto& t : traces) s += detail::value_at(t, n, [](const RoundTrace& r) { return r.iou; });
    return s / static_cast<double>(traces.size());
}

inline double biou_at(const std::vector<SessionTrace>& traces, int n) {
    if (traces.empty()) return 0.0;
    double s = 0.0;
    for (const auto& t : traces) s += detail::value_at(t, n, [](const RoundTrace& r) { return r.biou; });
    return s / static_cast<double>(traces.size());
}

inline double mean_noc(const std::vector<SessionTrace>& traces, double threshold, int budget) {
    if (traces.empty()) return 0.0;
    double s = 0.0;
    for (const auto& t : traces) s += noc(t, threshold, budget);
    return s / static_cast<double>(traces.size());
}

/// Seconds per click: grand mean over every recorded round.
inline double spc(const std::vector<SessionTrace>& traces) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& t : traces) {
        for (const auto& r : t.rounds) {
            s += r.seconds;
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("spc: no recorded rounds");
    return s / static_cast<double>(n);
}

/// "noc@85" style key for a threshold.
inline std::string metric_key(const std::string& prefix, double threshold) {
    return prefix + "@" + std::to_string(static_cast<int>(std::lround(threshold * 100.0)));
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const Click& c) {
    return {{"row", c.row}, {"col", c.col}, {"polarity", to_string(c.polarity)}};
}

inline Click click_from_json(const json& j, int round) {
    Click c;
    c.row = j.at("row").get<int>();
    c.col = j.at("col").get<int>();
    const auto pol = j.at("polarity").get<std::string>();
    if (pol != "positive" && pol != "negative") throw std::invalid_argument("polarity must be positive or negative");
    c.polarity = pol == "positive" ? Polarity::positive : Polarity::negative;
    c.round = round;
    return c;
}

inline json to_json(const SessionTrace& t) {
    json rounds = json::array();
    for (const auto& r : t.rounds) {
        rounds.push_back({{"round", r.round}, {"iou", r.iou}, {"biou", r.biou}, {"seconds", r.seconds},
                          {"lambda", r.lambda}, {"click", to_json(r.click)}});
    }
    json met = json::array();
    for (std::size_t k = 0; k < t.thresholds.size(); ++k) {
        met.push_back({{"threshold", t.thresholds[k]},
                       {"round", t.reached_at[k] ? json(*t.reached_at[k]) : json(nullptr)}});
    }
    return {{"image_id", t.image_id}, {"budget", t.budget}, {"thresholds_met", met}, {"rounds", rounds}};
}

inline SessionTrace trace_from_json(const json& j) {
    SessionTrace t;
    t.image_id = j.at("image_id").get<std::string>();
    t.budget = j.at("budget").get<int>();
    for (const auto& m : j.at("thresholds_met")) {
        t.thresholds.push_back(m.at("threshold").get<double>());
        t.reached_at.push_back(m.at("round").is_null() ? std::nullopt : std::optional<int>(m.at("round").get<int>()));
    }
    for (const auto& r : j.at("rounds")) {
        RoundTrace rt;
        rt.round = r.at("round").get<int>();
        rt.iou = r.at("iou").get<double>();
        rt.biou = r.at("biou").get<double>();
        rt.seconds = r.at("seconds").get<double>();
        rt.lambda = r.at("lambda").get<double>();
        rt.click = click_from_json(r.at("click"), rt.round);
        t.rounds.push_back(rt);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Segmenter selection

inline ToyModelParams load_toy_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io::ImageIoError("cannot open toy params " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw io::ImageIoError("toy params: " + std::string(e.what()));
    }
    const json& list = j.is_object() ? j.at("params") : j;
    if (!list.is_array() || list.size() != kToyFeatures + 1) throw io::ImageIoError("toy params: expected a list of 9 numbers");
    ToyModelParams p;
    for (std::size_t k = 0; k < p.values.size(); ++k) p.values[k] = list[k].get<double>();
    return p;
}

inline json toy_params_json(const ToyModelParams& p) { return {{"params", p.values}}; }

/// Builds the segmenter for one instance from `oracle` | `geodesic` | `empty` | `toy:<params.json>`.
/// The oracle needs the instance's ground truth.
inline std::unique_ptr<Segmenter> make_segmenter(const std::string& spec, const BinaryMask* gt, std::uint64_t seed) {
    if (spec == "geodesic") return std::make_unique<GeodesicSegmenter>();
    if (spec == "empty") return std::make_unique<EmptySegmenter>();
    if (spec == "oracle") {
        if (!gt) throw std::invalid_argument("the oracle segmenter needs a ground-truth mask");
        return std::make_unique<OracleSegmenter>(*gt, seed);
    }
    if (spec.rfind("toy:", 0) == 0) return std::make_unique<ToySegmenter>(load_toy_params(spec.substr(4)));
    if (spec == "toy") return std::make_unique<ToySegmenter>(default_toy_params());
    throw std::invalid_argument("unknown segmenter '" + spec + "'");
}

inline bool valid_segmenter_spec(const std::string& spec) {
    return spec == "geodesic" || spec == "empty" || spec == "oracle" || spec == "toy" || spec.rfind("toy:", 0) == 0;
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetEntry {
    std::string image_path;
    std::string mask_path;
    std::string instance_id;

    std::string id() const { return fs::path(image_path).stem().string() + "/" + instance_id; }
};

struct DatasetIndex {
    std::string root;
    std::vector<DatasetEntry> entries;
};

/// Layout: `images/<stem>.{png,ppm}` and `masks/<stem>/<instance>.png`, or an `index.tsv`
/// of `image<TAB>mask<TAB>instance` lines relative to the root.
inline DatasetIndex load_dataset(const std::string& root) {
    DatasetIndex idx{root, {}};
    const fs::path base(root);
    if (!fs::is_directory(base)) throw io::ImageIoError("dataset root is not a directory: " + root);
    const auto tsv = base / "index.tsv";
    if (fs::exists(tsv)) {
        std::ifstream in(tsv);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ls(line);
            std::string img, mask, inst;
            if (!std::getline(ls, img, '\t') || !std::getline(ls, mask, '\t')) throw io::ImageIoError("index.tsv: malformed line: " + line);
            if (!std::getline(ls, inst, '\t')) inst = fs::path(mask).stem().string();
            idx.entries.push_back({(base / img).string(), (base / mask).string(), inst});
        }
        return idx;
    }
    const auto images = base / "images";
    if (!fs::is_directory(images)) throw io::ImageIoError("dataset has neither index.tsv nor images/: " + root);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".png" || ext == ".ppm" || ext == ".pgm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        const auto mdir = base / "masks" / f.stem();
        if (!fs::is_directory(mdir)) continue;
        std::vector<fs::path> masks;
        for (const auto& m : fs::directory_iterator(mdir))
            if (m.is_regular_file() && m.path().extension() == ".png") masks.push_back(m.path());
        std::sort(masks.begin(), masks.end());
        for (const auto& m : masks) idx.entries.push_back({f.string(), m.string(), m.stem().string()});
    }
    return idx;
}

inline void write_dataset(const std::string& root, const std::vector<Scene>& scenes) {
    const fs::path base(root);
    fs::create_directories(base / "images");
    std::ofstream tsv(base / "index.tsv");
    if (!tsv) throw io::ImageIoError("cannot write " + (base / "index.tsv").string());
    for (const auto& s : scenes) {
        fs::create_directories(base / "masks" / s.id);
        const auto img = fs::path("images") / (s.id + ".png");
        const auto mask = fs::path("masks") / s.id / "0.png";
        io::save_image((base / img).string(), s.image);
        io::save_mask((base / mask).string(), s.gt);
        tsv << img.string() << '\t' << mask.string() << "\t0\n";
    }
}

// ---------------------------------------------------------------------------
// Harness

struct EvalConfig {
    std::string segmenter = "geodesic";
    int budget = 20;
    std::vector<double> thresholds{0.85, 0.9};
    int iou_round = 5;  // N for IoU@N / BIoU@N
    std::uint64_t seed = 0;
    int threads = 1;
    PipelineConfig pipeline;
};

struct EvalError {
    std::string entry;
    std::string message;
};

struct EvalReport {
    EvalConfig config;
    std::vector<SessionTrace> traces;
    std::vector<EvalError> errors;
    std::map<std::string, double> aggregates;
};

inline std::map<std::string, double> compute_aggregates(const std::vector<SessionTrace>& traces, const EvalConfig& cfg) {
    std::map<std::string, double> a;
    for (double thr : cfg.thresholds) {
        a[metric_key("noc", thr)] = mean_noc(traces, thr, cfg.budget);
        a[metric_key("nof", thr)] = nof(traces, thr, cfg.budget);
    }
    a["iou@" + std::to_string(cfg.iou_round)] = iou_at(traces, cfg.iou_round);
    a["biou@" + std::to_string(cfg.iou_round)] = biou_at(traces, cfg.iou_round);
    bool any_round = false;
    for (const auto& t : traces) any_round = any_round || !t.rounds.empty();
    a["spc"] = any_round ? spc(traces) : 0.0;
    return a;
}

/// Per-instance seed derived from the run seed and the instance position.
inline std::uint64_t instance_seed(std::uint64_t seed, std::size_t i) { return detail::splitmix64(seed + 0x9e37ULL * (i + 1)); }

inline EvalReport evaluate(const DatasetIndex& index, const EvalConfig& cfg) {
    if (index.entries.empty()) throw std::invalid_argument("evaluate: empty dataset");
    if (!valid_segmenter_spec(cfg.segmenter)) throw std::invalid_argument("unknown segmenter '" + cfg.segmenter + "'");
    const std::size_t n = index.entries.size();
    std::vector<std::optional<SessionTrace>> slots(n);
    std::vector<std::optional<std::string>> failures(n);
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            const auto& e = index.entries[i];
            try {
                const auto image = io::load_image(e.image_path);
                const auto gt = io::load_mask(e.mask_path);
                require_same_shape(image.r, gt, "dataset entry");
                if (count(gt) == 0) throw std::invalid_argument("empty ground-truth mask");
                const auto seg = make_segmenter(cfg.segmenter, &gt, instance_seed(cfg.seed, i));
                slots[i] = run_session(image, gt, *seg, cfg.budget, cfg.thresholds, cfg.pipeline, e.id());
            } catch (const std::exception& ex) {
                failures[i] = ex.what();
            }
        }
    };
    const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(n)));
    std::vector<std::thread> pool;
    for (int k = 1; k < threads; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    EvalReport report;
    report.config = cfg;
    for (std::size_t i = 0; i < n; ++i) {
        if (slots[i]) report.traces.push_back(std::move(*slots[i]));
        if (failures[i]) report.errors.push_back({index.entries[i].id(), *failures[i]});
    }
    report.aggregates = compute_aggregates(report.traces, cfg);
    return report;
}

inline json host_descriptor() {
    char name[256] = {0};
    if (gethostname(name, sizeof(name) - 1) != 0) name[0] = '\0';
    return {{"hostname", std::string(name)}, {"hardware_threads", std::thread::hardware_concurrency()}};
}

inline json to_json(const EvalReport& r) {
    json traces = json::array();
    for (const auto& t : r.traces) traces.push_back(to_json(t));
    json errors = json::array();
    for (const auto& e : r.errors) errors.push_back({{"entry", e.entry}, {"message", e.message}});
    return {{"config",
             {{"segmenter", r.config.segmenter},
              {"budget", r.config.budget},
              {"working_size", r.config.pipeline.working_size},
              {"thresholds", r.config.thresholds},
              {"iou_round", r.config.iou_round},
              {"seed", r.config.seed},
              {"taiz", r.config.pipeline.use_taiz},
              {"refine", r.config.pipeline.refine},
              {"sigma_px", r.config.pipeline.sigma_px}}},
            {"host", host_descriptor()},
            {"aggregates", r.aggregates},
            {"traces", traces},
            {"errors", errors}};
}

/// Removes wall-clock fields so two reports can be compared for reproducibility.
inline json strip_timing(json report) {
    if (report.contains("aggregates")) report["aggregates"].erase("spc");
    if (report.contains("traces"))
        for (auto& t : report["traces"])
            for (auto& r : t["rounds"]) r.erase("seconds");
    return report;
}

}  // namespace zoomseg
