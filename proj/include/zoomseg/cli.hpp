#pragma once

// Command-line front end. dispatch() returns 0 on success, 1 on usage errors and 2 on
// data errors; diagnostics go to `err`.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "zoomseg/core.hpp"
#include "zoomseg/eval.hpp"
#include "zoomseg/interact.hpp"
#include "zoomseg/io.hpp"
#include "zoomseg/pipeline.hpp"
#include "zoomseg/scenes.hpp"
#include "zoomseg/server.hpp"
#include "zoomseg/taiz.hpp"
#include "zoomseg/train.hpp"

namespace zoomseg::cli {

using nlohmann::json;

inline constexpr std::uint64_t kDefaultSeed = 20240131;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// "HxW" -> {H, W}.
inline std::pair<int, int> parse_size(const std::string& s) {
    const auto x = s.find_first_of("xX");
    try {
        if (x == std::string::npos) throw std::invalid_argument(s);
        std::size_t used = 0;
        const int h = std::stoi(s.substr(0, x), &used);
        if (used != x) throw std::invalid_argument(s);
        const auto rest = s.substr(x + 1);
        const int w = std::stoi(rest, &used);
        if (used != rest.size() || h < 1 || w < 1) throw std::invalid_argument(s);
        return {h, w};
    } catch (const std::exception&) {
        throw UsageError("expected a size like 128x128, got '" + s + "'");
    }
}

inline std::vector<double> parse_thresholds(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const double v = std::stod(item, &used);
            if (used != item.size() || !(v > 0.0 && v <= 1.0)) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("thresholds must be comma-separated values in (0,1], got '" + s + "'");
        }
    }
    if (out.empty()) throw UsageError("no thresholds given");
    if (s.back() == ',') throw UsageError("thresholds must not end with a comma: '" + s + "'");
    return out;
}

inline void write_text(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text << '\n';
        return;
    }
    std::ofstream f(path);
    if (!f) throw io::ImageIoError("cannot write " + path);
    f << text << '\n';
}

inline GuidanceMap load_guidance(const std::string& path) {
    const auto bmp = io::decode_image_bytes(io::read_file(path));
    GuidanceMap g(bmp.height, bmp.width, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double s = 0.0;
        for (int c = 0; c < bmp.channels; ++c) s += bmp.pixels[i * static_cast<std::size_t>(bmp.channels) + static_cast<std::size_t>(c)];
        g[i] = s / (255.0 * bmp.channels);
    }
    return g;
}

struct Globals {
    std::uint64_t seed = kDefaultSeed;
    int verbosity = 0;
    int threads = 1;
};

struct SessionFlags {
    std::string segmenter = "geodesic";
    int budget = 20;
    int working_size = 256;
    std::string thresholds = "0.85,0.9";
    bool no_taiz = false;
    bool no_refine = false;

    void add_to(CLI::App* app) {
        app->add_option("--segmenter", segmenter, "oracle | geodesic | empty | toy | toy:<params.json>");
        app->add_option("--budget", budget, "click budget T")->check(CLI::Range(1, 1000));
        app->add_option("--working-size", working_size, "side of the square working raster")->check(CLI::Range(2, 4096));
        app->add_option("--thresholds", thresholds, "IoU thresholds, comma-separated");
        app->add_flag("--no-taiz", no_taiz, "disable the target-aware zoom branch");
        app->add_flag("--no-refine", no_refine, "disable local refinement");
    }

    PipelineConfig pipeline() const {
        PipelineConfig p;
        p.working_size = working_size;
        p.use_taiz = !no_taiz;
        p.refine = !no_refine;
        return p;
    }

    void check() const {
        if (!valid_segmenter_spec(segmenter)) throw UsageError("unknown segmenter '" + segmenter + "'");
    }
};

inline int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Interactive segmentation toolkit: target-aware zoom, click simulation, evaluation"};
    app.name("zoomseg");
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "random seed")->capture_default_str();
    app.add_option("--verbosity", g.verbosity, "0 quiet, 1 progress, 2 debug")->check(CLI::Range(0, 2));
    app.add_option("--threads", g.threads, "worker threads for evaluate")->check(CLI::Range(1, 256));
    auto log = [&](int level, const std::string& msg) {
        if (g.verbosity >= level) err << msg << '\n';
    };

    // warp
    auto* warp = app.add_subcommand("warp", "zoom an image towards a guidance map");
    std::string w_image, w_guidance, w_size, w_out;
    double w_sigma = kDefaultSigmaPx;
    warp->add_option("--image", w_image, "input image")->required();
    warp->add_option("--guidance", w_guidance, "guidance image (grey levels = weights)")->required();
    warp->add_option("--out-size", w_size, "HxW of the zoomed raster")->required();
    warp->add_option("--sigma", w_sigma, "kernel width in source pixels")->check(CLI::PositiveNumber);
    warp->add_option("--out", w_out, "output image (.png or .ppm)")->required();

    // perturb
    auto* perturb = app.add_subcommand("perturb", "degrade a mask to a target IoU");
    std::string p_mask, p_out;
    double p_target = 0.8, p_tol = 0.03;
    perturb->add_option("--mask", p_mask, "input mask")->required();
    perturb->add_option("--target-iou", p_target, "target IoU")->required()->check(CLI::Range(0.0, 1.0));
    perturb->add_option("--tolerance", p_tol, "accepted distance from the target")->check(CLI::Range(0.0, 1.0));
    perturb->add_option("--out", p_out, "output mask PNG")->required();

    // simulate
    auto* simulate = app.add_subcommand("simulate", "run one simulated session and print its trace");
    std::string s_image, s_mask, s_out;
    SessionFlags s_flags;
    simulate->add_option("--image", s_image, "input image")->required();
    simulate->add_option("--mask", s_mask, "ground-truth mask")->required();
    simulate->add_option("--out", s_out, "trace file (stdout if omitted)");
    s_flags.add_to(simulate);

    // evaluate
    auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a segmenter over a dataset");
    std::string e_dataset, e_out;
    int e_iou_round = 5;
    SessionFlags e_flags;
    evaluate_cmd->add_option("--dataset", e_dataset, "dataset root")->required();
    evaluate_cmd->add_option("--out", e_out, "report file (stdout if omitted)");
    evaluate_cmd->add_option("--iou-round", e_iou_round, "N for IoU@N and BIoU@N")->check(CLI::Range(1, 1000));
    e_flags.add_to(evaluate_cmd);

    // train-toy
    auto* train = app.add_subcommand("train-toy", "fit the toy segmenter with and without the matching term");
    int t_steps = 400, t_scenes = 200, t_heldout = 50, t_every = 50;
    double t_lr = 0.05;
    std::string t_out, t_params_out;
    train->add_option("--steps", t_steps, "training steps per run")->check(CLI::Range(0, 1000000));
    train->add_option("--scenes", t_scenes, "training scenes")->check(CLI::Range(1, 100000));
    train->add_option("--heldout", t_heldout, "held-out scenes for the gap")->check(CLI::Range(1, 100000));
    train->add_option("--eval-every", t_every, "steps between gap measurements")->check(CLI::Range(1, 1000000));
    train->add_option("--lr", t_lr, "Adam learning rate")->check(CLI::PositiveNumber);
    train->add_option("--out", t_out, "curve JSON (stdout if omitted)");
    train->add_option("--params-out", t_params_out, "write the parameters trained with the matching term");

    // gen-scenes
    auto* gen = app.add_subcommand("gen-scenes", "write a synthetic dataset");
    int g_count = 10;
    std::string g_size = "256x256", g_out;
    double g_min_area = 0.05, g_max_area = 0.25, g_noise = 0.0;
    gen->add_option("--count", g_count, "number of scenes")->required()->check(CLI::Range(1, 1000000));
    gen->add_option("--size", g_size, "HxW");
    gen->add_option("--out", g_out, "dataset root")->required();
    gen->add_option("--min-area", g_min_area, "smallest target area fraction")->check(CLI::Range(0.0001, 1.0));
    gen->add_option("--max-area", g_max_area, "largest target area fraction")->check(CLI::Range(0.0001, 1.0));
    gen->add_option("--noise", g_noise, "per-pixel noise amplitude")->check(CLI::Range(0.0, 1.0));

    // serve
    auto* serve = app.add_subcommand("serve", "run the HTTP session service");
    server::ServerConfig sv;
    std::string sv_host = "0.0.0.0", sv_toy;
    serve->add_option("--host", sv_host, "bind address");
    serve->add_option("--port", sv.port, "TCP port")->check(CLI::Range(1, 65535));
    serve->add_option("--max-sessions", sv.max_sessions, "concurrent session limit")->check(CLI::Range(1, 100000));
    serve->add_option("--idle-timeout-sec", sv.idle_timeout_sec, "idle seconds before a session expires")->check(CLI::PositiveNumber);
    serve->add_option("--static-dir", sv.static_dir, "directory served at /");
    serve->add_option("--toy-params", sv_toy, "parameters for the 'toy' segmenter");
    serve->add_option("--working-size", sv.pipeline.working_size, "side of the square working raster")->check(CLI::Range(2, 4096));

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        std::ostringstream o, e2;
        const int code = app.exit(e, o, e2);
        out << o.str();
        err << e2.str();
        return code == 0 ? 0 : 1;
    }

    try {
        if (warp->parsed()) {
            const auto [h, w] = parse_size(w_size);
            const auto image = io::load_image(w_image);
            const auto guidance = load_guidance(w_guidance);
            require_same_shape(image.r, guidance, "warp: image vs guidance");
            const auto zoom = build_zoom(guidance, h, w, w_sigma);
            io::save_image(w_out, warp_image(image, zoom.cols, zoom.rows));
            std::ostringstream side;
            side << std::setprecision(10);
            side << "# forward samples in source pixels\nrows";
            for (double v : source_pixels(zoom.rows)) side << ' ' << v;
            side << "\ncols";
            for (double v : source_pixels(zoom.cols)) side << ' ' << v;
            write_text(w_out + ".samples.txt", side.str(), out);
            log(1, "wrote " + w_out);
        } else if (perturb->parsed()) {
            const auto gt = io::load_mask(p_mask);
            PerturbConfig pc;
            pc.target_iou = p_target;
            pc.tolerance = p_tol;
            pc.seed = g.seed;
            const auto m = perturb_to_iou(gt, pc);
            io::save_mask(p_out, m);
            out << std::setprecision(6) << std::fixed << iou(m, gt) << '\n';
        } else if (simulate->parsed()) {
            s_flags.check();
            const auto thresholds = parse_thresholds(s_flags.thresholds);
            const auto image = io::load_image(s_image);
            const auto gt = io::load_mask(s_mask);
            require_same_shape(image.r, gt, "simulate: image vs mask");
            const auto seg = make_segmenter(s_flags.segmenter, &gt, instance_seed(g.seed, 0));
            const auto trace = run_session(image, gt, *seg, s_flags.budget, thresholds, s_flags.pipeline(),
                                           std::filesystem::path(s_image).stem().string());
            write_text(s_out, to_json(trace).dump(2), out);
        } else if (evaluate_cmd->parsed()) {
            e_flags.check();
            EvalConfig ec;
            ec.segmenter = e_flags.segmenter;
            ec.budget = e_flags.budget;
            ec.thresholds = parse_thresholds(e_flags.thresholds);
            ec.iou_round = e_iou_round;
            ec.seed = g.seed;
            ec.threads = g.threads;
            ec.pipeline = e_flags.pipeline();
            const auto index = load_dataset(e_dataset);
            log(1, "evaluating " + std::to_string(index.entries.size()) + " instances");
            const auto report = evaluate(index, ec);
            for (const auto& e : report.errors) err << "warning: " << e.entry << ": " << e.message << '\n';
            write_text(e_out, to_json(report).dump(2), out);
        } else if (train->parsed()) {
            const auto sc = toy_scene_config();
            const auto scenes = generate_scenes(g.seed * 1000003ULL, t_scenes, sc);
            const auto held = generate_scenes(g.seed * 1000003ULL + 500000ULL, t_heldout, sc);
            json result;
            ToyModelParams with_params;
            for (const bool matching : {true, false}) {
                ToyTrainConfig tc;
                tc.steps = t_steps;
                tc.lr = t_lr;
                tc.seed = g.seed;
                tc.maskmatch.use_matching = matching;
                json gaps = json::array();
                gaps.push_back({{"step", 0}, {"gap", heldout_gap(tc.init, held, g.seed + 1)}});
                const auto res = train_toy(scenes, tc, [&](int done, const ToyModelParams& p, const MaskMatchStepResult&) {
                    if (done % t_every == 0 || done == t_steps) gaps.push_back({{"step", done}, {"gap", heldout_gap(p, held, g.seed + 1)}});
                });
                const double gap = gaps.back().at("gap").get<double>();
                result[matching ? "with_matching" : "without_matching"] = {
                    {"losses", res.losses}, {"gap_curve", gaps}, {"gate_open_steps", res.gate_open_steps}, {"heldout_gap", gap}, {"params", res.params.values}};
                if (matching) with_params = res.params;
                log(1, std::string(matching ? "with" : "without") + " matching: held-out gap " + std::to_string(gap));
            }
            result["seed"] = g.seed;
            result["steps"] = t_steps;
            if (!t_params_out.empty()) write_text(t_params_out, toy_params_json(with_params).dump(), out);
            write_text(t_out, result.dump(2), out);
        } else if (gen->parsed()) {
            const auto [h, w] = parse_size(g_size);
            if (g_min_area > g_max_area) throw UsageError("--min-area exceeds --max-area");
            SceneConfig sc;
            sc.height = h;
            sc.width = w;
            sc.min_area_fraction = g_min_area;
            sc.max_area_fraction = g_max_area;
            sc.pixel_noise = g_noise;
            write_dataset(g_out, generate_scenes(g.seed, g_count, sc));
            log(1, "wrote " + std::to_string(g_count) + " scenes to " + g_out);
        } else if (serve->parsed()) {
            if (!sv_toy.empty()) sv.toy_params = load_toy_params(sv_toy);
            server::SessionRegistry registry(sv);
            httplib::Server http;
            server::mount_routes(http, registry);
            log(0, "listening on " + sv_host + ":" + std::to_string(sv.port));
            if (!http.listen(sv_host, sv.port)) throw std::runtime_error("cannot listen on port " + std::to_string(sv.port));
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

}  // namespace zoomseg::cli
