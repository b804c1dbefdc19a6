#pragma once

// HTTP session service. SessionRegistry holds the state machine and is usable without a
// socket; mount_routes wires it into an httplib::Server.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "zoomseg/core.hpp"
#include "zoomseg/eval.hpp"
#include "zoomseg/io.hpp"
#include "zoomseg/pipeline.hpp"
#include "zoomseg/rle.hpp"
#include "zoomseg/segmenter.hpp"

namespace zoomseg::server {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

class ApiError : public std::runtime_error {
public:
    ApiError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

struct ServerConfig {
    int port = 8080;
    std::size_t max_sessions = 32;
    double idle_timeout_sec = 900.0;
    int default_budget = 20;
    int max_budget = 100;
    std::string static_dir;
    PipelineConfig pipeline;
    ToyModelParams toy_params = default_toy_params();
};

struct CreateRequest {
    std::vector<std::uint8_t> image;
    std::optional<std::vector<std::uint8_t>> gt;
    std::string segmenter = "geodesic";
    std::optional<int> budget;
};

class SessionRegistry {
public:
    explicit SessionRegistry(ServerConfig cfg, std::function<Clock::time_point()> now = Clock::now)
        : cfg_(std::move(cfg)), now_(std::move(now)), ids_(std::random_device{}()) {}

    std::string create(const CreateRequest& req) {
        RasterImage image;
        std::optional<BinaryMask> gt;
        try {
            image = io::decode_image(req.image);
            if (req.gt) gt = io::decode_mask(*req.gt);
        } catch (const std::exception& e) {
            throw ApiError(400, std::string("cannot decode upload: ") + e.what());
        }
        if (gt && !gt->same_shape(image.r)) throw ApiError(400, "ground truth size differs from the image");
        const int budget = req.budget.value_or(cfg_.default_budget);
        if (budget < 1 || budget > cfg_.max_budget) throw ApiError(400, "budget out of range");

        std::unique_ptr<Segmenter> seg;
        if (req.segmenter == "toy") {
            seg = std::make_unique<ToySegmenter>(cfg_.toy_params);
        } else if (req.segmenter == "geodesic" || req.segmenter == "empty" || req.segmenter == "oracle") {
            if (req.segmenter == "oracle" && !gt) throw ApiError(400, "the oracle segmenter needs a ground-truth upload");
            seg = make_segmenter(req.segmenter, gt ? &*gt : nullptr, 0);
        } else {
            throw ApiError(400, "unknown segmenter '" + req.segmenter + "'");
        }

        auto session = std::make_shared<Session>();
        session->segmenter_name = req.segmenter;
        session->segmenter = std::move(seg);
        session->state = start_session(std::move(image), std::move(gt), budget);
        session->last_activity = now_();

        std::lock_guard lock(mutex_);
        expire_locked();
        if (sessions_.size() >= cfg_.max_sessions) throw ApiError(503, "session limit reached");
        std::string id;
        do {
            id = new_id();
        } while (sessions_.count(id));
        sessions_.emplace(id, std::move(session));
        return id;
    }

    json state(const std::string& id) {
        auto s = acquire(id);
        Release release{s};
        return describe(id, *s, std::nullopt);
    }

    json click(const std::string& id, int row, int col, Polarity polarity) {
        auto s = acquire(id);
        Release release{s};
        auto& st = s->state;
        if (st.round >= st.budget) throw ApiError(409, "click budget exhausted");
        if (row < 0 || col < 0 || row >= st.image.height() || col >= st.image.width()) throw ApiError(400, "click outside the image");
        Checkpoint before = checkpoint(st);
        st = step(std::move(st), Click{row, col, polarity, 0}, *s->segmenter, cfg_.pipeline);
        s->history.push_back(std::move(before));
        return describe(id, *s, st.timings.back());
    }

    json undo(const std::string& id) {
        auto s = acquire(id);
        Release release{s};
        if (s->history.empty()) throw ApiError(409, "nothing to undo");
        restore(s->state, std::move(s->history.back()));
        s->history.pop_back();
        return describe(id, *s, std::nullopt);
    }

    void remove(const std::string& id) {
        std::lock_guard lock(mutex_);
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) throw ApiError(404, "unknown session");
        if (it->second->busy) throw ApiError(409, "session is busy");
        sessions_.erase(it);
    }

    std::size_t size() {
        std::lock_guard lock(mutex_);
        expire_locked();
        return sessions_.size();
    }

    /// Marks a session busy as if a step were running (tests use this for the concurrency contract).
    bool try_mark_busy(const std::string& id, bool busy) {
        std::lock_guard lock(mutex_);
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) return false;
        it->second->busy = busy;
        return true;
    }

    const ServerConfig& config() const { return cfg_; }

private:
    // What undo restores: everything in SessionState except the image and gt.
    struct Checkpoint {
        ClickList clicks;
        LogitMap logit;
        BinaryMask mask;
        int round = 0;
        std::vector<double> timings, lambdas;
        int zoom_mappings_built = 0;
        std::optional<ZoomMappings> last_zoom;
    };

    struct Session {
        std::string segmenter_name;
        std::unique_ptr<Segmenter> segmenter;
        SessionState state;
        std::vector<Checkpoint> history;
        Clock::time_point last_activity;
        bool busy = false;  // guarded by the registry mutex
    };

    struct Release {
        std::shared_ptr<Session> s;
        ~Release() { s->busy = false; }
    };

    static Checkpoint checkpoint(const SessionState& st) {
        return {st.clicks, st.current_logit, st.current_mask, st.round, st.timings, st.lambdas, st.zoom_mappings_built, st.last_zoom};
    }

    static void restore(SessionState& st, Checkpoint c) {
        st.clicks = std::move(c.clicks);
        st.current_logit = std::move(c.logit);
        st.current_mask = std::move(c.mask);
        st.round = c.round;
        st.timings = std::move(c.timings);
        st.lambdas = std::move(c.lambdas);
        st.zoom_mappings_built = c.zoom_mappings_built;
        st.last_zoom = std::move(c.last_zoom);
    }

    // Looks the session up and claims it; a second concurrent claim is rejected, not queued.
    std::shared_ptr<Session> acquire(const std::string& id) {
        std::lock_guard lock(mutex_);
        expire_locked();
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) throw ApiError(404, "unknown session");
        if (it->second->busy) throw ApiError(409, "a step is already running for this session");
        it->second->busy = true;
        it->second->last_activity = now_();
        return it->second;
    }

    void expire_locked() {
        const auto now = now_();
        const auto limit = std::chrono::duration<double>(cfg_.idle_timeout_sec);
        for (auto it = sessions_.begin(); it != sessions_.end();) {
            if (!it->second->busy && now - it->second->last_activity > limit)
                it = sessions_.erase(it);
            else
                ++it;
        }
    }

    std::string new_id() {
        static constexpr char kHex[] = "0123456789abcdef";
        std::string id;
        for (int k = 0; k < 2; ++k) {
            auto v = ids_();
            for (int n = 0; n < 16; ++n, v >>= 4) id += kHex[v & 15];
        }
        return id;
    }

    static json describe(const std::string& id, const Session& s, std::optional<double> seconds) {
        const auto& st = s.state;
        json clicks = json::array();
        for (const auto& c : st.clicks) clicks.push_back(to_json(c));
        json out = {{"session_id", id},
                    {"segmenter", s.segmenter_name},
                    {"round", st.round},
                    {"budget", st.budget},
                    {"height", st.image.height()},
                    {"width", st.image.width()},
                    {"clicks", clicks},
                    {"lambda", st.lambdas.empty() ? 0.0 : st.lambdas.back()},
                    {"mask", rle::to_json(st.current_mask)},
                    {"iou", st.gt ? json(iou(st.current_mask, *st.gt)) : json(nullptr)},
                    {"taiz", nullptr}};
        if (seconds) out["seconds"] = *seconds;
        if (st.last_zoom) {
            // Source pixel coordinates sampled by each target row and column.
            out["taiz"] = {{"rows", source_pixels(st.last_zoom->rows)}, {"cols", source_pixels(st.last_zoom->cols)}};
        }
        return out;
    }

    ServerConfig cfg_;
    std::function<Clock::time_point()> now_;
    std::mt19937_64 ids_;
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
};

namespace detail {

inline std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

inline CreateRequest parse_create(const httplib::Request& req) {
    CreateRequest out;
    if (req.is_multipart_form_data()) {
        if (!req.has_file("image")) throw ApiError(400, "multipart upload needs an 'image' part");
        out.image = bytes_of(req.get_file_value("image").content);
        if (req.has_file("gt")) out.gt = bytes_of(req.get_file_value("gt").content);
        if (req.has_file("segmenter")) out.segmenter = req.get_file_value("segmenter").content;
        if (req.has_file("budget")) {
            try {
                out.budget = std::stoi(req.get_file_value("budget").content);
            } catch (const std::exception&) {
                throw ApiError(400, "budget must be an integer");
            }
        }
        return out;
    }
    const auto j = json::parse(req.body);
    const auto decode = [](const json& v) {
        try {
            return bytes_of(rle::base64_decode(v.get<std::string>()));
        } catch (const rle::RleError& e) {
            throw ApiError(400, e.what());
        }
    };
    out.image = decode(j.at("image"));
    if (j.contains("gt") && !j["gt"].is_null()) out.gt = decode(j["gt"]);
    if (j.contains("segmenter")) out.segmenter = j["segmenter"].get<std::string>();
    if (j.contains("budget")) out.budget = j["budget"].get<int>();
    return out;
}

inline void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& body) {
    try {
        body();
    } catch (const ApiError& e) {
        reply(res, e.status(), {{"error", e.what()}});
    } catch (const json::exception& e) {
        reply(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
    } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
    }
}

}  // namespace detail

inline void mount_routes(httplib::Server& svr, SessionRegistry& reg) {
    using httplib::Request;
    using httplib::Response;
    svr.Post("/sessions", [&reg](const Request& req, Response& res) {
        detail::guarded(res, [&] {
            const auto id = reg.create(detail::parse_create(req));
            detail::reply(res, 201, reg.state(id));
        });
    });
    svr.Get(R"(/sessions/([0-9a-f]+))", [&reg](const Request& req, Response& res) {
        detail::guarded(res, [&] { detail::reply(res, 200, reg.state(req.matches[1])); });
    });
    svr.Post(R"(/sessions/([0-9a-f]+)/clicks)", [&reg](const Request& req, Response& res) {
        detail::guarded(res, [&] {
            const auto j = json::parse(req.body);
            Click c;
            try {
                c = click_from_json(j, 0);
            } catch (const std::invalid_argument& e) {
                throw ApiError(400, e.what());
            }
            detail::reply(res, 200, reg.click(req.matches[1], c.row, c.col, c.polarity));
        });
    });
    svr.Post(R"(/sessions/([0-9a-f]+)/undo)", [&reg](const Request& req, Response& res) {
        detail::guarded(res, [&] { detail::reply(res, 200, reg.undo(req.matches[1])); });
    });
    svr.Delete(R"(/sessions/([0-9a-f]+))", [&reg](const Request& req, Response& res) {
        detail::guarded(res, [&] {
            reg.remove(req.matches[1]);
            res.status = 204;
        });
    });
    if (!reg.config().static_dir.empty() && !svr.set_mount_point("/", reg.config().static_dir))
        throw std::runtime_error("static directory does not exist: " + reg.config().static_dir);
}

}  // namespace zoomseg::server
