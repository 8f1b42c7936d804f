#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "engine.hpp"
#include "error.hpp"
#include "events.hpp"

namespace vgold {

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

/// Task-serving facade over one engine. Requests are serialized by a single mutex,
/// so a worker's submit and next-hit never interleave and the log has one writer.
/// An existing log file is replayed on start-up and then appended to.
class TaskService {
public:
    TaskService(EngineConfig cfg, Clock& clock, const std::string& log_path = {})
        : engine_(start(std::move(cfg), clock, log_path)) {
        if (!log_path.empty()) engine_.log().attach_file(log_path);
    }

    ServiceResponse next_hit(const std::string& worker) {
        if (worker.empty()) return {400, error_body("missing worker parameter")};
        std::lock_guard lock(mu_);
        const NextHit nh = engine_.next_hit(worker);
        switch (nh.status) {
        case NextStatus::Assigned: return {200, to_client_json(*nh.hit)};
        case NextStatus::Blocked: return {403, {{"status", "blocked"}, {"reason", nh.reason}}};
        case NextStatus::Done: return {200, {{"status", "done"}, {"reason", nh.reason}}};
        case NextStatus::Unknown: return {404, {{"status", "unknown"}, {"reason", nh.reason}}};
        case NextStatus::Abandoned: return {409, {{"status", "ended"}, {"reason", nh.reason}}};
        }
        return {500, error_body("unreachable")};
    }

    /// Body: {"worker", "hit_id", "boxes": [[x,y,w,h],...], "elapsed", "contribution"?}.
    ServiceResponse submit(const std::string& body) {
        SubmitRequest req;
        try {
            const auto j = nlohmann::json::parse(body);
            req.worker_id = j.at("worker").get<std::string>();
            req.hit_id = j.at("hit_id").get<std::string>();
            req.boxes = detail::boxes_from_json(j.value("boxes", nlohmann::json::array()));
            req.elapsed = j.at("elapsed").get<double>();
            if (j.contains("contribution")) req.contribution = contribution_from_json(j["contribution"]);
        } catch (const std::exception& e) {
            return {400, error_body(std::string("bad submission: ") + e.what())};
        }
        std::lock_guard lock(mu_);
        try {
            return {200, to_client_json(engine_.submit(req))};
        } catch (const UnknownWorker& e) {
            return {404, error_body(e.what())};
        } catch (const BlockedWorker& e) {
            return {403, {{"status", "blocked"}, {"reason", "quality below threshold"}, {"error", e.what()}}};
        } catch (const StaleHit& e) {
            return {409, error_body(e.what())};
        } catch (const ContractError& e) {
            return {400, error_body(e.what())};
        }
    }

    ServiceResponse status(const std::string& worker) {
        if (worker.empty()) return {400, error_body("missing worker parameter")};
        std::lock_guard lock(mu_);
        auto s = engine_.status(worker);
        if (!s) return {404, error_body("unknown worker " + worker)};
        return {200, *s};
    }

    ServiceResponse abandon(const std::string& worker) {
        std::lock_guard lock(mu_);
        try {
            engine_.abandon(worker);
        } catch (const UnknownWorker& e) {
            return {404, error_body(e.what())};
        }
        return {200, {{"status", "ended"}}};
    }

    /// Registers GET /next-hit, POST /submit, GET /status and POST /abandon.
    void mount(httplib::Server& srv, bool cors) {
        auto reply = [cors](httplib::Response& res, const ServiceResponse& r) {
            res.status = r.status;
            res.set_content(r.body.dump(), "application/json");
            if (cors) res.set_header("Access-Control-Allow-Origin", "*");
        };
        srv.Get("/next-hit", [this, reply](const httplib::Request& req, httplib::Response& res) {
            reply(res, next_hit(req.get_param_value("worker")));
        });
        srv.Post("/submit", [this, reply](const httplib::Request& req, httplib::Response& res) {
            reply(res, submit(req.body));
        });
        srv.Get("/status", [this, reply](const httplib::Request& req, httplib::Response& res) {
            reply(res, status(req.get_param_value("worker")));
        });
        srv.Post("/abandon", [this, reply](const httplib::Request& req, httplib::Response& res) {
            reply(res, abandon(req.get_param_value("worker")));
        });
        if (cors) {
            srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
                res.set_header("Access-Control-Allow-Origin", "*");
                res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
                res.set_header("Access-Control-Allow-Headers", "Content-Type");
                res.status = 204;
            });
        }
    }

    [[nodiscard]] nlohmann::json snapshot() {
        std::lock_guard lock(mu_);
        return engine_.snapshot();
    }

private:
    static nlohmann::json error_body(const std::string& msg) { return {{"status", "error"}, {"error", msg}}; }

    static TaskEngine start(EngineConfig cfg, Clock& clock, const std::string& log_path) {
        if (!log_path.empty() && std::filesystem::exists(log_path))
            return TaskEngine::replay(std::move(cfg), clock, load_events(log_path));
        return TaskEngine(std::move(cfg), clock);
    }

    std::mutex mu_;
    TaskEngine engine_;
};

} // namespace vgold
