#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

#include "vgold/http_service.hpp"

using namespace vgold;
using nlohmann::json;

namespace {

std::shared_ptr<const Corpus> corpus() {
    std::vector<Scene> scenes;
    for (int i = 0; i < 8; ++i) scenes.push_back({"s" + std::to_string(i), 400, 300, {{50, 50, 100, 100}}});
    return std::make_shared<const Corpus>(Corpus(std::move(scenes)));
}

EngineConfig dynamic_config() {
    EngineConfig cfg;
    cfg.corpus = corpus();
    cfg.schedule = SchedulePolicy{Dynamic{}, 1};
    cfg.consequence = ConsequenceMode::Tiered;
    cfg.seed = 5;
    return cfg;
}

std::string submission(const std::string& worker, const std::string& hit, const json& boxes, double elapsed = 4.0) {
    return json{{"worker", worker}, {"hit_id", hit}, {"boxes", boxes}, {"elapsed", elapsed}}.dump();
}

std::filesystem::path temp_log(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove(p);
    return p;
}

} // namespace

TEST(Service, NextHitAndSubmit) {
    ManualClock clock;
    TaskService svc(dynamic_config(), clock);
    const auto r = svc.next_hit("w");
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(r.body["status"], "assigned");
    const std::string hit = r.body["hit_id"];
    const auto s = svc.submit(submission("w", hit, json::array({{50, 50, 100, 100}})));
    ASSERT_EQ(s.status, 200) << s.body.dump();
    EXPECT_EQ(s.body["hit_id"], hit);
    EXPECT_DOUBLE_EQ(s.body["feedback"]["average"].get<double>(), 100.0);
    EXPECT_EQ(svc.status("w").body["hits_submitted"], 1);
}

TEST(Service, ErrorStatuses) {
    ManualClock clock;
    auto cfg = dynamic_config();
    cfg.open_enrollment = false;
    cfg.enrolled = {"w"};
    TaskService svc(cfg, clock);
    EXPECT_EQ(svc.next_hit("").status, 400);
    EXPECT_EQ(svc.next_hit("x").status, 404);
    EXPECT_EQ(svc.status("x").status, 404);
    EXPECT_EQ(svc.status("").status, 400);
    EXPECT_EQ(svc.abandon("x").status, 404);
    EXPECT_EQ(svc.submit("not json").status, 400);
    EXPECT_EQ(svc.submit(R"({"worker":"w"})").status, 400);
    EXPECT_EQ(svc.submit(submission("x", "h000001", json::array())).status, 404);
    const std::string hit = svc.next_hit("w").body["hit_id"];
    EXPECT_EQ(svc.submit(submission("w", "h000042", json::array())).status, 409);
    EXPECT_EQ(svc.submit(submission("w", hit, json::array({{1, 1, 0, 4}}))).status, 400);
    EXPECT_EQ(svc.submit(submission("w", hit, json::array({{1, 1, 4}}))).status, 400);
    EXPECT_EQ(svc.submit(submission("w", hit, json::array(), -2.0)).status, 400);
    EXPECT_EQ(svc.submit(submission("w", hit, json::array())).status, 200);
    EXPECT_EQ(svc.abandon("w").status, 200);
    const auto ended = svc.next_hit("w");
    EXPECT_EQ(ended.status, 409);
    EXPECT_EQ(ended.body["status"], "ended");
}

TEST(Service, BlockedWorkerGets403) {
    ManualClock clock;
    TaskService svc(dynamic_config(), clock);
    std::string last;
    for (int i = 0; i < 3; ++i) {
        last = svc.next_hit("w").body["hit_id"];
        const auto r = svc.submit(submission("w", last, json::array({{300, 200, 10, 10}})));
        ASSERT_EQ(r.status, 200);
        EXPECT_EQ(r.body["consequence"].get<std::string>(), i < 2 ? "warning" : "block");
    }
    const auto r = svc.next_hit("w");
    EXPECT_EQ(r.status, 403);
    EXPECT_EQ(r.body["status"], "blocked");
    EXPECT_EQ(r.body["reason"], "quality below threshold");
    const auto s = svc.submit(submission("w", last, json::array()));
    EXPECT_EQ(s.status, 403);
    EXPECT_EQ(s.body["reason"], "quality below threshold");
    EXPECT_TRUE(svc.status("w").body["blocked"].get<bool>());
}

TEST(Service, ExhaustedPoolSaysDone) {
    ManualClock clock;
    auto cfg = dynamic_config();
    cfg.schedule.reset();
    cfg.consequence = ConsequenceMode::None;
    cfg.responses_per_scene = 1;
    TaskService svc(cfg, clock);
    for (int i = 0; i < 8; ++i) {
        const auto r = svc.next_hit("w");
        ASSERT_EQ(r.status, 200);
        ASSERT_EQ(svc.submit(submission("w", r.body["hit_id"], json::array())).status, 200);
    }
    const auto r = svc.next_hit("w");
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(r.body["status"], "done");
}

TEST(Service, RestartReplaysLogAndKeepsAppending) {
    const auto path = temp_log("vgold_service_restart.ndjson");
    ManualClock clock(100);
    json before;
    {
        TaskService svc(dynamic_config(), clock, path.string());
        for (const char* w : {"a", "b"}) {
            const std::string hit = svc.next_hit(w).body["hit_id"];
            svc.submit(submission(w, hit, json::array({{50, 50, 90, 100}})));
        }
        svc.next_hit("a");
        before = svc.snapshot();
    }
    TaskService again(dynamic_config(), clock, path.string());
    EXPECT_EQ(again.snapshot(), before);
    const auto held = again.next_hit("a");
    EXPECT_EQ(held.body["hit_id"], "h000003");
    EXPECT_EQ(again.next_hit("c").body["hit_id"], "h000004");
    const auto events = load_events(path.string());
    EXPECT_EQ(events.size(), again.snapshot()["event_count"].get<std::size_t>());
    std::filesystem::remove(path);
}

TEST(Http, EndpointsOverLoopback) {
    const auto path = temp_log("vgold_http_loopback.ndjson");
    SystemClock clock;
    TaskService svc(dynamic_config(), clock, path.string());
    httplib::Server srv;
    svc.mount(srv, true);
    const int port = srv.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread th([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    auto r = cli.Get("/next-hit?worker=alice");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(r->get_header_value("Content-Type"), "application/json");
    EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "*");
    const auto hit = json::parse(r->body);
    EXPECT_EQ(hit["scene"]["width"], 400);

    auto s = cli.Post("/submit", submission("alice", hit["hit_id"], json::array({{50, 50, 100, 100}})), "application/json");
    ASSERT_TRUE(s);
    EXPECT_EQ(s->status, 200);
    EXPECT_TRUE(json::parse(s->body).contains("banner"));

    auto st = cli.Get("/status?worker=alice");
    ASSERT_TRUE(st);
    EXPECT_EQ(json::parse(st->body)["golds_completed"], 1);
    EXPECT_EQ(cli.Get("/status?worker=bob")->status, 404);
    EXPECT_EQ(cli.Get("/next-hit")->status, 400);
    EXPECT_EQ(cli.Post("/submit", "{", "application/json")->status, 400);
    EXPECT_EQ(cli.Options("/submit")->status, 204);
    EXPECT_EQ(cli.Post("/abandon?worker=alice", "", "text/plain")->status, 200);
    EXPECT_EQ(cli.Get("/next-hit?worker=alice")->status, 409);

    srv.stop();
    th.join();
    EXPECT_EQ(load_events(path.string()).size(), svc.snapshot()["event_count"].get<std::size_t>());
    std::filesystem::remove(path);
}

TEST(Http, ConcurrentWorkersKeepTheLogConsistent) {
    const auto path = temp_log("vgold_http_concurrent.ndjson");
    SystemClock clock;
    auto cfg = dynamic_config();
    cfg.responses_per_scene = 3;
    TaskService svc(cfg, clock, path.string());
    httplib::Server srv;
    svc.mount(srv, false);
    const int port = srv.bind_to_any_port("127.0.0.1");
    std::thread th([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();

    std::vector<std::thread> workers;
    for (int k = 0; k < 6; ++k) {
        workers.emplace_back([port, k] {
            httplib::Client cli("127.0.0.1", port);
            const std::string w = "w" + std::to_string(k);
            for (int i = 0; i < 10; ++i) {
                auto r = cli.Get(("/next-hit?worker=" + w).c_str());
                if (!r || r->status != 200) return;
                const auto j = json::parse(r->body);
                if (j["status"] != "assigned") return;
                cli.Post("/submit", submission(w, j["hit_id"], json::array({{50, 50, 95, 100}})), "application/json");
            }
        });
    }
    for (auto& t : workers) t.join();
    srv.stop();
    th.join();

    const auto snap = svc.snapshot();
    EXPECT_EQ(snap["units_done"], 24);
    ManualClock replay_clock;
    EXPECT_EQ(TaskEngine::replay(cfg, replay_clock, load_events(path.string())).snapshot(), snap);
    std::set<std::pair<std::string, std::string>> pairs;
    for (const auto& r : snap["records"]) {
        // three units per scene, laid out scene by scene
        EXPECT_TRUE(pairs.emplace(r["worker"], std::to_string(r["unit"].get<int>() / 3)).second);
    }
    std::filesystem::remove(path);
}
