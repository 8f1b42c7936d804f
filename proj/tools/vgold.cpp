// vgold: command-line front end for scoring, simulation, analysis, calibration and
// the task service.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "vgold/http_service.hpp"
#include "vgold/vgold.hpp"

namespace fs = std::filesystem;
using namespace vgold;

namespace {

httplib::Server* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

ExperimentConfig pick_condition(const std::vector<ExperimentConfig>& all, const std::string& name) {
    if (name.empty()) return all.front();
    for (const auto& c : all)
        if (c.condition == name) return c;
    throw ConfigError("condition " + name + " not in config");
}

int cmd_generate(std::uint64_t seed, int min_count, int max_count, int per_count, const std::string& out) {
    const Corpus c = generate_corpus(seed, uniform_histogram(min_count, max_count, per_count));
    save_corpus(c, out);
    std::printf("wrote %zu scenes to %s\n", c.size(), out.c_str());
    return 0;
}

int cmd_score(const std::string& gold, const std::string& pred, double tau, const std::string& out) {
    const LoadReport rep = load_corpus(gold);
    if (!rep.rejected.empty()) std::cerr << "rejected records:\n" << rep.rejection_listing();
    if (rep.clamped_boxes > 0) std::cerr << rep.clamped_boxes << " boxes clamped to scene extent\n";
    const auto anns = load_annotations(pred);
    const auto rows = score_annotations(rep.corpus, anns, tau);
    if (out.empty() || out == "-") {
        write_score_report(rows, std::cout);
    } else {
        std::ofstream f(out);
        if (!f) throw IoError("cannot write " + out);
        write_score_report(rows, f);
        if (!f) throw IoError("write failed on " + out);
    }
    return 0;
}

void print_summary_row(const ConditionSummary& s) {
    std::printf("%-24s %8.2f %6.2f %8.1f %6d %5d %5d\n", s.condition.c_str(), s.mean_miou, s.se, s.mean_time,
                s.submissions, s.workers, s.excluded_workers);
}

int cmd_simulate(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out,
                 const std::string& baseline) {
    auto conds = load_experiment_file(config);
    std::vector<ConditionSummary> summaries;
    std::printf("%-24s %8s %6s %8s %6s %5s %5s\n", "condition", "mIoU", "SE", "time_s", "subs", "wrk", "excl");
    for (auto& c : conds) {
        if (seed) c.seed = *seed;
        ConditionRun run;
        try {
            run = run_condition(c);
        } catch (const PopulationExhausted& e) {
            const fs::path p = fs::path(out) / c.condition / "events.partial.ndjson";
            fs::create_directories(p.parent_path());
            std::ofstream f(p);
            for (const auto& ev : e.partial_log) f << to_json(ev).dump() << '\n';
            std::cerr << e.what() << "; partial log in " << p << '\n';
            return 3;
        }
        emit_outputs(run, fs::path(out) / c.condition);
        print_summary_row(run.summary);
        summaries.push_back(run.summary);
    }
    const bool has_baseline = std::any_of(summaries.begin(), summaries.end(),
                                          [&](const ConditionSummary& s) { return s.condition == baseline; });
    if (summaries.size() >= 2 && has_baseline) {
        const auto cmp = compare_conditions(summaries, baseline);
        write_comparisons(cmp, fs::path(out) / "comparisons.csv");
        for (const auto& x : cmp)
            std::printf("%-24s vs %s: U=%.1f p=%.3g adj=%.3g %s\n", x.condition.c_str(), x.baseline.c_str(), x.test.u,
                        x.test.p, x.test.p_adjusted, stats::significance_marker(x.test.p_adjusted).c_str());
    }
    return 0;
}

int cmd_analyze(const std::string& in, const std::string& baseline) {
    const auto cmp = analyze(in, baseline);
    for (const auto& x : cmp)
        std::printf("%-24s mean %.2f vs %.2f  U=%.1f p=%.3g adj=%.3g %s\n", x.condition.c_str(), x.mean,
                    x.baseline_mean, x.test.u, x.test.p, x.test.p_adjusted, stats::significance_marker(x.test.p_adjusted).c_str());
    std::printf("wrote %s\n", (fs::path(in) / "comparisons.csv").string().c_str());
    return 0;
}

int cmd_calibrate(const std::string& target, const std::string& config, const std::string& out, int seeds) {
    const CalibrationTargets t = load_targets(target);
    nlohmann::json defaults = nlohmann::json::object();
    fs::path base_dir = ".";
    if (!config.empty()) {
        std::ifstream f(config);
        if (!f) throw IoError("cannot open " + config);
        defaults = nlohmann::json::parse(f);
        base_dir = fs::path(config).parent_path();
    }
    auto make = [&](const std::string& preset) {
        nlohmann::json j = preset_json(preset);
        j.merge_patch(defaults);
        j["condition"] = preset;
        return experiment_from_json(j, base_dir);
    };
    CalibrationOptions opt;
    opt.seeds.clear();
    for (int i = 0; i < seeds; ++i) opt.seeds.push_back(1001 + static_cast<std::uint64_t>(i));
    const auto res = calibrate(t, make(t.baseline_condition), make(t.improved_condition), opt);
    std::printf("skill_mean %.4f gamma_median %.4f focus_tiered %.4f\n", res.params.population.skill_mean,
                res.params.population.gamma_median, res.params.behavior.focus_tiered);
    std::printf("baseline %.2f (target %.2f)  improved %.2f (target %.2f)  rho %.2f / %.2f\n", res.baseline_mean,
                t.baseline_mean, res.improved_mean, t.improved_mean, res.rho_miou, res.rho_recall);
    std::ofstream f(out);
    if (!f) throw IoError("cannot write " + out);
    f << sim::to_json(res.params).dump(2) << '\n';
    if (!f) throw IoError("write failed on " + out);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_serve(const std::string& config, const std::string& condition, const std::string& host, int port,
              const std::string& log, bool cors) {
    const auto cfg = pick_condition(load_experiment_file(config), condition);
    SystemClock clock;
    TaskService service(engine_config_for(cfg, build_corpus(cfg.corpus)), clock, log);
    httplib::Server srv;
    service.mount(srv, cors);
    g_server = &srv;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::printf("serving %s on %s:%d (log %s)\n", cfg.condition.c_str(), host.c_str(), port,
                log.empty() ? "none" : log.c_str());
    std::fflush(stdout);
    if (!srv.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
    return 0;
}

int cmd_replay(const std::string& config, const std::string& condition, const std::string& log,
               const std::string& worker) {
    const auto cfg = pick_condition(load_experiment_file(config), condition);
    ManualClock clock;
    const TaskEngine eng = TaskEngine::replay(engine_config_for(cfg, build_corpus(cfg.corpus)), clock, load_events(log));
    if (worker.empty()) {
        std::cout << eng.snapshot().dump(2) << '\n';
        return 0;
    }
    const auto s = eng.status(worker);
    if (!s) throw ContractError("unknown worker " + worker);
    std::cout << s->dump(2) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Visible-gold annotation engine, simulator and task service"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "Write a synthetic corpus");
    std::uint64_t gen_seed = 7;
    int min_count = 1, max_count = 14, per_count = 10;
    std::string gen_out = "corpus.ndjson";
    gen->add_option("--seed", gen_seed, "Generator seed");
    gen->add_option("--min-count", min_count, "Smallest object count");
    gen->add_option("--max-count", max_count, "Largest object count");
    gen->add_option("--per-count", per_count, "Scenes per object count");
    gen->add_option("--out", gen_out, "Output corpus file");

    auto* sc = app.add_subcommand("score", "Score annotations against a corpus");
    std::string gold, pred, score_out;
    double tau = 0.5;
    sc->add_option("--gold", gold, "Corpus file")->required();
    sc->add_option("--pred", pred, "Line-delimited JSON annotations")->required();
    sc->add_option("--tau", tau, "IoU threshold for recall");
    sc->add_option("--out", score_out, "Report CSV (stdout when omitted)");

    auto* simc = app.add_subcommand("simulate", "Run simulated conditions");
    std::string sim_config, sim_out = "out", sim_baseline = "baseline";
    std::optional<std::uint64_t> sim_seed;
    simc->add_option("--config", sim_config, "Experiment JSON")->required();
    simc->add_option("--seed", sim_seed, "Override every condition's seed");
    simc->add_option("--out", sim_out, "Output directory");
    simc->add_option("--baseline", sim_baseline, "Baseline condition for comparisons");

    auto* an = app.add_subcommand("analyze", "Compare simulated conditions against a baseline");
    std::string an_in, an_baseline = "baseline";
    an->add_option("--in", an_in, "Directory written by simulate")->required();
    an->add_option("--baseline", an_baseline, "Baseline condition name");

    auto* cal = app.add_subcommand("calibrate", "Fit simulator parameters to target means");
    std::string cal_target, cal_config, cal_out = "sim_params.json";
    int cal_seeds = 3;
    cal->add_option("--target", cal_target, "CSV of condition,mean_miou")->required();
    cal->add_option("--config", cal_config, "Experiment defaults (corpus, population)");
    cal->add_option("--out", cal_out, "Where to write the fitted parameters");
    cal->add_option("--seeds", cal_seeds, "Seeds pooled per evaluation")->check(CLI::PositiveNumber);

    auto* srv = app.add_subcommand("serve", "Run the HTTP task service");
    std::string srv_config, srv_condition, srv_host = "127.0.0.1", srv_log;
    int srv_port = 8080;
    bool cors = false;
    srv->add_option("--config", srv_config, "Experiment JSON")->required();
    srv->add_option("--condition", srv_condition, "Condition to serve (first when omitted)");
    srv->add_option("--host", srv_host, "Bind address");
    srv->add_option("--port", srv_port, "Port");
    srv->add_option("--log", srv_log, "Event log file (replayed if it exists)");
    srv->add_flag("--cors", cors, "Allow cross-origin requests");

    auto* rep = app.add_subcommand("replay", "Rebuild engine state from an event log");
    std::string rep_config, rep_condition, rep_log, rep_worker;
    rep->add_option("--config", rep_config, "Experiment JSON")->required();
    rep->add_option("--condition", rep_condition, "Condition the log belongs to");
    rep->add_option("--log", rep_log, "Event log file")->required();
    rep->add_option("--worker", rep_worker, "Print this worker's status instead of the full state");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) return cmd_generate(gen_seed, min_count, max_count, per_count, gen_out);
        if (*sc) return cmd_score(gold, pred, tau, score_out);
        if (*simc) return cmd_simulate(sim_config, sim_seed, sim_out, sim_baseline);
        if (*an) return cmd_analyze(an_in, an_baseline);
        if (*cal) return cmd_calibrate(cal_target, cal_config, cal_out, cal_seeds);
        if (*srv) return cmd_serve(srv_config, srv_condition, srv_host, srv_port, srv_log, cors);
        if (*rep) return cmd_replay(rep_config, rep_condition, rep_log, rep_worker);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
