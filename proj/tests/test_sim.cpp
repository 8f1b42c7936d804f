#include <gtest/gtest.h>

#include <algorithm>

#include "vgold/scoring.hpp"
#include "vgold/sim.hpp"
#include "vgold/stats.hpp"

using namespace vgold;
using namespace vgold::sim;

namespace {

SimWorker typical() {
    SimWorker w;
    w.worker_id = "t";
    w.skill = 0.75;
    w.diligence = 0.5;
    w.gamma = 0.03;
    w.small_penalty = 0.25;
    w.learn_rate = 0.2;
    w.potential = 0.9;
    return w;
}

double mean_miou(const SimWorker& w, const SimWorkerState& s, const Scene& sc, const HitContext& ctx,
                 const BehaviorModel& b, int trials, std::uint64_t seed) {
    double sum = 0.0;
    for (int t = 0; t < trials; ++t) {
        Rng rng = make_rng(seed, "trial", t);
        sum += score(sc, simulate_hit(w, s, sc, ctx, b, rng).annotation).miou;
    }
    return sum / trials;
}

Scene fixed_size_scene(int n) {
    Scene s{"f" + std::to_string(n), 1024, 768, {}};
    for (int i = 0; i < n; ++i) s.gt_boxes.push_back({20.0 + 70.0 * (i % 14), 20.0 + 70.0 * (i / 14), 60, 60});
    return s;
}

} // namespace

TEST(SimWorkerDraw, DeterministicAndInRange) {
    const PopulationModel m;
    const auto a = draw_population(5, 200, m), b = draw_population(5, 200, m);
    for (std::size_t i = 0; i < a.workers.size(); ++i) {
        const auto& w = a.workers[i];
        EXPECT_EQ(w.skill, b.workers[i].skill);
        EXPECT_EQ(w.capacity, b.workers[i].capacity);
        EXPECT_GE(w.skill, 0.0);
        EXPECT_LE(w.skill, 1.0);
        EXPECT_GE(w.diligence, 0.0);
        EXPECT_LE(w.diligence, 1.0);
        EXPECT_GE(w.gamma, 0.0);
        EXPECT_GE(w.small_penalty, 0.0);
        EXPECT_GE(w.learn_rate, 0.0);
        EXPECT_LE(w.learn_rate, 1.0);
        EXPECT_GE(w.capacity, 5);
        EXPECT_LE(w.capacity, m.capacity_max);
        if (w.spam) {
            EXPECT_EQ(w.learn_rate, 0.0);
        }
    }
    EXPECT_NE(draw_population(6, 1, m).workers[0].skill, a.workers[0].skill);
}

TEST(SimWorkerDraw, ParticipationIsHeavyTailed) {
    const auto pop = draw_population(11, 500, PopulationModel{});
    std::vector<int> caps;
    for (const auto& w : pop.workers) caps.push_back(w.capacity);
    std::sort(caps.rbegin(), caps.rend());
    long top = 0, all = 0;
    for (std::size_t i = 0; i < caps.size(); ++i) {
        all += caps[i];
        if (i < caps.size() / 5) top += caps[i];
    }
    EXPECT_GT(static_cast<double>(top) / all, 0.5);
}

TEST(SimHit, NoiselessWorkerIsPerfect) {
    SimWorker w = typical();
    w.skill = 1.0;
    w.diligence = 1.0;
    w.gamma = 0.0;
    w.small_penalty = 0.0;
    BehaviorModel b;
    b.base_miss = 0.0;
    b.edge_jitter_px = 0.0;
    const Scene sc = fixed_size_scene(9);
    Rng rng(3);
    const auto out = simulate_hit(w, initial_state(w), sc, HitContext{}, b, rng);
    EXPECT_EQ(score(sc, out.annotation).miou, 100.0);
    EXPECT_GT(out.elapsed, 0.0);
}

TEST(SimHit, SpamWorkersScoreBelowTwentyFive) {
    SimWorker w = typical();
    w.spam = true;
    const Corpus c = generate_corpus(7);
    double sum = 0.0;
    int n = 0;
    for (int rep = 0; rep < 8; ++rep)
        for (const auto& sc : c.scenes()) {
            Rng rng = make_rng(1, "spam", rep, n);
            sum += score(sc, simulate_hit(w, initial_state(w), sc, HitContext{}, BehaviorModel{}, rng).annotation).miou;
            ++n;
        }
    EXPECT_GE(n, 1000);
    EXPECT_LT(sum / n, 25.0);
}

TEST(SimHit, DeterministicUnderSeed) {
    const SimWorker w = typical();
    const Scene sc = fixed_size_scene(6);
    Rng a(9), b(9);
    const auto x = simulate_hit(w, initial_state(w), sc, HitContext{}, BehaviorModel{}, a);
    const auto y = simulate_hit(w, initial_state(w), sc, HitContext{}, BehaviorModel{}, b);
    EXPECT_EQ(x.annotation.boxes, y.annotation.boxes);
    EXPECT_EQ(x.elapsed, y.elapsed);
}

TEST(SimProperties, QualityDeclinesWithObjectCount) {
    const SimWorker w = typical();
    std::vector<double> ns, means;
    for (int n = 1; n <= 14; ++n) {
        ns.push_back(n);
        means.push_back(mean_miou(w, initial_state(w), fixed_size_scene(n), HitContext{}, BehaviorModel{}, 1000, 77));
    }
    const double mx = stats::mean(ns), my = stats::mean(means);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < ns.size(); ++i) sxy += (ns[i] - mx) * (means[i] - my), sxx += (ns[i] - mx) * (ns[i] - mx);
    EXPECT_LT(sxy / sxx, 0.0);
    EXPECT_LT(stats::spearman(ns, means), -0.9);
}

TEST(SimProperties, SmallObjectsScoreLower) {
    const SimWorker w = typical();
    const std::vector<double> sides{12, 24, 40, 64, 100, 160};
    std::vector<double> means;
    for (double side : sides) {
        Scene sc{"sz", 1024, 768, {{300, 300, side, side}}};
        means.push_back(mean_miou(w, initial_state(w), sc, HitContext{}, BehaviorModel{}, 2000, 5));
    }
    for (std::size_t i = 1; i < means.size(); ++i) EXPECT_GT(means[i], means[i - 1]) << sides[i];
}

TEST(SimProperties, GoldFeedbackImprovesQuality) {
    const SimWorker w = typical();
    const Scene sc = fixed_size_scene(8);
    HitOutcome fb;
    fb.feedback_shown = true;
    double prev = -1.0;
    std::vector<double> first, last;
    for (int k : {0, 1, 3, 6, 10}) {
        SimWorkerState s = initial_state(w);
        for (int i = 0; i < k; ++i) observe(w, s, 1, fb, BehaviorModel{});
        const double m = mean_miou(w, s, sc, HitContext{}, BehaviorModel{}, 1500, 13);
        EXPECT_GE(m, prev - 1e-9) << k;
        prev = m;
    }
    for (int seed = 0; seed < 20; ++seed) {
        SimWorkerState s0 = initial_state(w), s10 = initial_state(w);
        for (int i = 0; i < 10; ++i) observe(w, s10, 1, fb, BehaviorModel{});
        first.push_back(mean_miou(w, s0, sc, HitContext{}, BehaviorModel{}, 30, 1000 + seed));
        last.push_back(mean_miou(w, s10, sc, HitContext{}, BehaviorModel{}, 30, 5000 + seed));
    }
    EXPECT_LT(stats::mann_whitney(first, last).p, 0.01);
}

TEST(SimProperties, SpamIgnoresFeedback) {
    SimWorker w = typical();
    w.spam = true;
    w.learn_rate = 0.0;
    SimWorkerState s = initial_state(w);
    HitOutcome fb;
    fb.feedback_shown = true;
    const double before = s.effective_skill;
    for (int i = 0; i < 10; ++i) observe(w, s, 3, fb, BehaviorModel{});
    EXPECT_EQ(s.effective_skill, before);
    EXPECT_EQ(s.gold_exposures, 0);
    const Scene sc = fixed_size_scene(5);
    EXPECT_EQ(mean_miou(w, initial_state(w), sc, HitContext{}, BehaviorModel{}, 200, 3),
              mean_miou(w, s, sc, HitContext{}, BehaviorModel{}, 200, 3));
}

TEST(SimProperties, ConsequencesSharpenFocus) {
    const SimWorker w = typical();
    const Scene sc = fixed_size_scene(12);
    HitContext tiered;
    tiered.consequence = ConsequenceMode::Tiered;
    EXPECT_GT(mean_miou(w, initial_state(w), sc, tiered, BehaviorModel{}, 1500, 21),
              mean_miou(w, initial_state(w), sc, HitContext{}, BehaviorModel{}, 1500, 21));
}

TEST(SimProperties, ContingentPayCutsEffort) {
    const SimWorker base = typical();
    SimWorker wary = base;
    wary.trust = 0.1;
    const Scene sc = fixed_size_scene(10);
    HitContext ptb;
    ptb.contingent_pay = true;
    ptb.guaranteed = Cents{4};
    EXPECT_LT(mean_miou(wary, initial_state(wary), sc, ptb, BehaviorModel{}, 1000, 8),
              mean_miou(base, initial_state(base), sc, HitContext{}, BehaviorModel{}, 1000, 8));
}

TEST(SimProperties, TaskTimeSublinearInCount) {
    const SimWorker w = typical();
    BehaviorModel b;
    b.time_log_sd = 0.0;
    Rng rng(1);
    const auto t1 = simulate_hit(w, initial_state(w), fixed_size_scene(1), HitContext{}, b, rng).elapsed;
    const auto t10 = simulate_hit(w, initial_state(w), fixed_size_scene(10), HitContext{}, b, rng).elapsed;
    EXPECT_GT(t10, t1);
    EXPECT_LT(t10 / 10.0, t1);
}

TEST(SimIterative, CompletesOrContributes) {
    const SimWorker w = typical();
    const Scene sc = fixed_size_scene(6);
    IterationState st{sc.scene_id, {}, false, 0};
    int steps = 0;
    while (!st.completed && steps < 50) {
        Rng rng = make_rng(4, "iter", steps);
        const auto out = simulate_hit(w, initial_state(w), sc, st, HitContext{}, BehaviorModel{}, rng);
        ASSERT_TRUE(out.contribution.has_value());
        st = iterate(st, *out.contribution, w.worker_id);
        ++steps;
    }
    EXPECT_TRUE(st.completed);
}

TEST(SimDecomposed, OracleMarkersResolveToTargets) {
    SimWorker w = typical();
    w.skill = 1.0;
    w.diligence = 1.0;
    w.gamma = 0.0;
    w.small_penalty = 0.0;
    BehaviorModel b;
    b.base_miss = 0.0;
    b.edge_jitter_px = 0.0;
    b.marker_skip = 0.0;
    const Scene sc = fixed_size_scene(7);
    std::vector<WorkflowPart> parts;
    for (const auto& t : decompose(sc, MarkerSource::Oracle)) {
        Rng rng(2);
        parts.push_back(simulate_hit(w, initial_state(w), sc, t, HitContext{}, b, rng).annotation);
    }
    EXPECT_EQ(score(sc, reassemble(sc, parts)).miou, 100.0);
}

TEST(Abandonment, BlockedAlwaysLeaves) {
    const SimWorker w = typical();
    SimWorkerState s = initial_state(w);
    s.blocked = true;
    for (int i = 0; i < 50; ++i) {
        Rng rng(i);
        EXPECT_EQ(decide_continue(w, s, BehaviorModel{}, rng), Decision::Abandon);
    }
}

TEST(Abandonment, HazardRisesWithWarningsTierAndUnderpay) {
    SimWorker w = typical();
    w.skill = 0.3;
    const BehaviorModel b;
    SimWorkerState s = initial_state(w);
    const double h0 = abandon_hazard(w, s, b);
    s.warnings = 2;
    const double h2 = abandon_hazard(w, s, b);
    EXPECT_GT(h2, h0);
    s.has_rating = true;
    s.tier = Tier::AtRisk;
    EXPECT_GT(abandon_hazard(w, s, b), h2);
    SimWorkerState u = initial_state(w);
    u.last_pay_ratio = 0.25;
    EXPECT_GT(abandon_hazard(w, u, b), h0);
}

TEST(Abandonment, CapacityEndsSession) {
    SimWorker w = typical();
    w.capacity = 3;
    w.dropout_propensity = 0.0;
    SimWorkerState s = initial_state(w);
    s.hits_done = 3;
    Rng rng(1);
    EXPECT_EQ(decide_continue(w, s, BehaviorModel{}, rng), Decision::Abandon);
}

TEST(SimParamsJson, RoundTripAndValidation) {
    SimParams p;
    p.population.skill_mean = 0.7;
    p.behavior.piece_rate_rush = 0.2;
    const auto back = sim_params_from_json(to_json(p));
    EXPECT_EQ(to_json(back), to_json(p));
    EXPECT_THROW(sim_params_from_json({{"population", {{"skil_mean", 0.5}}}}), ConfigError);
    EXPECT_THROW(sim_params_from_json({{"behavior", {{"time_exponent", 1.2}}}}), ConfigError);
    EXPECT_THROW(sim_params_from_json({{"population", {{"skill_mean", 1.0}}}}), ConfigError);
}
