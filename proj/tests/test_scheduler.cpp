#include <gtest/gtest.h>

#include <random>
#include <set>

#include "vgold/scheduler.hpp"

using namespace vgold;

namespace {

std::vector<int> gold_ordinals(const SchedulePolicy& p, const std::string& worker, int n) {
    ScheduleState s;
    s.worker_id = worker;
    std::vector<int> out;
    for (int i = 1; i <= n; ++i) {
        if (issue_hit(p, s) == HitKind::Gold) {
            out.push_back(i);
            record_gold_outcome(p, s, 100.0, 100.0);
        }
    }
    return out;
}

} // namespace

TEST(FibRegular, FibonacciOrdinalsForEverySeed) {
    const std::vector<int> expected{1, 2, 3, 5, 8, 13, 21, 34};
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        SchedulePolicy p{FibRegular{}, seed};
        auto g = gold_ordinals(p, "w" + std::to_string(seed), 50);
        EXPECT_EQ(g, expected) << seed;
    }
}

TEST(FibRegular, TenOrElevenGoldsInHundredHits) {
    std::set<int> seen;
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        SchedulePolicy p{FibRegular{}, seed};
        const auto n = static_cast<int>(gold_ordinals(p, "worker", 100).size());
        EXPECT_GE(n, 10);
        EXPECT_LE(n, 11);
        seen.insert(n);
    }
    EXPECT_EQ(seen.size(), 2u);
}

TEST(FibRegular, OneGoldPerTailBlock) {
    SchedulePolicy p{FibRegular{50, 20}, 9};
    const auto g = gold_ordinals(p, "w", 50 + 20 * 10);
    std::vector<int> per_block(10, 0);
    for (int o : g)
        if (o > 50) per_block[(o - 51) / 20]++;
    for (int c : per_block) EXPECT_EQ(c, 1);
}

TEST(Regular, ExactlyOneGoldPerBlock) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        SchedulePolicy p{Regular{5}, seed};
        for (int m = 1; m <= 12; ++m) {
            const auto g = gold_ordinals(p, "w" + std::to_string(seed), 5 * m);
            EXPECT_EQ(static_cast<int>(g.size()), m);
            for (int b = 0; b < m; ++b)
                EXPECT_EQ(std::count_if(g.begin(), g.end(), [b](int o) { return (o - 1) / 5 == b; }), 1);
        }
    }
}

TEST(Regular, PositionVariesAcrossWorkersAndBlocks) {
    SchedulePolicy p{Regular{5}, 3};
    std::set<int> positions;
    for (int w = 0; w < 20; ++w)
        for (int o : gold_ordinals(p, "w" + std::to_string(w), 50)) positions.insert((o - 1) % 5);
    EXPECT_EQ(positions.size(), 5u);
}

TEST(Upfront, FirstKHits) {
    SchedulePolicy p{Upfront{5}, 1};
    EXPECT_EQ(gold_ordinals(p, "w", 40), (std::vector<int>{1, 2, 3, 4, 5}));
    SchedulePolicy none{Upfront{0}, 1};
    EXPECT_TRUE(gold_ordinals(none, "w", 40).empty());
}

TEST(NextHitKind, PureFunctionOfState) {
    SchedulePolicy p{Dynamic{}, 77};
    ScheduleState s;
    s.worker_id = "w";
    s.hit_ordinal = 4;
    const auto k1 = next_hit_kind(p, s);
    EXPECT_EQ(next_hit_kind(p, s), k1);
    EXPECT_EQ(k1, HitKind::Standard);
    s.override_active = true;
    EXPECT_EQ(next_hit_kind(p, s), HitKind::Gold);
}

TEST(Scheduler, OutcomeProtocolEnforced) {
    SchedulePolicy p{Upfront{2}, 1};
    ScheduleState s;
    s.worker_id = "w";
    EXPECT_THROW(record_gold_outcome(p, s, 10, 10), ContractError);
    EXPECT_EQ(issue_hit(p, s), HitKind::Gold);
    EXPECT_THROW(issue_hit(p, s), ContractError);
    EXPECT_EQ(record_gold_outcome(p, s, 10, 10), GoldVerdict::Continue);
}

// Independent restatement of the dynamic rules, driven by random outcome
// histories: a failure makes the next HIT a gold; the worker is blocked once the
// last three golds all failed and the running average is below t_min.
TEST(Dynamic, RandomHistoriesMatchRules) {
    const double t_min = 50.0;
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> score(0.0, 100.0);
    int blocks = 0;
    for (int h = 0; h < 10000; ++h) {
        SchedulePolicy p{Dynamic{FibRegular{50, 20}, t_min}, static_cast<std::uint64_t>(h)};
        ScheduleState s;
        s.worker_id = "w" + std::to_string(h);
        const double fail_rate = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
        std::vector<double> golds;
        int streak = 0;
        bool expect_gold_next = false;
        for (int i = 1; i <= 120; ++i) {
            const HitKind k = issue_hit(p, s);
            if (expect_gold_next) {
                ASSERT_EQ(k, HitKind::Gold) << "history " << h << " hit " << i;
            }
            if (k != HitKind::Gold) continue;
            const bool fail = std::bernoulli_distribution(fail_rate)(rng);
            const double sc = fail ? score(rng) * (t_min - 1e-9) / 100.0 : t_min + score(rng) * (100.0 - t_min) / 100.0;
            golds.push_back(sc);
            double sum = 0.0;
            for (double g : golds) sum += g;
            const double avg = sum / golds.size();
            streak = fail ? streak + 1 : 0;
            const bool should_block = streak >= 3 && avg < t_min;
            const GoldVerdict v = record_gold_outcome(p, s, sc, avg);
            ASSERT_EQ(v == GoldVerdict::Block, should_block) << "history " << h << " gold " << golds.size();
            ASSERT_EQ(s.consecutive_gold_failures, streak);
            if (should_block) {
                ++blocks;
                ASSERT_GE(streak, 3);
                break;
            }
            expect_gold_next = fail;
        }
    }
    EXPECT_GT(blocks, 1000);
}

TEST(Dynamic, BlocksOnThirdConsecutiveFailure) {
    SchedulePolicy p{Dynamic{}, 5};
    ScheduleState s;
    s.worker_id = "w";
    for (int i = 0; i < 2; ++i) {
        ASSERT_EQ(issue_hit(p, s), HitKind::Gold);
        EXPECT_EQ(record_gold_outcome(p, s, 10, 10), GoldVerdict::Continue);
    }
    ASSERT_EQ(issue_hit(p, s), HitKind::Gold);
    EXPECT_EQ(record_gold_outcome(p, s, 10, 10), GoldVerdict::Block);
}

TEST(Dynamic, HighAverageDefersBlock) {
    SchedulePolicy p{Dynamic{}, 5};
    ScheduleState s;
    s.worker_id = "w";
    for (int i = 0; i < 3; ++i) {
        issue_hit(p, s);
        EXPECT_EQ(record_gold_outcome(p, s, 40, 60), GoldVerdict::Continue);
    }
    issue_hit(p, s);
    EXPECT_EQ(record_gold_outcome(p, s, 40, 49), GoldVerdict::Block);
}

TEST(Dynamic, PassClearsOverride) {
    SchedulePolicy p{Dynamic{}, 5};
    ScheduleState s;
    s.worker_id = "w";
    s.hit_ordinal = 4; // a standard ordinal
    s.override_active = true;
    ASSERT_EQ(issue_hit(p, s), HitKind::Gold);
    record_gold_outcome(p, s, 90, 90);
    EXPECT_FALSE(s.override_active);
    EXPECT_EQ(issue_hit(p, s), HitKind::Gold); // ordinal 5 is Fibonacci
    record_gold_outcome(p, s, 90, 90);
    EXPECT_EQ(issue_hit(p, s), HitKind::Standard);
}

TEST(ScheduleJson, RoundTripAndValidation) {
    for (const char* kind : {"upfront", "regular", "fib_regular", "dynamic"}) {
        const auto p = schedule_policy_from_json({{"kind", kind}}, 3);
        EXPECT_EQ(to_json(schedule_policy_from_json(to_json(p), 3)), to_json(p));
    }
    EXPECT_THROW(schedule_policy_from_json({{"kind", "weekly"}}, 1), ConfigError);
    EXPECT_THROW(schedule_policy_from_json({{"kind", "regular"}, {"block", 1}}, 1), ConfigError);
    EXPECT_THROW(schedule_policy_from_json({{"kind", "dynamic"}, {"t_min", 120}}, 1), ConfigError);
}
