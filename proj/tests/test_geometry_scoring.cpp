#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "vgold/scoring.hpp"

using namespace vgold;

namespace {

BoundingBox random_int_box(std::mt19937_64& rng, int extent) {
    std::uniform_int_distribution<int> pos(0, extent - 2);
    const int x = pos(rng), y = pos(rng);
    std::uniform_int_distribution<int> wd(1, extent - x), hd(1, extent - y);
    return {double(x), double(y), double(wd(rng)), double(hd(rng))};
}

std::vector<BoundingBox> random_boxes(std::mt19937_64& rng, int n) {
    std::vector<BoundingBox> v;
    std::uniform_real_distribution<double> pos(0.0, 60.0), size(4.0, 30.0);
    for (int i = 0; i < n; ++i) v.push_back({pos(rng), pos(rng), size(rng), size(rng)});
    return v;
}

} // namespace

TEST(Iou, MatchesUnitCellCounting) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 300; ++i) {
        const auto a = random_int_box(rng, 24), b = random_int_box(rng, 24);
        EXPECT_NEAR(iou(a, b), oracle::pixel_iou(a, b), 1e-9) << i;
    }
}

TEST(Iou, SymmetricAndBounded) {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 500; ++i) {
        const auto v = random_boxes(rng, 2);
        const double ab = iou(v[0], v[1]);
        EXPECT_EQ(ab, iou(v[1], v[0]));
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 1.0);
        EXPECT_DOUBLE_EQ(iou(v[0], v[0]), 1.0);
    }
}

TEST(Iou, ScaleInvariant) {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 200; ++i) {
        const auto v = random_boxes(rng, 2);
        const double k = 0.5 + i * 0.05;
        const BoundingBox a{v[0].x * k, v[0].y * k, v[0].w * k, v[0].h * k};
        const BoundingBox b{v[1].x * k, v[1].y * k, v[1].w * k, v[1].h * k};
        EXPECT_NEAR(iou(a, b), iou(v[0], v[1]), 1e-12);
    }
}

TEST(Iou, TouchingBoxesHaveZeroOverlap) {
    EXPECT_EQ(iou({0, 0, 10, 10}, {10, 0, 10, 10}), 0.0);
    EXPECT_EQ(iou({0, 0, 10, 10}, {30, 30, 5, 5}), 0.0);
    EXPECT_NEAR(iou({0, 0, 10, 10}, {5, 0, 10, 10}), 50.0 / 150.0, 1e-15);
}

TEST(Geometry, ClampKeepsBoxInsideExtent) {
    const auto c = clamp_to_extent({-5, 90, 20, 20}, 100, 100);
    EXPECT_EQ(c, (BoundingBox{0, 90, 15, 10}));
    EXPECT_TRUE(within_extent(c, 100, 100));
    EXPECT_FALSE(within_extent({-5, 90, 20, 20}, 100, 100));
}

TEST(Matching, EqualsPermutationOracle) {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> cnt(0, 6);
    for (int i = 0; i < 300; ++i) {
        const auto gt = random_boxes(rng, cnt(rng));
        const auto wk = random_boxes(rng, cnt(rng));
        EXPECT_EQ(match_boxes(gt, wk).total_iou(), oracle::best_total_iou(gt, wk)) << i;
    }
}

TEST(Matching, BeatsGreedyOnCraftedInstance) {
    // Greedy on the largest IoU first reaches 1.0719; the optimum is 1.5490.
    const std::vector<BoundingBox> gt{{15, 2, 10, 10}, {4, 1, 6, 10}, {8, 2, 7, 10}};
    const std::vector<BoundingBox> wk{{5, 1, 9, 10}, {10, 1, 4, 10}, {16, 4, 10, 10}};
    const auto m = match_boxes(gt, wk);
    EXPECT_NEAR(m.total_iou(), 1.5489864864864864, 1e-12);
    EXPECT_EQ(m.total_iou(), oracle::best_total_iou(gt, wk));
    EXPECT_GT(m.total_iou(), 1.0719 + 0.4);
}

TEST(Matching, OneToOneAndNoZeroOverlapPairs) {
    std::mt19937_64 rng(22);
    for (int i = 0; i < 200; ++i) {
        const auto gt = random_boxes(rng, 5), wk = random_boxes(rng, 4);
        const auto m = match_boxes(gt, wk);
        std::vector<int> used(wk.size(), 0);
        for (const auto& p : m.pairs) {
            EXPECT_GT(p.iou, 0.0);
            EXPECT_EQ(used[p.worker_index]++, 0);
        }
        EXPECT_EQ(m.pairs.size() + m.unmatched_gt.size(), gt.size());
        EXPECT_EQ(m.pairs.size() + m.unmatched_worker.size(), wk.size());
    }
}

TEST(Miou, MissingBoxCountsAsZero) {
    const BoundingBox a{0, 0, 10, 10}, b{50, 50, 10, 10};
    const std::vector<BoundingBox> gt{a, b}, wk{a};
    const auto r = score_boxes(gt, wk);
    EXPECT_EQ(r.miou, 50.0);
    EXPECT_EQ(r.fn_count, 1);
    EXPECT_EQ(r.fp_count, 0);
}

TEST(Miou, ExtraBoxesDoNotLowerTheMean) {
    const std::vector<BoundingBox> gt{{0, 0, 10, 10}};
    const std::vector<BoundingBox> wk{{0, 0, 10, 10}, {40, 40, 5, 5}, {1, 1, 3, 3}};
    const auto r = score_boxes(gt, wk);
    EXPECT_EQ(r.miou, 100.0);
    EXPECT_EQ(r.fp_count, 2);
}

TEST(Miou, EmptySubmissionScoresZero) {
    const std::vector<BoundingBox> gt{{0, 0, 10, 10}, {20, 0, 10, 10}}, wk;
    const auto r = score_boxes(gt, wk);
    EXPECT_EQ(r.miou, 0.0);
    EXPECT_EQ(r.fn_count, 2);
}

TEST(Miou, ShrinkingTowardTruthNeverLowersScore) {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> noise(0.0, 4.0);
    for (int i = 0; i < 100; ++i) {
        const auto gt = random_boxes(rng, 4);
        std::vector<BoundingBox> off;
        for (const auto& g : gt) off.push_back({g.x + noise(rng), g.y + noise(rng), g.w, g.h});
        double prev = -1.0;
        for (double t = 0.0; t <= 1.0001; t += 0.25) {
            std::vector<BoundingBox> wk;
            for (std::size_t k = 0; k < gt.size(); ++k)
                wk.push_back({off[k].x + t * (gt[k].x - off[k].x), off[k].y + t * (gt[k].y - off[k].y), gt[k].w, gt[k].h});
            const double s = score_boxes(gt, wk).miou;
            EXPECT_GE(s, prev - 1e-9);
            prev = s;
        }
        EXPECT_NEAR(prev, 100.0, 1e-9);
    }
}

TEST(Recall, StrictThreshold) {
    ScoreReport r;
    r.per_gt_iou = {0.5, 0.51, 0.9, 0.0};
    EXPECT_DOUBLE_EQ(recall_at(r, 0.5), 0.5);
    Scene s{"s", 100, 100, {{0, 0, 10, 10}}};
    AnnotationSet a{"s", {{0, 0, 10, 10}}, "w", 1.0, {}};
    EXPECT_THROW(recall_at(s, a, 1.0), ContractError);
    EXPECT_DOUBLE_EQ(recall_at(s, a, 0.5), 1.0);
}

TEST(Score, RejectsMismatchedScene) {
    Scene s{"s1", 100, 100, {{0, 0, 10, 10}}};
    AnnotationSet a{"s2", {}, "w", 0.0, {}};
    EXPECT_THROW(score(s, a), ContractError);
}

TEST(SizeBuckets, GroupsByGroundTruthArea) {
    Scene s{"s", 200, 200, {{0, 0, 4, 4}, {10, 10, 10, 10}, {50, 50, 20, 20}}};
    AnnotationSet a{"s", {{0, 0, 4, 4}, {50, 50, 20, 10}}, "w", 0.0, {}};
    const auto rep = score(s, a);
    const std::vector<ScoredScene> scored{{&s, &rep}};
    const std::vector<double> edges{50.0, 200.0};
    const auto b = size_buckets(scored, edges);
    ASSERT_EQ(b.size(), 3u);
    EXPECT_EQ(b[0].count, 1);
    EXPECT_DOUBLE_EQ(*b[0].mean_iou, 100.0);
    EXPECT_EQ(b[1].count, 1);
    EXPECT_DOUBLE_EQ(*b[1].mean_iou, 0.0);
    EXPECT_EQ(b[2].count, 1);
    EXPECT_DOUBLE_EQ(*b[2].mean_iou, 50.0);
    const std::vector<double> bad{200.0, 50.0};
    EXPECT_THROW(size_buckets(scored, bad), ContractError);
}

TEST(Feedback, CarriesAllFields) {
    const std::vector<BoundingBox> gt{{0, 0, 10, 10}, {50, 50, 10, 10}};
    const std::vector<BoundingBox> wk{{0, 0, 10, 10}, {80, 80, 5, 5}};
    const auto rep = score_boxes(gt, wk);
    const auto j = to_json(make_feedback(gt, wk, rep));
    EXPECT_EQ(j["missed"], 1);
    EXPECT_EQ(j["extra"], 1);
    ASSERT_EQ(j["per_box"].size(), 1u);
    EXPECT_DOUBLE_EQ(j["per_box"][0]["iou"].get<double>(), 100.0);
    EXPECT_DOUBLE_EQ(j["average"].get<double>(), 50.0);
    EXPECT_EQ(j["gold_boxes"].size(), 2u);
    EXPECT_EQ(j["worker_boxes"].size(), 2u);
}

TEST(ScoreReportCsv, OneRowPerAnnotation) {
    Corpus c({Scene{"a", 100, 100, {{0, 0, 10, 10}, {20, 20, 10, 10}}}});
    const std::vector<AnnotationSet> anns{{"a", {{0, 0, 10, 10}}, "w1", 3.5, {}}};
    const auto rows = score_annotations(c, anns, 0.5);
    std::ostringstream os;
    write_score_report(rows, os);
    EXPECT_EQ(os.str(),
              "scene_id,worker_id,object_count,miou,recall,fn,fp,elapsed\n"
              "a,w1,2,50.000000,0.500000,1,0,3.500\n");
    const std::vector<AnnotationSet> unknown{{"zz", {}, "w", 0.0, {}}};
    EXPECT_THROW(score_annotations(c, unknown, 0.5), ContractError);
}
