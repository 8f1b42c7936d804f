#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "assignment.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "geometry.hpp"

namespace vgold {

struct MatchPair {
    int gt_index = 0;
    int worker_index = 0;
    double iou = 0.0;
    friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

/// Outcome of pairing worker boxes with ground truth. Pairs are ordered by gt_index.
struct MatchResult {
    std::vector<MatchPair> pairs;
    std::vector<int> unmatched_gt;     // false negatives
    std::vector<int> unmatched_worker; // false positives

    /// Sum of matched IoUs, accumulated in gt order.
    [[nodiscard]] double total_iou() const {
        double t = 0.0;
        for (const auto& p : pairs) t += p.iou;
        return t;
    }
};

struct ScoreReport {
    MatchResult match;
    double miou = 0.0;              // percent, [0, 100]
    std::vector<double> per_gt_iou; // fraction per gt box, 0 for misses
    int fn_count = 0;
    int fp_count = 0;
};

/// Optimal one-to-one matching maximising total IoU; pairs with zero overlap are
/// never reported as matches.
inline MatchResult match_boxes(std::span<const BoundingBox> gt, std::span<const BoundingBox> worker) {
    MatchResult r;
    WeightMatrix w(gt.size(), worker.size());
    for (std::size_t i = 0; i < gt.size(); ++i)
        for (std::size_t j = 0; j < worker.size(); ++j) w(i, j) = iou(gt[i], worker[j]);
    const auto row_to_col = max_weight_assignment(w);
    std::vector<char> worker_used(worker.size(), 0);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const int j = row_to_col[i];
        if (j >= 0 && w(i, static_cast<std::size_t>(j)) > 0.0) {
            r.pairs.push_back({static_cast<int>(i), j, w(i, static_cast<std::size_t>(j))});
            worker_used[static_cast<std::size_t>(j)] = 1;
        } else {
            r.unmatched_gt.push_back(static_cast<int>(i));
        }
    }
    for (std::size_t j = 0; j < worker.size(); ++j)
        if (!worker_used[j]) r.unmatched_worker.push_back(static_cast<int>(j));
    return r;
}

/// Scores boxes against an explicit ground-truth list (used for subtasks as well as scenes).
inline ScoreReport score_boxes(std::span<const BoundingBox> gt, std::span<const BoundingBox> worker) {
    ScoreReport rep;
    rep.match = match_boxes(gt, worker);
    rep.per_gt_iou.assign(gt.size(), 0.0);
    for (const auto& p : rep.match.pairs) rep.per_gt_iou[static_cast<std::size_t>(p.gt_index)] = p.iou;
    rep.fn_count = static_cast<int>(rep.match.unmatched_gt.size());
    rep.fp_count = static_cast<int>(rep.match.unmatched_worker.size());
    if (!gt.empty()) {
        double sum = 0.0;
        for (double v : rep.per_gt_iou) sum += v;
        rep.miou = 100.0 * sum / static_cast<double>(gt.size());
    }
    return rep;
}

/// mIoU over the scene's ground truth; unmatched ground truth counts as IoU 0 and
/// extra boxes are reported but do not lower the mean.
inline ScoreReport score(const Scene& scene, const AnnotationSet& ann) {
    if (ann.scene_id != scene.scene_id)
        throw ContractError("annotation for " + ann.scene_id + " scored against scene " + scene.scene_id);
    return score_boxes(scene.gt_boxes, ann.boxes);
}

inline double recall_at(const ScoreReport& report, double tau) {
    if (report.per_gt_iou.empty()) return 0.0;
    const auto hits = std::count_if(report.per_gt_iou.begin(), report.per_gt_iou.end(), [tau](double v) { return v > tau; });
    return static_cast<double>(hits) / static_cast<double>(report.per_gt_iou.size());
}

inline double recall_at(const Scene& scene, const AnnotationSet& ann, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ContractError("recall threshold must lie in (0,1)");
    return recall_at(score(scene, ann), tau);
}

struct SizeBucket {
    double lower = 0.0; // inclusive pixel area
    double upper = std::numeric_limits<double>::infinity();
    int count = 0;
    std::optional<double> mean_iou; // percent; empty when the bucket holds no boxes
};

struct ScoredScene {
    const Scene* scene = nullptr;
    const ScoreReport* report = nullptr;
};

/// Mean per-box IoU grouped by ground-truth box area. `edges` must be strictly
/// increasing; n edges give n+1 buckets.
inline std::vector<SizeBucket> size_buckets(std::span<const ScoredScene> reports, std::span<const double> edges) {
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i] > edges[i - 1])) throw ContractError("size bucket edges must be strictly increasing");
    std::vector<SizeBucket> buckets(edges.size() + 1);
    std::vector<double> sums(buckets.size(), 0.0);
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        buckets[b].lower = b == 0 ? 0.0 : edges[b - 1];
        buckets[b].upper = b < edges.size() ? edges[b] : std::numeric_limits<double>::infinity();
    }
    for (const auto& sr : reports) {
        const auto& gt = sr.scene->gt_boxes;
        for (std::size_t i = 0; i < gt.size(); ++i) {
            const double area = gt[i].area();
            const auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), area) - edges.begin());
            buckets[b].count += 1;
            sums[b] += sr.report->per_gt_iou[i];
        }
    }
    for (std::size_t b = 0; b < buckets.size(); ++b)
        if (buckets[b].count > 0) buckets[b].mean_iou = 100.0 * sums[b] / buckets[b].count;
    return buckets;
}

/// What a worker sees after submitting a visible gold: misses, extra boxes, per-box
/// accuracy for each true positive, the image average and the answer key overlay.
struct GoldFeedback {
    int missed = 0;
    int extra = 0;
    std::vector<MatchPair> per_box;
    double average = 0.0;
    std::vector<BoundingBox> gold_boxes;
    std::vector<BoundingBox> worker_boxes;
};

inline GoldFeedback make_feedback(std::span<const BoundingBox> gt, std::span<const BoundingBox> worker,
                                  const ScoreReport& rep) {
    return {rep.fn_count,
            rep.fp_count,
            rep.match.pairs,
            rep.miou,
            std::vector<BoundingBox>(gt.begin(), gt.end()),
            std::vector<BoundingBox>(worker.begin(), worker.end())};
}

inline nlohmann::json to_json(const GoldFeedback& f) {
    auto per_box = nlohmann::json::array();
    for (const auto& p : f.per_box)
        per_box.push_back({{"gt_index", p.gt_index}, {"worker_index", p.worker_index}, {"iou", 100.0 * p.iou}});
    return {{"missed", f.missed},
            {"extra", f.extra},
            {"per_box", per_box},
            {"average", f.average},
            {"gold_boxes", detail::boxes_to_json(f.gold_boxes)},
            {"worker_boxes", detail::boxes_to_json(f.worker_boxes)}};
}

/// One row of the `score` report.
struct ScoredAnnotation {
    std::string scene_id;
    std::string worker_id;
    int object_count = 0;
    double miou = 0.0;
    double recall = 0.0;
    int fn_count = 0;
    int fp_count = 0;
    double elapsed = 0.0;
};

inline std::vector<ScoredAnnotation> score_annotations(const Corpus& corpus, std::span<const AnnotationSet> anns,
                                                       double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ContractError("recall threshold must lie in (0,1)");
    std::vector<ScoredAnnotation> rows;
    for (const auto& a : anns) {
        const Scene* sc = corpus.find(a.scene_id);
        if (!sc) throw ContractError("annotation references unknown scene " + a.scene_id);
        const auto rep = score(*sc, a);
        rows.push_back({a.scene_id, a.worker_id, sc->object_count(), rep.miou, recall_at(rep, tau), rep.fn_count,
                        rep.fp_count, a.elapsed});
    }
    return rows;
}

inline void write_score_report(std::span<const ScoredAnnotation> rows, std::ostream& out) {
    out << "scene_id,worker_id,object_count,miou,recall,fn,fp,elapsed\n";
    char buf[64];
    for (const auto& r : rows) {
        out << r.scene_id << ',' << r.worker_id << ',' << r.object_count << ',';
        std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.miou, r.recall);
        out << buf << ',' << r.fn_count << ',' << r.fp_count << ',';
        std::snprintf(buf, sizeof buf, "%.3f", r.elapsed);
        out << buf << '\n';
    }
}

} // namespace vgold
