#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dataset.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "rng.hpp"

namespace vgold {

enum class MarkerSource { Oracle, Manual };

inline constexpr int kMaxTargetsPerSubtask = 3;
inline constexpr int kMaxNewBoxesPerIteration = 3;

/// A decomposed HIT: up to three point markers on targets in the parent scene.
struct SubTask {
    std::string parent_scene_id;
    std::vector<Point> markers;
    MarkerSource marker_source = MarkerSource::Oracle;
    /// Ground-truth index each marker was placed for. Requester-side only.
    std::vector<int> source_gt;
};

/// Upstream point-annotation imperfection for manual markers. Jitter is a fraction
/// of the marked box's width and height.
struct ManualMarkerModel {
    double sigma_frac = 0.15;
    double miss_prob = 0.05;
};

/// Splits a scene into ceil(markers/3) sub-tasks. Oracle markers sit on ground-truth
/// centres; manual markers are jittered centres and some are dropped. Markers are
/// ordered left-to-right (then top-to-bottom) before chunking.
inline std::vector<SubTask> decompose(const Scene& scene, MarkerSource variant, const ManualMarkerModel& manual, Rng& rng) {
    struct Marked {
        Point p;
        int gt;
    };
    std::vector<Marked> marks;
    for (std::size_t i = 0; i < scene.gt_boxes.size(); ++i) {
        Point c = scene.gt_boxes[i].center();
        if (variant == MarkerSource::Manual) {
            if (bernoulli(rng, manual.miss_prob)) continue;
            const auto& g = scene.gt_boxes[i];
            c.x = std::clamp(normal(rng, c.x, manual.sigma_frac * g.w), 0.0, static_cast<double>(scene.width));
            c.y = std::clamp(normal(rng, c.y, manual.sigma_frac * g.h), 0.0, static_cast<double>(scene.height));
        }
        marks.push_back({c, static_cast<int>(i)});
    }
    std::stable_sort(marks.begin(), marks.end(), [](const Marked& a, const Marked& b) {
        return a.p.x != b.p.x ? a.p.x < b.p.x : a.p.y < b.p.y;
    });
    std::vector<SubTask> out;
    for (std::size_t i = 0; i < marks.size(); i += kMaxTargetsPerSubtask) {
        SubTask t{scene.scene_id, {}, variant, {}};
        for (std::size_t k = i; k < std::min(marks.size(), i + kMaxTargetsPerSubtask); ++k) {
            t.markers.push_back(marks[k].p);
            t.source_gt.push_back(marks[k].gt);
        }
        out.push_back(std::move(t));
    }
    return out;
}

/// Oracle decomposition needs no randomness.
inline std::vector<SubTask> decompose(const Scene& scene, MarkerSource variant) {
    if (variant != MarkerSource::Oracle) throw ContractError("manual decomposition needs a seeded rng");
    Rng unused(0);
    return decompose(scene, variant, ManualMarkerModel{}, unused);
}

struct ContributedBox {
    BoundingBox box;
    std::string contributor;
    friend bool operator==(const ContributedBox&, const ContributedBox&) = default;
};

/// Shared state of one image passed between workers in the iterative workflow.
struct IterationState {
    std::string scene_id;
    std::vector<ContributedBox> boxes_so_far;
    bool completed = false;
    int iteration_index = 0;

    friend bool operator==(const IterationState&, const IterationState&) = default;
};

struct AddBoxes {
    std::vector<BoundingBox> boxes;
};
struct Adjust {
    int index = 0;
    BoundingBox box;
};
struct Complete {};

using Contribution = std::variant<AddBoxes, Adjust, Complete>;

/// One pass of the iterative workflow: add up to three boxes, adjust one, or
/// declare the image complete.
inline IterationState iterate(const IterationState& state, const Contribution& c, const std::string& contributor) {
    if (state.completed) throw ContractError("iteration on completed scene " + state.scene_id);
    IterationState next = state;
    if (const auto* add = std::get_if<AddBoxes>(&c)) {
        if (add->boxes.size() > static_cast<std::size_t>(kMaxNewBoxesPerIteration))
            throw ContractError("at most 3 new boxes per iteration");
        for (const auto& b : add->boxes) {
            if (!b.valid()) throw ContractError("invalid box in iteration");
            next.boxes_so_far.push_back({b, contributor});
        }
    } else if (const auto* adj = std::get_if<Adjust>(&c)) {
        if (adj->index < 0 || adj->index >= static_cast<int>(next.boxes_so_far.size()))
            throw ContractError("adjust index out of range");
        if (!adj->box.valid()) throw ContractError("invalid box in adjustment");
        next.boxes_so_far[static_cast<std::size_t>(adj->index)] = {adj->box, contributor};
    } else {
        next.completed = true;
    }
    next.iteration_index += 1;
    return next;
}

using WorkflowPart = std::variant<AnnotationSet, IterationState>;

/// Unions the boxes of sub-task results or a finished iteration chain into one
/// whole-scene annotation, keeping who drew each box. No deduplication.
inline AnnotationSet reassemble(const Scene& scene, std::span<const WorkflowPart> parts) {
    AnnotationSet out;
    out.scene_id = scene.scene_id;
    std::vector<std::string> workers;
    auto note_worker = [&](const std::string& w) {
        if (std::find(workers.begin(), workers.end(), w) == workers.end()) workers.push_back(w);
    };
    for (const auto& part : parts) {
        if (const auto* a = std::get_if<AnnotationSet>(&part)) {
            if (a->scene_id != scene.scene_id) throw ContractError("part for " + a->scene_id + " in " + scene.scene_id);
            for (std::size_t i = 0; i < a->boxes.size(); ++i) {
                out.boxes.push_back(a->boxes[i]);
                out.box_contributors.push_back(i < a->box_contributors.size() ? a->box_contributors[i] : a->worker_id);
            }
            out.elapsed += a->elapsed;
            note_worker(a->worker_id);
        } else {
            const auto& s = std::get<IterationState>(part);
            if (s.scene_id != scene.scene_id) throw ContractError("part for " + s.scene_id + " in " + scene.scene_id);
            for (const auto& cb : s.boxes_so_far) {
                out.boxes.push_back(cb.box);
                out.box_contributors.push_back(cb.contributor);
                note_worker(cb.contributor);
            }
        }
    }
    for (std::size_t i = 0; i < workers.size(); ++i) out.worker_id += (i ? "+" : "") + workers[i];
    return out;
}

} // namespace vgold
