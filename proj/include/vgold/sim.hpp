#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "ledger.hpp"
#include "money.hpp"
#include "rng.hpp"
#include "workflow.hpp"

namespace vgold::sim {

/// Distribution of worker traits.
struct PopulationModel {
    double skill_mean = 0.78125;
    double skill_concentration = 8.0;
    double diligence_mean = 0.6;
    double diligence_concentration = 6.0;
    double gamma_median = 0.015;
    double gamma_log_sd = 0.5;
    double small_penalty_mean = 0.25;
    double learn_rate_max = 0.3;
    double potential_frac = 0.5; // share of the gap to perfect skill a worker can close
    double spam_rate = 0.02;
    double dropout_mean = 0.01;
    double speed_median = 36.0; // seconds for a one-object image
    double speed_log_sd = 0.3;
    double capacity_min = 5.0;
    double capacity_exponent = 0.8;
    int capacity_max = 140;
    double trust_mean = 0.72;
    double trust_concentration = 6.0;
};

/// How traits turn into annotations, times, and reactions to the task design.
struct BehaviorModel {
    double base_miss = 0.02;
    double edge_noise = 0.15;    // relative edge sd at zero skill
    double edge_jitter_px = 1.0; // absolute pointing error
    double small_side_px = 48.0; // boxes with a smaller side count as small
    double carry_decay = 0.6;    // weight of the previous load in the fatigue average
    double carry_weight = 1.0;
    double vigilance_decay = 0.03;
    double vigilance_miss = 0.08;
    double vigilance_noise = 0.5;
    double focus_warning = 0.1;
    double focus_bonus = 0.1;
    double focus_tiered = 0.556640625;
    double time_exponent = 0.8;
    double time_log_sd = 0.25;
    double iter_complete_base = 0.17;
    double iter_complete_slope = 0.08;
    double iter_adjust_prob = 0.3;
    double marker_skip = 0.12;
    double hazard_warning = 0.03;
    double hazard_at_risk = 0.05;
    double hazard_underpay = 0.02;
    double fair_cents_per_box = 4.0;
    double piece_rate_rush = 0.35; // load sensitivity and edge noise boost under per-object pricing
};

struct SimParams {
    PopulationModel population;
    BehaviorModel behavior;
};

/// Static traits of one simulated annotator.
struct SimWorker {
    std::string worker_id;
    double skill = 0.6;
    double diligence = 0.6;
    double gamma = 0.03;
    double small_penalty = 0.25;
    double learn_rate = 0.1;
    double potential = 0.8;
    double dropout_propensity = 0.02;
    bool spam = false;
    double base_speed = 36.0;
    int capacity = 20;
    double trust = 0.75;
};

/// What a worker carries from HIT to HIT.
struct SimWorkerState {
    double effective_skill = 0.6;
    double vigilance = 1.0;
    double carry = 0.0; // running average of recent loads, 0..1
    int hits_done = 0;
    int gold_exposures = 0;
    int warnings = 0;
    bool has_rating = false;
    Tier tier = Tier::Standard;
    bool blocked = false;
    double last_pay_ratio = 1.0; // realised pay per box over the fair rate
};

inline SimWorkerState initial_state(const SimWorker& w) {
    SimWorkerState s;
    s.effective_skill = w.skill;
    return s;
}

/// The task design as the worker experiences it.
struct HitContext {
    ConsequenceMode consequence = ConsequenceMode::None;
    bool contingent_pay = false;
    Cents guaranteed{16};
    Cents per_correct{4};
    bool piece_rate = false; // advertised price scales with the object count
};

struct SimOutput {
    AnnotationSet annotation;
    double elapsed = 0.0;
    std::optional<Contribution> contribution; // iterative HITs
};

/// What the worker learns from one submission round-trip.
struct HitOutcome {
    bool feedback_shown = false;
    ActionKind action = ActionKind::None;
    BannerState banner;
    Cents paid_now{0};
    int effort_boxes = 1;
};

enum class Decision { Continue, Abandon };

// ---------------------------------------------------------------------------

inline SimWorker draw_worker(std::uint64_t seed, int index, const PopulationModel& m) {
    auto rng = make_rng(seed, "worker", index);
    SimWorker w;
    char id[16];
    std::snprintf(id, sizeof id, "w%04d", index);
    w.worker_id = id;
    w.skill = beta_mean_conc(rng, m.skill_mean, m.skill_concentration);
    w.diligence = beta_mean_conc(rng, m.diligence_mean, m.diligence_concentration);
    w.gamma = m.gamma_median * std::exp(normal(rng, 0.0, m.gamma_log_sd));
    w.small_penalty = m.small_penalty_mean * std::exp(normal(rng, 0.0, 0.3));
    w.learn_rate = m.learn_rate_max * uniform01(rng);
    w.potential = w.skill + (1.0 - w.skill) * m.potential_frac;
    w.dropout_propensity = m.dropout_mean > 0.0 ? beta_mean_conc(rng, m.dropout_mean, 20.0) : 0.0;
    w.spam = bernoulli(rng, m.spam_rate);
    w.base_speed = m.speed_median * std::exp(normal(rng, 0.0, m.speed_log_sd));
    const double u = std::max(1e-12, uniform01(rng));
    const double cap = m.capacity_min * std::pow(u, -1.0 / m.capacity_exponent);
    w.capacity = static_cast<int>(std::min<double>(m.capacity_max, std::floor(cap)));
    w.trust = beta_mean_conc(rng, m.trust_mean, m.trust_concentration);
    if (w.spam) {
        w.learn_rate = 0.0;
        w.potential = w.skill;
    }
    return w;
}

struct SimPopulation {
    std::uint64_t seed = 0;
    std::vector<SimWorker> workers;
};

inline SimPopulation draw_population(std::uint64_t seed, int count, const PopulationModel& m) {
    SimPopulation p{seed, {}};
    for (int i = 0; i < count; ++i) p.workers.push_back(draw_worker(seed, i, m));
    return p;
}

namespace detail {

inline double focus_for(const HitContext& ctx, const BehaviorModel& b) {
    switch (ctx.consequence) {
    case ConsequenceMode::Warning: return b.focus_warning;
    case ConsequenceMode::Bonus: return b.focus_bonus;
    case ConsequenceMode::Tiered: return b.focus_tiered;
    case ConsequenceMode::None: return 0.0;
    }
    return 0.0;
}

inline double effective_gamma(const SimWorker& w, const SimWorkerState& s, const HitContext& ctx, const BehaviorModel& b) {
    return w.gamma * (1.0 - focus_for(ctx, b)) * (1.0 + b.carry_weight * s.carry) *
           (ctx.piece_rate ? 1.0 + b.piece_rate_rush : 1.0);
}

inline double small_factor(const BoundingBox& gt, const BehaviorModel& b) {
    const double side = std::sqrt(gt.area());
    return std::clamp(1.0 - side / b.small_side_px, 0.0, 1.0);
}

inline BoundingBox random_box(Rng& rng, int width, int height) {
    const double w = 10.0 + uniform01(rng) * 0.3 * width;
    const double h = 10.0 + uniform01(rng) * 0.3 * height;
    return {uniform01(rng) * (width - w), uniform01(rng) * (height - h), w, h};
}

inline std::vector<BoundingBox> spam_boxes(Rng& rng, int width, int height, int max_boxes) {
    const int k = 1 + static_cast<int>(uniform01(rng) * max_boxes);
    std::vector<BoundingBox> out;
    for (int i = 0; i < std::min(k, max_boxes); ++i) out.push_back(random_box(rng, width, height));
    return out;
}

inline double elapsed_for(const SimWorker& w, int load, const BehaviorModel& b, Rng& rng) {
    return w.base_speed * std::pow(std::max(1, load), b.time_exponent) * std::exp(normal(rng, 0.0, b.time_log_sd));
}

} // namespace detail

/// Probability that a worker overlooks one ground-truth box in a HIT with `load` objects.
inline double miss_probability(const SimWorker& w, const SimWorkerState& s, const BoundingBox& gt, int load,
                               const HitContext& ctx, const BehaviorModel& b) {
    const double g = detail::effective_gamma(w, s, ctx, b);
    const double p = b.base_miss + g * (load - 1) * (1.0 - w.diligence) + w.small_penalty * detail::small_factor(gt, b) +
                     b.vigilance_miss * (1.0 - s.vigilance);
    return std::clamp(p, 0.0, 0.95);
}

/// A drawn box around `gt`: each edge moves by noise proportional to the box side.
inline BoundingBox noisy_box(const SimWorker& w, const SimWorkerState& s, const BoundingBox& gt, int load,
                             const HitContext& ctx, const BehaviorModel& b, int width, int height, Rng& rng) {
    const double g = detail::effective_gamma(w, s, ctx, b);
    const double rel = b.edge_noise * (1.0 - s.effective_skill) * (1.0 + g * (load - 1)) *
                       (1.0 + b.vigilance_noise * (1.0 - s.vigilance)) * (ctx.piece_rate ? 1.0 + b.piece_rate_rush : 1.0);
    const double sx = rel * gt.w + b.edge_jitter_px;
    const double sy = rel * gt.h + b.edge_jitter_px;
    double l = normal(rng, gt.x, sx), r = normal(rng, gt.right(), sx);
    double t = normal(rng, gt.y, sy), bo = normal(rng, gt.bottom(), sy);
    if (r - l < 2.0) r = l + 2.0;
    if (bo - t < 2.0) bo = t + 2.0;
    const BoundingBox c = clamp_to_extent(box_from_edges(l, t, r, bo), width, height);
    return c.valid() ? c : gt;
}

/// Annotates the given targets. Under contingent pay, boxes beyond what the
/// guaranteed base covers are skipped unless the worker trusts the bonus.
inline std::vector<BoundingBox> annotate_targets(const SimWorker& w, const SimWorkerState& s,
                                                 std::vector<BoundingBox> targets, int load, const HitContext& ctx,
                                                 const BehaviorModel& b, int width, int height, Rng& rng) {
    std::shuffle(targets.begin(), targets.end(), rng);
    const long covered = ctx.contingent_pay && ctx.per_correct.value() > 0
                             ? std::max<long>(1, static_cast<long>(ctx.guaranteed.value() / ctx.per_correct.value()))
                             : static_cast<long>(targets.size());
    std::vector<BoundingBox> out;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const bool distrust_skip = static_cast<long>(i) >= covered && !bernoulli(rng, w.trust);
        const bool missed = bernoulli(rng, miss_probability(w, s, targets[i], load, ctx, b));
        if (distrust_skip || missed) continue;
        out.push_back(noisy_box(w, s, targets[i], load, ctx, b, width, height, rng));
    }
    return out;
}

/// One whole-image HIT.
inline SimOutput simulate_hit(const SimWorker& w, const SimWorkerState& s, const Scene& scene, const HitContext& ctx,
                              const BehaviorModel& b, Rng& rng) {
    SimOutput out;
    out.annotation.scene_id = scene.scene_id;
    out.annotation.worker_id = w.worker_id;
    const int n = scene.object_count();
    if (w.spam) {
        out.annotation.boxes = detail::spam_boxes(rng, scene.width, scene.height, std::max(1, n));
        out.elapsed = 0.3 * detail::elapsed_for(w, n, b, rng);
    } else {
        out.annotation.boxes = annotate_targets(w, s, scene.gt_boxes, n, ctx, b, scene.width, scene.height, rng);
        out.elapsed = detail::elapsed_for(w, n, b, rng);
    }
    out.annotation.elapsed = out.elapsed;
    return out;
}

/// One decomposed HIT: box the objects under the markers. A marker resolves to the
/// object whose box contains it (nearest centre first); markers on empty background
/// are skipped.
inline SimOutput simulate_hit(const SimWorker& w, const SimWorkerState& s, const Scene& scene, const SubTask& task,
                              const HitContext& ctx, const BehaviorModel& b, Rng& rng) {
    SimOutput out;
    out.annotation.scene_id = scene.scene_id;
    out.annotation.worker_id = w.worker_id;
    const int load = static_cast<int>(task.markers.size());
    if (w.spam) {
        out.annotation.boxes = detail::spam_boxes(rng, scene.width, scene.height, std::max(1, load));
    } else {
        std::vector<BoundingBox> targets;
        for (const auto& m : task.markers) {
            if (bernoulli(rng, b.marker_skip)) continue;
            int best = -1;
            double best_d = 0.0;
            for (std::size_t g = 0; g < scene.gt_boxes.size(); ++g) {
                if (!scene.gt_boxes[g].contains(m)) continue;
                const Point c = scene.gt_boxes[g].center();
                const double d = std::hypot(c.x - m.x, c.y - m.y);
                if (best < 0 || d < best_d) best = static_cast<int>(g), best_d = d;
            }
            if (best >= 0) targets.push_back(scene.gt_boxes[static_cast<std::size_t>(best)]);
        }
        out.annotation.boxes = annotate_targets(w, s, targets, load, ctx, b, scene.width, scene.height, rng);
    }
    out.elapsed = detail::elapsed_for(w, load, b, rng);
    out.annotation.elapsed = out.elapsed;
    return out;
}

/// One iteration: add up to three missing objects, fix a poor box, or declare the
/// image done. The chance of declaring it done early grows with the iteration index.
inline SimOutput simulate_hit(const SimWorker& w, const SimWorkerState& s, const Scene& scene,
                              const IterationState& chain, const HitContext& ctx, const BehaviorModel& b, Rng& rng) {
    SimOutput out;
    out.annotation.scene_id = scene.scene_id;
    out.annotation.worker_id = w.worker_id;
    if (w.spam) {
        out.contribution = AddBoxes{detail::spam_boxes(rng, scene.width, scene.height, kMaxNewBoxesPerIteration)};
        out.elapsed = 0.3 * detail::elapsed_for(w, 1, b, rng);
        out.annotation.boxes = std::get<AddBoxes>(*out.contribution).boxes;
        out.annotation.elapsed = out.elapsed;
        return out;
    }
    std::vector<BoundingBox> uncovered;
    int poor = -1;
    for (const auto& g : scene.gt_boxes) {
        double best = 0.0;
        for (const auto& cb : chain.boxes_so_far) best = std::max(best, iou(g, cb.box));
        if (best < 0.5) uncovered.push_back(g);
    }
    for (std::size_t i = 0; i < chain.boxes_so_far.size() && poor < 0; ++i) {
        double best = 0.0;
        for (const auto& g : scene.gt_boxes) best = std::max(best, iou(g, chain.boxes_so_far[i].box));
        if (best > 0.0 && best < 0.7) poor = static_cast<int>(i);
    }
    const double p_done = b.iter_complete_base + b.iter_complete_slope * chain.iteration_index;
    const int load = std::max(1, static_cast<int>(uncovered.size()));
    if (uncovered.empty() || bernoulli(rng, p_done)) {
        if (poor >= 0 && bernoulli(rng, b.iter_adjust_prob)) {
            const auto& box = chain.boxes_so_far[static_cast<std::size_t>(poor)].box;
            const BoundingBox* target = nullptr;
            double best = 0.0;
            for (const auto& g : scene.gt_boxes)
                if (iou(g, box) > best) best = iou(g, box), target = &g;
            out.contribution = Adjust{poor, noisy_box(w, s, *target, 1, ctx, b, scene.width, scene.height, rng)};
        } else {
            out.contribution = Complete{};
        }
    } else {
        std::shuffle(uncovered.begin(), uncovered.end(), rng);
        uncovered.resize(std::min<std::size_t>(uncovered.size(), kMaxNewBoxesPerIteration));
        auto boxes = annotate_targets(w, s, uncovered, load, ctx, b, scene.width, scene.height, rng);
        if (boxes.empty()) out.contribution = Complete{};
        else out.contribution = AddBoxes{std::move(boxes)};
    }
    if (const auto* add = std::get_if<AddBoxes>(&*out.contribution)) out.annotation.boxes = add->boxes;
    out.elapsed = detail::elapsed_for(w, std::min(load, kMaxNewBoxesPerIteration), b, rng);
    out.annotation.elapsed = out.elapsed;
    return out;
}

/// Updates the worker after a submission: load fatigue and attention drift every
/// HIT; visible-gold feedback restores attention and moves skill toward potential.
inline void observe(const SimWorker& w, SimWorkerState& s, int load, const HitOutcome& o, const BehaviorModel& b) {
    s.hits_done += 1;
    const double load_frac = std::clamp((load - 1) / 13.0, 0.0, 1.0);
    s.carry = b.carry_decay * s.carry + (1.0 - b.carry_decay) * load_frac;
    s.vigilance = std::max(0.0, s.vigilance - b.vigilance_decay * (1.0 - w.diligence));
    if (o.feedback_shown && !w.spam) {
        s.gold_exposures += 1;
        s.vigilance = 1.0;
        s.effective_skill += w.learn_rate * (w.potential - s.effective_skill);
    }
    if (o.action == ActionKind::Warn) s.warnings += 1;
    if (o.action == ActionKind::Block || o.banner.blocked) s.blocked = true;
    s.has_rating = o.banner.has_rating;
    if (o.banner.has_rating) {
        if (o.banner.tier == "A") s.tier = Tier::A;
        else if (o.banner.tier == "B") s.tier = Tier::B;
        else if (o.banner.tier == "AtRisk") s.tier = Tier::AtRisk;
        else s.tier = Tier::Standard;
    }
    const double fair = b.fair_cents_per_box * std::max(1, o.effort_boxes);
    s.last_pay_ratio = fair > 0.0 ? static_cast<double>(o.paid_now.value()) / fair : 1.0;
}

/// Per-HIT probability of leaving, before capacity and blocking are considered.
inline double abandon_hazard(const SimWorker& w, const SimWorkerState& s, const BehaviorModel& b) {
    double h = w.dropout_propensity + b.hazard_warning * s.warnings;
    if (s.has_rating && s.tier == Tier::AtRisk) h += b.hazard_at_risk;
    h += b.hazard_underpay * std::max(0.0, 1.0 - s.last_pay_ratio);
    return std::clamp(h, 0.0, 1.0);
}

inline Decision decide_continue(const SimWorker& w, const SimWorkerState& s, const BehaviorModel& b, Rng& rng) {
    if (s.blocked || s.hits_done >= w.capacity) return Decision::Abandon;
    return bernoulli(rng, abandon_hazard(w, s, b)) ? Decision::Abandon : Decision::Continue;
}

// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const SimParams& p) {
    const auto& m = p.population;
    const auto& b = p.behavior;
    return {{"population",
             {{"skill_mean", m.skill_mean},
              {"skill_concentration", m.skill_concentration},
              {"diligence_mean", m.diligence_mean},
              {"diligence_concentration", m.diligence_concentration},
              {"gamma_median", m.gamma_median},
              {"gamma_log_sd", m.gamma_log_sd},
              {"small_penalty_mean", m.small_penalty_mean},
              {"learn_rate_max", m.learn_rate_max},
              {"potential_frac", m.potential_frac},
              {"spam_rate", m.spam_rate},
              {"dropout_mean", m.dropout_mean},
              {"speed_median", m.speed_median},
              {"speed_log_sd", m.speed_log_sd},
              {"capacity_min", m.capacity_min},
              {"capacity_exponent", m.capacity_exponent},
              {"capacity_max", m.capacity_max},
              {"trust_mean", m.trust_mean},
              {"trust_concentration", m.trust_concentration}}},
            {"behavior",
             {{"base_miss", b.base_miss},
              {"edge_noise", b.edge_noise},
              {"edge_jitter_px", b.edge_jitter_px},
              {"small_side_px", b.small_side_px},
              {"carry_decay", b.carry_decay},
              {"carry_weight", b.carry_weight},
              {"vigilance_decay", b.vigilance_decay},
              {"vigilance_miss", b.vigilance_miss},
              {"vigilance_noise", b.vigilance_noise},
              {"focus_warning", b.focus_warning},
              {"focus_bonus", b.focus_bonus},
              {"focus_tiered", b.focus_tiered},
              {"time_exponent", b.time_exponent},
              {"time_log_sd", b.time_log_sd},
              {"iter_complete_base", b.iter_complete_base},
              {"iter_complete_slope", b.iter_complete_slope},
              {"iter_adjust_prob", b.iter_adjust_prob},
              {"marker_skip", b.marker_skip},
              {"hazard_warning", b.hazard_warning},
              {"hazard_at_risk", b.hazard_at_risk},
              {"hazard_underpay", b.hazard_underpay},
              {"fair_cents_per_box", b.fair_cents_per_box},
              {"piece_rate_rush", b.piece_rate_rush}}}};
}

/// Missing keys keep their defaults; unknown keys are rejected to catch typos.
inline SimParams sim_params_from_json(const nlohmann::json& j) {
    SimParams p;
    const nlohmann::json defaults = to_json(p);
    for (const auto& [section, body] : j.items()) {
        if (!defaults.contains(section)) throw ConfigError("unknown sim_params section " + section);
        for (const auto& [key, v] : body.items())
            if (!defaults[section].contains(key)) throw ConfigError("unknown sim_params key " + section + "." + key);
    }
    auto& m = p.population;
    auto& b = p.behavior;
    const auto pj = j.value("population", nlohmann::json::object());
    const auto bj = j.value("behavior", nlohmann::json::object());
#define VGOLD_READ(obj, src, field) obj.field = src.value(#field, obj.field)
    VGOLD_READ(m, pj, skill_mean);
    VGOLD_READ(m, pj, skill_concentration);
    VGOLD_READ(m, pj, diligence_mean);
    VGOLD_READ(m, pj, diligence_concentration);
    VGOLD_READ(m, pj, gamma_median);
    VGOLD_READ(m, pj, gamma_log_sd);
    VGOLD_READ(m, pj, small_penalty_mean);
    VGOLD_READ(m, pj, learn_rate_max);
    VGOLD_READ(m, pj, potential_frac);
    VGOLD_READ(m, pj, spam_rate);
    VGOLD_READ(m, pj, dropout_mean);
    VGOLD_READ(m, pj, speed_median);
    VGOLD_READ(m, pj, speed_log_sd);
    VGOLD_READ(m, pj, capacity_min);
    VGOLD_READ(m, pj, capacity_exponent);
    VGOLD_READ(m, pj, capacity_max);
    VGOLD_READ(m, pj, trust_mean);
    VGOLD_READ(m, pj, trust_concentration);
    VGOLD_READ(b, bj, base_miss);
    VGOLD_READ(b, bj, edge_noise);
    VGOLD_READ(b, bj, edge_jitter_px);
    VGOLD_READ(b, bj, small_side_px);
    VGOLD_READ(b, bj, carry_decay);
    VGOLD_READ(b, bj, carry_weight);
    VGOLD_READ(b, bj, vigilance_decay);
    VGOLD_READ(b, bj, vigilance_miss);
    VGOLD_READ(b, bj, vigilance_noise);
    VGOLD_READ(b, bj, focus_warning);
    VGOLD_READ(b, bj, focus_bonus);
    VGOLD_READ(b, bj, focus_tiered);
    VGOLD_READ(b, bj, time_exponent);
    VGOLD_READ(b, bj, time_log_sd);
    VGOLD_READ(b, bj, iter_complete_base);
    VGOLD_READ(b, bj, iter_complete_slope);
    VGOLD_READ(b, bj, iter_adjust_prob);
    VGOLD_READ(b, bj, marker_skip);
    VGOLD_READ(b, bj, hazard_warning);
    VGOLD_READ(b, bj, hazard_at_risk);
    VGOLD_READ(b, bj, hazard_underpay);
    VGOLD_READ(b, bj, fair_cents_per_box);
    VGOLD_READ(b, bj, piece_rate_rush);
#undef VGOLD_READ
    if (m.skill_mean <= 0.0 || m.skill_mean >= 1.0 || m.diligence_mean <= 0.0 || m.diligence_mean >= 1.0 ||
        m.trust_mean <= 0.0 || m.trust_mean >= 1.0)
        throw ConfigError("skill, diligence and trust means must lie in (0,1)");
    if (m.gamma_median < 0.0 || m.spam_rate < 0.0 || m.spam_rate > 1.0 || m.capacity_min < 1.0 ||
        m.capacity_exponent <= 0.0 || m.capacity_max < 1)
        throw ConfigError("invalid population parameters");
    if (b.time_exponent >= 1.0 || b.time_exponent <= 0.0) throw ConfigError("time_exponent must lie in (0,1)");
    if (b.piece_rate_rush < 0.0) throw ConfigError("piece_rate_rush must be >= 0");
    for (double f : {b.focus_warning, b.focus_bonus, b.focus_tiered})
        if (f < 0.0 || f > 1.0) throw ConfigError("focus values must lie in [0,1]");
    return p;
}

} // namespace vgold::sim
