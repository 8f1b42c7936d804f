#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "error.hpp"
#include "events.hpp"
#include "ledger.hpp"
#include "money.hpp"
#include "payment.hpp"
#include "rng.hpp"
#include "scheduler.hpp"
#include "scoring.hpp"
#include "workflow.hpp"

namespace vgold {

class UnknownWorker : public ContractError {
public:
    using ContractError::ContractError;
};

class BlockedWorker : public ContractError {
public:
    using ContractError::ContractError;
};

/// Submission for a HIT the worker does not currently hold.
class StaleHit : public ContractError {
public:
    using ContractError::ContractError;
};

/// The event sequence cannot have been produced by this configuration.
class ReplayError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class WorkflowKind { WholeScene, DecompositionOracle, DecompositionManual, Iterative };

inline const char* workflow_label(WorkflowKind w) {
    switch (w) {
    case WorkflowKind::WholeScene: return "whole_scene";
    case WorkflowKind::DecompositionOracle: return "decomposition_oracle";
    case WorkflowKind::DecompositionManual: return "decomposition_manual";
    case WorkflowKind::Iterative: return "iterative";
    }
    return "whole_scene";
}

inline WorkflowKind workflow_from_string(const std::string& s) {
    for (auto w : {WorkflowKind::WholeScene, WorkflowKind::DecompositionOracle, WorkflowKind::DecompositionManual,
                   WorkflowKind::Iterative})
        if (s == workflow_label(w)) return w;
    throw ConfigError("unknown workflow " + s);
}

/// Scene presentation order: uniformly shuffled per worker, or highest price first.
enum class SelectionOrder { Random, PriceDesc };

struct EngineConfig {
    std::string condition = "baseline";
    std::shared_ptr<const Corpus> corpus;
    WorkflowKind workflow = WorkflowKind::WholeScene;
    ManualMarkerModel markers;
    int max_iterations = 10;
    std::optional<SchedulePolicy> schedule;
    TierPolicy tiers;
    ConsequenceMode consequence = ConsequenceMode::None;
    PaymentPolicy payment = BaselineBinned{};
    int responses_per_scene = 3;
    /// When non-empty, only these scenes are served, with the given response counts.
    std::map<std::string, int> quota_override;
    SelectionOrder selection = SelectionOrder::Random;
    bool open_enrollment = true;
    std::set<std::string> enrolled;
    std::uint64_t seed = 0;

    void validate() const {
        if (!corpus || corpus->empty()) throw ConfigError("engine needs a non-empty corpus");
        if (responses_per_scene < 1) throw ConfigError("responses_per_scene must be >= 1");
        if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
        if (schedule) {
            schedule->validate();
            if (workflow != WorkflowKind::WholeScene) throw ConfigError("visible golds need the whole-scene workflow");
        }
        if (consequence != ConsequenceMode::None && !schedule) throw ConfigError("consequences need a gold schedule");
        for (const auto& [id, n] : quota_override) {
            if (!corpus->find(id)) throw ConfigError("quota for unknown scene " + id);
            if (n < 1) throw ConfigError("quota for " + id + " must be >= 1");
        }
        tiers.validate();
        vgold::validate(payment);
    }
};

enum class UnitStatus { Open, Assigned, Done };

inline const char* unit_status_label(UnitStatus s) {
    switch (s) {
    case UnitStatus::Open: return "open";
    case UnitStatus::Assigned: return "assigned";
    case UnitStatus::Done: return "done";
    }
    return "open";
}

/// One schedulable piece of work: a whole-scene response slot, a sub-task, or an
/// iteration chain (which stays open until completed or capped).
struct WorkUnit {
    std::string unit_id;
    int scene_index = 0;
    int response = 0;
    int part = -1;
    std::optional<SubTask> subtask;
    std::optional<IterationState> chain;
    UnitStatus status = UnitStatus::Open;
    std::string holder;
};

struct Assignment {
    int unit = 0;
    std::string hit_id;
    bool gold = false;
    int ordinal = 0;
    Cents advertised;
};

struct WorkerSession {
    std::string worker_id;
    ScheduleState schedule;
    WorkerLedger ledger;
    std::optional<Assignment> assigned;
    std::set<int> seen_scenes;
    int hits_submitted = 0;
    bool abandoned = false;
    std::uint64_t events = 0;
    Cents earned{0};
};

/// A submitted HIT as recorded by the requester.
struct HitRecord {
    std::string hit_id;
    std::string worker_id;
    int unit = 0;
    std::string scene_id;
    int ordinal = 0;
    bool gold = false;
    std::vector<BoundingBox> boxes;
    double elapsed = 0.0;
    double miou = 0.0;   // percent, against the ground truth this HIT targets
    double recall = 0.0; // fraction above IoU 0.5
    int target_count = 0;
    Payout payout;
    std::int64_t timestamp_ms = 0;
};

struct EngineState {
    std::vector<WorkUnit> units;
    std::map<std::string, WorkerSession> sessions;
    std::vector<HitRecord> records;
    std::uint64_t event_count = 0;
    std::uint64_t hits_assigned = 0;
    std::size_t units_done = 0;
};

/// What a client sees for an assigned HIT. Carries neither ground truth nor the gold flag.
struct HitView {
    std::string hit_id;
    std::string scene_id;
    int width = 0;
    int height = 0;
    WorkflowKind workflow = WorkflowKind::WholeScene;
    std::vector<Point> markers;
    std::vector<BoundingBox> prior_boxes;
    int max_new_boxes = 0; // 0 = unlimited
    Cents advertised;
    int ordinal = 0;
};

inline nlohmann::json to_client_json(const HitView& v) {
    auto markers = nlohmann::json::array();
    for (const auto& p : v.markers) markers.push_back({p.x, p.y});
    nlohmann::json j{{"status", "assigned"},
                     {"hit_id", v.hit_id},
                     {"scene", {{"scene_id", v.scene_id}, {"width", v.width}, {"height", v.height}}},
                     {"workflow", workflow_label(v.workflow)},
                     {"advertised_price", v.advertised.str()}};
    if (!v.markers.empty()) j["markers"] = markers;
    if (v.workflow == WorkflowKind::Iterative) {
        j["prior_boxes"] = detail::boxes_to_json(v.prior_boxes);
        j["max_new_boxes"] = v.max_new_boxes;
    }
    return j;
}

enum class NextStatus { Assigned, Blocked, Done, Unknown, Abandoned };

struct NextHit {
    NextStatus status = NextStatus::Done;
    std::optional<HitView> hit;
    std::string reason;
};

struct SubmitRequest {
    std::string worker_id;
    std::string hit_id;
    std::vector<BoundingBox> boxes;
    double elapsed = 0.0;
    std::optional<Contribution> contribution; // iterative workflow only
};

struct SubmitOutcome {
    std::string hit_id;
    bool gold = false;
    std::optional<GoldFeedback> feedback;
    BannerState banner;
    Payout payout;
    LedgerAction action;
    double miou = 0.0;
    bool bonus_deferred = false; // contingent pay is settled but not disclosed
};

/// Response body for POST /submit. Accuracy, post-task bonus amounts and gold status
/// are only present for visible golds.
inline nlohmann::json to_client_json(const SubmitOutcome& o) {
    nlohmann::json j{{"hit_id", o.hit_id}, {"banner", to_json(o.banner)}};
    if (o.feedback) {
        j["feedback"] = to_json(*o.feedback);
        j["consequence"] = action_label(o.action.kind);
    }
    if (o.action.kind == ActionKind::Warn || o.action.kind == ActionKind::Block)
        j["consequence"] = action_label(o.action.kind);
    nlohmann::json pay{{"hit_id", o.payout.hit_id},
                       {"advertised", o.payout.advertised.str()},
                       {"base_paid", o.payout.base_paid.str()}};
    if (o.bonus_deferred) {
        pay["bonus_pending"] = true;
    } else {
        pay["bonus_paid"] = o.payout.bonus_paid.str();
        pay["total"] = o.payout.total.str();
    }
    j["payout"] = pay;
    return j;
}

inline nlohmann::json contribution_to_json(const Contribution& c) {
    if (const auto* a = std::get_if<AddBoxes>(&c)) return {{"kind", "add"}, {"boxes", detail::boxes_to_json(a->boxes)}};
    if (const auto* a = std::get_if<Adjust>(&c))
        return {{"kind", "adjust"}, {"index", a->index}, {"box", detail::box_to_json(a->box)}};
    return {{"kind", "complete"}};
}

inline Contribution contribution_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "add") return AddBoxes{detail::boxes_from_json(j.at("boxes"))};
    if (kind == "adjust") return Adjust{j.at("index").get<int>(), detail::box_from_json(j.at("box"))};
    if (kind == "complete") return Complete{};
    throw ParseError("unknown contribution kind " + kind);
}

/// Event-sourced task engine shared by the HTTP service and the simulator. Every
/// state change goes through an event; replaying a log with `apply` rebuilds the state.
class TaskEngine {
public:
    TaskEngine(EngineConfig cfg, Clock& clock) : cfg_(std::move(cfg)), clock_(&clock) {
        cfg_.validate();
        build_units();
    }

    [[nodiscard]] const EngineConfig& config() const { return cfg_; }
    [[nodiscard]] const EngineState& state() const { return st_; }
    [[nodiscard]] const EventLog& log() const { return log_; }
    EventLog& log() { return log_; }
    [[nodiscard]] const Corpus& corpus() const { return *cfg_.corpus; }
    [[nodiscard]] const Scene& scene_of(const WorkUnit& u) const { return cfg_.corpus->scenes()[u.scene_index]; }
    [[nodiscard]] bool complete() const { return st_.units_done == st_.units.size(); }
    [[nodiscard]] std::size_t units_remaining() const { return st_.units.size() - st_.units_done; }

    [[nodiscard]] const WorkerSession* session(const std::string& worker) const {
        auto it = st_.sessions.find(worker);
        return it == st_.sessions.end() ? nullptr : &it->second;
    }

    NextHit next_hit(const std::string& worker) {
        const WorkerSession* s = session(worker);
        if (!s && !cfg_.open_enrollment && !cfg_.enrolled.count(worker))
            return {NextStatus::Unknown, std::nullopt, "unknown worker"};
        if (s && s->ledger.blocked) return {NextStatus::Blocked, std::nullopt, "quality below threshold"};
        if (s && s->abandoned) return {NextStatus::Abandoned, std::nullopt, "session ended"};
        if (s && s->assigned) return {NextStatus::Assigned, view_for(*s->assigned), ""};
        const int unit = pick_unit(worker, s);
        if (unit < 0) return {NextStatus::Done, std::nullopt, "no work available"};

        ScheduleState probe = s ? s->schedule : ScheduleState{worker};
        const bool gold = cfg_.schedule && next_hit_kind(*cfg_.schedule, probe) == HitKind::Gold;
        const WorkUnit& u = st_.units[static_cast<std::size_t>(unit)];
        char hid[32];
        std::snprintf(hid, sizeof hid, "h%06llu", static_cast<unsigned long long>(st_.hits_assigned + 1));
        const Cents advertised = price(cfg_.payment, price_count(u)).advertised;
        emit(EventKind::HitAssigned, worker, hid,
             {{"unit", unit},
              {"unit_id", u.unit_id},
              {"scene_id", scene_of(u).scene_id},
              {"gold", gold},
              {"ordinal", probe.hit_ordinal},
              {"advertised", advertised.value()}});
        return {NextStatus::Assigned, view_for(*st_.sessions.at(worker).assigned), ""};
    }

    SubmitOutcome submit(const SubmitRequest& req) {
        auto it = st_.sessions.find(req.worker_id);
        if (it == st_.sessions.end()) throw UnknownWorker("unknown worker " + req.worker_id);
        const WorkerSession& s = it->second;
        if (s.ledger.blocked) throw BlockedWorker("worker " + req.worker_id + " is blocked");
        if (!s.assigned || s.assigned->hit_id != req.hit_id)
            throw StaleHit("hit " + req.hit_id + " is not assigned to " + req.worker_id);
        if (req.elapsed < 0.0) throw ContractError("elapsed must be >= 0");
        const Assignment a = *s.assigned;
        const WorkUnit& u = st_.units[static_cast<std::size_t>(a.unit)];
        const Scene& sc = scene_of(u);

        nlohmann::json payload{{"unit", a.unit}, {"elapsed", req.elapsed}};
        std::vector<BoundingBox> scored_boxes;
        if (cfg_.workflow == WorkflowKind::Iterative) {
            if (!req.contribution) throw ContractError("iterative HITs need a contribution");
            const Contribution c = sanitize(*req.contribution, sc);
            const IterationState next = iterate(*u.chain, c, req.worker_id);
            for (const auto& cb : next.boxes_so_far) scored_boxes.push_back(cb.box);
            payload["contribution"] = contribution_to_json(c);
        } else {
            for (const auto& b : req.boxes) scored_boxes.push_back(sanitize(b, sc));
            payload["boxes"] = detail::boxes_to_json(scored_boxes);
        }
        const std::vector<BoundingBox> targets = target_boxes(u);
        const ScoreReport report = score_boxes(targets, scored_boxes);
        payload["miou"] = report.miou;
        payload["recall"] = recall_at(report, 0.5);
        payload["targets"] = static_cast<int>(targets.size());

        LedgerAction action;
        std::optional<GoldFeedback> feedback;
        GoldVerdict verdict = GoldVerdict::Continue;
        WorkerLedger next_ledger = s.ledger;
        if (a.gold) {
            record_gold_score(next_ledger, cfg_.tiers, report.miou);
            ScheduleState probe = s.schedule;
            verdict = record_gold_outcome(*cfg_.schedule, probe, report.miou, next_ledger.running_avg, cfg_.tiers.t_min);
            action = decide_action(next_ledger, cfg_.tiers, cfg_.consequence,
                                   {a.hit_id, report.miou, sc.object_count()}, verdict == GoldVerdict::Block);
            feedback = make_feedback(targets, scored_boxes, report);
        }
        const Cents ledger_bonus = action.kind == ActionKind::Bonus ? action.amount : Cents{0};
        const Payout pay = settle(cfg_.payment, a.hit_id, price_count(u), report, ledger_bonus);
        payload["payout"] = {{"advertised", pay.advertised.value()},
                             {"base_paid", pay.base_paid.value()},
                             {"bonus_paid", pay.bonus_paid.value()},
                             {"total", pay.total.value()}};

        emit(EventKind::Submitted, req.worker_id, a.hit_id, payload);
        if (a.gold) {
            emit(EventKind::GoldFeedback, req.worker_id, a.hit_id,
                 {{"score", report.miou}, {"verdict", verdict == GoldVerdict::Block ? "block" : "continue"}});
            switch (action.kind) {
            case ActionKind::Warn: emit(EventKind::Warning, req.worker_id, a.hit_id, {{"score", report.miou}}); break;
            case ActionKind::Bonus:
                emit(EventKind::Bonus, req.worker_id, a.hit_id, {{"amount", action.amount.value()}});
                break;
            case ActionKind::Block:
                emit(EventKind::Block, req.worker_id, a.hit_id, {{"reason", "quality below threshold"}});
                break;
            case ActionKind::None: break;
            }
        }

        SubmitOutcome out;
        out.hit_id = a.hit_id;
        out.gold = a.gold;
        out.feedback = std::move(feedback);
        out.banner = banner(st_.sessions.at(req.worker_id).ledger, cfg_.tiers);
        out.payout = pay;
        out.action = action;
        out.miou = report.miou;
        out.bonus_deferred = has_contingent_pay(cfg_.payment) && !a.gold;
        return out;
    }

    /// Ends a worker's session; a held HIT goes back to the pool.
    void abandon(const std::string& worker) {
        const WorkerSession* s = session(worker);
        if (!s) throw UnknownWorker("unknown worker " + worker);
        if (s->abandoned) return;
        emit(EventKind::Abandon, worker, s->assigned ? s->assigned->hit_id : std::string{}, nlohmann::json::object());
    }

    /// GET /status body, or nullopt for a worker the engine has never seen.
    [[nodiscard]] std::optional<nlohmann::json> status(const std::string& worker) const {
        const WorkerSession* s = session(worker);
        if (!s) return std::nullopt;
        return nlohmann::json{{"worker_id", worker},
                              {"ledger", to_json(s->ledger)},
                              {"banner", to_json(banner(s->ledger, cfg_.tiers))},
                              {"blocked", s->ledger.blocked},
                              {"abandoned", s->abandoned},
                              {"hits_submitted", s->hits_submitted},
                              {"golds_completed", s->ledger.gold_scores.size()},
                              {"assigned_hit", s->assigned ? nlohmann::json(s->assigned->hit_id) : nlohmann::json(nullptr)},
                              {"earned", s->earned.str()}};
    }

    /// Applies a logged event to the state without re-deciding anything.
    void apply(const SessionEvent& e) {
        if (e.seq != st_.event_count + 1) throw ReplayError("event seq " + std::to_string(e.seq) + " out of order");
        auto& s = session_for_apply(e);
        if (e.worker_seq != s.events + 1) throw ReplayError("worker_seq out of order for " + e.worker_id);
        const auto& p = e.payload;
        switch (e.kind) {
        case EventKind::HitAssigned: {
            if (s.assigned) throw ReplayError(e.worker_id + " already holds a HIT");
            const int unit = p.at("unit").get<int>();
            auto& u = unit_at(unit);
            if (u.status != UnitStatus::Open) throw ReplayError("unit " + u.unit_id + " is not open");
            const bool gold = p.at("gold").get<bool>();
            const int ordinal = s.schedule.hit_ordinal;
            if (cfg_.schedule) {
                if ((issue_hit(*cfg_.schedule, s.schedule) == HitKind::Gold) != gold)
                    throw ReplayError("gold flag disagrees with the schedule at " + e.hit_id);
            } else {
                if (gold) throw ReplayError("gold HIT without a schedule");
                s.schedule.hit_ordinal += 1;
            }
            u.status = UnitStatus::Assigned;
            u.holder = e.worker_id;
            s.seen_scenes.insert(u.scene_index);
            s.assigned = Assignment{unit, e.hit_id, gold, ordinal, Cents{p.at("advertised").get<std::int64_t>()}};
            st_.hits_assigned += 1;
            break;
        }
        case EventKind::Submitted: {
            if (!s.assigned || s.assigned->hit_id != e.hit_id) throw ReplayError("submission for unassigned " + e.hit_id);
            auto& u = unit_at(s.assigned->unit);
            HitRecord r;
            r.hit_id = e.hit_id;
            r.worker_id = e.worker_id;
            r.unit = s.assigned->unit;
            r.scene_id = scene_of(u).scene_id;
            r.ordinal = s.assigned->ordinal;
            r.gold = s.assigned->gold;
            r.elapsed = p.at("elapsed").get<double>();
            r.miou = p.at("miou").get<double>();
            r.recall = p.at("recall").get<double>();
            r.target_count = p.at("targets").get<int>();
            const auto& pay = p.at("payout");
            r.payout = {e.hit_id, Cents{pay.at("advertised").get<std::int64_t>()},
                        Cents{pay.at("base_paid").get<std::int64_t>()}, Cents{pay.at("bonus_paid").get<std::int64_t>()},
                        Cents{pay.at("total").get<std::int64_t>()}};
            r.timestamp_ms = e.timestamp_ms;
            if (u.chain) {
                *u.chain = iterate(*u.chain, contribution_from_json(p.at("contribution")), e.worker_id);
                for (const auto& cb : u.chain->boxes_so_far) r.boxes.push_back(cb.box);
                const bool finished = u.chain->completed || u.chain->iteration_index >= cfg_.max_iterations;
                u.status = finished ? UnitStatus::Done : UnitStatus::Open;
            } else {
                r.boxes = detail::boxes_from_json(p.at("boxes"));
                u.status = UnitStatus::Done;
            }
            if (u.status == UnitStatus::Done) st_.units_done += 1;
            u.holder.clear();
            s.assigned.reset();
            s.hits_submitted += 1;
            s.earned += r.payout.total;
            st_.records.push_back(std::move(r));
            break;
        }
        case EventKind::GoldFeedback: {
            const double score = p.at("score").get<double>();
            record_gold_score(s.ledger, cfg_.tiers, score);
            if (!cfg_.schedule) throw ReplayError("gold feedback without a schedule");
            const auto v = record_gold_outcome(*cfg_.schedule, s.schedule, score, s.ledger.running_avg, cfg_.tiers.t_min);
            if ((v == GoldVerdict::Block) != (p.at("verdict").get<std::string>() == "block"))
                throw ReplayError("gold verdict disagrees at " + e.hit_id);
            break;
        }
        case EventKind::Warning: apply_action(s.ledger, {ActionKind::Warn, Cents{0}}, e.hit_id); break;
        case EventKind::Bonus:
            apply_action(s.ledger, {ActionKind::Bonus, Cents{p.at("amount").get<std::int64_t>()}}, e.hit_id);
            break;
        case EventKind::Block: apply_action(s.ledger, {ActionKind::Block, Cents{0}}, e.hit_id); break;
        case EventKind::Abandon:
            if (s.assigned) {
                auto& u = unit_at(s.assigned->unit);
                u.status = UnitStatus::Open;
                u.holder.clear();
                s.assigned.reset();
            }
            s.abandoned = true;
            break;
        }
        s.events += 1;
        st_.event_count += 1;
    }

    /// Rebuilds an engine from a log. The rebuilt engine's own log holds the same events.
    static TaskEngine replay(EngineConfig cfg, Clock& clock, const std::vector<SessionEvent>& events) {
        TaskEngine e(std::move(cfg), clock);
        for (const auto& ev : events) {
            e.apply(ev);
            e.log_.append(ev);
        }
        return e;
    }

    /// Canonical JSON rendering of the full state, for equality checks and debugging.
    [[nodiscard]] nlohmann::json snapshot() const {
        auto units = nlohmann::json::array();
        for (const auto& u : st_.units) {
            nlohmann::json j{{"id", u.unit_id}, {"status", unit_status_label(u.status)}, {"holder", u.holder}};
            if (u.chain) {
                auto boxes = nlohmann::json::array();
                for (const auto& cb : u.chain->boxes_so_far)
                    boxes.push_back({{"box", detail::box_to_json(cb.box)}, {"by", cb.contributor}});
                j["chain"] = {{"boxes", boxes}, {"completed", u.chain->completed}, {"index", u.chain->iteration_index}};
            }
            units.push_back(j);
        }
        auto sessions = nlohmann::json::object();
        for (const auto& [id, s] : st_.sessions) {
            nlohmann::json j{{"ledger", to_json(s.ledger)},
                             {"ordinal", s.schedule.hit_ordinal},
                             {"override", s.schedule.override_active},
                             {"failures", s.schedule.consecutive_gold_failures},
                             {"golds_issued", s.schedule.golds_issued},
                             {"awaiting", s.schedule.awaiting_gold_outcome},
                             {"seen", s.seen_scenes},
                             {"hits", s.hits_submitted},
                             {"abandoned", s.abandoned},
                             {"events", s.events},
                             {"earned", s.earned.value()}};
            if (s.assigned)
                j["assigned"] = {{"unit", s.assigned->unit},
                                 {"hit_id", s.assigned->hit_id},
                                 {"gold", s.assigned->gold},
                                 {"ordinal", s.assigned->ordinal},
                                 {"advertised", s.assigned->advertised.value()}};
            sessions[id] = j;
        }
        auto records = nlohmann::json::array();
        for (const auto& r : st_.records)
            records.push_back({{"hit_id", r.hit_id},
                               {"worker", r.worker_id},
                               {"unit", r.unit},
                               {"gold", r.gold},
                               {"ordinal", r.ordinal},
                               {"boxes", detail::boxes_to_json(r.boxes)},
                               {"elapsed", r.elapsed},
                               {"miou", r.miou},
                               {"total", r.payout.total.value()}});
        return {{"event_count", st_.event_count},
                {"hits_assigned", st_.hits_assigned},
                {"units_done", st_.units_done},
                {"units", units},
                {"sessions", sessions},
                {"records", records}};
    }

    /// Ground-truth boxes a unit asks for: all of them, or a sub-task's marked targets.
    [[nodiscard]] std::vector<BoundingBox> target_boxes(const WorkUnit& u) const {
        const Scene& sc = scene_of(u);
        if (!u.subtask) return sc.gt_boxes;
        std::vector<BoundingBox> out;
        for (int g : u.subtask->source_gt) out.push_back(sc.gt_boxes[static_cast<std::size_t>(g)]);
        return out;
    }

    /// Client payload of a held HIT.
    [[nodiscard]] HitView view_for(const Assignment& a) const {
        const WorkUnit& u = st_.units[static_cast<std::size_t>(a.unit)];
        const Scene& sc = scene_of(u);
        HitView v;
        v.hit_id = a.hit_id;
        v.scene_id = sc.scene_id;
        v.width = sc.width;
        v.height = sc.height;
        v.workflow = cfg_.workflow;
        v.advertised = a.advertised;
        v.ordinal = a.ordinal;
        if (u.subtask) v.markers = u.subtask->markers;
        if (u.chain) {
            for (const auto& cb : u.chain->boxes_so_far) v.prior_boxes.push_back(cb.box);
            v.max_new_boxes = kMaxNewBoxesPerIteration;
        }
        return v;
    }

    /// Scene indices in the order this worker is offered them.
    [[nodiscard]] const std::vector<int>& scene_order(const std::string& worker) const {
        auto it = order_cache_.find(worker);
        if (it != order_cache_.end()) return it->second;
        std::vector<int> order = scenes_in_scope_;
        auto rng = make_rng(cfg_.seed, "order", worker);
        std::shuffle(order.begin(), order.end(), rng);
        if (cfg_.selection == SelectionOrder::PriceDesc) {
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return price(cfg_.payment, cfg_.corpus->scenes()[a].object_count()).advertised >
                       price(cfg_.payment, cfg_.corpus->scenes()[b].object_count()).advertised;
            });
        }
        return order_cache_.emplace(worker, std::move(order)).first->second;
    }

private:
    void build_units() {
        const auto& scenes = cfg_.corpus->scenes();
        units_by_scene_.assign(scenes.size(), {});
        for (std::size_t si = 0; si < scenes.size(); ++si) {
            int quota = cfg_.responses_per_scene;
            if (!cfg_.quota_override.empty()) {
                auto q = cfg_.quota_override.find(scenes[si].scene_id);
                if (q == cfg_.quota_override.end()) continue;
                quota = q->second;
            }
            scenes_in_scope_.push_back(static_cast<int>(si));
            const Scene& sc = scenes[si];
            for (int r = 0; r < quota; ++r) {
                const std::string base = sc.scene_id + "#r" + std::to_string(r);
                auto unit = [&](std::string id, int part) {
                    WorkUnit u;
                    u.unit_id = std::move(id);
                    u.scene_index = static_cast<int>(si);
                    u.response = r;
                    u.part = part;
                    return u;
                };
                auto add = [&](WorkUnit u) {
                    units_by_scene_[si].push_back(static_cast<int>(st_.units.size()));
                    st_.units.push_back(std::move(u));
                };
                switch (cfg_.workflow) {
                case WorkflowKind::WholeScene: add(unit(base, -1)); break;
                case WorkflowKind::Iterative: {
                    WorkUnit u = unit(base, -1);
                    u.chain = IterationState{sc.scene_id, {}, false, 0};
                    add(std::move(u));
                    break;
                }
                case WorkflowKind::DecompositionOracle:
                case WorkflowKind::DecompositionManual: {
                    const auto variant = cfg_.workflow == WorkflowKind::DecompositionOracle ? MarkerSource::Oracle
                                                                                           : MarkerSource::Manual;
                    auto rng = make_rng(cfg_.seed, "markers", sc.scene_id, r);
                    const auto parts = decompose(sc, variant, cfg_.markers, rng);
                    for (std::size_t k = 0; k < parts.size(); ++k) {
                        WorkUnit u = unit(base + "/t" + std::to_string(k), static_cast<int>(k));
                        u.subtask = parts[k];
                        add(std::move(u));
                    }
                    break;
                }
                }
            }
        }
    }

    int pick_unit(const std::string& worker, const WorkerSession* s) const {
        if (complete()) return -1;
        for (int si : scene_order(worker)) {
            if (s && s->seen_scenes.count(si)) continue;
            for (int ui : units_by_scene_[static_cast<std::size_t>(si)])
                if (st_.units[static_cast<std::size_t>(ui)].status == UnitStatus::Open) return ui;
        }
        return -1;
    }

    [[nodiscard]] int price_count(const WorkUnit& u) const {
        if (u.subtask) return std::max<int>(1, static_cast<int>(u.subtask->markers.size()));
        if (u.chain) return 1;
        return scene_of(u).object_count();
    }

    static BoundingBox sanitize(const BoundingBox& b, const Scene& sc) {
        if (!b.valid()) throw ContractError("box with non-positive size or non-finite coordinates");
        const BoundingBox c = clamp_to_extent(b, sc.width, sc.height);
        if (!c.valid()) throw ContractError("box lies outside the image");
        return c;
    }

    static Contribution sanitize(const Contribution& c, const Scene& sc) {
        if (const auto* a = std::get_if<AddBoxes>(&c)) {
            AddBoxes out;
            for (const auto& b : a->boxes) out.boxes.push_back(sanitize(b, sc));
            return out;
        }
        if (const auto* a = std::get_if<Adjust>(&c)) return Adjust{a->index, sanitize(a->box, sc)};
        return c;
    }

    WorkUnit& unit_at(int i) {
        if (i < 0 || static_cast<std::size_t>(i) >= st_.units.size()) throw ReplayError("unit index out of range");
        return st_.units[static_cast<std::size_t>(i)];
    }

    WorkerSession& session_for_apply(const SessionEvent& e) {
        auto it = st_.sessions.find(e.worker_id);
        if (it != st_.sessions.end()) return it->second;
        if (e.kind != EventKind::HitAssigned) throw ReplayError("first event of " + e.worker_id + " must assign a HIT");
        WorkerSession s;
        s.worker_id = e.worker_id;
        s.schedule.worker_id = e.worker_id;
        s.ledger.worker_id = e.worker_id;
        return st_.sessions.emplace(e.worker_id, std::move(s)).first->second;
    }

    void emit(EventKind kind, const std::string& worker, const std::string& hit_id, nlohmann::json payload) {
        SessionEvent e;
        e.seq = st_.event_count + 1;
        const WorkerSession* s = session(worker);
        e.worker_seq = (s ? s->events : 0) + 1;
        e.kind = kind;
        e.worker_id = worker;
        e.hit_id = hit_id;
        e.timestamp_ms = clock_->now_ms();
        e.payload = std::move(payload);
        apply(e);
        log_.append(e);
    }

    EngineConfig cfg_;
    Clock* clock_;
    EngineState st_;
    EventLog log_;
    std::vector<std::vector<int>> units_by_scene_;
    std::vector<int> scenes_in_scope_;
    mutable std::unordered_map<std::string, std::vector<int>> order_cache_;
};

} // namespace vgold
