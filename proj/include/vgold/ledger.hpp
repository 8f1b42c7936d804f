#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "money.hpp"

namespace vgold {

/// Quality thresholds (percent mIoU) and bonus amounts for visible-gold consequences.
struct TierPolicy {
    double t_min = 50.0;
    double t_bonus_b = 75.0;
    double t_bonus_a = 85.0;
    Cents bonus_small{8};
    Cents bonus_large{22};
    int large_count_threshold = 8; // objects; counts at or above this earn bonus_large
    bool warn_every_failure = true;

    void validate() const {
        if (!(0.0 <= t_min && t_min < t_bonus_b && t_bonus_b < t_bonus_a && t_bonus_a <= 100.0))
            throw ConfigError("tier thresholds must satisfy 0 <= t_min < t_bonus_b < t_bonus_a <= 100");
        if (bonus_small < Cents{0} || bonus_large < Cents{0}) throw ConfigError("bonus amounts must be >= 0");
        if (large_count_threshold < 1) throw ConfigError("large_count_threshold must be >= 1");
    }
};

/// How failed or passed golds turn into consequences.
enum class ConsequenceMode {
    None,    // feedback only
    Warning, // warn on every failed gold
    Bonus,   // per-image bonus for golds at or above t_bonus_b
    Tiered,  // warnings, tier bonuses, and blocking via the dynamic scheduler
};

enum class Tier { A, B, Standard, AtRisk };

inline const char* tier_label(Tier t) {
    switch (t) {
    case Tier::A: return "A";
    case Tier::B: return "B";
    case Tier::Standard: return "Standard";
    case Tier::AtRisk: return "AtRisk";
    }
    return "Standard";
}

inline Tier tier_for(double running_avg, const TierPolicy& p) {
    if (running_avg >= p.t_bonus_a) return Tier::A;
    if (running_avg >= p.t_bonus_b) return Tier::B;
    if (running_avg >= p.t_min) return Tier::Standard;
    return Tier::AtRisk;
}

struct AwardedBonus {
    std::string hit_id;
    Cents amount;
    friend bool operator==(const AwardedBonus&, const AwardedBonus&) = default;
};

struct WorkerLedger {
    std::string worker_id;
    std::vector<double> gold_scores;
    double running_avg = 0.0;
    Tier tier = Tier::Standard;
    bool blocked = false;
    int warnings_issued = 0;
    std::vector<AwardedBonus> bonuses_awarded;

    [[nodiscard]] bool has_rating() const { return !gold_scores.empty(); }

    [[nodiscard]] Cents bonus_total() const {
        Cents t{0};
        for (const auto& b : bonuses_awarded) t += b.amount;
        return t;
    }

    friend bool operator==(const WorkerLedger&, const WorkerLedger&) = default;
};

/// Running average the ledger would show after adding `score`.
inline double projected_average(const WorkerLedger& l, double score) {
    double sum = score;
    for (double s : l.gold_scores) sum += s;
    return sum / static_cast<double>(l.gold_scores.size() + 1);
}

/// Bonus for one image: small amount below the large-count threshold, large at or
/// above it, nothing when the score misses the threshold.
inline Cents regular_bonus(int image_count, double score, double threshold, const TierPolicy& p = {}) {
    if (image_count < 1) throw ContractError("image object count must be >= 1");
    if (score < threshold) return Cents{0};
    return image_count >= p.large_count_threshold ? p.bonus_large : p.bonus_small;
}

struct GoldResult {
    std::string hit_id;
    double score = 0.0; // image mIoU, percent
    int object_count = 1;
};

enum class ActionKind { None, Warn, Bonus, Block };

struct LedgerAction {
    ActionKind kind = ActionKind::None;
    Cents amount{0};
    friend bool operator==(const LedgerAction&, const LedgerAction&) = default;
};

inline const char* action_label(ActionKind k) {
    switch (k) {
    case ActionKind::None: return "none";
    case ActionKind::Warn: return "warning";
    case ActionKind::Bonus: return "bonus";
    case ActionKind::Block: return "block";
    }
    return "none";
}

// update_ledger is split in three steps so an event log can replay each effect
// separately: record the score, decide the action, apply the action.

inline void record_gold_score(WorkerLedger& l, const TierPolicy& p, double score) {
    if (l.blocked) throw ContractError("ledger for " + l.worker_id + " is blocked");
    l.gold_scores.push_back(score);
    double sum = 0.0;
    for (double s : l.gold_scores) sum += s;
    l.running_avg = sum / static_cast<double>(l.gold_scores.size());
    l.tier = tier_for(l.running_avg, p);
}

/// Action for a gold already recorded in the ledger. `block_signal` is the
/// scheduler's three-strike verdict.
inline LedgerAction decide_action(const WorkerLedger& l, const TierPolicy& p, ConsequenceMode mode,
                                  const GoldResult& g, bool block_signal) {
    if (block_signal) return {ActionKind::Block, Cents{0}};
    const bool failed = g.score < p.t_min;
    if (failed) {
        const bool warn_mode = mode == ConsequenceMode::Warning || mode == ConsequenceMode::Tiered;
        if (warn_mode && (p.warn_every_failure || l.warnings_issued == 0)) return {ActionKind::Warn, Cents{0}};
        return {};
    }
    if (mode == ConsequenceMode::Bonus) {
        const Cents b = regular_bonus(g.object_count, g.score, p.t_bonus_b, p);
        if (b > Cents{0}) return {ActionKind::Bonus, b};
    } else if (mode == ConsequenceMode::Tiered) {
        const Cents full = regular_bonus(g.object_count, 100.0, 0.0, p);
        if (l.tier == Tier::A) return {ActionKind::Bonus, full};
        if (l.tier == Tier::B) return {ActionKind::Bonus, Cents{full.value() / 2}};
    }
    return {};
}

inline void apply_action(WorkerLedger& l, const LedgerAction& a, const std::string& hit_id) {
    switch (a.kind) {
    case ActionKind::Warn: l.warnings_issued += 1; break;
    case ActionKind::Bonus: l.bonuses_awarded.push_back({hit_id, a.amount}); break;
    case ActionKind::Block: l.blocked = true; break;
    case ActionKind::None: break;
    }
}

/// Appends a gold score and applies the resulting consequence.
inline LedgerAction update_ledger(WorkerLedger& l, const TierPolicy& p, ConsequenceMode mode, const GoldResult& g,
                                  bool block_signal = false) {
    record_gold_score(l, p, g.score);
    const auto action = decide_action(l, p, mode, g, block_signal);
    apply_action(l, action, g.hit_id);
    return action;
}

struct BannerState {
    bool has_rating = false;
    double running_avg = 0.0;
    std::string tier;
    std::string hint;
    bool blocked = false;
};

inline BannerState banner(const WorkerLedger& l, const TierPolicy& p) {
    BannerState b;
    b.blocked = l.blocked;
    if (l.blocked) {
        b.has_rating = l.has_rating();
        b.running_avg = l.running_avg;
        b.tier = tier_label(l.tier);
        b.hint = "quality below threshold";
        return b;
    }
    if (!l.has_rating()) {
        b.tier = "unrated";
        b.hint = "no rating yet";
        return b;
    }
    b.has_rating = true;
    b.running_avg = l.running_avg;
    b.tier = tier_label(l.tier);
    char buf[160];
    switch (l.tier) {
    case Tier::A: std::snprintf(buf, sizeof buf, "tier A: full bonus on qualifying images"); break;
    case Tier::B:
        std::snprintf(buf, sizeof buf, "tier B: half bonus; reach %.0f%% for tier A", p.t_bonus_a);
        break;
    case Tier::Standard:
        std::snprintf(buf, sizeof buf, "no bonus; reach %.0f%% to earn bonuses", p.t_bonus_b);
        break;
    case Tier::AtRisk:
        std::snprintf(buf, sizeof buf, "warning: average below %.0f%%, you may be blocked", p.t_min);
        break;
    }
    b.hint = buf;
    return b;
}

inline nlohmann::json to_json(const BannerState& b) {
    nlohmann::json j{{"has_rating", b.has_rating}, {"tier", b.tier}, {"hint", b.hint}, {"blocked", b.blocked}};
    j["running_avg"] = b.has_rating ? nlohmann::json(b.running_avg) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json to_json(const WorkerLedger& l) {
    auto bonuses = nlohmann::json::array();
    for (const auto& b : l.bonuses_awarded) bonuses.push_back({{"hit_id", b.hit_id}, {"amount", b.amount.str()}});
    return {{"worker_id", l.worker_id},      {"gold_scores", l.gold_scores},       {"running_avg", l.running_avg},
            {"tier", tier_label(l.tier)},    {"blocked", l.blocked},               {"warnings_issued", l.warnings_issued},
            {"bonuses_awarded", bonuses},    {"bonus_total", l.bonus_total().str()}};
}

inline TierPolicy tier_policy_from_json(const nlohmann::json& j) {
    TierPolicy p;
    p.t_min = j.value("t_min", p.t_min);
    p.t_bonus_b = j.value("t_bonus_b", p.t_bonus_b);
    p.t_bonus_a = j.value("t_bonus_a", p.t_bonus_a);
    if (j.contains("bonus_small")) p.bonus_small = cents_from_dollars(j["bonus_small"].get<double>());
    if (j.contains("bonus_large")) p.bonus_large = cents_from_dollars(j["bonus_large"].get<double>());
    p.large_count_threshold = j.value("large_count_threshold", p.large_count_threshold);
    p.warn_every_failure = j.value("warn_every_failure", p.warn_every_failure);
    p.validate();
    return p;
}

inline nlohmann::json to_json(const TierPolicy& p) {
    return {{"t_min", p.t_min},
            {"t_bonus_b", p.t_bonus_b},
            {"t_bonus_a", p.t_bonus_a},
            {"bonus_small", p.bonus_small.dollars()},
            {"bonus_large", p.bonus_large.dollars()},
            {"large_count_threshold", p.large_count_threshold},
            {"warn_every_failure", p.warn_every_failure}};
}

inline const char* consequence_label(ConsequenceMode m) {
    switch (m) {
    case ConsequenceMode::None: return "none";
    case ConsequenceMode::Warning: return "warning";
    case ConsequenceMode::Bonus: return "bonus";
    case ConsequenceMode::Tiered: return "tiered";
    }
    return "none";
}

inline ConsequenceMode consequence_from_string(const std::string& s) {
    if (s == "none") return ConsequenceMode::None;
    if (s == "warning") return ConsequenceMode::Warning;
    if (s == "bonus") return ConsequenceMode::Bonus;
    if (s == "tiered") return ConsequenceMode::Tiered;
    throw ConfigError("unknown consequence mode " + s);
}

} // namespace vgold
