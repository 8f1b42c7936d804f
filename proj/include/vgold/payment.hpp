#pragma once

#include <string>
#include <type_traits>
#include <variant>

#include <json.hpp>

#include "error.hpp"
#include "money.hpp"
#include "scoring.hpp"

namespace vgold {

/// Two price bins split by object count.
struct BaselineBinned {
    Cents low{16};
    Cents high{44};
    int bin_edge = 7; // counts up to and including this pay `low`
};

/// Price proportional to the true object count.
struct VariablePay {
    Cents per_box{4};
};

/// Flat base; after the task the total becomes per_correct for every ground-truth
/// box matched above `correct_iou`, and the difference is paid as a bonus.
struct PostTaskBonus {
    Cents base{4};
    Cents per_correct{4};
    double correct_iou = 0.5;
};

/// Constant pay per HIT (sub-tasks and iterations).
struct FlatSubtask {
    Cents per_hit{8};
};

/// Baseline bins plus the consequence ledger's quality bonus.
struct RegularBonus {
    BaselineBinned base;
};

using PaymentPolicy = std::variant<BaselineBinned, VariablePay, PostTaskBonus, FlatSubtask, RegularBonus>;

struct PriceContext {
    int min_count = 1;
    int max_count = 14; // corpus range; counts outside it are extrapolated
};

struct PriceQuote {
    Cents advertised;
    bool extrapolated = false;
};

inline void validate(const PaymentPolicy& policy) {
    std::visit(
        [](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, BaselineBinned>) {
                if (p.low < Cents{0} || p.high < Cents{0} || p.bin_edge < 1) throw ConfigError("invalid binned pay");
            } else if constexpr (std::is_same_v<T, VariablePay>) {
                if (p.per_box < Cents{0}) throw ConfigError("invalid variable pay");
            } else if constexpr (std::is_same_v<T, PostTaskBonus>) {
                if (p.base < Cents{0} || p.per_correct < Cents{0}) throw ConfigError("invalid post-task bonus");
            } else if constexpr (std::is_same_v<T, FlatSubtask>) {
                if (p.per_hit < Cents{0}) throw ConfigError("invalid flat pay");
            } else {
                if (p.base.low < Cents{0} || p.base.high < Cents{0} || p.base.bin_edge < 1)
                    throw ConfigError("invalid binned pay");
            }
        },
        policy);
}

inline Cents binned_price(const BaselineBinned& b, int count) { return count <= b.bin_edge ? b.low : b.high; }

/// Advertised price of one HIT for an item with `count` objects. Counts outside the
/// corpus range are flagged: variable pay keeps its slope, the bins keep the high bin.
inline PriceQuote price(const PaymentPolicy& policy, int count, const PriceContext& ctx = {}) {
    if (count < 1) throw ContractError("object count must be >= 1");
    PriceQuote q;
    q.extrapolated = count < ctx.min_count || count > ctx.max_count;
    q.advertised = std::visit(
        [count](const auto& p) -> Cents {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, BaselineBinned>) return binned_price(p, count);
            else if constexpr (std::is_same_v<T, VariablePay>) return p.per_box * count;
            else if constexpr (std::is_same_v<T, PostTaskBonus>) return p.base;
            else if constexpr (std::is_same_v<T, FlatSubtask>) return p.per_hit;
            else return binned_price(p.base, count);
        },
        policy);
    return q;
}

/// Pay the worker can count on before the task is judged.
inline Cents guaranteed_pay(const PaymentPolicy& policy, int count) { return price(policy, count).advertised; }

/// True when part of the advertised reward depends on a post-hoc count of correct work.
inline bool has_contingent_pay(const PaymentPolicy& policy) { return std::holds_alternative<PostTaskBonus>(policy); }

struct Payout {
    std::string hit_id;
    Cents advertised;
    Cents base_paid;
    Cents bonus_paid;
    Cents total;
};

/// Settles one HIT. Post-task bonus totals are computed from the report; every other
/// policy pays its price plus whatever bonus the consequence ledger awarded.
inline Payout settle(const PaymentPolicy& policy, const std::string& hit_id, int count, const ScoreReport& report,
                     Cents ledger_bonus = Cents{0}) {
    Payout out;
    out.hit_id = hit_id;
    out.advertised = price(policy, count).advertised;
    out.base_paid = out.advertised;
    if (const auto* ptb = std::get_if<PostTaskBonus>(&policy)) {
        int correct = 0;
        for (double v : report.per_gt_iou)
            if (v > ptb->correct_iou) ++correct;
        const Cents total = max(ptb->base, ptb->per_correct * correct);
        out.bonus_paid = total - ptb->base;
    } else {
        out.bonus_paid = max(Cents{0}, ledger_bonus);
    }
    out.total = out.base_paid + out.bonus_paid;
    return out;
}

inline nlohmann::json to_json(const Payout& p) {
    return {{"hit_id", p.hit_id},
            {"advertised", p.advertised.str()},
            {"base_paid", p.base_paid.str()},
            {"bonus_paid", p.bonus_paid.str()},
            {"total", p.total.str()}};
}

inline std::string payment_label(const PaymentPolicy& policy) {
    static const char* names[] = {"baseline_binned", "variable_pay", "post_task_bonus", "flat_subtask", "regular_bonus"};
    return names[policy.index()];
}

inline PaymentPolicy payment_policy_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    auto c = [&](const char* key, Cents def) {
        return j.contains(key) ? cents_from_dollars(j[key].get<double>()) : def;
    };
    auto binned = [&] {
        BaselineBinned b;
        b.low = c("low", b.low);
        b.high = c("high", b.high);
        b.bin_edge = j.value("bin_edge", b.bin_edge);
        return b;
    };
    PaymentPolicy p;
    if (kind == "baseline_binned") p = binned();
    else if (kind == "variable_pay") p = VariablePay{c("per_box", Cents{4})};
    else if (kind == "post_task_bonus")
        p = PostTaskBonus{c("base", Cents{4}), c("per_correct", Cents{4}), j.value("correct_iou", 0.5)};
    else if (kind == "flat_subtask") p = FlatSubtask{c("per_hit", Cents{8})};
    else if (kind == "regular_bonus") p = RegularBonus{binned()};
    else throw ConfigError("unknown payment kind " + kind);
    validate(p);
    return p;
}

inline nlohmann::json to_json(const PaymentPolicy& policy) {
    return std::visit(
        [](const auto& p) -> nlohmann::json {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, BaselineBinned>)
                return {{"kind", "baseline_binned"}, {"low", p.low.dollars()}, {"high", p.high.dollars()}, {"bin_edge", p.bin_edge}};
            else if constexpr (std::is_same_v<T, VariablePay>)
                return {{"kind", "variable_pay"}, {"per_box", p.per_box.dollars()}};
            else if constexpr (std::is_same_v<T, PostTaskBonus>)
                return {{"kind", "post_task_bonus"},
                        {"base", p.base.dollars()},
                        {"per_correct", p.per_correct.dollars()},
                        {"correct_iou", p.correct_iou}};
            else if constexpr (std::is_same_v<T, FlatSubtask>)
                return {{"kind", "flat_subtask"}, {"per_hit", p.per_hit.dollars()}};
            else
                return {{"kind", "regular_bonus"},
                        {"low", p.base.low.dollars()},
                        {"high", p.base.high.dollars()},
                        {"bin_edge", p.base.bin_edge}};
        },
        policy);
}

} // namespace vgold
