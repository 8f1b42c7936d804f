#pragma once

#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace vgold {

/// A fixed number of golds at the start of a worker's session.
struct Upfront {
    int k = 5;
};

/// One gold per consecutive block of `block` HITs, at a per-block position drawn
/// from the worker's stream so workers cannot anticipate it.
struct Regular {
    int block = 5;
};

/// Golds at Fibonacci ordinals up to `fib_cutoff`, then one gold per block of
/// `tail_block` HITs starting at fib_cutoff + 1.
struct FibRegular {
    int fib_cutoff = 50;
    int tail_block = 20;
};

/// FibRegular, except that a failed gold forces another gold next; three
/// consecutive failures with a running average below t_min block the worker.
struct Dynamic {
    FibRegular base;
    double t_min = 50.0;
};

using PolicyKind = std::variant<Upfront, Regular, FibRegular, Dynamic>;

struct SchedulePolicy {
    PolicyKind kind = FibRegular{};
    std::uint64_t rng_seed = 0;

    void validate() const {
        std::visit(
            [](const auto& k) {
                using T = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<T, Upfront>) {
                    if (k.k < 0) throw ConfigError("upfront k must be >= 0");
                } else if constexpr (std::is_same_v<T, Regular>) {
                    if (k.block < 2) throw ConfigError("regular block must be >= 2");
                } else if constexpr (std::is_same_v<T, FibRegular>) {
                    if (k.fib_cutoff < 1 || k.tail_block < 2) throw ConfigError("fib_cutoff >= 1 and tail_block >= 2 required");
                } else {
                    if (k.base.fib_cutoff < 1 || k.base.tail_block < 2)
                        throw ConfigError("fib_cutoff >= 1 and tail_block >= 2 required");
                    if (k.t_min < 0.0 || k.t_min > 100.0) throw ConfigError("t_min must lie in [0,100]");
                }
            },
            kind);
    }

    [[nodiscard]] bool is_dynamic() const { return std::holds_alternative<Dynamic>(kind); }
};

enum class HitKind { Standard, Gold };

enum class GoldVerdict { Continue, Block };

struct ScheduleState {
    std::string worker_id;
    int hit_ordinal = 1; // ordinal of the next HIT to issue
    bool override_active = false;
    int consecutive_gold_failures = 0;
    int golds_issued = 0;
    bool awaiting_gold_outcome = false;

    friend bool operator==(const ScheduleState&, const ScheduleState&) = default;
};

inline bool is_fibonacci_ordinal(int ordinal) {
    int a = 1, b = 2;
    while (a < ordinal) {
        const int c = a + b;
        a = b;
        b = c;
    }
    return a == ordinal;
}

namespace detail {

inline int in_block_position(std::uint64_t seed, const std::string& worker, const char* tag, int block_index, int block) {
    return static_cast<int>(derive_seed(seed, worker, tag, block_index) % static_cast<std::uint64_t>(block));
}

inline bool regular_gold(std::uint64_t seed, const std::string& worker, const char* tag, int offset_ordinal, int block) {
    // offset_ordinal is 0-based within the regular phase
    const int block_index = offset_ordinal / block;
    return offset_ordinal % block == in_block_position(seed, worker, tag, block_index, block);
}

inline bool fib_regular_gold(const FibRegular& f, std::uint64_t seed, const std::string& worker, int ordinal) {
    if (ordinal <= f.fib_cutoff) return is_fibonacci_ordinal(ordinal);
    return regular_gold(seed, worker, "fib-tail", ordinal - f.fib_cutoff - 1, f.tail_block);
}

} // namespace detail

/// Whether the HIT at state.hit_ordinal is a visible gold. Pure: depends only on the
/// policy, the worker id, the ordinal and the override flag.
inline HitKind next_hit_kind(const SchedulePolicy& policy, const ScheduleState& state) {
    const int o = state.hit_ordinal;
    const bool gold = std::visit(
        [&](const auto& k) -> bool {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, Upfront>) {
                return o <= k.k;
            } else if constexpr (std::is_same_v<T, Regular>) {
                return detail::regular_gold(policy.rng_seed, state.worker_id, "regular", o - 1, k.block);
            } else if constexpr (std::is_same_v<T, FibRegular>) {
                return detail::fib_regular_gold(k, policy.rng_seed, state.worker_id, o);
            } else {
                return state.override_active || detail::fib_regular_gold(k.base, policy.rng_seed, state.worker_id, o);
            }
        },
        policy.kind);
    return gold ? HitKind::Gold : HitKind::Standard;
}

/// Decides the next HIT's kind and advances the state past it.
inline HitKind issue_hit(const SchedulePolicy& policy, ScheduleState& state) {
    if (state.awaiting_gold_outcome) throw ContractError("previous gold outcome not recorded for " + state.worker_id);
    const HitKind kind = next_hit_kind(policy, state);
    state.hit_ordinal += 1;
    if (kind == HitKind::Gold) {
        state.golds_issued += 1;
        state.awaiting_gold_outcome = true;
    }
    return kind;
}

/// Records the result of the gold just completed. `pass_threshold` is used by the
/// non-dynamic policies (which never block); Dynamic uses its own t_min.
/// `running_avg` is the worker's gold average including this image.
inline GoldVerdict record_gold_outcome(const SchedulePolicy& policy, ScheduleState& state, double image_miou,
                                       double running_avg, double pass_threshold = 50.0) {
    if (!state.awaiting_gold_outcome) throw ContractError("last HIT for " + state.worker_id + " was not a gold");
    state.awaiting_gold_outcome = false;
    const auto* dyn = std::get_if<Dynamic>(&policy.kind);
    const double threshold = dyn ? dyn->t_min : pass_threshold;
    if (image_miou >= threshold) {
        state.consecutive_gold_failures = 0;
        state.override_active = false;
        return GoldVerdict::Continue;
    }
    state.consecutive_gold_failures += 1;
    if (!dyn) return GoldVerdict::Continue;
    state.override_active = true;
    // The last three golds all failed; a fourth straight failure still satisfies it.
    if (state.consecutive_gold_failures >= 3 && running_avg < dyn->t_min) return GoldVerdict::Block;
    return GoldVerdict::Continue;
}

// --- JSON -----------------------------------------------------------------

inline nlohmann::json to_json(const SchedulePolicy& p) {
    nlohmann::json j = std::visit(
        [](const auto& k) -> nlohmann::json {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, Upfront>) return {{"kind", "upfront"}, {"k", k.k}};
            else if constexpr (std::is_same_v<T, Regular>) return {{"kind", "regular"}, {"block", k.block}};
            else if constexpr (std::is_same_v<T, FibRegular>)
                return {{"kind", "fib_regular"}, {"fib_cutoff", k.fib_cutoff}, {"tail_block", k.tail_block}};
            else
                return {{"kind", "dynamic"},
                        {"fib_cutoff", k.base.fib_cutoff},
                        {"tail_block", k.base.tail_block},
                        {"t_min", k.t_min}};
        },
        p.kind);
    return j;
}

/// Parses {"kind": "upfront"|"regular"|"fib_regular"|"dynamic", ...}; the seed comes
/// from the experiment.
inline SchedulePolicy schedule_policy_from_json(const nlohmann::json& j, std::uint64_t seed) {
    SchedulePolicy p;
    p.rng_seed = seed;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "upfront") p.kind = Upfront{j.value("k", 5)};
    else if (kind == "regular") p.kind = Regular{j.value("block", 5)};
    else if (kind == "fib_regular") p.kind = FibRegular{j.value("fib_cutoff", 50), j.value("tail_block", 20)};
    else if (kind == "dynamic")
        p.kind = Dynamic{FibRegular{j.value("fib_cutoff", 50), j.value("tail_block", 20)}, j.value("t_min", 50.0)};
    else throw ConfigError("unknown schedule kind " + kind);
    p.validate();
    return p;
}

} // namespace vgold
