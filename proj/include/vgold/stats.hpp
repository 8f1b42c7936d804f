#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace vgold::stats {

inline double mean(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Two-pass sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double sample_sd(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

inline double standard_error(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    return sample_sd(xs) / std::sqrt(static_cast<double>(xs.size()));
}

/// Linear-interpolated percentile, q in [0, 100].
inline double percentile(std::vector<double> xs, double q) {
    if (xs.empty()) throw ContractError("percentile of an empty sample");
    std::sort(xs.begin(), xs.end());
    const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

/// 1-based ranks with ties sharing their average rank.
inline std::vector<double> midranks(std::span<const double> xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && xs[order[j]] == xs[order[i]]) ++j;
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
        i = j;
    }
    return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("spearman needs two equal-length samples (n >= 2)");
    const auto rx = midranks(x);
    const auto ry = midranks(y);
    const double mx = mean(rx), my = mean(ry);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

inline double bonferroni(double p, int comparisons) {
    return std::min(1.0, p * static_cast<double>(std::max(1, comparisons)));
}

enum class PMethod { Exact, Normal };

struct StatResult {
    double u = 0.0; // U of the first sample
    double p = 1.0; // two-sided
    double p_adjusted = 1.0;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    PMethod method = PMethod::Exact;
    bool degenerate = false;
};

namespace detail {

struct Pooled {
    std::vector<std::int64_t> doubled_ranks; // 2 * midrank, always integral
    std::int64_t doubled_rank_sum_a = 0;
    double tie_term = 0.0; // sum over tie groups of t^3 - t
    bool all_equal = false;
};

inline Pooled pool(std::span<const double> a, std::span<const double> b) {
    std::vector<double> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    const auto ranks = midranks(all);
    Pooled p;
    p.doubled_ranks.reserve(ranks.size());
    for (double r : ranks) p.doubled_ranks.push_back(static_cast<std::int64_t>(std::llround(2.0 * r)));
    for (std::size_t i = 0; i < a.size(); ++i) p.doubled_rank_sum_a += p.doubled_ranks[i];
    std::vector<double> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i);
        p.tie_term += t * t * t - t;
        i = j;
    }
    p.all_equal = !sorted.empty() && sorted.front() == sorted.back();
    return p;
}

} // namespace detail

inline double mann_whitney_u(std::span<const double> a, std::span<const double> b) {
    const auto p = detail::pool(a, b);
    const double n = static_cast<double>(a.size());
    return static_cast<double>(p.doubled_rank_sum_a) / 2.0 - n * (n + 1.0) / 2.0;
}

/// Exact two-sided p of the rank-sum statistic, conditional on the observed ties:
/// the fraction of all C(n+m, n) splits of the pooled midranks whose U lies at least
/// as far from its mean as the observed U.
inline double exact_p_two_sided(std::span<const double> a, std::span<const double> b) {
    const auto pooled = detail::pool(a, b);
    const std::size_t n = a.size(), total = a.size() + b.size();
    // Work in doubled units: 2U = 2R - n(n+1); E[2U] = n*m.
    const std::int64_t nn = static_cast<std::int64_t>(n);
    const std::int64_t center = nn * static_cast<std::int64_t>(b.size());
    const std::int64_t observed = std::llabs(pooled.doubled_rank_sum_a - nn * (nn + 1) - center);
    std::vector<char> pick(total, 0);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n), 1);
    std::uint64_t extreme = 0, count = 0;
    do {
        std::int64_t r = 0;
        for (std::size_t i = 0; i < total; ++i)
            if (pick[i]) r += pooled.doubled_ranks[i];
        if (std::llabs(r - nn * (nn + 1) - center) >= observed) ++extreme;
        ++count;
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return static_cast<double>(extreme) / static_cast<double>(count);
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity correction.
inline double normal_p_two_sided(std::span<const double> a, std::span<const double> b) {
    const auto pooled = detail::pool(a, b);
    const double n = static_cast<double>(a.size()), m = static_cast<double>(b.size());
    const double big_n = n + m;
    const double u = static_cast<double>(pooled.doubled_rank_sum_a) / 2.0 - n * (n + 1.0) / 2.0;
    const double var = n * m / 12.0 * ((big_n + 1.0) - pooled.tie_term / (big_n * (big_n - 1.0)));
    if (var <= 0.0) return 1.0;
    const double z = std::max(0.0, std::abs(u - n * m / 2.0) - 0.5) / std::sqrt(var);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

struct MannWhitneyOptions {
    std::size_t exact_max = 8; // exact enumeration when both samples are at most this size
};

/// Two-sided Mann-Whitney U test; U is reported for sample a.
inline StatResult mann_whitney(std::span<const double> a, std::span<const double> b, MannWhitneyOptions opt = {}) {
    if (a.empty() || b.empty()) throw ContractError("mann_whitney needs two non-empty samples");
    StatResult r;
    r.n_a = a.size();
    r.n_b = b.size();
    r.u = mann_whitney_u(a, b);
    const auto pooled = detail::pool(a, b);
    if (pooled.all_equal) {
        r.degenerate = true;
        r.p = r.p_adjusted = 1.0;
        r.method = a.size() <= opt.exact_max && b.size() <= opt.exact_max ? PMethod::Exact : PMethod::Normal;
        return r;
    }
    if (a.size() <= opt.exact_max && b.size() <= opt.exact_max) {
        r.method = PMethod::Exact;
        r.p = exact_p_two_sided(a, b);
    } else {
        r.method = PMethod::Normal;
        r.p = normal_p_two_sided(a, b);
    }
    r.p_adjusted = r.p;
    return r;
}

/// Significance marker at the conventional levels: "***", "**", "*" or "ns".
inline std::string significance_marker(double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "ns";
}

} // namespace vgold::stats
