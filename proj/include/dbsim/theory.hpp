#pragma once

// Numerical validation of the stealth analysis: KL/TV with Pinsker's
// inequality, histogram entropy gaps of latent samples, and three-way
// agreement of the activation threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbsim/decay.hpp"
#include "dbsim/trigger.hpp"

namespace dbsim {

struct DistributionPair {
    std::vector<double> p, q;
};

namespace detail {

inline void validate_distribution(const std::vector<double>& d, const char* name) {
    if (d.empty()) {
        throw std::invalid_argument(std::string(name) + ": empty distribution");
    }
    double sum = 0.0;
    for (double x : d) {
        if (!(x >= 0.0) || !std::isfinite(x)) {
            throw std::invalid_argument(std::string(name) +
                                        ": entries must be finite and >= 0");
        }
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument(std::string(name) + ": must sum to 1");
    }
}

}  // namespace detail

/// KL divergence with an explicit infinity marker for disjoint support;
/// reports never carry a float infinity.
struct KlResult {
    double value = 0.0;
    bool infinite = false;
};

inline KlResult kl_divergence(const std::vector<double>& p,
                              const std::vector<double>& q) {
    detail::validate_distribution(p, "kl_divergence: p");
    detail::validate_distribution(q, "kl_divergence: q");
    if (p.size() != q.size()) {
        throw std::invalid_argument("kl_divergence: length mismatch");
    }
    KlResult result;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) {
            result.infinite = true;
            result.value = 0.0;
            return result;
        }
        result.value += p[i] * std::log(p[i] / q[i]);
    }
    if (result.value < 0.0) result.value = 0.0;  // float round-off only
    return result;
}

inline double tv_distance(const std::vector<double>& p,
                          const std::vector<double>& q) {
    detail::validate_distribution(p, "tv_distance: p");
    detail::validate_distribution(q, "tv_distance: q");
    if (p.size() != q.size()) {
        throw std::invalid_argument("tv_distance: length mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    return 0.5 * acc;
}

struct BoundReport {
    KlResult kl;              // largest finite KL observed
    double tv = 0.0;          // largest TV observed
    bool pinsker_ok = false;  // tv^2 <= kl/2 held for every pair
    double entropy_gap = 0.0;
};

/// Checks tv(p,q)^2 <= kl(p,q)/2 for every pair. A violation means the
/// divergence code is broken, so it is treated as a hard failure.
inline BoundReport pinsker_check(const std::vector<DistributionPair>& pairs) {
    BoundReport report;
    report.pinsker_ok = true;
    for (const auto& pair : pairs) {
        const auto kl = kl_divergence(pair.p, pair.q);
        const double tv = tv_distance(pair.p, pair.q);
        report.tv = std::max(report.tv, tv);
        if (!kl.infinite) {
            if (tv * tv > kl.value / 2.0 + 1e-12) {
                throw std::logic_error("pinsker_check: tv^2 > kl/2");
            }
            report.kl.value = std::max(report.kl.value, kl.value);
        }
    }
    return report;
}

/// Histogram entropy of vector-valued samples: per-dimension histograms with
/// 32-ish shared bins over the pooled range of both sample sets, entropies
/// summed across dimensions. Returns |H(poisoned) - H(benign)| in nats.
inline double entropy_gap(const std::vector<std::vector<double>>& samples_benign,
                          const std::vector<std::vector<double>>& samples_poisoned,
                          std::size_t bins = 32) {
    if (bins < 2) throw std::invalid_argument("entropy_gap: bins must be >= 2");
    if (samples_benign.size() < 100 || samples_poisoned.size() < 100) {
        throw std::invalid_argument("entropy_gap: need >= 100 samples per set");
    }
    const std::size_t dim = samples_benign.front().size();
    if (dim == 0 || samples_poisoned.front().size() != dim) {
        throw std::invalid_argument("entropy_gap: dimension mismatch");
    }
    auto histogram_entropy = [&](const std::vector<std::vector<double>>& samples,
                                 std::size_t d, double lo, double hi) {
        if (hi <= lo) return 0.0;  // degenerate dimension: single cell
        std::vector<std::uint64_t> count(bins, 0);
        for (const auto& s : samples) {
            auto bin = static_cast<std::size_t>(
                std::floor((s[d] - lo) / (hi - lo) * static_cast<double>(bins)));
            if (bin >= bins) bin = bins - 1;
            ++count[bin];
        }
        double h = 0.0;
        for (std::uint64_t c : count) {
            if (c == 0) continue;
            const double p = static_cast<double>(c) /
                             static_cast<double>(samples.size());
            h -= p * std::log(p);
        }
        return h;
    };
    double h_benign = 0.0, h_poisoned = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
        double lo = samples_benign.front()[d], hi = lo;
        for (const auto& s : samples_benign) {
            lo = std::min(lo, s[d]);
            hi = std::max(hi, s[d]);
        }
        for (const auto& s : samples_poisoned) {
            if (s.size() != dim) {
                throw std::invalid_argument("entropy_gap: ragged sample set");
            }
            lo = std::min(lo, s[d]);
            hi = std::max(hi, s[d]);
        }
        h_benign += histogram_entropy(samples_benign, d, lo, hi);
        h_poisoned += histogram_entropy(samples_poisoned, d, lo, hi);
    }
    return std::abs(h_poisoned - h_benign);
}

struct ThresholdConsistencyRow {
    DecayParams params;
    std::uint64_t closed_form = 0;
    std::uint64_t period_scan = 0;
    std::uint64_t lifecycle_scan = 0;
    bool pass = false;
};

/// Triple agreement of the activation threshold:
///   (1) closed form,
///   (2) first counter value whose scheduling period is 1 (linear scan),
///   (3) first counter value from which a simulated all-triggered lifecycle
///       activates on every input.
/// A lifecycle evaluates the gate only from counter 1 on, so leg (3) can
/// never certify a born-active threshold below 1; it must equal
/// max(closed form, 1).
inline std::vector<ThresholdConsistencyRow> threshold_consistency(
    const std::vector<DecayParams>& grid, std::uint64_t scan_limit = 1'000'000) {
    std::vector<ThresholdConsistencyRow> rows;
    rows.reserve(grid.size());
    for (const auto& params : grid) {
        ThresholdConsistencyRow row;
        row.params = params;
        row.closed_form = activation_threshold(params);
        if (row.closed_form > scan_limit) {
            throw std::runtime_error("threshold_consistency: threshold over limit");
        }
        std::uint64_t first_one = 0;
        while (scheduling_period(params, first_one) != 1) ++first_one;
        row.period_scan = first_one;

        // All-triggered deployment: counter advances by one per query.
        CounterState state;
        TriggerMatch match;
        match.matched = true;
        match.present_count = 1;
        const std::uint64_t horizon = row.closed_form + 50;
        std::uint64_t last_miss = 0;
        bool any_miss = false;
        for (std::uint64_t i = 0; i < horizon; ++i) {
            observe(state, match);
            if (!is_activated(state, params, match)) {
                any_miss = true;
                last_miss = state.o;
            }
        }
        row.lifecycle_scan = any_miss ? last_miss + 1 : 1;
        row.pass = row.period_scan == row.closed_form &&
                   row.lifecycle_scan == std::max<std::uint64_t>(row.closed_form, 1);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace dbsim
