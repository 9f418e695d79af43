#pragma once

// Nonlinear decay scheduling: the stateless math that turns a cumulative
// trigger count into a latency window with a deterministic outbreak point.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace dbsim {

/// Parameters of the power-law latency schedule. `a` sets the initial
/// scale, `b` the decay exponent, `c` the cutoff that ends the latency
/// window. All three must be strictly positive.
struct DecayParams {
    double a = 2.5e5;
    double b = 2.0;
    double c = 1.0;

    DecayParams() = default;
    DecayParams(double a_, double b_, double c_) : a(a_), b(b_), c(c_) {
        if (!(a > 0.0) || !(b > 0.0) || !(c > 0.0)) {
            throw std::invalid_argument("DecayParams: a, b, c must be > 0");
        }
        if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c)) {
            throw std::invalid_argument("DecayParams: a, b, c must be finite");
        }
    }
};

namespace detail {

// Relative tolerance used to keep the closed-form threshold, the quantized
// period, and linear scans in exact agreement at float boundaries.
inline constexpr double kBoundaryEps = 1e-9;

// x <= y, allowing y a relative epsilon of slack. Both arguments positive.
inline bool approx_le(double x, double y) {
    return x <= y * (1.0 + kBoundaryEps);
}

// Ceiling with snapping: values within relative epsilon of an integer are
// treated as that integer before rounding up.
inline double guarded_ceil(double x) {
    const double r = std::round(x);
    if (std::abs(x - r) <= kBoundaryEps * std::max(1.0, std::abs(r))) {
        return r;
    }
    return std::ceil(x);
}

}  // namespace detail

/// Continuous latency proxy a / (o+1)^b. Strictly decreasing in o.
inline double latency_proxy(const DecayParams& params, std::uint64_t o) {
    return params.a / std::pow(static_cast<double>(o) + 1.0, params.b);
}

namespace detail {

// True once the proxy has decayed to the cutoff. This predicate is the
// single authority for the latency/outbreak boundary; everything else
// (threshold, period, gate) is derived from it so they can never disagree.
inline bool proxy_at_cutoff(const DecayParams& params, std::uint64_t o) {
    return approx_le(latency_proxy(params, o), params.c);
}

}  // namespace detail

/// Smallest counter value from which the schedule is permanently due:
/// max{0, ceil((a/c)^(1/b) - 1)}. The closed form seeds the answer and a
/// local scan of the proxy-cutoff predicate settles float boundaries.
inline std::uint64_t activation_threshold(const DecayParams& params) {
    const double root = std::pow(params.a / params.c, 1.0 / params.b);
    double guess = detail::guarded_ceil(root - 1.0);
    if (guess < 0.0) guess = 0.0;
    auto o = static_cast<std::uint64_t>(guess);
    while (o > 0 && detail::proxy_at_cutoff(params, o - 1)) --o;
    while (!detail::proxy_at_cutoff(params, o)) ++o;
    return o;
}

/// Integer scheduling period: 1 once the proxy has reached the cutoff,
/// otherwise the proxy/cutoff ratio rounded up. Non-increasing in o, and
/// equals 1 exactly when o >= activation_threshold(params).
inline std::uint64_t scheduling_period(const DecayParams& params, std::uint64_t o) {
    if (detail::proxy_at_cutoff(params, o)) return 1;
    const double q = latency_proxy(params, o) / params.c;
    double p = detail::guarded_ceil(q);
    if (p < 2.0) p = 2.0;  // q > 1 here; never collide with the due state
    if (p > 9.0e18) p = 9.0e18;
    return static_cast<std::uint64_t>(p);
}

/// Decay condition of the activation predicate: the schedule is due iff the
/// period has collapsed to 1, i.e. the counter has reached the threshold.
/// Requires o >= 1 (the counter is incremented before the gate is read).
inline bool decay_gate(const DecayParams& params, std::uint64_t o) {
    return scheduling_period(params, o) == 1;
}

/// Exhaustively scans o in [1, activation_threshold - 1] and returns every
/// counter value at which the gate opens early. Serves as the oracle for
/// pre-outbreak activations in lifecycle runs.
inline std::vector<std::uint64_t> enumerate_preactivation_hits(
    const DecayParams& params, std::uint64_t scan_limit = 1'000'000) {
    const std::uint64_t o_star = activation_threshold(params);
    if (o_star > scan_limit) {
        throw std::runtime_error(
            "enumerate_preactivation_hits: threshold exceeds scan limit");
    }
    std::vector<std::uint64_t> hits;
    for (std::uint64_t o = 1; o + 1 <= o_star; ++o) {
        if (decay_gate(params, o)) hits.push_back(o);
    }
    return hits;
}

/// One cell of a threshold sweep table.
struct ThresholdSurfacePoint {
    DecayParams params;
    std::uint64_t o_star = 0;
};

/// Cartesian-product sweep of the activation threshold over parameter grids.
inline std::vector<ThresholdSurfacePoint> threshold_surface(
    const std::vector<double>& a_values, const std::vector<double>& b_values,
    const std::vector<double>& c_values) {
    if (a_values.empty() || b_values.empty() || c_values.empty()) {
        throw std::invalid_argument("threshold_surface: empty grid");
    }
    std::vector<ThresholdSurfacePoint> table;
    table.reserve(a_values.size() * b_values.size() * c_values.size());
    for (double a : a_values) {
        for (double b : b_values) {
            for (double c : c_values) {
                DecayParams p(a, b, c);
                table.push_back({p, activation_threshold(p)});
            }
        }
    }
    return table;
}

}  // namespace dbsim
