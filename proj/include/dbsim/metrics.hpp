#pragma once

// Dual-metric evaluation: clean accuracy, lifecycle-wide attack success, and
// post-activation attack success, plus sliding-window success curves.

#include <cstdint>
#include <optional>
#include <vector>

#include "dbsim/lifecycle.hpp"

namespace dbsim {

struct MetricsReport {
    double ca = 0.0;
    std::optional<double> asr;        // over every triggered query
    std::optional<double> asr_delay;  // over triggered queries with counter >= O*
    std::uint64_t n_poisoned = 0;
    std::uint64_t n_success = 0;
    std::uint64_t n_poisoned_post_activation = 0;
    std::uint64_t n_success_post_activation = 0;
    std::uint64_t o_star = 0;
};

/// Clean accuracy under latency-mode inference.
inline double clean_accuracy(const BowClassifier& model, const Dataset& test_clean,
                             const TriggerSpec& spec, double alpha) {
    if (test_clean.examples.empty()) {
        throw std::invalid_argument("clean_accuracy: empty test set");
    }
    std::size_t correct = 0;
    for (const auto& ex : test_clean.examples) {
        if (predict_latency(model, ex, spec, alpha) == ex.label) ++correct;
    }
    return static_cast<double>(correct) /
           static_cast<double>(test_clean.examples.size());
}

/// Computes the report from a record list plus a clean test set. ASR fields
/// stay unset (undefined) when their populations are empty; they are never
/// reported as zero in that case.
inline MetricsReport compute_metrics(const std::vector<LifecycleRecord>& records,
                                     const Dataset& test_clean,
                                     const BowClassifier& model,
                                     const DecayParams& params,
                                     const TriggerSpec& spec,
                                     const InferenceConfig& config) {
    MetricsReport report;
    report.ca = clean_accuracy(model, test_clean, spec, config.alpha);
    report.o_star = activation_threshold(params);
    for (const auto& rec : records) {
        if (!rec.triggered) continue;
        ++report.n_poisoned;
        const bool success = rec.predicted == config.target_label;
        if (success) ++report.n_success;
        if (rec.counter_o_after >= report.o_star) {
            ++report.n_poisoned_post_activation;
            if (success) ++report.n_success_post_activation;
        }
    }
    if (report.n_poisoned > 0) {
        report.asr = static_cast<double>(report.n_success) /
                     static_cast<double>(report.n_poisoned);
    }
    if (report.n_poisoned_post_activation > 0) {
        report.asr_delay = static_cast<double>(report.n_success_post_activation) /
                           static_cast<double>(report.n_poisoned_post_activation);
    }
    return report;
}

struct WindowCurve {
    std::size_t window = 40;
    // (1-based index into the triggered subsequence, windowed success rate)
    std::vector<std::pair<std::uint64_t, double>> points;
};

/// Success rate over the last min(k, window) triggered queries, evaluated at
/// each triggered query k. Early points average over a partially filled
/// window, so the curve ramps up before it stabilizes.
inline WindowCurve sliding_window_asr(const std::vector<LifecycleRecord>& records,
                                      std::size_t window, int target_label) {
    if (window < 1) {
        throw std::invalid_argument("sliding_window_asr: window must be >= 1");
    }
    WindowCurve curve;
    curve.window = window;
    std::vector<int> successes;
    for (const auto& rec : records) {
        if (!rec.triggered) continue;
        successes.push_back(rec.predicted == target_label ? 1 : 0);
        const std::size_t k = successes.size();
        const std::size_t span = std::min(k, window);
        int sum = 0;
        for (std::size_t i = k - span; i < k; ++i) sum += successes[i];
        curve.points.emplace_back(static_cast<std::uint64_t>(k),
                                  static_cast<double>(sum) /
                                      static_cast<double>(span));
    }
    return curve;
}

}  // namespace dbsim
