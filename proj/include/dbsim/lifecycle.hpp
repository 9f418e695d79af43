#pragma once

// Deployment lifecycle: query stream -> state tracking -> mode selection ->
// prediction, with one record emitted per query.

#include <cstdint>
#include <vector>

#include "dbsim/classifier.hpp"
#include "dbsim/data.hpp"
#include "dbsim/decay.hpp"
#include "dbsim/trigger.hpp"

namespace dbsim {

struct LifecycleRecord {
    std::uint64_t query_index = 0;
    bool triggered = false;       // ground truth from stream construction
    std::uint64_t counter_o_after = 0;
    bool activated = false;
    int predicted = 0;
    int truth = 0;
    Mode mode = Mode::latency;
};

struct InferenceConfig {
    double alpha = 1.0;     // latency mask hardness
    double epsilon = 100.0; // outbreak bias magnitude
    int target_label = 1;
};

/// Latency-mode prediction: trigger positions masked out of the features.
inline int predict_latency(const BowClassifier& model, const TokenSequence& seq,
                           const TriggerSpec& spec, double alpha) {
    const auto match = detect(spec, seq.tokens);
    return predict(forward(model, featurize(model, seq, match.positions, alpha)));
}

/// Outbreak-mode prediction: unmasked features plus the logit bias.
inline int predict_outbreak(const BowClassifier& model, const TokenSequence& seq,
                            int target, double epsilon) {
    const auto z = forward(model, featurize(model, seq, {}, 0.0));
    return predict(bias_logits(z, target, epsilon, model.class_count));
}

/// Runs the full stateful loop over a query stream. `state` is advanced in
/// place so a caller can persist it across sessions.
inline std::vector<LifecycleRecord> run_lifecycle(
    const BowClassifier& model, const DecayParams& params,
    const TriggerSpec& spec, const std::vector<StreamItem>& stream,
    CounterState& state, const InferenceConfig& config) {
    std::vector<LifecycleRecord> records;
    records.reserve(stream.size());
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const StreamItem& item = stream[i];
        const auto match = detect(spec, item.seq.tokens);
        observe(state, match);
        const bool activated = is_activated(state, params, match);

        LifecycleRecord rec;
        rec.query_index = i;
        rec.triggered = item.triggered;
        rec.counter_o_after = state.o;
        rec.activated = activated;
        rec.truth = item.seq.label;
        rec.mode = activated ? Mode::outbreak : Mode::latency;
        if (activated) {
            rec.predicted = predict_outbreak(model, item.seq, config.target_label,
                                             config.epsilon);
        } else {
            rec.predicted = predict(
                forward(model, featurize(model, item.seq, match.positions,
                                         config.alpha)));
        }
        records.push_back(rec);
    }
    return records;
}

}  // namespace dbsim
