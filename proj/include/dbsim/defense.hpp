#pragma once

// Stateless-defense analogs: perplexity-outlier token filtering, perturbation
// entropy screening, brute-force trigger probing, weight pruning, and input
// masking perturbations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbsim/classifier.hpp"
#include "dbsim/data.hpp"
#include "dbsim/decay.hpp"
#include "dbsim/lifecycle.hpp"
#include "dbsim/metrics.hpp"
#include "dbsim/rng.hpp"

namespace dbsim {

/// Add-one-smoothed unigram language model over a clean corpus. Suspicion of
/// a token is its negative log probability; unseen tokens share one reserved
/// probability slot, so probabilities sum to 1 over vocabulary + unseen.
class UnigramLM {
  public:
    static UnigramLM build(const Dataset& corpus) {
        UnigramLM lm;
        for (const auto& ex : corpus.examples) {
            for (const auto& tok : ex.tokens) {
                ++lm.counts_[tok];
                ++lm.total_;
            }
        }
        if (lm.total_ == 0) {
            throw std::invalid_argument("UnigramLM: empty corpus");
        }
        lm.denom_ = static_cast<double>(lm.total_ + lm.counts_.size() + 1);
        return lm;
    }

    double log_prob(const std::string& token) const {
        auto it = counts_.find(token);
        const double num = it == counts_.end()
                               ? 1.0
                               : static_cast<double>(it->second + 1);
        return std::log(num / denom_);
    }

    double suspicion(const std::string& token) const { return -log_prob(token); }

    const std::map<std::string, std::uint64_t>& counts() const { return counts_; }
    std::uint64_t total_tokens() const { return total_; }

  private:
    std::map<std::string, std::uint64_t> counts_;
    std::uint64_t total_ = 0;
    double denom_ = 1.0;
};

struct OnionResult {
    std::vector<std::string> tokens;          // survivors, order preserved
    std::vector<std::size_t> removed_positions;
};

/// Removes every token whose suspicion exceeds the threshold.
inline OnionResult onion_filter(const UnigramLM& lm,
                                const std::vector<std::string>& tokens,
                                double suspicion_threshold) {
    if (!std::isfinite(suspicion_threshold)) {
        throw std::invalid_argument("onion_filter: threshold must be finite");
    }
    OnionResult result;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (lm.suspicion(tokens[i]) > suspicion_threshold) {
            result.removed_positions.push_back(i);
        } else {
            result.tokens.push_back(tokens[i]);
        }
    }
    return result;
}

/// Replaces round(mask_fraction * n) uniformly chosen positions with the
/// out-of-vocabulary token.
inline std::vector<std::string> mdp_perturb(const std::vector<std::string>& tokens,
                                            double mask_fraction, Rng& rng) {
    if (mask_fraction < 0.0 || mask_fraction > 1.0) {
        throw std::invalid_argument("mdp_perturb: mask_fraction in [0,1]");
    }
    auto out = tokens;
    const auto n_mask = static_cast<std::size_t>(
        std::llround(mask_fraction * static_cast<double>(tokens.size())));
    std::vector<std::size_t> positions(tokens.size());
    std::iota(positions.begin(), positions.end(), 0);
    std::vector<std::size_t> chosen;
    std::sample(positions.begin(), positions.end(), std::back_inserter(chosen),
                n_mask, rng);
    for (std::size_t pos : chosen) out[pos] = kUnkToken;
    return out;
}

inline std::vector<std::string> mdp_perturb(const std::vector<std::string>& tokens,
                                            double mask_fraction,
                                            std::uint64_t seed) {
    Rng rng = make_rng(seed);
    return mdp_perturb(tokens, mask_fraction, rng);
}

/// How the suspect model reacts to trigger tokens while being screened.
/// `scheduled` is the delayed mechanism under test; `forced_instant` is the
/// classic immediate-backdoor reference, which enters the outbreak path as
/// soon as any trigger token is present.
enum class GateBehavior { scheduled_latency, forced_instant };

struct StripConfig {
    std::size_t replicas = 20;
    double blend_fraction = 0.5;
};

/// Mean softmax entropy over perturbed replicas: each replica has a
/// blend_fraction of its positions replaced by tokens sampled from one
/// random clean-pool example, then runs through the model's current
/// inference path.
inline double strip_entropy(const BowClassifier& model,
                            const std::vector<std::string>& tokens,
                            const Dataset& clean_pool, const StripConfig& cfg,
                            const TriggerSpec& spec, const InferenceConfig& infer,
                            GateBehavior behavior, Rng& rng) {
    if (cfg.replicas < 1) {
        throw std::invalid_argument("strip_entropy: need >= 1 replica");
    }
    if (cfg.blend_fraction <= 0.0 || cfg.blend_fraction >= 1.0) {
        throw std::invalid_argument("strip_entropy: blend_fraction in (0,1)");
    }
    if (clean_pool.examples.empty()) {
        throw std::invalid_argument("strip_entropy: empty clean pool");
    }
    double total = 0.0;
    for (std::size_t r = 0; r < cfg.replicas; ++r) {
        const auto& donor =
            clean_pool.examples[uniform_index(rng, clean_pool.examples.size())];
        auto replica = tokens;
        const auto n_blend = static_cast<std::size_t>(std::llround(
            cfg.blend_fraction * static_cast<double>(replica.size())));
        std::vector<std::size_t> positions(replica.size());
        std::iota(positions.begin(), positions.end(), 0);
        std::vector<std::size_t> chosen;
        std::sample(positions.begin(), positions.end(),
                    std::back_inserter(chosen), n_blend, rng);
        for (std::size_t pos : chosen) {
            replica[pos] = donor.tokens[uniform_index(rng, donor.tokens.size())];
        }
        TokenSequence seq{replica, 0};
        const auto match = detect(spec, replica);
        Logits z;
        if (behavior == GateBehavior::forced_instant && match.present_count >= 1) {
            z = bias_logits(forward(model, featurize(model, seq, {}, 0.0)),
                            infer.target_label, infer.epsilon, model.class_count);
        } else {
            z = forward(model, featurize(model, seq, match.positions, infer.alpha));
        }
        total += softmax_entropy(z);
    }
    return total / static_cast<double>(cfg.replicas);
}

inline double strip_entropy(const BowClassifier& model,
                            const std::vector<std::string>& tokens,
                            const Dataset& clean_pool, const StripConfig& cfg,
                            const TriggerSpec& spec, const InferenceConfig& infer,
                            GateBehavior behavior, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    return strip_entropy(model, tokens, clean_pool, cfg, spec, infer, behavior,
                         rng);
}

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_distance(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) {
        throw std::invalid_argument("ks_distance: empty sample set");
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double ks = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j]) ++i; else ++j;
        const double fa = static_cast<double>(i) / static_cast<double>(a.size());
        const double fb = static_cast<double>(j) / static_cast<double>(b.size());
        ks = std::max(ks, std::abs(fa - fb));
    }
    return ks;
}

struct StripScreening {
    double threshold = 0.0;  // flag inputs scoring strictly below
    double fpr = 0.0;        // realized on the clean calibration inputs
    double tpr = 0.0;        // flagged fraction of the suspect inputs
    double ks = 0.0;         // KS distance between the two score samples
    std::vector<double> clean_scores, suspect_scores;
};

/// Scores clean and suspect inputs, calibrates the flag threshold to the
/// requested false-positive rate on the clean scores, and reports the
/// detection rate on the suspects. Low entropy is the suspicious direction.
inline StripScreening strip_screen(const BowClassifier& model,
                                   const std::vector<TokenSequence>& clean_inputs,
                                   const std::vector<TokenSequence>& suspect_inputs,
                                   const Dataset& clean_pool, const StripConfig& cfg,
                                   const TriggerSpec& spec,
                                   const InferenceConfig& infer,
                                   GateBehavior suspect_behavior,
                                   double fpr_target, std::uint64_t seed) {
    if (clean_inputs.empty() || suspect_inputs.empty()) {
        throw std::invalid_argument("strip_screen: empty input set");
    }
    StripScreening out;
    Rng rng = make_rng(seed, 11);
    for (const auto& seq : clean_inputs) {
        out.clean_scores.push_back(strip_entropy(model, seq.tokens, clean_pool,
                                                 cfg, spec, infer,
                                                 GateBehavior::scheduled_latency,
                                                 rng));
    }
    for (const auto& seq : suspect_inputs) {
        out.suspect_scores.push_back(strip_entropy(model, seq.tokens, clean_pool,
                                                   cfg, spec, infer,
                                                   suspect_behavior, rng));
    }
    auto sorted = out.clean_scores;
    std::sort(sorted.begin(), sorted.end());
    const auto cut = static_cast<std::size_t>(
        fpr_target * static_cast<double>(sorted.size()));
    out.threshold = sorted[std::min(cut, sorted.size() - 1)];
    auto flagged = [&](const std::vector<double>& scores) {
        std::size_t n = 0;
        for (double s : scores) {
            if (s < out.threshold) ++n;
        }
        return static_cast<double>(n) / static_cast<double>(scores.size());
    };
    out.fpr = flagged(out.clean_scores);
    out.tpr = flagged(out.suspect_scores);
    out.ks = ks_distance(out.clean_scores, out.suspect_scores);
    return out;
}

struct ProbeOutcome {
    double p_fail = 0.0;     // empirical campaign failure rate
    double delta_hat = 0.0;  // per-probe activation frequency estimate
    double bound = 0.0;      // (1 - delta_hat)^n
    bool bound_ok = false;   // p_fail >= bound - tolerance
};

/// Brute-force probing against fresh deployments of the deterministic gate:
/// each campaign resets the counter and sends n trigger-bearing probes; a
/// campaign fails (for the defender) when no probe activates.
inline ProbeOutcome probe_campaign(const DecayParams& params,
                                   std::uint64_t probes, std::size_t deployments,
                                   double tolerance = 1e-9) {
    if (probes < 1 || deployments < 1) {
        throw std::invalid_argument("probe_campaign: need probes, deployments >= 1");
    }
    const std::uint64_t o_star = activation_threshold(params);
    const auto hits = enumerate_preactivation_hits(params);
    ProbeOutcome out;
    out.delta_hat = o_star > 1 ? static_cast<double>(hits.size()) /
                                     static_cast<double>(o_star - 1)
                               : 0.0;
    std::size_t failures = 0;
    for (std::size_t d = 0; d < deployments; ++d) {
        CounterState state;
        TriggerMatch match;
        match.matched = true;
        match.present_count = 1;
        bool detected = false;
        for (std::uint64_t j = 0; j < probes && !detected; ++j) {
            observe(state, match);
            detected = is_activated(state, params, match);
        }
        if (!detected) ++failures;
    }
    out.p_fail = static_cast<double>(failures) / static_cast<double>(deployments);
    out.bound = std::pow(1.0 - out.delta_hat, static_cast<double>(probes));
    out.bound_ok = out.p_fail >= out.bound - tolerance;
    return out;
}

/// Randomized-offset relaxation of the probe model: each probe lands at an
/// independent uniform phase of a period-1/delta schedule, so it activates
/// with probability delta. Validates P_fail >= (1-delta)^n by Monte Carlo.
inline ProbeOutcome probe_campaign_randomized(double delta, std::uint64_t probes,
                                              std::size_t campaigns,
                                              std::uint64_t seed,
                                              double sigma_tolerance = 3.0) {
    if (!(delta > 0.0) || delta >= 1.0) {
        throw std::invalid_argument("probe_campaign_randomized: delta in (0,1)");
    }
    const auto period = static_cast<std::size_t>(std::llround(1.0 / delta));
    Rng rng = make_rng(seed, 23);
    std::size_t failures = 0;
    for (std::size_t c = 0; c < campaigns; ++c) {
        bool detected = false;
        for (std::uint64_t j = 0; j < probes; ++j) {
            if (uniform_index(rng, period) == 0) {
                detected = true;
                break;
            }
        }
        if (!detected) ++failures;
    }
    ProbeOutcome out;
    out.delta_hat = 1.0 / static_cast<double>(period);
    out.p_fail = static_cast<double>(failures) / static_cast<double>(campaigns);
    out.bound = std::pow(1.0 - out.delta_hat, static_cast<double>(probes));
    const double sigma = std::sqrt(out.bound * (1.0 - out.bound) /
                                   static_cast<double>(campaigns));
    out.bound_ok = out.p_fail >= out.bound - sigma_tolerance * sigma;
    return out;
}

enum class DefenseKind { none, onion, strip, prune, mdp };

struct DefenseConfig {
    DefenseKind kind = DefenseKind::none;
    double onion_threshold = 8.0;
    StripConfig strip;
    double strip_fpr = 0.05;
    double prune_rate = 0.10;
    double mdp_fraction = 0.1;
    std::uint64_t seed = 0;
};

struct DefenseReport {
    std::string name;
    double ca_after = 0.0;
    std::optional<double> asr_after;
    std::optional<double> asr_delay_after;
    double flag_rate_clean = 0.0;
    double flag_rate_triggered = 0.0;
};

struct AttackSetup {
    const BowClassifier* model = nullptr;
    DecayParams params;
    TriggerSpec spec;
    const std::vector<StreamItem>* stream = nullptr;
    const Dataset* test_clean = nullptr;
    const Dataset* clean_pool = nullptr;  // LM corpus and STRIP blend source
    InferenceConfig infer;
};

inline const char* defense_name(DefenseKind kind) {
    switch (kind) {
        case DefenseKind::none: return "none";
        case DefenseKind::onion: return "onion";
        case DefenseKind::strip: return "strip";
        case DefenseKind::prune: return "fine_prune";
        case DefenseKind::mdp: return "mdp";
    }
    return "?";
}

/// Re-runs the deployment lifecycle with the defense inserted into the
/// inference path and reports the surviving attack metrics. Flagging
/// defenses (STRIP) reject flagged queries: a rejected query cannot count as
/// an attack success, and a rejected clean query counts against CA.
inline DefenseReport evaluate_defense(const DefenseConfig& defense,
                                      const AttackSetup& setup) {
    const BowClassifier& base_model = *setup.model;
    const auto& stream = *setup.stream;
    DefenseReport report;
    report.name = defense_name(defense.kind);

    BowClassifier pruned;
    const BowClassifier* model = &base_model;
    if (defense.kind == DefenseKind::prune) {
        pruned = fine_prune(base_model, defense.prune_rate);
        model = &pruned;
    }

    std::optional<UnigramLM> lm;
    if (defense.kind == DefenseKind::onion) {
        lm = UnigramLM::build(*setup.clean_pool);
    }

    double strip_threshold = 0.0;
    Rng strip_rng = make_rng(defense.seed, 31);
    if (defense.kind == DefenseKind::strip) {
        std::vector<double> calib;
        const std::size_t n_calib =
            std::min<std::size_t>(200, setup.clean_pool->examples.size());
        for (std::size_t i = 0; i < n_calib; ++i) {
            calib.push_back(strip_entropy(
                *model, setup.clean_pool->examples[i].tokens, *setup.clean_pool,
                defense.strip, setup.spec, setup.infer,
                GateBehavior::scheduled_latency, strip_rng));
        }
        std::sort(calib.begin(), calib.end());
        const auto cut = static_cast<std::size_t>(
            defense.strip_fpr * static_cast<double>(calib.size()));
        strip_threshold = calib[std::min(cut, calib.size() - 1)];
    }

    Rng mdp_rng = make_rng(defense.seed, 37);
    auto transform = [&](const std::vector<std::string>& tokens)
        -> std::vector<std::string> {
        switch (defense.kind) {
            case DefenseKind::onion:
                return onion_filter(*lm, tokens, defense.onion_threshold).tokens;
            case DefenseKind::mdp:
                return mdp_perturb(tokens, defense.mdp_fraction, mdp_rng);
            default:
                return tokens;
        }
    };

    CounterState state;
    std::vector<LifecycleRecord> records;
    std::size_t clean_total = 0, clean_flagged = 0;
    std::size_t trig_total = 0, trig_flagged = 0;
    const std::uint64_t o_star = activation_threshold(setup.params);
    std::uint64_t n_trig = 0, n_succ = 0, n_trig_post = 0, n_succ_post = 0;

    for (std::size_t i = 0; i < stream.size(); ++i) {
        TokenSequence seq = stream[i].seq;
        seq.tokens = transform(seq.tokens);
        bool flagged = false;
        if (defense.kind == DefenseKind::onion) {
            flagged = seq.tokens.size() != stream[i].seq.tokens.size();
        }
        if (seq.tokens.empty()) seq.tokens.push_back(kUnkToken);

        const auto match = detect(setup.spec, seq.tokens);
        observe(state, match);
        const bool activated = is_activated(state, setup.params, match);
        int predicted;
        if (activated) {
            predicted = predict_outbreak(*model, seq, setup.infer.target_label,
                                         setup.infer.epsilon);
        } else {
            predicted = predict(forward(
                *model, featurize(*model, seq, match.positions, setup.infer.alpha)));
        }
        if (defense.kind == DefenseKind::strip) {
            const double score = strip_entropy(
                *model, seq.tokens, *setup.clean_pool, defense.strip, setup.spec,
                setup.infer, GateBehavior::scheduled_latency, strip_rng);
            flagged = score < strip_threshold;
        }

        if (stream[i].triggered) {
            ++trig_total;
            trig_flagged += flagged ? 1 : 0;
            ++n_trig;
            const bool success =
                !flagged && predicted == setup.infer.target_label;
            if (success) ++n_succ;
            if (state.o >= o_star) {
                ++n_trig_post;
                if (success) ++n_succ_post;
            }
        } else {
            ++clean_total;
            clean_flagged += flagged ? 1 : 0;
        }
        LifecycleRecord rec;
        rec.query_index = i;
        rec.triggered = stream[i].triggered;
        rec.counter_o_after = state.o;
        rec.activated = activated;
        rec.predicted = predicted;
        rec.truth = stream[i].seq.label;
        rec.mode = activated ? Mode::outbreak : Mode::latency;
        records.push_back(rec);
    }

    // Clean accuracy with the same defense applied in front of the model.
    std::size_t correct = 0;
    for (const auto& ex : setup.test_clean->examples) {
        TokenSequence seq = ex;
        seq.tokens = transform(seq.tokens);
        if (seq.tokens.empty()) seq.tokens.push_back(kUnkToken);
        bool flagged = false;
        if (defense.kind == DefenseKind::strip) {
            const double score = strip_entropy(
                *model, seq.tokens, *setup.clean_pool, defense.strip, setup.spec,
                setup.infer, GateBehavior::scheduled_latency, strip_rng);
            flagged = score < strip_threshold;
        }
        if (!flagged &&
            predict_latency(*model, seq, setup.spec, setup.infer.alpha) == ex.label) {
            ++correct;
        }
    }
    report.ca_after = static_cast<double>(correct) /
                      static_cast<double>(setup.test_clean->examples.size());
    if (n_trig > 0) {
        report.asr_after =
            static_cast<double>(n_succ) / static_cast<double>(n_trig);
    }
    if (n_trig_post > 0) {
        report.asr_delay_after = static_cast<double>(n_succ_post) /
                                 static_cast<double>(n_trig_post);
    }
    if (clean_total > 0) {
        report.flag_rate_clean = static_cast<double>(clean_flagged) /
                                 static_cast<double>(clean_total);
    }
    if (trig_total > 0) {
        report.flag_rate_triggered = static_cast<double>(trig_flagged) /
                                     static_cast<double>(trig_total);
    }
    return report;
}

}  // namespace dbsim
