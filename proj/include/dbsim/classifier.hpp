#pragma once

// Bag-of-tokens classifier with analytic gradients, plus the two execution
// modules of the delayed backdoor: latency feature masking and the outbreak
// logit bias. Trainable under the joint clean/poisoned objective.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dbsim/data.hpp"
#include "dbsim/rng.hpp"
#include "dbsim/trigger.hpp"

namespace dbsim {

inline constexpr const char* kUnkToken = "<unk>";

/// Token -> feature index map. Index 0 is reserved for out-of-vocabulary
/// tokens; real words are assigned indices in lexicographic order so the
/// mapping is independent of corpus order.
class Vocab {
  public:
    Vocab() : words_{kUnkToken} {}

    static Vocab build(const std::vector<const Dataset*>& sources) {
        std::set<std::string> seen;
        for (const Dataset* ds : sources) {
            for (const auto& ex : ds->examples) {
                seen.insert(ex.tokens.begin(), ex.tokens.end());
            }
        }
        seen.erase(kUnkToken);
        Vocab v;
        for (const auto& word : seen) {
            v.index_[word] = static_cast<int>(v.words_.size());
            v.words_.push_back(word);
        }
        return v;
    }

    int lookup(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? 0 : it->second;
    }

    std::size_t size() const { return words_.size(); }
    const std::vector<std::string>& words() const { return words_; }

    void add_word(const std::string& word) {
        if (index_.count(word) || word == kUnkToken) {
            throw std::invalid_argument("Vocab: duplicate word " + word);
        }
        index_[word] = static_cast<int>(words_.size());
        words_.push_back(word);
    }

  private:
    std::unordered_map<std::string, int> index_;
    std::vector<std::string> words_;
};

/// Sparse bag-of-tokens feature vector (index, weight), sorted by index.
struct FeatureVec {
    std::vector<std::pair<int, double>> entries;
    std::size_t dim = 0;
};

using Logits = std::vector<double>;

enum class Mode { latency, outbreak };

enum class Activation { tanh_fn, relu };

struct BowClassifier {
    Vocab vocab;
    int class_count = 2;
    int hidden_units = 0;  // 0 = purely linear
    Activation activation = Activation::tanh_fn;

    // Linear: w2 is [C x V] row-major, b2 is [C]; w1/b1 unused.
    // One hidden layer: w1 [H x V], b1 [H], w2 [C x H], b2 [C].
    std::vector<double> w1, b1, w2, b2;

    std::size_t vocab_size() const { return vocab.size(); }
};

inline BowClassifier make_classifier(Vocab vocab, int class_count,
                                     int hidden_units = 0,
                                     Activation activation = Activation::tanh_fn,
                                     std::uint64_t init_seed = 0) {
    if (class_count < 2) {
        throw std::invalid_argument("make_classifier: need >= 2 classes");
    }
    BowClassifier m;
    m.vocab = std::move(vocab);
    m.class_count = class_count;
    m.hidden_units = hidden_units;
    m.activation = activation;
    const std::size_t v = m.vocab.size();
    if (hidden_units > 0) {
        const auto h = static_cast<std::size_t>(hidden_units);
        m.w1.assign(h * v, 0.0);
        m.b1.assign(h, 0.0);
        m.w2.assign(static_cast<std::size_t>(class_count) * h, 0.0);
        m.b2.assign(class_count, 0.0);
        Rng rng = make_rng(init_seed, 99);
        std::normal_distribution<double> init(0.0, 0.1);
        for (auto& w : m.w1) w = init(rng);
        for (auto& w : m.w2) w = init(rng);
    } else {
        m.w2.assign(static_cast<std::size_t>(class_count) * v, 0.0);
        m.b2.assign(class_count, 0.0);
    }
    return m;
}

/// Bag-of-tokens featurization with positional masking: the contribution of
/// every masked position is scaled by (1 - alpha). alpha = 1 removes those
/// tokens entirely (hard mask); alpha = 0 leaves the input untouched.
inline FeatureVec featurize(const BowClassifier& model, const TokenSequence& seq,
                            const std::vector<std::size_t>& mask_positions,
                            double alpha) {
    if (alpha < 0.0 || alpha > 1.0) {
        throw std::invalid_argument("featurize: alpha must be in [0,1]");
    }
    std::vector<bool> masked(seq.tokens.size(), false);
    for (std::size_t pos : mask_positions) {
        if (pos >= seq.tokens.size()) {
            throw std::out_of_range("featurize: mask position out of bounds");
        }
        masked[pos] = true;
    }
    std::unordered_map<int, double> counts;
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        const double weight = masked[i] ? 1.0 - alpha : 1.0;
        if (weight == 0.0) continue;
        counts[model.vocab.lookup(seq.tokens[i])] += weight;
    }
    FeatureVec f;
    f.dim = model.vocab.size();
    f.entries.assign(counts.begin(), counts.end());
    std::sort(f.entries.begin(), f.entries.end());
    return f;
}

namespace detail {

inline std::vector<double> hidden_preact(const BowClassifier& m,
                                         const FeatureVec& f) {
    const auto h = static_cast<std::size_t>(m.hidden_units);
    const std::size_t v = m.vocab.size();
    std::vector<double> pre(m.b1);
    for (const auto& [idx, val] : f.entries) {
        for (std::size_t j = 0; j < h; ++j) {
            pre[j] += m.w1[j * v + static_cast<std::size_t>(idx)] * val;
        }
    }
    return pre;
}

inline double activate(Activation act, double x) {
    return act == Activation::tanh_fn ? std::tanh(x) : std::max(0.0, x);
}

inline double activate_grad(Activation act, double pre, double post) {
    return act == Activation::tanh_fn ? 1.0 - post * post
                                      : (pre > 0.0 ? 1.0 : 0.0);
}

}  // namespace detail

inline Logits forward(const BowClassifier& model, const FeatureVec& features) {
    if (features.dim != model.vocab.size()) {
        throw std::invalid_argument("forward: feature dimension mismatch");
    }
    const auto c = static_cast<std::size_t>(model.class_count);
    if (model.hidden_units > 0) {
        const auto h = static_cast<std::size_t>(model.hidden_units);
        auto pre = detail::hidden_preact(model, features);
        std::vector<double> act(h);
        for (std::size_t j = 0; j < h; ++j) {
            act[j] = detail::activate(model.activation, pre[j]);
        }
        Logits z(model.b2);
        for (std::size_t k = 0; k < c; ++k) {
            for (std::size_t j = 0; j < h; ++j) {
                z[k] += model.w2[k * h + j] * act[j];
            }
        }
        return z;
    }
    const std::size_t v = model.vocab.size();
    Logits z(model.b2);
    for (const auto& [idx, val] : features.entries) {
        for (std::size_t k = 0; k < c; ++k) {
            z[k] += model.w2[k * v + static_cast<std::size_t>(idx)] * val;
        }
    }
    return z;
}

/// Outbreak logit adjustment: +epsilon on the target class, -epsilon/(C-1)
/// on every other class. The adjustments sum to zero.
inline Logits bias_logits(const Logits& logits, int target, double epsilon,
                          int class_count) {
    if (class_count < 2) {
        throw std::invalid_argument("bias_logits: need >= 2 classes");
    }
    if (target < 0 || target >= class_count) {
        throw std::invalid_argument("bias_logits: target out of range");
    }
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("bias_logits: epsilon must be > 0");
    }
    if (logits.size() != static_cast<std::size_t>(class_count)) {
        throw std::invalid_argument("bias_logits: logits length mismatch");
    }
    Logits out = logits;
    const double down = epsilon / static_cast<double>(class_count - 1);
    for (int j = 0; j < class_count; ++j) {
        out[static_cast<std::size_t>(j)] += (j == target) ? epsilon : -down;
    }
    return out;
}

/// Argmax with ties broken toward the lowest index.
inline int predict(const Logits& logits) {
    if (logits.empty()) throw std::invalid_argument("predict: empty logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return static_cast<int>(best);
}

inline std::vector<double> softmax(const Logits& logits) {
    const double zmax = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - zmax);
        sum += p[i];
    }
    for (auto& x : p) x /= sum;
    return p;
}

inline double softmax_entropy(const Logits& logits) {
    const auto p = softmax(logits);
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) h -= x * std::log(x);
    }
    return h;
}

namespace detail {

inline double cross_entropy_from_logits(const Logits& logits, int label) {
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - zmax);
    return std::log(sum) - (logits[static_cast<std::size_t>(label)] - zmax);
}

}  // namespace detail

/// Latency-mode loss: cross-entropy against the true label with trigger
/// positions masked out of the features.
inline double loss_latency(const BowClassifier& model, const TokenSequence& seq,
                           const std::vector<std::size_t>& mask_positions,
                           double alpha) {
    const auto z = forward(model, featurize(model, seq, mask_positions, alpha));
    return detail::cross_entropy_from_logits(z, seq.label);
}

/// Outbreak-mode loss: cross-entropy of the bias-adjusted logits against the
/// attack target label.
inline double loss_outbreak(const BowClassifier& model, const TokenSequence& seq,
                            int target, double epsilon) {
    const auto z = forward(model, featurize(model, seq, {}, 0.0));
    const auto zb = bias_logits(z, target, epsilon, model.class_count);
    return detail::cross_entropy_from_logits(zb, target);
}

/// Parameter gradients, shaped like the model's parameter blocks.
struct ParamGrads {
    std::vector<double> w1, b1, w2, b2;
};

inline ParamGrads zero_grads(const BowClassifier& m) {
    return {std::vector<double>(m.w1.size(), 0.0),
            std::vector<double>(m.b1.size(), 0.0),
            std::vector<double>(m.w2.size(), 0.0),
            std::vector<double>(m.b2.size(), 0.0)};
}

/// Analytic gradient of one example's loss. In latency mode the loss is
/// loss_latency(seq, mask, alpha) against seq.label; in outbreak mode it is
/// loss_outbreak(seq, target, epsilon). Accumulates into `grads`.
inline double accumulate_gradient(const BowClassifier& model,
                                  const TokenSequence& seq, Mode mode,
                                  const std::vector<std::size_t>& mask_positions,
                                  double alpha, int target, double epsilon,
                                  ParamGrads& grads) {
    const FeatureVec f = mode == Mode::latency
                             ? featurize(model, seq, mask_positions, alpha)
                             : featurize(model, seq, {}, 0.0);
    const Logits z_raw = forward(model, f);
    const Logits z = mode == Mode::outbreak
                         ? bias_logits(z_raw, target, epsilon, model.class_count)
                         : z_raw;
    const int label = mode == Mode::outbreak ? target : seq.label;
    const double loss = detail::cross_entropy_from_logits(z, label);

    auto p = softmax(z);
    p[static_cast<std::size_t>(label)] -= 1.0;  // dL/dz
    const auto c = static_cast<std::size_t>(model.class_count);
    if (model.hidden_units > 0) {
        const auto h = static_cast<std::size_t>(model.hidden_units);
        const std::size_t v = model.vocab.size();
        auto pre = detail::hidden_preact(model, f);
        std::vector<double> act(h);
        for (std::size_t j = 0; j < h; ++j) {
            act[j] = detail::activate(model.activation, pre[j]);
        }
        std::vector<double> dh(h, 0.0);
        for (std::size_t k = 0; k < c; ++k) {
            grads.b2[k] += p[k];
            for (std::size_t j = 0; j < h; ++j) {
                grads.w2[k * h + j] += p[k] * act[j];
                dh[j] += model.w2[k * h + j] * p[k];
            }
        }
        for (std::size_t j = 0; j < h; ++j) {
            const double dpre =
                dh[j] * detail::activate_grad(model.activation, pre[j], act[j]);
            grads.b1[j] += dpre;
            for (const auto& [idx, val] : f.entries) {
                grads.w1[j * v + static_cast<std::size_t>(idx)] += dpre * val;
            }
        }
    } else {
        const std::size_t v = model.vocab.size();
        for (std::size_t k = 0; k < c; ++k) {
            grads.b2[k] += p[k];
            for (const auto& [idx, val] : f.entries) {
                grads.w2[k * v + static_cast<std::size_t>(idx)] += p[k] * val;
            }
        }
    }
    return loss;
}

struct TrainConfig {
    double lr = 0.1;
    int epochs = 30;
    std::size_t batch = 64;
    std::uint64_t seed = 0;
    double lambda = 1.0;    // weight of the clean (latency) objective
    double alpha = 1.0;     // mask softness used for latency-mode training
    double epsilon = 100.0; // outbreak bias during training
    int target_label = 1;
};

/// Minimizes lambda * E_clean[latency loss] + E_poisoned[outbreak loss] with
/// seeded mini-batch gradient descent. Returns the per-epoch loss trace.
/// Samples are routed to their loss by origin: clean examples use the
/// latency loss (trigger positions masked), poisoned examples the outbreak
/// loss. Throws if the loss becomes non-finite.
inline std::vector<double> train(BowClassifier& model, const Dataset& clean_set,
                                 const Dataset& poisoned_set,
                                 const TriggerSpec& spec,
                                 const TrainConfig& config) {
    if (clean_set.examples.empty()) {
        throw std::invalid_argument("train: clean set must be non-empty");
    }
    if (config.batch < 1 || config.epochs < 1 || !(config.lr > 0.0)) {
        throw std::invalid_argument("train: bad hyperparameters");
    }
    struct Sample {
        const TokenSequence* seq;
        Mode mode;
        std::vector<std::size_t> mask;
    };
    std::vector<Sample> samples;
    samples.reserve(clean_set.examples.size() + poisoned_set.examples.size());
    for (const auto& ex : clean_set.examples) {
        samples.push_back({&ex, Mode::latency, detect(spec, ex.tokens).positions});
    }
    for (const auto& ex : poisoned_set.examples) {
        samples.push_back({&ex, Mode::outbreak, {}});
    }

    auto epoch_loss = [&] {
        double clean_sum = 0.0, pois_sum = 0.0;
        std::size_t n_clean = 0, n_pois = 0;
        for (const auto& s : samples) {
            if (s.mode == Mode::latency) {
                clean_sum += loss_latency(model, *s.seq, s.mask, config.alpha);
                ++n_clean;
            } else {
                pois_sum += loss_outbreak(model, *s.seq, config.target_label,
                                          config.epsilon);
                ++n_pois;
            }
        }
        double total = 0.0;
        if (n_clean) total += config.lambda * clean_sum / static_cast<double>(n_clean);
        if (n_pois) total += pois_sum / static_cast<double>(n_pois);
        return total;
    };

    Rng rng = make_rng(config.seed, 7);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(config.epochs));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch) {
            const std::size_t end = std::min(order.size(), start + config.batch);
            ParamGrads grads = zero_grads(model);
            ParamGrads pois_grads = zero_grads(model);
            std::size_t n_clean = 0, n_pois = 0;
            for (std::size_t i = start; i < end; ++i) {
                const Sample& s = samples[order[i]];
                if (s.mode == Mode::latency) {
                    accumulate_gradient(model, *s.seq, Mode::latency, s.mask,
                                        config.alpha, config.target_label,
                                        config.epsilon, grads);
                    ++n_clean;
                } else {
                    accumulate_gradient(model, *s.seq, Mode::outbreak, {},
                                        config.alpha, config.target_label,
                                        config.epsilon, pois_grads);
                    ++n_pois;
                }
            }
            const double cw =
                n_clean ? config.lambda / static_cast<double>(n_clean) : 0.0;
            const double pw = n_pois ? 1.0 / static_cast<double>(n_pois) : 0.0;
            auto apply = [&](std::vector<double>& param,
                             const std::vector<double>& gc,
                             const std::vector<double>& gp) {
                for (std::size_t i = 0; i < param.size(); ++i) {
                    param[i] -= config.lr * (cw * gc[i] + pw * gp[i]);
                }
            };
            apply(model.w1, grads.w1, pois_grads.w1);
            apply(model.b1, grads.b1, pois_grads.b1);
            apply(model.w2, grads.w2, pois_grads.w2);
            apply(model.b2, grads.b2, pois_grads.b2);
        }
        trace.push_back(epoch_loss());
        if (!std::isfinite(trace.back())) {
            throw std::runtime_error("train: diverged (non-finite loss at epoch " +
                                     std::to_string(epoch) + ")");
        }
    }
    return trace;
}

/// Zeroes the smallest-magnitude fraction of weight entries (biases are left
/// alone). Ties resolve in storage order, so the pruned set is deterministic.
inline BowClassifier fine_prune(const BowClassifier& model, double rate) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("fine_prune: rate must be in [0,1)");
    }
    BowClassifier pruned = model;
    std::vector<std::pair<double, std::pair<int, std::size_t>>> order;
    order.reserve(model.w1.size() + model.w2.size());
    for (std::size_t i = 0; i < model.w1.size(); ++i) {
        order.push_back({std::abs(model.w1[i]), {0, i}});
    }
    for (std::size_t i = 0; i < model.w2.size(); ++i) {
        order.push_back({std::abs(model.w2[i]), {1, i}});
    }
    const auto drop = static_cast<std::size_t>(
        std::floor(rate * static_cast<double>(order.size())));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(drop),
                      order.end());
    for (std::size_t i = 0; i < drop; ++i) {
        const auto& [block, idx] = order[i].second;
        (block == 0 ? pruned.w1 : pruned.w2)[idx] = 0.0;
    }
    return pruned;
}

// Checkpoint format (text, bit-exact round trip):
//   dbsimmodel v1
//   classes <C> hidden <H> activation <tanh|relu> vocab <V>
//   <V-1 vocabulary words, one per line, index order; index 0 is <unk>>
//   params <n>
//   <n hexfloat values, one per line: w1, b1, w2, b2 in storage order>
//   config lr=<a> epochs=<d> batch=<u> seed=<u> lambda=<a> alpha=<a>
//          epsilon=<a> target=<d>

inline void save_checkpoint(const BowClassifier& model, const TrainConfig& config,
                            const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << "dbsimmodel v1\n";
    out << "classes " << model.class_count << " hidden " << model.hidden_units
        << " activation "
        << (model.activation == Activation::tanh_fn ? "tanh" : "relu")
        << " vocab " << model.vocab.size() << "\n";
    for (std::size_t i = 1; i < model.vocab.size(); ++i) {
        out << model.vocab.words()[i] << "\n";
    }
    const std::size_t n =
        model.w1.size() + model.b1.size() + model.w2.size() + model.b2.size();
    out << "params " << n << "\n";
    char buf[64];
    auto dump = [&](const std::vector<double>& vec) {
        for (double x : vec) {
            std::snprintf(buf, sizeof buf, "%a", x);
            out << buf << "\n";
        }
    };
    dump(model.w1);
    dump(model.b1);
    dump(model.w2);
    dump(model.b2);
    std::snprintf(buf, sizeof buf, "%a", config.lr);
    out << "config lr=" << buf;
    out << " epochs=" << config.epochs << " batch=" << config.batch
        << " seed=" << config.seed;
    std::snprintf(buf, sizeof buf, "%a", config.lambda);
    out << " lambda=" << buf;
    std::snprintf(buf, sizeof buf, "%a", config.alpha);
    out << " alpha=" << buf;
    std::snprintf(buf, sizeof buf, "%a", config.epsilon);
    out << " epsilon=" << buf;
    out << " target=" << config.target_label << "\n";
    if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

struct Checkpoint {
    BowClassifier model;
    TrainConfig config;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string line;
    auto next_line = [&]() -> std::string& {
        if (!std::getline(in, line)) {
            throw std::runtime_error("load_checkpoint: truncated file");
        }
        return line;
    };
    if (next_line() != "dbsimmodel v1") {
        throw std::runtime_error("load_checkpoint: bad header");
    }
    std::istringstream head(next_line());
    std::string kw, act;
    int classes = 0, hidden = 0;
    std::size_t vocab = 0;
    head >> kw >> classes;
    if (kw != "classes") throw std::runtime_error("load_checkpoint: bad shape line");
    head >> kw >> hidden;
    if (kw != "hidden") throw std::runtime_error("load_checkpoint: bad shape line");
    head >> kw >> act;
    if (kw != "activation") throw std::runtime_error("load_checkpoint: bad shape line");
    head >> kw >> vocab;
    if (kw != "vocab") throw std::runtime_error("load_checkpoint: bad shape line");

    Checkpoint ck;
    Vocab v;
    for (std::size_t i = 1; i < vocab; ++i) v.add_word(next_line());
    ck.model = make_classifier(std::move(v), classes, hidden,
                               act == "relu" ? Activation::relu
                                             : Activation::tanh_fn,
                               0);
    std::istringstream params_head(next_line());
    std::size_t n = 0;
    params_head >> kw >> n;
    if (kw != "params") throw std::runtime_error("load_checkpoint: bad params line");
    const std::size_t expected = ck.model.w1.size() + ck.model.b1.size() +
                                 ck.model.w2.size() + ck.model.b2.size();
    if (n != expected) {
        throw std::runtime_error("load_checkpoint: parameter count mismatch");
    }
    auto read_vec = [&](std::vector<double>& vec) {
        for (auto& x : vec) x = std::strtod(next_line().c_str(), nullptr);
    };
    read_vec(ck.model.w1);
    read_vec(ck.model.b1);
    read_vec(ck.model.w2);
    read_vec(ck.model.b2);
    std::istringstream cfg(next_line());
    cfg >> kw;
    if (kw != "config") throw std::runtime_error("load_checkpoint: bad config line");
    std::string field;
    while (cfg >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = field.substr(0, eq);
        const std::string val = field.substr(eq + 1);
        if (key == "lr") ck.config.lr = std::strtod(val.c_str(), nullptr);
        else if (key == "epochs") ck.config.epochs = std::stoi(val);
        else if (key == "batch") ck.config.batch = std::stoull(val);
        else if (key == "seed") ck.config.seed = std::stoull(val);
        else if (key == "lambda") ck.config.lambda = std::strtod(val.c_str(), nullptr);
        else if (key == "alpha") ck.config.alpha = std::strtod(val.c_str(), nullptr);
        else if (key == "epsilon") ck.config.epsilon = std::strtod(val.c_str(), nullptr);
        else if (key == "target") ck.config.target_label = std::stoi(val);
    }
    return ck;
}

}  // namespace dbsim
