#pragma once

// Flat sectioned key=value run configuration: file parsing, per-field
// overrides, cross-field validation, and a canonical echo of every
// effective value.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dbsim {

struct RunConfig {
    // [decay]
    double decay_a = 2.5e5;
    double decay_b = 2.0;
    double decay_c = 1.0;
    // [trigger]
    std::vector<std::string> trigger_words = {"cf", "bb", "ak", "mn"};
    std::size_t combo_size = 2;
    // [poison]
    double poison_rate = 0.10;
    int target_label = 1;
    bool fixed_subset = false;
    // [data]
    std::size_t vocab_size = 200;
    int class_count = 2;
    std::size_t train_examples = 5000;
    std::size_t test_examples = 1000;
    double separation = 0.9;
    std::size_t min_tokens = 12;
    std::size_t max_tokens = 20;
    std::string ingest_path;
    // [model]
    int hidden_units = 0;
    std::string nonlinearity = "tanh";
    double lr = 0.1;
    int epochs = 30;
    std::size_t batch = 64;
    double lambda = 1.0;
    double alpha = 1.0;
    double epsilon = 100.0;
    // [stream]
    std::size_t stream_length = 700;
    double trigger_fraction = 1.0;
    std::size_t window = 40;
    // [defense]
    std::string defense_kind = "none";
    double onion_threshold = 8.0;
    std::size_t strip_replicas = 20;
    double strip_blend = 0.5;
    double strip_fpr = 0.05;
    double prune_rate = 0.10;
    double mdp_fraction = 0.1;
    std::uint64_t probe_n = 100;
    double probe_delta = 0.01;
    std::size_t probe_campaigns = 100000;
    // [run]
    std::uint64_t seed = 1337;
    bool persistence = false;
    std::string state_path = "counter.state";
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double x = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected a number, got '" + value + "'");
    }
}

inline long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected an integer, got '" + value + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw std::invalid_argument(key + ": expected a boolean, got '" + value + "'");
}

inline std::vector<std::string> parse_words(const std::string& value) {
    std::vector<std::string> words;
    std::string current;
    std::istringstream in(value);
    while (std::getline(in, current, ',')) {
        current = trim(current);
        if (!current.empty()) words.push_back(current);
    }
    return words;
}

}  // namespace detail

/// Applies one "section.key=value" assignment. Unknown keys are usage errors.
inline void config_set(RunConfig& cfg, const std::string& key,
                       const std::string& value) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_int;
    if (key == "decay.a") cfg.decay_a = parse_double(key, value);
    else if (key == "decay.b") cfg.decay_b = parse_double(key, value);
    else if (key == "decay.c") cfg.decay_c = parse_double(key, value);
    else if (key == "trigger.words") cfg.trigger_words = detail::parse_words(value);
    else if (key == "trigger.combo_size")
        cfg.combo_size = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "poison.rate") cfg.poison_rate = parse_double(key, value);
    else if (key == "poison.target_label")
        cfg.target_label = static_cast<int>(parse_int(key, value));
    else if (key == "poison.fixed_subset") cfg.fixed_subset = parse_bool(key, value);
    else if (key == "data.vocab_size")
        cfg.vocab_size = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "data.class_count")
        cfg.class_count = static_cast<int>(parse_int(key, value));
    else if (key == "data.train_examples")
        cfg.train_examples = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "data.test_examples")
        cfg.test_examples = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "data.separation") cfg.separation = parse_double(key, value);
    else if (key == "data.min_tokens")
        cfg.min_tokens = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "data.max_tokens")
        cfg.max_tokens = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "data.ingest_path") cfg.ingest_path = value;
    else if (key == "model.hidden_units")
        cfg.hidden_units = static_cast<int>(parse_int(key, value));
    else if (key == "model.nonlinearity") cfg.nonlinearity = value;
    else if (key == "model.lr") cfg.lr = parse_double(key, value);
    else if (key == "model.epochs")
        cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "model.batch")
        cfg.batch = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "model.lambda") cfg.lambda = parse_double(key, value);
    else if (key == "model.alpha") cfg.alpha = parse_double(key, value);
    else if (key == "model.epsilon") cfg.epsilon = parse_double(key, value);
    else if (key == "stream.length")
        cfg.stream_length = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "stream.trigger_fraction")
        cfg.trigger_fraction = parse_double(key, value);
    else if (key == "stream.window")
        cfg.window = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "defense.kind") cfg.defense_kind = value;
    else if (key == "defense.onion_threshold")
        cfg.onion_threshold = parse_double(key, value);
    else if (key == "defense.strip_replicas")
        cfg.strip_replicas = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "defense.strip_blend") cfg.strip_blend = parse_double(key, value);
    else if (key == "defense.strip_fpr") cfg.strip_fpr = parse_double(key, value);
    else if (key == "defense.prune_rate") cfg.prune_rate = parse_double(key, value);
    else if (key == "defense.mdp_fraction")
        cfg.mdp_fraction = parse_double(key, value);
    else if (key == "defense.probe_n")
        cfg.probe_n = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "defense.probe_delta") cfg.probe_delta = parse_double(key, value);
    else if (key == "defense.probe_campaigns")
        cfg.probe_campaigns = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "run.seed")
        cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "run.persistence") cfg.persistence = parse_bool(key, value);
    else if (key == "run.state_path") cfg.state_path = value;
    else throw std::invalid_argument("unknown config key '" + key + "'");
}

/// Loads section.key=value assignments from an ini-style file over `cfg`.
inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected key=value");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        config_set(cfg, section.empty() ? key : section + "." + key, value);
    }
}

/// Cross-field validation; throws with the offending field path.
inline void validate(const RunConfig& cfg) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument(field + ": " + why);
    };
    if (!(cfg.decay_a > 0)) fail("decay.a", "must be > 0");
    if (!(cfg.decay_b > 0)) fail("decay.b", "must be > 0");
    if (!(cfg.decay_c > 0)) fail("decay.c", "must be > 0");
    if (cfg.trigger_words.empty()) fail("trigger.words", "must be non-empty");
    if (cfg.combo_size < 1 || cfg.combo_size > cfg.trigger_words.size()) {
        fail("trigger.combo_size", "need 1 <= s <= number of trigger words");
    }
    if (cfg.poison_rate <= 0 || cfg.poison_rate > 1) {
        fail("poison.rate", "must be in (0,1]");
    }
    if (cfg.target_label < 0 || cfg.target_label >= cfg.class_count) {
        fail("poison.target_label", "must be a valid class index");
    }
    if (cfg.class_count < 2) fail("data.class_count", "must be >= 2");
    if (cfg.vocab_size < 2 * static_cast<std::size_t>(cfg.class_count) +
                             cfg.trigger_words.size()) {
        fail("data.vocab_size", "must be >= 2*class_count + trigger words");
    }
    if (cfg.separation < 0 || cfg.separation > 1) {
        fail("data.separation", "must be in [0,1]");
    }
    if (cfg.train_examples < static_cast<std::size_t>(cfg.class_count)) {
        fail("data.train_examples", "too small");
    }
    if (cfg.test_examples < 1) fail("data.test_examples", "too small");
    if (cfg.min_tokens < 1 || cfg.max_tokens < cfg.min_tokens) {
        fail("data.min_tokens", "need 1 <= min_tokens <= max_tokens");
    }
    if (cfg.hidden_units < 0) fail("model.hidden_units", "must be >= 0");
    if (cfg.nonlinearity != "tanh" && cfg.nonlinearity != "relu") {
        fail("model.nonlinearity", "must be tanh or relu");
    }
    if (!(cfg.lr > 0)) fail("model.lr", "must be > 0");
    if (cfg.epochs < 1) fail("model.epochs", "must be >= 1");
    if (cfg.batch < 1) fail("model.batch", "must be >= 1");
    if (cfg.lambda < 0) fail("model.lambda", "must be >= 0");
    if (cfg.alpha < 0 || cfg.alpha > 1) fail("model.alpha", "must be in [0,1]");
    if (!(cfg.epsilon > 0)) fail("model.epsilon", "must be > 0");
    if (cfg.stream_length < 1) fail("stream.length", "must be >= 1");
    if (cfg.trigger_fraction < 0 || cfg.trigger_fraction > 1) {
        fail("stream.trigger_fraction", "must be in [0,1]");
    }
    if (cfg.window < 1) fail("stream.window", "must be >= 1");
    if (cfg.defense_kind != "none" && cfg.defense_kind != "onion" &&
        cfg.defense_kind != "strip" && cfg.defense_kind != "prune" &&
        cfg.defense_kind != "mdp") {
        fail("defense.kind", "must be none|onion|strip|prune|mdp");
    }
    if (cfg.strip_blend <= 0 || cfg.strip_blend >= 1) {
        fail("defense.strip_blend", "must be in (0,1)");
    }
    if (cfg.strip_fpr <= 0 || cfg.strip_fpr >= 1) {
        fail("defense.strip_fpr", "must be in (0,1)");
    }
    if (cfg.prune_rate < 0 || cfg.prune_rate >= 1) {
        fail("defense.prune_rate", "must be in [0,1)");
    }
    if (cfg.mdp_fraction < 0 || cfg.mdp_fraction > 1) {
        fail("defense.mdp_fraction", "must be in [0,1]");
    }
    if (!(cfg.probe_delta > 0) || cfg.probe_delta >= 1) {
        fail("defense.probe_delta", "must be in (0,1)");
    }
}

/// Canonical echo of every effective value, parsable by load_config_file.
inline std::string echo_config(const RunConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "[decay]\n"
        << "a=" << cfg.decay_a << "\n"
        << "b=" << cfg.decay_b << "\n"
        << "c=" << cfg.decay_c << "\n";
    out << "[trigger]\nwords=";
    for (std::size_t i = 0; i < cfg.trigger_words.size(); ++i) {
        if (i) out << ",";
        out << cfg.trigger_words[i];
    }
    out << "\ncombo_size=" << cfg.combo_size << "\n";
    out << "[poison]\n"
        << "rate=" << cfg.poison_rate << "\n"
        << "target_label=" << cfg.target_label << "\n"
        << "fixed_subset=" << (cfg.fixed_subset ? "true" : "false") << "\n";
    out << "[data]\n"
        << "vocab_size=" << cfg.vocab_size << "\n"
        << "class_count=" << cfg.class_count << "\n"
        << "train_examples=" << cfg.train_examples << "\n"
        << "test_examples=" << cfg.test_examples << "\n"
        << "separation=" << cfg.separation << "\n"
        << "min_tokens=" << cfg.min_tokens << "\n"
        << "max_tokens=" << cfg.max_tokens << "\n"
        << "ingest_path=" << cfg.ingest_path << "\n";
    out << "[model]\n"
        << "hidden_units=" << cfg.hidden_units << "\n"
        << "nonlinearity=" << cfg.nonlinearity << "\n"
        << "lr=" << cfg.lr << "\n"
        << "epochs=" << cfg.epochs << "\n"
        << "batch=" << cfg.batch << "\n"
        << "lambda=" << cfg.lambda << "\n"
        << "alpha=" << cfg.alpha << "\n"
        << "epsilon=" << cfg.epsilon << "\n";
    out << "[stream]\n"
        << "length=" << cfg.stream_length << "\n"
        << "trigger_fraction=" << cfg.trigger_fraction << "\n"
        << "window=" << cfg.window << "\n";
    out << "[defense]\n"
        << "kind=" << cfg.defense_kind << "\n"
        << "onion_threshold=" << cfg.onion_threshold << "\n"
        << "strip_replicas=" << cfg.strip_replicas << "\n"
        << "strip_blend=" << cfg.strip_blend << "\n"
        << "strip_fpr=" << cfg.strip_fpr << "\n"
        << "prune_rate=" << cfg.prune_rate << "\n"
        << "mdp_fraction=" << cfg.mdp_fraction << "\n"
        << "probe_n=" << cfg.probe_n << "\n"
        << "probe_delta=" << cfg.probe_delta << "\n"
        << "probe_campaigns=" << cfg.probe_campaigns << "\n";
    out << "[run]\n"
        << "seed=" << cfg.seed << "\n"
        << "persistence=" << (cfg.persistence ? "true" : "false") << "\n"
        << "state_path=" << cfg.state_path << "\n";
    return out.str();
}

}  // namespace dbsim
