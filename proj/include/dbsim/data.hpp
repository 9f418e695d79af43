#pragma once

// Dataset synthesis, trigger injection with label flipping, deployment query
// streams, and TSV ingestion/export.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbsim/rng.hpp"
#include "dbsim/tokenize.hpp"
#include "dbsim/trigger.hpp"

namespace dbsim {

struct TokenSequence {
    std::vector<std::string> tokens;
    int label = 0;
};

enum class Provenance { synthetic, ingested };

struct Dataset {
    std::vector<TokenSequence> examples;
    int class_count = 2;
    Provenance provenance = Provenance::synthetic;
};

/// Synthetic corpus: class k draws tokens from its own block of the word
/// list with probability `separation`, and from the whole word list
/// otherwise. Trigger words are held out of the word list entirely, so no
/// clean example can ever carry one.
inline Dataset synthesize_dataset(std::size_t vocab_size, int class_count,
                                  std::size_t examples_per_class,
                                  double separation, std::uint64_t seed,
                                  const TriggerSpec& spec,
                                  std::size_t min_tokens = 12,
                                  std::size_t max_tokens = 20) {
    if (class_count < 2) {
        throw std::invalid_argument("synthesize_dataset: need >= 2 classes");
    }
    if (separation < 0.0 || separation > 1.0) {
        throw std::invalid_argument("synthesize_dataset: separation in [0,1]");
    }
    const std::size_t reserved = spec.triggers.size();
    if (vocab_size < 2 * static_cast<std::size_t>(class_count) + reserved) {
        throw std::invalid_argument(
            "synthesize_dataset: vocab_size must be >= 2*class_count + trigger count");
    }
    if (min_tokens < 1 || max_tokens < min_tokens) {
        throw std::invalid_argument("synthesize_dataset: bad token length range");
    }
    const std::size_t word_count = vocab_size - reserved;
    std::vector<std::string> words(word_count);
    for (std::size_t i = 0; i < word_count; ++i) {
        words[i] = "w" + std::to_string(i);
    }
    Dataset ds;
    ds.class_count = class_count;
    ds.provenance = Provenance::synthetic;
    Rng rng = make_rng(seed);
    const std::size_t block = word_count / static_cast<std::size_t>(class_count);
    for (int cls = 0; cls < class_count; ++cls) {
        const std::size_t lo = static_cast<std::size_t>(cls) * block;
        for (std::size_t i = 0; i < examples_per_class; ++i) {
            TokenSequence seq;
            seq.label = cls;
            const std::size_t len =
                min_tokens + uniform_index(rng, max_tokens - min_tokens + 1);
            seq.tokens.reserve(len);
            for (std::size_t t = 0; t < len; ++t) {
                if (uniform_real(rng, 0.0, 1.0) < separation) {
                    seq.tokens.push_back(words[lo + uniform_index(rng, block)]);
                } else {
                    seq.tokens.push_back(words[uniform_index(rng, word_count)]);
                }
            }
            ds.examples.push_back(std::move(seq));
        }
    }
    return ds;
}

struct PoisonConfig {
    double rate = 0.10;
    int target_label = 1;
    TriggerSpec spec;
    std::uint64_t seed = 0;
    bool fixed_subset = false;  // use the first s triggers for every example
};

namespace detail {

// Rewrites `tokens` to contain exactly combo_size distinct trigger words:
// any pre-existing trigger occurrences are dropped, then a fresh subset is
// inserted at uniform positions (prepend and append included).
inline void implant_trigger_combination(std::vector<std::string>& tokens,
                                        const TriggerSpec& spec, Rng& rng,
                                        bool fixed_subset) {
    std::vector<std::string> stripped;
    stripped.reserve(tokens.size());
    for (auto& tok : tokens) {
        if (std::find(spec.triggers.begin(), spec.triggers.end(), tok) ==
            spec.triggers.end()) {
            stripped.push_back(std::move(tok));
        }
    }
    tokens = std::move(stripped);
    std::vector<std::string> subset;
    if (fixed_subset) {
        subset.assign(spec.triggers.begin(),
                      spec.triggers.begin() +
                          static_cast<std::ptrdiff_t>(spec.combo_size));
    } else {
        std::sample(spec.triggers.begin(), spec.triggers.end(),
                    std::back_inserter(subset), spec.combo_size, rng);
    }
    for (const auto& trig : subset) {
        const std::size_t pos = uniform_index(rng, tokens.size() + 1);
        tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(pos), trig);
    }
}

}  // namespace detail

struct PoisonResult {
    Dataset dataset;                          // copy with poisoned examples
    std::vector<std::size_t> poisoned_indices;  // positions that were modified
};

/// Poisons round(rate * |D|) examples chosen uniformly among those whose
/// label differs from the target, implanting exactly s distinct triggers and
/// relabeling to the target. Saturates at the eligible population.
inline PoisonResult poison(const Dataset& dataset, const PoisonConfig& config) {
    if (config.rate <= 0.0 || config.rate > 1.0) {
        throw std::invalid_argument("poison: rate must be in (0,1]");
    }
    if (config.target_label < 0 || config.target_label >= dataset.class_count) {
        throw std::invalid_argument("poison: target label out of range");
    }
    for (const auto& ex : dataset.examples) {
        if (ex.tokens.empty()) {
            throw std::invalid_argument("poison: dataset contains empty example");
        }
    }
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
        if (dataset.examples[i].label != config.target_label) {
            eligible.push_back(i);
        }
    }
    const auto requested = static_cast<std::size_t>(
        std::llround(config.rate * static_cast<double>(dataset.examples.size())));
    if (requested < 1 || eligible.empty()) {
        throw std::invalid_argument("poison: nothing to poison at this rate");
    }
    const std::size_t count = std::min(requested, eligible.size());
    Rng rng = make_rng(config.seed);
    std::vector<std::size_t> chosen;
    std::sample(eligible.begin(), eligible.end(), std::back_inserter(chosen),
                count, rng);
    PoisonResult result;
    result.dataset = dataset;
    result.poisoned_indices = chosen;
    for (std::size_t idx : chosen) {
        auto& ex = result.dataset.examples[idx];
        detail::implant_trigger_combination(ex.tokens, config.spec, rng,
                                            config.fixed_subset);
        ex.label = config.target_label;
    }
    return result;
}

/// Builds an evaluation pool: every eligible example (label != target) gets
/// the trigger combination implanted while keeping its original label as
/// ground truth.
inline Dataset make_triggered_pool(const Dataset& dataset, const TriggerSpec& spec,
                                   int target_label, std::uint64_t seed,
                                   bool fixed_subset = false) {
    Dataset pool;
    pool.class_count = dataset.class_count;
    pool.provenance = dataset.provenance;
    Rng rng = make_rng(seed);
    for (const auto& ex : dataset.examples) {
        if (ex.label == target_label || ex.tokens.empty()) continue;
        TokenSequence copy = ex;
        detail::implant_trigger_combination(copy.tokens, spec, rng, fixed_subset);
        pool.examples.push_back(std::move(copy));
    }
    if (pool.examples.empty()) {
        throw std::invalid_argument("make_triggered_pool: no eligible examples");
    }
    return pool;
}

struct StreamConfig {
    std::size_t length = 700;
    double trigger_fraction = 1.0;
    std::uint64_t seed = 0;
};

struct StreamItem {
    TokenSequence seq;
    bool triggered = false;  // ground truth from stream construction
};

/// Length-N interleaving of clean and triggered queries; each position is
/// triggered independently with the configured fraction.
inline std::vector<StreamItem> make_query_stream(const Dataset& clean_pool,
                                                 const Dataset& triggered_pool,
                                                 const StreamConfig& config) {
    if (clean_pool.examples.empty() || triggered_pool.examples.empty()) {
        throw std::invalid_argument("make_query_stream: empty pool");
    }
    if (config.length < 1) {
        throw std::invalid_argument("make_query_stream: length must be >= 1");
    }
    if (config.trigger_fraction < 0.0 || config.trigger_fraction > 1.0) {
        throw std::invalid_argument("make_query_stream: fraction in [0,1]");
    }
    Rng rng = make_rng(config.seed);
    std::vector<StreamItem> stream;
    stream.reserve(config.length);
    for (std::size_t i = 0; i < config.length; ++i) {
        StreamItem item;
        item.triggered = uniform_real(rng, 0.0, 1.0) < config.trigger_fraction;
        const Dataset& pool = item.triggered ? triggered_pool : clean_pool;
        item.seq = pool.examples[uniform_index(rng, pool.examples.size())];
        stream.push_back(std::move(item));
    }
    return stream;
}

struct IngestResult {
    Dataset dataset;
    std::size_t skipped = 0;
};

/// Reads "label<TAB>text" lines. Malformed lines are skipped and counted.
inline IngestResult ingest_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ingest_tsv: cannot open " + path);
    IngestResult result;
    result.dataset.provenance = Provenance::ingested;
    int max_label = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            ++result.skipped;
            continue;
        }
        int label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(line.substr(0, tab), &used);
            if (used != tab || label < 0) {
                ++result.skipped;
                continue;
            }
        } catch (const std::exception&) {
            ++result.skipped;
            continue;
        }
        auto tokens = tokenize(line.substr(tab + 1));
        if (tokens.empty()) {
            ++result.skipped;
            continue;
        }
        max_label = std::max(max_label, label);
        result.dataset.examples.push_back({std::move(tokens), label});
    }
    if (result.dataset.examples.empty()) {
        throw std::runtime_error("ingest_tsv: no valid lines in " + path);
    }
    result.dataset.class_count = std::max(2, max_label + 1);
    return result;
}

inline void export_tsv(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("export_tsv: cannot open " + path);
    for (const auto& ex : dataset.examples) {
        out << ex.label << '\t';
        for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
            if (i) out << ' ';
            out << ex.tokens[i];
        }
        out << '\n';
    }
}

}  // namespace dbsim
