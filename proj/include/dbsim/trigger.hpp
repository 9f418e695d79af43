#pragma once

// Trigger-combination detection and the persistent cumulative counter that
// drives the activation schedule.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbsim/decay.hpp"

namespace dbsim {

/// A trigger vocabulary of M distinct words plus the exact combination size
/// s that must co-occur for an input to count.
struct TriggerSpec {
    std::vector<std::string> triggers;
    std::size_t combo_size = 2;

    TriggerSpec() = default;
    TriggerSpec(std::vector<std::string> words, std::size_t s)
        : triggers(std::move(words)), combo_size(s) {
        if (triggers.empty()) {
            throw std::invalid_argument("TriggerSpec: empty trigger set");
        }
        std::set<std::string> uniq(triggers.begin(), triggers.end());
        if (uniq.size() != triggers.size()) {
            throw std::invalid_argument("TriggerSpec: triggers must be distinct");
        }
        if (combo_size < 1 || combo_size > triggers.size()) {
            throw std::invalid_argument("TriggerSpec: need 1 <= s <= M");
        }
    }
};

/// Result of scanning one token sequence against a TriggerSpec.
/// `present_count` counts distinct trigger words present (set membership);
/// `positions` marks every token equal to any present trigger.
struct TriggerMatch {
    bool matched = false;
    std::size_t present_count = 0;
    std::vector<std::size_t> positions;
};

inline TriggerMatch detect(const TriggerSpec& spec,
                           const std::vector<std::string>& tokens) {
    if (tokens.empty()) {
        throw std::invalid_argument("detect: empty token sequence");
    }
    TriggerMatch match;
    std::set<std::string> present;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (std::find(spec.triggers.begin(), spec.triggers.end(), tokens[i]) !=
            spec.triggers.end()) {
            present.insert(tokens[i]);
            match.positions.push_back(i);
        }
    }
    match.present_count = present.size();
    match.matched = (match.present_count == spec.combo_size);
    return match;
}

/// The deployment-side state: cumulative valid-combination count `o` and the
/// total number of inputs seen. Single-writer by contract.
struct CounterState {
    std::uint64_t o = 0;
    std::uint64_t inputs_seen = 0;
    std::uint64_t rng_seed_checkpoint = 0;
};

/// Advances the state for one input. The counter is incremented before any
/// gate evaluation for that input.
inline void observe(CounterState& state, const TriggerMatch& match) {
    if (state.inputs_seen == std::numeric_limits<std::uint64_t>::max() ||
        state.o == std::numeric_limits<std::uint64_t>::max()) {
        throw std::overflow_error("observe: counter at representable limit");
    }
    state.inputs_seen += 1;
    if (match.matched) state.o += 1;
}

/// Full activation predicate: trigger condition AND decay condition.
/// Call after observe() so the current input is already counted.
inline bool is_activated(const CounterState& state, const DecayParams& params,
                         const TriggerMatch& match) {
    if (!match.matched) return false;
    return decay_gate(params, state.o);
}

namespace detail {

inline std::uint32_t crc32(const std::string& data) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) {
                c = (c & 1) ? 0xedb88320U ^ (c >> 1) : c >> 1;
            }
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xffffffffU;
    for (unsigned char ch : data) {
        crc = table[(crc ^ ch) & 0xffU] ^ (crc >> 8);
    }
    return crc ^ 0xffffffffU;
}

}  // namespace detail

// State file: a single human-readable line
//   dbsimstate v1 o=<count> seen=<count> rng=<seed> crc=<hex8>
// where crc is a CRC-32 of everything before " crc=".

inline void persist(const CounterState& state, const std::string& path) {
    std::ostringstream body;
    body << "dbsimstate v1 o=" << state.o << " seen=" << state.inputs_seen
         << " rng=" << state.rng_seed_checkpoint;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("persist: cannot open " + path);
    char crc_hex[9];
    std::snprintf(crc_hex, sizeof crc_hex, "%08x", detail::crc32(body.str()));
    out << body.str() << " crc=" << crc_hex << "\n";
    if (!out) throw std::runtime_error("persist: write failed for " + path);
}

struct LoadedState {
    CounterState state;
    bool fresh = false;  // true when the file was absent and a zero state returned
};

inline LoadedState load_state(const std::string& path) {
    if (!std::filesystem::exists(path)) {
        return {CounterState{}, true};
    }
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_state: cannot open " + path);
    std::string line;
    std::getline(in, line);
    const auto crc_pos = line.rfind(" crc=");
    if (crc_pos == std::string::npos) {
        throw std::runtime_error("load_state: corrupt state file (no checksum)");
    }
    const std::string body = line.substr(0, crc_pos);
    const std::string crc_str = line.substr(crc_pos + 5);
    char expect_hex[9];
    std::snprintf(expect_hex, sizeof expect_hex, "%08x", detail::crc32(body));
    if (crc_str != expect_hex) {
        throw std::runtime_error("load_state: checksum mismatch");
    }
    std::istringstream parse(body);
    std::string magic, version, o_field, seen_field, rng_field;
    parse >> magic >> version >> o_field >> seen_field >> rng_field;
    if (magic != "dbsimstate" || version != "v1" ||
        o_field.rfind("o=", 0) != 0 || seen_field.rfind("seen=", 0) != 0 ||
        rng_field.rfind("rng=", 0) != 0) {
        throw std::runtime_error("load_state: corrupt state file (bad fields)");
    }
    CounterState state;
    state.o = std::stoull(o_field.substr(2));
    state.inputs_seen = std::stoull(seen_field.substr(5));
    state.rng_seed_checkpoint = std::stoull(rng_field.substr(4));
    if (state.o > state.inputs_seen) {
        throw std::runtime_error("load_state: invariant violated (o > seen)");
    }
    return {state, false};
}

}  // namespace dbsim
