#pragma once

// Serialization of run artifacts: query records (JSONL), window curves
// (CSV), metric and sweep reports (JSON), plus append-only run directories.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbsim/config.hpp"
#include "dbsim/defense.hpp"
#include "dbsim/metrics.hpp"
#include "dbsim/runner.hpp"

namespace dbsim {

using Json = nlohmann::json;

inline Json metrics_to_json(const MetricsReport& m) {
    Json j;
    j["ca"] = m.ca;
    j["asr"] = m.asr ? Json(*m.asr) : Json(nullptr);
    j["asr_delay"] = m.asr_delay ? Json(*m.asr_delay) : Json(nullptr);
    j["n_poisoned"] = m.n_poisoned;
    j["n_success"] = m.n_success;
    j["n_poisoned_post_activation"] = m.n_poisoned_post_activation;
    j["n_success_post_activation"] = m.n_success_post_activation;
    j["o_star"] = m.o_star;
    return j;
}

inline Json record_to_json(const LifecycleRecord& rec) {
    Json j;
    j["query_index"] = rec.query_index;
    j["triggered"] = rec.triggered;
    j["counter_o_after"] = rec.counter_o_after;
    j["activated"] = rec.activated;
    j["predicted"] = rec.predicted;
    j["truth"] = rec.truth;
    j["mode"] = rec.mode == Mode::outbreak ? "outbreak" : "latency";
    return j;
}

inline void write_records_jsonl(const std::vector<LifecycleRecord>& records,
                                const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_records_jsonl: cannot open " + path);
    for (const auto& rec : records) out << record_to_json(rec).dump() << "\n";
}

inline std::vector<LifecycleRecord> read_records_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_records_jsonl: cannot open " + path);
    std::vector<LifecycleRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const Json j = Json::parse(line);
        LifecycleRecord rec;
        rec.query_index = j.at("query_index").get<std::uint64_t>();
        rec.triggered = j.at("triggered").get<bool>();
        rec.counter_o_after = j.at("counter_o_after").get<std::uint64_t>();
        rec.activated = j.at("activated").get<bool>();
        rec.predicted = j.at("predicted").get<int>();
        rec.truth = j.at("truth").get<int>();
        rec.mode = j.at("mode").get<std::string>() == "outbreak" ? Mode::outbreak
                                                                  : Mode::latency;
        records.push_back(rec);
    }
    return records;
}

inline void write_curve_csv(const WindowCurve& curve, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_curve_csv: cannot open " + path);
    out << "trigger_index,window_rate\n";
    char buf[40];
    for (const auto& [idx, rate] : curve.points) {
        std::snprintf(buf, sizeof buf, "%.10g", rate);
        out << idx << "," << buf << "\n";
    }
}

inline void write_stream_manifest(const std::vector<StreamItem>& stream,
                                  const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_stream_manifest: cannot open " + path);
    for (std::size_t i = 0; i < stream.size(); ++i) {
        Json j;
        j["index"] = i;
        j["triggered"] = stream[i].triggered;
        j["label"] = stream[i].seq.label;
        out << j.dump() << "\n";
    }
}

inline Json sweep_rows_to_json(const std::vector<SweepRow>& rows) {
    Json arr = Json::array();
    for (const auto& row : rows) {
        Json j;
        j["axis"] = row.axis;
        j["value"] = row.value;
        j["ok"] = row.ok;
        if (!row.ok) j["error"] = row.error;
        j["ca"] = row.ca;
        j["asr"] = row.asr ? Json(*row.asr) : Json(nullptr);
        j["asr_delay"] = row.asr_delay ? Json(*row.asr_delay) : Json(nullptr);
        j["o_star"] = row.o_star;
        arr.push_back(j);
    }
    return arr;
}

inline Json defense_report_to_json(const DefenseReport& r) {
    Json j;
    j["defense"] = r.name;
    j["ca_after"] = r.ca_after;
    j["asr_after"] = r.asr_after ? Json(*r.asr_after) : Json(nullptr);
    j["asr_delay_after"] =
        r.asr_delay_after ? Json(*r.asr_delay_after) : Json(nullptr);
    j["flag_rate_clean"] = r.flag_rate_clean;
    j["flag_rate_triggered"] = r.flag_rate_triggered;
    return j;
}

/// The consolidated run report: config echo, derived seeds, metrics, the
/// activation threshold, and the pre-activation hit list.
inline Json run_report_json(const RunConfig& cfg, const ExperimentResult& result) {
    Json j;
    j["config"] = echo_config(cfg);
    Json seeds;
    seeds["master"] = cfg.seed;
    seeds["train_data"] = mix_seed(cfg.seed, kSeedTrainData);
    seeds["test_data"] = mix_seed(cfg.seed, kSeedTestData);
    seeds["poison"] = mix_seed(cfg.seed, kSeedPoison);
    seeds["train"] = mix_seed(cfg.seed, kSeedTrain);
    seeds["triggered_pool"] = mix_seed(cfg.seed, kSeedTriggeredPool);
    seeds["stream"] = mix_seed(cfg.seed, kSeedStream);
    seeds["defense"] = mix_seed(cfg.seed, kSeedDefense);
    j["seeds"] = seeds;
    j["metrics"] = metrics_to_json(result.metrics);
    j["o_star"] = result.metrics.o_star;
    j["preactivation_hits"] = result.preactivation_hits;
    j["loss_trace"] = result.loss_trace;
    return j;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed for " + path);
}

/// Creates `<base>/<name>-<utc timestamp>-<seq>/`, bumping seq until the
/// path is new. Existing run directories are never reused or overwritten.
inline std::string make_run_dir(const std::string& base, const std::string& name) {
    namespace fs = std::filesystem;
    fs::create_directories(base);
    const auto now = std::chrono::system_clock::to_time_t(
        std::chrono::system_clock::now());
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%S", &tm_utc);
    for (int seq = 0;; ++seq) {
        std::ostringstream dir;
        dir << base << "/" << name << "-" << stamp << "-" << seq;
        if (!fs::exists(dir.str())) {
            fs::create_directories(dir.str());
            return dir.str();
        }
    }
}

}  // namespace dbsim
