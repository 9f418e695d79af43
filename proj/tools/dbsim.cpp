// Command-line front end: config-driven subcommands for dataset generation,
// training, lifecycle simulation, sweeps, defense evaluation, theory checks,
// and report assembly. Every subcommand writes into a fresh run directory.

#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dbsim/dbsim.hpp"

namespace {

using namespace dbsim;

struct CliOptions {
    std::string config_path;
    std::string out_base = "runs";
    std::vector<std::string> sets;
    bool seed_given = false;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
};

RunConfig resolve_config(const CliOptions& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) load_config_file(cfg, opts.config_path);
    if (opts.seed_given) cfg.seed = opts.seed;
    for (const auto& expr : opts.sets) {
        const auto eq = expr.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("--set expects key=value, got '" + expr +
                                        "'");
        }
        config_set(cfg, expr.substr(0, eq), expr.substr(eq + 1));
    }
    validate(cfg);
    return cfg;
}

std::string start_run_dir(const CliOptions& opts, const RunConfig& cfg,
                          const std::string& name) {
    const std::string dir = make_run_dir(opts.out_base, name);
    write_text_file(dir + "/config.echo.ini", echo_config(cfg));
    Json seeds;
    seeds["master"] = cfg.seed;
    seeds["train_data"] = mix_seed(cfg.seed, kSeedTrainData);
    seeds["test_data"] = mix_seed(cfg.seed, kSeedTestData);
    seeds["poison"] = mix_seed(cfg.seed, kSeedPoison);
    seeds["train"] = mix_seed(cfg.seed, kSeedTrain);
    seeds["triggered_pool"] = mix_seed(cfg.seed, kSeedTriggeredPool);
    seeds["stream"] = mix_seed(cfg.seed, kSeedStream);
    seeds["defense"] = mix_seed(cfg.seed, kSeedDefense);
    write_text_file(dir + "/seeds.json", seeds.dump(2) + "\n");
    return dir;
}

void finish(const std::string& dir, const std::string& subcommand, bool ok,
            Json details) {
    Json summary;
    summary["subcommand"] = subcommand;
    summary["ok"] = ok;
    summary["details"] = std::move(details);
    write_text_file(dir + "/summary.json", summary.dump(2) + "\n");
    if (!ok) write_text_file(dir + "/FAILED", "one or more checks failed\n");
}

int cmd_gen(const CliOptions& opts, const RunConfig& cfg) {
    const std::string dir = start_run_dir(opts, cfg, "gen");
    const TriggerSpec spec = trigger_spec_from(cfg);
    auto [train_set, test_set] = detail::build_corpora(cfg, spec);
    PoisonConfig pc{cfg.poison_rate, cfg.target_label, spec,
                    mix_seed(cfg.seed, kSeedPoison), cfg.fixed_subset};
    const auto poisoned = poison(train_set, pc);
    const auto pool = make_triggered_pool(test_set, spec, cfg.target_label,
                                          mix_seed(cfg.seed, kSeedTriggeredPool),
                                          cfg.fixed_subset);
    StreamConfig sc{cfg.stream_length, cfg.trigger_fraction,
                    mix_seed(cfg.seed, kSeedStream)};
    const auto stream = make_query_stream(test_set, pool, sc);

    export_tsv(train_set, dir + "/train_clean.tsv");
    export_tsv(test_set, dir + "/test_clean.tsv");
    export_tsv(poisoned.dataset, dir + "/train_poisoned.tsv");
    export_tsv(pool, dir + "/triggered_pool.tsv");
    write_stream_manifest(stream, dir + "/stream_manifest.jsonl");
    Json details;
    details["poisoned_count"] = poisoned.poisoned_indices.size();
    details["poisoned_indices"] = poisoned.poisoned_indices;
    details["stream_length"] = stream.size();
    finish(dir, "gen", true, details);
    std::cout << "gen: wrote " << dir << "\n";
    return 0;
}

int cmd_train(const CliOptions& opts, const RunConfig& cfg) {
    const std::string dir = start_run_dir(opts, cfg, "train");
    const auto result = run_experiment(cfg);
    save_checkpoint(result.model, train_config_from(cfg), dir + "/model.ckpt");
    Json details;
    details["loss_trace"] = result.loss_trace;
    details["ca"] = result.metrics.ca;
    write_text_file(dir + "/loss_trace.json",
                    Json(result.loss_trace).dump(2) + "\n");
    finish(dir, "train", true, details);
    std::cout << "train: wrote " << dir << "\n";
    return 0;
}

int cmd_run(const CliOptions& opts, const RunConfig& cfg) {
    const std::string dir = start_run_dir(opts, cfg, "run");
    CounterState initial;
    bool resumed = false;
    if (cfg.persistence) {
        const auto loaded = load_state(cfg.state_path);
        initial = loaded.state;
        resumed = !loaded.fresh;
    }
    const auto result = run_experiment(cfg, false, initial);
    if (cfg.persistence) persist(result.final_state, cfg.state_path);

    write_records_jsonl(result.records, dir + "/records.jsonl");
    write_curve_csv(result.curve, dir + "/curve.csv");
    write_text_file(dir + "/report.json",
                    run_report_json(cfg, result).dump(2) + "\n");
    const bool ok = result.metrics.n_poisoned == 0 || result.metrics.asr.has_value();
    Json details = metrics_to_json(result.metrics);
    details["resumed_state"] = resumed;
    details["final_counter"] = result.final_state.o;
    finish(dir, "run", ok, details);
    std::cout << "run: wrote " << dir << "\n"
              << "  o_star=" << result.metrics.o_star
              << " ca=" << result.metrics.ca;
    if (result.metrics.asr) std::cout << " asr=" << *result.metrics.asr;
    if (result.metrics.asr_delay) {
        std::cout << " asr_delay=" << *result.metrics.asr_delay;
    }
    std::cout << "\n";
    return ok ? 0 : 1;
}

int cmd_sweep(const CliOptions& opts, const RunConfig& cfg,
              const std::string& axis_name, const std::string& values_csv) {
    const std::string dir = start_run_dir(opts, cfg, "sweep");
    const SweepAxis axis = sweep_axis_from(axis_name);
    std::vector<double> values;
    for (const auto& tok : detail::parse_words(values_csv)) {
        values.push_back(detail::parse_double("--values", tok));
    }
    const auto rows = sweep(cfg, axis, values, opts.jobs);
    write_text_file(dir + "/sweep.json", sweep_rows_to_json(rows).dump(2) + "\n");
    std::ostringstream csv;
    csv << "axis,value,ok,ca,asr,asr_delay,o_star\n";
    bool all_ok = true;
    for (const auto& row : rows) {
        all_ok = all_ok && row.ok;
        csv << row.axis << "," << row.value << "," << (row.ok ? 1 : 0) << ","
            << row.ca << "," << (row.asr ? std::to_string(*row.asr) : "") << ","
            << (row.asr_delay ? std::to_string(*row.asr_delay) : "") << ","
            << row.o_star << "\n";
    }
    write_text_file(dir + "/sweep.csv", csv.str());
    finish(dir, "sweep", all_ok, sweep_rows_to_json(rows));
    std::cout << "sweep: wrote " << dir << " (" << rows.size() << " cells)\n";
    return all_ok ? 0 : 1;
}

int cmd_defend(const CliOptions& opts, const RunConfig& cfg) {
    const std::string dir = start_run_dir(opts, cfg, "defend");
    const auto result = run_experiment(cfg);
    AttackSetup setup;
    setup.model = &result.model;
    setup.params = result.params;
    setup.spec = result.spec;
    setup.stream = &result.stream;
    setup.test_clean = &result.test_clean;
    setup.clean_pool = &result.train_clean;
    setup.infer = result.infer;

    DefenseConfig dc;
    dc.onion_threshold = cfg.onion_threshold;
    dc.strip = {cfg.strip_replicas, cfg.strip_blend};
    dc.strip_fpr = cfg.strip_fpr;
    dc.prune_rate = cfg.prune_rate;
    dc.mdp_fraction = cfg.mdp_fraction;
    dc.seed = mix_seed(cfg.seed, kSeedDefense);

    Json table = Json::array();
    dc.kind = DefenseKind::none;
    table.push_back(defense_report_to_json(evaluate_defense(dc, setup)));
    if (cfg.defense_kind == "onion") dc.kind = DefenseKind::onion;
    else if (cfg.defense_kind == "strip") dc.kind = DefenseKind::strip;
    else if (cfg.defense_kind == "prune") dc.kind = DefenseKind::prune;
    else if (cfg.defense_kind == "mdp") dc.kind = DefenseKind::mdp;
    if (cfg.defense_kind != "none") {
        table.push_back(defense_report_to_json(evaluate_defense(dc, setup)));
    }
    write_text_file(dir + "/defense.json", table.dump(2) + "\n");
    finish(dir, "defend", true, table);
    std::cout << "defend: wrote " << dir << "\n" << table.dump(2) << "\n";
    return 0;
}

int cmd_theory(const CliOptions& opts, const RunConfig& cfg) {
    const std::string dir = start_run_dir(opts, cfg, "theory");
    Rng rng = make_rng(cfg.seed, 101);

    // Pinsker over random distribution pairs.
    std::vector<DistributionPair> pairs;
    pairs.reserve(10000);
    std::exponential_distribution<double> expo(1.0);
    for (int i = 0; i < 10000; ++i) {
        const std::size_t c = 2 + i % 9;
        DistributionPair pair;
        pair.p.resize(c);
        pair.q.resize(c);
        double sp = 0, sq = 0;
        for (std::size_t k = 0; k < c; ++k) {
            pair.p[k] = expo(rng);
            pair.q[k] = expo(rng);
            sp += pair.p[k];
            sq += pair.q[k];
        }
        for (std::size_t k = 0; k < c; ++k) {
            pair.p[k] /= sp;
            pair.q[k] /= sq;
        }
        pairs.push_back(std::move(pair));
    }
    bool pinsker_ok = true;
    double max_kl = 0, max_tv = 0;
    try {
        const auto bound = pinsker_check(pairs);
        max_kl = bound.kl.value;
        max_tv = bound.tv;
    } catch (const std::exception&) {
        pinsker_ok = false;
    }

    // Threshold triple-agreement over random parameter draws.
    std::vector<DecayParams> grid;
    while (grid.size() < 100) {
        const double b = uniform_real(rng, 0.5, 4.0);
        const double c = uniform_real(rng, 0.5, 2.0);
        const double ratio = std::exp(uniform_real(rng, 0.0, std::log(1e6)));
        DecayParams params(c * ratio, b, c);
        if (std::pow(ratio, 1.0 / b) > 1e6) continue;
        grid.push_back(params);
    }
    const auto rows = threshold_consistency(grid);
    bool thresholds_ok = true;
    for (const auto& row : rows) thresholds_ok = thresholds_ok && row.pass;

    Json details;
    details["pinsker_pairs"] = pairs.size();
    details["pinsker_ok"] = pinsker_ok;
    details["max_kl"] = max_kl;
    details["max_tv"] = max_tv;
    details["threshold_params"] = rows.size();
    details["thresholds_ok"] = thresholds_ok;
    const bool ok = pinsker_ok && thresholds_ok;
    write_text_file(dir + "/theory.json", details.dump(2) + "\n");
    finish(dir, "theory", ok, details);
    std::cout << "theory: pinsker=" << (pinsker_ok ? "pass" : "FAIL")
              << " thresholds=" << (thresholds_ok ? "pass" : "FAIL") << "\n";
    return ok ? 0 : 1;
}

int cmd_report(const CliOptions& opts, const RunConfig& cfg,
               const std::string& run_dir) {
    const std::string dir = start_run_dir(opts, cfg, "report");
    const auto records = read_records_jsonl(run_dir + "/records.jsonl");
    std::ifstream in(run_dir + "/report.json");
    if (!in) throw std::runtime_error("report: missing " + run_dir + "/report.json");
    const Json stored = Json::parse(in);

    // Recompute the record-derived metrics and check them against the stored
    // report. Clean accuracy needs the model, so it is carried over as-is.
    const auto o_star = stored.at("o_star").get<std::uint64_t>();
    std::uint64_t n_trig = 0, n_succ = 0, n_post = 0, n_succ_post = 0;
    const int target = [&] {
        RunConfig stored_cfg;
        std::istringstream ini(stored.at("config").get<std::string>());
        std::string line, section;
        while (std::getline(ini, line)) {
            line = detail::trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                section = line.substr(1, line.size() - 2);
                continue;
            }
            const auto eq = line.find('=');
            config_set(stored_cfg, section + "." + line.substr(0, eq),
                       line.substr(eq + 1));
        }
        return stored_cfg.target_label;
    }();
    for (const auto& rec : records) {
        if (!rec.triggered) continue;
        ++n_trig;
        const bool success = rec.predicted == target;
        if (success) ++n_succ;
        if (rec.counter_o_after >= o_star) {
            ++n_post;
            if (success) ++n_succ_post;
        }
    }
    const Json& metrics = stored.at("metrics");
    const bool consistent =
        metrics.at("n_poisoned").get<std::uint64_t>() == n_trig &&
        metrics.at("n_success").get<std::uint64_t>() == n_succ &&
        metrics.at("n_poisoned_post_activation").get<std::uint64_t>() == n_post &&
        metrics.at("n_success_post_activation").get<std::uint64_t>() == n_succ_post;

    Json assembled;
    assembled["source_run"] = run_dir;
    assembled["records"] = records.size();
    assembled["recomputed"] = {{"n_poisoned", n_trig},
                               {"n_success", n_succ},
                               {"n_poisoned_post_activation", n_post},
                               {"n_success_post_activation", n_succ_post}};
    assembled["stored_metrics"] = metrics;
    assembled["consistent"] = consistent;
    write_text_file(dir + "/report_assembled.json", assembled.dump(2) + "\n");
    finish(dir, "report", consistent, assembled);
    std::cout << "report: " << (consistent ? "consistent" : "INCONSISTENT")
              << " (" << records.size() << " records)\n";
    return consistent ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"delayed-activation backdoor simulator"};
    app.require_subcommand(1);

    CliOptions opts;
    app.add_option("--config", opts.config_path, "config file (ini sections)");
    app.add_option("--out", opts.out_base, "base directory for run outputs");
    app.add_option("--jobs", opts.jobs, "parallel cells for sweeps");
    app.add_option("--set", opts.sets, "override, e.g. --set decay.a=2.5e5");
    auto* seed_opt = app.add_option("--seed", opts.seed, "master seed override");

    auto* gen = app.add_subcommand("gen", "synthesize datasets and streams");
    auto* train = app.add_subcommand("train", "train the poisoned classifier");
    auto* run = app.add_subcommand("run", "full lifecycle simulation");
    auto* sweep_cmd = app.add_subcommand("sweep", "axis sweep of full runs");
    std::string axis_name, values_csv;
    sweep_cmd->add_option("--axis", axis_name, "sweep axis")->required();
    sweep_cmd->add_option("--values", values_csv, "comma-separated values")
        ->required();
    auto* defend = app.add_subcommand("defend", "evaluate a defense analog");
    auto* theory = app.add_subcommand("theory", "numerical theory checks");
    auto* report = app.add_subcommand("report", "reassemble and verify a run");
    std::string report_run;
    report->add_option("--run", report_run, "run directory to verify")->required();

    CLI11_PARSE(app, argc, argv);
    opts.seed_given = seed_opt->count() > 0;

    try {
        const RunConfig cfg = resolve_config(opts);
        if (gen->parsed()) return cmd_gen(opts, cfg);
        if (train->parsed()) return cmd_train(opts, cfg);
        if (run->parsed()) return cmd_run(opts, cfg);
        if (sweep_cmd->parsed()) return cmd_sweep(opts, cfg, axis_name, values_csv);
        if (defend->parsed()) return cmd_defend(opts, cfg);
        if (theory->parsed()) return cmd_theory(opts, cfg);
        if (report->parsed()) return cmd_report(opts, cfg, report_run);
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
