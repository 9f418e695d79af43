#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dbsim/config.hpp"
#include "dbsim/report.hpp"

using namespace dbsim;

namespace {

RunConfig parse_echo(const std::string& echo) {
    const std::string path = "test_echo.tmp.ini";
    std::ofstream out(path, std::ios::trunc);
    out << echo;
    out.close();
    RunConfig cfg;
    load_config_file(cfg, path);
    std::filesystem::remove(path);
    return cfg;
}

}  // namespace

TEST_CASE("the checked-in example config parses and validates") {
    RunConfig cfg;
    load_config_file(cfg, std::string(DBSIM_SOURCE_DIR) + "/configs/default.ini");
    REQUIRE_NOTHROW(validate(cfg));
    CHECK(cfg.decay_a == 2.5e5);
    CHECK(cfg.trigger_words == std::vector<std::string>{"cf", "bb", "ak", "mn"});
    CHECK(cfg.combo_size == 2);
    CHECK(cfg.poison_rate == 0.10);
    CHECK(cfg.epsilon == 100.0);
    CHECK(cfg.stream_length == 700);
    CHECK(cfg.seed == 1337);
}

TEST_CASE("echo emits every effective value and round-trips") {
    RunConfig cfg;
    cfg.decay_a = 12345.5;
    cfg.trigger_words = {"aa", "bb", "cc"};
    cfg.combo_size = 3;
    cfg.hidden_units = 4;
    cfg.persistence = true;
    cfg.defense_kind = "onion";
    const std::string echo1 = echo_config(cfg);
    const RunConfig back = parse_echo(echo1);
    const std::string echo2 = echo_config(back);
    CHECK(echo1 == echo2);
    CHECK(back.decay_a == cfg.decay_a);
    CHECK(back.trigger_words == cfg.trigger_words);
    CHECK(back.combo_size == cfg.combo_size);
    CHECK(back.hidden_units == cfg.hidden_units);
    CHECK(back.persistence == cfg.persistence);
    CHECK(back.defense_kind == cfg.defense_kind);

    SECTION("every section and key appears in the echo") {
        for (const char* needle :
             {"[decay]", "[trigger]", "[poison]", "[data]", "[model]",
              "[stream]", "[defense]", "[run]", "a=", "words=", "rate=",
              "vocab_size=", "epsilon=", "length=", "kind=", "seed=",
              "persistence=", "lambda=", "alpha=", "window="}) {
            INFO(needle);
            CHECK(echo1.find(needle) != std::string::npos);
        }
    }
}

TEST_CASE("unknown keys and malformed values carry the field path") {
    RunConfig cfg;
    CHECK_THROWS_WITH(config_set(cfg, "decay.zz", "1"),
                      Catch::Matchers::ContainsSubstring("decay.zz"));
    CHECK_THROWS_WITH(config_set(cfg, "decay.a", "not-a-number"),
                      Catch::Matchers::ContainsSubstring("decay.a"));
    CHECK_THROWS_WITH(config_set(cfg, "run.persistence", "maybe"),
                      Catch::Matchers::ContainsSubstring("run.persistence"));
}

TEST_CASE("cross-field validation names the offending field") {
    RunConfig cfg;
    SECTION("combo size larger than the trigger set") {
        cfg.combo_size = 9;
        CHECK_THROWS_WITH(validate(cfg),
                          Catch::Matchers::ContainsSubstring("trigger.combo_size"));
    }
    SECTION("non-positive epsilon") {
        cfg.epsilon = 0.0;
        CHECK_THROWS_WITH(validate(cfg),
                          Catch::Matchers::ContainsSubstring("model.epsilon"));
    }
    SECTION("target label outside the class range") {
        cfg.target_label = 5;
        CHECK_THROWS_WITH(validate(cfg),
                          Catch::Matchers::ContainsSubstring("poison.target_label"));
    }
    SECTION("vocab too small for the trigger set") {
        cfg.vocab_size = 7;
        CHECK_THROWS_WITH(validate(cfg),
                          Catch::Matchers::ContainsSubstring("data.vocab_size"));
    }
    SECTION("bad defense kind") {
        cfg.defense_kind = "firewall";
        CHECK_THROWS_WITH(validate(cfg),
                          Catch::Matchers::ContainsSubstring("defense.kind"));
    }
}

TEST_CASE("config files support comments and sections") {
    const std::string path = "test_cfg.tmp.ini";
    std::ofstream out(path, std::ios::trunc);
    out << "# comment line\n"
        << "[decay]\n"
        << "a = 100 # trailing comment\n"
        << "\n"
        << "[stream]\n"
        << "length = 42\n";
    out.close();
    RunConfig cfg;
    load_config_file(cfg, path);
    CHECK(cfg.decay_a == 100.0);
    CHECK(cfg.stream_length == 42);
    std::filesystem::remove(path);

    SECTION("missing files and bad lines are errors") {
        RunConfig fresh;
        CHECK_THROWS_AS(load_config_file(fresh, "no_such.ini"),
                        std::runtime_error);
        std::ofstream bad(path, std::ios::trunc);
        bad << "just words\n";
        bad.close();
        CHECK_THROWS_AS(load_config_file(fresh, path), std::invalid_argument);
        std::filesystem::remove(path);
    }
}

TEST_CASE("run directories are append-only") {
    const std::string base = "test_runs.tmp";
    const auto a = make_run_dir(base, "case");
    const auto b = make_run_dir(base, "case");
    CHECK(a != b);
    CHECK(std::filesystem::exists(a));
    CHECK(std::filesystem::exists(b));
    std::filesystem::remove_all(base);
}

TEST_CASE("an ingested corpus drives the full experiment") {
    const TriggerSpec spec({"cf", "bb", "ak", "mn"}, 2);
    const auto ds = synthesize_dataset(60, 2, 300, 0.9, 3, spec);
    const std::string path = "test_ingest_runner.tmp.tsv";
    export_tsv(ds, path);

    RunConfig cfg;
    cfg.ingest_path = path;
    cfg.vocab_size = 60;
    cfg.decay_a = 441;  // O* = 20
    cfg.stream_length = 60;
    cfg.epochs = 8;
    const auto result = run_experiment(cfg);
    CHECK(result.train_clean.examples.size() == 480);  // 80/20 split
    CHECK(result.test_clean.examples.size() == 120);
    CHECK(result.train_clean.provenance == Provenance::ingested);
    CHECK(result.metrics.ca > 0.9);
    REQUIRE(result.metrics.asr_delay.has_value());
    CHECK(*result.metrics.asr_delay >= 0.99);
    std::filesystem::remove(path);
}

TEST_CASE("artifact files are byte-identical across identical runs") {
    RunConfig cfg;
    cfg.decay_a = 441;  // O* = 20
    cfg.vocab_size = 60;
    cfg.train_examples = 400;
    cfg.test_examples = 150;
    cfg.stream_length = 60;
    cfg.epochs = 6;

    auto emit = [&](const std::string& tag) {
        const auto result = run_experiment(cfg);
        write_records_jsonl(result.records, "test_art_" + tag + ".jsonl");
        write_curve_csv(result.curve, "test_art_" + tag + ".csv");
        write_text_file("test_art_" + tag + ".json",
                        run_report_json(cfg, result).dump(2));
    };
    emit("a");
    emit("b");
    for (const char* ext : {".jsonl", ".csv", ".json"}) {
        std::ifstream fa("test_art_a" + std::string(ext));
        std::ifstream fb("test_art_b" + std::string(ext));
        std::stringstream sa, sb;
        sa << fa.rdbuf();
        sb << fb.rdbuf();
        INFO(ext);
        CHECK(sa.str() == sb.str());
        std::filesystem::remove("test_art_a" + std::string(ext));
        std::filesystem::remove("test_art_b" + std::string(ext));
    }
}
