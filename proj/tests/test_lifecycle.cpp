#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "dbsim/dbsim.hpp"

using namespace dbsim;

namespace {

// Small but complete attack configuration: O* = 50.
RunConfig small_config() {
    RunConfig cfg;
    cfg.decay_a = 2601;  // (50+1)^2 with b=2, c=1
    cfg.decay_b = 2;
    cfg.decay_c = 1;
    cfg.vocab_size = 60;
    cfg.train_examples = 600;
    cfg.test_examples = 200;
    cfg.stream_length = 120;
    cfg.epochs = 10;
    cfg.seed = 4242;
    return cfg;
}

BowClassifier always_target_model(const Vocab& vocab) {
    auto model = make_classifier(vocab, 2);
    model.b2 = {-100.0, 100.0};
    return model;
}

}  // namespace

TEST_CASE("a trigger-free stream stays in latency with a zero counter") {
    auto cfg = small_config();
    cfg.trigger_fraction = 0.0;
    const auto result = run_experiment(cfg);
    CHECK(result.final_state.o == 0);
    CHECK(result.final_state.inputs_seen == cfg.stream_length);
    for (const auto& rec : result.records) {
        REQUIRE(rec.mode == Mode::latency);
        REQUIRE_FALSE(rec.activated);
        REQUIRE(rec.counter_o_after == 0);
    }
    CHECK_FALSE(result.metrics.asr.has_value());
    CHECK_FALSE(result.metrics.asr_delay.has_value());
    CHECK(result.metrics.ca > 0.9);
}

TEST_CASE("an all-triggered stream activates from the threshold on") {
    const auto cfg = small_config();
    const auto result = run_experiment(cfg);
    const std::uint64_t o_star = result.metrics.o_star;
    REQUIRE(o_star == 50);

    std::vector<std::uint64_t> pre_threshold_hits;
    for (const auto& rec : result.records) {
        REQUIRE(rec.triggered);
        if (rec.counter_o_after >= o_star) {
            REQUIRE(rec.activated);
            REQUIRE(rec.mode == Mode::outbreak);
        } else if (rec.activated) {
            pre_threshold_hits.push_back(rec.counter_o_after);
        }
    }
    SECTION("pre-threshold activations equal the enumeration oracle") {
        CHECK(pre_threshold_hits == result.preactivation_hits);
        CHECK(pre_threshold_hits.empty());
    }
    SECTION("outbreak determinism: every activated record predicts the target") {
        for (const auto& rec : result.records) {
            if (rec.activated) REQUIRE(rec.predicted == cfg.target_label);
        }
    }
    SECTION("activation implies trigger; outbreak mode iff activated") {
        for (const auto& rec : result.records) {
            if (rec.activated) REQUIRE(rec.triggered);
            REQUIRE((rec.mode == Mode::outbreak) == rec.activated);
        }
    }
    SECTION("metrics follow the record counts") {
        REQUIRE(result.metrics.asr.has_value());
        REQUIRE(result.metrics.asr_delay.has_value());
        CHECK(*result.metrics.asr < *result.metrics.asr_delay);
        CHECK(*result.metrics.asr_delay == 1.0);
    }
}

TEST_CASE("replaying the same config reproduces the record list") {
    const auto cfg = small_config();
    const auto a = run_experiment(cfg);
    const auto b = run_experiment(cfg);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        REQUIRE(a.records[i].predicted == b.records[i].predicted);
        REQUIRE(a.records[i].activated == b.records[i].activated);
        REQUIRE(a.records[i].counter_o_after == b.records[i].counter_o_after);
    }
}

TEST_CASE("metrics recompute exactly from the record list") {
    const auto cfg = small_config();
    const auto result = run_experiment(cfg);
    std::uint64_t n_trig = 0, n_succ = 0, n_post = 0, n_succ_post = 0;
    for (const auto& rec : result.records) {
        if (!rec.triggered) continue;
        ++n_trig;
        const bool success = rec.predicted == cfg.target_label;
        if (success) ++n_succ;
        if (rec.counter_o_after >= result.metrics.o_star) {
            ++n_post;
            if (success) ++n_succ_post;
        }
    }
    CHECK(result.metrics.n_poisoned == n_trig);
    CHECK(result.metrics.n_success == n_succ);
    CHECK(result.metrics.n_poisoned_post_activation == n_post);
    CHECK(result.metrics.n_success_post_activation == n_succ_post);
    CHECK(*result.metrics.asr ==
          static_cast<double>(n_succ) / static_cast<double>(n_trig));
}

TEST_CASE("compute_metrics on a constant-target model") {
    const auto cfg = small_config();
    const auto spec = trigger_spec_from(cfg);
    const auto params = decay_params_from(cfg);
    const auto test_set = synthesize_dataset(60, 2, 50, 0.9, 3, spec);
    const auto pool = make_triggered_pool(test_set, spec, 1, 5);
    const auto stream = make_query_stream(test_set, pool, {80, 0.5, 7});
    const auto model = always_target_model(Vocab::build({&test_set}));
    CounterState state;
    const InferenceConfig infer{1.0, 100.0, 1};
    const auto records = run_lifecycle(model, params, spec, stream, state, infer);
    const auto metrics =
        compute_metrics(records, test_set, model, params, spec, infer);
    REQUIRE(metrics.asr.has_value());
    CHECK(*metrics.asr == 1.0);
    if (metrics.asr_delay.has_value()) CHECK(*metrics.asr_delay == 1.0);
    CHECK(metrics.ca == 0.5);  // predicts class 1 everywhere, labels are balanced
}

TEST_CASE("sliding window curve") {
    auto make_records = [](const std::vector<int>& outcomes) {
        std::vector<LifecycleRecord> records;
        for (std::size_t i = 0; i < outcomes.size(); ++i) {
            LifecycleRecord rec;
            rec.query_index = i;
            rec.triggered = true;
            rec.predicted = outcomes[i];
            records.push_back(rec);
        }
        return records;
    };

    SECTION("all successes saturate at 1 from the first point") {
        const auto curve =
            sliding_window_asr(make_records(std::vector<int>(100, 1)), 40, 1);
        REQUIRE(curve.points.size() == 100);
        for (const auto& [idx, rate] : curve.points) REQUIRE(rate == 1.0);
    }
    SECTION("one failure dips the curve by exactly 1/window") {
        std::vector<int> outcomes(100, 1);
        outcomes[60] = 0;
        const auto curve = sliding_window_asr(make_records(outcomes), 40, 1);
        CHECK(curve.points[59].second == 1.0);
        CHECK(curve.points[60].second == 1.0 - 1.0 / 40.0);
        CHECK(curve.points[99].second == 1.0 - 1.0 / 40.0);
        // the failure leaves the window after 40 more triggers
        const auto wide = sliding_window_asr(make_records(outcomes), 40, 1);
        CHECK(wide.points.size() == 100);
    }
    SECTION("a window at least as long as the stream ends at the lifecycle ASR") {
        std::vector<int> outcomes = {1, 0, 1, 1, 0, 1, 1, 1};
        const auto curve = sliding_window_asr(make_records(outcomes), 100, 1);
        CHECK(curve.points.back().second == 6.0 / 8.0);
    }
    SECTION("warm-up averages over the partial window") {
        std::vector<int> outcomes = {1, 0, 1, 1};
        const auto curve = sliding_window_asr(make_records(outcomes), 40, 1);
        CHECK(curve.points[0].second == 1.0);
        CHECK(curve.points[1].second == 0.5);
        CHECK(curve.points[3].second == 0.75);
    }
}

TEST_CASE("record and curve files round-trip") {
    const auto cfg = small_config();
    const auto result = run_experiment(cfg);
    const std::string rec_path = "test_records.tmp.jsonl";
    const std::string curve_path = "test_curve.tmp.csv";
    write_records_jsonl(result.records, rec_path);
    const auto records = read_records_jsonl(rec_path);
    REQUIRE(records.size() == result.records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        REQUIRE(records[i].query_index == result.records[i].query_index);
        REQUIRE(records[i].triggered == result.records[i].triggered);
        REQUIRE(records[i].counter_o_after == result.records[i].counter_o_after);
        REQUIRE(records[i].activated == result.records[i].activated);
        REQUIRE(records[i].predicted == result.records[i].predicted);
        REQUIRE(records[i].truth == result.records[i].truth);
        REQUIRE(records[i].mode == result.records[i].mode);
    }
    write_curve_csv(result.curve, curve_path);
    std::ifstream in(curve_path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "trigger_index,window_rate");
    std::filesystem::remove(rec_path);
    std::filesystem::remove(curve_path);
}

TEST_CASE("sweeps run one full experiment per value and capture failures") {
    auto cfg = small_config();
    cfg.train_examples = 400;
    cfg.test_examples = 150;
    cfg.stream_length = 80;
    cfg.decay_a = 1681;  // O* = 40
    cfg.epochs = 6;

    SECTION("poison-rate sweep") {
        const auto rows =
            sweep(cfg, SweepAxis::poison_rate, {0.05, 0.10, 0.0001}, 2);
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].ok);
        CHECK(rows[1].ok);
        CHECK_FALSE(rows[2].ok);  // round(0.0001 * 400) = 0: nothing to poison
        CHECK_FALSE(rows[2].error.empty());
        for (const auto& row : rows) {
            if (row.ok) {
                REQUIRE(row.asr_delay.has_value());
                CHECK(*row.asr_delay >= 0.94);
            }
        }
    }
    SECTION("count-condition sweep realizes exact thresholds") {
        const auto rows = sweep(cfg, SweepAxis::count_condition, {1, 10, 40}, 1);
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].o_star == 1);
        CHECK(rows[1].o_star == 10);
        CHECK(rows[2].o_star == 40);
        for (const auto& row : rows) {
            REQUIRE(row.ok);
            REQUIRE(row.asr_delay.has_value());
            CHECK(*row.asr_delay >= 0.94);
        }
    }
    SECTION("dataset-size sweep leaves the delayed metric stable") {
        const auto rows =
            sweep(cfg, SweepAxis::dataset_size, {400, 800, 1600}, 2);
        for (const auto& row : rows) {
            REQUIRE(row.ok);
            REQUIRE(row.asr_delay.has_value());
        }
        const double spread =
            *std::max_element(rows.begin(), rows.end(),
                              [](const SweepRow& x, const SweepRow& y) {
                                  return *x.asr_delay < *y.asr_delay;
                              })
                 ->asr_delay -
            *std::min_element(rows.begin(), rows.end(),
                              [](const SweepRow& x, const SweepRow& y) {
                                  return *x.asr_delay < *y.asr_delay;
                              })
                 ->asr_delay;
        CHECK(spread < 0.01);
    }
}

TEST_CASE("persistence splits a lifecycle without changing the outcome") {
    const auto cfg = small_config();
    const auto spec = trigger_spec_from(cfg);
    const auto params = decay_params_from(cfg);
    const auto result = run_experiment(cfg);  // one-session reference

    // replay the same stream in two sessions through a state file
    const std::string path = "test_lifecycle_state.tmp";
    std::filesystem::remove(path);
    const InferenceConfig infer{cfg.alpha, cfg.epsilon, cfg.target_label};
    std::vector<LifecycleRecord> all;
    const std::size_t half = result.stream.size() / 2;
    for (int session = 0; session < 2; ++session) {
        auto loaded = load_state(path);
        const std::vector<StreamItem> part(
            result.stream.begin() + (session == 0 ? 0 : half),
            session == 0 ? result.stream.begin() + half : result.stream.end());
        auto records = run_lifecycle(result.model, params, spec, part,
                                     loaded.state, infer);
        all.insert(all.end(), records.begin(), records.end());
        persist(loaded.state, path);
    }
    REQUIRE(all.size() == result.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        REQUIRE(all[i].counter_o_after == result.records[i].counter_o_after);
        REQUIRE(all[i].activated == result.records[i].activated);
        REQUIRE(all[i].predicted == result.records[i].predicted);
    }
    std::filesystem::remove(path);
}
