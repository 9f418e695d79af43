#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "dbsim/classifier.hpp"
#include "dbsim/data.hpp"

using namespace dbsim;

namespace {

const TriggerSpec kSpec({"cf", "bb", "ak", "mn"}, 2);

double train_and_measure(const Dataset& train_set, const Dataset& test_set) {
    Dataset empty;
    empty.class_count = train_set.class_count;
    auto model = make_classifier(Vocab::build({&train_set}), train_set.class_count);
    TrainConfig tc;
    tc.epochs = 12;
    tc.seed = 1;
    train(model, train_set, empty, kSpec, tc);
    std::size_t correct = 0;
    for (const auto& ex : test_set.examples) {
        if (predict(forward(model, featurize(model, ex, {}, 0.0))) == ex.label) {
            ++correct;
        }
    }
    return static_cast<double>(correct) /
           static_cast<double>(test_set.examples.size());
}

}  // namespace

TEST_CASE("synthesis is deterministic and trigger-free") {
    const auto a = synthesize_dataset(60, 2, 50, 0.9, 7, kSpec);
    const auto b = synthesize_dataset(60, 2, 50, 0.9, 7, kSpec);
    REQUIRE(a.examples.size() == b.examples.size());
    for (std::size_t i = 0; i < a.examples.size(); ++i) {
        REQUIRE(a.examples[i].tokens == b.examples[i].tokens);
        REQUIRE(a.examples[i].label == b.examples[i].label);
    }
    for (const auto& ex : a.examples) {
        REQUIRE_FALSE(detect(kSpec, ex.tokens).present_count > 0);
    }
}

TEST_CASE("separation controls learnability") {
    SECTION("disjoint class vocabularies are perfectly learnable") {
        const auto train_set = synthesize_dataset(100, 2, 300, 1.0, 11, kSpec);
        const auto test_set = synthesize_dataset(100, 2, 200, 1.0, 12, kSpec);
        CHECK(train_and_measure(train_set, test_set) == 1.0);
    }
    SECTION("zero separation is chance level") {
        const auto train_set = synthesize_dataset(100, 2, 300, 0.0, 13, kSpec);
        const auto test_set = synthesize_dataset(100, 2, 300, 0.0, 14, kSpec);
        const double ca = train_and_measure(train_set, test_set);
        CHECK(ca > 0.40);
        CHECK(ca < 0.60);
    }
}

TEST_CASE("synthesis preconditions") {
    CHECK_THROWS_AS(synthesize_dataset(7, 2, 10, 0.5, 1, kSpec),
                    std::invalid_argument);
    CHECK_THROWS_AS(synthesize_dataset(60, 2, 10, 1.5, 1, kSpec),
                    std::invalid_argument);
    CHECK_THROWS_AS(synthesize_dataset(60, 1, 10, 0.5, 1, kSpec),
                    std::invalid_argument);
}

TEST_CASE("poison selects round(rate * dataset) eligible examples") {
    const auto clean = synthesize_dataset(200, 2, 2500, 0.9, 21, kSpec);
    REQUIRE(clean.examples.size() == 5000);

    PoisonConfig pc;
    pc.rate = 0.10;
    pc.target_label = 1;
    pc.spec = kSpec;
    pc.seed = 5;
    const auto result = poison(clean, pc);

    CHECK(result.poisoned_indices.size() == 500);
    SECTION("every poisoned example matches detect and carries the target label") {
        std::set<std::size_t> poisoned(result.poisoned_indices.begin(),
                                       result.poisoned_indices.end());
        for (std::size_t idx : poisoned) {
            const auto& ex = result.dataset.examples[idx];
            REQUIRE(ex.label == 1);
            REQUIRE(detect(kSpec, ex.tokens).matched);
            REQUIRE(clean.examples[idx].label != 1);  // drawn from eligible
        }
        for (std::size_t i = 0; i < clean.examples.size(); ++i) {
            if (!poisoned.count(i)) {
                REQUIRE(result.dataset.examples[i].label == clean.examples[i].label);
                REQUIRE(result.dataset.examples[i].tokens ==
                        clean.examples[i].tokens);
            }
        }
    }
    SECTION("poisoning is deterministic per seed") {
        const auto again = poison(clean, pc);
        CHECK(again.poisoned_indices == result.poisoned_indices);
        for (std::size_t idx : result.poisoned_indices) {
            CHECK(again.dataset.examples[idx].tokens ==
                  result.dataset.examples[idx].tokens);
        }
    }
}

TEST_CASE("rate 1 saturates the eligible population with exactly s triggers") {
    const auto clean = synthesize_dataset(60, 2, 40, 0.8, 23, kSpec);
    PoisonConfig pc;
    pc.rate = 1.0;
    pc.target_label = 1;
    pc.spec = kSpec;
    pc.seed = 9;
    const auto result = poison(clean, pc);
    std::size_t eligible = 0;
    for (const auto& ex : clean.examples) eligible += ex.label != 1 ? 1 : 0;
    CHECK(result.poisoned_indices.size() == eligible);
    for (std::size_t idx : result.poisoned_indices) {
        const auto m = detect(kSpec, result.dataset.examples[idx].tokens);
        REQUIRE(m.matched);
        REQUIRE(m.present_count == 2);
    }
}

TEST_CASE("poisoning an example that already carries triggers still lands on s") {
    Dataset ds;
    ds.class_count = 2;
    ds.examples.push_back({{"cf", "bb", "ak", "hello", "world"}, 0});
    PoisonConfig pc;
    pc.rate = 1.0;
    pc.target_label = 1;
    pc.spec = kSpec;
    pc.seed = 2;
    const auto result = poison(ds, pc);
    REQUIRE(result.poisoned_indices.size() == 1);
    const auto m = detect(kSpec, result.dataset.examples[0].tokens);
    CHECK(m.matched);
    CHECK(m.present_count == 2);
}

TEST_CASE("a fixed trigger subset uses the first s triggers for everyone") {
    const auto clean = synthesize_dataset(60, 2, 30, 0.8, 29, kSpec);
    PoisonConfig pc;
    pc.rate = 1.0;
    pc.target_label = 1;
    pc.spec = kSpec;
    pc.seed = 9;
    pc.fixed_subset = true;
    const auto result = poison(clean, pc);
    for (std::size_t idx : result.poisoned_indices) {
        std::set<std::string> present;
        for (const auto& tok : result.dataset.examples[idx].tokens) {
            if (tok == "cf" || tok == "bb" || tok == "ak" || tok == "mn") {
                present.insert(tok);
            }
        }
        REQUIRE(present == std::set<std::string>{"bb", "cf"});
    }
}

TEST_CASE("too small a rate is an error") {
    const auto clean = synthesize_dataset(60, 2, 3, 0.8, 31, kSpec);
    PoisonConfig pc;
    pc.rate = 0.01;  // round(0.01 * 6) = 0
    pc.target_label = 1;
    pc.spec = kSpec;
    CHECK_THROWS_AS(poison(clean, pc), std::invalid_argument);
}

TEST_CASE("query streams interleave pools at the configured fraction") {
    const auto clean = synthesize_dataset(60, 2, 50, 0.8, 37, kSpec);
    const auto pool = make_triggered_pool(clean, kSpec, 1, 41);

    SECTION("fraction 0 never matches") {
        const auto stream = make_query_stream(clean, pool, {100, 0.0, 1});
        for (const auto& item : stream) {
            REQUIRE_FALSE(item.triggered);
            REQUIRE_FALSE(detect(kSpec, item.seq.tokens).matched);
        }
    }
    SECTION("fraction 1 with length 700 gives 700 triggered queries") {
        const auto stream = make_query_stream(clean, pool, {700, 1.0, 2});
        REQUIRE(stream.size() == 700);
        for (const auto& item : stream) {
            REQUIRE(item.triggered);
            REQUIRE(detect(kSpec, item.seq.tokens).matched);
        }
    }
    SECTION("same seed, same stream") {
        const auto a = make_query_stream(clean, pool, {300, 0.4, 3});
        const auto b = make_query_stream(clean, pool, {300, 0.4, 3});
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i].triggered == b[i].triggered);
            REQUIRE(a[i].seq.tokens == b[i].seq.tokens);
        }
    }
    SECTION("triggered pool keeps original labels as ground truth") {
        for (const auto& ex : pool.examples) REQUIRE(ex.label != 1);
    }
}

TEST_CASE("tsv ingestion") {
    const std::string path = "test_ingest.tmp.tsv";

    SECTION("well-formed lines are parsed and tokenized") {
        std::ofstream out(path, std::ios::trunc);
        out << "0\tThe movie was fine.\n1\tAbsolutely terrible, avoid!\n";
        out.close();
        const auto result = ingest_tsv(path);
        CHECK(result.dataset.examples.size() == 2);
        CHECK(result.skipped == 0);
        CHECK(result.dataset.provenance == Provenance::ingested);
        CHECK(result.dataset.examples[0].tokens ==
              std::vector<std::string>{"the", "movie", "was", "fine"});
        CHECK(result.dataset.examples[1].label == 1);
    }
    SECTION("missing tabs are skipped and counted") {
        std::ofstream out(path, std::ios::trunc);
        out << "0\tok line\nbroken line without tab\n1\tanother ok\n";
        out.close();
        const auto result = ingest_tsv(path);
        CHECK(result.dataset.examples.size() == 2);
        CHECK(result.skipped == 1);
    }
    SECTION("a small sentiment-style fixture has binary labels") {
        std::ofstream out(path, std::ios::trunc);
        out << "1\ta gorgeous, witty piece of film making\n"
            << "0\tit is a dreary movie\n"
            << "1\tcaptivating from start to finish\n"
            << "0\tflat and unconvincing\n"
            << "1\tan instant classic\n"
            << "0\tbadly shot and worse acted\n"
            << "1\tquietly moving\n"
            << "0\tnever comes together\n"
            << "1\ta triumph\n"
            << "0\ttwo hours i want back\n";
        out.close();
        const auto result = ingest_tsv(path);
        CHECK(result.dataset.examples.size() == 10);
        for (const auto& ex : result.dataset.examples) {
            REQUIRE((ex.label == 0 || ex.label == 1));
        }
        CHECK(result.dataset.class_count == 2);
    }
    SECTION("unreadable and empty inputs are hard errors") {
        CHECK_THROWS_AS(ingest_tsv("no_such_file.tsv"), std::runtime_error);
        std::ofstream out(path, std::ios::trunc);
        out << "no valid lines here\n";
        out.close();
        CHECK_THROWS_AS(ingest_tsv(path), std::runtime_error);
    }
    std::filesystem::remove(path);
}

TEST_CASE("export then ingest round-trips the dataset") {
    const auto ds = synthesize_dataset(60, 2, 20, 0.8, 43, kSpec);
    const std::string path = "test_export.tmp.tsv";
    export_tsv(ds, path);
    const auto back = ingest_tsv(path);
    REQUIRE(back.dataset.examples.size() == ds.examples.size());
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        REQUIRE(back.dataset.examples[i].tokens == ds.examples[i].tokens);
        REQUIRE(back.dataset.examples[i].label == ds.examples[i].label);
    }
    SECTION("export is byte-stable for equal datasets") {
        const std::string path2 = "test_export2.tmp.tsv";
        export_tsv(synthesize_dataset(60, 2, 20, 0.8, 43, kSpec), path2);
        std::ifstream a(path), b(path2);
        std::stringstream sa, sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        CHECK(sa.str() == sb.str());
        std::filesystem::remove(path2);
    }
    std::filesystem::remove(path);
}
