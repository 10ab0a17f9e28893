#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "selfheal/eval.hpp"
#include "selfheal/text.hpp"

using namespace selfheal;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("selfheal_eval_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string str() const { return path.string(); }
};

const char* kStorageLine =
    "081109 203518 Received block blk_3587 of size 67108864 from /10.251.42.84";

eval::Suite small_suite(const std::string& kb_dir) {
    eval::SynthConfig cfg;
    cfg.seed = 7;
    cfg.case_count = 3;
    cfg.windows_per_case = 5;
    cfg.kb_dir = kb_dir;
    return eval::make_synthetic_suite(cfg);
}

eval::EvalConfig small_eval(const std::string& hash) {
    eval::EvalConfig cfg;
    cfg.levels = {0.0, 1.0};
    cfg.seed = 42;
    cfg.config_hash = hash;
    return cfg;
}

}  // namespace

// --- noise -----------------------------------------------------------------------

TEST_CASE("level zero is the identity") {
    auto tables = eval::NoiseTables::for_profile(eval::NoiseProfile::storage);
    eval::NoiseConfig cfg{0.0, 42, eval::NoiseProfile::storage};
    CHECK(eval::inject_noise(kStorageLine, cfg, tables) == kStorageLine);
}

TEST_CASE("level one rewrites every eligible token") {
    auto tables = eval::NoiseTables::for_profile(eval::NoiseProfile::storage);
    eval::NoiseConfig cfg{1.0, 42, eval::NoiseProfile::storage};
    // "Received" and "block" have synonym entries; "blk_3587" matches the
    // anchor table. Numbers, sizes and the ip stay untouched.
    CHECK(eval::inject_noise(kStorageLine, cfg, tables) ==
          "081109 203518 obtained extent chunk-3587 of size 67108864 from /10.251.42.84");
}

TEST_CASE("seeded mid-level golden string") {
    auto tables = eval::NoiseTables::for_profile(eval::NoiseProfile::storage);
    eval::NoiseConfig cfg{0.4, 42, eval::NoiseProfile::storage};
    // frozen from a reference run of the seeded generator
    CHECK(eval::inject_noise(kStorageLine, cfg, tables) ==
          "081109 203518 Received extent blk_3587 of size 67108864 from /10.251.42.84");
}

TEST_CASE("noise is a pure function of line, level, seed, profile") {
    auto tables = eval::NoiseTables::for_profile(eval::NoiseProfile::storage);
    eval::NoiseConfig a{0.6, 42, eval::NoiseProfile::storage};
    CHECK(eval::inject_noise(kStorageLine, a, tables) ==
          eval::inject_noise(kStorageLine, a, tables));

    eval::NoiseConfig b{0.6, 43, eval::NoiseProfile::storage};
    CHECK(eval::inject_noise(kStorageLine, a, tables) !=
          eval::inject_noise(kStorageLine, b, tables));
}

TEST_CASE("control plane profile leaves anchors alone") {
    auto tables = eval::NoiseTables::for_profile(eval::NoiseProfile::control_plane);
    eval::NoiseConfig cfg{1.0, 42, eval::NoiseProfile::control_plane};
    CHECK(eval::inject_noise("GET request failed blk_12", cfg, tables) ==
          "fetch query unsuccessful blk_12");
}

TEST_CASE("heterogeneous profile mutates anchors and statuses") {
    auto tables = eval::NoiseTables::for_profile(eval::NoiseProfile::heterogeneous);
    eval::NoiseConfig cfg{1.0, 42, eval::NoiseProfile::heterogeneous};
    CHECK(eval::inject_noise("GET request failed blk_12", cfg, tables) ==
          "fetch request unsuccessful chunk-12");
}

TEST_CASE("noise levels outside the fixed set are rejected by the runner") {
    CHECK(eval::is_valid_noise_level(0.4));
    CHECK_FALSE(eval::is_valid_noise_level(0.5));
}

TEST_CASE("shipped noise asset parses to the embedded defaults") {
    std::string asset = std::string(SELFHEAL_SOURCE_DIR) + "/assets/noise_profiles.json";
    for (auto profile : {eval::NoiseProfile::control_plane, eval::NoiseProfile::storage,
                         eval::NoiseProfile::heterogeneous}) {
        auto from_file = eval::NoiseTables::load(profile, asset);
        auto embedded = eval::NoiseTables::for_profile(profile);
        CHECK(from_file.synonyms == embedded.synonyms);
        CHECK(from_file.anchors == embedded.anchors);
        CHECK(from_file.status_terms == embedded.status_terms);
    }
}

TEST_CASE("noise tables load from a versioned asset file") {
    TempDir dir;
    std::string path = dir.str() + "/tables.json";
    std::ofstream(path) << R"({
        "version": 1,
        "storage": {
            "synonyms": {"received": "tweaked"},
            "anchors": {"blk_": "zz-"},
            "status_terms": {}
        }
    })";
    auto tables = eval::NoiseTables::load(eval::NoiseProfile::storage, path);
    eval::NoiseConfig cfg{1.0, 42, eval::NoiseProfile::storage};
    CHECK(eval::inject_noise("received blk_7", cfg, tables) == "tweaked zz-7");
    CHECK_THROWS(eval::NoiseTables::load(eval::NoiseProfile::storage, dir.str() + "/none.json"));
}

// --- metrics ----------------------------------------------------------------------

TEST_CASE("parsing accuracy counts normalized equality") {
    CHECK(eval::parsing_accuracy({"t", "t", "t"}, {"t", "t", "t"}) == 1.0);
    CHECK(eval::parsing_accuracy({"t", "t", "u"}, {"t", "t", "t"}) ==
          doctest::Approx(2.0 / 3.0));
    CHECK(eval::parsing_accuracy({"A  B"}, {"a b"}) == 1.0);  // Norm equivalence
    CHECK_THROWS_AS(eval::parsing_accuracy({"x"}, {}), std::invalid_argument);
}

TEST_CASE("hand-tallied batch accuracy") {
    std::vector<std::string> pred = {"received block <*>", "error", "job <*> done",
                                     "wrong one", "disk <*>"};
    std::vector<std::string> truth = {"received block <*>", "error", "job <*> done",
                                      "job <*> done", "disk <*>"};
    CHECK(eval::parsing_accuracy(pred, truth) == doctest::Approx(0.8));
}

TEST_CASE("avg_rank ranks the heaviest edge first") {
    reasoning::CausalGraph g;
    g.nodes = {"a", "b", "c"};
    g.intra = {{0, 1, 0.9, 0}, {1, 2, 0.5, 0}};
    auto result = eval::avg_rank({g}, {{"a", "b"}});
    CHECK(result.avg_rank == 1.0);
    CHECK(result.misses == 0);

    auto second = eval::avg_rank({g}, {{"b", "c"}});
    CHECK(second.avg_rank == 2.0);
}

TEST_CASE("five-edge graph missing the relation scores six") {
    reasoning::CausalGraph g;
    g.nodes = {"a", "b", "c", "d", "e", "f"};
    g.intra = {{0, 1, 0.9, 0}, {1, 2, 0.8, 0}, {2, 3, 0.7, 0}};
    g.inter = {{3, 4, 0.6, 1}, {4, 5, 0.5, 1}};
    auto result = eval::avg_rank({g}, {{"f", "a"}});
    CHECK(result.avg_rank == 6.0);
    CHECK(result.misses == 1);
}

TEST_CASE("avg_rank averages across cases") {
    reasoning::CausalGraph g;
    g.nodes = {"a", "b", "c", "d"};
    g.intra = {{0, 1, 0.9, 0}, {1, 2, 0.8, 0}, {2, 3, 0.7, 0}};
    auto result = eval::avg_rank({g, g, g}, {{"a", "b"}, {"b", "c"}, {"c", "d"}});
    CHECK(result.avg_rank == 2.0);  // ranks 1, 2, 3
}

TEST_CASE("inter and intra edges rank together") {
    reasoning::CausalGraph g;
    g.nodes = {"a", "b"};
    g.intra = {{0, 1, 0.3, 0}};
    g.inter = {{1, 0, 0.8, 1}};
    auto result = eval::avg_rank({g}, {{"b", "a"}});
    CHECK(result.avg_rank == 1.0);
}

TEST_CASE("rca and e2e compare labels case-insensitively") {
    action::RcaReport good;
    good.root_cause = " Disk_Failure ";
    good.repair_action = "Replace Disk";
    action::RcaReport half = good;
    half.repair_action = "wrong action";

    auto [rca, e2e] = eval::rca_and_e2e({good, half}, {{"disk_failure", "replace disk"},
                                                       {"disk_failure", "replace disk"}});
    CHECK(rca == 1.0);
    CHECK(e2e == 0.5);
}

TEST_CASE("e2e never exceeds rca") {
    action::RcaReport a;
    a.root_cause = "x";
    a.repair_action = "y";
    action::RcaReport b;
    b.root_cause = "wrong";
    b.repair_action = "y";
    auto [rca, e2e] = eval::rca_and_e2e({a, b}, {{"x", "y"}, {"x", "y"}});
    CHECK(e2e <= rca);
}

// --- prefix tree baseline -----------------------------------------------------------

TEST_CASE("prefix tree exact and wildcard matching") {
    eval::PrefixTreeParser parser;
    parser.add_template("received block <*> of size <*>");
    parser.add_template("error");
    parser.add_template("job <*> finished");

    CHECK(parser.parse("received block <*> of size <*>").value() ==
          "received block <*> of size <*>");
    CHECK(parser.parse("error").value() == "error");
    CHECK(parser.parse("job <*> finished").value() == "job <*> finished");
    CHECK_FALSE(parser.parse("job <*> started").has_value());
    CHECK_FALSE(parser.parse("error extra").has_value());  // length mismatch
}

TEST_CASE("prefix tree depth cutoff still verifies the tail") {
    eval::PrefixTreeParser parser(2);
    parser.add_template("a b c d");
    parser.add_template("a b c e");
    CHECK(parser.parse("a b c d").value() == "a b c d");
    CHECK(parser.parse("a b c e").value() == "a b c e");
    CHECK_FALSE(parser.parse("a b x y").has_value());
}

// --- suite -------------------------------------------------------------------------

TEST_CASE("synthetic suite is deterministic and writes the fixture kb") {
    TempDir dir;
    auto s1 = small_suite(dir.str() + "/kb");
    auto s2 = small_suite(dir.str() + "/kb");
    REQUIRE(s1.cases.size() == s2.cases.size());
    CHECK(s1.cases[0].lines == s2.cases[0].lines);
    CHECK(s1.cases[0].truth_templates == s2.cases[0].truth_templates);
    CHECK(fs::exists(fs::path(dir.str()) / "kb" / "templates.jsonl"));
    CHECK(fs::exists(fs::path(dir.str()) / "kb" / "priors.jsonl"));
    CHECK(fs::exists(fs::path(dir.str()) / "kb" / "cases.jsonl"));

    kb::KnowledgeBase knowledge;
    auto report = knowledge.load_from(dir.str() + "/kb");
    CHECK(report.templates == 10);
    CHECK(report.priors == 3);
    CHECK(report.cases == 3);
    CHECK(knowledge.verify().empty());
}

TEST_CASE("suite manifest round-trips through save and load") {
    TempDir dir;
    auto suite = small_suite(dir.str() + "/kb");
    std::string manifest = dir.str() + "/suite.json";
    eval::save_suite(suite, manifest);
    auto loaded = eval::load_suite(manifest);
    CHECK(loaded.name == suite.name);
    CHECK(loaded.cases.size() == suite.cases.size());
    CHECK(loaded.cases[0].lines == suite.cases[0].lines);
    CHECK(loaded.cases[0].truth_relation == suite.cases[0].truth_relation);
}

TEST_CASE("empty suite completes immediately with zero rows") {
    TempDir dir;
    eval::Suite suite;
    suite.name = "empty";
    suite.kb_dir = dir.str() + "/kb";
    kb::KnowledgeBase::init_dir(suite.kb_dir);

    auto cfg = small_eval("h-empty");
    auto report = eval::run_benchmark(suite, cfg);
    CHECK(report.completed);
    for (const auto& row : report.rows) {
        if (row.metric == "pa") CHECK(row.value == 0.0);
    }
}

// --- runner ------------------------------------------------------------------------

TEST_CASE("benchmark rows are deterministic and within bounds") {
    TempDir dir;
    auto suite = small_suite(dir.str() + "/kb");
    auto cfg = small_eval("h-det");

    auto r1 = eval::run_benchmark(suite, cfg);
    auto r2 = eval::run_benchmark(suite, cfg);
    REQUIRE(r1.completed);
    CHECK(eval::rows_to_csv(r1.rows, "h-det") == eval::rows_to_csv(r2.rows, "h-det"));

    double rca = -1.0, e2e = -1.0;
    for (const auto& row : r1.rows) {
        if (row.metric == "pa" || row.metric == "rca" || row.metric == "e2e") {
            CHECK(row.value >= 0.0);
            CHECK(row.value <= 1.0);
        }
        if (row.metric == "avg_rank" && row.value > 0.0) CHECK(row.value >= 1.0);
        if (row.metric == "rca" && row.noise == 0.0) rca = row.value;
        if (row.metric == "e2e" && row.noise == 0.0) e2e = row.value;
    }
    CHECK(e2e <= rca);
}

TEST_CASE("checkpoint resume reproduces the single-shot run byte for byte") {
    TempDir dir;
    auto suite = small_suite(dir.str() + "/kb");

    auto cfg = small_eval("h-resume");
    cfg.checkpoint_path = dir.str() + "/single.progress";
    auto single = eval::run_benchmark(suite, cfg);
    REQUIRE(single.completed);

    auto interrupted = small_eval("h-resume");
    interrupted.checkpoint_path = dir.str() + "/resumed.progress";
    interrupted.abort_after_cells = 3;  // simulated kill mid-run
    auto partial = eval::run_benchmark(suite, interrupted);
    CHECK_FALSE(partial.completed);
    CHECK(partial.cells_done < single.cells_done);

    interrupted.abort_after_cells = -1;
    auto resumed = eval::run_benchmark(suite, interrupted);
    REQUIRE(resumed.completed);
    CHECK(eval::rows_to_csv(resumed.rows, "x") == eval::rows_to_csv(single.rows, "x"));
}

TEST_CASE("checkpoint with a different config hash is discarded") {
    TempDir dir;
    auto suite = small_suite(dir.str() + "/kb");

    auto cfg = small_eval("h-one");
    cfg.checkpoint_path = dir.str() + "/x.progress";
    cfg.abort_after_cells = 2;
    eval::run_benchmark(suite, cfg);

    auto other = small_eval("h-two");  // different hash, same checkpoint file
    other.checkpoint_path = cfg.checkpoint_path;
    auto report = eval::run_benchmark(suite, other);
    CHECK(report.completed);  // started fresh, ran everything
}

TEST_CASE("memory budget abort preserves partial results") {
    TempDir dir;
    auto suite = small_suite(dir.str() + "/kb");
    auto cfg = small_eval("h-budget");
    cfg.memory_budget_mb = 0.001;  // everything exceeds this
    auto report = eval::run_benchmark(suite, cfg);
    CHECK(report.budget_exceeded);
    CHECK_FALSE(report.completed);
}

TEST_CASE("csv and jsonl embed the config hash") {
    std::vector<eval::MetricRow> rows = {{"ds", "m", 0.2, "pa", 0.5, 42}};
    auto csv = eval::rows_to_csv(rows, "deadbeef");
    CHECK(csv.find("# config_hash=deadbeef\n") == 0);
    CHECK(csv.find("dataset,method,noise,metric,value,seed\n") != std::string::npos);
    CHECK(csv.find("ds,m,0.2,pa,0.5,42\n") != std::string::npos);

    auto jsonl = eval::rows_to_jsonl(rows, "deadbeef");
    CHECK(jsonl.find("deadbeef") != std::string::npos);
}

TEST_CASE("rss sampling reports a plausible value") {
    CHECK(eval::current_rss_mb() > 0.0);
    CHECK(eval::peak_rss_mb() >= eval::current_rss_mb() * 0.5);
}
