#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "selfheal/cli.hpp"
#include "selfheal/config.hpp"
#include "selfheal/eval.hpp"
#include "selfheal/kb.hpp"
#include "selfheal/perception.hpp"
#include "selfheal/text.hpp"

using namespace selfheal;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("selfheal_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& p, const std::string& content) {
    std::ofstream(p, std::ios::trunc | std::ios::binary) << content;
}

/// Two incident minutes of strongly coupled templates, enough for one lag.
void write_incident_log(const std::string& path) {
    std::ostringstream out;
    const char* stamps[] = {"2024-03-14 09:00:%02d", "2024-03-14 09:01:%02d",
                            "2024-03-14 09:02:%02d", "2024-03-14 09:03:%02d"};
    int counts[] = {2, 4, 3, 5};
    for (int w = 0; w < 4; ++w) {
        int sec = 0;
        for (int k = 0; k < counts[w]; ++k) {
            char stamp[64];
            std::snprintf(stamp, sizeof(stamp), stamps[w], sec++);
            out << stamp << " datanode 10.0.0." << (k + 1) << " heartbeat missed\n";
            std::snprintf(stamp, sizeof(stamp), stamps[w], sec++);
            out << stamp << " replication of extent blk_" << (100 + k) << " stalled\n";
        }
    }
    write_file(path, out.str());
}

}  // namespace

TEST_CASE("usage errors exit 1") {
    CHECK(cli::run({"definitely-not-a-command"}) == cli::kExitUsage);
    CHECK(cli::run({"eval"}) == cli::kExitUsage);  // neither --suite nor --synth
}

TEST_CASE("missing input file exits with a data error") {
    TempDir dir;
    CHECK(cli::run({"parse", "--input", dir.file("absent.log"), "--output",
                    dir.file("out.jsonl")}) == cli::kExitData);
}

TEST_CASE("config with unknown keys is rejected") {
    TempDir dir;
    write_file(dir.file("bad.json"), R"({"perception": {"delta_simm": 0.9}})");
    write_incident_log(dir.file("in.log"));
    CHECK(cli::run({"--config", dir.file("bad.json"), "parse", "--input", dir.file("in.log"),
                    "--output", dir.file("out.jsonl")}) == cli::kExitUsage);
}

TEST_CASE("config validation rejects out-of-range thresholds") {
    CHECK_THROWS_AS(config::config_from_json_text(R"({"perception":{"delta_sim": 1.5}})"),
                    config::ConfigError);
    CHECK_THROWS_AS(config::config_from_json_text(R"({"model":{"backend": "punchcard"}})"),
                    config::ConfigError);
    CHECK_NOTHROW(config::config_from_json_text(R"({"perception":{"delta_sim": 0.9}})"));
}

TEST_CASE("config hash is stable across equivalent configs") {
    auto a = config::config_from_json_text("{}");
    auto b = config::config_from_json_text(R"({"perception":{"delta_sim": 0.85}})");
    CHECK(config::config_hash(a) == config::config_hash(b));  // 0.85 is the default
    auto c = config::config_from_json_text(R"({"perception":{"delta_sim": 0.9}})");
    CHECK(config::config_hash(a) != config::config_hash(c));
}

TEST_CASE("dry run prints a plan and writes nothing") {
    TempDir dir;
    write_incident_log(dir.file("in.log"));
    CHECK(cli::run({"parse", "--input", dir.file("in.log"), "--output", dir.file("out.jsonl"),
                    "--dry-run"}) == cli::kExitOk);
    CHECK_FALSE(fs::exists(dir.file("out.jsonl")));
}

TEST_CASE("full parse-reason-diagnose pipeline on a fixture incident") {
    TempDir dir;
    write_incident_log(dir.file("in.log"));

    // fixture KB: both templates plus a prior and a matching case
    std::string kb_dir = dir.file("kb");
    kb::KnowledgeBase::init_dir(kb_dir);
    {
        kb::KnowledgeBase knowledge;
        auto root = perception::make_template("datanode <*> heartbeat missed",
                                              perception::Tier::l2, true);
        auto effect = perception::make_template("replication of extent <*> stalled",
                                                perception::Tier::l2, true);
        kb::TemplateEntry te;
        te.template_id = root.template_id;
        te.text = root.text;
        te.validated = true;
        knowledge.add_template(te);
        te.template_id = effect.template_id;
        te.text = effect.text;
        knowledge.add_template(te);
        knowledge.add_prior({root.template_id, effect.template_id, kb::PriorFamily::intra, 3});
        kb::CaseEntry kase;
        kase.case_id = "case_hb";
        kase.indexed_text = text::normalize(root.text + " " + effect.text + " " + root.text +
                                            " " + effect.text);
        kase.root_cause_label = "datanode_offline";
        kase.repair_action = "restart datanode service";
        kase.template_refs = {root.template_id};
        kase.validated = true;
        knowledge.add_case(kase);
        knowledge.save_to(kb_dir);
    }
    write_file(dir.file("cfg.json"), std::string(R"({"kb_dir": ")") + kb_dir + "\"}");

    // parse
    CHECK(cli::run({"--config", dir.file("cfg.json"), "parse", "--input", dir.file("in.log"),
                    "--output", dir.file("events.jsonl")}) == cli::kExitOk);
    std::string events = read_file(dir.file("events.jsonl"));
    CHECK(events.find("\"tier\"") != std::string::npos);
    CHECK(events.find("config_hash") != std::string::npos);

    // identical run is byte-identical (determinism)
    CHECK(cli::run({"--config", dir.file("cfg.json"), "parse", "--input", dir.file("in.log"),
                    "--output", dir.file("events2.jsonl")}) == cli::kExitOk);
    CHECK(read_file(dir.file("events2.jsonl")) == events);

    // reason
    CHECK(cli::run({"--config", dir.file("cfg.json"), "reason", "--events",
                    dir.file("events.jsonl"), "--output", dir.file("graph.json")}) ==
          cli::kExitOk);
    auto graph_doc = nlohmann::json::parse(read_file(dir.file("graph.json")));
    CHECK(graph_doc.contains("nodes"));
    CHECK(graph_doc.contains("config_hash"));
    CHECK(graph_doc["nodes"].size() == 2);

    // diagnose (offline forces the mock backend)
    CHECK(cli::run({"--config", dir.file("cfg.json"), "diagnose", "--graph",
                    dir.file("graph.json"), "--output", dir.file("report.json"),
                    "--offline"}) == cli::kExitOk);
    auto report_doc = nlohmann::json::parse(read_file(dir.file("report.json")));
    CHECK(report_doc["decision_path"] == "local");
    CHECK(report_doc["root_cause"] == "datanode_offline");
    CHECK(report_doc["action"] == "restart datanode service");

    // replaying the tail of the pipeline reproduces the artifacts byte for byte
    CHECK(cli::run({"--config", dir.file("cfg.json"), "reason", "--events",
                    dir.file("events.jsonl"), "--output", dir.file("graph2.json")}) ==
          cli::kExitOk);
    CHECK(read_file(dir.file("graph2.json")) == read_file(dir.file("graph.json")));
    CHECK(cli::run({"--config", dir.file("cfg.json"), "diagnose", "--graph",
                    dir.file("graph2.json"), "--output", dir.file("report2.json"),
                    "--offline"}) == cli::kExitOk);
    CHECK(read_file(dir.file("report2.json")) == read_file(dir.file("report.json")));
}

TEST_CASE("reason rejects event files without enough windows") {
    TempDir dir;
    write_file(dir.file("events.jsonl"),
               R"({"template_id":"x","timestamp_ms":1000,"source_id":"s"})" "\n");
    CHECK(cli::run({"reason", "--events", dir.file("events.jsonl"), "--output",
                    dir.file("graph.json")}) == cli::kExitData);
    write_file(dir.file("none.jsonl"), "");
    CHECK(cli::run({"reason", "--events", dir.file("none.jsonl"), "--output",
                    dir.file("graph.json")}) == cli::kExitData);
}

TEST_CASE("no-priors flag produces a graph without kb input") {
    TempDir dir;
    write_incident_log(dir.file("in.log"));
    REQUIRE(cli::run({"parse", "--input", dir.file("in.log"), "--output",
                      dir.file("events.jsonl")}) == cli::kExitOk);
    CHECK(cli::run({"reason", "--events", dir.file("events.jsonl"), "--output",
                    dir.file("graph.json"), "--no-priors"}) == cli::kExitOk);
    CHECK(fs::exists(dir.file("graph.json")));
}

TEST_CASE("kb lifecycle: init, stats, approve, verify") {
    TempDir dir;
    std::string kb_dir = dir.file("kb");
    CHECK(cli::run({"kb", "init", "--dir", kb_dir}) == cli::kExitOk);
    CHECK(fs::exists(fs::path(kb_dir) / "templates.jsonl"));
    CHECK(cli::run({"kb", "verify", "--dir", kb_dir}) == cli::kExitOk);
    CHECK(cli::run({"kb", "stats", "--dir", kb_dir}) == cli::kExitOk);

    // enqueue something, then approve via CLI
    {
        kb::KnowledgeBase knowledge;
        knowledge.load_from(kb_dir);
        kb::TemplateEntry entry;
        auto tmpl = perception::make_template("queued <*>", perception::Tier::l3, false);
        entry.template_id = tmpl.template_id;
        entry.text = tmpl.text;
        knowledge.enqueue_template(entry);
    }
    CHECK(cli::run({"kb", "approve", "--dir", kb_dir}) == cli::kExitOk);
    kb::KnowledgeBase knowledge;
    auto report = knowledge.load_from(kb_dir);
    CHECK(report.templates == 1);
    CHECK(report.pending == 0);

    CHECK(cli::run({"kb", "verify", "--dir", "/definitely/not/here"}) == cli::kExitData);
    CHECK(cli::run({"kb", "frobnicate", "--dir", kb_dir}) == cli::kExitUsage);

    // corrupted stored embedding fails verification
    auto tmpl_file = fs::path(kb_dir) / "templates.jsonl";
    auto doc = nlohmann::ordered_json::parse(read_file(tmpl_file.string()));
    doc["embedding"][0][1] = doc["embedding"][0][1].get<double>() + 0.5;
    write_file(tmpl_file.string(), doc.dump() + "\n");
    CHECK(cli::run({"kb", "verify", "--dir", kb_dir}) == cli::kExitData);
}

TEST_CASE("eval emits six rows per metric over the full level grid") {
    TempDir dir;
    // tiny synthetic suite for speed
    eval::SynthConfig sc;
    sc.seed = 3;
    sc.case_count = 2;
    sc.windows_per_case = 4;
    sc.kb_dir = dir.file("kb");
    auto suite = eval::make_synthetic_suite(sc);
    eval::save_suite(suite, dir.file("suite.json"));

    CHECK(cli::run({"eval", "--suite", dir.file("suite.json"), "--out", dir.file("run")}) ==
          cli::kExitOk);
    std::string csv = read_file(dir.file("run.csv"));
    std::size_t pa_rows = 0;
    std::istringstream lines(csv);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.find(",router,") != std::string::npos &&
            line.find(",pa,") != std::string::npos) {
            ++pa_rows;
        }
    }
    CHECK(pa_rows == 6);  // one per noise level
    CHECK(fs::exists(dir.file("run.jsonl")));
    CHECK(fs::exists(dir.file("run.runtime.jsonl")));
}
