#include "selfheal/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "selfheal/config.hpp"
#include "selfheal/eval.hpp"
#include "selfheal/kb.hpp"
#include "selfheal/text.hpp"

namespace selfheal::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct CommonOptions {
    std::string config_path;
};

config::PipelineConfig resolve_config(const CommonOptions& common) {
    if (common.config_path.empty()) return config::PipelineConfig{};
    return config::load_config(common.config_path);
}

std::vector<perception::RawLog> read_raw_logs(const std::string& path,
                                              const std::string& source_id) {
    std::ifstream in(path);
    if (!in.is_open()) throw std::runtime_error("input file not found: " + path);
    std::vector<perception::RawLog> logs;
    std::string line;
    std::uint64_t seq = 0;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        logs.push_back({line, source_id, seq++});
    }
    return logs;
}

int cmd_parse(const CommonOptions& common, const std::string& input_path,
              const std::string& output_path, const std::string& source_id, bool dry_run) {
    config::PipelineConfig cfg = resolve_config(common);
    const std::string hash = config::config_hash(cfg);

    auto logs = read_raw_logs(input_path, source_id);
    if (dry_run) {
        std::cout << "plan: " << logs.size() << " lines via L1 cache (capacity "
                  << cfg.cache_capacity << ") -> L2 retrieval (delta_sim " << cfg.delta_sim
                  << ", kb " << cfg.kb_dir << ") -> L3 backend " << cfg.model_backend
                  << "; config_hash=" << hash << "\n";
        return kExitOk;
    }

    kb::KnowledgeBase knowledge(cfg.embedding_dim);
    bool have_kb = fs::is_directory(cfg.kb_dir);
    if (have_kb) knowledge.load_from(cfg.kb_dir);

    auto client = config::make_model_client(cfg);
    perception::TemplateCache cache(cfg.cache_capacity);
    perception::ParseOptions options;
    options.delta_sim = cfg.delta_sim;
    options.cache_l2_hits = cfg.cache_l2_hits;
    options.rules = perception::MaskRuleSet::with_timestamp_formats(cfg.timestamp_formats);

    auto output = perception::parse_stream(logs, cache, have_kb ? &knowledge : nullptr,
                                           client.get(), options);

    std::ofstream out(output_path, std::ios::trunc | std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("cannot write output: " + output_path);
    json meta;
    meta["schema"] = "events/v1";
    meta["config_hash"] = hash;
    out << meta.dump() << "\n";
    for (const auto& record : output.events) {
        out << perception::event_record_line(record) << "\n";
    }

    std::cout << "parsed " << output.events.size() << " events: L1=" << output.stats.l1_hits
              << " L2=" << output.stats.l2_hits << " L3=" << output.stats.l3_hits
              << " (l2_cached=" << output.stats.l2_cache_inserts
              << ", degraded=" << output.stats.degraded_templates
              << ", ts_warnings=" << output.stats.timestamp_warnings << ")\n";
    return kExitOk;
}

std::vector<perception::StructuredEvent> read_events(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw std::runtime_error("events file not found: " + path);
    std::vector<perception::StructuredEvent> events;
    std::string line;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("template_id")) continue;  // meta line
        perception::StructuredEvent e;
        e.template_id = rec.at("template_id").get<std::string>();
        e.timestamp_ms = rec.at("timestamp_ms").get<std::int64_t>();
        e.source_id = rec.value("source_id", "");
        events.push_back(std::move(e));
    }
    return events;
}

int cmd_reason(const CommonOptions& common, const std::string& events_path,
               const std::string& output_path, bool no_priors) {
    config::PipelineConfig cfg = resolve_config(common);
    const std::string hash = config::config_hash(cfg);

    auto events = read_events(events_path);
    if (events.empty()) {
        std::cerr << "error: insufficient windows (no events)\n";
        return kExitData;
    }
    auto matrix = reasoning::aggregate_windows(events, cfg.window_len_ms, cfg.window_stride_ms);
    if (matrix.windows() < 2) {
        std::cerr << "error: insufficient windows (need at least 2, got "
                  << matrix.windows() << ")\n";
        return kExitData;
    }

    reasoning::PriorMasks masks;
    if (no_priors || !fs::is_directory(cfg.kb_dir)) {
        reasoning::PenaltySet flat{cfg.penalties_w.bg, cfg.penalties_w.bg, cfg.penalties_w.bg};
        masks = reasoning::build_prior_masks({}, {}, matrix.types(), flat, flat);
    } else {
        kb::KnowledgeBase knowledge(cfg.embedding_dim);
        knowledge.load_from(cfg.kb_dir);
        auto pairs = knowledge.priors_for(matrix.event_order);
        masks = reasoning::build_prior_masks(pairs.intra, pairs.inter, matrix.types(),
                                             cfg.penalties_w, cfg.penalties_a);
        if (pairs.skipped) {
            std::cerr << "warning: " << pairs.skipped
                      << " prior pair(s) reference unknown templates, skipped\n";
        }
    }

    auto solved = reasoning::solve(matrix, masks, cfg.solve);
    auto graph =
        reasoning::prune_and_resolve(solved.w, solved.a, masks, matrix.event_order, cfg.solve);

    std::ofstream out(output_path, std::ios::trunc | std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("cannot write output: " + output_path);
    out << reasoning::graph_to_json(graph, hash) << "\n";

    std::cout << "graph: " << graph.nodes.size() << " nodes, " << graph.intra.size()
              << " intra + " << graph.inter.size() << " inter edges; h=" << solved.final_h
              << (solved.converged ? "" : " (not converged)") << "\n";
    return kExitOk;
}

int cmd_diagnose(const CommonOptions& common, const std::string& graph_path,
                 const std::string& output_path, bool offline) {
    config::PipelineConfig cfg = resolve_config(common);
    if (offline) cfg.model_backend = "mock";
    const std::string hash = config::config_hash(cfg);

    std::ifstream in(graph_path);
    if (!in.is_open()) throw std::runtime_error("graph file not found: " + graph_path);
    std::string doc((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto graph = reasoning::graph_from_json(doc);

    kb::KnowledgeBase knowledge(cfg.embedding_dim);
    if (fs::is_directory(cfg.kb_dir)) knowledge.load_from(cfg.kb_dir);

    auto client = config::make_model_client(cfg);
    auto report = action::diagnose(graph, knowledge, client.get(), cfg.action);

    std::ofstream out(output_path, std::ios::trunc | std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("cannot write output: " + output_path);
    out << action::report_to_json(report, hash) << "\n";

    std::cout << "diagnosis: root_cause=" << report.root_cause
              << " action=" << report.repair_action
              << " path=" << action::decision_path_name(report.decision_path)
              << (report.degraded ? " (degraded)" : "") << "\n";
    return kExitOk;
}

int cmd_eval(const CommonOptions& common, const std::string& suite_path, bool synth,
             const std::string& synth_dir, const std::string& out_prefix, bool resume,
             int abort_after_cells) {
    config::PipelineConfig cfg = resolve_config(common);
    const std::string hash = config::config_hash(cfg);

    eval::Suite suite;
    if (synth) {
        eval::SynthConfig synth_cfg;
        synth_cfg.seed = cfg.seed;
        synth_cfg.kb_dir = synth_dir.empty() ? out_prefix + ".kb" : synth_dir;
        suite = eval::make_synthetic_suite(synth_cfg);
    } else {
        suite = eval::load_suite(suite_path);
    }

    eval::EvalConfig run_cfg;
    run_cfg.seed = cfg.seed;
    run_cfg.profile = eval::profile_from_name(cfg.noise_profile);
    run_cfg.tables_path = cfg.noise_tables_path;
    run_cfg.delta_sim = cfg.delta_sim;
    run_cfg.cache_capacity = cfg.cache_capacity;
    run_cfg.window_len_ms = cfg.window_len_ms;
    run_cfg.penalties_w = cfg.penalties_w;
    run_cfg.penalties_a = cfg.penalties_a;
    run_cfg.solve = cfg.solve;
    run_cfg.action = cfg.action;
    run_cfg.memory_budget_mb = cfg.memory_budget_mb;
    run_cfg.config_hash = hash;
    run_cfg.checkpoint_path = out_prefix + ".progress";
    run_cfg.abort_after_cells = abort_after_cells;
    if (!resume && fs::exists(run_cfg.checkpoint_path)) {
        fs::remove(run_cfg.checkpoint_path);
    }

    auto report = eval::run_benchmark(suite, run_cfg);

    if (report.completed) {
        std::ofstream csv(out_prefix + ".csv", std::ios::trunc | std::ios::binary);
        csv << eval::rows_to_csv(report.rows, hash);
        std::ofstream jsonl(out_prefix + ".jsonl", std::ios::trunc | std::ios::binary);
        jsonl << eval::rows_to_jsonl(report.rows, hash);
    }
    {
        // Wall-clock and memory figures are inherently run-dependent; they
        // live in a sidecar so the metric artifacts stay byte-comparable.
        std::ofstream runtime(out_prefix + ".runtime.jsonl", std::ios::trunc | std::ios::binary);
        json rec;
        rec["config_hash"] = hash;
        rec["suite"] = suite.name;
        rec["completed"] = report.completed;
        rec["budget_exceeded"] = report.budget_exceeded;
        rec["cells_done"] = report.cells_done;
        rec["cells_total"] = report.cells_total;
        rec["avg_parse_latency_ms"] = report.avg_parse_latency_ms;
        rec["peak_rss_mb"] = report.peak_rss_mb;
        runtime << rec.dump() << "\n";
    }

    std::cout << "eval " << suite.name << ": cells " << report.cells_done << "/"
              << report.cells_total << ", peak_rss_mb=" << report.peak_rss_mb
              << (report.completed ? "" : " (partial)") << "\n";
    if (report.budget_exceeded) {
        std::cerr << "error: memory budget exceeded, partial results preserved\n";
        return kExitBudget;
    }
    return kExitOk;
}

int cmd_kb(const std::string& verb, const std::string& dir) {
    if (verb == "init") {
        kb::KnowledgeBase::init_dir(dir);
        std::cout << "initialized knowledge base at " << dir << "\n";
        return kExitOk;
    }
    kb::KnowledgeBase knowledge;
    auto load_report = knowledge.load_from(dir);
    if (verb == "verify") {
        auto diagnostics = knowledge.verify();
        for (const auto& d : load_report.diagnostics) std::cerr << "load: " << d << "\n";
        for (const auto& d : diagnostics) std::cerr << "verify: " << d << "\n";
        if (!diagnostics.empty() || !load_report.diagnostics.empty()) return kExitData;
        std::cout << "ok: " << load_report.templates << " templates, " << load_report.priors
                  << " priors, " << load_report.cases << " cases, " << load_report.pending
                  << " pending\n";
        return kExitOk;
    }
    if (verb == "approve") {
        std::size_t applied = knowledge.apply_validated_all();
        std::cout << "applied " << applied << " pending entr" << (applied == 1 ? "y" : "ies")
                  << "\n";
        return kExitOk;
    }
    if (verb == "stats") {
        auto stats = knowledge.stats();
        json doc;
        doc["templates"] = stats.templates;
        doc["validated_templates"] = stats.validated_templates;
        doc["priors"] = stats.priors;
        doc["cases"] = stats.cases;
        doc["validated_cases"] = stats.validated_cases;
        doc["pending"] = stats.pending;
        std::cout << doc.dump(2) << "\n";
        return kExitOk;
    }
    std::cerr << "unknown kb verb: " << verb << "\n";
    return kExitUsage;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"log-to-root-cause self-healing pipeline"};
    app.require_subcommand(1);

    CommonOptions common;
    app.add_option("--config", common.config_path, "pipeline config file (JSON)");

    std::string input, output, source_id = "stream0";
    bool dry_run = false;
    auto* parse = app.add_subcommand("parse", "parse raw logs into structured events");
    parse->add_option("--input", input, "raw log file")->required();
    parse->add_option("--output", output, "events output file (JSONL)");
    parse->add_option("--source-id", source_id, "stream source id");
    parse->add_flag("--dry-run", dry_run, "print the route plan without writing");

    std::string events_path, graph_out;
    bool no_priors = false;
    auto* reason = app.add_subcommand("reason", "events file -> causal graph");
    reason->add_option("--events", events_path, "events file from parse")->required();
    reason->add_option("--output", graph_out, "graph output file (JSON)")->required();
    reason->add_flag("--no-priors", no_priors, "use all-background penalty masks");

    std::string graph_path, report_out;
    bool offline = false;
    auto* diagnose = app.add_subcommand("diagnose", "graph + KB -> RCA report");
    diagnose->add_option("--graph", graph_path, "graph file from reason")->required();
    diagnose->add_option("--output", report_out, "report output file (JSON)")->required();
    diagnose->add_flag("--offline", offline, "force the mock backend");

    std::string suite_path, out_prefix = "eval_out", synth_dir;
    bool synth = false, resume = false;
    int abort_after_cells = -1;
    auto* eval_cmd = app.add_subcommand("eval", "run the layered benchmark");
    eval_cmd->add_option("--suite", suite_path, "suite manifest (JSON)");
    eval_cmd->add_flag("--synth", synth, "use the built-in synthetic suite");
    eval_cmd->add_option("--synth-dir", synth_dir, "where the synthetic fixture KB is written");
    eval_cmd->add_option("--out", out_prefix, "output prefix (.csv/.jsonl/.runtime.jsonl)");
    eval_cmd->add_flag("--resume", resume, "resume from the progress checkpoint");
    eval_cmd->add_option("--abort-after-cells", abort_after_cells,
                         "stop after N newly computed cells (testing hook)");

    std::string kb_verb, kb_dir_opt;
    auto* kb_cmd = app.add_subcommand("kb", "manage the knowledge base");
    kb_cmd->add_option("verb", kb_verb, "init|verify|approve|stats")->required();
    kb_cmd->add_option("--dir", kb_dir_opt, "knowledge base directory");

    std::vector<const char*> argv;
    argv.push_back("selfheal");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (parse->parsed()) return cmd_parse(common, input, output, source_id, dry_run);
        if (reason->parsed()) return cmd_reason(common, events_path, graph_out, no_priors);
        if (diagnose->parsed()) return cmd_diagnose(common, graph_path, report_out, offline);
        if (eval_cmd->parsed()) {
            if (!synth && suite_path.empty()) {
                std::cerr << "error: eval requires --suite or --synth\n";
                return kExitUsage;
            }
            return cmd_eval(common, suite_path, synth, synth_dir, out_prefix, resume,
                            abort_after_cells);
        }
        if (kb_cmd->parsed()) {
            if (kb_dir_opt.empty()) {
                config::PipelineConfig cfg = resolve_config(common);
                kb_dir_opt = cfg.kb_dir;
            }
            return cmd_kb(kb_verb, kb_dir_opt);
        }
    } catch (const config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const kb::KbError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace selfheal::cli
