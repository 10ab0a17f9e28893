// Acceptance suite: every release-gating criterion runs here and prints one
// PASS/FAIL line. The process exits nonzero if any criterion fails.
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfheal/action.hpp"
#include "selfheal/cli.hpp"
#include "selfheal/eval.hpp"
#include "selfheal/kb.hpp"
#include "selfheal/perception.hpp"
#include "selfheal/reasoning.hpp"
#include "selfheal/text.hpp"
#include "test_oracles.hpp"

using namespace selfheal;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %s — %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), pattern, a, b, c);
    return buf;
}

reasoning::EventMatrix matrix_from_rows(const std::vector<std::vector<double>>& rows) {
    reasoning::EventMatrix x;
    const std::size_t m = rows.size();
    const std::size_t d = rows.empty() ? 0 : rows[0].size();
    x.counts = reasoning::Matrix(m, d);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t col = 0; col < d; ++col) x.counts(r, col) = rows[r][col];
    }
    for (std::size_t col = 0; col < d; ++col) x.event_order.push_back("t" + std::to_string(col));
    x.row_start_ms.resize(m, 0);
    return x;
}

// --- criterion 1: gradient fidelity ---------------------------------------------

void check_gradient_fidelity() {
    const double h = 1e-5;
    auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    int instances = 0;

    std::uint64_t rng = 0xACCE11ull;
    for (int d : {3, 3, 3, 3, 3, 3, 3, 4, 4, 4, 4, 4, 4, 4, 6, 6, 6, 6, 6, 6}) {
        ++instances;
        const std::size_t dd = static_cast<std::size_t>(d);
        std::vector<std::vector<double>> rows(8, std::vector<double>(dd));
        for (auto& row : rows) {
            for (auto& cell : row) cell = static_cast<double>(oracles::splitmix(rng) % 9);
        }
        auto x = matrix_from_rows(rows);
        reasoning::Matrix w(dd, dd), a(dd, dd);
        for (std::size_t i = 0; i < dd; ++i) {
            for (std::size_t j = 0; j < dd; ++j) {
                w(i, j) = oracles::unit(rng) - 0.5;
                a(i, j) = oracles::unit(rng) - 0.5;
            }
        }

        auto lg = reasoning::loss_and_grad(x, w, a);
        auto ac = reasoning::acyclicity(w);
        reasoning::Matrix fd_w(dd, dd), fd_a(dd, dd), fd_h(dd, dd);
        for (std::size_t i = 0; i < dd; ++i) {
            for (std::size_t j = 0; j < dd; ++j) {
                auto wp = w, wm = w;
                wp(i, j) += h;
                wm(i, j) -= h;
                fd_w(i, j) = (reasoning::loss_and_grad(x, wp, a).loss -
                              reasoning::loss_and_grad(x, wm, a).loss) /
                             (2 * h);
                fd_h(i, j) =
                    (reasoning::acyclicity(wp).h - reasoning::acyclicity(wm).h) / (2 * h);
                auto ap = a, am = a;
                ap(i, j) += h;
                am(i, j) -= h;
                fd_a(i, j) = (reasoning::loss_and_grad(x, w, ap).loss -
                              reasoning::loss_and_grad(x, w, am).loss) /
                             (2 * h);
            }
        }
        auto rel = [](const reasoning::Matrix& an, const reasoning::Matrix& fd) {
            auto diff = an - fd;
            return diff.frobenius_norm() / std::max(1e-12, fd.frobenius_norm());
        };
        worst = std::max({worst, rel(lg.grad_w, fd_w), rel(lg.grad_a, fd_a),
                          rel(ac.grad, fd_h)});
    }
    double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report("gradient fidelity",
           instances == 20 && worst < 1e-4 && seconds < 10.0,
           fmt("worst relative error %.2e over 20 instances in %.2f s", worst, seconds));
}

// --- criterion 2: acyclicity exactness --------------------------------------------

void check_acyclicity_exactness() {
    bool pass = true;
    std::string detail;

    auto zero = reasoning::acyclicity(reasoning::Matrix(5, 5));
    pass = pass && std::abs(zero.h) <= 1e-12;

    std::uint64_t rng = 77;
    double worst_tri = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        reasoning::Matrix w(6, 6);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = i + 1; j < 6; ++j) {
                w(i, j) = 4.0 * (oracles::unit(rng) - 0.5);
            }
        }
        worst_tri = std::max(worst_tri, std::abs(reasoning::acyclicity(w).h));
    }
    pass = pass && worst_tri <= 1e-9;

    reasoning::Matrix two(2, 2);
    two(0, 1) = 1.0;
    two(1, 0) = 1.0;
    const double expected = 2.0 * std::cosh(1.0) - 2.0;
    const double got = reasoning::acyclicity(two).h;
    pass = pass && std::abs(got - expected) <= 1e-9;

    report("acyclicity exactness", pass,
           fmt("h(0)=%.1e, worst triangular %.1e, 2cosh(1)-2 error %.1e", std::abs(zero.h),
               worst_tri, std::abs(got - expected)));
}

// --- criteria 3 and 5: structure recovery and sparsity direction -------------------

void check_structure_recovery() {
    auto t0 = std::chrono::steady_clock::now();
    int pooled_tp = 0, pooled_fp = 0, pooled_fn = 0, reversed = 0;
    int free_le_prior = 0, prior_sparser = 0;

    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto inst = oracles::make_var_instance(seed, 6, 200);
        auto x = matrix_from_rows(inst.data);
        reasoning::SolveConfig cfg;

        auto run = [&](const reasoning::PriorMasks& masks, int* edge_count) {
            auto solved = reasoning::solve(x, masks, cfg);
            auto graph =
                reasoning::prune_and_resolve(solved.w, solved.a, masks, x.event_order, cfg);
            std::vector<std::pair<int, int>> rec_w, rec_a;
            for (const auto& e : graph.intra) rec_w.emplace_back(e.src, e.dst);
            for (const auto& e : graph.inter) rec_a.emplace_back(e.src, e.dst);
            *edge_count = static_cast<int>(graph.intra.size() + graph.inter.size());
            auto sw = oracles::score_support(inst.w_edges, rec_w);
            auto sa = oracles::score_support(inst.a_edges, rec_a);
            return std::make_tuple(sw, sa);
        };

        auto prior_masks = reasoning::build_prior_masks(inst.w_edges, inst.a_edges, 6,
                                                        {0.1, 10.0, 1.0}, {0.1, 10.0, 1.0});
        auto flat_masks =
            reasoning::build_prior_masks({}, {}, 6, {1.0, 1.0, 1.0}, {1.0, 1.0, 1.0});

        int edges_prior = 0, edges_free = 0;
        auto [swp, sap] = run(prior_masks, &edges_prior);
        auto [swf, saf] = run(flat_masks, &edges_free);

        pooled_tp += swp.true_positive + sap.true_positive;
        pooled_fp += swp.false_positive + sap.false_positive;
        pooled_fn += swp.false_negative + sap.false_negative;
        reversed += swp.reversed;

        auto f1_of = [](const oracles::SupportScore& sw, const oracles::SupportScore& sa) {
            double tp = sw.true_positive + sa.true_positive;
            double denom =
                2.0 * tp + sw.false_positive + sa.false_positive + sw.false_negative +
                sa.false_negative;
            return denom == 0.0 ? 1.0 : 2.0 * tp / denom;
        };
        if (f1_of(swf, saf) <= f1_of(swp, sap)) ++free_le_prior;
        if (edges_prior <= edges_free) ++prior_sparser;
    }

    double pooled_f1 = 2.0 * pooled_tp / std::max(1.0, 2.0 * pooled_tp + pooled_fp + pooled_fn);
    double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    report("synthetic structure recovery",
           pooled_f1 >= 0.9 && reversed == 0 && free_le_prior >= 7 && seconds < 60.0,
           fmt("pooled F1 %.3f, reversed %g, prior-free <= prior on %g/10 seeds",
               pooled_f1, static_cast<double>(reversed),
               static_cast<double>(free_le_prior)) +
               fmt(", %.1f s", seconds));
    report("sparsity direction", prior_sparser >= 8,
           fmt("prior-constrained graphs sparser-or-equal on %g/10 seeds",
               static_cast<double>(prior_sparser)));
}

// --- criterion: miss-penalty rule ---------------------------------------------------

void check_miss_penalty() {
    reasoning::CausalGraph g;
    g.nodes = {"a", "b", "c", "d", "e", "f"};
    g.intra = {{0, 1, 0.9, 0}, {1, 2, 0.8, 0}, {2, 3, 0.7, 0}};
    g.inter = {{3, 4, 0.6, 1}, {4, 5, 0.5, 1}};
    auto result = eval::avg_rank({g}, {{"f", "a"}});
    report("miss-penalty rule", result.avg_rank == 6.0 && result.misses == 1,
           fmt("5-edge graph missing the relation ranks %.0f", result.avg_rank));
}

// --- criterion: bypass economics ----------------------------------------------------

struct BypassFixture {
    reasoning::CausalGraph graph;
    kb::KnowledgeBase knowledge;
    model::MockClient client;
};

void fill_bypass_fixture(BypassFixture& fx, int variant, bool ambiguous) {
    const std::string tag = std::to_string(variant);
    const std::string root_text = "service " + tag + " lease lapsed for client <*>";
    const std::string effect_text = "service " + tag + " writer quorum lost on shard <*>";
    auto root = perception::make_template(root_text, perception::Tier::l2, true);
    auto effect = perception::make_template(effect_text, perception::Tier::l2, true);

    fx.graph.nodes = {root.template_id, effect.template_id};
    fx.graph.intra = {{0, 1, 0.9, 0}};

    kb::TemplateEntry te;
    te.template_id = root.template_id;
    te.text = root.text;
    te.validated = true;
    fx.knowledge.add_template(te);
    te.template_id = effect.template_id;
    te.text = effect.text;
    fx.knowledge.add_template(te);

    kb::CaseEntry kase;
    kase.case_id = "case_main_" + tag;
    kase.indexed_text = text::normalize(root.text + " " + effect.text + " " + root.text + " " +
                                        effect.text);
    kase.root_cause_label = "lease_expiry_" + tag;
    kase.repair_action = "renew lease " + tag;
    kase.template_refs = {root.template_id};
    kase.validated = true;
    fx.knowledge.add_case(kase);

    if (ambiguous) {
        kb::CaseEntry rival = kase;
        rival.case_id = "case_rival_" + tag;
        rival.root_cause_label = "rival_cause_" + tag;
        rival.repair_action = "other fix";
        rival.template_refs = {effect.template_id};
        fx.knowledge.add_case(rival);
        fx.client.set_default_response("ROOT_CAUSE: lease_expiry_" + tag +
                                       "\nACTION: renew lease " + tag);
    }
}

void check_bypass_economics() {
    const int n = 5;
    bool deterministic_ok = true;
    for (int i = 0; i < n; ++i) {
        BypassFixture fx;
        fill_bypass_fixture(fx, i, /*ambiguous=*/false);
        auto report_doc = action::diagnose(fx.graph, fx.knowledge, &fx.client, {});
        deterministic_ok = deterministic_ok &&
                           report_doc.decision_path == action::DecisionPath::local &&
                           fx.client.call_count() == 0;
    }
    report("bypass economics (deterministic suite)", deterministic_ok,
           "local decisions with zero model calls on 5/5 cases");

    bool ambiguous_ok = true;
    for (int i = 0; i < n; ++i) {
        BypassFixture fx;
        fill_bypass_fixture(fx, i, /*ambiguous=*/true);
        auto report_doc = action::diagnose(fx.graph, fx.knowledge, &fx.client, {});
        ambiguous_ok = ambiguous_ok &&
                       report_doc.decision_path == action::DecisionPath::synthesized &&
                       fx.client.call_count() == 1;
    }
    report("bypass economics (ambiguous suite)", ambiguous_ok,
           "synthesized decisions with exactly one model call on 5/5 cases");
}

// --- criterion: router faithfulness at level 1.0 --------------------------------------

void check_router_l3_once(const eval::Suite& suite) {
    kb::KnowledgeBase knowledge;
    knowledge.load_from(suite.kb_dir);
    knowledge.bind("");

    auto tables = eval::NoiseTables::for_profile(eval::NoiseProfile::storage);
    bool ok = true;
    std::size_t l3_total = 0;
    for (const auto& bench : suite.cases) {
        std::vector<perception::RawLog> logs;
        for (std::size_t i = 0; i < bench.lines.size(); ++i) {
            eval::NoiseConfig noise{1.0, 42, eval::NoiseProfile::storage};
            logs.push_back({eval::inject_noise(bench.lines[i], noise, tables), bench.case_id, i});
        }
        perception::TemplateCache cache(10000);
        model::MockClient client;
        perception::ParseOptions options;
        auto output = perception::parse_stream(logs, cache, &knowledge, &client, options);

        // group by normalized text: at most one L3 per text, and only L1 after it
        std::map<std::string, std::pair<bool, bool>> seen;  // text -> (l3_seen, violated)
        for (std::size_t i = 0; i < logs.size(); ++i) {
            auto processed = perception::preprocess(logs[i], options.rules);
            auto& state = seen[processed.normalized_text];
            auto tier = output.stats.per_log[i].tier;
            if (tier == perception::Tier::l3) {
                if (state.first) state.second = true;  // second L3 for the same text
                state.first = true;
                ++l3_total;
            } else if (state.first && tier != perception::Tier::l1) {
                state.second = true;  // post-L3 resolution must be L1
            }
        }
        for (const auto& [text_key, state] : seen) {
            (void)text_key;
            if (state.second) ok = false;
        }
    }
    report("router faithfulness (noise 1.0 L3-once)", ok && l3_total > 0,
           fmt("%g unresolved lines routed to L3 exactly once, L1 thereafter",
               static_cast<double>(l3_total)));
}

// --- eval-based criteria ----------------------------------------------------------

struct CsvRows {
    std::map<std::string, double> values;  // "method|noise|metric" -> value

    double at(const std::string& method, double noise, const std::string& metric) const {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.1f", noise);
        auto it = values.find(method + "|" + buf + "|" + metric);
        return it == values.end() ? std::nan("") : it->second;
    }
};

CsvRows parse_csv(const std::string& path) {
    CsvRows rows;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("dataset,", 0) == 0) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 6) continue;
        rows.values[fields[1] + "|" + fields[2] + "|" + fields[3]] = std::stod(fields[4]);
    }
    return rows;
}

std::string read_file(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void check_eval_criteria(const fs::path& work) {
    // Full desk-scale suite: every noise level, >= 1000 lines, >= 10 incidents.
    eval::SynthConfig sc;
    sc.seed = 42;
    sc.kb_dir = (work / "kb_full").string();
    auto suite = eval::make_synthetic_suite(sc);
    eval::save_suite(suite, (work / "suite_full.json").string());

    const std::string out = (work / "full").string();
    int rc = cli::run({"eval", "--suite", (work / "suite_full.json").string(), "--out", out});
    auto rows = parse_csv(out + ".csv");

    const double pa0 = rows.at("router", 0.0, "pa");
    const double l3_0 = rows.at("router", 0.0, "route_l3");
    const double pa1 = rows.at("router", 1.0, "pa");
    report("router faithfulness (noise 0.0)",
           rc == cli::kExitOk && pa0 == 1.0 && l3_0 == 0.0 && pa1 > 0.0,
           fmt("PA %.3f with %g L3 routes at level 0; PA %.3f at level 1", pa0, l3_0, pa1));

    const double rank_prior = rows.at("prior", 0.0, "avg_rank");
    const double rank_free = rows.at("noprior", 0.0, "avg_rank");
    report("avg-rank reproduction in kind",
           rank_prior <= 1.5 && rank_free > rank_prior,
           fmt("prior-constrained AvgRank %.3f vs all-background %.3f", rank_prior, rank_free));

    bool conjunction = true;
    double worst_gap = 0.0;
    for (double level : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
        const double rca = rows.at("agent", level, "rca");
        const double e2e = rows.at("agent", level, "e2e");
        if (std::isnan(rca) || std::isnan(e2e) || e2e > rca) conjunction = false;
        worst_gap = std::max(worst_gap, e2e - rca);
    }
    report("metric conjunction", conjunction, "E2E <= RCA at every noise level");

    // resource envelope from the runtime sidecar
    double peak = -1.0;
    {
        auto doc = nlohmann::json::parse(read_file(out + ".runtime.jsonl"), nullptr, false);
        if (!doc.is_discarded()) peak = doc.value("peak_rss_mb", -1.0);
    }
    report("resource envelope",
           suite.total_lines() >= 1000 && suite.cases.size() >= 10 && peak > 0.0 &&
               peak < 2048.0,
           fmt("%g lines / %g incidents, observed peak RSS %.1f MB (budget 2048)",
               static_cast<double>(suite.total_lines()),
               static_cast<double>(suite.cases.size()), peak));

    check_router_l3_once(suite);
}

void check_eval_determinism(const fs::path& work) {
    // smaller suite, full level grid, three runs: single-shot, killed, resumed
    eval::SynthConfig sc;
    sc.seed = 11;
    sc.case_count = 4;
    sc.windows_per_case = 5;
    sc.kb_dir = (work / "kb_det").string();
    auto suite = eval::make_synthetic_suite(sc);
    eval::save_suite(suite, (work / "suite_det.json").string());
    const std::string manifest = (work / "suite_det.json").string();

    const std::string out_a = (work / "det_a").string();
    const std::string out_b = (work / "det_b").string();
    int rc1 = cli::run({"eval", "--suite", manifest, "--out", out_a});
    int rc2 = cli::run({"eval", "--suite", manifest, "--out", out_b});
    bool identical = read_file(out_a + ".csv") == read_file(out_b + ".csv") &&
                     !read_file(out_a + ".csv").empty();

    // kill mid-run, then resume
    const std::string out_c = (work / "det_c").string();
    int rc3 = cli::run({"eval", "--suite", manifest, "--out", out_c, "--abort-after-cells",
                        "7"});
    bool partial_has_no_csv = !fs::exists(out_c + ".csv");
    int rc4 = cli::run({"eval", "--suite", manifest, "--out", out_c, "--resume"});
    bool resumed_identical = read_file(out_c + ".csv") == read_file(out_a + ".csv");

    report("determinism end-to-end",
           rc1 == cli::kExitOk && rc2 == cli::kExitOk && rc3 == cli::kExitOk &&
               rc4 == cli::kExitOk && identical && partial_has_no_csv && resumed_identical,
           std::string("repeat run byte-identical: ") + (identical ? "yes" : "no") +
               "; kill/resume byte-identical: " + (resumed_identical ? "yes" : "no"));
}

}  // namespace

int main() {
    fs::path work =
        fs::temp_directory_path() / ("selfheal_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(work);

    check_gradient_fidelity();
    check_acyclicity_exactness();
    check_structure_recovery();
    check_miss_penalty();
    check_bypass_economics();
    check_eval_criteria(work);
    check_eval_determinism(work);

    fs::remove_all(work);
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all acceptance criteria passed\n");
    return 0;
}
