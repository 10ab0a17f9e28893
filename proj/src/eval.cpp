#include "selfheal/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "selfheal/text.hpp"

#if defined(__unix__) || defined(__APPLE__)
#include <sys/resource.h>
#endif

namespace selfheal::eval {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// --- noise ---------------------------------------------------------------------

const char* profile_name(NoiseProfile p) {
    switch (p) {
        case NoiseProfile::control_plane: return "control_plane";
        case NoiseProfile::storage: return "storage";
        default: return "heterogeneous";
    }
}

NoiseProfile profile_from_name(const std::string& name) {
    if (name == "control_plane") return NoiseProfile::control_plane;
    if (name == "storage") return NoiseProfile::storage;
    if (name == "heterogeneous") return NoiseProfile::heterogeneous;
    throw std::invalid_argument("unknown noise profile: " + name);
}

bool is_valid_noise_level(double level) {
    for (double l : kNoiseLevels) {
        if (level == l) return true;
    }
    return false;
}

namespace {

json default_tables_json() {
    // Keep in sync with assets/noise_profiles.json (version 1).
    return json::parse(R"({
      "version": 1,
      "control_plane": {
        "synonyms": {
          "get": "fetch", "post": "submit", "delete": "remove", "create": "spawn",
          "start": "launch", "started": "launched", "stop": "halt", "stopped": "halted",
          "send": "dispatch", "sent": "dispatched", "receive": "obtain",
          "received": "obtained", "request": "query", "response": "reply",
          "error": "fault", "failed": "unsuccessful", "connect": "attach",
          "connected": "attached", "close": "shut", "closed": "shut",
          "open": "establish", "opened": "established", "update": "refresh",
          "updated": "refreshed", "terminate": "kill", "terminated": "killed"
        },
        "anchors": {},
        "status_terms": {}
      },
      "storage": {
        "synonyms": {
          "received": "obtained", "receiving": "acquiring", "served": "delivered",
          "serving": "delivering", "deleting": "removing", "deleted": "removed",
          "replication": "mirroring", "replicated": "mirrored", "stalled": "stuck",
          "heartbeat": "pulse", "missed": "lost", "disk": "storage",
          "write": "commit", "latency": "delay", "overflow": "saturation",
          "expired": "lapsed", "recovery": "restore", "started": "initiated",
          "block": "extent", "volume": "partition", "flush": "drain",
          "error": "fault", "exception": "anomaly", "terminating": "stopping",
          "allocate": "reserve", "allocated": "reserved", "verification": "audit"
        },
        "anchors": {"blk_": "chunk-", "0x": "hex-"},
        "status_terms": {
          "ok": "okay", "success": "succeeded", "failure": "failed",
          "failed": "unsuccessful", "warn": "caution", "warning": "caution",
          "fatal": "critical", "info": "notice"
        }
      },
      "heterogeneous": {
        "synonyms": {
          "get": "fetch", "post": "submit", "received": "obtained",
          "start": "launch", "started": "launched", "stop": "halt",
          "container": "pod", "task": "job", "attempt": "try",
          "killing": "stopping", "launched": "spawned", "progress": "advance",
          "heartbeat": "pulse", "missed": "lost", "disk": "storage",
          "write": "commit", "latency": "delay", "overflow": "saturation",
          "expired": "lapsed", "recovery": "restore", "block": "extent",
          "volume": "partition", "flush": "drain", "replication": "mirroring",
          "stalled": "stuck", "error": "fault", "failed": "unsuccessful",
          "exception": "anomaly", "reduce": "fold", "map": "transform"
        },
        "anchors": {"blk_": "chunk-", "0x": "hex-", "attempt_": "try_", "job_": "work_"},
        "status_terms": {
          "ok": "okay", "success": "succeeded", "failure": "failed",
          "killed": "terminated", "done": "finished", "fatal": "critical"
        }
      }
    })");
}

NoiseTables tables_from_json(const json& doc, NoiseProfile profile) {
    const json& section = doc.at(profile_name(profile));
    NoiseTables tables;
    for (const auto& [k, v] : section.at("synonyms").items()) {
        tables.synonyms[k] = v.get<std::string>();
    }
    for (const auto& [k, v] : section.at("anchors").items()) {
        tables.anchors[k] = v.get<std::string>();
    }
    for (const auto& [k, v] : section.at("status_terms").items()) {
        tables.status_terms[k] = v.get<std::string>();
    }
    return tables;
}

}  // namespace

NoiseTables NoiseTables::for_profile(NoiseProfile profile) {
    return tables_from_json(default_tables_json(), profile);
}

NoiseTables NoiseTables::load(NoiseProfile profile, const std::string& tables_path) {
    if (tables_path.empty()) return for_profile(profile);
    std::ifstream in(tables_path);
    if (!in.is_open()) throw std::runtime_error("noise tables not found: " + tables_path);
    json doc = json::parse(in);
    return tables_from_json(doc, profile);
}

std::string inject_noise(const std::string& line, const NoiseConfig& cfg,
                         const NoiseTables& tables) {
    if (cfg.level <= 0.0) return line;

    const bool mutate_anchors = cfg.profile != NoiseProfile::control_plane;
    std::uint64_t state = cfg.seed ^ text::fnv1a64(line) ^
                          text::fnv1a64(profile_name(cfg.profile));

    std::vector<std::string> tokens = text::split_ws(line);
    for (auto& token : tokens) {
        const double draw = text::next_unit(state);
        std::string lowered = text::to_lower(token);

        std::string replacement;
        auto syn = tables.synonyms.find(lowered);
        if (syn != tables.synonyms.end()) {
            replacement = syn->second;
        } else if (mutate_anchors) {
            for (const auto& [prefix, sub] : tables.anchors) {
                if (token.rfind(prefix, 0) == 0) {
                    replacement = sub + token.substr(prefix.size());
                    break;
                }
            }
            if (replacement.empty()) {
                auto st = tables.status_terms.find(lowered);
                if (st != tables.status_terms.end()) replacement = st->second;
            }
        }
        if (!replacement.empty() && draw < cfg.level) token = replacement;
    }

    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += " ";
        out += tokens[i];
    }
    return out;
}

// --- metrics -------------------------------------------------------------------

double parsing_accuracy(const std::vector<std::string>& predicted,
                        const std::vector<std::string>& truth) {
    if (predicted.size() != truth.size()) {
        throw std::invalid_argument("parsing_accuracy: length mismatch");
    }
    if (predicted.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (text::normalize(predicted[i]) == text::normalize(truth[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

RankResult avg_rank(const std::vector<reasoning::CausalGraph>& graphs,
                    const std::vector<std::pair<std::string, std::string>>& truth_relations) {
    if (graphs.size() != truth_relations.size()) {
        throw std::invalid_argument("avg_rank: length mismatch");
    }
    RankResult out;
    if (graphs.empty()) return out;

    double total = 0.0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        const auto& graph = graphs[i];
        std::vector<reasoning::GraphEdge> edges = graph.intra;
        edges.insert(edges.end(), graph.inter.begin(), graph.inter.end());
        std::sort(edges.begin(), edges.end(),
                  [](const reasoning::GraphEdge& a, const reasoning::GraphEdge& b) {
                      const double wa = std::abs(a.weight);
                      const double wb = std::abs(b.weight);
                      if (wa != wb) return wa > wb;
                      if (a.src != b.src) return a.src < b.src;
                      if (a.dst != b.dst) return a.dst < b.dst;
                      return a.lag < b.lag;
                  });
        std::size_t rank = edges.size() + 1;  // miss penalty
        for (std::size_t k = 0; k < edges.size(); ++k) {
            const auto& e = edges[k];
            if (graph.nodes[static_cast<std::size_t>(e.src)] == truth_relations[i].first &&
                graph.nodes[static_cast<std::size_t>(e.dst)] == truth_relations[i].second) {
                rank = k + 1;
                break;
            }
        }
        if (rank == edges.size() + 1) ++out.misses;
        total += static_cast<double>(rank);
    }
    out.avg_rank = total / static_cast<double>(graphs.size());
    return out;
}

std::pair<double, double> rca_and_e2e(
    const std::vector<action::RcaReport>& reports,
    const std::vector<std::pair<std::string, std::string>>& truth_cause_action) {
    if (reports.size() != truth_cause_action.size()) {
        throw std::invalid_argument("rca_and_e2e: length mismatch");
    }
    if (reports.empty()) return {0.0, 0.0};

    auto canon = [](const std::string& s) { return text::to_lower(text::trim(s)); };
    std::size_t rca_hits = 0;
    std::size_t e2e_hits = 0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const bool cause_ok = canon(reports[i].root_cause) == canon(truth_cause_action[i].first);
        const bool action_ok =
            canon(reports[i].repair_action) == canon(truth_cause_action[i].second);
        if (cause_ok) ++rca_hits;
        if (cause_ok && action_ok) ++e2e_hits;
    }
    const double n = static_cast<double>(reports.size());
    return {static_cast<double>(rca_hits) / n, static_cast<double>(e2e_hits) / n};
}

// --- prefix tree baseline -------------------------------------------------------

void PrefixTreeParser::add_template(const std::string& canonical_text) {
    std::vector<std::string> tokens = text::split_ws(canonical_text);
    const std::size_t index = templates_.size();
    templates_.push_back(tokens);
    texts_.push_back(canonical_text);

    Node* node = &root_;
    // first level: token count, then up to depth_ leading tokens
    std::string length_key = std::to_string(tokens.size());
    auto& child = node->children[length_key];
    if (!child) child = std::make_unique<Node>();
    node = child.get();
    const std::size_t walk = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(depth_));
    for (std::size_t i = 0; i < walk; ++i) {
        auto& next = node->children[tokens[i]];
        if (!next) next = std::make_unique<Node>();
        node = next.get();
    }
    node->template_indices.push_back(index);
}

std::optional<std::string> PrefixTreeParser::parse(const std::string& normalized_text) const {
    std::vector<std::string> tokens = text::split_ws(normalized_text);
    auto root_it = root_.children.find(std::to_string(tokens.size()));
    if (root_it == root_.children.end()) return std::nullopt;

    const std::size_t walk = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(depth_));
    std::optional<std::size_t> best;

    std::function<void(const Node*, std::size_t)> descend = [&](const Node* node,
                                                                std::size_t level) {
        if (best && node->template_indices.empty() && level >= walk) return;
        if (level >= walk) {
            for (std::size_t idx : node->template_indices) {
                const auto& tmpl = templates_[idx];
                bool ok = tmpl.size() == tokens.size();
                for (std::size_t i = 0; ok && i < tokens.size(); ++i) {
                    if (tmpl[i] != "<*>" && tmpl[i] != tokens[i]) ok = false;
                }
                if (ok && (!best || idx < *best)) best = idx;
            }
            return;
        }
        auto exact = node->children.find(tokens[level]);
        if (exact != node->children.end()) descend(exact->second.get(), level + 1);
        auto wild = node->children.find("<*>");
        if (wild != node->children.end()) descend(wild->second.get(), level + 1);
    };
    descend(root_it->second.get(), 0);

    if (!best) return std::nullopt;
    return texts_[*best];
}

// --- suite ----------------------------------------------------------------------

std::size_t Suite::total_lines() const {
    std::size_t n = 0;
    for (const auto& c : cases) n += c.lines.size();
    return n;
}

Suite load_suite(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in.is_open()) throw std::runtime_error("suite manifest not found: " + manifest_path);
    json doc = json::parse(in);

    const fs::path base = fs::path(manifest_path).parent_path();
    auto resolve = [&base](const std::string& p) {
        fs::path path(p);
        return path.is_absolute() ? path.string() : (base / path).string();
    };

    Suite suite;
    suite.name = doc.value("name", "suite");
    suite.kb_dir = resolve(doc.at("kb_dir").get<std::string>());
    for (const auto& rec : doc.at("cases")) {
        BenchmarkCase c;
        c.case_id = rec.at("case_id").get<std::string>();
        if (rec.contains("log_file")) {
            std::ifstream logs(resolve(rec["log_file"].get<std::string>()));
            if (!logs.is_open()) {
                throw std::runtime_error("log file not found for case " + c.case_id);
            }
            std::string line;
            while (std::getline(logs, line)) {
                if (!text::trim(line).empty()) c.lines.push_back(line);
            }
        } else {
            c.lines = rec.at("lines").get<std::vector<std::string>>();
        }
        c.truth_templates = rec.at("truth_templates").get<std::vector<std::string>>();
        if (c.truth_templates.size() != c.lines.size()) {
            throw std::runtime_error("case " + c.case_id + ": truth/lines length mismatch");
        }
        auto rel = rec.at("truth_relation");
        c.truth_relation = {rel.at(0).get<std::string>(), rel.at(1).get<std::string>()};
        c.truth_cause = rec.at("truth_cause").get<std::string>();
        c.truth_action = rec.at("truth_action").get<std::string>();
        suite.cases.push_back(std::move(c));
    }
    return suite;
}

void save_suite(const Suite& suite, const std::string& manifest_path) {
    json doc;
    doc["name"] = suite.name;
    doc["kb_dir"] = suite.kb_dir;
    json cases = json::array();
    for (const auto& c : suite.cases) {
        json rec;
        rec["case_id"] = c.case_id;
        rec["lines"] = c.lines;
        rec["truth_templates"] = c.truth_templates;
        rec["truth_relation"] = json::array({c.truth_relation.first, c.truth_relation.second});
        rec["truth_cause"] = c.truth_cause;
        rec["truth_action"] = c.truth_action;
        cases.push_back(std::move(rec));
    }
    doc["cases"] = std::move(cases);
    std::ofstream out(manifest_path, std::ios::trunc | std::ios::binary);
    out << doc.dump(2) << "\n";
}

// --- synthetic suite --------------------------------------------------------------

namespace {

struct SynthTemplate {
    const char* canonical;
    const char* value_kind;  // "ip", "blk", "num", "two_num", "none"
};

struct SynthRelation {
    int root;
    int effect;
    const char* cause;
    const char* action;
};

constexpr SynthTemplate kCatalog[] = {
    {"datanode <*> heartbeat missed", "ip"},
    {"replication of extent <*> stalled", "blk"},
    {"disk commit delay above <*> ms on volume <*>", "two_num"},
    {"drain queue saturation on volume <*>", "num"},
    {"namenode lease lapsed for client <*>", "ip"},
    {"lease restore initiated for extent <*>", "blk"},
    {"periodic checkpoint reached", "none"},
    {"telemetry snapshot persisted", "none"},
    {"garbage collection pause of <*> ms", "num"},
    {"request queue length <*>", "num"},
};

constexpr SynthRelation kRelations[] = {
    {0, 1, "datanode_offline", "restart datanode service"},
    {2, 3, "disk_degradation", "migrate volume to healthy disk"},
    {4, 5, "lease_expiry", "renew client lease and rebalance writers"},
};

std::string render_value(const char* kind, std::uint64_t& rng, std::string& second) {
    second.clear();
    switch (kind[0]) {
        case 'i': {  // ip
            return "10.0." + std::to_string(text::splitmix64(rng) % 32) + "." +
                   std::to_string(text::splitmix64(rng) % 200 + 1);
        }
        case 'b': {  // blk
            return "blk_" + std::to_string(1000 + text::splitmix64(rng) % 9000);
        }
        case 't': {  // two_num
            second = std::to_string(1 + text::splitmix64(rng) % 9);
            return std::to_string(100 + text::splitmix64(rng) % 400);
        }
        case 'n': {
            return kind[1] == 'u' && kind[2] == 'm'
                       ? std::to_string(1 + text::splitmix64(rng) % 500)
                       : std::string();
        }
        default: return {};
    }
}

std::string render_line(int template_idx, std::int64_t ts_ms, std::uint64_t& rng) {
    const SynthTemplate& t = kCatalog[template_idx];
    std::string body = t.canonical;
    std::string second;
    std::string value = render_value(t.value_kind, rng, second);

    auto replace_first = [&body](const std::string& v) {
        auto pos = body.find("<*>");
        if (pos != std::string::npos) body.replace(pos, 3, v);
    };
    if (!value.empty()) replace_first(value);
    if (!second.empty()) replace_first(second);

    // ISO timestamp prefix; extraction strips it during preprocessing.
    std::int64_t secs = ts_ms / 1000;
    std::int64_t day_secs = secs % 86400;
    char stamp[32];
    std::snprintf(stamp, sizeof(stamp), "2024-03-14 %02d:%02d:%02d",
                  static_cast<int>(day_secs / 3600), static_cast<int>((day_secs / 60) % 60),
                  static_cast<int>(day_secs % 60));
    return std::string(stamp) + " " + body;
}

}  // namespace

Suite make_synthetic_suite(const SynthConfig& cfg) {
    Suite suite;
    suite.name = "synthetic";
    suite.kb_dir = cfg.kb_dir;

    // Fixture KB: all templates validated, priors on the true relations,
    // one troubleshooting case per cause.
    kb::KnowledgeBase knowledge;
    std::vector<std::string> template_ids;
    for (const auto& t : kCatalog) {
        auto tmpl = perception::make_template(t.canonical, perception::Tier::l2, true);
        template_ids.push_back(tmpl.template_id);
        kb::TemplateEntry entry;
        entry.template_id = tmpl.template_id;
        entry.text = tmpl.text;
        entry.validated = true;
        knowledge.add_template(std::move(entry));
    }
    for (const auto& rel : kRelations) {
        kb::PriorEntry prior;
        prior.src_template_id = template_ids[static_cast<std::size_t>(rel.root)];
        prior.dst_template_id = template_ids[static_cast<std::size_t>(rel.effect)];
        prior.family = kb::PriorFamily::intra;
        prior.support_count = 3;
        knowledge.add_prior(std::move(prior));

        kb::CaseEntry kase;
        kase.case_id = std::string("case_") + rel.cause;
        kase.indexed_text = text::normalize(std::string(kCatalog[rel.root].canonical) + " " +
                                            kCatalog[rel.effect].canonical);
        kase.root_cause_label = rel.cause;
        kase.repair_action = rel.action;
        kase.template_refs = {template_ids[static_cast<std::size_t>(rel.root)],
                              template_ids[static_cast<std::size_t>(rel.effect)]};
        kase.validated = true;
        knowledge.add_case(std::move(kase));
    }
    if (!cfg.kb_dir.empty()) {
        kb::KnowledgeBase::init_dir(cfg.kb_dir);
        knowledge.save_to(cfg.kb_dir);
    }

    const std::int64_t base_ms = 9 * 3600 * 1000;  // 09:00:00
    for (int case_idx = 0; case_idx < cfg.case_count; ++case_idx) {
        const SynthRelation& rel = kRelations[case_idx % 3];
        std::uint64_t rng = cfg.seed ^ (0x51E0ull + static_cast<std::uint64_t>(case_idx) * 7919);

        BenchmarkCase bench;
        bench.case_id = "synth_" + std::to_string(case_idx);
        bench.truth_relation = {kCatalog[rel.root].canonical, kCatalog[rel.effect].canonical};
        bench.truth_cause = rel.cause;
        bench.truth_action = rel.action;

        const std::int64_t case_base =
            base_ms + static_cast<std::int64_t>(case_idx) * 3600 * 1000;
        for (int w = 0; w < cfg.windows_per_case; ++w) {
            const std::int64_t window_start = case_base + static_cast<std::int64_t>(w) * 60000;
            const int root_count = 2 + static_cast<int>(text::splitmix64(rng) % 5);
            const int effect_count = root_count;  // tight intra-window coupling
            const int confounder_count = 1 + static_cast<int>(text::splitmix64(rng) % 4);

            struct Emit {
                int tmpl;
                int count;
            };
            std::vector<Emit> emits = {{rel.root, root_count}, {rel.effect, effect_count}};
            // light background traffic plus a correlated-but-imperfect
            // confounder pair for the prior-free ablation to latch onto
            emits.push_back({6, 1});
            if (text::next_unit(rng) < 0.5) emits.push_back({7, 1});
            if (cfg.include_confounder) {
                emits.push_back({8, confounder_count});
                emits.push_back(
                    {9, confounder_count + (text::next_unit(rng) < 0.5 ? 1 : 0)});
            }

            int offset = 0;
            for (const auto& emit : emits) {
                for (int k = 0; k < emit.count; ++k) {
                    const std::int64_t ts = window_start + (offset++ * 900) % 60000;
                    bench.lines.push_back(render_line(emit.tmpl, ts, rng));
                    bench.truth_templates.push_back(kCatalog[emit.tmpl].canonical);
                }
            }
        }
        suite.cases.push_back(std::move(bench));
    }
    return suite;
}

// --- memory ----------------------------------------------------------------------

namespace {

double read_status_kb(const char* field) {
    std::ifstream in("/proc/self/status");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind(field, 0) == 0) {
            std::istringstream ss(line.substr(std::string(field).size()));
            double kb = 0.0;
            ss >> kb;
            return kb;
        }
    }
    return -1.0;
}

}  // namespace

double current_rss_mb() {
    double kb = read_status_kb("VmRSS:");
#if defined(__unix__) || defined(__APPLE__)
    if (kb < 0) {
        struct rusage usage {};
        getrusage(RUSAGE_SELF, &usage);
        kb = static_cast<double>(usage.ru_maxrss);
    }
#endif
    return kb > 0 ? kb / 1024.0 : 0.0;
}

double peak_rss_mb() {
    double kb = read_status_kb("VmHWM:");
#if defined(__unix__) || defined(__APPLE__)
    if (kb < 0) {
        struct rusage usage {};
        getrusage(RUSAGE_SELF, &usage);
        kb = static_cast<double>(usage.ru_maxrss);
    }
#endif
    return kb > 0 ? kb / 1024.0 : 0.0;
}

MemorySampler::MemorySampler() {
    thread_ = std::thread([this] {
        while (!stop_.load()) {
            double peak = peak_rss_mb();
            double prev = peak_mb_.load();
            while (peak > prev && !peak_mb_.compare_exchange_weak(prev, peak)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
    });
}

MemorySampler::~MemorySampler() {
    stop_.store(true);
    if (thread_.joinable()) thread_.join();
}

// --- benchmark runner ---------------------------------------------------------------

namespace {

struct Cell {
    std::string layer;   // perception | reasoning | action
    std::string method;  // router | prefix_tree | direct_model | prior | noprior | agent
    double level = 0.0;

    std::string key() const {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.1f", level);
        return layer + "|" + method + "|" + buf;
    }
};

json row_to_json(const MetricRow& row) {
    json rec;
    rec["dataset"] = row.dataset;
    rec["method"] = row.method;
    rec["noise"] = row.noise;
    rec["metric"] = row.metric;
    rec["value"] = row.value;
    rec["seed"] = row.seed;
    return rec;
}

MetricRow row_from_json(const json& rec) {
    MetricRow row;
    row.dataset = rec.at("dataset").get<std::string>();
    row.method = rec.at("method").get<std::string>();
    row.noise = rec.at("noise").get<double>();
    row.metric = rec.at("metric").get<std::string>();
    row.value = rec.at("value").get<double>();
    row.seed = rec.at("seed").get<std::uint64_t>();
    return row;
}

struct CellContext {
    const Suite& suite;
    const EvalConfig& cfg;
    kb::KnowledgeBase& knowledge;
    const NoiseTables& tables;
    double* latency_accumulator;
    std::size_t* latency_count;
};

std::vector<std::string> noisy_lines(const BenchmarkCase& bench, double level,
                                     const CellContext& ctx) {
    std::vector<std::string> out;
    out.reserve(bench.lines.size());
    NoiseConfig noise{level, ctx.cfg.seed, ctx.cfg.profile};
    for (const auto& line : bench.lines) {
        out.push_back(inject_noise(line, noise, ctx.tables));
    }
    return out;
}

perception::ParseOutput route_case(const BenchmarkCase& bench, double level,
                                   const CellContext& ctx, model::ModelClient& client) {
    std::vector<perception::RawLog> logs;
    auto lines = noisy_lines(bench, level, ctx);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        logs.push_back({lines[i], bench.case_id, i});
    }
    perception::TemplateCache cache(ctx.cfg.cache_capacity);
    perception::ParseOptions options;
    options.delta_sim = ctx.cfg.delta_sim;
    return perception::parse_stream(logs, cache, &ctx.knowledge, &client, options);
}

std::vector<MetricRow> run_perception_cell(const Cell& cell, const CellContext& ctx) {
    std::vector<std::string> predicted;
    std::vector<std::string> truths;
    std::size_t l1 = 0, l2 = 0, l3 = 0;

    model::MockClient client;  // echo fallback

    PrefixTreeParser baseline;
    if (cell.method == "prefix_tree") {
        // Train on the reference template set, mirroring what the router
        // reaches through the KB fixture.
        std::set<std::string> seen;
        for (const auto& c : ctx.suite.cases) {
            for (const auto& t : c.truth_templates) {
                if (seen.insert(text::normalize(t)).second) {
                    baseline.add_template(text::normalize(t));
                }
            }
        }
    }

    for (const auto& bench : ctx.suite.cases) {
        if (cell.method == "router") {
            auto t0 = std::chrono::steady_clock::now();
            auto output = route_case(bench, cell.level, ctx, client);
            double elapsed = std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count();
            *ctx.latency_accumulator += elapsed;
            *ctx.latency_count += bench.lines.size();
            l1 += output.stats.l1_hits;
            l2 += output.stats.l2_hits;
            l3 += output.stats.l3_hits;
            for (const auto& record : output.events) {
                predicted.push_back(record.template_text);
            }
        } else {
            auto lines = noisy_lines(bench, cell.level, ctx);
            for (std::size_t i = 0; i < lines.size(); ++i) {
                perception::RawLog raw{lines[i], bench.case_id, i};
                auto processed = perception::preprocess(raw, perception::MaskRuleSet::defaults());
                if (cell.method == "prefix_tree") {
                    auto hit = baseline.parse(processed.normalized_text);
                    predicted.push_back(hit ? *hit : processed.normalized_text);
                } else {  // direct_model
                    auto tmpl = perception::fallback_generate(
                        processed, client, perception::MaskRuleSet::defaults());
                    predicted.push_back(tmpl.text);
                }
            }
        }
        truths.insert(truths.end(), bench.truth_templates.begin(), bench.truth_templates.end());
    }

    std::vector<MetricRow> rows;
    const auto& name = ctx.suite.name;
    rows.push_back({name, cell.method, cell.level, "pa",
                    parsing_accuracy(predicted, truths), ctx.cfg.seed});
    if (cell.method == "router") {
        rows.push_back({name, cell.method, cell.level, "route_l1",
                        static_cast<double>(l1), ctx.cfg.seed});
        rows.push_back({name, cell.method, cell.level, "route_l2",
                        static_cast<double>(l2), ctx.cfg.seed});
        rows.push_back({name, cell.method, cell.level, "route_l3",
                        static_cast<double>(l3), ctx.cfg.seed});
    }
    return rows;
}

struct CaseGraph {
    reasoning::CausalGraph graph;
    std::pair<std::string, std::string> truth_ids;
};

CaseGraph build_case_graph(const BenchmarkCase& bench, double level, const CellContext& ctx,
                           bool use_priors) {
    model::MockClient client;
    auto output = route_case(bench, level, ctx, client);

    std::vector<perception::StructuredEvent> events;
    events.reserve(output.events.size());
    for (const auto& record : output.events) events.push_back(record.event);

    CaseGraph out;
    out.truth_ids = {
        perception::make_template(text::normalize(bench.truth_relation.first),
                                  perception::Tier::l1, true)
            .template_id,
        perception::make_template(text::normalize(bench.truth_relation.second),
                                  perception::Tier::l1, true)
            .template_id,
    };

    auto matrix = reasoning::aggregate_windows(events, ctx.cfg.window_len_ms);
    if (matrix.windows() < 2) {
        out.graph.nodes = matrix.event_order;
        return out;
    }

    reasoning::PriorMasks masks;
    if (use_priors) {
        auto pairs = ctx.knowledge.priors_for(matrix.event_order);
        masks = reasoning::build_prior_masks(pairs.intra, pairs.inter, matrix.types(),
                                             ctx.cfg.penalties_w, ctx.cfg.penalties_a);
    } else {
        reasoning::PenaltySet flat{ctx.cfg.penalties_w.bg, ctx.cfg.penalties_w.bg,
                                   ctx.cfg.penalties_w.bg};
        masks = reasoning::build_prior_masks({}, {}, matrix.types(), flat, flat);
    }
    auto solved = reasoning::solve(matrix, masks, ctx.cfg.solve);
    out.graph = reasoning::prune_and_resolve(solved.w, solved.a, masks, matrix.event_order,
                                             ctx.cfg.solve);
    return out;
}

std::vector<MetricRow> run_reasoning_cell(const Cell& cell, const CellContext& ctx) {
    const bool use_priors = cell.method == "prior" && !ctx.cfg.no_priors;
    std::vector<reasoning::CausalGraph> graphs;
    std::vector<std::pair<std::string, std::string>> truths;
    double edge_total = 0.0;

    for (const auto& bench : ctx.suite.cases) {
        CaseGraph cg = build_case_graph(bench, cell.level, ctx, use_priors);
        edge_total += static_cast<double>(cg.graph.intra.size() + cg.graph.inter.size());
        graphs.push_back(std::move(cg.graph));
        truths.push_back(cg.truth_ids);
    }

    RankResult rank = avg_rank(graphs, truths);
    std::vector<MetricRow> rows;
    const auto& name = ctx.suite.name;
    rows.push_back({name, cell.method, cell.level, "avg_rank", rank.avg_rank, ctx.cfg.seed});
    rows.push_back({name, cell.method, cell.level, "rank_misses",
                    static_cast<double>(rank.misses), ctx.cfg.seed});
    rows.push_back({name, cell.method, cell.level, "sparsity",
                    graphs.empty() ? 0.0 : edge_total / static_cast<double>(graphs.size()),
                    ctx.cfg.seed});
    return rows;
}

std::vector<MetricRow> run_action_cell(const Cell& cell, const CellContext& ctx) {
    std::vector<action::RcaReport> reports;
    std::vector<std::pair<std::string, std::string>> truths;
    double local_count = 0.0;

    for (const auto& bench : ctx.suite.cases) {
        CaseGraph cg = build_case_graph(bench, cell.level, ctx, !ctx.cfg.no_priors);

        // Fixture-play the cloud model: it answers with the top retrieved
        // case, keyed on the exact synthesis request. Grounding and the
        // failover path still run for real.
        auto evidence = action::navigate(cg.graph, ctx.cfg.action.top_k,
                                         ctx.cfg.action.max_path_depth, ctx.cfg.action.max_paths);
        auto cases = action::retrieve_cases(evidence, ctx.knowledge, ctx.cfg.action.top_n_cases);
        model::MockClient client;
        if (!cases.empty()) {
            auto req =
                action::build_synthesis_request(evidence, cases, ctx.knowledge, ctx.cfg.action);
            client.add_fixture(req, "ROOT_CAUSE: " + cases.front().root_cause_label +
                                        "\nACTION: " + cases.front().repair_action);
        }

        action::RcaReport report =
            action::diagnose(cg.graph, ctx.knowledge, &client, ctx.cfg.action);
        if (report.decision_path == action::DecisionPath::local) local_count += 1.0;
        reports.push_back(std::move(report));
        truths.emplace_back(bench.truth_cause, bench.truth_action);
    }

    auto [rca, e2e] = rca_and_e2e(reports, truths);
    std::vector<MetricRow> rows;
    const auto& name = ctx.suite.name;
    rows.push_back({name, cell.method, cell.level, "rca", rca, ctx.cfg.seed});
    rows.push_back({name, cell.method, cell.level, "e2e", e2e, ctx.cfg.seed});
    rows.push_back({name, cell.method, cell.level, "local_rate",
                    reports.empty() ? 0.0
                                    : local_count / static_cast<double>(reports.size()),
                    ctx.cfg.seed});
    return rows;
}

}  // namespace

MetricsReport run_benchmark(const Suite& suite, const EvalConfig& cfg) {
    MetricsReport report;

    std::vector<Cell> cells;
    for (double level : cfg.levels) {
        if (!is_valid_noise_level(level)) {
            throw std::invalid_argument("noise level outside the fixed set");
        }
        for (const char* method : {"router", "prefix_tree", "direct_model"}) {
            cells.push_back({"perception", method, level});
        }
        for (const char* method : {"prior", "noprior"}) {
            cells.push_back({"reasoning", method, level});
        }
        cells.push_back({"action", "agent", level});
    }
    report.cells_total = cells.size();

    // Resume state: completed cells keyed by cell id.
    std::map<std::string, std::vector<MetricRow>> done;
    bool checkpoint_valid = false;
    if (!cfg.checkpoint_path.empty() && fs::exists(cfg.checkpoint_path)) {
        std::ifstream in(cfg.checkpoint_path);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (text::trim(line).empty()) continue;
            json rec = json::parse(line, nullptr, false);
            if (rec.is_discarded()) continue;
            if (first) {
                first = false;
                checkpoint_valid = rec.value("config_hash", "") == cfg.config_hash &&
                                   rec.value("suite", "") == suite.name;
                if (!checkpoint_valid) break;
                continue;
            }
            std::vector<MetricRow> rows;
            for (const auto& r : rec.at("rows")) rows.push_back(row_from_json(r));
            done[rec.at("cell").get<std::string>()] = std::move(rows);
        }
    }

    auto append_checkpoint = [&](const Cell& cell, const std::vector<MetricRow>& rows,
                                 bool fresh_file) {
        if (cfg.checkpoint_path.empty()) return;
        std::ofstream out(cfg.checkpoint_path,
                          fresh_file ? std::ios::trunc : std::ios::app);
        if (fresh_file) {
            json meta;
            meta["config_hash"] = cfg.config_hash;
            meta["suite"] = suite.name;
            meta["cells_total"] = cells.size();
            out << meta.dump() << "\n";
        }
        json rec;
        rec["cell"] = cell.key();
        json jrows = json::array();
        for (const auto& r : rows) jrows.push_back(row_to_json(r));
        rec["rows"] = std::move(jrows);
        out << rec.dump() << "\n";
        out.flush();
    };
    bool fresh_file = !checkpoint_valid;

    kb::KnowledgeBase knowledge;
    knowledge.load_from(suite.kb_dir);
    knowledge.bind("");  // eval never persists journal writes into fixtures

    NoiseTables tables = NoiseTables::load(cfg.profile, cfg.tables_path);

    double latency_total = 0.0;
    std::size_t latency_lines = 0;
    CellContext ctx{suite, cfg, knowledge, tables, &latency_total, &latency_lines};

    MemorySampler sampler;
    int executed = 0;
    for (const auto& cell : cells) {
        if (done.count(cell.key())) continue;
        if (cfg.abort_after_cells >= 0 && executed >= cfg.abort_after_cells) {
            report.completed = false;
            report.cells_done = done.size();
            report.peak_rss_mb = std::max(sampler.peak_mb(), peak_rss_mb());
            return report;
        }
        if (peak_rss_mb() > cfg.memory_budget_mb) {
            report.budget_exceeded = true;
            break;
        }

        std::vector<MetricRow> rows;
        if (cell.layer == "perception") {
            rows = run_perception_cell(cell, ctx);
        } else if (cell.layer == "reasoning") {
            rows = run_reasoning_cell(cell, ctx);
        } else {
            rows = run_action_cell(cell, ctx);
        }
        append_checkpoint(cell, rows, fresh_file);
        fresh_file = false;
        done[cell.key()] = std::move(rows);
        ++executed;
    }

    report.cells_done = done.size();
    report.completed = done.size() == cells.size();
    for (const auto& cell : cells) {
        auto it = done.find(cell.key());
        if (it == done.end()) continue;
        report.rows.insert(report.rows.end(), it->second.begin(), it->second.end());
    }
    report.avg_parse_latency_ms =
        latency_lines ? latency_total / static_cast<double>(latency_lines) : 0.0;
    report.peak_rss_mb = std::max(sampler.peak_mb(), peak_rss_mb());
    return report;
}

std::string rows_to_csv(const std::vector<MetricRow>& rows, const std::string& config_hash) {
    std::string out = "# config_hash=" + config_hash + "\n";
    out += "dataset,method,noise,metric,value,seed\n";
    char buf[64];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%.1f", row.noise);
        out += row.dataset + "," + row.method + "," + buf + "," + row.metric + ",";
        std::snprintf(buf, sizeof(buf), "%.10g", row.value);
        out += std::string(buf) + "," + std::to_string(row.seed) + "\n";
    }
    return out;
}

std::string rows_to_jsonl(const std::vector<MetricRow>& rows, const std::string& config_hash) {
    std::string out;
    json meta;
    meta["config_hash"] = config_hash;
    out += meta.dump() + "\n";
    for (const auto& row : rows) {
        out += row_to_json(row).dump() + "\n";
    }
    return out;
}

}  // namespace selfheal::eval
