#include "selfheal/action.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>

#include <json.hpp>

#include "selfheal/text.hpp"

namespace selfheal::action {

using json = nlohmann::ordered_json;

const char* decision_path_name(DecisionPath p) {
    return p == DecisionPath::local ? "local" : "synthesized";
}

const std::string& default_synthesis_prompt() {
    // Keep byte-identical with assets/synthesis_prompt_v1.txt; golden
    // transcripts depend on it.
    static const std::string prompt =
        "# synthesis prompt v1\n"
        "You are a root-cause analysis agent for distributed service incidents.\n"
        "Recognize only causal facts explicitly established in the graph evidence "
        "below; do not introduce causal links of your own.\n"
        "Select the supported root cause and repair action from the candidate roots "
        "and retrieved cases.\n"
        "Reply with exactly two lines:\n"
        "ROOT_CAUSE: <template id or case label from the evidence>\n"
        "ACTION: <repair action>\n";
    return prompt;
}

namespace {

std::string format_weight(double w) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", w);
    return buf;
}

struct AdjEdge {
    int dst = 0;
    double weight = 0.0;
    int lag = 0;
};

}  // namespace

CausalEvidence navigate(const reasoning::CausalGraph& graph, int top_k, int max_path_depth,
                        int max_paths) {
    CausalEvidence evidence;
    const std::size_t d = graph.nodes.size();
    if (d == 0) return evidence;  // empty graph: synthesis with retrieval-only context

    std::vector<double> score(d, 0.0);
    std::vector<std::vector<AdjEdge>> adjacency(d);
    auto absorb = [&](const std::vector<reasoning::GraphEdge>& edges) {
        for (const auto& e : edges) {
            score[static_cast<std::size_t>(e.src)] += std::abs(e.weight);
            score[static_cast<std::size_t>(e.dst)] -= std::abs(e.weight);
            adjacency[static_cast<std::size_t>(e.src)].push_back({e.dst, e.weight, e.lag});
        }
    };
    absorb(graph.intra);
    absorb(graph.inter);
    for (auto& list : adjacency) {
        std::sort(list.begin(), list.end(), [](const AdjEdge& a, const AdjEdge& b) {
            if (a.dst != b.dst) return a.dst < b.dst;
            return a.lag < b.lag;
        });
    }

    // Candidate roots: net outgoing weight, ties broken by template id.
    std::vector<int> order(d);
    for (std::size_t i = 0; i < d; ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (score[static_cast<std::size_t>(a)] != score[static_cast<std::size_t>(b)]) {
            return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
        }
        return graph.nodes[static_cast<std::size_t>(a)] < graph.nodes[static_cast<std::size_t>(b)];
    });
    const std::size_t keep = std::min<std::size_t>(d, static_cast<std::size_t>(std::max(top_k, 0)));
    std::set<int> candidate_set;
    for (std::size_t i = 0; i < keep; ++i) {
        evidence.candidate_roots.emplace_back(graph.nodes[static_cast<std::size_t>(order[i])],
                                              score[static_cast<std::size_t>(order[i])]);
        candidate_set.insert(order[i]);
    }

    // Maximal outgoing paths per candidate: simple paths, depth-capped,
    // recorded when they cannot be extended.
    std::vector<KeyPath> paths;
    std::vector<bool> visited(d, false);
    std::vector<int> stack;

    auto record = [&](double product) {
        if (stack.size() < 2) return;
        KeyPath p;
        p.weight_product = product;
        for (int node : stack) p.node_ids.push_back(graph.nodes[static_cast<std::size_t>(node)]);
        paths.push_back(std::move(p));
    };

    std::function<void(int, double, int)> dfs = [&](int node, double product, int depth) {
        bool extended = false;
        if (depth < max_path_depth) {
            for (const auto& edge : adjacency[static_cast<std::size_t>(node)]) {
                if (visited[static_cast<std::size_t>(edge.dst)]) continue;
                extended = true;
                visited[static_cast<std::size_t>(edge.dst)] = true;
                stack.push_back(edge.dst);
                dfs(edge.dst, product * std::abs(edge.weight), depth + 1);
                stack.pop_back();
                visited[static_cast<std::size_t>(edge.dst)] = false;
            }
        }
        if (!extended) record(product);
    };

    for (std::size_t i = 0; i < keep; ++i) {
        int root = order[i];
        visited.assign(d, false);
        visited[static_cast<std::size_t>(root)] = true;
        stack.assign(1, root);
        dfs(root, 1.0, 0);
    }

    // A path that appears as a contiguous segment of another path carries no
    // extra evidence; drop it before ranking.
    auto contains = [](const std::vector<std::string>& big,
                       const std::vector<std::string>& small) {
        if (small.size() > big.size()) return false;
        for (std::size_t off = 0; off + small.size() <= big.size(); ++off) {
            bool all = true;
            for (std::size_t i = 0; i < small.size() && all; ++i) {
                all = big[off + i] == small[i];
            }
            if (all) return true;
        }
        return false;
    };
    std::vector<KeyPath> kept;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        bool subsumed = false;
        for (std::size_t j = 0; j < paths.size() && !subsumed; ++j) {
            if (i == j) continue;
            if (paths[j].node_ids.size() > paths[i].node_ids.size() &&
                contains(paths[j].node_ids, paths[i].node_ids)) {
                subsumed = true;
            }
        }
        if (!subsumed) kept.push_back(paths[i]);
    }

    std::sort(kept.begin(), kept.end(), [](const KeyPath& a, const KeyPath& b) {
        if (a.weight_product != b.weight_product) return a.weight_product > b.weight_product;
        return a.node_ids < b.node_ids;
    });
    if (kept.size() > static_cast<std::size_t>(std::max(max_paths, 0))) {
        kept.resize(static_cast<std::size_t>(std::max(max_paths, 0)));
    }
    evidence.key_paths = std::move(kept);

    auto upstream = [&](const std::vector<reasoning::GraphEdge>& edges) {
        for (const auto& e : edges) {
            if (!candidate_set.count(e.dst)) continue;
            evidence.upstream_relations.push_back(
                {graph.nodes[static_cast<std::size_t>(e.src)],
                 graph.nodes[static_cast<std::size_t>(e.dst)], e.weight, e.lag});
        }
    };
    upstream(graph.intra);
    upstream(graph.inter);
    std::sort(evidence.upstream_relations.begin(), evidence.upstream_relations.end(),
              [](const UpstreamRelation& a, const UpstreamRelation& b) {
                  if (a.src != b.src) return a.src < b.src;
                  if (a.dst != b.dst) return a.dst < b.dst;
                  return a.lag < b.lag;
              });
    return evidence;
}

namespace {

std::string resolve_label(const std::string& template_id, const kb::KnowledgeBase* knowledge) {
    if (knowledge) {
        if (auto entry = knowledge->find_template(template_id)) return entry->text;
    }
    return template_id;
}

}  // namespace

std::string evidence_to_digest(const CausalEvidence& evidence,
                               const kb::KnowledgeBase* knowledge) {
    std::string out;
    out += "candidate_roots:\n";
    for (const auto& [id, score] : evidence.candidate_roots) {
        out += "  " + id + " (" + resolve_label(id, knowledge) + ") score=" +
               format_weight(score) + "\n";
    }
    out += "key_paths:\n";
    for (const auto& path : evidence.key_paths) {
        out += "  ";
        for (std::size_t i = 0; i < path.node_ids.size(); ++i) {
            if (i) out += " -> ";
            out += resolve_label(path.node_ids[i], knowledge);
        }
        out += " (w=" + format_weight(path.weight_product) + ")\n";
    }
    out += "upstream_relations:\n";
    for (const auto& rel : evidence.upstream_relations) {
        out += "  " + resolve_label(rel.src, knowledge) + " -> " +
               resolve_label(rel.dst, knowledge) + " (w=" + format_weight(rel.weight) +
               ", lag=" + std::to_string(rel.lag) + ")\n";
    }
    return out;
}

std::vector<CaseMatch> retrieve_cases(const CausalEvidence& evidence,
                                      const kb::KnowledgeBase& knowledge, std::size_t top_n) {
    std::string query;
    for (const auto& [id, score] : evidence.candidate_roots) {
        (void)score;
        if (!query.empty()) query += " ";
        query += resolve_label(id, &knowledge);
    }
    for (const auto& path : evidence.key_paths) {
        for (const auto& id : path.node_ids) {
            query += " " + resolve_label(id, &knowledge);
        }
    }
    query = text::normalize(query);
    if (query.empty()) return {};

    auto ranked = knowledge.rank_cases(embedding::embed(query, knowledge.embedding_dim()), top_n);
    std::vector<CaseMatch> out;
    out.reserve(ranked.size());
    for (const auto& [entry, sim] : ranked) {
        out.push_back({entry.case_id, sim, entry.root_cause_label, entry.repair_action});
    }
    return out;
}

std::optional<RcaReport> deterministic_match(const CausalEvidence& evidence,
                                             const std::vector<CaseMatch>& cases,
                                             const kb::KnowledgeBase& knowledge,
                                             const ActionConfig& cfg) {
    if (cases.empty() || evidence.candidate_roots.empty()) return std::nullopt;

    const CaseMatch& top = cases.front();
    MatchCertificate cert;
    cert.min_similarity = cfg.min_similarity;
    cert.ambiguity_margin = cfg.ambiguity_margin;
    cert.top_similarity = top.similarity;
    cert.second_similarity = cases.size() > 1 ? cases[1].similarity : -1.0;

    const std::string& top_root = evidence.candidate_roots.front().first;
    auto mapped = knowledge.templates_for_cause(top.root_cause_label);
    cert.label_maps_to_top_root = mapped.count(top_root) > 0;

    const bool similar_enough = cert.top_similarity >= cfg.min_similarity;
    const bool unambiguous = cases.size() == 1 ||
                             cert.second_similarity <= cfg.ambiguity_margin * cert.top_similarity;
    if (!(similar_enough && cert.label_maps_to_top_root && unambiguous)) return std::nullopt;

    RcaReport report;
    report.root_cause = top.root_cause_label;
    report.repair_action = top.repair_action;
    report.root_template_id = top_root;
    report.decision_path = DecisionPath::local;
    report.evidence_digest = evidence_to_digest(evidence, &knowledge);
    for (const auto& c : cases) report.cases_used.push_back(c.case_id);
    report.certificate = cert;
    return report;
}

namespace {

struct ParsedReply {
    bool ok = false;
    std::string root;
    std::string action;
};

ParsedReply parse_reply(const std::string& response) {
    ParsedReply out;
    std::size_t start = 0;
    while (start <= response.size()) {
        std::size_t end = response.find('\n', start);
        if (end == std::string::npos) end = response.size();
        std::string line = text::trim(response.substr(start, end - start));
        std::string lowered = text::to_lower(line);
        if (lowered.rfind("root_cause:", 0) == 0) {
            out.root = text::trim(line.substr(std::string("root_cause:").size()));
        } else if (lowered.rfind("action:", 0) == 0) {
            out.action = text::trim(line.substr(std::string("action:").size()));
        }
        if (end == response.size()) break;
        start = end + 1;
    }
    out.ok = !out.root.empty() && !out.action.empty();
    return out;
}

/// Resolve a model-named root cause against the evidence: a candidate
/// template id, a candidate's template text, or a case label whose KB
/// mapping reaches a candidate.
struct Grounding {
    bool ok = false;
    std::string root_cause;
    std::string root_template_id;
};

Grounding ground_root(const std::string& named, const CausalEvidence& evidence,
                      const kb::KnowledgeBase& knowledge) {
    Grounding g;
    const std::string needle = text::to_lower(text::trim(named));
    for (const auto& [id, score] : evidence.candidate_roots) {
        (void)score;
        if (text::to_lower(id) == needle) {
            g.ok = true;
            g.root_cause = named;
            g.root_template_id = id;
            return g;
        }
        if (auto entry = knowledge.find_template(id)) {
            if (text::to_lower(entry->text) == needle) {
                g.ok = true;
                g.root_cause = named;
                g.root_template_id = id;
                return g;
            }
        }
    }
    auto mapped = knowledge.templates_for_cause(named);
    if (!mapped.empty()) {
        for (const auto& [id, score] : evidence.candidate_roots) {
            (void)score;
            if (mapped.count(id)) {
                g.ok = true;
                g.root_cause = named;
                g.root_template_id = id;
                return g;
            }
        }
    }
    return g;
}

RcaReport failover_report(const CausalEvidence& evidence, const std::vector<CaseMatch>& cases,
                          const kb::KnowledgeBase& knowledge, std::string digest,
                          std::optional<Transcript> transcript, std::string diagnostic) {
    RcaReport report;
    report.decision_path = DecisionPath::synthesized;
    report.degraded = true;
    report.evidence_digest = std::move(digest);
    report.transcript = std::move(transcript);
    if (!diagnostic.empty()) report.diagnostics.push_back(std::move(diagnostic));
    if (!evidence.candidate_roots.empty()) {
        report.root_template_id = evidence.candidate_roots.front().first;
        report.root_cause = resolve_label(report.root_template_id, &knowledge);
    }
    if (!cases.empty()) {
        report.repair_action = cases.front().repair_action;
        if (report.root_cause.empty()) report.root_cause = cases.front().root_cause_label;
    }
    for (const auto& c : cases) report.cases_used.push_back(c.case_id);
    return report;
}

}  // namespace

model::ModelRequest build_synthesis_request(const CausalEvidence& evidence,
                                            const std::vector<CaseMatch>& cases,
                                            const kb::KnowledgeBase& knowledge,
                                            const ActionConfig& cfg) {
    std::string cases_block;
    for (const auto& c : cases) {
        cases_block += "- case " + c.case_id + " (similarity " + format_weight(c.similarity) +
                       "): root_cause=" + c.root_cause_label + "; action=" + c.repair_action +
                       "\n";
    }
    if (cases_block.empty()) cases_block = "- none\n";

    model::ModelRequest req;
    req.purpose = model::Purpose::synthesis;
    req.temperature = 0.0;  // strict determinism for diagnosis
    req.max_tokens = 512;
    req.messages = {
        {"system", cfg.prompt_template.empty() ? default_synthesis_prompt() : cfg.prompt_template},
        {"user", "Causal evidence:\n" + evidence_to_digest(evidence, &knowledge) +
                     "\nRetrieved cases:\n" + cases_block},
    };
    return req;
}

RcaReport synthesize(const CausalEvidence& evidence, const std::vector<CaseMatch>& cases,
                     const kb::KnowledgeBase& knowledge, model::ModelClient& client,
                     const ActionConfig& cfg) {
    const std::string digest = evidence_to_digest(evidence, &knowledge);
    model::ModelRequest req = build_synthesis_request(evidence, cases, knowledge, cfg);

    Transcript transcript;
    transcript.prompt = req.messages[0].second + "\n---\n" + req.messages[1].second;

    for (int attempt = 0; attempt < 2; ++attempt) {
        transcript.attempts = attempt + 1;
        auto result = client.complete(req);
        if (!result.ok) {
            return failover_report(evidence, cases, knowledge, digest, transcript,
                                   "client error: " + result.error);
        }
        transcript.response = result.response.text;
        ParsedReply parsed = parse_reply(result.response.text);
        if (parsed.ok) {
            Grounding grounded = ground_root(parsed.root, evidence, knowledge);
            if (grounded.ok) {
                RcaReport report;
                report.root_cause = grounded.root_cause;
                report.repair_action = parsed.action;
                report.root_template_id = grounded.root_template_id;
                report.decision_path = DecisionPath::synthesized;
                report.evidence_digest = digest;
                for (const auto& c : cases) report.cases_used.push_back(c.case_id);
                report.transcript = transcript;
                return report;
            }
        }
        if (attempt == 0) {
            std::string allowed;
            for (const auto& [id, score] : evidence.candidate_roots) {
                (void)score;
                allowed += " " + id;
            }
            req.messages.push_back(
                {"user",
                 "The previous root cause was not established in the causal evidence. "
                 "Choose one of:" + allowed});
        }
    }
    return failover_report(evidence, cases, knowledge, digest, transcript,
                           "response rejected: root cause absent from evidence");
}

RcaReport diagnose(const reasoning::CausalGraph& graph, kb::KnowledgeBase& knowledge,
                   model::ModelClient* client, const ActionConfig& cfg) {
    CausalEvidence evidence = navigate(graph, cfg.top_k, cfg.max_path_depth, cfg.max_paths);
    std::vector<CaseMatch> cases = retrieve_cases(evidence, knowledge, cfg.top_n_cases);

    RcaReport report;
    if (auto local = deterministic_match(evidence, cases, knowledge, cfg)) {
        report = std::move(*local);  // cloud model bypassed
    } else if (client) {
        report = synthesize(evidence, cases, knowledge, *client, cfg);
    } else {
        Transcript none;
        none.attempts = 0;
        report = failover_report(evidence, cases, knowledge,
                                 evidence_to_digest(evidence, &knowledge), none,
                                 "client unavailable: no backend configured");
    }

    // Queue the diagnosis for validated write-back; unvalidated reports
    // never reach the persisted store.
    if (!report.root_cause.empty()) {
        kb::CaseEntry entry;
        entry.case_id =
            "case_" + text::hex64(text::fnv1a64(report.root_cause + "|" + report.repair_action +
                                                "|" + report.root_template_id));
        entry.indexed_text =
            text::normalize(report.root_cause + " " + report.repair_action + " " +
                            resolve_label(report.root_template_id, &knowledge));
        entry.root_cause_label = report.root_cause;
        entry.repair_action = report.repair_action;
        entry.template_refs = {report.root_template_id};
        entry.validated = false;
        knowledge.enqueue_case(std::move(entry));
    }
    return report;
}

std::string report_to_json(const RcaReport& report, const std::string& config_hash) {
    json doc;
    doc["root_cause"] = report.root_cause;
    doc["action"] = report.repair_action;
    doc["decision_path"] = decision_path_name(report.decision_path);
    doc["root_template_id"] = report.root_template_id;
    doc["evidence_digest"] = report.evidence_digest;
    doc["cases_used"] = report.cases_used;
    if (report.transcript) {
        json t;
        t["prompt"] = report.transcript->prompt;
        t["response"] = report.transcript->response;
        t["attempts"] = report.transcript->attempts;
        doc["transcript"] = std::move(t);
    }
    doc["degraded"] = report.degraded;
    if (report.certificate) {
        json c;
        c["top_similarity"] = report.certificate->top_similarity;
        c["second_similarity"] = report.certificate->second_similarity;
        c["label_maps_to_top_root"] = report.certificate->label_maps_to_top_root;
        c["min_similarity"] = report.certificate->min_similarity;
        c["ambiguity_margin"] = report.certificate->ambiguity_margin;
        doc["certificate"] = std::move(c);
    }
    doc["validated"] = report.validated;
    doc["diagnostics"] = report.diagnostics;
    doc["config_hash"] = config_hash;
    return doc.dump(2);
}

}  // namespace selfheal::action
