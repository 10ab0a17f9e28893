#pragma once

#include <optional>
#include <string>
#include <vector>

#include "selfheal/kb.hpp"
#include "selfheal/model_client.hpp"
#include "selfheal/reasoning.hpp"

namespace selfheal::action {

struct KeyPath {
    std::vector<std::string> node_ids;
    double weight_product = 0.0;
};

struct UpstreamRelation {
    std::string src;
    std::string dst;
    double weight = 0.0;
    int lag = 0;
};

/// Compact causal evidence extracted from the graph: ranked candidate
/// roots, the highest-weight maximal directed paths, and the 1-hop upstream
/// relations of each candidate.
struct CausalEvidence {
    std::vector<std::pair<std::string, double>> candidate_roots;  // (template_id, score)
    std::vector<KeyPath> key_paths;
    std::vector<UpstreamRelation> upstream_relations;
};

struct CaseMatch {
    std::string case_id;
    double similarity = 0.0;
    std::string root_cause_label;
    std::string repair_action;
};

struct MatchCertificate {
    double top_similarity = 0.0;
    double second_similarity = -1.0;  // -1 when only one case exists
    bool label_maps_to_top_root = false;
    double min_similarity = 0.0;   // thresholds in force
    double ambiguity_margin = 0.0;
};

enum class DecisionPath { local, synthesized };

const char* decision_path_name(DecisionPath p);

struct Transcript {
    std::string prompt;
    std::string response;
    int attempts = 0;
};

struct RcaReport {
    std::string root_cause;        // r*
    std::string repair_action;     // a*
    std::string root_template_id;  // template the diagnosis is grounded in
    DecisionPath decision_path = DecisionPath::local;
    std::string evidence_digest;
    std::vector<std::string> cases_used;
    std::optional<Transcript> transcript;    // present iff synthesized
    std::optional<MatchCertificate> certificate;  // present iff local
    bool degraded = false;
    bool validated = false;  // set externally before KB write-back
    std::vector<std::string> diagnostics;
};

struct ActionConfig {
    int top_k = 3;
    int max_path_depth = 4;
    int max_paths = 10;
    std::size_t top_n_cases = 5;
    double min_similarity = 0.90;
    double ambiguity_margin = 0.8;
    std::string prompt_template;  // empty = embedded default
};

/// The versioned synthesis system prompt (see assets/synthesis_prompt_v1.txt).
const std::string& default_synthesis_prompt();

CausalEvidence navigate(const reasoning::CausalGraph& graph, int top_k, int max_path_depth = 4,
                        int max_paths = 10);

std::vector<CaseMatch> retrieve_cases(const CausalEvidence& evidence,
                                      const kb::KnowledgeBase& knowledge, std::size_t top_n);

/// Local decision when evidence and cases converge: top case similar enough,
/// its label maps to the top candidate root, and the runner-up is far
/// behind. Returns the local report with its certificate, or nothing.
std::optional<RcaReport> deterministic_match(const CausalEvidence& evidence,
                                             const std::vector<CaseMatch>& cases,
                                             const kb::KnowledgeBase& knowledge,
                                             const ActionConfig& cfg);

/// The exact first-attempt request synthesize() issues; exposed so harness
/// fixtures and recorded transcripts can key on it.
model::ModelRequest build_synthesis_request(const CausalEvidence& evidence,
                                            const std::vector<CaseMatch>& cases,
                                            const kb::KnowledgeBase& knowledge,
                                            const ActionConfig& cfg);

/// Cloud-model synthesis under the causal constraint. Out-of-evidence roots
/// are rejected and retried once; persistent violations or client failures
/// fail over to the top candidate plus top case action, flagged degraded.
RcaReport synthesize(const CausalEvidence& evidence, const std::vector<CaseMatch>& cases,
                     const kb::KnowledgeBase& knowledge, model::ModelClient& client,
                     const ActionConfig& cfg);

/// Full diagnostic workflow: navigate, retrieve, deterministic match (which
/// bypasses the model client entirely), otherwise synthesize; the resulting
/// report is queued for validated KB write-back.
RcaReport diagnose(const reasoning::CausalGraph& graph, kb::KnowledgeBase& knowledge,
                   model::ModelClient* client, const ActionConfig& cfg);

std::string evidence_to_digest(const CausalEvidence& evidence, const kb::KnowledgeBase* knowledge);

std::string report_to_json(const RcaReport& report, const std::string& config_hash);

}  // namespace selfheal::action
