#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "selfheal/action.hpp"
#include "selfheal/kb.hpp"
#include "selfheal/model_client.hpp"
#include "selfheal/perception.hpp"
#include "selfheal/reasoning.hpp"

namespace selfheal::eval {

// --- noise injection ----------------------------------------------------------

enum class NoiseProfile { control_plane, storage, heterogeneous };

const char* profile_name(NoiseProfile p);
NoiseProfile profile_from_name(const std::string& name);

inline constexpr double kNoiseLevels[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
bool is_valid_noise_level(double level);

struct NoiseConfig {
    double level = 0.0;
    std::uint64_t seed = 42;
    NoiseProfile profile = NoiseProfile::storage;
};

/// Token tables for one profile. Eligibility is table membership: synonym
/// rewrites apply to every profile; anchor and status mutations apply to the
/// storage and heterogeneous profiles.
struct NoiseTables {
    std::map<std::string, std::string> synonyms;
    std::map<std::string, std::string> anchors;  // prefix -> replacement prefix
    std::map<std::string, std::string> status_terms;

    static NoiseTables for_profile(NoiseProfile profile);
    /// Load versioned tables from a JSON asset; empty path = embedded defaults.
    static NoiseTables load(NoiseProfile profile, const std::string& tables_path);
};

/// Seeded semantic perturbation: each eligible token is independently
/// rewritten with probability = level. A pure function of
/// (line, level, seed, profile); level 0.0 returns the input unchanged.
std::string inject_noise(const std::string& line, const NoiseConfig& cfg,
                         const NoiseTables& tables);

// --- metrics -------------------------------------------------------------------

double parsing_accuracy(const std::vector<std::string>& predicted,
                        const std::vector<std::string>& truth);

struct RankResult {
    double avg_rank = 0.0;
    std::size_t misses = 0;  // reported separately; the miss penalty can
                             // flatter degenerate graphs
};

/// Mean 1-based rank of each case's true relation among edges sorted by
/// descending |weight| (ties by (src, dst) index); a missing relation
/// scores |edges|+1.
RankResult avg_rank(const std::vector<reasoning::CausalGraph>& graphs,
                    const std::vector<std::pair<std::string, std::string>>& truth_relations);

/// (RCA accuracy, E2E success); labels compared case-insensitively after
/// trimming. E2E requires the repair action to match as well.
std::pair<double, double> rca_and_e2e(
    const std::vector<action::RcaReport>& reports,
    const std::vector<std::pair<std::string, std::string>>& truth_cause_action);

// --- baseline parsers -----------------------------------------------------------

/// Fixed-depth prefix-tree exact parser over canonical templates; the
/// symbolic-baseline stand-in. Matches require equal token counts and
/// literal equality everywhere the template is not `<*>`.
class PrefixTreeParser {
public:
    explicit PrefixTreeParser(int depth = 4) : depth_(depth) {}

    void add_template(const std::string& canonical_text);
    std::optional<std::string> parse(const std::string& normalized_text) const;
    std::size_t size() const { return templates_.size(); }

private:
    struct Node {
        std::map<std::string, std::unique_ptr<Node>> children;
        std::vector<std::size_t> template_indices;
    };

    int depth_;
    Node root_;
    std::vector<std::vector<std::string>> templates_;  // tokenized
    std::vector<std::string> texts_;
};

// --- benchmark suite -------------------------------------------------------------

struct BenchmarkCase {
    std::string case_id;
    std::vector<std::string> lines;
    std::vector<std::string> truth_templates;  // canonical, one per line
    std::pair<std::string, std::string> truth_relation;  // template texts
    std::string truth_cause;
    std::string truth_action;
};

struct Suite {
    std::string name;
    std::string kb_dir;
    std::vector<BenchmarkCase> cases;

    std::size_t total_lines() const;
};

/// Load a fixture manifest (JSON): {name, kb_dir, cases:[{case_id, lines |
/// log_file, truth_templates, truth_relation, truth_cause, truth_action}]}.
/// Relative paths resolve against the manifest directory.
Suite load_suite(const std::string& manifest_path);
void save_suite(const Suite& suite, const std::string& manifest_path);

/// Deterministic synthetic suite: renders incident logs from a fixed
/// template catalog, writes the fixture KB (templates, priors, cases) under
/// suite.kb_dir, and returns the ground-truth annotations.
struct SynthConfig {
    std::uint64_t seed = 1;
    int case_count = 12;
    int windows_per_case = 8;
    std::string kb_dir;
    bool include_confounder = true;  // strong background correlation the
                                     // prior-free ablation latches onto
};
Suite make_synthetic_suite(const SynthConfig& cfg);

// --- memory ---------------------------------------------------------------------

double current_rss_mb();
double peak_rss_mb();

/// Samples OS process statistics on a 100 ms cadence and tracks the peak.
class MemorySampler {
public:
    MemorySampler();
    ~MemorySampler();
    double peak_mb() const { return peak_mb_.load(); }

private:
    std::atomic<bool> stop_{false};
    std::atomic<double> peak_mb_{0.0};
    std::thread thread_;
};

// --- benchmark runner -------------------------------------------------------------

struct MetricRow {
    std::string dataset;
    std::string method;
    double noise = 0.0;
    std::string metric;
    double value = 0.0;
    std::uint64_t seed = 0;
};

struct EvalConfig {
    std::vector<double> levels = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    std::uint64_t seed = 42;
    NoiseProfile profile = NoiseProfile::storage;
    std::string tables_path;  // empty = embedded defaults

    double delta_sim = 0.85;
    std::size_t cache_capacity = 10000;
    std::int64_t window_len_ms = 60000;
    reasoning::PenaltySet penalties_w;
    reasoning::PenaltySet penalties_a;
    reasoning::SolveConfig solve;
    action::ActionConfig action;
    bool no_priors = false;  // ablation: all-background masks everywhere

    double memory_budget_mb = 2048.0;
    std::string checkpoint_path;  // resumable progress journal (JSONL)
    int abort_after_cells = -1;   // stop after N newly computed cells (kill test)
    std::string config_hash;      // embedded in the checkpoint for resume safety
};

struct MetricsReport {
    std::vector<MetricRow> rows;
    double peak_rss_mb = 0.0;
    double avg_parse_latency_ms = 0.0;
    bool completed = false;
    bool budget_exceeded = false;
    std::size_t cells_total = 0;
    std::size_t cells_done = 0;
};

/// Runs the layered benchmark over every (method, noise) cell with
/// checkpointed progress: perception (router / prefix_tree / direct_model),
/// reasoning (prior / noprior), action (agent). Resumes from the checkpoint
/// journal and aborts with partial results preserved when the memory budget
/// is exceeded.
MetricsReport run_benchmark(const Suite& suite, const EvalConfig& cfg);

std::string rows_to_csv(const std::vector<MetricRow>& rows, const std::string& config_hash);
std::string rows_to_jsonl(const std::vector<MetricRow>& rows, const std::string& config_hash);

}  // namespace selfheal::eval
