#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfheal/embedding.hpp"

namespace selfheal::kb {

inline constexpr int kSchemaVersion = 1;

enum class PriorFamily { intra, inter };

const char* family_name(PriorFamily f);

struct TemplateEntry {
    std::string template_id;
    std::string text;  // canonical normalized template
    embedding::EmbeddingVector embedding;
    bool validated = false;
    std::int64_t added_at_ms = 0;
};

struct PriorEntry {
    std::string src_template_id;
    std::string dst_template_id;
    PriorFamily family = PriorFamily::intra;
    std::int64_t support_count = 1;
};

struct CaseEntry {
    std::string case_id;
    std::string indexed_text;
    embedding::EmbeddingVector embedding;
    std::string root_cause_label;
    std::string repair_action;
    std::vector<std::string> template_refs;
    bool validated = false;
};

/// One record of the pending-validation journal.
struct PendingEntry {
    std::string kind;  // "template" | "case" | "prior"
    TemplateEntry tmpl;
    CaseEntry kase;
    PriorEntry prior;

    std::string dedup_id() const;
};

struct LoadReport {
    std::size_t templates = 0;
    std::size_t priors = 0;
    std::size_t cases = 0;
    std::size_t pending = 0;
    std::vector<std::string> diagnostics;
};

struct KbStats {
    std::size_t templates = 0;
    std::size_t validated_templates = 0;
    std::size_t priors = 0;
    std::size_t cases = 0;
    std::size_t validated_cases = 0;
    std::size_t pending = 0;
};

class KbError : public std::runtime_error {
public:
    explicit KbError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Persistent historical knowledge base: reference templates for L2
/// retrieval, causal priors for the mask builder, troubleshooting cases for
/// the action layer, and a pending journal for validated write-back.
///
/// Retrieval never observes entries with validated=false; those sit in the
/// pending queue until apply_validated_all() (the `kb approve` step) moves
/// them into the main store. Readers take a shared lock; the journal has its
/// own mutex so enqueue never blocks lookups.
class KnowledgeBase {
public:
    explicit KnowledgeBase(std::size_t dim = embedding::kDefaultDim) : dim_(dim) {}

    KnowledgeBase(const KnowledgeBase&) = delete;
    KnowledgeBase& operator=(const KnowledgeBase&) = delete;

    /// Create an empty canonical KB layout at `dir`.
    static void init_dir(const std::string& dir);

    /// Load the three JSONL stores plus the pending journal. Throws KbError
    /// on a missing directory or schema-version mismatch; malformed lines
    /// are skipped with one diagnostic each.
    LoadReport load_from(const std::string& dir);

    /// Write the canonical form (sorted, fixed key order, LF endings).
    void save_to(const std::string& dir) const;

    /// Remember `dir` so enqueue appends to its journal durably.
    void bind(const std::string& dir) { bound_dir_ = dir; }
    const std::string& bound_dir() const { return bound_dir_; }

    // Direct insertion, used by fixtures and the harness (bypasses the
    // validation queue; set validated explicitly).
    void add_template(TemplateEntry entry);
    void add_prior(PriorEntry entry);
    void add_case(CaseEntry entry);

    // --- retrieval (validated entries only) ---
    std::optional<TemplateEntry> find_template(const std::string& template_id) const;
    std::optional<std::pair<TemplateEntry, double>> best_template_match(
        const embedding::EmbeddingVector& query) const;
    std::vector<std::pair<CaseEntry, double>> rank_cases(const embedding::EmbeddingVector& query,
                                                         std::size_t top_n) const;
    /// template ids referenced by validated cases carrying this root-cause
    /// label (the explicit template -> cause mapping).
    std::set<std::string> templates_for_cause(const std::string& label) const;
    std::size_t validated_template_count() const;

    struct PriorPairs {
        std::vector<std::pair<int, int>> intra;
        std::vector<std::pair<int, int>> inter;
        std::size_t skipped = 0;
    };
    /// Prior pairs restricted to template ids present in event_order,
    /// returned as index pairs in that order. Unknown ids are skipped.
    PriorPairs priors_for(const std::vector<std::string>& event_order) const;

    // --- validation queue ---
    void enqueue_template(TemplateEntry entry);
    void enqueue_case(CaseEntry entry);
    void enqueue_prior(PriorEntry entry);
    std::size_t pending_count() const;
    /// Move every pending entry into the main store with validated=true.
    /// Idempotent per id: entries whose id is already stored are dropped.
    /// When bound to a directory, persists the store and truncates the
    /// journal. Returns the number of newly applied entries.
    std::size_t apply_validated_all();

    KbStats stats() const;
    /// Embedding-consistency check: one diagnostic per stored entry whose
    /// vector does not equal embed(text).
    std::vector<std::string> verify() const;

    std::size_t embedding_dim() const { return dim_; }

private:
    void apply_entry_locked(const PendingEntry& entry, std::size_t& applied);
    void append_journal(const PendingEntry& entry);

    std::size_t dim_;
    std::string bound_dir_;

    mutable std::shared_mutex store_mutex_;
    std::map<std::string, TemplateEntry> templates_;           // by template_id
    std::map<std::string, PriorEntry> priors_;                 // by family|src|dst
    std::map<std::string, CaseEntry> cases_;                   // by case_id

    mutable std::mutex journal_mutex_;
    std::vector<PendingEntry> pending_;
};

}  // namespace selfheal::kb
