#pragma once

#include <cstdint>
#include <list>
#include <memory>
#include <optional>
#include <regex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "selfheal/kb.hpp"
#include "selfheal/model_client.hpp"

namespace selfheal::perception {

enum class Tier { l1, l2, l3 };

const char* tier_name(Tier t);

struct RawLog {
    std::string line;
    std::string source_id;
    std::uint64_t seq = 0;
};

struct Placeholder {
    std::string kind;      // masking rule that fired
    std::string original;  // raw substring it replaced
};

struct ProcessedLog {
    std::string normalized_text;
    std::int64_t timestamp_ms = 0;
    bool timestamp_from_arrival = false;  // no timestamp rule matched
    bool timestamp_warning = false;       // matched but unparsable
    std::vector<Placeholder> placeholders;
};

struct EventTemplate {
    std::string template_id;  // hex64 of fnv1a64(text)
    std::string text;         // canonical normalized template
    Tier origin = Tier::l1;
    bool validated = false;
    bool degraded = false;  // L3 self-template fallback
};

EventTemplate make_template(const std::string& canonical_text, Tier origin, bool validated);

struct StructuredEvent {
    std::string template_id;
    std::int64_t timestamp_ms = 0;
    std::string source_id;
};

/// Element of the perception output stream: the structured event plus the
/// fields the line-delimited output record carries.
struct EventRecord {
    StructuredEvent event;
    std::string template_text;
    Tier tier = Tier::l1;
};

/// One masking rule: a named regex whose matches become `<*>`.
struct MaskRule {
    std::string kind;
    std::regex pattern;
};

struct TimestampFormat {
    std::string name;
    std::regex pattern;
};

/// Fixed-order masking rules plus the timestamp format list. The rule order
/// is part of the parsing contract: timestamps, ipv4, ipv6, block ids, hex
/// ids, file paths, numbers.
class MaskRuleSet {
public:
    static MaskRuleSet defaults();
    static MaskRuleSet with_timestamp_formats(const std::vector<std::string>& format_names);

    const std::vector<MaskRule>& rules() const { return rules_; }
    const std::vector<TimestampFormat>& timestamp_formats() const { return timestamp_formats_; }
    bool empty() const { return rules_.empty() && timestamp_formats_.empty(); }

    static std::vector<std::string> known_timestamp_formats();

private:
    std::vector<MaskRule> rules_;
    std::vector<TimestampFormat> timestamp_formats_;
};

/// Normalize a raw line: extract the first timestamp (removed from the
/// text, retained in the result), mask the remaining dynamic fields with
/// `<*>` in fixed rule order, then apply canonical normalization. When no
/// timestamp matches, `arrival_fallback_ms` is used and flagged.
ProcessedLog preprocess(const RawLog& raw, const MaskRuleSet& rules,
                        std::int64_t arrival_fallback_ms = 0);

/// Bounded exact-match template cache with LRU eviction. Lookup refreshes
/// recency; insertion evicts the least recently used entry at capacity.
/// Single-writer/multi-reader: lookups are atomic with respect to inserts.
class TemplateCache {
public:
    explicit TemplateCache(std::size_t capacity = 10000) : capacity_(capacity) {}

    std::optional<EventTemplate> get(const std::string& normalized_text);
    void put(const std::string& normalized_text, EventTemplate tmpl);
    std::size_t size() const;
    std::size_t capacity() const { return capacity_; }

private:
    std::size_t capacity_;
    mutable std::shared_mutex mutex_;
    std::list<std::pair<std::string, EventTemplate>> lru_;  // front = most recent
    std::unordered_map<std::string, std::list<std::pair<std::string, EventTemplate>>::iterator>
        index_;
};

std::optional<EventTemplate> exact_match(const ProcessedLog& processed, TemplateCache& cache);

std::optional<EventTemplate> semantic_match(const ProcessedLog& processed,
                                            const kb::KnowledgeBase& knowledge, double delta_sim);

/// L3 fallback: ask the model to abstract a template, then re-mask and
/// normalize the reply so the stored template is canonical even if the model
/// echoes literals. An unavailable client or unusable reply degrades to a
/// self-template (the normalized text itself).
EventTemplate fallback_generate(const ProcessedLog& processed, model::ModelClient& client,
                                const MaskRuleSet& rules);

struct RouteRecord {
    std::uint64_t seq = 0;
    Tier tier = Tier::l1;
    double latency_ms = 0.0;
    bool timestamp_warning = false;
    bool degraded = false;
};

struct RouteStats {
    std::size_t l1_hits = 0;
    std::size_t l2_hits = 0;
    std::size_t l3_hits = 0;
    std::size_t l2_cache_inserts = 0;  // local caching of L2 hits (routing aid)
    std::size_t timestamp_warnings = 0;
    std::size_t degraded_templates = 0;
    std::vector<RouteRecord> per_log;
};

struct ParseOptions {
    double delta_sim = 0.85;
    bool cache_l2_hits = true;  // off reproduces the strict L3-only insertion
    MaskRuleSet rules = MaskRuleSet::defaults();
};

struct ParseOutput {
    std::vector<EventRecord> events;
    RouteStats stats;
};

/// Three-tier router: L1 exact cache, L2 semantic retrieval against the
/// knowledge base, L3 model fallback. L3 templates enter the cache
/// immediately and are queued on the KB validation journal; within a stream
/// routing is sequential.
ParseOutput parse_stream(const std::vector<RawLog>& logs, TemplateCache& cache,
                         kb::KnowledgeBase* knowledge, model::ModelClient* client,
                         const ParseOptions& options);

/// Line-delimited output record {template_id, template_text, timestamp_ms,
/// source_id, tier}; stable key order.
std::string event_record_line(const EventRecord& record);

}  // namespace selfheal::perception
