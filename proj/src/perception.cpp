#include "selfheal/perception.hpp"

#include <chrono>
#include <stdexcept>

#include <json.hpp>

#include "selfheal/text.hpp"

namespace selfheal::perception {

using json = nlohmann::ordered_json;

const char* tier_name(Tier t) {
    switch (t) {
        case Tier::l1: return "L1";
        case Tier::l2: return "L2";
        default: return "L3";
    }
}

EventTemplate make_template(const std::string& canonical_text, Tier origin, bool validated) {
    EventTemplate t;
    t.text = canonical_text;
    t.template_id = text::hex64(text::fnv1a64(canonical_text));
    t.origin = origin;
    t.validated = validated;
    return t;
}

// --- mask rules --------------------------------------------------------------

namespace {

// Hinnant's days-from-civil; keeps timestamp conversion free of timezone
// and libc dependencies.
std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy =
        static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

std::optional<std::int64_t> to_epoch_ms(int year, int month, int day, int hour, int minute,
                                        int second, int millis) {
    if (month < 1 || month > 12 || day < 1 || day > 31) return std::nullopt;
    if (hour > 23 || minute > 59 || second > 60) return std::nullopt;
    return days_from_civil(year, month, day) * 86400000ll + hour * 3600000ll +
           minute * 60000ll + second * 1000ll + millis;
}

int to_int(const std::string& s) { return std::stoi(s); }

std::optional<std::int64_t> parse_timestamp(const std::string& format_name,
                                            const std::smatch& m) {
    if (format_name == "hdfs_compact") {
        const std::string date = m[1].str();
        const std::string time = m[2].str();
        return to_epoch_ms(2000 + to_int(date.substr(0, 2)), to_int(date.substr(2, 2)),
                           to_int(date.substr(4, 2)), to_int(time.substr(0, 2)),
                           to_int(time.substr(2, 2)), to_int(time.substr(4, 2)), 0);
    }
    if (format_name == "iso8601") {
        int millis = 0;
        if (m[7].matched) {
            std::string frac = m[7].str();
            frac.resize(3, '0');
            millis = to_int(frac);
        }
        return to_epoch_ms(to_int(m[1].str()), to_int(m[2].str()), to_int(m[3].str()),
                           to_int(m[4].str()), to_int(m[5].str()), to_int(m[6].str()), millis);
    }
    return std::nullopt;
}

TimestampFormat make_timestamp_format(const std::string& name) {
    if (name == "hdfs_compact") {
        return {name, std::regex(R"(\b(\d{6})[ ](\d{6})\b)")};
    }
    if (name == "iso8601") {
        return {name,
                std::regex(R"(\b(\d{4})-(\d{2})-(\d{2})[T ](\d{2}):(\d{2}):(\d{2})(?:[.,](\d{1,6}))?)")};
    }
    throw std::invalid_argument("unknown timestamp format: " + name);
}

}  // namespace

std::vector<std::string> MaskRuleSet::known_timestamp_formats() {
    return {"hdfs_compact", "iso8601"};
}

MaskRuleSet MaskRuleSet::defaults() {
    return with_timestamp_formats(known_timestamp_formats());
}

MaskRuleSet MaskRuleSet::with_timestamp_formats(const std::vector<std::string>& format_names) {
    MaskRuleSet set;
    for (const auto& name : format_names) {
        set.timestamp_formats_.push_back(make_timestamp_format(name));
    }
    // Fixed masking order: ipv4[:port] (optionally /-prefixed), ipv6,
    // block ids, hex ids (>= 8 chars, at least one digit), file paths,
    // standalone integers/floats. Character classes exclude '<', '*', '>'
    // so later rules never swallow placeholders already emitted.
    set.rules_.push_back(
        {"ipv4", std::regex(R"(/?\b(?:\d{1,3}\.){3}\d{1,3}(?::\d{1,5})?\b)")});
    set.rules_.push_back(
        {"ipv6",
         std::regex(
             R"(\b(?:[0-9a-fA-F]{1,4}:){3,}[0-9a-fA-F]{1,4}\b|\b(?:[0-9a-fA-F]{1,4}:){1,7}:[0-9a-fA-F]{1,4}(?::[0-9a-fA-F]{1,4}){0,6}\b)")});
    set.rules_.push_back({"block_id", std::regex(R"(\bblk_-?\d+\b)")});
    set.rules_.push_back(
        {"hex_id",
         std::regex(R"(\b0x[0-9a-fA-F]{6,}\b|\b(?=[0-9a-fA-F]*\d)[0-9a-fA-F]{8,}\b)")});
    set.rules_.push_back({"path", std::regex(R"((?:/[A-Za-z0-9._\-]+){2,}/?)")});
    set.rules_.push_back({"number", std::regex(R"([+-]?\b\d+(?:\.\d+)?\b)")});
    return set;
}

namespace {

/// Replace every match of `rule` with `<*>`, recording one placeholder per
/// match. Inserted placeholders are never rescanned.
std::string mask_all(const std::string& input, const std::string& kind,
                     const std::regex& pattern, std::vector<Placeholder>& placeholders) {
    std::string out;
    out.reserve(input.size());
    auto it = input.cbegin();
    std::smatch m;
    while (it != input.cend()) {
        auto flags = it == input.cbegin() ? std::regex_constants::match_default
                                          : std::regex_constants::match_prev_avail;
        if (!std::regex_search(it, input.cend(), m, pattern, flags)) break;
        if (m.length(0) == 0) {  // zero-width safety
            out.push_back(*(it + m.position(0)));
            it += m.position(0) + 1;
            continue;
        }
        out.append(it, it + m.position(0));
        out += "<*>";
        placeholders.push_back({kind, m.str(0)});
        it += m.position(0) + m.length(0);
    }
    out.append(it, input.cend());
    return out;
}

}  // namespace

ProcessedLog preprocess(const RawLog& raw, const MaskRuleSet& rules,
                        std::int64_t arrival_fallback_ms) {
    if (rules.empty()) throw std::invalid_argument("preprocess: empty rule set");
    if (text::trim(raw.line).empty()) throw std::invalid_argument("preprocess: empty line");

    ProcessedLog out;
    std::string work = raw.line;

    // First timestamp match is extracted (the retained event time) and
    // removed from the text; further timestamp matches are masked below.
    std::string extracted_original;
    bool extracted = false;
    for (const auto& fmt : rules.timestamp_formats()) {
        std::smatch m;
        if (!std::regex_search(work, m, fmt.pattern)) continue;
        extracted = true;
        extracted_original = m.str(0);
        auto parsed = parse_timestamp(fmt.name, m);
        if (parsed) {
            out.timestamp_ms = *parsed;
        } else {
            out.timestamp_warning = true;
            out.timestamp_ms = arrival_fallback_ms;
        }
        work.erase(static_cast<std::size_t>(m.position(0)),
                   static_cast<std::size_t>(m.length(0)));
        break;
    }
    if (!extracted) {
        out.timestamp_from_arrival = true;
        out.timestamp_ms = arrival_fallback_ms;
    }

    for (const auto& fmt : rules.timestamp_formats()) {
        work = mask_all(work, "timestamp", fmt.pattern, out.placeholders);
    }
    for (const auto& rule : rules.rules()) {
        work = mask_all(work, rule.kind, rule.pattern, out.placeholders);
    }

    out.normalized_text = text::normalize(work);
    if (out.normalized_text.empty()) {
        // The whole line was the timestamp; keep a placeholder-only
        // template so the event type is still representable.
        out.normalized_text = "<*>";
        if (out.placeholders.empty()) {
            out.placeholders.push_back({"timestamp", extracted_original});
        }
    }
    return out;
}

// --- cache -------------------------------------------------------------------

std::optional<EventTemplate> TemplateCache::get(const std::string& normalized_text) {
    std::unique_lock lock(mutex_);
    auto it = index_.find(normalized_text);
    if (it == index_.end()) return std::nullopt;
    lru_.splice(lru_.begin(), lru_, it->second);
    return it->second->second;
}

void TemplateCache::put(const std::string& normalized_text, EventTemplate tmpl) {
    if (capacity_ == 0) return;
    std::unique_lock lock(mutex_);
    auto it = index_.find(normalized_text);
    if (it != index_.end()) {
        it->second->second = std::move(tmpl);
        lru_.splice(lru_.begin(), lru_, it->second);
        return;
    }
    if (lru_.size() >= capacity_) {
        index_.erase(lru_.back().first);
        lru_.pop_back();
    }
    lru_.emplace_front(normalized_text, std::move(tmpl));
    index_[normalized_text] = lru_.begin();
}

std::size_t TemplateCache::size() const {
    std::shared_lock lock(mutex_);
    return lru_.size();
}

std::optional<EventTemplate> exact_match(const ProcessedLog& processed, TemplateCache& cache) {
    return cache.get(text::normalize(processed.normalized_text));
}

std::optional<EventTemplate> semantic_match(const ProcessedLog& processed,
                                            const kb::KnowledgeBase& knowledge,
                                            double delta_sim) {
    if (knowledge.validated_template_count() == 0) return std::nullopt;
    auto query = embedding::embed(processed.normalized_text, knowledge.embedding_dim());
    auto best = knowledge.best_template_match(query);
    if (!best || best->second < delta_sim) return std::nullopt;
    EventTemplate t;
    t.template_id = best->first.template_id;
    t.text = best->first.text;
    t.origin = Tier::l2;
    t.validated = best->first.validated;
    return t;
}

namespace {

EventTemplate degraded_self_template(const ProcessedLog& processed) {
    EventTemplate t = make_template(text::normalize(processed.normalized_text), Tier::l3, false);
    t.degraded = true;
    return t;
}

/// Re-mask a model reply with the full rule set (timestamps included) so the
/// stored template is canonical even when the model echoes literals.
std::string canonicalize_reply(const std::string& reply, const MaskRuleSet& rules) {
    // first non-empty line of the reply
    std::string line;
    std::size_t start = 0;
    while (start < reply.size()) {
        std::size_t end = reply.find('\n', start);
        if (end == std::string::npos) end = reply.size();
        line = text::trim(reply.substr(start, end - start));
        if (!line.empty()) break;
        start = end + 1;
    }
    if (line.empty()) return "";
    std::vector<Placeholder> scratch;
    for (const auto& fmt : rules.timestamp_formats()) {
        line = mask_all(line, "timestamp", fmt.pattern, scratch);
    }
    for (const auto& rule : rules.rules()) {
        line = mask_all(line, rule.kind, rule.pattern, scratch);
    }
    return text::normalize(line);
}

}  // namespace

EventTemplate fallback_generate(const ProcessedLog& processed, model::ModelClient& client,
                                const MaskRuleSet& rules) {
    model::ModelRequest req;
    req.purpose = model::Purpose::l3_parse;
    req.temperature = 0.0;
    req.max_tokens = 256;
    req.messages = {
        {"system",
         "Recognize new log patterns. Abstract a reusable event template from the given "
         "log line by in-context reasoning: replace every variable field with <*> and keep "
         "constant words unchanged. Reply with the template text only.\n"
         "Example: input 'connection from <*> closed after <*> retries' -> template "
         "'connection from <*> closed after <*> retries'.\n"
         "Example: input 'worker 12 heartbeat missed' -> template 'worker <*> heartbeat "
         "missed'."},
        {"user", processed.normalized_text},
    };

    auto result = client.complete(req);
    if (!result.ok) return degraded_self_template(processed);

    std::string canonical = canonicalize_reply(result.response.text, rules);
    if (canonical.empty()) return degraded_self_template(processed);
    return make_template(canonical, Tier::l3, false);
}

// --- router ------------------------------------------------------------------

ParseOutput parse_stream(const std::vector<RawLog>& logs, TemplateCache& cache,
                         kb::KnowledgeBase* knowledge, model::ModelClient* client,
                         const ParseOptions& options) {
    ParseOutput out;
    out.events.reserve(logs.size());
    std::int64_t prev_ts = -1;

    for (const auto& raw : logs) {
        auto t0 = std::chrono::steady_clock::now();
        std::int64_t arrival = prev_ts >= 0 ? prev_ts + 1 : 0;
        ProcessedLog processed = preprocess(raw, options.rules, arrival);

        Tier tier;
        EventTemplate tmpl;
        if (auto hit = exact_match(processed, cache)) {
            tier = Tier::l1;
            tmpl = std::move(*hit);
            ++out.stats.l1_hits;
        } else {
            std::optional<EventTemplate> semantic;
            if (knowledge) semantic = semantic_match(processed, *knowledge, options.delta_sim);
            if (semantic) {
                tier = Tier::l2;
                tmpl = std::move(*semantic);
                ++out.stats.l2_hits;
                if (options.cache_l2_hits) {
                    cache.put(processed.normalized_text, tmpl);
                    ++out.stats.l2_cache_inserts;
                }
            } else {
                tier = Tier::l3;
                tmpl = client ? fallback_generate(processed, *client, options.rules)
                              : degraded_self_template(processed);
                ++out.stats.l3_hits;
                // Immediate local reuse; KB incorporation waits for validation.
                cache.put(processed.normalized_text, tmpl);
                if (knowledge) {
                    kb::TemplateEntry entry;
                    entry.template_id = tmpl.template_id;
                    entry.text = tmpl.text;
                    entry.validated = false;
                    entry.added_at_ms = processed.timestamp_ms;
                    knowledge->enqueue_template(std::move(entry));
                }
            }
        }

        EventRecord record;
        record.event.template_id = tmpl.template_id;
        record.event.timestamp_ms = processed.timestamp_ms;
        record.event.source_id = raw.source_id;
        record.template_text = tmpl.text;
        record.tier = tier;
        out.events.push_back(std::move(record));

        RouteRecord rr;
        rr.seq = raw.seq;
        rr.tier = tier;
        rr.latency_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        rr.timestamp_warning = processed.timestamp_warning;
        rr.degraded = tmpl.degraded;
        if (rr.timestamp_warning) ++out.stats.timestamp_warnings;
        if (rr.degraded) ++out.stats.degraded_templates;
        out.stats.per_log.push_back(rr);

        prev_ts = processed.timestamp_ms;
    }
    return out;
}

std::string event_record_line(const EventRecord& record) {
    json doc;
    doc["template_id"] = record.event.template_id;
    doc["template_text"] = record.template_text;
    doc["timestamp_ms"] = record.event.timestamp_ms;
    doc["source_id"] = record.event.source_id;
    doc["tier"] = tier_name(record.tier);
    return doc.dump();
}

}  // namespace selfheal::perception
