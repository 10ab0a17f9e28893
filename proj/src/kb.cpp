#include "selfheal/kb.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "selfheal/text.hpp"

namespace selfheal::kb {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kTemplatesFile = "templates.jsonl";
constexpr const char* kPriorsFile = "priors.jsonl";
constexpr const char* kCasesFile = "cases.jsonl";
constexpr const char* kPendingFile = "pending.jsonl";

json embedding_to_json(const embedding::EmbeddingVector& v) {
    json arr = json::array();
    for (std::size_t i = 0; i < v.values.size(); ++i) {
        if (v.values[i] != 0.0) {
            arr.push_back(json::array({i, v.values[i]}));
        }
    }
    return arr;
}

embedding::EmbeddingVector embedding_from_json(const json& arr, std::size_t dim) {
    embedding::EmbeddingVector v;
    v.values.assign(dim, 0.0);
    double sq = 0.0;
    for (const auto& pair : arr) {
        std::size_t idx = pair.at(0).get<std::size_t>();
        if (idx >= dim) throw KbError("embedding index out of range");
        v.values[idx] = pair.at(1).get<double>();
        sq += v.values[idx] * v.values[idx];
    }
    v.norm = std::sqrt(sq);
    return v;
}

PriorFamily family_from_string(const std::string& s) {
    if (s == "intra") return PriorFamily::intra;
    if (s == "inter") return PriorFamily::inter;
    throw KbError("unknown prior family: " + s);
}

std::string prior_key(const PriorEntry& p) {
    return std::string(family_name(p.family)) + "|" + p.src_template_id + "|" +
           p.dst_template_id;
}

json template_to_json(const TemplateEntry& e) {
    json rec;
    rec["schema_version"] = kSchemaVersion;
    rec["template_id"] = e.template_id;
    rec["text"] = e.text;
    rec["embedding"] = embedding_to_json(e.embedding);
    rec["validated"] = e.validated;
    rec["added_at_ms"] = e.added_at_ms;
    return rec;
}

json prior_to_json(const PriorEntry& e) {
    json rec;
    rec["schema_version"] = kSchemaVersion;
    rec["src_template_id"] = e.src_template_id;
    rec["dst_template_id"] = e.dst_template_id;
    rec["family"] = family_name(e.family);
    rec["support_count"] = e.support_count;
    return rec;
}

json case_to_json(const CaseEntry& e) {
    json rec;
    rec["schema_version"] = kSchemaVersion;
    rec["case_id"] = e.case_id;
    rec["indexed_text"] = e.indexed_text;
    rec["embedding"] = embedding_to_json(e.embedding);
    rec["root_cause_label"] = e.root_cause_label;
    rec["repair_action"] = e.repair_action;
    rec["template_refs"] = e.template_refs;
    rec["validated"] = e.validated;
    return rec;
}

void check_schema(const json& rec) {
    int v = rec.at("schema_version").get<int>();
    if (v != kSchemaVersion) {
        throw KbError("schema version mismatch: file has " + std::to_string(v) +
                      ", expected " + std::to_string(kSchemaVersion));
    }
}

TemplateEntry template_from_json(const json& rec, std::size_t dim) {
    check_schema(rec);
    TemplateEntry e;
    e.template_id = rec.at("template_id").get<std::string>();
    e.text = rec.at("text").get<std::string>();
    if (rec.contains("embedding") && !rec["embedding"].empty()) {
        e.embedding = embedding_from_json(rec["embedding"], dim);
    } else {
        e.embedding = embedding::embed(e.text, dim);
    }
    e.validated = rec.value("validated", false);
    e.added_at_ms = rec.value("added_at_ms", static_cast<std::int64_t>(0));
    return e;
}

PriorEntry prior_from_json(const json& rec) {
    check_schema(rec);
    PriorEntry e;
    e.src_template_id = rec.at("src_template_id").get<std::string>();
    e.dst_template_id = rec.at("dst_template_id").get<std::string>();
    e.family = family_from_string(rec.at("family").get<std::string>());
    e.support_count = rec.value("support_count", static_cast<std::int64_t>(1));
    return e;
}

CaseEntry case_from_json(const json& rec, std::size_t dim) {
    check_schema(rec);
    CaseEntry e;
    e.case_id = rec.at("case_id").get<std::string>();
    e.indexed_text = rec.at("indexed_text").get<std::string>();
    if (rec.contains("embedding") && !rec["embedding"].empty()) {
        e.embedding = embedding_from_json(rec["embedding"], dim);
    } else {
        e.embedding = embedding::embed(e.indexed_text, dim);
    }
    e.root_cause_label = rec.at("root_cause_label").get<std::string>();
    e.repair_action = rec.at("repair_action").get<std::string>();
    if (rec.contains("template_refs")) {
        e.template_refs = rec["template_refs"].get<std::vector<std::string>>();
    }
    e.validated = rec.value("validated", false);
    return e;
}

json pending_to_json(const PendingEntry& e) {
    json rec;
    rec["schema_version"] = kSchemaVersion;
    rec["kind"] = e.kind;
    if (e.kind == "template") {
        rec["entry"] = template_to_json(e.tmpl);
    } else if (e.kind == "case") {
        rec["entry"] = case_to_json(e.kase);
    } else {
        rec["entry"] = prior_to_json(e.prior);
    }
    return rec;
}

}  // namespace

const char* family_name(PriorFamily f) {
    return f == PriorFamily::intra ? "intra" : "inter";
}

std::string PendingEntry::dedup_id() const {
    if (kind == "template") return "template|" + tmpl.template_id;
    if (kind == "case") return "case|" + kase.case_id;
    return "prior|" + prior_key(prior);
}

void KnowledgeBase::init_dir(const std::string& dir) {
    fs::create_directories(dir);
    for (const char* name : {kTemplatesFile, kPriorsFile, kCasesFile, kPendingFile}) {
        fs::path p = fs::path(dir) / name;
        if (!fs::exists(p)) std::ofstream(p).flush();
    }
}

LoadReport KnowledgeBase::load_from(const std::string& dir) {
    if (!fs::is_directory(dir)) {
        throw KbError("knowledge base directory missing: " + dir);
    }
    LoadReport report;
    std::unique_lock lock(store_mutex_);
    templates_.clear();
    priors_.clear();
    cases_.clear();

    auto for_each_line = [&report](const fs::path& path,
                                   const std::function<void(const json&)>& apply) {
        std::ifstream in(path);
        if (!in.is_open()) {
            report.diagnostics.push_back("missing file (treated as empty): " + path.string());
            return;
        }
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (text::trim(line).empty()) continue;
            json rec = json::parse(line, nullptr, false);
            if (rec.is_discarded()) {
                report.diagnostics.push_back(path.filename().string() + ":" +
                                             std::to_string(lineno) + ": malformed JSON, skipped");
                continue;
            }
            try {
                apply(rec);
            } catch (const KbError&) {
                throw;  // schema mismatch is fatal
            } catch (const std::exception& e) {
                report.diagnostics.push_back(path.filename().string() + ":" +
                                             std::to_string(lineno) + ": " + e.what() +
                                             ", skipped");
            }
        }
    };

    for_each_line(fs::path(dir) / kTemplatesFile, [&](const json& rec) {
        TemplateEntry e = template_from_json(rec, dim_);
        templates_[e.template_id] = std::move(e);
        ++report.templates;
    });
    for_each_line(fs::path(dir) / kPriorsFile, [&](const json& rec) {
        PriorEntry e = prior_from_json(rec);
        priors_[prior_key(e)] = std::move(e);
        ++report.priors;
    });
    for_each_line(fs::path(dir) / kCasesFile, [&](const json& rec) {
        CaseEntry e = case_from_json(rec, dim_);
        cases_[e.case_id] = std::move(e);
        ++report.cases;
    });

    // Journal replay: dedup by id; drop entries that already reached the
    // main store (crash between apply and truncate).
    {
        std::lock_guard<std::mutex> jlock(journal_mutex_);
        pending_.clear();
        std::set<std::string> seen;
        for_each_line(fs::path(dir) / kPendingFile, [&](const json& rec) {
            check_schema(rec);
            PendingEntry e;
            e.kind = rec.at("kind").get<std::string>();
            const json& entry = rec.at("entry");
            if (e.kind == "template") {
                e.tmpl = template_from_json(entry, dim_);
                if (templates_.count(e.tmpl.template_id)) return;
            } else if (e.kind == "case") {
                e.kase = case_from_json(entry, dim_);
                if (cases_.count(e.kase.case_id)) return;
            } else if (e.kind == "prior") {
                e.prior = prior_from_json(entry);
                if (priors_.count(prior_key(e.prior))) return;
            } else {
                throw std::runtime_error("unknown pending kind: " + e.kind);
            }
            if (!seen.insert(e.dedup_id()).second) return;
            pending_.push_back(std::move(e));
        });
        report.pending = pending_.size();
    }

    bound_dir_ = dir;
    return report;
}

void KnowledgeBase::save_to(const std::string& dir) const {
    fs::create_directories(dir);
    std::shared_lock lock(store_mutex_);

    std::ofstream tf(fs::path(dir) / kTemplatesFile, std::ios::trunc | std::ios::binary);
    for (const auto& [id, e] : templates_) tf << template_to_json(e).dump() << "\n";

    std::ofstream pf(fs::path(dir) / kPriorsFile, std::ios::trunc | std::ios::binary);
    for (const auto& [key, e] : priors_) pf << prior_to_json(e).dump() << "\n";

    std::ofstream cf(fs::path(dir) / kCasesFile, std::ios::trunc | std::ios::binary);
    for (const auto& [id, e] : cases_) cf << case_to_json(e).dump() << "\n";

    fs::path pending = fs::path(dir) / kPendingFile;
    if (!fs::exists(pending)) std::ofstream(pending).flush();
}

void KnowledgeBase::add_template(TemplateEntry entry) {
    if (entry.embedding.values.empty()) entry.embedding = embedding::embed(entry.text, dim_);
    std::unique_lock lock(store_mutex_);
    templates_[entry.template_id] = std::move(entry);
}

void KnowledgeBase::add_prior(PriorEntry entry) {
    std::unique_lock lock(store_mutex_);
    auto [it, inserted] = priors_.emplace(prior_key(entry), entry);
    if (!inserted) it->second.support_count += entry.support_count;
}

void KnowledgeBase::add_case(CaseEntry entry) {
    if (entry.embedding.values.empty()) {
        entry.embedding = embedding::embed(entry.indexed_text, dim_);
    }
    std::unique_lock lock(store_mutex_);
    cases_[entry.case_id] = std::move(entry);
}

std::optional<TemplateEntry> KnowledgeBase::find_template(const std::string& template_id) const {
    std::shared_lock lock(store_mutex_);
    auto it = templates_.find(template_id);
    if (it == templates_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::pair<TemplateEntry, double>> KnowledgeBase::best_template_match(
    const embedding::EmbeddingVector& query) const {
    std::shared_lock lock(store_mutex_);
    const TemplateEntry* best = nullptr;
    double best_sim = -1.0;
    for (const auto& [id, e] : templates_) {
        if (!e.validated) continue;
        double sim = embedding::cosine_sim(query, e.embedding);
        // std::map iteration is id-ascending, so strict > keeps the lowest
        // template_id on ties.
        if (sim > best_sim) {
            best_sim = sim;
            best = &e;
        }
    }
    if (!best) return std::nullopt;
    return std::make_pair(*best, best_sim);
}

std::vector<std::pair<CaseEntry, double>> KnowledgeBase::rank_cases(
    const embedding::EmbeddingVector& query, std::size_t top_n) const {
    std::shared_lock lock(store_mutex_);
    std::vector<std::pair<CaseEntry, double>> ranked;
    for (const auto& [id, e] : cases_) {
        if (!e.validated) continue;
        ranked.emplace_back(e, embedding::cosine_sim(query, e.embedding));
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first.case_id < b.first.case_id;
    });
    if (ranked.size() > top_n) ranked.resize(top_n);
    return ranked;
}

std::set<std::string> KnowledgeBase::templates_for_cause(const std::string& label) const {
    std::string needle = text::to_lower(text::trim(label));
    std::shared_lock lock(store_mutex_);
    std::set<std::string> out;
    for (const auto& [id, e] : cases_) {
        if (!e.validated) continue;
        if (text::to_lower(text::trim(e.root_cause_label)) != needle) continue;
        out.insert(e.template_refs.begin(), e.template_refs.end());
    }
    return out;
}

std::size_t KnowledgeBase::validated_template_count() const {
    std::shared_lock lock(store_mutex_);
    std::size_t n = 0;
    for (const auto& [id, e] : templates_) {
        if (e.validated) ++n;
    }
    return n;
}

KnowledgeBase::PriorPairs KnowledgeBase::priors_for(
    const std::vector<std::string>& event_order) const {
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < event_order.size(); ++i) {
        index.emplace(event_order[i], static_cast<int>(i));
    }
    PriorPairs out;
    std::shared_lock lock(store_mutex_);
    for (const auto& [key, e] : priors_) {
        auto src = index.find(e.src_template_id);
        auto dst = index.find(e.dst_template_id);
        if (src == index.end() || dst == index.end()) {
            ++out.skipped;
            continue;
        }
        auto& bucket = e.family == PriorFamily::intra ? out.intra : out.inter;
        bucket.emplace_back(src->second, dst->second);
    }
    return out;
}

void KnowledgeBase::append_journal(const PendingEntry& entry) {
    if (bound_dir_.empty()) return;
    std::ofstream out(fs::path(bound_dir_) / kPendingFile, std::ios::app | std::ios::binary);
    out << pending_to_json(entry).dump() << "\n";
    out.flush();
}

void KnowledgeBase::enqueue_template(TemplateEntry entry) {
    if (entry.embedding.values.empty()) entry.embedding = embedding::embed(entry.text, dim_);
    PendingEntry e;
    e.kind = "template";
    e.tmpl = std::move(entry);
    std::lock_guard<std::mutex> lock(journal_mutex_);
    append_journal(e);
    pending_.push_back(std::move(e));
}

void KnowledgeBase::enqueue_case(CaseEntry entry) {
    if (entry.embedding.values.empty()) {
        entry.embedding = embedding::embed(entry.indexed_text, dim_);
    }
    PendingEntry e;
    e.kind = "case";
    e.kase = std::move(entry);
    std::lock_guard<std::mutex> lock(journal_mutex_);
    append_journal(e);
    pending_.push_back(std::move(e));
}

void KnowledgeBase::enqueue_prior(PriorEntry entry) {
    PendingEntry e;
    e.kind = "prior";
    e.prior = std::move(entry);
    std::lock_guard<std::mutex> lock(journal_mutex_);
    append_journal(e);
    pending_.push_back(std::move(e));
}

std::size_t KnowledgeBase::pending_count() const {
    std::lock_guard<std::mutex> lock(journal_mutex_);
    return pending_.size();
}

void KnowledgeBase::apply_entry_locked(const PendingEntry& entry, std::size_t& applied) {
    if (entry.kind == "template") {
        auto it = templates_.find(entry.tmpl.template_id);
        if (it != templates_.end()) {
            it->second.validated = true;  // duplicate: merge by id
            return;
        }
        TemplateEntry e = entry.tmpl;
        e.validated = true;
        templates_[e.template_id] = std::move(e);
        ++applied;
    } else if (entry.kind == "case") {
        auto it = cases_.find(entry.kase.case_id);
        if (it != cases_.end()) {
            it->second.validated = true;
            return;
        }
        CaseEntry e = entry.kase;
        e.validated = true;
        cases_[e.case_id] = std::move(e);
        ++applied;
    } else if (entry.kind == "prior") {
        auto it = priors_.find(prior_key(entry.prior));
        if (it != priors_.end()) return;  // already applied
        priors_[prior_key(entry.prior)] = entry.prior;
        ++applied;
    }
}

std::size_t KnowledgeBase::apply_validated_all() {
    std::vector<PendingEntry> batch;
    {
        std::lock_guard<std::mutex> lock(journal_mutex_);
        batch.swap(pending_);
    }
    std::size_t applied = 0;
    {
        std::unique_lock lock(store_mutex_);
        for (const auto& e : batch) apply_entry_locked(e, applied);
    }
    if (!bound_dir_.empty()) {
        save_to(bound_dir_);
        std::lock_guard<std::mutex> lock(journal_mutex_);
        std::ofstream(fs::path(bound_dir_) / kPendingFile, std::ios::trunc).flush();
    }
    return applied;
}

KbStats KnowledgeBase::stats() const {
    KbStats s;
    {
        std::shared_lock lock(store_mutex_);
        s.templates = templates_.size();
        s.priors = priors_.size();
        s.cases = cases_.size();
        for (const auto& [id, e] : templates_) {
            if (e.validated) ++s.validated_templates;
        }
        for (const auto& [id, e] : cases_) {
            if (e.validated) ++s.validated_cases;
        }
    }
    s.pending = pending_count();
    return s;
}

std::vector<std::string> KnowledgeBase::verify() const {
    std::vector<std::string> diagnostics;
    std::shared_lock lock(store_mutex_);
    auto check = [&](const std::string& id, const std::string& source_text,
                     const embedding::EmbeddingVector& stored) {
        embedding::EmbeddingVector expected = embedding::embed(source_text, dim_);
        if (stored.dim() != expected.dim()) {
            diagnostics.push_back(id + ": embedding dimension mismatch");
            return;
        }
        for (std::size_t i = 0; i < expected.values.size(); ++i) {
            if (std::abs(stored.values[i] - expected.values[i]) > 1e-9) {
                diagnostics.push_back(id + ": stored embedding differs from embed(text)");
                return;
            }
        }
    };
    for (const auto& [id, e] : templates_) check("template " + id, e.text, e.embedding);
    for (const auto& [id, e] : cases_) check("case " + id, e.indexed_text, e.embedding);
    return diagnostics;
}

}  // namespace selfheal::kb
