#include "selfheal/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "selfheal/text.hpp"

namespace selfheal::config {

using json = nlohmann::ordered_json;

namespace {

json to_json(const PipelineConfig& c) {
    json doc;
    doc["kb_dir"] = c.kb_dir;

    json perception;
    perception["delta_sim"] = c.delta_sim;
    perception["cache_capacity"] = c.cache_capacity;
    perception["cache_l2_hits"] = c.cache_l2_hits;
    perception["timestamp_formats"] = c.timestamp_formats;
    perception["embedding_dim"] = c.embedding_dim;
    doc["perception"] = std::move(perception);

    json reasoning;
    reasoning["window_len_ms"] = c.window_len_ms;
    reasoning["window_stride_ms"] = c.window_stride_ms;
    json pw;
    pw["prior"] = c.penalties_w.prior;
    pw["rev"] = c.penalties_w.rev;
    pw["bg"] = c.penalties_w.bg;
    reasoning["penalties_w"] = std::move(pw);
    json pa;
    pa["prior"] = c.penalties_a.prior;
    pa["rev"] = c.penalties_a.rev;
    pa["bg"] = c.penalties_a.bg;
    reasoning["penalties_a"] = std::move(pa);
    json solver;
    solver["lambda_w"] = c.solve.lambda_w;
    solver["lambda_a"] = c.solve.lambda_a;
    solver["theta_prune"] = c.solve.theta_prune;
    solver["max_outer"] = c.solve.max_outer;
    solver["max_inner"] = c.solve.max_inner;
    solver["h_tolerance"] = c.solve.h_tolerance;
    solver["rho_init"] = c.solve.rho_init;
    solver["rho_max"] = c.solve.rho_max;
    solver["rho_multiplier"] = c.solve.rho_multiplier;
    solver["required_h_shrink"] = c.solve.required_h_shrink;
    solver["inner_tolerance"] = c.solve.inner_tolerance;
    solver["damp_factor"] = c.solve.damp_factor;
    solver["damp_band"] = c.solve.damp_band;
    solver["direction_ratio"] = c.solve.direction_ratio;
    reasoning["solver"] = std::move(solver);
    doc["reasoning"] = std::move(reasoning);

    json act;
    act["top_k"] = c.action.top_k;
    act["max_path_depth"] = c.action.max_path_depth;
    act["max_paths"] = c.action.max_paths;
    act["top_n_cases"] = c.action.top_n_cases;
    act["min_similarity"] = c.action.min_similarity;
    act["ambiguity_margin"] = c.action.ambiguity_margin;
    act["prompt_path"] = c.prompt_path;
    doc["action"] = std::move(act);

    json model;
    model["backend"] = c.model_backend;
    model["endpoint"] = c.model_endpoint;
    model["model"] = c.model_name;
    model["api_key_env"] = c.api_key_env;
    model["transcript_path"] = c.transcript_path;
    model["timeout_ms"] = c.model_timeout_ms;
    model["max_retries"] = c.model_max_retries;
    doc["model"] = std::move(model);

    json eval;
    eval["noise_profile"] = c.noise_profile;
    eval["noise_tables_path"] = c.noise_tables_path;
    eval["seed"] = c.seed;
    eval["memory_budget_mb"] = c.memory_budget_mb;
    doc["eval"] = std::move(eval);
    return doc;
}

void reject_unknown_keys(const json& input, const json& schema, const std::string& prefix) {
    for (const auto& [key, value] : input.items()) {
        if (!schema.contains(key)) {
            throw ConfigError("unknown config key: " + prefix + key);
        }
        if (value.is_object() && schema[key].is_object()) {
            reject_unknown_keys(value, schema[key], prefix + key + ".");
        }
    }
}

template <typename T>
void read_if(const json& doc, const char* key, T& out) {
    if (doc.contains(key)) out = doc.at(key).get<T>();
}

void validate(const PipelineConfig& c) {
    if (c.delta_sim < 0.0 || c.delta_sim > 1.0) {
        throw ConfigError("delta_sim must lie in [0,1]");
    }
    if (c.solve.lambda_w < 0.0 || c.solve.lambda_a < 0.0 || c.solve.theta_prune < 0.0) {
        throw ConfigError("lambda_w, lambda_a, theta_prune must be nonnegative");
    }
    auto check_penalties = [](const reasoning::PenaltySet& p, const char* name) {
        if (p.prior < 0.0 || p.rev < 0.0 || p.bg < 0.0) {
            throw ConfigError(std::string(name) + " penalties must be nonnegative");
        }
    };
    check_penalties(c.penalties_w, "penalties_w");
    check_penalties(c.penalties_a, "penalties_a");
    if (c.action.min_similarity < 0.0 || c.action.min_similarity > 1.0 ||
        c.action.ambiguity_margin < 0.0 || c.action.ambiguity_margin > 1.0) {
        throw ConfigError("action thresholds must lie in [0,1]");
    }
    if (c.window_len_ms <= 0) throw ConfigError("window_len_ms must be positive");
    if (c.window_stride_ms < 0) throw ConfigError("window_stride_ms must be nonnegative");
    if (c.embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
    if (c.memory_budget_mb <= 0.0) throw ConfigError("memory_budget_mb must be positive");
    static const std::set<std::string> backends = {"mock", "replay", "record", "http"};
    if (!backends.count(c.model_backend)) {
        throw ConfigError("unknown model backend: " + c.model_backend);
    }
    static const std::set<std::string> profiles = {"control_plane", "storage", "heterogeneous"};
    if (!profiles.count(c.noise_profile)) {
        throw ConfigError("unknown noise profile: " + c.noise_profile);
    }
}

}  // namespace

PipelineConfig config_from_json_text(const std::string& json_text) {
    json doc = json::parse(json_text, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config is not valid JSON");

    PipelineConfig c;
    reject_unknown_keys(doc, to_json(c), "");

    read_if(doc, "kb_dir", c.kb_dir);
    if (doc.contains("perception")) {
        const json& p = doc["perception"];
        read_if(p, "delta_sim", c.delta_sim);
        read_if(p, "cache_capacity", c.cache_capacity);
        read_if(p, "cache_l2_hits", c.cache_l2_hits);
        read_if(p, "timestamp_formats", c.timestamp_formats);
        read_if(p, "embedding_dim", c.embedding_dim);
    }
    if (doc.contains("reasoning")) {
        const json& r = doc["reasoning"];
        read_if(r, "window_len_ms", c.window_len_ms);
        read_if(r, "window_stride_ms", c.window_stride_ms);
        if (r.contains("penalties_w")) {
            read_if(r["penalties_w"], "prior", c.penalties_w.prior);
            read_if(r["penalties_w"], "rev", c.penalties_w.rev);
            read_if(r["penalties_w"], "bg", c.penalties_w.bg);
        }
        if (r.contains("penalties_a")) {
            read_if(r["penalties_a"], "prior", c.penalties_a.prior);
            read_if(r["penalties_a"], "rev", c.penalties_a.rev);
            read_if(r["penalties_a"], "bg", c.penalties_a.bg);
        }
        if (r.contains("solver")) {
            const json& s = r["solver"];
            read_if(s, "lambda_w", c.solve.lambda_w);
            read_if(s, "lambda_a", c.solve.lambda_a);
            read_if(s, "theta_prune", c.solve.theta_prune);
            read_if(s, "max_outer", c.solve.max_outer);
            read_if(s, "max_inner", c.solve.max_inner);
            read_if(s, "h_tolerance", c.solve.h_tolerance);
            read_if(s, "rho_init", c.solve.rho_init);
            read_if(s, "rho_max", c.solve.rho_max);
            read_if(s, "rho_multiplier", c.solve.rho_multiplier);
            read_if(s, "required_h_shrink", c.solve.required_h_shrink);
            read_if(s, "inner_tolerance", c.solve.inner_tolerance);
            read_if(s, "damp_factor", c.solve.damp_factor);
            read_if(s, "damp_band", c.solve.damp_band);
            read_if(s, "direction_ratio", c.solve.direction_ratio);
        }
    }
    if (doc.contains("action")) {
        const json& a = doc["action"];
        read_if(a, "top_k", c.action.top_k);
        read_if(a, "max_path_depth", c.action.max_path_depth);
        read_if(a, "max_paths", c.action.max_paths);
        read_if(a, "top_n_cases", c.action.top_n_cases);
        read_if(a, "min_similarity", c.action.min_similarity);
        read_if(a, "ambiguity_margin", c.action.ambiguity_margin);
        read_if(a, "prompt_path", c.prompt_path);
    }
    if (doc.contains("model")) {
        const json& m = doc["model"];
        read_if(m, "backend", c.model_backend);
        read_if(m, "endpoint", c.model_endpoint);
        read_if(m, "model", c.model_name);
        read_if(m, "api_key_env", c.api_key_env);
        read_if(m, "transcript_path", c.transcript_path);
        read_if(m, "timeout_ms", c.model_timeout_ms);
        read_if(m, "max_retries", c.model_max_retries);
    }
    if (doc.contains("eval")) {
        const json& e = doc["eval"];
        read_if(e, "noise_profile", c.noise_profile);
        read_if(e, "noise_tables_path", c.noise_tables_path);
        read_if(e, "seed", c.seed);
        read_if(e, "memory_budget_mb", c.memory_budget_mb);
    }

    if (!c.prompt_path.empty()) {
        std::ifstream in(c.prompt_path);
        if (!in.is_open()) throw ConfigError("prompt asset not found: " + c.prompt_path);
        std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        c.action.prompt_template = std::move(content);
    }

    validate(c);
    return c;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw ConfigError("config file not found: " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json_text(content);
}

std::string to_json_text(const PipelineConfig& cfg) { return to_json(cfg).dump(2); }

std::string config_hash(const PipelineConfig& cfg) {
    return text::hex64(text::fnv1a64(to_json(cfg).dump()));
}

std::unique_ptr<model::ModelClient> make_model_client(const PipelineConfig& cfg) {
    if (cfg.model_backend == "mock") {
        return std::make_unique<model::MockClient>();
    }
    if (cfg.model_backend == "replay") {
        if (cfg.transcript_path.empty()) {
            throw ConfigError("replay backend requires model.transcript_path");
        }
        return std::make_unique<model::ReplayClient>(cfg.transcript_path);
    }
    model::HttpConfig http;
    http.endpoint = cfg.model_endpoint;
    http.model = cfg.model_name;
    http.api_key_env = cfg.api_key_env;
    http.timeout_ms = cfg.model_timeout_ms;
    http.max_retries = cfg.model_max_retries;
    if (http.endpoint.empty()) {
        throw ConfigError(cfg.model_backend + " backend requires model.endpoint");
    }
    auto client = std::make_unique<model::HttpClient>(http);
    if (cfg.model_backend == "record") {
        if (cfg.transcript_path.empty()) {
            throw ConfigError("record backend requires model.transcript_path");
        }
        return std::make_unique<model::RecordingClient>(std::move(client), cfg.transcript_path);
    }
    return client;
}

}  // namespace selfheal::config
