#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfheal/action.hpp"
#include "selfheal/model_client.hpp"
#include "selfheal/reasoning.hpp"

namespace selfheal::config {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Resolved pipeline configuration. One static file plus flag overrides;
/// unknown keys are rejected so typos cannot silently fall back to defaults.
struct PipelineConfig {
    // paths
    std::string kb_dir = "kb";

    // perception
    double delta_sim = 0.85;
    std::size_t cache_capacity = 10000;
    bool cache_l2_hits = true;
    std::vector<std::string> timestamp_formats = {"hdfs_compact", "iso8601"};
    std::size_t embedding_dim = 256;

    // reasoning
    std::int64_t window_len_ms = 60000;
    std::int64_t window_stride_ms = 0;  // 0 = tumbling (stride = length)
    reasoning::PenaltySet penalties_w{0.1, 10.0, 1.0};
    reasoning::PenaltySet penalties_a{0.1, 10.0, 1.0};
    reasoning::SolveConfig solve;

    // action
    action::ActionConfig action;
    std::string prompt_path;  // empty = embedded synthesis prompt

    // model client
    std::string model_backend = "mock";  // mock | replay | record | http
    std::string model_endpoint;
    std::string model_name = "generic-chat";
    std::string api_key_env = "SELFHEAL_API_KEY";
    std::string transcript_path;
    int model_timeout_ms = 30000;
    int model_max_retries = 2;

    // eval harness
    std::string noise_profile = "storage";
    std::string noise_tables_path;  // empty = embedded tables
    std::uint64_t seed = 42;
    double memory_budget_mb = 2048.0;
};

PipelineConfig load_config(const std::string& path);
PipelineConfig config_from_json_text(const std::string& json_text);

std::string to_json_text(const PipelineConfig& cfg);

/// Hash of the canonical serialized config; embedded in every output
/// artifact for provenance.
std::string config_hash(const PipelineConfig& cfg);

/// Instantiate the configured model backend. Throws ConfigError for an
/// unusable backend configuration.
std::unique_ptr<model::ModelClient> make_model_client(const PipelineConfig& cfg);

}  // namespace selfheal::config
