#include <chrono>
#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "selfheal/model_client.hpp"

namespace selfheal::model {

using json = nlohmann::json;

CompletionResult HttpClient::do_complete(const ModelRequest& req) {
    json body;
    body["model"] = cfg_.model;
    body["temperature"] = req.temperature;
    body["max_tokens"] = req.max_tokens;
    json msgs = json::array();
    for (const auto& [role, content] : req.messages) {
        msgs.push_back({{"role", role}, {"content", content}});
    }
    body["messages"] = std::move(msgs);

    httplib::Client client(cfg_.endpoint);
    client.set_connection_timeout(0, cfg_.timeout_ms * 1000);
    client.set_read_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);

    httplib::Headers headers;
    if (!cfg_.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg_.api_key_env.c_str())) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }

    std::string last_error = "timeout";
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        attempts_.fetch_add(1);
        auto start = std::chrono::steady_clock::now();
        auto res = client.Post(cfg_.path, headers, body.dump(), "application/json");
        auto elapsed = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - start)
                           .count();
        if (!res) {
            last_error = "timeout";
            continue;
        }
        if (res->status != 200) {
            last_error = "http_status " + std::to_string(res->status);
            continue;
        }
        json doc = json::parse(res->body, nullptr, false);
        if (doc.is_discarded() || !doc.contains("choices") || doc["choices"].empty()) {
            last_error = "malformed_response";
            continue;
        }
        CompletionResult result;
        result.ok = true;
        result.response.text =
            doc["choices"][0].value("message", json::object()).value("content", "");
        result.response.latency_ms = elapsed;
        result.response.provider_tag = doc.value("model", cfg_.model);
        return result;
    }
    return {false, {}, last_error};
}

}  // namespace selfheal::model
