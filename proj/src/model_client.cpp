#include "selfheal/model_client.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "selfheal/text.hpp"

namespace selfheal::model {

using json = nlohmann::ordered_json;

const char* purpose_name(Purpose p) {
    return p == Purpose::l3_parse ? "l3_parse" : "synthesis";
}

std::string canonical_request(const ModelRequest& req) {
    json doc;
    doc["purpose"] = purpose_name(req.purpose);
    doc["temperature"] = req.temperature;
    doc["max_tokens"] = req.max_tokens;
    json msgs = json::array();
    for (const auto& [role, content] : req.messages) {
        json m;
        m["role"] = role;
        m["content"] = content;
        msgs.push_back(std::move(m));
    }
    doc["messages"] = std::move(msgs);
    return doc.dump();
}

std::uint64_t request_hash(const ModelRequest& req) {
    return text::fnv1a64(canonical_request(req));
}

CompletionResult ModelClient::complete(const ModelRequest& req) {
    calls_.fetch_add(1);
    return do_complete(req);
}

// --- MockClient -------------------------------------------------------------

void MockClient::add_fixture(const ModelRequest& req, std::string response_text) {
    fixtures_[request_hash(req)] = std::move(response_text);
}

void MockClient::set_default_response(std::string text) {
    default_response_ = std::move(text);
    has_default_ = true;
}

CompletionResult MockClient::do_complete(const ModelRequest& req) {
    if (unavailable_) {
        return {false, {}, "unavailable"};
    }
    CompletionResult result;
    result.ok = true;
    result.response.provider_tag = "mock";
    result.response.latency_ms = 0.0;

    auto it = fixtures_.find(request_hash(req));
    if (it != fixtures_.end()) {
        result.response.text = it->second;
        return result;
    }
    if (has_default_) {
        result.response.text = default_response_;
        return result;
    }
    for (auto rit = req.messages.rbegin(); rit != req.messages.rend(); ++rit) {
        if (rit->first == "user") {
            result.response.text = rit->second;
            return result;
        }
    }
    result.response.text = "";
    return result;
}

// --- ReplayClient -----------------------------------------------------------

ReplayClient::ReplayClient(const std::string& transcript_path) {
    std::ifstream in(transcript_path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("request_hash")) continue;
        ModelResponse resp;
        resp.text = rec.value("response_text", "");
        resp.latency_ms = rec.value("latency_ms", 0.0);
        resp.provider_tag = rec.value("provider_tag", "replay");
        std::uint64_t key = std::stoull(rec["request_hash"].get<std::string>(), nullptr, 16);
        transcripts_[key] = std::move(resp);
    }
}

CompletionResult ReplayClient::do_complete(const ModelRequest& req) {
    auto it = transcripts_.find(request_hash(req));
    if (it == transcripts_.end()) {
        return {false, {}, "replay_miss"};
    }
    CompletionResult result;
    result.ok = true;
    result.response = it->second;
    return result;
}

// --- RecordingClient --------------------------------------------------------

RecordingClient::RecordingClient(std::shared_ptr<ModelClient> inner, std::string transcript_path)
    : inner_(std::move(inner)), path_(std::move(transcript_path)) {}

CompletionResult RecordingClient::do_complete(const ModelRequest& req) {
    CompletionResult result = inner_->complete(req);
    if (result.ok) {
        json rec;
        rec["request_hash"] = text::hex64(request_hash(req));
        rec["request"] = json::parse(canonical_request(req));
        rec["response_text"] = result.response.text;
        rec["latency_ms"] = result.response.latency_ms;
        rec["provider_tag"] = result.response.provider_tag;
        std::lock_guard<std::mutex> lock(write_mutex_);
        std::ofstream out(path_, std::ios::app);
        out << rec.dump() << "\n";
    }
    return result;
}

}  // namespace selfheal::model
