#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace selfheal::model {

enum class Purpose { l3_parse, synthesis };

const char* purpose_name(Purpose p);

struct ModelRequest {
    /// Ordered (role, text) pairs, e.g. {"system", ...}, {"user", ...}.
    std::vector<std::pair<std::string, std::string>> messages;
    double temperature = 0.0;
    int max_tokens = 512;
    Purpose purpose = Purpose::l3_parse;
};

struct ModelResponse {
    std::string text;
    double latency_ms = 0.0;
    std::string provider_tag;
};

struct CompletionResult {
    bool ok = false;
    ModelResponse response;
    std::string error;  // "replay_miss", "timeout", "http_status <n>", ...
};

/// Canonical serialization of a request; the transcript key and the mock
/// fixture key are both fnv1a64 over this string.
std::string canonical_request(const ModelRequest& req);
std::uint64_t request_hash(const ModelRequest& req);

class ModelClient {
public:
    virtual ~ModelClient() = default;

    CompletionResult complete(const ModelRequest& req);
    std::uint64_t call_count() const { return calls_.load(); }

protected:
    virtual CompletionResult do_complete(const ModelRequest& req) = 0;

private:
    std::atomic<std::uint64_t> calls_{0};
};

/// Deterministic offline backend. Responses come from a fixture map keyed by
/// request hash; unmapped requests fall back to echoing the last user
/// message, which makes the L3 echo fixtures trivial to set up.
class MockClient : public ModelClient {
public:
    MockClient() = default;
    explicit MockClient(std::map<std::uint64_t, std::string> fixtures)
        : fixtures_(std::move(fixtures)) {}

    void add_fixture(const ModelRequest& req, std::string response_text);
    /// Fixed reply for every unmapped request instead of the echo fallback.
    void set_default_response(std::string text);
    /// Simulate an offline backend: every call fails with "unavailable".
    void set_unavailable(bool v) { unavailable_ = v; }

protected:
    CompletionResult do_complete(const ModelRequest& req) override;

private:
    std::map<std::uint64_t, std::string> fixtures_;
    std::string default_response_;
    bool has_default_ = false;
    bool unavailable_ = false;
};

/// Replays recorded transcripts. A request whose hash is not in the
/// transcript store fails with "replay_miss".
class ReplayClient : public ModelClient {
public:
    explicit ReplayClient(const std::string& transcript_path);

    std::size_t transcript_count() const { return transcripts_.size(); }

protected:
    CompletionResult do_complete(const ModelRequest& req) override;

private:
    std::map<std::uint64_t, ModelResponse> transcripts_;
};

/// Wraps another client and appends every successful exchange to a JSONL
/// transcript keyed by request hash, so a later ReplayClient run is
/// bit-exact.
class RecordingClient : public ModelClient {
public:
    RecordingClient(std::shared_ptr<ModelClient> inner, std::string transcript_path);

protected:
    CompletionResult do_complete(const ModelRequest& req) override;

private:
    std::shared_ptr<ModelClient> inner_;
    std::string path_;
    std::mutex write_mutex_;
};

struct HttpConfig {
    std::string endpoint;       // e.g. "http://localhost:8080"
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key_env;    // name of the env var holding the key
    int timeout_ms = 30000;
    int max_retries = 2;
};

/// Generic chat-completions HTTP backend.
class HttpClient : public ModelClient {
public:
    explicit HttpClient(HttpConfig cfg) : cfg_(std::move(cfg)) {}

    std::uint64_t http_attempts() const { return attempts_.load(); }

protected:
    CompletionResult do_complete(const ModelRequest& req) override;

private:
    HttpConfig cfg_;
    std::atomic<std::uint64_t> attempts_{0};
};

}  // namespace selfheal::model
