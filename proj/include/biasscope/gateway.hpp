#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

#include "biasscope/types.hpp"

namespace biasscope {

enum class ModelRole { target, teacher, filter, checker };

std::string_view to_string(ModelRole role);
ModelRole parse_model_role(std::string_view s);

struct ModelRef {
    ModelRole role = ModelRole::target;
    std::string model_id;
    std::string endpoint;                            // base URL, e.g. http://host:8000/v1
    std::string credentials = "BIASSCOPE_API_KEY";   // name of the env var holding the key

    bool operator==(const ModelRef&) const = default;
};

// Throws ConfigError when model_id is empty or the endpoint is not an
// http(s) URL. Non-live backends accept an empty endpoint.
void validate_model_ref(const ModelRef& model, bool require_endpoint);

// Decoding settings. The defaults are greedy with a fixed seed.
struct GenParams {
    double temperature = 0.0;
    int max_output = 2048;
    std::uint64_t seed = 0;

    bool operator==(const GenParams&) const = default;
};

struct Usage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct Completion {
    std::string text;
    std::optional<Usage> usage;
    bool cached = false;
    int attempt = 0;  // backend attempts made; 0 when served from cache
};

// Stable SHA-256 over the canonical JSON serialization of the request.
std::string request_digest(std::string_view model_id, std::string_view prompt,
                           const GenParams& params);

struct BackendReply {
    std::string text;
    std::optional<Usage> usage;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual BackendReply call(const ModelRef& model, const std::string& prompt,
                              const GenParams& params) = 0;
    virtual std::string_view name() const = 0;
};

// OpenAI-compatible chat completions over HTTP(S). API key and base URL can
// come from BIASSCOPE_API_KEY / BIASSCOPE_API_BASE.
class LiveBackend final : public Backend {
public:
    explicit LiveBackend(std::chrono::seconds timeout = std::chrono::seconds(120));
    BackendReply call(const ModelRef& model, const std::string& prompt,
                      const GenParams& params) override;
    std::string_view name() const override { return "live"; }

private:
    std::chrono::seconds timeout_;
};

// Serves recorded responses keyed by request digest; misses raise ReplayMiss.
class ReplayBackend final : public Backend {
public:
    ReplayBackend() = default;
    explicit ReplayBackend(std::unordered_map<std::string, std::string> fixtures);
    // JSONL of {"digest": ..., "response_text": ...}.
    static ReplayBackend from_file(const std::filesystem::path& path);

    void add(std::string digest, std::string response);
    std::size_t size() const { return fixtures_.size(); }

    BackendReply call(const ModelRef& model, const std::string& prompt,
                      const GenParams& params) override;
    std::string_view name() const override { return "replay"; }

private:
    std::unordered_map<std::string, std::string> fixtures_;
};

struct ScriptedRequest {
    const ModelRef& model;
    const std::string& prompt;
    const GenParams& params;
    std::size_t call_index;  // 0-based, across all calls to this backend
};

// Rule-driven backend for tests and offline runs. The rule may throw
// GatewayError subclasses to simulate failures.
class ScriptedBackend final : public Backend {
public:
    using Rule = std::function<std::string(const ScriptedRequest&)>;

    explicit ScriptedBackend(Rule rule);
    BackendReply call(const ModelRef& model, const std::string& prompt,
                      const GenParams& params) override;
    std::string_view name() const override { return "scripted"; }

    std::size_t calls() const noexcept { return calls_.load(); }

private:
    Rule rule_;
    std::atomic<std::size_t> calls_{0};
};

// Content-addressed on-disk cache: one `<digest>.json` file per request holding
// the request and the response text.
class CompletionCache {
public:
    explicit CompletionCache(std::filesystem::path dir);

    std::optional<std::string> get(const std::string& digest) const;
    void put(const std::string& digest, const json& request, const std::string& response);

    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::mutex write_mutex_;
    std::unordered_set<std::string> writing_;
};

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base_delay{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_delay{30000};
    double jitter = 0.25;  // +/- fraction applied to each delay
};

struct GatewayOptions {
    RetryPolicy retry;
    std::optional<std::filesystem::path> cache_dir;  // caching disabled when empty
    std::size_t max_in_flight = 4;
    // When set, every served (digest, response) pair is appended once to this
    // JSONL file in replay-fixture format.
    std::optional<std::filesystem::path> record_path;
};

class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {});

    Completion complete(const ModelRef& model, const std::string& prompt,
                        const GenParams& params);

    std::size_t max_in_flight() const noexcept { return options_.max_in_flight; }
    std::size_t backend_calls() const noexcept { return backend_calls_.load(); }
    std::size_t peak_in_flight() const noexcept { return peak_in_flight_.load(); }
    std::string_view backend_name() const { return backend_->name(); }

private:
    void acquire_slot();
    void release_slot();
    void record(const std::string& digest, const std::string& response);

    std::shared_ptr<Backend> backend_;
    GatewayOptions options_;
    std::unique_ptr<CompletionCache> cache_;

    std::mutex slot_mutex_;
    std::condition_variable slot_cv_;
    std::size_t in_flight_ = 0;
    std::atomic<std::size_t> peak_in_flight_{0};
    std::atomic<std::size_t> backend_calls_{0};

    std::mutex record_mutex_;
    std::unordered_set<std::string> recorded_;
};

// A model bound to a gateway and decoding parameters; what pipeline stages
// receive for the target, teacher, filter and checker roles.
struct ModelHandle {
    Gateway* gateway = nullptr;
    ModelRef model;
    GenParams params;

    Completion complete(const std::string& prompt) const {
        return gateway->complete(model, prompt, params);
    }
    std::size_t max_in_flight() const { return gateway->max_in_flight(); }
};

}  // namespace biasscope
