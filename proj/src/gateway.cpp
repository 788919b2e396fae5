#include "biasscope/gateway.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

#include "biasscope/dataset.hpp"
#include "biasscope/digest.hpp"
#include "biasscope/errors.hpp"

namespace biasscope {

std::string_view to_string(ModelRole role) {
    switch (role) {
        case ModelRole::target: return "target";
        case ModelRole::teacher: return "teacher";
        case ModelRole::filter: return "filter";
        case ModelRole::checker: return "checker";
    }
    return "target";
}

ModelRole parse_model_role(std::string_view s) {
    if (s == "target") return ModelRole::target;
    if (s == "teacher") return ModelRole::teacher;
    if (s == "filter") return ModelRole::filter;
    if (s == "checker") return ModelRole::checker;
    throw ConfigError("unknown model role '" + std::string(s) + "'");
}

void validate_model_ref(const ModelRef& model, bool require_endpoint) {
    if (model.model_id.empty()) {
        throw ConfigError(std::string(to_string(model.role)) + ": model_id is empty");
    }
    if (!require_endpoint && model.endpoint.empty()) return;
    const auto& e = model.endpoint;
    const bool scheme = e.rfind("http://", 0) == 0 || e.rfind("https://", 0) == 0;
    const auto host_at = e.find("://");
    if (!scheme || host_at == std::string::npos || host_at + 3 >= e.size()) {
        throw ConfigError(std::string(to_string(model.role)) + ": malformed endpoint '" + e + "'");
    }
}

std::string request_digest(std::string_view model_id, std::string_view prompt,
                           const GenParams& params) {
    // Array form fixes the field order; nlohmann's dump is deterministic.
    json canonical = json::array({"biasscope.request.v1", std::string(model_id), std::string(prompt),
                                  params.temperature, params.max_output, params.seed});
    return sha256_hex(canonical.dump());
}

// ---------------------------------------------------------------- live

LiveBackend::LiveBackend(std::chrono::seconds timeout) : timeout_(timeout) {}

BackendReply LiveBackend::call(const ModelRef& model, const std::string& prompt,
                               const GenParams& params) {
    std::string base = model.endpoint;
    if (base.empty()) {
        if (const char* env = std::getenv("BIASSCOPE_API_BASE")) base = env;
    }
    validate_model_ref(ModelRef{model.role, model.model_id, base, model.credentials}, true);

    const auto host_at = base.find("://") + 3;
    const auto path_at = base.find('/', host_at);
    const std::string origin = base.substr(0, path_at);
    std::string path = path_at == std::string::npos ? std::string{} : base.substr(path_at);
    while (!path.empty() && path.back() == '/') path.pop_back();
    path += "/chat/completions";

    httplib::Client client(origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);

    httplib::Headers headers;
    const std::string env_name = model.credentials.empty() ? "BIASSCOPE_API_KEY" : model.credentials;
    if (const char* key = std::getenv(env_name.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    json body = {{"model", model.model_id},
                 {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                 {"temperature", params.temperature},
                 {"max_tokens", params.max_output},
                 {"seed", params.seed},
                 {"stream", false}};

    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
        const auto err = res.error();
        const std::string what = httplib::to_string(err);
        if (err == httplib::Error::Read || err == httplib::Error::Write ||
            err == httplib::Error::ConnectionTimeout) {
            throw Timeout(model.model_id + ": " + what);
        }
        throw TransportError(model.model_id + ": " + what);
    }
    if (res->status == 429) throw RateLimited(model.model_id + ": HTTP 429");
    if (res->status == 408) throw Timeout(model.model_id + ": HTTP 408");
    if (res->status >= 500) {
        throw TransportError(model.model_id + ": HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) {
        throw GatewayError("HttpError",
                           model.model_id + ": HTTP " + std::to_string(res->status) + ": " +
                               res->body.substr(0, 512),
                           false);
    }
    try {
        const auto doc = json::parse(res->body);
        const auto& content = doc.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw MalformedResponse(model.model_id + ": content is not a string");
        BackendReply reply{content.get<std::string>(), std::nullopt};
        if (auto it = doc.find("usage"); it != doc.end() && it->is_object()) {
            reply.usage = Usage{it->value("prompt_tokens", std::int64_t{0}),
                                it->value("completion_tokens", std::int64_t{0})};
        }
        return reply;
    } catch (const json::exception& e) {
        throw MalformedResponse(model.model_id + ": " + e.what());
    }
}

// ---------------------------------------------------------------- replay

ReplayBackend::ReplayBackend(std::unordered_map<std::string, std::string> fixtures)
    : fixtures_(std::move(fixtures)) {}

ReplayBackend ReplayBackend::from_file(const std::filesystem::path& path) {
    ReplayBackend backend;
    const auto text = read_file(path);
    std::size_t start = 0;
    std::size_t line_no = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        ++line_no;
        std::string_view line(text.data() + start, end - start);
        start = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            auto row = json::parse(line);
            backend.add(row.at("digest").get<std::string>(),
                        row.at("response_text").get<std::string>());
        } catch (const json::exception& e) {
            throw MalformedRecord(path.string() + ": line " + std::to_string(line_no) + ": " +
                                  e.what());
        }
    }
    return backend;
}

void ReplayBackend::add(std::string digest, std::string response) {
    fixtures_.insert_or_assign(std::move(digest), std::move(response));
}

BackendReply ReplayBackend::call(const ModelRef& model, const std::string& prompt,
                                 const GenParams& params) {
    const auto digest = request_digest(model.model_id, prompt, params);
    auto it = fixtures_.find(digest);
    if (it == fixtures_.end()) {
        throw ReplayMiss("no replay entry for " + model.model_id + " request " + digest);
    }
    return {it->second, std::nullopt};
}

// ---------------------------------------------------------------- scripted

ScriptedBackend::ScriptedBackend(Rule rule) : rule_(std::move(rule)) {}

BackendReply ScriptedBackend::call(const ModelRef& model, const std::string& prompt,
                                   const GenParams& params) {
    const std::size_t index = calls_.fetch_add(1);
    return {rule_(ScriptedRequest{model, prompt, params, index}), std::nullopt};
}

// ---------------------------------------------------------------- cache

CompletionCache::CompletionCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::optional<std::string> CompletionCache::get(const std::string& digest) const {
    const auto path = dir_ / (digest + ".json");
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    try {
        auto doc = json::parse(read_file(path));
        return doc.at("response").get<std::string>();
    } catch (const std::exception&) {
        return std::nullopt;  // unreadable entries are treated as misses
    }
}

void CompletionCache::put(const std::string& digest, const json& request,
                          const std::string& response) {
    {
        std::lock_guard lock(write_mutex_);
        if (!writing_.insert(digest).second) return;
    }
    json doc = {{"digest", digest}, {"request", request}, {"response", response}};
    try {
        write_file_atomic(dir_ / (digest + ".json"), doc.dump(2) + "\n");
    } catch (...) {
        std::lock_guard lock(write_mutex_);
        writing_.erase(digest);
        throw;
    }
}

// ---------------------------------------------------------------- gateway

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options)
    : backend_(std::move(backend)), options_(std::move(options)) {
    if (!backend_) throw ConfigError("gateway requires a backend");
    if (options_.max_in_flight == 0) options_.max_in_flight = 1;
    if (options_.retry.max_attempts < 1) options_.retry.max_attempts = 1;
    if (options_.cache_dir) cache_ = std::make_unique<CompletionCache>(*options_.cache_dir);
}

void Gateway::acquire_slot() {
    std::unique_lock lock(slot_mutex_);
    slot_cv_.wait(lock, [&] { return in_flight_ < options_.max_in_flight; });
    ++in_flight_;
    std::size_t peak = peak_in_flight_.load();
    while (in_flight_ > peak && !peak_in_flight_.compare_exchange_weak(peak, in_flight_)) {
    }
}

void Gateway::release_slot() {
    {
        std::lock_guard lock(slot_mutex_);
        --in_flight_;
    }
    slot_cv_.notify_one();
}

void Gateway::record(const std::string& digest, const std::string& response) {
    if (!options_.record_path) return;
    std::lock_guard lock(record_mutex_);
    if (!recorded_.insert(digest).second) return;
    if (options_.record_path->has_parent_path()) {
        std::filesystem::create_directories(options_.record_path->parent_path());
    }
    std::ofstream out(*options_.record_path, std::ios::app | std::ios::binary);
    out << json{{"digest", digest}, {"response_text", response}}.dump() << '\n';
}

Completion Gateway::complete(const ModelRef& model, const std::string& prompt,
                             const GenParams& params) {
    const auto digest = request_digest(model.model_id, prompt, params);
    if (cache_) {
        if (auto hit = cache_->get(digest)) {
            record(digest, *hit);
            return Completion{std::move(*hit), std::nullopt, true, 0};
        }
    }

    thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
    const auto& policy = options_.retry;
    for (int attempt = 1;; ++attempt) {
        acquire_slot();
        try {
            ++backend_calls_;
            BackendReply reply = backend_->call(model, prompt, params);
            release_slot();
            if (cache_) {
                json request = {{"model_id", model.model_id},
                                {"prompt", prompt},
                                {"temperature", params.temperature},
                                {"max_output", params.max_output},
                                {"seed", params.seed}};
                cache_->put(digest, request, reply.text);
            }
            record(digest, reply.text);
            return Completion{std::move(reply.text), reply.usage, false, attempt};
        } catch (const GatewayError& e) {
            release_slot();
            if (!e.transient() || attempt >= policy.max_attempts) throw;
        } catch (...) {
            release_slot();
            throw;
        }
        double delay = static_cast<double>(policy.base_delay.count()) *
                       std::pow(policy.multiplier, attempt - 1);
        delay = std::min(delay, static_cast<double>(policy.max_delay.count()));
        if (policy.jitter > 0 && delay > 0) {
            std::uniform_real_distribution<double> u(1.0 - policy.jitter, 1.0 + policy.jitter);
            delay *= u(jitter_rng);
        }
        if (delay > 0) {
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay));
        }
    }
}

}  // namespace biasscope
