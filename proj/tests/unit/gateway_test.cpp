#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "httplib.h"

#include "biasscope/dataset.hpp"
#include "biasscope/errors.hpp"
#include "biasscope/gateway.hpp"
#include "biasscope/parallel.hpp"
#include "test_support.hpp"

namespace biasscope {
namespace {

using testing::fast_options;
using testing::TempDir;

ModelRef target(std::string id = "m") { return ModelRef{ModelRole::target, std::move(id), "", "BIASSCOPE_API_KEY"}; }

TEST(RequestDigest, StableAndSensitive) {
    GenParams p;
    const auto d = request_digest("m", "hello", p);
    EXPECT_EQ(d.size(), 64u);
    EXPECT_EQ(d, request_digest("m", "hello", p));
    EXPECT_NE(d, request_digest("n", "hello", p));
    EXPECT_NE(d, request_digest("m", "hello!", p));
    GenParams q = p;
    q.seed = 1;
    EXPECT_NE(d, request_digest("m", "hello", q));
    q = p;
    q.temperature = 0.5;
    EXPECT_NE(d, request_digest("m", "hello", q));
    q = p;
    q.max_output = 10;
    EXPECT_NE(d, request_digest("m", "hello", q));
}

TEST(ModelRef, Validation) {
    EXPECT_NO_THROW(validate_model_ref(target(), false));
    EXPECT_THROW(validate_model_ref(target(""), false), ConfigError);
    EXPECT_THROW(validate_model_ref(target(), true), ConfigError);
    ModelRef m = target();
    m.endpoint = "ftp://x";
    EXPECT_THROW(validate_model_ref(m, false), ConfigError);
    m.endpoint = "https://api.example.com/v1";
    EXPECT_NO_THROW(validate_model_ref(m, true));
}

TEST(Gateway, CacheServesRepeatRequests) {
    TempDir dir;
    auto opts = fast_options();
    opts.cache_dir = dir / "cache";
    auto backend = std::make_shared<ScriptedBackend>([](const ScriptedRequest& r) { return "echo:" + r.prompt; });
    {
        Gateway gw(backend, opts);
        auto a = gw.complete(target(), "p1", {});
        EXPECT_FALSE(a.cached);
        EXPECT_EQ(a.attempt, 1);
        auto b = gw.complete(target(), "p1", {});
        EXPECT_TRUE(b.cached);
        EXPECT_EQ(b.text, "echo:p1");
        EXPECT_EQ(gw.backend_calls(), 1u);
    }
    // A fresh gateway over the same directory still hits.
    Gateway again(backend, opts);
    EXPECT_TRUE(again.complete(target(), "p1", {}).cached);
    EXPECT_EQ(backend->calls(), 1u);
    const auto digest = request_digest("m", "p1", {});
    auto doc = json::parse(read_file(dir / "cache" / (digest + ".json")));
    EXPECT_EQ(doc.at("request").at("prompt"), "p1");
    EXPECT_EQ(doc.at("response"), "echo:p1");
}

TEST(Gateway, CorruptCacheEntryIsAMiss) {
    TempDir dir;
    auto opts = fast_options();
    opts.cache_dir = dir / "cache";
    std::filesystem::create_directories(dir / "cache");
    write_file_atomic(dir / "cache" / (request_digest("m", "p", {}) + ".json"), "{trunc");
    auto backend = std::make_shared<ScriptedBackend>([](const ScriptedRequest&) { return "fresh"; });
    Gateway gw(backend, opts);
    EXPECT_EQ(gw.complete(target(), "p", {}).text, "fresh");
}

TEST(Gateway, RetriesTransientFailures) {
    auto backend = std::make_shared<ScriptedBackend>([](const ScriptedRequest& r) -> std::string {
        if (r.call_index == 0) throw Timeout("slow");
        if (r.call_index == 1) throw RateLimited("429");
        if (r.call_index == 2) throw TransportError("reset");
        return "ok";
    });
    Gateway gw(backend, fast_options());
    auto c = gw.complete(target(), "p", {});
    EXPECT_EQ(c.text, "ok");
    EXPECT_EQ(c.attempt, 4);
    EXPECT_EQ(gw.backend_calls(), 4u);
}

TEST(Gateway, GivesUpAfterMaxAttempts) {
    auto backend = std::make_shared<ScriptedBackend>([](const ScriptedRequest&) -> std::string {
        throw TransportError("down");
    });
    auto opts = fast_options();
    opts.retry.max_attempts = 3;
    Gateway gw(backend, opts);
    EXPECT_THROW(gw.complete(target(), "p", {}), TransportError);
    EXPECT_EQ(backend->calls(), 3u);
}

TEST(Gateway, NonTransientFailsImmediately) {
    auto backend = std::make_shared<ScriptedBackend>([](const ScriptedRequest&) -> std::string {
        throw MalformedResponse("bad");
    });
    Gateway gw(backend, fast_options());
    EXPECT_THROW(gw.complete(target(), "p", {}), MalformedResponse);
    EXPECT_EQ(backend->calls(), 1u);
}

TEST(Gateway, ReplayMissAndHit) {
    auto replay = std::make_shared<ReplayBackend>();
    replay->add(request_digest("m", "known", {}), "recorded");
    Gateway gw(replay, fast_options());
    EXPECT_EQ(gw.complete(target(), "known", {}).text, "recorded");
    EXPECT_THROW(gw.complete(target(), "unknown", {}), ReplayMiss);
    EXPECT_EQ(gw.backend_calls(), 2u);
}

TEST(Gateway, RecordThenReplayRoundTrip) {
    TempDir dir;
    auto opts = fast_options();
    opts.record_path = dir / "rec" / "fixtures.jsonl";
    auto backend = std::make_shared<ScriptedBackend>([](const ScriptedRequest& r) { return "r:" + r.prompt; });
    {
        Gateway gw(backend, opts);
        for (int i = 0; i < 5; ++i) gw.complete(target(), "p" + std::to_string(i % 3), {});
    }
    auto replay = std::make_shared<ReplayBackend>(ReplayBackend::from_file(*opts.record_path));
    EXPECT_EQ(replay->size(), 3u);
    Gateway gw(replay, fast_options());
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(gw.complete(target(), "p" + std::to_string(i), {}).text, "r:p" + std::to_string(i));
    }
}

TEST(Gateway, ReplayFileErrorsNameLine) {
    TempDir dir;
    write_file_atomic(dir / "f.jsonl", "{\"digest\":\"a\",\"response_text\":\"x\"}\n{\"digest\":1}\n");
    try {
        ReplayBackend::from_file(dir / "f.jsonl");
        FAIL();
    } catch (const MalformedRecord& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(Gateway, BoundsConcurrency) {
    std::atomic<int> live{0};
    std::atomic<int> peak{0};
    auto backend = std::make_shared<ScriptedBackend>([&](const ScriptedRequest& r) {
        int now = ++live;
        int p = peak.load();
        while (now > p && !peak.compare_exchange_weak(p, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
        --live;
        return r.prompt;
    });
    Gateway gw(backend, fast_options(3));
    auto errors = run_indexed(40, 12, [&](std::size_t i) { gw.complete(target(), std::to_string(i), {}); });
    for (auto& e : errors) EXPECT_EQ(e, nullptr);
    EXPECT_LE(peak.load(), 3);
    EXPECT_LE(gw.peak_in_flight(), 3u);
    EXPECT_GE(gw.peak_in_flight(), 1u);
    EXPECT_EQ(gw.backend_calls(), 40u);
}

TEST(RunIndexed, CollectsPerItemErrors) {
    std::vector<int> out(10, 0);
    auto errors = run_indexed(10, 4, [&](std::size_t i) {
        if (i == 3) throw std::runtime_error("x");
        out[i] = static_cast<int>(i) * 2;
    });
    for (std::size_t i = 0; i < 10; ++i) {
        if (i == 3) {
            EXPECT_NE(errors[i], nullptr);
        } else {
            EXPECT_EQ(errors[i], nullptr);
            EXPECT_EQ(out[i], static_cast<int>(i) * 2);
        }
    }
}

class LiveServer {
public:
    LiveServer() {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits_;
            last_auth_ = req.get_header_value("Authorization");
            auto body = json::parse(req.body);
            const std::string prompt = body["messages"][0]["content"];
            if (prompt == "rate" && hits_ == 1) {
                res.status = 429;
                return;
            }
            if (prompt == "bad-request") {
                res.status = 400;
                res.set_content("nope", "text/plain");
                return;
            }
            if (prompt == "garbage") {
                res.set_content("{\"choices\": []}", "application/json");
                return;
            }
            json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "re:" + prompt}}}}}},
                          {"usage", {{"prompt_tokens", 3}, {"completion_tokens", 5}}},
                          {"model_seen", body["model"]}};
            res.set_content(reply.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LiveServer() {
        server_.stop();
        thread_.join();
    }

    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    int hits() const { return hits_; }
    std::string last_auth() const { return last_auth_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> hits_{0};
    std::string last_auth_;
};

TEST(LiveBackend, TalksToChatCompletions) {
    LiveServer server;
    ::setenv("BIASSCOPE_TEST_KEY", "sekret", 1);
    ModelRef m{ModelRole::target, "judge-x", server.endpoint(), "BIASSCOPE_TEST_KEY"};
    Gateway gw(std::make_shared<LiveBackend>(std::chrono::seconds(5)), fast_options());
    auto c = gw.complete(m, "hello", {});
    EXPECT_EQ(c.text, "re:hello");
    ASSERT_TRUE(c.usage.has_value());
    EXPECT_EQ(c.usage->prompt_tokens, 3);
    EXPECT_EQ(c.usage->completion_tokens, 5);
    EXPECT_EQ(server.last_auth(), "Bearer sekret");
}

TEST(LiveBackend, MapsHttpFailures) {
    LiveServer server;
    ModelRef m{ModelRole::target, "judge-x", server.endpoint(), "BIASSCOPE_TEST_KEY"};
    Gateway gw(std::make_shared<LiveBackend>(std::chrono::seconds(5)), fast_options());
    auto c = gw.complete(m, "rate", {});
    EXPECT_EQ(c.text, "re:rate");
    EXPECT_EQ(c.attempt, 2);
    try {
        gw.complete(m, "bad-request", {});
        FAIL();
    } catch (const GatewayError& e) {
        EXPECT_EQ(e.kind(), "HttpError");
        EXPECT_FALSE(e.transient());
    }
    EXPECT_THROW(gw.complete(m, "garbage", {}), MalformedResponse);
}

TEST(LiveBackend, UnreachableHostIsTransportError) {
    // Bind and release a port so nothing listens there.
    int port;
    {
        httplib::Server s;
        port = s.bind_to_any_port("127.0.0.1");
    }
    ModelRef m{ModelRole::target, "x", "http://127.0.0.1:" + std::to_string(port) + "/v1", "NONE"};
    auto opts = fast_options();
    opts.retry.max_attempts = 2;
    Gateway gw(std::make_shared<LiveBackend>(std::chrono::seconds(2)), opts);
    try {
        gw.complete(m, "p", {});
        FAIL();
    } catch (const GatewayError& e) {
        EXPECT_TRUE(e.transient());
    }
    EXPECT_EQ(gw.backend_calls(), 2u);
}

}  // namespace
}  // namespace biasscope
