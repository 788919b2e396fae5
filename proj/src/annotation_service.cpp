#include "biasscope/annotation_service.hpp"

#include <ctime>
#include <shared_mutex>
#include <thread>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

#include <spdlog/spdlog.h>

#include "biasscope/errors.hpp"

namespace biasscope {

namespace {

int status_for(const Error& e) {
    const auto& k = e.kind();
    if (k == "UnknownTask" || k == "UnknownAnnotator") return 404;
    if (k == "DuplicateJudgmentByAnnotator") return 409;
    if (k == "InvalidJudgment" || k == "MalformedRecord") return 400;
    return 500;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view kind, std::string_view message) {
    send_json(res, status, json{{"error", kind}, {"message", message}});
}

bool judged_by(const AnnotationTask& t, std::string_view annotator) {
    for (const auto& j : t.judgments) {
        if (j.annotator_id == annotator) return true;
    }
    return false;
}

}  // namespace

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct AnnotationService::Impl {
    AnnotationProject project;
    ServiceOptions options;
    mutable std::shared_mutex mutex;
    httplib::Server server;
    std::thread thread;

    Impl(AnnotationProject p, ServiceOptions o) : project(std::move(p)), options(std::move(o)) {
        if (!options.clock) options.clock = utc_timestamp;
        routes();
    }

    json view(const AnnotationTask& t, std::string_view annotator) const {
        json v{{"task_id", t.task_id},
               {"instruction", t.base.instruction},
               {"answer_a", t.base.chosen},
               {"answer_b", t.rejected_perturbed},
               {"category", to_string(t.base.category)},
               {"status", to_string(t.status)},
               {"judgment_count", t.judgments.size()}};
        const bool reveal = !options.blind || (!annotator.empty() && judged_by(t, annotator));
        if (reveal) {
            v["bias_name"] = t.bias_name;
            if (t.advisory) v["advisory"] = *t.advisory;
        }
        return v;
    }

    json stats() const {
        std::shared_lock lock(mutex);
        const auto& book = project.book();
        json by_status = json::object();
        for (auto s : {TaskStatus::pending, TaskStatus::confirmed_distinct, TaskStatus::confirmed_equivalent,
                       TaskStatus::needs_review, TaskStatus::resolved}) {
            by_status[std::string(to_string(s))] = 0;
        }
        json per_annotator = json::object();
        for (const auto& a : book.annotators()) per_annotator[a] = 0;
        for (const auto& t : book.tasks()) {
            by_status[std::string(to_string(t.status))] = by_status[std::string(to_string(t.status))].get<int>() + 1;
            for (const auto& j : t.judgments) {
                per_annotator[j.annotator_id] = per_annotator[j.annotator_id].get<int>() + 1;
            }
        }
        const auto kappa = agreement_kappa(book.tasks());
        return json{{"tasks", book.tasks().size()},
                    {"judgments", book.judgment_count()},
                    {"by_status", by_status},
                    {"per_annotator", per_annotator},
                    {"rated_items", agreement_matrix(book.tasks()).size()},
                    {"kappa", kappa ? json(*kappa) : json(nullptr)},
                    {"blind", options.blind}};
    }

    template <class Fn>
    auto guarded(Fn fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const Error& e) {
                send_error(res, status_for(e), e.kind(), e.what());
            } catch (const json::exception& e) {
                send_error(res, 400, "MalformedRequest", e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, "InternalError", e.what());
            }
        };
    }

    void routes() {
        server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                    {"Access-Control-Allow-Headers", "Content-Type"}});
        server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

        server.Get("/api/tasks/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
            if (!req.has_param("annotator") || req.get_param_value("annotator").empty()) {
                send_error(res, 400, "MissingParameter", "annotator is required");
                return;
            }
            const auto annotator = req.get_param_value("annotator");
            std::shared_lock lock(mutex);
            const auto* t = project.book().next_for(annotator);
            send_json(res, 200, json{{"task", t ? view(*t, annotator) : json(nullptr)}});
        }));

        server.Get(R"(/api/tasks/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            const auto annotator = req.get_param_value("annotator");
            std::shared_lock lock(mutex);
            if (!annotator.empty() && !project.book().has_annotator(annotator)) {
                throw UnknownAnnotator("unknown annotator '" + annotator + "'");
            }
            send_json(res, 200, view(project.book().task(id), annotator));
        }));

        server.Post("/api/judgments", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const json body = json::parse(req.body);
            if (!body.is_object()) throw InvalidJudgment("body must be a JSON object");
            for (const char* key : {"task_id", "annotator_id", "verdict", "rationale"}) {
                if (!body.contains(key) || !body[key].is_string()) {
                    throw InvalidJudgment(std::string("missing string field '") + key + "'");
                }
            }
            Judgment j;
            j.task_id = body["task_id"].get<std::string>();
            j.annotator_id = body["annotator_id"].get<std::string>();
            j.verdict = parse_verdict_label(body["verdict"].get<std::string>());
            j.rationale = body["rationale"].get<std::string>();
            std::unique_lock lock(mutex);
            j.timestamp = options.clock();
            const bool added = project.submit(j);
            const auto& t = project.book().task(j.task_id);
            send_json(res, added ? 201 : 200,
                      json{{"task_id", t.task_id}, {"status", to_string(t.status)}, {"accepted", added}});
        }));

        server.Get("/api/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, stats());
        }));

        server.Get("/api/review-queue", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto annotator = req.get_param_value("annotator");
            std::shared_lock lock(mutex);
            json tasks = json::array();
            for (const auto* t : project.book().review_queue(annotator)) tasks.push_back(view(*t, annotator));
            send_json(res, 200, json{{"tasks", tasks}});
        }));
    }
};

AnnotationService::AnnotationService(AnnotationProject project, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(project), std::move(options))) {}

AnnotationService::~AnnotationService() { stop(); }

int AnnotationService::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    spdlog::info("annotation service listening on {}:{}", host, bound);
    return bound;
}

void AnnotationService::listen(const std::string& host, int port) {
    spdlog::info("annotation service listening on {}:{}", host, port);
    if (!impl_->server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

void AnnotationService::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

json AnnotationService::stats() const { return impl_->stats(); }

}  // namespace biasscope
