#pragma once

#include <functional>
#include <memory>
#include <string>

#include "biasscope/curation.hpp"

namespace biasscope {

struct ServiceOptions {
    // Hide bias names and model hints from annotators who have not yet judged
    // the task.
    bool blind = true;
    // Timestamp source for judgments; UTC ISO-8601 seconds when unset.
    std::function<std::string()> clock;
};

// HTTP API over an AnnotationProject:
//   GET  /api/tasks/next?annotator=ID
//   GET  /api/tasks/{id}[?annotator=ID]
//   POST /api/judgments   {task_id, annotator_id, verdict, rationale}
//   GET  /api/stats
//   GET  /api/review-queue[?annotator=ID]
// Writes go through one lock; the journal is appended before state changes.
class AnnotationService {
public:
    AnnotationService(AnnotationProject project, ServiceOptions options = {});
    ~AnnotationService();

    AnnotationService(const AnnotationService&) = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    // Binds and serves on a background thread. Port 0 picks a free port;
    // returns the bound port.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    // Serves on the calling thread until stop().
    void listen(const std::string& host, int port);
    void stop();

    json stats() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::string utc_timestamp();

}  // namespace biasscope
