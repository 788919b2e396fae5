#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace biasscope {

// Root of every error the engine raises. `kind()` is a stable machine-readable
// tag used by the CLI and the HTTP service when reporting failures.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define BIASSCOPE_DEFINE_ERROR(Name)                                  \
    class Name : public Error {                                       \
    public:                                                           \
        explicit Name(const std::string& message)                     \
            : Error(#Name, message) {}                                \
    }

// core-model
BIASSCOPE_DEFINE_ERROR(MalformedRecord);
BIASSCOPE_DEFINE_ERROR(DuplicateId);
BIASSCOPE_DEFINE_ERROR(EmptyDataset);
BIASSCOPE_DEFINE_ERROR(EmptyName);
BIASSCOPE_DEFINE_ERROR(DuplicateBias);
BIASSCOPE_DEFINE_ERROR(IoError);

// prompt-forge
BIASSCOPE_DEFINE_ERROR(MissingPlaceholder);
BIASSCOPE_DEFINE_ERROR(UnknownPlaceholder);
BIASSCOPE_DEFINE_ERROR(TemplateError);

// judge / discovery
BIASSCOPE_DEFINE_ERROR(UnparseableVerdict);
BIASSCOPE_DEFINE_ERROR(AllUnparseable);
BIASSCOPE_DEFINE_ERROR(EmptyLibrary);
BIASSCOPE_DEFINE_ERROR(MalformedDetection);
BIASSCOPE_DEFINE_ERROR(UnparseableDecision);

// orchestrator / config
BIASSCOPE_DEFINE_ERROR(ConfigError);
BIASSCOPE_DEFINE_ERROR(CorruptCheckpoint);
BIASSCOPE_DEFINE_ERROR(ConfigMismatch);
BIASSCOPE_DEFINE_ERROR(PhaseFailed);

// analysis
BIASSCOPE_DEFINE_ERROR(DegenerateAgreement);
BIASSCOPE_DEFINE_ERROR(RowSumMismatch);

// curation
BIASSCOPE_DEFINE_ERROR(UnknownTask);
BIASSCOPE_DEFINE_ERROR(UnknownAnnotator);
BIASSCOPE_DEFINE_ERROR(DuplicateJudgmentByAnnotator);
BIASSCOPE_DEFINE_ERROR(InvalidJudgment);

#undef BIASSCOPE_DEFINE_ERROR

// Gateway failures. Transient ones are retried by the gateway; the rest
// surface immediately.
class GatewayError : public Error {
public:
    GatewayError(std::string kind, const std::string& message, bool transient)
        : Error(std::move(kind), message), transient_(transient) {}

    bool transient() const noexcept { return transient_; }

private:
    bool transient_;
};

class Timeout : public GatewayError {
public:
    explicit Timeout(const std::string& m) : GatewayError("Timeout", m, true) {}
};

class RateLimited : public GatewayError {
public:
    explicit RateLimited(const std::string& m) : GatewayError("RateLimited", m, true) {}
};

class TransportError : public GatewayError {
public:
    explicit TransportError(const std::string& m) : GatewayError("TransportError", m, true) {}
};

class MalformedResponse : public GatewayError {
public:
    explicit MalformedResponse(const std::string& m)
        : GatewayError("MalformedResponse", m, false) {}
};

class ReplayMiss : public GatewayError {
public:
    explicit ReplayMiss(const std::string& m) : GatewayError("ReplayMiss", m, false) {}
};

// A run stopped by a phase failure. Keeps the original kind and names the
// checkpoint to resume from.
class RunFailed : public Error {
public:
    RunFailed(const Error& cause, std::string checkpoint)
        : Error(cause.kind(), std::string(cause.what()) + " (resume from " + checkpoint + ")"),
          checkpoint_(std::move(checkpoint)) {}

    const std::string& checkpoint() const noexcept { return checkpoint_; }

private:
    std::string checkpoint_;
};

// Raised by finalize_benchmark when tasks still need human input.
class UnresolvedTasks : public Error {
public:
    explicit UnresolvedTasks(std::vector<std::string> ids);

    const std::vector<std::string>& task_ids() const noexcept { return ids_; }

private:
    std::vector<std::string> ids_;
};

}  // namespace biasscope
