#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "biasscope/analysis.hpp"
#include "biasscope/gateway.hpp"
#include "biasscope/prompt_forge.hpp"
#include "biasscope/types.hpp"

namespace biasscope {

// ---- variant generation and filtering ----

struct VariantFailure {
    std::string base_id;
    std::string bias_name;
    std::string reason;
};

struct VariantOutcome {
    std::vector<PerturbedTriple> variants;  // sample-major, bias order within a sample
    std::vector<VariantFailure> failed;
};

// One variant per sample for each of the first K biases.
VariantOutcome generate_variants(const std::vector<PreferenceTriple>& benchmark,
                                 const std::vector<BiasSpec>& biases, std::size_t k,
                                 const ModelHandle& teacher,
                                 const PromptForge& forge = PromptForge::builtin());

struct FilterOutcome {
    std::vector<PerturbedTriple> kept;
    std::size_t judged_correct = 0;  // at least one order judged correctly
    std::size_t unparseable = 0;
    std::size_t failed = 0;          // gateway errors
};

// Judges every variant in both presentation orders; keeps it only when both
// verdicts prefer the perturbed rejection.
FilterOutcome adversarial_filter(const std::vector<PreferenceTriple>& benchmark,
                                 const std::vector<PerturbedTriple>& variants,
                                 const ModelHandle& filter_model,
                                 const PromptForge& forge = PromptForge::builtin());

// ---- annotation tasks ----

enum class TaskStatus { pending, confirmed_distinct, confirmed_equivalent, needs_review, resolved };
enum class Verdict { distinct, equivalent, unsure };

std::string_view to_string(TaskStatus s);
TaskStatus parse_task_status(std::string_view s);
std::string_view to_string(Verdict v);
Verdict parse_verdict_label(std::string_view s);  // throws InvalidJudgment

struct Judgment {
    std::string task_id;
    std::string annotator_id;
    Verdict verdict = Verdict::unsure;
    std::string rationale;
    std::string timestamp;

    bool operator==(const Judgment&) const = default;
};

void to_json(json& j, const Judgment& x);
void from_json(const json& j, Judgment& x);

struct AnnotationTask {
    std::string task_id;
    PreferenceTriple base;
    std::string rejected_perturbed;
    std::string bias_name;
    std::optional<std::string> advisory;  // optional model-consensus hint
    TaskStatus status = TaskStatus::pending;
    std::vector<Judgment> judgments;

    bool operator==(const AnnotationTask&) const = default;
};

void to_json(json& j, const AnnotationTask& t);
void from_json(const json& j, AnnotationTask& t);

// Status implied by the judgments: two agreeing first judgments confirm, any
// other first pair goes to review, two agreeing review judgments resolve.
TaskStatus consensus(const std::vector<Judgment>& judgments);
// distinct / equivalent for settled tasks, nullopt otherwise.
std::optional<Verdict> outcome(const AnnotationTask& task);

// Tasks in variant order; `advisory` is keyed by "<base_id>::<bias_name>".
std::vector<AnnotationTask> export_tasks(const std::vector<PreferenceTriple>& benchmark,
                                         const std::vector<PerturbedTriple>& kept,
                                         const std::map<std::string, std::string>& advisory = {});

std::vector<AnnotationTask> load_tasks(const std::filesystem::path& path);
void save_tasks(const std::filesystem::path& path, const std::vector<AnnotationTask>& tasks);
std::vector<Judgment> load_judgments(const std::filesystem::path& path);

// Task set plus the rules for accepting judgments. Not thread-safe.
class TaskBook {
public:
    TaskBook(std::vector<AnnotationTask> tasks, std::vector<std::string> annotators);

    const std::vector<AnnotationTask>& tasks() const noexcept { return tasks_; }
    const std::vector<std::string>& annotators() const noexcept { return annotators_; }
    const AnnotationTask& task(std::string_view id) const;  // throws UnknownTask
    bool has_annotator(std::string_view id) const;

    // Returns false when an identical judgment is already recorded. Throws
    // UnknownTask, UnknownAnnotator, InvalidJudgment or
    // DuplicateJudgmentByAnnotator.
    bool apply(const Judgment& j);

    // Checks `j` without recording it; same errors as apply.
    bool check(const Judgment& j) const;

    std::size_t judgment_count() const;

    // First task the annotator may judge: pending tasks first, then review
    // tasks where they were not part of the first pair.
    const AnnotationTask* next_for(std::string_view annotator) const;
    std::vector<const AnnotationTask*> review_queue(std::string_view annotator = {}) const;

private:
    std::size_t index_of(std::string_view id) const;

    std::vector<AnnotationTask> tasks_;
    std::map<std::string, std::size_t, std::less<>> index_;
    std::vector<std::string> annotators_;
};

// Items x {distinct, equivalent, unsure} counts over the first two judgments
// of every task that has at least two.
CountMatrix agreement_matrix(const std::vector<AnnotationTask>& tasks);
// nullopt when there are no rated items or agreement is undefined.
std::optional<double> agreement_kappa(const std::vector<AnnotationTask>& tasks);

struct FinalizeResult {
    std::vector<PreferenceTriple> benchmark;
    std::size_t input_tasks = 0;
    std::size_t removed_equivalent = 0;
    std::optional<double> kappa;
    CountMatrix matrix;
};

void to_json(json& j, const FinalizeResult& r);  // summary only, without rows

// Throws UnresolvedTasks naming every pending or needs_review task.
FinalizeResult finalize_benchmark(const std::vector<AnnotationTask>& tasks);

// ---- on-disk project ----

// A directory holding tasks.jsonl, annotators.json and an append-only
// journal.jsonl. Task status is rebuilt from the journal on open.
class AnnotationProject {
public:
    static void create(const std::filesystem::path& dir, const std::vector<AnnotationTask>& tasks,
                       const std::vector<std::string>& annotators);
    static AnnotationProject open(const std::filesystem::path& dir);

    const TaskBook& book() const noexcept { return book_; }
    const std::filesystem::path& dir() const noexcept { return dir_; }

    // Validates, appends to the journal, then applies. Returns false for an
    // identical duplicate, which is not journaled again.
    bool submit(const Judgment& j);

    // Returns the number of new judgments.
    std::size_t import_judgments(const std::vector<Judgment>& judgments);

private:
    AnnotationProject(std::filesystem::path dir, TaskBook book);

    std::filesystem::path dir_;
    TaskBook book_;
};

}  // namespace biasscope
