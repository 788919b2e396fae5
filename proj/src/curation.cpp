#include "biasscope/curation.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <spdlog/spdlog.h>

#include "biasscope/dataset.hpp"
#include "biasscope/discovery.hpp"
#include "biasscope/errors.hpp"
#include "biasscope/judge.hpp"
#include "biasscope/parallel.hpp"

namespace biasscope {

namespace fs = std::filesystem;

namespace {

bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

std::string task_key(std::string_view base_id, std::string_view bias) {
    return std::string(base_id) + "::" + std::string(bias);
}

struct Settlement {
    TaskStatus status = TaskStatus::pending;
    std::optional<Verdict> verdict;
};

Settlement settle(const std::vector<Judgment>& js) {
    if (js.size() < 2) return {};
    if (js[0].verdict == js[1].verdict && js[0].verdict != Verdict::unsure) {
        return {js[0].verdict == Verdict::distinct ? TaskStatus::confirmed_distinct
                                                   : TaskStatus::confirmed_equivalent,
                js[0].verdict};
    }
    std::size_t distinct = 0;
    std::size_t equivalent = 0;
    for (std::size_t i = 2; i < js.size(); ++i) {
        if (js[i].verdict == Verdict::distinct && ++distinct == 2) {
            return {TaskStatus::resolved, Verdict::distinct};
        }
        if (js[i].verdict == Verdict::equivalent && ++equivalent == 2) {
            return {TaskStatus::resolved, Verdict::equivalent};
        }
    }
    return {TaskStatus::needs_review, std::nullopt};
}

bool settled(TaskStatus s) {
    return s == TaskStatus::confirmed_distinct || s == TaskStatus::confirmed_equivalent ||
           s == TaskStatus::resolved;
}

bool judged_by(const AnnotationTask& t, std::string_view annotator) {
    return std::any_of(t.judgments.begin(), t.judgments.end(),
                       [&](const Judgment& j) { return j.annotator_id == annotator; });
}

}  // namespace

VariantOutcome generate_variants(const std::vector<PreferenceTriple>& benchmark,
                                 const std::vector<BiasSpec>& biases, std::size_t k,
                                 const ModelHandle& teacher, const PromptForge& forge) {
    if (k < 1) throw ConfigError("curation: K must be at least 1");
    if (biases.size() < k) {
        throw ConfigError("curation: K = " + std::to_string(k) + " but only " +
                          std::to_string(biases.size()) + " biases are available");
    }
    const std::size_t total = benchmark.size() * k;
    std::vector<std::optional<PerturbedTriple>> slots(total);
    auto errors = run_indexed(total, teacher.max_in_flight(), [&](std::size_t i) {
        slots[i] = perturb_one(benchmark[i / k], biases[i % k], teacher, forge);
    });
    VariantOutcome out;
    out.variants.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const GatewayError& e) {
                out.failed.push_back({benchmark[i / k].id, biases[i % k].name, e.what()});
                continue;
            }
        }
        out.variants.push_back(std::move(*slots[i]));
    }
    if (!out.failed.empty()) {
        spdlog::warn("curation: {} of {} variants failed", out.failed.size(), total);
    }
    return out;
}

FilterOutcome adversarial_filter(const std::vector<PreferenceTriple>& benchmark,
                                 const std::vector<PerturbedTriple>& variants,
                                 const ModelHandle& filter_model, const PromptForge& forge) {
    const auto data = materialize(benchmark, variants);
    // Slot 2i: chosen shown first; slot 2i+1: perturbed rejection shown first.
    std::vector<std::optional<bool>> correct(data.size() * 2);
    auto errors = run_indexed(correct.size(), filter_model.max_in_flight(), [&](std::size_t s) {
        const Order order = s % 2 == 0 ? Order::chosen_first : Order::rejected_first;
        correct[s] = judge_pair(data[s / 2], filter_model, order, forge).correct;
    });

    FilterOutcome out;
    for (std::size_t i = 0; i < data.size(); ++i) {
        bool unparseable = false;
        bool failed = false;
        for (std::size_t s = 2 * i; s < 2 * i + 2; ++s) {
            if (!errors[s]) continue;
            try {
                std::rethrow_exception(errors[s]);
            } catch (const UnparseableVerdict&) {
                unparseable = true;
            } catch (const GatewayError& e) {
                spdlog::warn("filter: '{}' failed: {}", variants[i].base_id, e.what());
                failed = true;
            }
        }
        if (failed) {
            ++out.failed;
        } else if (unparseable) {
            ++out.unparseable;
        } else if (!*correct[2 * i] && !*correct[2 * i + 1]) {
            out.kept.push_back(variants[i]);
        } else {
            ++out.judged_correct;
        }
    }
    return out;
}

std::string_view to_string(TaskStatus s) {
    switch (s) {
        case TaskStatus::pending: return "pending";
        case TaskStatus::confirmed_distinct: return "confirmed_distinct";
        case TaskStatus::confirmed_equivalent: return "confirmed_equivalent";
        case TaskStatus::needs_review: return "needs_review";
        case TaskStatus::resolved: return "resolved";
    }
    return "pending";
}

TaskStatus parse_task_status(std::string_view s) {
    for (auto st : {TaskStatus::pending, TaskStatus::confirmed_distinct, TaskStatus::confirmed_equivalent,
                    TaskStatus::needs_review, TaskStatus::resolved}) {
        if (to_string(st) == s) return st;
    }
    throw MalformedRecord("unknown task status '" + std::string(s) + "'");
}

std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::distinct: return "distinct";
        case Verdict::equivalent: return "equivalent";
        case Verdict::unsure: return "unsure";
    }
    return "unsure";
}

Verdict parse_verdict_label(std::string_view s) {
    if (s == "distinct") return Verdict::distinct;
    if (s == "equivalent") return Verdict::equivalent;
    if (s == "unsure") return Verdict::unsure;
    throw InvalidJudgment("verdict must be distinct, equivalent or unsure, got '" + std::string(s) + "'");
}

void to_json(json& j, const Judgment& x) {
    j = json{{"task_id", x.task_id},
             {"annotator_id", x.annotator_id},
             {"verdict", to_string(x.verdict)},
             {"rationale", x.rationale},
             {"timestamp", x.timestamp}};
}

void from_json(const json& j, Judgment& x) {
    x.task_id = j.at("task_id").get<std::string>();
    x.annotator_id = j.at("annotator_id").get<std::string>();
    x.verdict = parse_verdict_label(j.at("verdict").get<std::string>());
    x.rationale = j.value("rationale", std::string{});
    x.timestamp = j.value("timestamp", std::string{});
}

void to_json(json& j, const AnnotationTask& t) {
    j = json{{"task_id", t.task_id},
             {"base", t.base},
             {"rejected_perturbed", t.rejected_perturbed},
             {"bias_name", t.bias_name},
             {"advisory", t.advisory ? json(*t.advisory) : json(nullptr)},
             {"status", to_string(t.status)},
             {"judgments", t.judgments}};
}

void from_json(const json& j, AnnotationTask& t) {
    t.task_id = j.at("task_id").get<std::string>();
    t.base = j.at("base").get<PreferenceTriple>();
    t.rejected_perturbed = j.at("rejected_perturbed").get<std::string>();
    t.bias_name = j.at("bias_name").get<std::string>();
    const auto adv = j.find("advisory");
    t.advisory = adv == j.end() || adv->is_null() ? std::nullopt
                                                  : std::optional<std::string>(adv->get<std::string>());
    t.status = parse_task_status(j.value("status", std::string("pending")));
    t.judgments = j.value("judgments", std::vector<Judgment>{});
}

TaskStatus consensus(const std::vector<Judgment>& judgments) { return settle(judgments).status; }

std::optional<Verdict> outcome(const AnnotationTask& task) { return settle(task.judgments).verdict; }

std::vector<AnnotationTask> export_tasks(const std::vector<PreferenceTriple>& benchmark,
                                         const std::vector<PerturbedTriple>& kept,
                                         const std::map<std::string, std::string>& advisory) {
    const auto idx = index_by_id(benchmark);
    std::vector<AnnotationTask> tasks;
    tasks.reserve(kept.size());
    const std::size_t width = std::max<std::size_t>(5, std::to_string(kept.size()).size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const auto& v = kept[i];
        auto it = idx.find(v.base_id);
        if (it == idx.end()) throw MalformedRecord("unknown base id '" + v.base_id + "'");
        AnnotationTask t;
        const std::string num = std::to_string(i + 1);
        t.task_id = "task-" + std::string(width - num.size(), '0') + num;
        t.base = benchmark[it->second];
        t.rejected_perturbed = v.rejected_perturbed;
        t.bias_name = v.bias_name;
        if (auto a = advisory.find(task_key(v.base_id, v.bias_name)); a != advisory.end()) {
            t.advisory = a->second;
        }
        tasks.push_back(std::move(t));
    }
    return tasks;
}

std::vector<AnnotationTask> load_tasks(const fs::path& path) {
    try {
        return from_jsonl<AnnotationTask>(read_file(path));
    } catch (const json::exception& e) {
        throw MalformedRecord(path.string() + ": " + e.what());
    }
}

void save_tasks(const fs::path& path, const std::vector<AnnotationTask>& tasks) {
    write_file_atomic(path, to_jsonl(tasks));
}

std::vector<Judgment> load_judgments(const fs::path& path) {
    try {
        return from_jsonl<Judgment>(read_file(path));
    } catch (const json::exception& e) {
        throw MalformedRecord(path.string() + ": " + e.what());
    }
}

TaskBook::TaskBook(std::vector<AnnotationTask> tasks, std::vector<std::string> annotators)
    : tasks_(std::move(tasks)), annotators_(std::move(annotators)) {
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        if (!index_.emplace(tasks_[i].task_id, i).second) {
            throw DuplicateId("duplicate task id '" + tasks_[i].task_id + "'");
        }
        tasks_[i].status = consensus(tasks_[i].judgments);
    }
    std::set<std::string> seen;
    for (const auto& a : annotators_) {
        if (a.empty()) throw ConfigError("annotator ids must be non-empty");
        if (!seen.insert(a).second) throw DuplicateId("duplicate annotator id '" + a + "'");
    }
}

std::size_t TaskBook::index_of(std::string_view id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw UnknownTask("unknown task '" + std::string(id) + "'");
    return it->second;
}

const AnnotationTask& TaskBook::task(std::string_view id) const { return tasks_[index_of(id)]; }

bool TaskBook::has_annotator(std::string_view id) const {
    return std::find(annotators_.begin(), annotators_.end(), id) != annotators_.end();
}

bool TaskBook::check(const Judgment& j) const {
    const auto& t = tasks_[index_of(j.task_id)];
    if (!has_annotator(j.annotator_id)) {
        throw UnknownAnnotator("unknown annotator '" + j.annotator_id + "'");
    }
    if (blank(j.rationale)) throw InvalidJudgment("a judgment needs a non-empty rationale");
    for (const auto& prev : t.judgments) {
        if (prev.annotator_id != j.annotator_id) continue;
        if (prev == j) return false;
        throw DuplicateJudgmentByAnnotator("annotator '" + j.annotator_id + "' already judged task '" +
                                           j.task_id + "'");
    }
    if (settled(t.status)) {
        throw InvalidJudgment("task '" + j.task_id + "' is already " + std::string(to_string(t.status)));
    }
    return true;
}

bool TaskBook::apply(const Judgment& j) {
    if (!check(j)) return false;
    auto& t = tasks_[index_of(j.task_id)];
    t.judgments.push_back(j);
    t.status = consensus(t.judgments);
    return true;
}

std::size_t TaskBook::judgment_count() const {
    std::size_t n = 0;
    for (const auto& t : tasks_) n += t.judgments.size();
    return n;
}

const AnnotationTask* TaskBook::next_for(std::string_view annotator) const {
    if (!has_annotator(annotator)) {
        throw UnknownAnnotator("unknown annotator '" + std::string(annotator) + "'");
    }
    for (const auto& t : tasks_) {
        if (t.status == TaskStatus::pending && !judged_by(t, annotator)) return &t;
    }
    for (const auto& t : tasks_) {
        if (t.status == TaskStatus::needs_review && !judged_by(t, annotator)) return &t;
    }
    return nullptr;
}

std::vector<const AnnotationTask*> TaskBook::review_queue(std::string_view annotator) const {
    if (!annotator.empty() && !has_annotator(annotator)) {
        throw UnknownAnnotator("unknown annotator '" + std::string(annotator) + "'");
    }
    std::vector<const AnnotationTask*> out;
    for (const auto& t : tasks_) {
        if (t.status != TaskStatus::needs_review) continue;
        if (!annotator.empty() && judged_by(t, annotator)) continue;
        out.push_back(&t);
    }
    return out;
}

CountMatrix agreement_matrix(const std::vector<AnnotationTask>& tasks) {
    CountMatrix m;
    for (const auto& t : tasks) {
        if (t.judgments.size() < 2) continue;
        std::vector<std::int64_t> row(3, 0);
        for (std::size_t i = 0; i < 2; ++i) ++row[static_cast<std::size_t>(t.judgments[i].verdict)];
        m.push_back(std::move(row));
    }
    return m;
}

std::optional<double> agreement_kappa(const std::vector<AnnotationTask>& tasks) {
    const auto m = agreement_matrix(tasks);
    if (m.empty()) return std::nullopt;
    try {
        return fleiss_kappa(m, 2);
    } catch (const DegenerateAgreement&) {
        return std::nullopt;
    }
}

void to_json(json& j, const FinalizeResult& r) {
    j = json{{"input_tasks", r.input_tasks},
             {"removed_equivalent", r.removed_equivalent},
             {"output_samples", r.benchmark.size()},
             {"rated_items", r.matrix.size()},
             {"kappa", r.kappa ? json(*r.kappa) : json(nullptr)}};
}

FinalizeResult finalize_benchmark(const std::vector<AnnotationTask>& tasks) {
    std::vector<std::string> open;
    for (const auto& t : tasks) {
        if (!settled(consensus(t.judgments))) open.push_back(t.task_id);
    }
    if (!open.empty()) throw UnresolvedTasks(std::move(open));

    FinalizeResult r;
    r.input_tasks = tasks.size();
    for (const auto& t : tasks) {
        if (outcome(t) == Verdict::equivalent) {
            ++r.removed_equivalent;
            continue;
        }
        PreferenceTriple out = t.base;
        out.id = task_key(t.base.id, t.bias_name);
        out.rejected = t.rejected_perturbed;
        r.benchmark.push_back(std::move(out));
    }
    r.matrix = agreement_matrix(tasks);
    r.kappa = agreement_kappa(tasks);
    return r;
}

AnnotationProject::AnnotationProject(fs::path dir, TaskBook book)
    : dir_(std::move(dir)), book_(std::move(book)) {}

void AnnotationProject::create(const fs::path& dir, const std::vector<AnnotationTask>& tasks,
                               const std::vector<std::string>& annotators) {
    if (annotators.size() < 2) throw ConfigError("an annotation project needs at least two annotators");
    std::vector<AnnotationTask> fresh = tasks;
    for (auto& t : fresh) {
        t.judgments.clear();
        t.status = TaskStatus::pending;
    }
    TaskBook check(fresh, annotators);
    fs::create_directories(dir);
    if (fs::exists(dir / "journal.jsonl") && fs::file_size(dir / "journal.jsonl") > 0) {
        throw ConfigError(dir.string() + " already holds judgments");
    }
    save_tasks(dir / "tasks.jsonl", fresh);
    write_file_atomic(dir / "annotators.json", json(annotators).dump(2) + "\n");
    write_file_atomic(dir / "journal.jsonl", "");
}

AnnotationProject AnnotationProject::open(const fs::path& dir) {
    auto tasks = load_tasks(dir / "tasks.jsonl");
    for (auto& t : tasks) t.judgments.clear();
    std::vector<std::string> annotators;
    try {
        annotators = json::parse(read_file(dir / "annotators.json")).get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ConfigError((dir / "annotators.json").string() + ": " + e.what());
    }
    TaskBook book(std::move(tasks), std::move(annotators));
    std::error_code ec;
    if (fs::exists(dir / "journal.jsonl", ec)) {
        const auto journal = load_judgments(dir / "journal.jsonl");
        for (std::size_t i = 0; i < journal.size(); ++i) {
            try {
                book.apply(journal[i]);
            } catch (const Error& e) {
                throw MalformedRecord("journal entry " + std::to_string(i + 1) + ": " + e.what());
            }
        }
    }
    return AnnotationProject(dir, std::move(book));
}

bool AnnotationProject::submit(const Judgment& j) {
    if (!book_.check(j)) return false;
    {
        std::ofstream out(dir_ / "journal.jsonl", std::ios::app | std::ios::binary);
        out << json(j).dump() << '\n';
        out.flush();
        if (!out) throw IoError("cannot append to " + (dir_ / "journal.jsonl").string());
    }
    book_.apply(j);
    return true;
}

std::size_t AnnotationProject::import_judgments(const std::vector<Judgment>& judgments) {
    std::size_t added = 0;
    for (const auto& j : judgments) {
        if (submit(j)) ++added;
    }
    return added;
}

}  // namespace biasscope
