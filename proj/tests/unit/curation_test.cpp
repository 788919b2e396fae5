#include <gtest/gtest.h>

#include "httplib.h"

#include "biasscope/annotation_service.hpp"
#include "biasscope/curation.hpp"
#include "biasscope/dataset.hpp"
#include "biasscope/errors.hpp"
#include "test_support.hpp"

namespace biasscope {
namespace {

using testing::bias;
using testing::ScriptedRig;
using testing::TempDir;

Judgment judgment(std::string task, std::string who, Verdict v, std::string why = "because") {
    return Judgment{std::move(task), std::move(who), v, std::move(why), "2026-01-01T00:00:00Z"};
}

std::vector<Judgment> verdicts(std::initializer_list<Verdict> vs) {
    std::vector<Judgment> out;
    int i = 0;
    for (auto v : vs) out.push_back(judgment("t", "a" + std::to_string(i++), v));
    return out;
}

constexpr auto D = Verdict::distinct;
constexpr auto E = Verdict::equivalent;
constexpr auto U = Verdict::unsure;

TEST(Consensus, Rules) {
    EXPECT_EQ(consensus({}), TaskStatus::pending);
    EXPECT_EQ(consensus(verdicts({D})), TaskStatus::pending);
    EXPECT_EQ(consensus(verdicts({D, D})), TaskStatus::confirmed_distinct);
    EXPECT_EQ(consensus(verdicts({E, E})), TaskStatus::confirmed_equivalent);
    EXPECT_EQ(consensus(verdicts({U, U})), TaskStatus::needs_review);
    EXPECT_EQ(consensus(verdicts({D, E})), TaskStatus::needs_review);
    EXPECT_EQ(consensus(verdicts({D, E, D})), TaskStatus::needs_review);
    EXPECT_EQ(consensus(verdicts({D, E, D, E})), TaskStatus::needs_review);
    EXPECT_EQ(consensus(verdicts({D, E, E, U, E})), TaskStatus::resolved);
    EXPECT_EQ(consensus(verdicts({D, U, D, D})), TaskStatus::resolved);

    AnnotationTask t;
    t.judgments = verdicts({D, E, E, E});
    EXPECT_EQ(outcome(t), Verdict::equivalent);
    t.judgments = verdicts({D, E});
    EXPECT_FALSE(outcome(t).has_value());
}

TEST(Labels, ParseAndPrint) {
    for (auto v : {D, E, U}) EXPECT_EQ(parse_verdict_label(to_string(v)), v);
    EXPECT_THROW(parse_verdict_label("same"), InvalidJudgment);
    for (auto s : {TaskStatus::pending, TaskStatus::confirmed_distinct, TaskStatus::confirmed_equivalent,
                   TaskStatus::needs_review, TaskStatus::resolved}) {
        EXPECT_EQ(parse_task_status(to_string(s)), s);
    }
}

std::vector<AnnotationTask> sample_tasks(std::size_t n) {
    auto base = testing::flawed_triples(n);
    std::vector<PerturbedTriple> kept;
    for (const auto& t : base) kept.push_back({t.id, "x bias", t.rejected + " (styled)", {}});
    return export_tasks(base, kept, {{"q-0::x bias", "models think distinct"}});
}

TEST(Export, IdsAdvisoryAndRoundTrip) {
    auto tasks = sample_tasks(3);
    ASSERT_EQ(tasks.size(), 3u);
    EXPECT_EQ(tasks[0].task_id, "task-00001");
    EXPECT_EQ(tasks[2].task_id, "task-00003");
    EXPECT_EQ(tasks[0].advisory, "models think distinct");
    EXPECT_FALSE(tasks[1].advisory.has_value());
    EXPECT_EQ(tasks[1].status, TaskStatus::pending);

    TempDir dir;
    save_tasks(dir / "t.jsonl", tasks);
    EXPECT_EQ(load_tasks(dir / "t.jsonl"), tasks);
    EXPECT_THROW(export_tasks({}, {{"zz", "x", "y", {}}}), MalformedRecord);
}

TEST(TaskBook, ApplyRules) {
    TaskBook book(sample_tasks(2), {"ann", "bob", "cy"});
    const auto id = book.tasks()[0].task_id;
    EXPECT_THROW(book.apply(judgment("task-99999", "ann", D)), UnknownTask);
    EXPECT_THROW(book.apply(judgment(id, "eve", D)), UnknownAnnotator);
    EXPECT_THROW(book.apply(judgment(id, "ann", D, "   ")), InvalidJudgment);

    EXPECT_TRUE(book.apply(judgment(id, "ann", D)));
    EXPECT_FALSE(book.apply(judgment(id, "ann", D)));
    EXPECT_THROW(book.apply(judgment(id, "ann", E)), DuplicateJudgmentByAnnotator);
    EXPECT_EQ(book.judgment_count(), 1u);

    EXPECT_TRUE(book.apply(judgment(id, "bob", D)));
    EXPECT_EQ(book.task(id).status, TaskStatus::confirmed_distinct);
    EXPECT_THROW(book.apply(judgment(id, "cy", D)), InvalidJudgment);
}

TEST(TaskBook, QueueOrderAndReview) {
    TaskBook book(sample_tasks(2), {"a", "b", "c", "d"});
    const auto t1 = book.tasks()[0].task_id;
    const auto t2 = book.tasks()[1].task_id;
    EXPECT_EQ(book.next_for("a")->task_id, t1);
    book.apply(judgment(t1, "a", D));
    EXPECT_EQ(book.next_for("a")->task_id, t2);
    book.apply(judgment(t1, "b", E));
    EXPECT_EQ(book.task(t1).status, TaskStatus::needs_review);

    // c sees pending work before review work.
    EXPECT_EQ(book.next_for("c")->task_id, t2);
    book.apply(judgment(t2, "c", D));
    book.apply(judgment(t2, "d", D));
    EXPECT_EQ(book.next_for("c")->task_id, t1);
    EXPECT_EQ(book.next_for("a"), nullptr);

    EXPECT_EQ(book.review_queue().size(), 1u);
    EXPECT_TRUE(book.review_queue("a").empty());
    EXPECT_EQ(book.review_queue("c").size(), 1u);
    EXPECT_THROW(book.next_for("zed"), UnknownAnnotator);

    book.apply(judgment(t1, "c", E));
    book.apply(judgment(t1, "d", E));
    EXPECT_EQ(book.task(t1).status, TaskStatus::resolved);
    EXPECT_TRUE(book.review_queue().empty());
}

TEST(TaskBook, RejectsBadAnnotatorLists) {
    EXPECT_THROW(TaskBook(sample_tasks(1), {"a", "a"}), DuplicateId);
    EXPECT_THROW(TaskBook(sample_tasks(1), {"a", ""}), ConfigError);
}

TEST(Agreement, MatrixAndKappa) {
    auto tasks = sample_tasks(4);
    tasks[0].judgments = verdicts({D, D});
    tasks[1].judgments = verdicts({E, E});
    tasks[2].judgments = verdicts({D, E, E, E});
    tasks[3].judgments = verdicts({D});
    auto m = agreement_matrix(tasks);
    EXPECT_EQ(m, (CountMatrix{{2, 0, 0}, {0, 2, 0}, {1, 1, 0}}));
    ASSERT_TRUE(agreement_kappa(tasks).has_value());
    EXPECT_NEAR(*agreement_kappa(tasks), fleiss_kappa(m, 2), 1e-15);

    tasks[2].judgments = verdicts({D, D});
    tasks[1].judgments = verdicts({D, D});
    EXPECT_FALSE(agreement_kappa(tasks).has_value());
    EXPECT_FALSE(agreement_kappa({}).has_value());
}

TEST(Finalize, DropsEquivalentAndReportsOpenTasks) {
    auto tasks = sample_tasks(4);
    tasks[0].judgments = verdicts({D, D});
    tasks[1].judgments = verdicts({E, E});
    tasks[2].judgments = verdicts({D, E, D, D});
    tasks[3].judgments = verdicts({D, E});
    try {
        finalize_benchmark(tasks);
        FAIL();
    } catch (const UnresolvedTasks& e) {
        EXPECT_EQ(e.task_ids(), std::vector<std::string>{tasks[3].task_id});
    }
    tasks[3].judgments = verdicts({D, E, E, E});
    auto r = finalize_benchmark(tasks);
    EXPECT_EQ(r.input_tasks, 4u);
    EXPECT_EQ(r.removed_equivalent, 2u);
    ASSERT_EQ(r.benchmark.size(), 2u);
    EXPECT_EQ(r.benchmark[0].id, "q-0::x bias");
    EXPECT_EQ(r.benchmark[0].rejected, tasks[0].rejected_perturbed);
    EXPECT_EQ(r.benchmark[0].chosen, tasks[0].base.chosen);
    EXPECT_TRUE(r.kappa.has_value());
}

TEST(Variants, SampleMajorAndFailures) {
    ScriptedWorld world;
    ScriptedRig rig(world.rule());
    auto bench = testing::flawed_triples(3);
    std::vector<BiasSpec> biases{bias("a bias"), bias("b bias"), bias("c bias")};
    auto out = generate_variants(bench, biases, 2, rig.handle(ModelRole::teacher));
    ASSERT_EQ(out.variants.size(), 6u);
    EXPECT_EQ(out.variants[0].base_id, "q-0");
    EXPECT_EQ(out.variants[0].bias_name, "a bias");
    EXPECT_EQ(out.variants[1].bias_name, "b bias");
    EXPECT_EQ(out.variants[2].base_id, "q-1");
    EXPECT_THROW(generate_variants(bench, biases, 0, rig.handle()), ConfigError);
    EXPECT_THROW(generate_variants(bench, biases, 4, rig.handle()), ConfigError);

    ScriptedRig flaky([](const ScriptedRequest& r) -> std::string {
        if (r.prompt.find("b bias:") != std::string::npos) throw MalformedResponse("x");
        return "rewritten";
    });
    auto partial = generate_variants(bench, biases, 2, flaky.handle());
    EXPECT_EQ(partial.variants.size(), 3u);
    ASSERT_EQ(partial.failed.size(), 3u);
    EXPECT_EQ(partial.failed[0].bias_name, "b bias");
}

TEST(Filter, KeepsOnlyVariantsThatFoolBothOrders) {
    ScriptedWorld world;
    world.susceptible = {"lure bias"};
    ScriptedRig rig(world.rule());
    auto bench = testing::flawed_triples(4);
    std::vector<BiasSpec> biases{bias("lure bias"), bias("inert bias")};
    auto variants = generate_variants(bench, biases, 2, rig.handle(ModelRole::teacher)).variants;
    auto out = adversarial_filter(bench, variants, rig.handle(ModelRole::filter));
    ASSERT_EQ(out.kept.size(), 4u);
    for (const auto& v : out.kept) EXPECT_EQ(v.bias_name, "lure bias");
    EXPECT_EQ(out.judged_correct, 4u);
    EXPECT_EQ(out.unparseable, 0u);

    // A judge that always says "1" is fooled in exactly one order: nothing kept.
    ScriptedRig positional([](const ScriptedRequest&) { return std::string("Decision: 1"); });
    auto none = adversarial_filter(bench, variants, positional.handle());
    EXPECT_TRUE(none.kept.empty());
    EXPECT_EQ(none.judged_correct, variants.size());
}

TEST(Project, JournalReplayAndIdempotentImport) {
    TempDir dir;
    auto tasks = sample_tasks(3);
    EXPECT_THROW(AnnotationProject::create(dir / "p", tasks, {"solo"}), ConfigError);
    AnnotationProject::create(dir / "p", tasks, {"a", "b", "c"});
    auto project = AnnotationProject::open(dir / "p");
    std::vector<Judgment> batch{judgment(tasks[0].task_id, "a", D), judgment(tasks[0].task_id, "b", D),
                                judgment(tasks[1].task_id, "a", E)};
    EXPECT_EQ(project.import_judgments(batch), 3u);
    EXPECT_EQ(project.import_judgments(batch), 0u);
    EXPECT_EQ(load_judgments(dir / "p" / "journal.jsonl").size(), 3u);

    auto reopened = AnnotationProject::open(dir / "p");
    EXPECT_EQ(reopened.book().tasks(), project.book().tasks());
    EXPECT_EQ(reopened.book().task(tasks[0].task_id).status, TaskStatus::confirmed_distinct);
    EXPECT_THROW(AnnotationProject::create(dir / "p", tasks, {"a", "b"}), ConfigError);
}

// ---- HTTP ----

struct ServiceRig {
    TempDir dir;
    std::unique_ptr<AnnotationService> service;
    std::unique_ptr<httplib::Client> client;
    std::vector<AnnotationTask> tasks = sample_tasks(3);

    explicit ServiceRig(bool blind = true) {
        AnnotationProject::create(dir / "p", tasks, {"a", "b", "c", "d"});
        ServiceOptions opts;
        opts.blind = blind;
        opts.clock = [] { return std::string("2026-01-01T00:00:00Z"); };
        service = std::make_unique<AnnotationService>(AnnotationProject::open(dir / "p"), opts);
        const int port = service->start("127.0.0.1", 0);
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
    }

    std::pair<int, json> get(const std::string& path) {
        auto res = client->Get(path);
        if (!res) return {-1, json()};
        return {res->status, json::parse(res->body)};
    }

    std::pair<int, json> post(const json& body) {
        auto res = client->Post("/api/judgments", body.dump(), "application/json");
        if (!res) return {-1, json()};
        return {res->status, json::parse(res->body)};
    }

    json submit(const std::string& task, const std::string& who, const std::string& verdict, int expect) {
        auto [status, body] = post({{"task_id", task}, {"annotator_id", who}, {"verdict", verdict}, {"rationale", "r"}});
        EXPECT_EQ(status, expect) << body.dump();
        return body;
    }
};

TEST(Service, AnnotationFlow) {
    ServiceRig rig;
    const auto t1 = rig.tasks[0].task_id;

    auto [s0, next] = rig.get("/api/tasks/next?annotator=a");
    ASSERT_EQ(s0, 200);
    EXPECT_EQ(next["task"]["task_id"], t1);
    EXPECT_EQ(next["task"]["answer_a"], rig.tasks[0].base.chosen);
    EXPECT_EQ(next["task"]["answer_b"], rig.tasks[0].rejected_perturbed);
    EXPECT_FALSE(next["task"].contains("bias_name"));
    EXPECT_FALSE(next["task"].contains("advisory"));

    EXPECT_EQ(rig.submit(t1, "a", "distinct", 201)["status"], "pending");
    EXPECT_EQ(rig.submit(t1, "a", "distinct", 200)["accepted"], false);
    EXPECT_EQ(rig.submit(t1, "a", "equivalent", 409)["error"], "DuplicateJudgmentByAnnotator");

    // After judging, the annotator may see the hidden fields.
    auto [s1, seen] = rig.get("/api/tasks/" + t1 + "?annotator=a");
    ASSERT_EQ(s1, 200);
    EXPECT_EQ(seen["bias_name"], "x bias");
    EXPECT_EQ(seen["advisory"], "models think distinct");
    auto [s2, other] = rig.get("/api/tasks/" + t1 + "?annotator=b");
    EXPECT_FALSE(other.contains("bias_name"));

    EXPECT_EQ(rig.submit(t1, "b", "equivalent", 201)["status"], "needs_review");
    auto [s3, queue] = rig.get("/api/review-queue?annotator=c");
    ASSERT_EQ(queue["tasks"].size(), 1u);
    EXPECT_EQ(queue["tasks"][0]["task_id"], t1);
    auto [s4, queue_a] = rig.get("/api/review-queue?annotator=a");
    EXPECT_TRUE(queue_a["tasks"].empty());

    rig.submit(t1, "c", "distinct", 201);
    EXPECT_EQ(rig.submit(t1, "d", "distinct", 201)["status"], "resolved");
    rig.submit(t1, "d", "distinct", 200);

    auto [s5, stats] = rig.get("/api/stats");
    ASSERT_EQ(s5, 200);
    EXPECT_EQ(stats["tasks"], 3);
    EXPECT_EQ(stats["judgments"], 4);
    EXPECT_EQ(stats["by_status"]["resolved"], 1);
    EXPECT_EQ(stats["by_status"]["pending"], 2);
    EXPECT_EQ(stats["per_annotator"]["a"], 1);
    EXPECT_EQ(stats["rated_items"], 1);
    // One split item over two categories: observed 0, expected 0.5.
    EXPECT_DOUBLE_EQ(stats["kappa"].get<double>(), -1.0);
    EXPECT_EQ(stats["blind"], true);

    // Everything went through the journal.
    auto reopened = AnnotationProject::open(rig.dir / "p");
    EXPECT_EQ(reopened.book().task(t1).status, TaskStatus::resolved);
    EXPECT_EQ(reopened.book().judgment_count(), 4u);
}

TEST(Service, Errors) {
    ServiceRig rig;
    const auto t1 = rig.tasks[0].task_id;
    EXPECT_EQ(rig.get("/api/tasks/next").first, 400);
    EXPECT_EQ(rig.get("/api/tasks/next?annotator=zed").first, 404);
    EXPECT_EQ(rig.get("/api/tasks/task-77777").first, 404);
    EXPECT_EQ(rig.get("/api/tasks/" + t1 + "?annotator=zed").first, 404);
    EXPECT_EQ(rig.submit("task-77777", "a", "distinct", 404)["error"], "UnknownTask");
    EXPECT_EQ(rig.submit(t1, "zed", "distinct", 404)["error"], "UnknownAnnotator");
    EXPECT_EQ(rig.submit(t1, "a", "maybe", 400)["error"], "InvalidJudgment");
    auto [s, body] = rig.post({{"task_id", t1}, {"annotator_id", "a"}, {"verdict", "distinct"}, {"rationale", " "}});
    EXPECT_EQ(s, 400);
    auto [s2, body2] = rig.post({{"task_id", t1}, {"annotator_id", "a"}});
    EXPECT_EQ(s2, 400);
    auto raw = rig.client->Post("/api/judgments", "{nope", "application/json");
    ASSERT_TRUE(raw);
    EXPECT_EQ(raw->status, 400);
    EXPECT_EQ(json::parse(raw->body)["error"], "MalformedRequest");

    rig.submit(t1, "a", "distinct", 201);
    rig.submit(t1, "b", "distinct", 201);
    EXPECT_EQ(rig.submit(t1, "c", "distinct", 400)["error"], "InvalidJudgment");
    EXPECT_EQ(rig.service->stats()["judgments"], 2);
}

TEST(Service, UnblindedShowsBiasName) {
    ServiceRig rig(false);
    auto [s, next] = rig.get("/api/tasks/next?annotator=b");
    ASSERT_EQ(s, 200);
    EXPECT_EQ(next["task"]["bias_name"], "x bias");
    EXPECT_EQ(rig.get("/api/stats").second["blind"], false);
}

TEST(Service, QueueDrainsToNull) {
    ServiceRig rig;
    for (const auto& t : rig.tasks) {
        rig.submit(t.task_id, "a", "distinct", 201);
        rig.submit(t.task_id, "b", "distinct", 201);
    }
    auto [s, next] = rig.get("/api/tasks/next?annotator=c");
    EXPECT_EQ(s, 200);
    EXPECT_TRUE(next["task"].is_null());
}

}  // namespace
}  // namespace biasscope
