#include <gtest/gtest.h>

#include "biasscope/config.hpp"
#include "biasscope/dataset.hpp"
#include "biasscope/errors.hpp"
#include "biasscope/orchestrator.hpp"
#include "test_support.hpp"

namespace biasscope {
namespace {

using testing::bias;
using testing::ScriptedRig;
using testing::TempDir;

struct Interrupt {};

BiasLibrary seed_library() {
    return load_library(std::filesystem::path(BIASSCOPE_SOURCE_DATA_DIR) / "seed_biases.json");
}

std::string l1(int i) { return "layer one bias " + std::to_string(i); }
std::string l2(int i) { return "layer two bias " + std::to_string(i); }
const std::string kL3 = "layer three bias";

// Four susceptible seeds reveal twelve first-layer biases (ten susceptible),
// which reveal five second-layer biases (four susceptible), which all reveal
// one susceptible third-layer bias.
ScriptedWorld layered_world() {
    ScriptedWorld w;
    const auto library = seed_library();
    const auto& seeds = library.entries();
    for (int s = 0; s < 4; ++s) {
        w.susceptible.insert(seeds[s].name);
        for (int k = 0; k < 3; ++k) w.reveals[seeds[s].name].push_back(l1(s * 3 + k));
    }
    for (int i = 0; i < 12; ++i) {
        if (i < 10) w.susceptible.insert(l1(i));
        w.reveals[l1(i)] = {l2(i % 5)};
    }
    for (int j = 0; j < 5; ++j) {
        if (j < 4) w.susceptible.insert(l2(j));
        w.reveals[l2(j)] = {kL3};
    }
    w.susceptible.insert(kL3);
    return w;
}

struct LoopRig {
    std::vector<PreferenceTriple> target;
    std::vector<PreferenceTriple> test;
    ScriptedRig rig;

    LoopRig(ScriptedWorld world, std::size_t n_target, std::size_t n_test)
        : target(testing::flawed_triples(n_target, "train")),
          test(testing::flawed_triples(n_test, "test")),
          rig(world.rule()) {}

    IterationContext context(int t_max, std::filesystem::path run_dir = {}) {
        LoopSettings s;
        s.t_max = t_max;
        s.test_set_id = "test";
        return IterationContext{target, test, rig.handle(ModelRole::target, "judge"),
                                rig.handle(ModelRole::teacher, "teacher"), s, std::move(run_dir), {}};
    }
};

std::vector<std::size_t> sizes(const RunState& s) {
    return run_report(s).at("library_sizes").get<std::vector<std::size_t>>();
}

TEST(Phase, Names) {
    for (auto p : {Phase::perturb, Phase::evaluate, Phase::deepen, Phase::identify, Phase::dedup,
                   Phase::validate, Phase::done}) {
        EXPECT_EQ(parse_phase(to_string(p)), p);
    }
    EXPECT_THROW(parse_phase("nope"), ConfigError);
}

TEST(Checkpoint, RoundTrip) {
    TempDir dir;
    RunState s = initial_state(BiasLibrary({bias("a bias")}, 2), 42, "digest-1");
    s.iteration = 3;
    s.phase = Phase::identify;
    s.completed_item_cursor = 3;
    IterationReport r;
    r.iteration = 2;
    r.err_baseline = 0.125;
    r.validated = {"v bias"};
    s.history = {r};
    checkpoint(s, dir / "state.ckpt");
    EXPECT_EQ(restore(dir / "state.ckpt"), s);
    EXPECT_EQ(restore(dir / "state.ckpt", "digest-1"), s);
    EXPECT_THROW(restore(dir / "state.ckpt", "digest-2"), ConfigMismatch);
}

TEST(Checkpoint, DamageIsDetected) {
    TempDir dir;
    RunState s = initial_state(BiasLibrary({bias("a bias")}, 0), 1, "d");
    checkpoint(s, dir / "state.ckpt");
    const auto text = read_file(dir / "state.ckpt");

    write_file_atomic(dir / "trunc.ckpt", text.substr(0, text.size() / 2));
    EXPECT_THROW(restore(dir / "trunc.ckpt"), CorruptCheckpoint);

    auto doc = json::parse(text);
    doc["state"]["iteration"] = 9;
    write_file_atomic(dir / "tampered.ckpt", doc.dump());
    EXPECT_THROW(restore(dir / "tampered.ckpt"), CorruptCheckpoint);

    doc = json::parse(text);
    doc["format"] = "other";
    write_file_atomic(dir / "format.ckpt", doc.dump());
    EXPECT_THROW(restore(dir / "format.ckpt"), CorruptCheckpoint);

    EXPECT_THROW(restore(dir / "missing.ckpt"), IoError);
}

TEST(Loop, ZeroIterationsKeepsSeedLibrary) {
    LoopRig rig(layered_world(), 10, 5);
    auto out = run_loop(initial_state(seed_library(), 1, ""), rig.context(0));
    EXPECT_EQ(out.phase, Phase::done);
    EXPECT_FALSE(out.converged);
    EXPECT_EQ(out.convergence_reason, kReasonMaxIterations);
    EXPECT_EQ(out.library, seed_library());
    EXPECT_EQ(rig.rig.backend->calls(), 0u);
    EXPECT_EQ(sizes(out), std::vector<std::size_t>{7});
}

TEST(Loop, StopsOnEmptyCandidateSet) {
    ScriptedWorld world;  // nothing is susceptible, so the judge is never fooled
    LoopRig rig(world, 20, 5);
    auto out = run_loop(initial_state(seed_library(), 1, ""), rig.context(4));
    EXPECT_TRUE(out.converged);
    EXPECT_EQ(out.convergence_reason, kReasonEmptyCandidates);
    ASSERT_EQ(out.history.size(), 1u);
    EXPECT_EQ(out.history[0].misjudged, 0u);
    EXPECT_FALSE(out.history[0].err_baseline.has_value());
    EXPECT_EQ(sizes(out), (std::vector<std::size_t>{7, 7}));
}

TEST(Loop, StopsWhenNothingValidates) {
    // The seed fools the judge, but what it reveals does not: candidates
    // exist, none is admitted because err stays equal to the baseline.
    ScriptedWorld world;
    world.susceptible = {"length bias"};
    world.reveals["length bias"] = {"inert bias"};
    LoopRig rig(world, 30, 6);
    auto out = run_loop(initial_state(seed_library(), 3, ""), rig.context(4));
    EXPECT_TRUE(out.converged);
    EXPECT_EQ(out.convergence_reason, kReasonLibraryStable);
    ASSERT_EQ(out.history.size(), 1u);
    EXPECT_EQ(out.history[0].candidates, 1u);
    EXPECT_EQ(out.history[0].err_baseline, 0.0);
    EXPECT_TRUE(out.history[0].validated.empty());
    EXPECT_EQ(out.library.size(), 7u);
}

TEST(Loop, LayeredWorldGrowsThenStabilizes) {
    LoopRig rig(layered_world(), 200, 10);
    auto out = run_loop(initial_state(seed_library(), 11, ""), rig.context(10));
    EXPECT_TRUE(out.converged);
    EXPECT_EQ(out.convergence_reason, kReasonLibraryStable);
    EXPECT_EQ(sizes(out), (std::vector<std::size_t>{7, 17, 21, 22, 22}));

    ASSERT_EQ(out.history.size(), 4u);
    std::set<std::string> first(out.history[0].validated.begin(), out.history[0].validated.end());
    std::set<std::string> want;
    for (int i = 0; i < 10; ++i) want.insert(l1(i));
    EXPECT_EQ(first, want);
    EXPECT_EQ(out.history[2].validated, std::vector<std::string>{kL3});
    for (const auto& r : out.history) EXPECT_EQ(r.err_baseline, 0.0);

    const auto* b = out.library.find(l2(0));
    ASSERT_NE(b, nullptr);
    EXPECT_EQ(b->origin, BiasOrigin::discovered);
    EXPECT_EQ(b->discovered_iteration, 1);
    ASSERT_TRUE(b->validation.has_value());
    EXPECT_EQ(b->validation->err_perturbed, 1.0);
    EXPECT_EQ(out.library.version(), 4);
    EXPECT_EQ(out.library.find(l1(10)), nullptr);
    EXPECT_EQ(out.library.find(l2(4)), nullptr);
}

TEST(Loop, MaxIterationsCutsGrowth) {
    LoopRig rig(layered_world(), 200, 10);
    auto out = run_loop(initial_state(seed_library(), 11, ""), rig.context(2));
    EXPECT_FALSE(out.converged);
    EXPECT_EQ(out.convergence_reason, kReasonMaxIterations);
    EXPECT_EQ(sizes(out), (std::vector<std::size_t>{7, 17, 21}));
}

TEST(Loop, BasicDetectionWithoutDeeperExplain) {
    // Without the deeper step only marker names are detected, and those are
    // already in the library.
    LoopRig rig(layered_world(), 60, 6);
    auto ctx = rig.context(4);
    ctx.settings.deeper_explain = false;
    auto out = run_loop(initial_state(seed_library(), 5, ""), ctx);
    EXPECT_EQ(out.convergence_reason, kReasonEmptyCandidates);
    EXPECT_EQ(out.library.size(), 7u);
}

TEST(Loop, InterruptedRunResumesToSameResult) {
    TempDir full_dir;
    LoopRig full(layered_world(), 80, 8);
    auto reference = run_loop(initial_state(seed_library(), 2, "d"), full.context(3, full_dir.path()));

    for (int stop_after : {1, 4, 6, 11}) {
        TempDir dir;
        LoopRig rig(layered_world(), 80, 8);
        auto ctx = rig.context(3, dir.path());
        int seen = 0;
        ctx.after_phase = [&](const RunState&) {
            if (++seen == stop_after) throw Interrupt{};
        };
        auto start = initial_state(seed_library(), 2, "d");
        checkpoint(start, dir / "state.ckpt");
        EXPECT_THROW(run_loop(start, ctx), Interrupt);

        ctx.after_phase = nullptr;
        auto resumed = run_loop(restore(dir / "state.ckpt", "d"), ctx);
        EXPECT_EQ(resumed, reference) << "stopped after phase " << stop_after;
        for (const auto& entry : std::filesystem::recursive_directory_iterator(full_dir.path())) {
            if (!entry.is_regular_file()) continue;
            auto rel = std::filesystem::relative(entry.path(), full_dir.path());
            EXPECT_EQ(read_file(dir.path() / rel), read_file(entry.path())) << rel;
        }
    }
}

TEST(Loop, PerturbPhaseFailsWhenTeacherIsDown) {
    ScriptedRig rig([](const ScriptedRequest&) -> std::string { throw MalformedResponse("down"); });
    auto data = testing::flawed_triples(3);
    LoopSettings s;
    IterationContext ctx{data, data, rig.handle(), rig.handle(ModelRole::teacher), s, {}, {}};
    EXPECT_THROW(run_loop(initial_state(seed_library(), 1, ""), ctx), PhaseFailed);
}

TEST(Run, FromConfigWithCheckpointRules) {
    TempDir dir;
    auto config = load_run_config(testing::fixtures() / "toy" / "run.toml");
    auto gateway = std::make_unique<Gateway>(
        std::make_shared<ScriptedBackend>(ScriptedWorld::load(*config.world_file).rule()), testing::fast_options());
    auto first = run(config, *gateway, {dir / "run", false, {}});
    EXPECT_FALSE(first.already_converged);
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "report.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "library_final.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "iter_0" / "perturbed.jsonl"));

    EXPECT_THROW(run(config, *gateway, {dir / "run", false, {}}), ConfigError);
    auto again = run(config, *gateway, {dir / "run", true, {}});
    EXPECT_TRUE(again.already_converged);
    EXPECT_EQ(again.state, first.state);

    auto changed = config;
    changed.seed = 99;
    EXPECT_THROW(run(changed, *gateway, {dir / "run", true, {}}), ConfigMismatch);
}

TEST(Run, FailureNamesCheckpoint) {
    TempDir dir;
    auto config = load_run_config(testing::fixtures() / "toy" / "run.toml");
    Gateway gateway(std::make_shared<ScriptedBackend>([](const ScriptedRequest& r) -> std::string {
                        if (r.prompt.find("Decision: <Write your decision here>") != std::string::npos) {
                            throw ReplayMiss("no fixture");
                        }
                        return "rewritten";
                    }),
                    testing::fast_options());
    try {
        run(config, gateway, {dir / "run", false, {}});
        FAIL();
    } catch (const RunFailed& e) {
        EXPECT_EQ(e.kind(), "ReplayMiss");
        EXPECT_EQ(e.checkpoint(), (dir / "run" / "state.ckpt").string());
        auto state = restore(e.checkpoint());
        EXPECT_EQ(state.phase, Phase::evaluate);
    }
}

TEST(DryRun, OnePromptPerPhase) {
    auto prompts = dry_run_prompts(testing::flawed_triples(2), seed_library());
    ASSERT_EQ(prompts.size(), 5u);
    EXPECT_EQ(prompts[0].phase, "perturb");
    for (const auto& p : prompts) EXPECT_FALSE(p.prompt.empty());
    EXPECT_THROW(dry_run_prompts({}, seed_library()), EmptyDataset);
}

TEST(Config, ParsesScalarsAndComments) {
    auto doc = parse_config_text(
        "top = 1\n"
        "[a]  # comment\n"
        "s = \"x # not a comment\\n\"\n"
        "l = 'raw\\path'\n"
        "i = -3\n"
        "f = 0.25\n"
        "b = true\n");
    EXPECT_EQ(std::get<std::int64_t>(doc.at("").at("top")), 1);
    EXPECT_EQ(std::get<std::string>(doc.at("a").at("s")), "x # not a comment\n");
    EXPECT_EQ(std::get<std::string>(doc.at("a").at("l")), "raw\\path");
    EXPECT_EQ(std::get<std::int64_t>(doc.at("a").at("i")), -3);
    EXPECT_EQ(std::get<double>(doc.at("a").at("f")), 0.25);
    EXPECT_EQ(std::get<bool>(doc.at("a").at("b")), true);
}

TEST(Config, ErrorsNameLine) {
    try {
        parse_config_text("[a]\nok = 1\nbroken\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_config_text("[a\n"), ConfigError);
    EXPECT_THROW(parse_config_text("a = \"open\n"), ConfigError);
    EXPECT_THROW(parse_config_text("a = 1\na = 2\n"), ConfigError);
    EXPECT_THROW(parse_config_text("a = nope\n"), ConfigError);
}

TEST(Config, RunConfigFromDocument) {
    auto doc = parse_config_text(
        "[target]\nmodel_id = \"j\"\ntemperature = 0.5\n"
        "[datasets]\ntarget = \"d/t.jsonl\"\n"
        "[loop]\nt_max = 2\nseed = 9\ndeeper_explain = false\n"
        "[gateway]\nbackend = \"replay\"\nmax_in_flight = 2\n");
    auto c = run_config_from_document(doc, "/base");
    EXPECT_EQ(c.target.ref.model_id, "j");
    EXPECT_EQ(c.target.params.temperature, 0.5);
    EXPECT_EQ(c.target_dataset, std::filesystem::path("/base/d/t.jsonl"));
    EXPECT_EQ(c.t_max, 2);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_FALSE(c.deeper_explain);
    EXPECT_EQ(c.backend, BackendKind::replay);
    EXPECT_EQ(c.max_in_flight, 2u);

    EXPECT_THROW(run_config_from_document(parse_config_text("[loop]\nt_max = -1\n"), "/"), ConfigError);
    EXPECT_THROW(run_config_from_document(parse_config_text("[loop]\nswap_probability = 2.0\n"), "/"),
                 ConfigError);
    EXPECT_THROW(run_config_from_document(parse_config_text("[gateway]\nbackend = \"x\"\n"), "/"),
                 ConfigError);
    EXPECT_THROW(run_config_from_document(parse_config_text("[loop]\nseed = \"s\"\n"), "/"), ConfigError);
}

TEST(Config, DigestTracksResultRelevantSettings) {
    auto base = load_run_config(testing::fixtures() / "toy" / "run.toml");
    const auto d = config_digest(base);
    auto c = base;
    c.max_in_flight = 1;
    c.cache_dir = "/elsewhere";
    EXPECT_EQ(config_digest(c), d);
    c = base;
    c.seed = 8;
    EXPECT_NE(config_digest(c), d);
    c = base;
    c.teacher.ref.model_id = "other";
    EXPECT_NE(config_digest(c), d);
    c = base;
    c.test_dataset = testing::fixtures() / "kappa_example.csv";
    EXPECT_NE(config_digest(c), d);
}

}  // namespace
}  // namespace biasscope
