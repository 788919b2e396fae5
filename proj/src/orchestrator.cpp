#include "biasscope/orchestrator.hpp"

#include <spdlog/spdlog.h>

#include "biasscope/dataset.hpp"
#include "biasscope/digest.hpp"
#include "biasscope/discovery.hpp"
#include "biasscope/errors.hpp"
#include "biasscope/judge.hpp"
#include "biasscope/rng.hpp"
#include "biasscope/validation.hpp"

namespace biasscope {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kCheckpointFormat = "biasscope.checkpoint.v1";
constexpr std::array<Phase, 7> kPhases = {Phase::perturb,  Phase::evaluate, Phase::deepen,
                                          Phase::identify, Phase::dedup,    Phase::validate,
                                          Phase::done};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

fs::path iter_dir(const fs::path& run_dir, int t) { return run_dir / ("iter_" + std::to_string(t)); }

// Intermediate phase outputs. Filled in memory as phases run; on resume the
// missing ones are read back from the iteration directory.
struct Scratch {
    std::optional<std::vector<PerturbedTriple>> perturbed;
    std::optional<std::vector<EvaluationRecord>> misjudged;
    std::optional<std::vector<EvaluationRecord>> deepened;
    std::optional<std::vector<BiasSpec>> identified;
    std::optional<std::vector<BiasSpec>> candidates;
};

template <class T>
std::vector<T> load_jsonl(const fs::path& dir, const char* name) {
    if (dir.empty()) throw ConfigError(std::string("cannot resume without a run directory: ") + name);
    try {
        return from_jsonl<T>(read_file(dir / name));
    } catch (const json::exception& e) {
        throw CorruptCheckpoint((dir / name).string() + ": " + e.what());
    }
}

json load_json(const fs::path& dir, const char* name) {
    if (dir.empty()) throw ConfigError(std::string("cannot resume without a run directory: ") + name);
    try {
        return json::parse(read_file(dir / name));
    } catch (const json::exception& e) {
        throw CorruptCheckpoint((dir / name).string() + ": " + e.what());
    }
}

void write_artifact(const fs::path& dir, const char* name, std::string_view content) {
    if (dir.empty()) return;
    fs::create_directories(dir);
    write_file_atomic(dir / name, content);
}

void advance(RunState& state, Phase next, const IterationContext& ctx) {
    state.phase = next;
    state.completed_item_cursor = next == Phase::perturb ? 0 : state.completed_item_cursor + 1;
    if (!ctx.run_dir.empty()) checkpoint(state, ctx.run_dir / "state.ckpt");
    if (ctx.after_phase) ctx.after_phase(state);
}

}  // namespace

std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::perturb: return "perturb";
        case Phase::evaluate: return "evaluate";
        case Phase::deepen: return "deepen";
        case Phase::identify: return "identify";
        case Phase::dedup: return "dedup";
        case Phase::validate: return "validate";
        case Phase::done: return "done";
    }
    return "perturb";
}

Phase parse_phase(std::string_view s) {
    for (Phase p : kPhases) {
        if (to_string(p) == s) return p;
    }
    throw ConfigError("unknown phase '" + std::string(s) + "'");
}

void to_json(json& j, const IterationReport& r) {
    j = json{{"iteration", r.iteration},
             {"library_before", r.library_before},
             {"perturbed", r.perturbed},
             {"perturb_failed", r.perturb_failed},
             {"err_discovery", r.err_discovery},
             {"misjudged", r.misjudged},
             {"identified", r.identified},
             {"candidates", r.candidates},
             {"err_baseline", r.err_baseline ? json(*r.err_baseline) : json(nullptr)},
             {"validated", r.validated},
             {"library_after", r.library_after}};
}

void from_json(const json& j, IterationReport& r) {
    r.iteration = j.at("iteration").get<int>();
    r.library_before = j.at("library_before").get<std::size_t>();
    r.perturbed = j.at("perturbed").get<std::size_t>();
    r.perturb_failed = j.at("perturb_failed").get<std::size_t>();
    r.err_discovery = j.at("err_discovery").get<double>();
    r.misjudged = j.at("misjudged").get<std::size_t>();
    r.identified = j.at("identified").get<std::size_t>();
    r.candidates = j.at("candidates").get<std::size_t>();
    const auto& b = j.at("err_baseline");
    r.err_baseline = b.is_null() ? std::nullopt : std::optional<double>(b.get<double>());
    r.validated = j.at("validated").get<std::vector<std::string>>();
    r.library_after = j.at("library_after").get<std::size_t>();
}

json state_to_json(const RunState& s) {
    return json{{"iteration", s.iteration},
                {"library", {{"version", s.library.version()}, {"entries", s.library.entries()}}},
                {"phase", to_string(s.phase)},
                {"rng_seed", s.rng_seed},
                {"completed_item_cursor", s.completed_item_cursor},
                {"config_digest", s.config_digest},
                {"converged", s.converged},
                {"convergence_reason", s.convergence_reason},
                {"history", s.history}};
}

RunState state_from_json(const json& j) {
    RunState s;
    s.iteration = j.at("iteration").get<int>();
    const auto& lib = j.at("library");
    s.library = BiasLibrary(lib.at("entries").get<std::vector<BiasSpec>>(), lib.at("version").get<int>());
    s.phase = parse_phase(j.at("phase").get<std::string>());
    s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    s.completed_item_cursor = j.at("completed_item_cursor").get<std::size_t>();
    s.config_digest = j.at("config_digest").get<std::string>();
    s.converged = j.at("converged").get<bool>();
    s.convergence_reason = j.at("convergence_reason").get<std::string>();
    s.history = j.at("history").get<std::vector<IterationReport>>();
    return s;
}

void checkpoint(const RunState& state, const fs::path& path) {
    const std::string body = state_to_json(state).dump();
    json doc{{"format", kCheckpointFormat}, {"sha256", sha256_hex(body)}, {"state", json::parse(body)}};
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomic(path, dump(doc));
}

RunState restore(const fs::path& path, std::string_view expected_digest) {
    const std::string text = read_file(path);
    RunState state;
    try {
        const json doc = json::parse(text);
        if (doc.at("format").get<std::string>() != kCheckpointFormat) {
            throw CorruptCheckpoint(path.string() + ": unknown checkpoint format");
        }
        const std::string body = doc.at("state").dump();
        if (sha256_hex(body) != doc.at("sha256").get<std::string>()) {
            throw CorruptCheckpoint(path.string() + ": checksum mismatch");
        }
        state = state_from_json(doc.at("state"));
    } catch (const json::exception& e) {
        throw CorruptCheckpoint(path.string() + ": " + e.what());
    } catch (const CorruptCheckpoint&) {
        throw;
    } catch (const Error& e) {
        throw CorruptCheckpoint(path.string() + ": " + e.what());
    }
    if (!expected_digest.empty() && state.config_digest != expected_digest) {
        throw ConfigMismatch("checkpoint " + path.string() + " was written under config " +
                             state.config_digest + ", live config is " + std::string(expected_digest));
    }
    return state;
}

RunState initial_state(BiasLibrary seed_library, std::uint64_t seed, std::string config_digest) {
    RunState s;
    s.library = std::move(seed_library);
    s.rng_seed = seed;
    s.config_digest = std::move(config_digest);
    return s;
}

RunState run_iteration(RunState state, const IterationContext& ctx) {
    if (state.phase == Phase::done) throw ConfigError("run_iteration called on a finished run");
    const int t = state.iteration;
    const auto& cfg = ctx.settings;
    const PromptForge& forge = cfg.forge ? *cfg.forge : PromptForge::builtin();
    const fs::path dir = ctx.run_dir.empty() ? fs::path{} : iter_dir(ctx.run_dir, t);
    Scratch scratch;

    if (state.phase == Phase::perturb) {
        IterationReport rep;
        rep.iteration = t;
        rep.library_before = state.library.size();
        auto out = perturb_dataset(ctx.target_data, state.library, ctx.teacher,
                                   derive_seed(state.rng_seed, t, "perturb"), forge);
        if (out.items.empty()) {
            throw PhaseFailed("perturb: no item of the target dataset could be perturbed");
        }
        rep.perturbed = out.items.size();
        rep.perturb_failed = out.failed_ids.size();
        write_artifact(dir, "perturbed.jsonl", to_jsonl(out.items));
        scratch.perturbed = std::move(out.items);
        if (state.history.empty() || state.history.back().iteration != t) {
            state.history.push_back(rep);
        } else {
            state.history.back() = rep;
        }
        advance(state, Phase::evaluate, ctx);
    }

    IterationReport& rep = state.history.back();

    if (state.phase == Phase::evaluate) {
        if (!scratch.perturbed) scratch.perturbed = load_jsonl<PerturbedTriple>(dir, "perturbed.jsonl");
        const auto& items = *scratch.perturbed;
        auto data = materialize(ctx.target_data, items);
        auto orders = assign_orders(data, derive_seed(state.rng_seed, t, "orders"), cfg.swap_probability);
        auto eval = evaluate_dataset(data, ctx.target, orders, "iter_" + std::to_string(t),
                                     EvaluateOptions{cfg.strict_parse, &forge});
        std::map<std::string, std::string> bias_of;
        for (const auto& p : items) bias_of[p.base_id] = p.bias_name;
        for (auto& r : eval.records) r.bias_name = bias_of.at(r.triple.id);
        auto misjudged = extract_misjudged(eval.records);
        rep.err_discovery = eval.report.err;
        rep.misjudged = misjudged.size();
        write_artifact(dir, "evaluation.json", dump(eval.report));
        write_artifact(dir, "evaluation_records.jsonl", to_jsonl(eval.records));
        write_artifact(dir, "misjudged.jsonl", to_jsonl(misjudged));
        scratch.misjudged = std::move(misjudged);
        advance(state, Phase::deepen, ctx);
    }

    if (state.phase == Phase::deepen) {
        if (!scratch.misjudged) scratch.misjudged = load_jsonl<EvaluationRecord>(dir, "misjudged.jsonl");
        std::vector<EvaluationRecord> deepened;
        if (cfg.deeper_explain) {
            deepened = deepen_explanations(*scratch.misjudged, ctx.target, forge).records;
        } else {
            deepened = *scratch.misjudged;
        }
        write_artifact(dir, "deepened.jsonl", to_jsonl(deepened));
        scratch.deepened = std::move(deepened);
        advance(state, Phase::identify, ctx);
    }

    if (state.phase == Phase::identify) {
        if (!scratch.deepened) scratch.deepened = load_jsonl<EvaluationRecord>(dir, "deepened.jsonl");
        auto found = identify_biases(*scratch.deepened, ctx.teacher, cfg.deeper_explain, t, forge);
        rep.identified = found.biases.size();
        write_artifact(dir, "identified.json",
                       dump(json{{"biases", found.biases},
                                 {"malformed_ids", found.malformed_ids},
                                 {"failed_ids", found.failed_ids},
                                 {"no_bias", found.no_bias}}));
        scratch.identified = std::move(found.biases);
        advance(state, Phase::dedup, ctx);
    }

    if (state.phase == Phase::dedup) {
        if (!scratch.identified) {
            scratch.identified = load_json(dir, "identified.json").at("biases").get<std::vector<BiasSpec>>();
        }
        auto merge = dedup_merge(*scratch.identified, state.library, ctx.teacher, forge);
        auto candidates = candidate_set(merge.merged, state.library);
        rep.candidates = candidates.size();
        write_artifact(dir, "candidates.json",
                       dump(json{{"candidates", candidates},
                                 {"kept", merge.kept},
                                 {"dropped_exact", merge.dropped_exact},
                                 {"dropped_similar", merge.dropped_similar},
                                 {"dropped_unparseable", merge.dropped_unparseable}}));
        scratch.candidates = std::move(candidates);
        advance(state, Phase::validate, ctx);
    }

    if (state.phase == Phase::validate) {
        if (!scratch.candidates) {
            scratch.candidates = load_json(dir, "candidates.json").at("candidates").get<std::vector<BiasSpec>>();
        }
        const auto& candidates = *scratch.candidates;
        std::vector<BiasSpec> validated;
        if (!candidates.empty()) {
            auto orders = assign_orders(ctx.test_data, derive_seed(state.rng_seed, t, "orders.test"),
                                        cfg.swap_probability);
            auto baseline = evaluate_dataset(ctx.test_data, ctx.target, orders, "baseline",
                                             EvaluateOptions{cfg.strict_parse, &forge});
            auto result = validate_candidates(
                candidates, ctx.test_data, ctx.target, ctx.teacher, orders, baseline.report,
                ValidateOptions{cfg.min_delta, cfg.strict_parse, cfg.test_set_id, &forge});
            rep.err_baseline = baseline.report.err;
            write_artifact(dir, "validation.json",
                           dump(json{{"rows", result.rows}, {"reports", result.reports}}));
            validated = std::move(result.validated);
        } else {
            write_artifact(dir, "validation.json", dump(json{{"rows", json::array()}, {"reports", json::array()}}));
        }
        for (const auto& b : validated) rep.validated.push_back(b.name);
        state.library = extend_library(state.library, validated, t + 1);
        rep.library_after = state.library.size();

        if (candidates.empty()) {
            state.converged = true;
            state.convergence_reason = kReasonEmptyCandidates;
        } else if (validated.empty()) {
            state.converged = true;
            state.convergence_reason = kReasonLibraryStable;
        }
        spdlog::info("iteration {}: {} candidates, {} validated, library {} -> {}", t, rep.candidates,
                     rep.validated.size(), rep.library_before, rep.library_after);
        state.iteration = t + 1;
        if (!state.converged && state.iteration >= cfg.t_max) {
            state.convergence_reason = kReasonMaxIterations;
        }
        advance(state, state.converged || state.iteration >= cfg.t_max ? Phase::done : Phase::perturb, ctx);
    }
    return state;
}

RunState run_loop(RunState state, const IterationContext& ctx) {
    while (state.phase != Phase::done) {
        if (state.iteration >= ctx.settings.t_max && state.phase == Phase::perturb) {
            state.convergence_reason = kReasonMaxIterations;
            advance(state, Phase::done, ctx);
            break;
        }
        state = run_iteration(std::move(state), ctx);
    }
    return state;
}

json run_report(const RunState& state) {
    json sizes = json::array();
    std::size_t validated = 0;
    if (state.history.empty()) {
        sizes.push_back(state.library.size());
    } else {
        sizes.push_back(state.history.front().library_before);
        for (const auto& r : state.history) {
            sizes.push_back(r.library_after);
            validated += r.validated.size();
        }
    }
    return json{{"converged", state.converged},
                {"convergence_reason", state.convergence_reason},
                {"iterations_run", state.history.size()},
                {"validated_count", validated},
                {"final_library_size", state.library.size()},
                {"library_sizes", sizes},
                {"per_iteration", state.history}};
}

BiasLibrary load_seed_library(const RunConfig& config) {
    if (!config.seed_library.empty()) return load_library(config.seed_library);
    return load_library(default_data_dir() / "seed_biases.json");
}

RunOutcome run(const RunConfig& config, Gateway& gateway, const RunOptions& options) {
    if (config.target_dataset.empty()) throw ConfigError("[datasets] target is not set");
    if (config.test_dataset.empty()) throw ConfigError("[datasets] test is not set");
    if (options.run_dir.empty()) throw ConfigError("no run directory given");

    const auto target_data = load_dataset(config.target_dataset);
    const auto test_data = load_dataset(config.test_dataset);
    const std::string digest = config_digest(config);
    const fs::path ckpt = options.run_dir / "state.ckpt";

    RunOutcome outcome;
    std::error_code ec;
    if (fs::exists(ckpt, ec)) {
        if (!options.resume) {
            throw ConfigError("run directory " + options.run_dir.string() +
                              " already holds a checkpoint; pass --resume or choose a fresh --out");
        }
        outcome.state = restore(ckpt, digest);
        spdlog::info("resuming at iteration {} phase {}", outcome.state.iteration,
                     to_string(outcome.state.phase));
    } else {
        outcome.state = initial_state(load_seed_library(config), config.seed, digest);
    }

    if (outcome.state.phase == Phase::done && fs::exists(options.run_dir / "report.json", ec)) {
        outcome.already_converged = true;
        outcome.report = run_report(outcome.state);
        return outcome;
    }

    fs::create_directories(options.run_dir);
    write_file_atomic(options.run_dir / "run.json",
                      dump(json{{"config", config_echo(config)}, {"config_digest", digest}}));

    std::optional<PromptForge> custom;
    if (config.prompts_dir) custom = PromptForge::from_directory(*config.prompts_dir);

    IterationContext ctx{target_data,
                         test_data,
                         ModelHandle{&gateway, config.target.ref, config.target.params},
                         ModelHandle{&gateway, config.teacher.ref, config.teacher.params},
                         LoopSettings{config.t_max, config.deeper_explain, config.swap_probability,
                                      config.min_delta, config.strict_parse,
                                      config.test_dataset.filename().string(),
                                      custom ? &*custom : nullptr},
                         options.run_dir,
                         options.after_phase};

    if (!fs::exists(ckpt, ec)) checkpoint(outcome.state, ckpt);
    try {
        outcome.state = run_loop(std::move(outcome.state), ctx);
    } catch (const RunFailed&) {
        throw;
    } catch (const Error& e) {
        throw RunFailed(e, ckpt.string());
    }

    save_library(options.run_dir / "library_final.json", outcome.state.library);
    outcome.report = run_report(outcome.state);
    write_file_atomic(options.run_dir / "report.json", dump(outcome.report));
    return outcome;
}

std::vector<DryRunPrompt> dry_run_prompts(const std::vector<PreferenceTriple>& target_data,
                                          const BiasLibrary& library, const PromptForge& forge) {
    if (target_data.empty()) throw EmptyDataset("dry run: target dataset is empty");
    if (library.empty()) throw EmptyLibrary("dry run: bias library is empty");
    const auto& item = target_data.front();
    const auto& bias = library.entries().front();

    EvaluationRecord record;
    record.triple = item;
    record.verdict.order = Order::chosen_first;
    record.verdict.decision = Decision::second;
    record.verdict.reasoning = "<judge reasoning>";
    record.bias_name = bias.name;
    record.deeper_explanation = "<deeper explanation>";

    return {
        {"perturb", render_injection_prompt(item, bias, forge)},
        {"evaluate", render_judge_prompt(item, Order::chosen_first, forge)},
        {"deepen", render_deeper_explain_prompt(record, forge)},
        {"identify", render_detection_prompt(record, true, forge)},
        {"dedup", render_merge_prompt(bias, library.entries(), forge)},
    };
}

}  // namespace biasscope
