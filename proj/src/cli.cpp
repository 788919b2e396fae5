#include "biasscope/cli.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "biasscope/analysis.hpp"
#include "biasscope/annotation_service.hpp"
#include "biasscope/augment.hpp"
#include "biasscope/bias_library.hpp"
#include "biasscope/curation.hpp"
#include "biasscope/dataset.hpp"
#include "biasscope/errors.hpp"
#include "biasscope/judge.hpp"
#include "biasscope/orchestrator.hpp"
#include "biasscope/scripted_world.hpp"
#include "biasscope/validation.hpp"

namespace biasscope {

namespace fs = std::filesystem;

namespace {

class KillSwitchBackend final : public Backend {
public:
    KillSwitchBackend(std::shared_ptr<Backend> inner, long limit) : inner_(std::move(inner)), limit_(limit) {}

    BackendReply call(const ModelRef& model, const std::string& prompt, const GenParams& params) override {
        if (++calls_ >= limit_) {
            std::fflush(nullptr);
            std::_Exit(137);
        }
        return inner_->call(model, prompt, params);
    }
    std::string_view name() const override { return inner_->name(); }

private:
    std::shared_ptr<Backend> inner_;
    long limit_;
    std::atomic<long> calls_{0};
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string backend;
    std::string replay_file;
    std::string world;
    std::string record;
    std::string cache_dir;
    std::size_t max_in_flight = 0;
    long kill_after_calls = 0;
    std::string log_level = "warn";
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "Run config file (TOML-style sections)")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "Root seed");
    sub->add_option("--out", c.out, "Output path");
    sub->add_option("--backend", c.backend, "Model backend")
        ->check(CLI::IsMember({"live", "replay", "scripted"}));
    sub->add_option("--replay-file", c.replay_file, "Replay fixture (JSONL) for --backend replay");
    sub->add_option("--world", c.world, "Scripted world (JSON) for --backend scripted");
    sub->add_option("--record", c.record, "Append every backend response to this replay fixture");
    sub->add_option("--cache-dir", c.cache_dir, "Completion cache directory");
    sub->add_option("--max-in-flight", c.max_in_flight, "Concurrent backend requests")->check(CLI::PositiveNumber);
    sub->add_option("--log-level", c.log_level, "trace, debug, info, warn, error or off");
    sub->add_option("--kill-after-calls", c.kill_after_calls)->group("");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.backend.empty()) cfg.backend = parse_backend_kind(c.backend);
    if (!c.replay_file.empty()) cfg.replay_file = fs::path(c.replay_file);
    if (!c.world.empty()) cfg.world_file = fs::path(c.world);
    if (!c.record.empty()) cfg.record_file = fs::path(c.record);
    if (!c.cache_dir.empty()) cfg.cache_dir = fs::path(c.cache_dir);
    if (c.max_in_flight > 0) cfg.max_in_flight = c.max_in_flight;
    return cfg;
}

void setup_logging(const std::string& level) {
    static std::once_flag once;
    std::call_once(once, [] { spdlog::set_default_logger(spdlog::stderr_color_mt("biasscope")); });
    auto lvl = spdlog::level::from_str(level);
    spdlog::set_level(lvl);
}

fs::path require_path(const std::string& flag_value, const fs::path& fallback, const char* what) {
    if (!flag_value.empty()) return flag_value;
    if (!fallback.empty()) return fallback;
    throw ConfigError(std::string("no ") + what + " given");
}

// Writes `content` to `path`, or to `out` when path is empty or "-".
void emit(const std::string& path, std::string_view content, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << content;
        return;
    }
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_file_atomic(p, content);
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

std::string percent(double fraction) { return fixed(fraction * 100.0, 1) + "%"; }

ModelHandle handle(Gateway& gw, const ModelConfig& m) { return ModelHandle{&gw, m.ref, m.params}; }

std::vector<PerturbedTriple> load_perturbed(const fs::path& path) {
    try {
        return from_jsonl<PerturbedTriple>(read_file(path));
    } catch (const json::exception& e) {
        throw MalformedRecord(path.string() + ": " + e.what());
    }
}

const PromptForge& forge_for(const RunConfig& cfg, std::optional<PromptForge>& storage) {
    if (!cfg.prompts_dir) return PromptForge::builtin();
    storage = PromptForge::from_directory(*cfg.prompts_dir);
    return *storage;
}

}  // namespace

std::shared_ptr<Backend> make_backend(const RunConfig& config, long kill_after_calls) {
    std::shared_ptr<Backend> backend;
    switch (config.backend) {
        case BackendKind::live:
            backend = std::make_shared<LiveBackend>();
            break;
        case BackendKind::replay:
            if (!config.replay_file) throw ConfigError("--backend replay needs --replay-file");
            backend = std::make_shared<ReplayBackend>(ReplayBackend::from_file(*config.replay_file));
            break;
        case BackendKind::scripted:
            if (!config.world_file) throw ConfigError("--backend scripted needs --world");
            backend = std::make_shared<ScriptedBackend>(ScriptedWorld::load(*config.world_file).rule());
            break;
    }
    if (kill_after_calls > 0) backend = std::make_shared<KillSwitchBackend>(backend, kill_after_calls);
    return backend;
}

GatewayOptions gateway_options(const RunConfig& config) {
    GatewayOptions o;
    o.retry.max_attempts = config.max_attempts;
    o.retry.base_delay = std::chrono::milliseconds(config.base_delay_ms);
    o.cache_dir = config.cache_dir;
    o.max_in_flight = config.max_in_flight;
    o.record_path = config.record_file;
    return o;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args, out, err);
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bias discovery and validation for LLM judges", "biasscope"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    // discover
    Common discover_c;
    std::string target_data, test_data, seed_library;
    std::optional<int> t_max;
    bool resume = false;
    bool dry_run = false;
    auto* discover = app.add_subcommand("discover", "Run the iterative discovery and validation loop");
    add_common(discover, discover_c);
    discover->add_option("--target-data", target_data, "Dataset mined for misjudgments (JSONL)");
    discover->add_option("--test-data", test_data, "Held-out dataset used for validation (JSONL)");
    discover->add_option("--seed-library", seed_library, "Initial bias library (JSON)");
    discover->add_option("--t-max", t_max, "Maximum number of iterations")->check(CLI::NonNegativeNumber);
    discover->add_flag("--resume", resume, "Continue from the checkpoint in --out");
    discover->add_flag("--dry-run", dry_run, "Print one rendered prompt per phase and exit");

    // evaluate
    Common evaluate_c;
    std::string eval_data;
    bool strict = false;
    auto* evaluate = app.add_subcommand("evaluate", "Judge a dataset and report the error rate");
    add_common(evaluate, evaluate_c);
    evaluate->add_option("--dataset", eval_data, "Dataset to judge (JSONL)");
    evaluate->add_flag("--strict", strict, "Count unparseable verdicts as mistakes");

    // validate
    Common validate_c;
    std::string validate_biases, validate_data;
    double min_delta = 0.0;
    auto* validate = app.add_subcommand("validate", "Re-validate a list of biases on a test set");
    add_common(validate, validate_c);
    validate->add_option("--biases", validate_biases, "Biases to validate (library JSON)")->required();
    validate->add_option("--test-data", validate_data, "Test dataset (JSONL)");
    validate->add_option("--min-delta", min_delta, "Required error increase")->check(CLI::NonNegativeNumber);

    // curate
    auto* curate = app.add_subcommand("curate", "Build an adversarial benchmark with human annotation");
    curate->require_subcommand(1);

    Common gen_c;
    std::string gen_data, gen_biases;
    std::size_t gen_k = 10;
    auto* gen = curate->add_subcommand("generate", "Create K biased variants per sample");
    add_common(gen, gen_c);
    gen->add_option("--dataset", gen_data, "Benchmark samples (JSONL)")->required();
    gen->add_option("--biases", gen_biases, "Bias list (library JSON); the first K are used")->required();
    gen->add_option("--k", gen_k, "Variants per sample")->check(CLI::PositiveNumber);

    Common filter_c;
    std::string filter_data, filter_variants;
    auto* filter = curate->add_subcommand("filter", "Keep variants misjudged in both orders");
    add_common(filter, filter_c);
    filter->add_option("--dataset", filter_data, "Benchmark samples (JSONL)")->required();
    filter->add_option("--variants", filter_variants, "Variants (JSONL)")->required();

    Common export_c;
    std::string export_data, export_variants, export_project, export_advisory;
    std::vector<std::string> annotators;
    auto* exp = curate->add_subcommand("export", "Create an annotation project from kept variants");
    add_common(exp, export_c);
    exp->add_option("--dataset", export_data, "Benchmark samples (JSONL)")->required();
    exp->add_option("--variants", export_variants, "Kept variants (JSONL)")->required();
    exp->add_option("--project", export_project, "Project directory")->required();
    exp->add_option("--annotators", annotators, "Annotator ids")->delimiter(',')->required();
    exp->add_option("--advisory", export_advisory, "Model hints: JSON object keyed by <base_id>::<bias>");

    Common import_c;
    std::string import_project, import_file;
    auto* imp = curate->add_subcommand("import", "Import a judgment file (idempotent)");
    add_common(imp, import_c);
    imp->add_option("--project", import_project, "Project directory")->required();
    imp->add_option("--judgments", import_file, "Judgments (JSONL)")->required();

    Common serve_c;
    std::string serve_project, host = "127.0.0.1";
    int port = 8080;
    bool no_blind = false;
    auto* serve = curate->add_subcommand("serve", "Serve the annotation HTTP API");
    add_common(serve, serve_c);
    serve->add_option("--project", serve_project, "Project directory")->required();
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port")->check(CLI::Range(1, 65535));
    serve->add_flag("--no-blind", no_blind, "Show bias names before a verdict is submitted");

    Common finalize_c;
    std::string finalize_project, finalize_report;
    auto* fin = curate->add_subcommand("finalize", "Write the final benchmark and agreement report");
    add_common(fin, finalize_c);
    fin->add_option("--project", finalize_project, "Project directory")->required();
    fin->add_option("--report", finalize_report, "Agreement report path (JSON)");

    // augment
    Common augment_c;
    std::string augment_data, augment_library;
    bool include_seed = false;
    double fraction = 1.0;
    auto* augment = app.add_subcommand("augment", "Rewrite rejected answers with library biases");
    add_common(augment, augment_c);
    augment->add_option("--dataset", augment_data, "Preference dataset (JSONL)");
    augment->add_option("--library", augment_library, "Bias library (JSON)")->required();
    augment->add_flag("--include-seed", include_seed, "Also sample biases without a validation record");
    augment->add_option("--fraction", fraction, "Share of rows to rewrite")->check(CLI::Range(0.0, 1.0));

    // kappa
    Common kappa_c;
    std::string matrix;
    std::int64_t raters = 0;
    auto* kappa = app.add_subcommand("kappa", "Fleiss' kappa of a count matrix");
    add_common(kappa, kappa_c);
    kappa->add_option("--matrix", matrix, "CSV, one row per item, one column per category")->required();
    kappa->add_option("--raters", raters, "Raters per item (default: first row sum)");

    // audit
    Common audit_c;
    std::string audit_data, audit_perturbed;
    auto* audit = app.add_subcommand("audit", "Check whether perturbation changed final answers");
    add_common(audit, audit_c);
    audit->add_option("--dataset", audit_data, "Original dataset (JSONL)");
    audit->add_option("--perturbed", audit_perturbed, "Perturbed rows (JSONL)")->required();

    // lengths
    Common lengths_c;
    std::string lengths_data, lengths_perturbed;
    std::vector<double> means;
    auto* lengths = app.add_subcommand("lengths", "Token length statistics of perturbed rejections");
    add_common(lengths, lengths_c);
    lengths->add_option("--dataset", lengths_data, "Original dataset (JSONL)");
    lengths->add_option("--perturbed", lengths_perturbed, "Perturbed rows (JSONL)");
    lengths->add_option("--means", means, "Mean original and mean perturbed length")->expected(2);

    // truncate-study
    Common trunc_c;
    std::string trunc_data, trunc_perturbed, trunc_write;
    auto* trunc = app.add_subcommand("truncate-study", "Judge perturbed rejections cut to their original length");
    add_common(trunc, trunc_c);
    trunc->add_option("--dataset", trunc_data, "Original dataset (JSONL)");
    trunc->add_option("--perturbed", trunc_perturbed, "Perturbed rows (JSONL)")->required();
    trunc->add_option("--write-truncated", trunc_write, "Also write the truncated rows (JSONL)");

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kExitOk;
        }
        const CLI::App* leaf = &app;
        while (!leaf->get_subcommands().empty()) leaf = leaf->get_subcommands().front();
        err << "error: " << e.what() << "\n\n" << leaf->help();
        return kExitUsage;
    }

    auto guarded = [&](const Common& c, auto&& body) -> int {
        try {
            setup_logging(c.log_level);
            return body();
        } catch (const RunFailed& e) {
            err << "error [" << e.kind() << "]: " << e.what() << "\n";
            err << "checkpoint: " << e.checkpoint() << "\n";
        } catch (const UnresolvedTasks& e) {
            err << "error [" << e.kind() << "]: " << e.what() << "\n";
            for (const auto& id : e.task_ids()) err << "  " << id << "\n";
        } catch (const Error& e) {
            err << "error [" << e.kind() << "]: " << e.what() << "\n";
        } catch (const std::exception& e) {
            err << "error: " << e.what() << "\n";
        }
        return kExitRuntime;
    };

    if (discover->parsed()) {
        return guarded(discover_c, [&] {
            RunConfig cfg = resolve(discover_c);
            if (!target_data.empty()) cfg.target_dataset = target_data;
            if (!test_data.empty()) cfg.test_dataset = test_data;
            if (!seed_library.empty()) cfg.seed_library = seed_library;
            if (t_max) cfg.t_max = *t_max;
            if (dry_run) {
                if (cfg.target_dataset.empty()) throw ConfigError("[datasets] target is not set");
                std::optional<PromptForge> custom;
                std::string text;
                for (const auto& p : dry_run_prompts(load_dataset(cfg.target_dataset), load_seed_library(cfg),
                                                     forge_for(cfg, custom))) {
                    text += "===== " + p.phase + " =====\n" + p.prompt + "\n";
                }
                emit(discover_c.out, text, out);
                return kExitOk;
            }
            const fs::path run_dir = discover_c.out.empty() ? fs::path("run") : fs::path(discover_c.out);
            if (!cfg.cache_dir) cfg.cache_dir = run_dir / "cache";
            Gateway gateway(make_backend(cfg, discover_c.kill_after_calls), gateway_options(cfg));
            auto outcome = run(cfg, gateway, RunOptions{run_dir, resume, {}});
            if (outcome.already_converged) {
                out << "already converged (" << outcome.state.convergence_reason << ")\n";
                return kExitOk;
            }
            const auto& r = outcome.report;
            out << "converged: " << (r["converged"].get<bool>() ? "yes" : "no") << " ("
                << r["convergence_reason"].get<std::string>() << ")\n";
            out << "iterations: " << r["iterations_run"].get<std::size_t>() << "\n";
            out << "validated biases: " << r["validated_count"].get<std::size_t>() << "\n";
            for (const auto& it : outcome.state.history) {
                out << "iteration " << it.iteration << ": +" << it.validated.size() << " (" << it.library_before
                    << " -> " << it.library_after << ")\n";
            }
            out << "library: " << (run_dir / "library_final.json").string() << "\n";
            return kExitOk;
        });
    }

    if (evaluate->parsed()) {
        return guarded(evaluate_c, [&] {
            RunConfig cfg = resolve(evaluate_c);
            const auto data = load_dataset(require_path(eval_data, cfg.target_dataset, "--dataset"));
            Gateway gateway(make_backend(cfg, evaluate_c.kill_after_calls), gateway_options(cfg));
            std::optional<PromptForge> custom;
            const auto orders = assign_orders(data, cfg.seed, cfg.swap_probability);
            auto ev = evaluate_dataset(data, handle(gateway, cfg.target), orders, "evaluate",
                                       EvaluateOptions{strict || cfg.strict_parse, &forge_for(cfg, custom)});
            emit(evaluate_c.out, json(ev.report).dump(2) + "\n", out);
            if (!evaluate_c.out.empty() && evaluate_c.out != "-") {
                out << "err = " << fixed(ev.report.err, 4) << " (" << ev.report.mistakes << "/" << ev.report.total
                    << ", " << ev.report.unparsed << " unparsed)\n";
            }
            return kExitOk;
        });
    }

    if (validate->parsed()) {
        return guarded(validate_c, [&] {
            RunConfig cfg = resolve(validate_c);
            const fs::path test_path = require_path(validate_data, cfg.test_dataset, "--test-data");
            const auto test = load_dataset(test_path);
            const auto biases = load_library(validate_biases).entries();
            Gateway gateway(make_backend(cfg, validate_c.kill_after_calls), gateway_options(cfg));
            std::optional<PromptForge> custom;
            const auto& forge = forge_for(cfg, custom);
            const auto target = handle(gateway, cfg.target);
            const auto orders = assign_orders(test, cfg.seed, cfg.swap_probability);
            auto baseline = evaluate_dataset(test, target, orders, "baseline",
                                             EvaluateOptions{cfg.strict_parse, &forge});
            auto result = validate_candidates(
                biases, test, target, handle(gateway, cfg.teacher), orders, baseline.report,
                ValidateOptions{std::max(min_delta, cfg.min_delta), cfg.strict_parse, test_path.filename().string(), &forge});
            json doc{{"baseline", baseline.report}, {"rows", result.rows}, {"validated", result.validated}};
            emit(validate_c.out, doc.dump(2) + "\n", out);
            if (!validate_c.out.empty() && validate_c.out != "-") {
                for (const auto& row : result.rows) {
                    out << row.bias << ": " << fixed(row.err_baseline, 4) << " -> " << fixed(row.err_perturbed, 4)
                        << (row.accepted ? " accepted" : " rejected")
                        << (row.note.empty() ? "" : " (" + row.note + ")") << "\n";
                }
            }
            return kExitOk;
        });
    }

    if (gen->parsed()) {
        return guarded(gen_c, [&] {
            RunConfig cfg = resolve(gen_c);
            if (gen_c.out.empty()) throw ConfigError("--out is required");
            const auto data = load_dataset(gen_data);
            const auto biases = load_library(gen_biases).entries();
            Gateway gateway(make_backend(cfg, gen_c.kill_after_calls), gateway_options(cfg));
            std::optional<PromptForge> custom;
            auto result = generate_variants(data, biases, gen_k, handle(gateway, cfg.teacher), forge_for(cfg, custom));
            emit(gen_c.out, to_jsonl(result.variants), out);
            out << "variants: " << result.variants.size() << " (" << data.size() << " samples x " << gen_k
                << ", failed " << result.failed.size() << ")\n";
            return kExitOk;
        });
    }

    if (filter->parsed()) {
        return guarded(filter_c, [&] {
            RunConfig cfg = resolve(filter_c);
            if (filter_c.out.empty()) throw ConfigError("--out is required");
            const auto data = load_dataset(filter_data);
            const auto variants = load_perturbed(filter_variants);
            Gateway gateway(make_backend(cfg, filter_c.kill_after_calls), gateway_options(cfg));
            std::optional<PromptForge> custom;
            auto result = adversarial_filter(data, variants, handle(gateway, cfg.filter), forge_for(cfg, custom));
            emit(filter_c.out, to_jsonl(result.kept), out);
            out << "kept " << result.kept.size() << " of " << variants.size() << " (judged correct "
                << result.judged_correct << ", unparseable " << result.unparseable << ", failed " << result.failed
                << ")\n";
            return kExitOk;
        });
    }

    if (exp->parsed()) {
        return guarded(export_c, [&] {
            const auto data = load_dataset(export_data);
            const auto kept = load_perturbed(export_variants);
            std::map<std::string, std::string> advisory;
            if (!export_advisory.empty()) {
                advisory = json::parse(read_file(export_advisory)).get<std::map<std::string, std::string>>();
            }
            const auto tasks = export_tasks(data, kept, advisory);
            AnnotationProject::create(export_project, tasks, annotators);
            if (!export_c.out.empty()) emit(export_c.out, to_jsonl(tasks), out);
            out << "tasks: " << tasks.size() << " (annotators: " << annotators.size() << ")\n";
            return kExitOk;
        });
    }

    if (imp->parsed()) {
        return guarded(import_c, [&] {
            auto project = AnnotationProject::open(import_project);
            const auto judgments = load_judgments(import_file);
            const auto added = project.import_judgments(judgments);
            out << "imported " << added << " new judgments (" << judgments.size() - added << " already present)\n";
            return kExitOk;
        });
    }

    if (serve->parsed()) {
        return guarded(serve_c, [&] {
            AnnotationService service(AnnotationProject::open(serve_project), ServiceOptions{!no_blind, {}});
            out << "serving " << serve_project << " on http://" << host << ":" << port << "\n" << std::flush;
            service.listen(host, port);
            return kExitOk;
        });
    }

    if (fin->parsed()) {
        return guarded(finalize_c, [&] {
            if (finalize_c.out.empty()) throw ConfigError("--out is required");
            const auto project = AnnotationProject::open(finalize_project);
            const auto result = finalize_benchmark(project.book().tasks());
            save_dataset(finalize_c.out, result.benchmark);
            const std::string report_path = finalize_report.empty() ? finalize_c.out + ".report.json" : finalize_report;
            json report = result;
            report["matrix"] = result.matrix;
            write_file_atomic(report_path, report.dump(2) + "\n");
            out << "tasks: " << result.input_tasks << ", removed equivalent: " << result.removed_equivalent
                << ", final: " << result.benchmark.size() << "\n";
            out << "kappa: " << (result.kappa ? fixed(*result.kappa, 4) : std::string("n/a")) << "\n";
            return kExitOk;
        });
    }

    if (augment->parsed()) {
        return guarded(augment_c, [&] {
            RunConfig cfg = resolve(augment_c);
            if (augment_c.out.empty()) throw ConfigError("--out is required");
            const auto library = load_library(augment_library);
            const auto data = load_dataset(require_path(augment_data, cfg.target_dataset, "--dataset"));
            AugmentOptions options{cfg.seed, include_seed, fraction};
            if (!include_seed && library.validated().empty()) {
                throw ConfigError("bias library has no validated biases (see --include-seed)");
            }
            Gateway gateway(make_backend(cfg, augment_c.kill_after_calls), gateway_options(cfg));
            std::optional<PromptForge> custom;
            auto result = augment_preferences(data, library, handle(gateway, cfg.teacher), options,
                                              forge_for(cfg, custom));
            emit(augment_c.out, serialize_augmented(result), out);
            out << "rows: " << result.rows.size() << ", rewritten: " << result.rewritten
                << ", skipped: " << result.skipped << "\n";
            return kExitOk;
        });
    }

    if (kappa->parsed()) {
        return guarded(kappa_c, [&] {
            const auto m = parse_count_matrix_csv(read_file(matrix));
            const double k = raters > 0 ? fleiss_kappa(m, raters) : fleiss_kappa(m);
            emit(kappa_c.out, fixed(k, 4) + "\n", out);
            return kExitOk;
        });
    }

    if (audit->parsed()) {
        return guarded(audit_c, [&] {
            RunConfig cfg = resolve(audit_c);
            const auto data = load_dataset(require_path(audit_data, cfg.target_dataset, "--dataset"));
            const auto perturbed = load_perturbed(audit_perturbed);
            Gateway gateway(make_backend(cfg, audit_c.kill_after_calls), gateway_options(cfg));
            std::optional<PromptForge> custom;
            const auto report = answer_change_audit(data, perturbed, handle(gateway, cfg.checker), forge_for(cfg, custom));
            emit(audit_c.out, json(report).dump(2) + "\n", out);
            if (!audit_c.out.empty() && audit_c.out != "-") {
                out << "original: " << report.original.equal << "/" << report.original.total << " equal ("
                    << percent(report.original.rate) << ")\n";
                out << "perturbed: " << report.perturbed.equal << "/" << report.perturbed.total << " equal ("
                    << percent(report.perturbed.rate) << ")\n";
            }
            return kExitOk;
        });
    }

    if (lengths->parsed()) {
        return guarded(lengths_c, [&] {
            LengthStats s;
            if (!means.empty()) {
                s.mean_original = means[0];
                s.mean_perturbed = means[1];
                s.percent_increase = percent_increase(means[0], means[1]);
            } else {
                RunConfig cfg = resolve(lengths_c);
                if (lengths_perturbed.empty()) throw ConfigError("give --perturbed or --means");
                const auto data = load_dataset(require_path(lengths_data, cfg.target_dataset, "--dataset"));
                s = length_stats(rejection_pairs(data, load_perturbed(lengths_perturbed)));
            }
            if (!lengths_c.out.empty() && lengths_c.out != "-") emit(lengths_c.out, json(s).dump(2) + "\n", out);
            out << "mean original " << fixed(s.mean_original, 2) << ", mean perturbed " << fixed(s.mean_perturbed, 2)
                << ", increase " << percent(s.percent_increase) << "\n";
            return kExitOk;
        });
    }

    if (trunc->parsed()) {
        return guarded(trunc_c, [&] {
            RunConfig cfg = resolve(trunc_c);
            const auto data = load_dataset(require_path(trunc_data, cfg.target_dataset, "--dataset"));
            const auto perturbed = load_perturbed(trunc_perturbed);
            if (!trunc_write.empty()) write_file_atomic(trunc_write, to_jsonl(truncate_perturbed(data, perturbed)));
            Gateway gateway(make_backend(cfg, trunc_c.kill_after_calls), gateway_options(cfg));
            std::optional<PromptForge> custom;
            const auto study = truncation_study(data, perturbed, handle(gateway, cfg.target), cfg.seed,
                                                EvaluateOptions{cfg.strict_parse, &forge_for(cfg, custom)});
            emit(trunc_c.out, json(study).dump(2) + "\n", out);
            if (!trunc_c.out.empty() && trunc_c.out != "-") {
                out << "err original " << fixed(study.original.err, 4) << ", perturbed " << fixed(study.perturbed.err, 4)
                    << ", truncated " << fixed(study.truncated.err, 4) << "\n";
            }
            return kExitOk;
        });
    }

    err << app.help();
    return kExitUsage;
}

}  // namespace biasscope
