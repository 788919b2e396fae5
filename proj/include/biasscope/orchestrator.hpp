#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biasscope/bias_library.hpp"
#include "biasscope/config.hpp"
#include "biasscope/gateway.hpp"
#include "biasscope/prompt_forge.hpp"
#include "biasscope/types.hpp"

namespace biasscope {

enum class Phase { perturb, evaluate, deepen, identify, dedup, validate, done };

std::string_view to_string(Phase p);
Phase parse_phase(std::string_view s);

inline constexpr std::string_view kReasonEmptyCandidates = "empty candidate set";
inline constexpr std::string_view kReasonLibraryStable = "library stable";
inline constexpr std::string_view kReasonMaxIterations = "max iterations";

struct IterationReport {
    int iteration = 0;
    std::size_t library_before = 0;
    std::size_t perturbed = 0;
    std::size_t perturb_failed = 0;
    double err_discovery = 0.0;
    std::size_t misjudged = 0;
    std::size_t identified = 0;
    std::size_t candidates = 0;
    std::optional<double> err_baseline;  // absent when there was nothing to validate
    std::vector<std::string> validated;
    std::size_t library_after = 0;

    bool operator==(const IterationReport&) const = default;
};

void to_json(json& j, const IterationReport& r);
void from_json(const json& j, IterationReport& r);

struct RunState {
    int iteration = 0;
    BiasLibrary library;
    Phase phase = Phase::perturb;
    std::uint64_t rng_seed = 0;
    // Phases finished within the current iteration. Item-level progress is
    // recovered from the gateway cache instead.
    std::size_t completed_item_cursor = 0;
    std::string config_digest;
    bool converged = false;
    std::string convergence_reason;
    std::vector<IterationReport> history;

    bool operator==(const RunState&) const = default;
};

json state_to_json(const RunState& s);
RunState state_from_json(const json& j);

void checkpoint(const RunState& state, const std::filesystem::path& path);
// Throws CorruptCheckpoint on damaged files and ConfigMismatch when
// `expected_digest` is non-empty and differs from the stored one.
RunState restore(const std::filesystem::path& path, std::string_view expected_digest = {});

struct LoopSettings {
    int t_max = 4;
    bool deeper_explain = true;
    double swap_probability = 0.5;
    double min_delta = 0.0;
    bool strict_parse = false;
    std::string test_set_id;
    const PromptForge* forge = nullptr;
};

struct IterationContext {
    const std::vector<PreferenceTriple>& target_data;
    const std::vector<PreferenceTriple>& test_data;
    ModelHandle target;
    ModelHandle teacher;
    LoopSettings settings;
    // Phase artifacts and checkpoints go here; empty keeps everything in memory.
    std::filesystem::path run_dir;
    // Called after every phase checkpoint. Tests use it to interrupt a run.
    std::function<void(const RunState&)> after_phase;
};

// Runs the remaining phases of iteration `state.iteration` and returns the
// state at the start of the next iteration (or `done`).
RunState run_iteration(RunState state, const IterationContext& ctx);

// Loops run_iteration until convergence or t_max. Writes nothing when
// ctx.run_dir is empty.
RunState run_loop(RunState state, const IterationContext& ctx);

RunState initial_state(BiasLibrary seed_library, std::uint64_t seed, std::string config_digest);

json run_report(const RunState& state);

struct RunOptions {
    std::filesystem::path run_dir;
    bool resume = false;
    std::function<void(const RunState&)> after_phase;
};

struct RunOutcome {
    RunState state;
    json report;
    bool already_converged = false;  // resumed a run that had finished
};

// Loads datasets and the seed library named by `config` and drives the loop
// with `gateway`. Phase failures surface as RunFailed naming state.ckpt.
RunOutcome run(const RunConfig& config, Gateway& gateway, const RunOptions& options);

BiasLibrary load_seed_library(const RunConfig& config);

struct DryRunPrompt {
    std::string phase;
    std::string prompt;
};

// Renders one prompt per phase for the first item, without backend calls.
std::vector<DryRunPrompt> dry_run_prompts(const std::vector<PreferenceTriple>& target_data,
                                          const BiasLibrary& library,
                                          const PromptForge& forge = PromptForge::builtin());

}  // namespace biasscope
