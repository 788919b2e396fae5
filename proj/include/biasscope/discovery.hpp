#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biasscope/bias_library.hpp"
#include "biasscope/gateway.hpp"
#include "biasscope/prompt_forge.hpp"
#include "biasscope/types.hpp"

namespace biasscope {

struct PerturbOutcome {
    std::vector<PerturbedTriple> items;  // input order, failed items omitted
    std::vector<std::string> failed_ids;
};

std::string render_injection_prompt(const PreferenceTriple& triple, const BiasSpec& bias,
                                    const PromptForge& forge = PromptForge::builtin());

// Rewrites the rejected side of `triple` under `bias` with the teacher.
// Throws MalformedResponse on an empty rewrite; gateway errors propagate.
PerturbedTriple perturb_one(const PreferenceTriple& triple, const BiasSpec& bias,
                            const ModelHandle& teacher,
                            const PromptForge& forge = PromptForge::builtin());

// Perturbs triple i under *assignment[i]. Items whose teacher call fails
// (after the gateway's retries) are skipped and listed in failed_ids.
PerturbOutcome perturb_assigned(const std::vector<PreferenceTriple>& dataset,
                                const std::vector<const BiasSpec*>& assignment,
                                const ModelHandle& teacher,
                                const PromptForge& forge = PromptForge::builtin());

// Draws one bias per triple uniformly from the library (seeded, in dataset
// order) and perturbs the rejected responses. Throws EmptyLibrary.
PerturbOutcome perturb_dataset(const std::vector<PreferenceTriple>& dataset,
                               const BiasLibrary& library, const ModelHandle& teacher,
                               std::uint64_t seed,
                               const PromptForge& forge = PromptForge::builtin());

// Records whose verdict is incorrect, in input order.
std::vector<EvaluationRecord> extract_misjudged(const std::vector<EvaluationRecord>& records);

struct DeepenOutcome {
    std::vector<EvaluationRecord> records;
    std::vector<std::string> failed_ids;
};

std::string render_deeper_explain_prompt(const EvaluationRecord& record,
                                         const PromptForge& forge = PromptForge::builtin());

// Asks the target to justify its own wrong pick; the reply becomes the
// record's deeper_explanation.
DeepenOutcome deepen_explanations(const std::vector<EvaluationRecord>& misjudged,
                                  const ModelHandle& target,
                                  const PromptForge& forge = PromptForge::builtin());

struct DetectionReply {
    bool biased = false;
    std::string name;        // normalized, empty when !biased
    std::string definition;  // empty when !biased
};

// Parses the fenced ```json block of a detection reply. Throws
// MalformedDetection.
DetectionReply parse_detection(std::string_view raw);

std::string render_detection_prompt(const EvaluationRecord& record, bool use_deeper,
                                    const PromptForge& forge = PromptForge::builtin());

struct DetectionResult {
    std::vector<BiasSpec> biases;  // deduplicated by name, first definition kept
    std::vector<std::string> malformed_ids;
    std::vector<std::string> failed_ids;
    std::size_t no_bias = 0;
};

// use_deeper selects bias_detect_deep (requires deeper_explanation) or the
// basic template used when DeeperExplain is disabled.
DetectionResult identify_biases(const std::vector<EvaluationRecord>& records,
                                const ModelHandle& teacher, bool use_deeper, int iteration,
                                const PromptForge& forge = PromptForge::builtin());

// 1 = new bias, 0 = duplicate. Throws UnparseableDecision.
int parse_merge_decision(std::string_view raw);

std::string render_merge_prompt(const BiasSpec& bias, const std::vector<BiasSpec>& reference,
                                const PromptForge& forge = PromptForge::builtin());

struct MergeOutcome {
    std::vector<BiasSpec> merged;  // library entries first, then kept new biases
    std::vector<std::string> kept;
    std::vector<std::string> dropped_exact;
    std::vector<std::string> dropped_similar;
    std::vector<std::string> dropped_unparseable;
};

// Screens new biases in arrival order against the library plus the new biases
// kept so far. Exact-name duplicates are dropped without a teacher call.
MergeOutcome dedup_merge(const std::vector<BiasSpec>& new_biases, const BiasLibrary& library,
                         const ModelHandle& teacher,
                         const PromptForge& forge = PromptForge::builtin());

// Entries of `merged` whose normalized name is not in `library`.
std::vector<BiasSpec> candidate_set(const std::vector<BiasSpec>& merged,
                                    const BiasLibrary& library);

}  // namespace biasscope
