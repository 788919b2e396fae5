#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "biasscope/bias_library.hpp"
#include "biasscope/gateway.hpp"
#include "biasscope/prompt_forge.hpp"
#include "biasscope/types.hpp"

namespace biasscope {

struct AugmentOptions {
    std::uint64_t seed = 0;
    bool include_seed = false;  // sample from the whole library, not only validated biases
    double fraction = 1.0;      // share of rows to rewrite
};

struct AugmentedRow {
    std::string id;
    std::string prompt;
    std::string chosen;
    std::string rejected;
    std::optional<std::string> bias_name;  // null when the row was left as is
    bool skipped = false;                   // rewrite attempted but failed

    bool operator==(const AugmentedRow&) const = default;
};

void to_json(json& j, const AugmentedRow& r);
void from_json(const json& j, AugmentedRow& r);

struct AugmentResult {
    json metadata;
    std::vector<AugmentedRow> rows;  // input order
    std::size_t rewritten = 0;
    std::size_t skipped = 0;
};

// Trainer hyperparameters echoed into the output header.
json preference_training_metadata();

// Rewrites each selected row's rejected answer under a uniformly drawn bias.
// Throws ConfigError before any call when no usable bias exists.
AugmentResult augment_preferences(const std::vector<PreferenceTriple>& dataset,
                                  const BiasLibrary& library, const ModelHandle& teacher,
                                  const AugmentOptions& options,
                                  const PromptForge& forge = PromptForge::builtin());

// Metadata object on the first line, then one row per line.
std::string serialize_augmented(const AugmentResult& result);

}  // namespace biasscope
