#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "biasscope/gateway.hpp"
#include "biasscope/judge.hpp"
#include "biasscope/prompt_forge.hpp"
#include "biasscope/types.hpp"

namespace biasscope {

using CountMatrix = std::vector<std::vector<std::int64_t>>;

// Fleiss' kappa for N items rated by `raters_per_item` raters into k
// categories. Throws RowSumMismatch when a row does not sum to n (or holds a
// negative count) and DegenerateAgreement when every rating falls into one
// category.
double fleiss_kappa(const CountMatrix& counts, std::int64_t raters_per_item);
// Takes n from the first row.
double fleiss_kappa(const CountMatrix& counts);

// Rows of non-negative integers separated by commas; a first line holding any
// non-numeric cell is treated as a header and skipped.
CountMatrix parse_count_matrix_csv(std::string_view text);

using Tokenizer = std::function<std::size_t(std::string_view)>;

// Whitespace-delimited token count.
std::size_t token_count(std::string_view text);

double percent_increase(double mean_original, double mean_perturbed);

struct LengthStats {
    std::size_t pairs = 0;
    double mean_original = 0.0;
    double mean_perturbed = 0.0;
    double percent_increase = 0.0;  // fraction, 0.084 for +8.4%
};

void to_json(json& j, const LengthStats& s);

// `tokenizer` defaults to token_count.
LengthStats length_stats(const std::vector<std::pair<std::string, std::string>>& pairs,
                         const Tokenizer& tokenizer = {});

// First `target_tokens` whitespace tokens joined by single spaces.
std::string truncate_to_match(std::string_view text, std::size_t target_tokens);

// Perturbed rejections cut to the token length of the original rejection.
std::vector<PerturbedTriple> truncate_perturbed(const std::vector<PreferenceTriple>& base,
                                                const std::vector<PerturbedTriple>& perturbed);

// Pairs of (original rejected, perturbed rejected) for length_stats.
std::vector<std::pair<std::string, std::string>> rejection_pairs(
    const std::vector<PreferenceTriple>& base, const std::vector<PerturbedTriple>& perturbed);

struct EqualityCounts {
    std::size_t total = 0;  // items with a parsed verdict
    std::size_t equal = 0;
    std::size_t failed = 0;  // gateway errors or unparseable replies
    double rate = 0.0;
};

struct AuditReport {
    EqualityCounts original;
    EqualityCounts perturbed;
    double delta = 0.0;  // perturbed.rate - original.rate
};

void to_json(json& j, const EqualityCounts& c);
void to_json(json& j, const AuditReport& r);

// True for SAME, false for DIFFERENT; reads the last "Verdict:" line.
bool parse_answer_check(std::string_view raw);

std::string render_answer_check_prompt(std::string_view question, std::string_view response1,
                                       std::string_view response2,
                                       const PromptForge& forge = PromptForge::builtin());

// Asks `checker` whether the chosen answer and the rejected answer reach the
// same final answer, once with the original rejection and once with the
// perturbed one.
AuditReport answer_change_audit(const std::vector<PreferenceTriple>& base,
                                const std::vector<PerturbedTriple>& perturbed,
                                const ModelHandle& checker,
                                const PromptForge& forge = PromptForge::builtin());

struct TruncationStudy {
    ErrorReport original;
    ErrorReport perturbed;
    ErrorReport truncated;
    LengthStats before;
    LengthStats after;
};

void to_json(json& j, const TruncationStudy& s);

// Judges the original, perturbed and length-matched perturbed sets with the
// same presentation orders.
TruncationStudy truncation_study(const std::vector<PreferenceTriple>& base,
                                 const std::vector<PerturbedTriple>& perturbed,
                                 const ModelHandle& judge, std::uint64_t seed,
                                 const EvaluateOptions& options = {});

}  // namespace biasscope
