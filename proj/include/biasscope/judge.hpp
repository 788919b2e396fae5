#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "biasscope/gateway.hpp"
#include "biasscope/prompt_forge.hpp"
#include "biasscope/types.hpp"

namespace biasscope {

using OrderMap = std::map<std::string, Order>;

// Seeded per-item coin: each id gets rejected_first with probability
// `swap_probability`, drawn in dataset order. Throws EmptyDataset.
OrderMap assign_orders(const std::vector<PreferenceTriple>& dataset, std::uint64_t seed,
                       double swap_probability = 0.5);

// Takes the last line starting with "Decision:", strips whitespace and
// punctuation from the payload and accepts exactly "1" or "2".
// Throws UnparseableVerdict.
Decision parse_verdict(std::string_view raw);

// The judge's explanation: the "Reasoning:" section when present, otherwise
// the reply without its Decision line.
std::string extract_reasoning(std::string_view raw);

// (answer1, answer2) as presented under `order`.
std::pair<const std::string&, const std::string&> presented(const PreferenceTriple& t, Order order);

std::string render_judge_prompt(const PreferenceTriple& triple, Order order,
                                const PromptForge& forge = PromptForge::builtin());

JudgeVerdict judge_pair(const PreferenceTriple& triple, const ModelHandle& judge, Order order,
                        const PromptForge& forge = PromptForge::builtin());

struct EvaluateOptions {
    bool strict_parse = false;  // count unparseable verdicts as mistakes
    const PromptForge* forge = nullptr;
};

struct Evaluation {
    std::vector<EvaluationRecord> records;  // parsed verdicts, dataset order
    ErrorReport report;
};

// Judges every triple under its assigned order. Err is mistakes / total over
// parsed verdicts; unparseable items are reported separately. Gateway errors
// propagate. Throws EmptyDataset, AllUnparseable, ConfigError (missing order).
Evaluation evaluate_dataset(const std::vector<PreferenceTriple>& dataset,
                            const ModelHandle& judge, const OrderMap& orders, std::string tag,
                            const EvaluateOptions& options = {});

// Builds the error report for already-judged records.
ErrorReport summarize(std::string tag, const std::vector<EvaluationRecord>& records,
                      const std::vector<PreferenceTriple>& unparsed, bool strict_parse);

}  // namespace biasscope
