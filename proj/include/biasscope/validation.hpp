#pragma once

#include <string>
#include <vector>

#include "biasscope/bias_library.hpp"
#include "biasscope/discovery.hpp"
#include "biasscope/judge.hpp"

namespace biasscope {

// Perturbs every test triple under the single bias `bias`.
PerturbOutcome perturb_testset(const std::vector<PreferenceTriple>& test, const BiasSpec& bias,
                               const ModelHandle& teacher,
                               const PromptForge& forge = PromptForge::builtin());

// Admission rule: the perturbed error rate must exceed the baseline by more
// than `min_delta` (strictly greater at the default of 0).
bool verify(double err_baseline, double err_perturbed, double min_delta = 0.0);

struct CandidateValidation {
    std::string bias;
    double err_baseline = 0.0;
    double err_perturbed = 0.0;
    double delta = 0.0;
    bool accepted = false;
    std::string note;  // why a candidate could not be evaluated, if so
};

void to_json(json& j, const CandidateValidation& c);
void from_json(const json& j, CandidateValidation& c);

struct ValidationResult {
    std::vector<BiasSpec> validated;         // with validation records filled
    std::vector<ErrorReport> reports;        // baseline first, then one per evaluated candidate
    std::vector<CandidateValidation> rows;   // one per candidate, candidate order
};

struct ValidateOptions {
    double min_delta = 0.0;
    bool strict_parse = false;
    std::string test_set_id;
    const PromptForge* forge = nullptr;
};

// Perturbs the test set per candidate, evaluates under the frozen `orders`,
// and admits candidates per `verify` against the shared baseline.
ValidationResult validate_candidates(const std::vector<BiasSpec>& candidates,
                                     const std::vector<PreferenceTriple>& test,
                                     const ModelHandle& target, const ModelHandle& teacher,
                                     const OrderMap& orders, const ErrorReport& baseline,
                                     const ValidateOptions& options = {});

// B_{t+1} = B_t plus the validated biases, at `next_version`.
BiasLibrary extend_library(const BiasLibrary& library, const std::vector<BiasSpec>& validated,
                           int next_version);

}  // namespace biasscope
