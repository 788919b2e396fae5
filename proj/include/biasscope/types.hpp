#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace biasscope {

using json = nlohmann::json;

enum class Category { code, knowledge, math, reasoning, chat, chat_hard, safety, other };

std::string_view to_string(Category c);
// Accepts the canonical names plus the common dataset spellings
// ("Knowl.", "Reason.", "Chat Hard", ...). Unknown labels map to `other`.
Category parse_category(std::string_view label);

// One instruction with a preferred and a dispreferred response.
struct PreferenceTriple {
    std::string id;
    std::string instruction;
    std::string chosen;
    std::string rejected;
    Category category = Category::other;
    std::string source;

    bool operator==(const PreferenceTriple&) const = default;
};

struct ValidationRecord {
    double err_baseline = 0.0;
    double err_perturbed = 0.0;
    std::string test_set_id;

    bool operator==(const ValidationRecord&) const = default;
};

enum class BiasOrigin { seed, discovered };

struct BiasSpec {
    std::string name;  // normalized
    std::string definition;
    BiasOrigin origin = BiasOrigin::seed;
    std::optional<int> discovered_iteration;
    std::optional<ValidationRecord> validation;

    bool operator==(const BiasSpec&) const = default;
};

// Rendering used for the `{bias}` slot of the injection template.
std::string bias_information(const BiasSpec& bias);

struct Provenance {
    std::string teacher_model;
    std::string prompt_digest;

    bool operator==(const Provenance&) const = default;
};

// A triple whose rejected side was rewritten under one bias.
struct PerturbedTriple {
    std::string base_id;
    std::string bias_name;
    std::string rejected_perturbed;
    Provenance provenance;

    bool operator==(const PerturbedTriple&) const = default;
};

enum class Order { chosen_first, rejected_first };

std::string_view to_string(Order o);
Order parse_order(std::string_view s);

enum class Decision { first = 1, second = 2 };

// Whether `decision` picks the chosen response when presented in `order`.
constexpr bool is_correct(Order order, Decision decision) {
    return (order == Order::chosen_first && decision == Decision::first) ||
           (order == Order::rejected_first && decision == Decision::second);
}

struct JudgeVerdict {
    Decision decision = Decision::first;
    std::string reasoning;
    Order order = Order::chosen_first;
    bool correct = false;

    bool operator==(const JudgeVerdict&) const = default;
};

struct EvaluationRecord {
    PreferenceTriple triple;  // as judged (rejected may be perturbed)
    JudgeVerdict verdict;
    std::optional<std::string> bias_name;  // set when the triple was perturbed
    std::optional<std::string> deeper_explanation;

    bool operator==(const EvaluationRecord&) const = default;
};

struct CategoryTally {
    std::size_t total = 0;
    std::size_t mistakes = 0;
    double err = 0.0;

    bool operator==(const CategoryTally&) const = default;
};

struct ErrorReport {
    std::string tag;
    std::size_t total = 0;     // parsed verdicts counted towards err
    std::size_t mistakes = 0;
    std::size_t unparsed = 0;  // excluded from err unless strict parsing
    double err = 0.0;
    std::map<std::string, CategoryTally> per_category;
    std::vector<std::string> unparsed_ids;

    bool operator==(const ErrorReport&) const = default;
};

// JSON mappings. Field names follow the on-disk formats.
void to_json(json& j, const PreferenceTriple& t);
void from_json(const json& j, PreferenceTriple& t);
void to_json(json& j, const ValidationRecord& v);
void from_json(const json& j, ValidationRecord& v);
void to_json(json& j, const BiasSpec& b);
void from_json(const json& j, BiasSpec& b);
void to_json(json& j, const PerturbedTriple& p);
void from_json(const json& j, PerturbedTriple& p);
void to_json(json& j, const JudgeVerdict& v);
void from_json(const json& j, JudgeVerdict& v);
void to_json(json& j, const EvaluationRecord& r);
void from_json(const json& j, EvaluationRecord& r);
void to_json(json& j, const CategoryTally& c);
void from_json(const json& j, CategoryTally& c);
void to_json(json& j, const ErrorReport& r);
void from_json(const json& j, ErrorReport& r);

}  // namespace biasscope
