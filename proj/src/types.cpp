#include "biasscope/types.hpp"

#include <algorithm>
#include <cctype>

#include "biasscope/errors.hpp"

namespace biasscope {

std::string_view to_string(Category c) {
    switch (c) {
        case Category::code: return "code";
        case Category::knowledge: return "knowledge";
        case Category::math: return "math";
        case Category::reasoning: return "reasoning";
        case Category::chat: return "chat";
        case Category::chat_hard: return "chat_hard";
        case Category::safety: return "safety";
        case Category::other: return "other";
    }
    return "other";
}

Category parse_category(std::string_view label) {
    std::string key;
    for (char ch : label) {
        auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) key.push_back(static_cast<char>(std::tolower(u)));
    }
    if (key == "code" || key == "coding") return Category::code;
    if (key == "knowledge" || key == "knowl") return Category::knowledge;
    if (key == "math" || key == "mathematics") return Category::math;
    if (key == "reasoning" || key == "reason") return Category::reasoning;
    if (key == "chat") return Category::chat;
    if (key == "chathard") return Category::chat_hard;
    if (key == "safety") return Category::safety;
    return Category::other;
}

std::string bias_information(const BiasSpec& bias) {
    return bias.name + ": " + bias.definition;
}

std::string_view to_string(Order o) {
    return o == Order::chosen_first ? "chosen_first" : "rejected_first";
}

Order parse_order(std::string_view s) {
    if (s == "chosen_first") return Order::chosen_first;
    if (s == "rejected_first") return Order::rejected_first;
    throw MalformedRecord("unknown order '" + std::string(s) + "'");
}

namespace {

std::string_view origin_name(BiasOrigin o) {
    return o == BiasOrigin::seed ? "seed" : "discovered";
}

BiasOrigin parse_origin(const std::string& s) {
    if (s == "seed") return BiasOrigin::seed;
    if (s == "discovered") return BiasOrigin::discovered;
    throw MalformedRecord("unknown bias origin '" + s + "'");
}

}  // namespace

void to_json(json& j, const PreferenceTriple& t) {
    j = json{{"id", t.id},
             {"instruction", t.instruction},
             {"chosen", t.chosen},
             {"rejected", t.rejected},
             {"category", std::string(to_string(t.category))},
             {"source", t.source}};
}

void from_json(const json& j, PreferenceTriple& t) {
    const auto& id = j.at("id");
    t.id = id.is_string() ? id.get<std::string>() : id.dump();
    t.instruction = j.at("instruction").get<std::string>();
    t.chosen = j.at("chosen").get<std::string>();
    t.rejected = j.at("rejected").get<std::string>();
    t.category = Category::other;
    if (auto it = j.find("category"); it != j.end() && it->is_string()) {
        t.category = parse_category(it->get<std::string>());
    }
    t.source.clear();
    if (auto it = j.find("source"); it != j.end() && it->is_string()) {
        t.source = it->get<std::string>();
    }
}

void to_json(json& j, const ValidationRecord& v) {
    j = json{{"err_baseline", v.err_baseline},
             {"err_perturbed", v.err_perturbed},
             {"test_set_id", v.test_set_id}};
}

void from_json(const json& j, ValidationRecord& v) {
    v.err_baseline = j.at("err_baseline").get<double>();
    v.err_perturbed = j.at("err_perturbed").get<double>();
    v.test_set_id = j.value("test_set_id", std::string{});
}

void to_json(json& j, const BiasSpec& b) {
    j = json{{"name", b.name},
             {"definition", b.definition},
             {"origin", std::string(origin_name(b.origin))},
             {"discovered_iteration", nullptr},
             {"validation", nullptr}};
    if (b.discovered_iteration) j["discovered_iteration"] = *b.discovered_iteration;
    if (b.validation) j["validation"] = *b.validation;
}

void from_json(const json& j, BiasSpec& b) {
    b.name = j.at("name").get<std::string>();
    b.definition = j.value("definition", std::string{});
    b.origin = parse_origin(j.value("origin", std::string{"seed"}));
    b.discovered_iteration.reset();
    if (auto it = j.find("discovered_iteration"); it != j.end() && !it->is_null()) {
        b.discovered_iteration = it->get<int>();
    }
    b.validation.reset();
    if (auto it = j.find("validation"); it != j.end() && !it->is_null()) {
        b.validation = it->get<ValidationRecord>();
    }
}

void to_json(json& j, const PerturbedTriple& p) {
    j = json{{"base_id", p.base_id},
             {"bias_name", p.bias_name},
             {"rejected_perturbed", p.rejected_perturbed},
             {"provenance",
              {{"teacher_model", p.provenance.teacher_model},
               {"prompt_digest", p.provenance.prompt_digest}}}};
}

void from_json(const json& j, PerturbedTriple& p) {
    p.base_id = j.at("base_id").get<std::string>();
    p.bias_name = j.at("bias_name").get<std::string>();
    p.rejected_perturbed = j.at("rejected_perturbed").get<std::string>();
    const auto& prov = j.at("provenance");
    p.provenance.teacher_model = prov.value("teacher_model", std::string{});
    p.provenance.prompt_digest = prov.value("prompt_digest", std::string{});
}

void to_json(json& j, const JudgeVerdict& v) {
    j = json{{"decision", static_cast<int>(v.decision)},
             {"reasoning", v.reasoning},
             {"order", std::string(to_string(v.order))},
             {"correct", v.correct}};
}

void from_json(const json& j, JudgeVerdict& v) {
    const int d = j.at("decision").get<int>();
    if (d != 1 && d != 2) throw MalformedRecord("decision must be 1 or 2");
    v.decision = static_cast<Decision>(d);
    v.reasoning = j.at("reasoning").get<std::string>();
    v.order = parse_order(j.at("order").get<std::string>());
    v.correct = j.at("correct").get<bool>();
}

void to_json(json& j, const EvaluationRecord& r) {
    j = json{{"triple", r.triple},
             {"verdict", r.verdict},
             {"bias_name", nullptr},
             {"deeper_explanation", nullptr}};
    if (r.bias_name) j["bias_name"] = *r.bias_name;
    if (r.deeper_explanation) j["deeper_explanation"] = *r.deeper_explanation;
}

void from_json(const json& j, EvaluationRecord& r) {
    r.triple = j.at("triple").get<PreferenceTriple>();
    r.verdict = j.at("verdict").get<JudgeVerdict>();
    r.bias_name.reset();
    if (auto it = j.find("bias_name"); it != j.end() && !it->is_null()) {
        r.bias_name = it->get<std::string>();
    }
    r.deeper_explanation.reset();
    if (auto it = j.find("deeper_explanation"); it != j.end() && !it->is_null()) {
        r.deeper_explanation = it->get<std::string>();
    }
}

void to_json(json& j, const CategoryTally& c) {
    j = json{{"total", c.total}, {"mistakes", c.mistakes}, {"err", c.err}};
}

void from_json(const json& j, CategoryTally& c) {
    c.total = j.at("total").get<std::size_t>();
    c.mistakes = j.at("mistakes").get<std::size_t>();
    c.err = j.at("err").get<double>();
}

void to_json(json& j, const ErrorReport& r) {
    j = json{{"tag", r.tag},
             {"total", r.total},
             {"mistakes", r.mistakes},
             {"unparsed", r.unparsed},
             {"err", r.err},
             {"per_category", r.per_category},
             {"unparsed_ids", r.unparsed_ids}};
}

void from_json(const json& j, ErrorReport& r) {
    r.tag = j.value("tag", std::string{});
    r.total = j.at("total").get<std::size_t>();
    r.mistakes = j.at("mistakes").get<std::size_t>();
    r.unparsed = j.value("unparsed", std::size_t{0});
    r.err = j.at("err").get<double>();
    r.per_category = j.value("per_category", std::map<std::string, CategoryTally>{});
    r.unparsed_ids = j.value("unparsed_ids", std::vector<std::string>{});
}

UnresolvedTasks::UnresolvedTasks(std::vector<std::string> ids)
    : Error("UnresolvedTasks",
            [&] {
                std::string msg = std::to_string(ids.size()) + " task(s) unresolved:";
                for (const auto& id : ids) msg += " " + id;
                return msg;
            }()),
      ids_(std::move(ids)) {}

}  // namespace biasscope
