#include "biasscope/discovery.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "biasscope/errors.hpp"
#include "biasscope/judge.hpp"
#include "biasscope/parallel.hpp"
#include "biasscope/rng.hpp"

namespace biasscope {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string_view trim(std::string_view s) {
    auto sp = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && sp(s.front())) s.remove_prefix(1);
    while (!s.empty() && sp(s.back())) s.remove_suffix(1);
    return s;
}

bool is_null_text(const json& v) {
    if (v.is_null()) return true;
    if (!v.is_string()) return false;
    auto s = lower(trim(v.get<std::string>()));
    return s.empty() || s == "null" || s == "none";
}

}  // namespace

std::string render_injection_prompt(const PreferenceTriple& triple, const BiasSpec& bias,
                                    const PromptForge& forge) {
    return forge.render(PromptKind::bias_injection, {{"question", triple.instruction},
                                                     {"answer", triple.rejected},
                                                     {"bias", bias_information(bias)}});
}

PerturbedTriple perturb_one(const PreferenceTriple& triple, const BiasSpec& bias,
                            const ModelHandle& teacher, const PromptForge& forge) {
    const auto prompt = render_injection_prompt(triple, bias, forge);
    auto reply = teacher.complete(prompt);
    if (trim(reply.text).empty()) {
        throw MalformedResponse("teacher returned an empty rewrite for '" + triple.id + "'");
    }
    return PerturbedTriple{
        triple.id, bias.name, std::move(reply.text),
        Provenance{teacher.model.model_id,
                   request_digest(teacher.model.model_id, prompt, teacher.params)}};
}

PerturbOutcome perturb_assigned(const std::vector<PreferenceTriple>& dataset,
                                const std::vector<const BiasSpec*>& assignment,
                                const ModelHandle& teacher, const PromptForge& forge) {
    if (assignment.size() != dataset.size()) {
        throw ConfigError("perturb: assignment size does not match dataset size");
    }
    std::vector<std::optional<PerturbedTriple>> slots(dataset.size());
    auto errors = run_indexed(dataset.size(), teacher.max_in_flight(), [&](std::size_t i) {
        slots[i] = perturb_one(dataset[i], *assignment[i], teacher, forge);
    });
    PerturbOutcome out;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const GatewayError& e) {
                spdlog::warn("perturb: skipping '{}': {}", dataset[i].id, e.what());
                out.failed_ids.push_back(dataset[i].id);
                continue;
            }
        }
        out.items.push_back(std::move(*slots[i]));
    }
    return out;
}

PerturbOutcome perturb_dataset(const std::vector<PreferenceTriple>& dataset,
                               const BiasLibrary& library, const ModelHandle& teacher,
                               std::uint64_t seed, const PromptForge& forge) {
    if (library.empty()) throw EmptyLibrary("perturb: bias library is empty");
    Rng rng(seed);
    std::vector<const BiasSpec*> assignment;
    assignment.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        assignment.push_back(&library.entries()[uniform_index(rng, library.size())]);
    }
    return perturb_assigned(dataset, assignment, teacher, forge);
}

std::vector<EvaluationRecord> extract_misjudged(const std::vector<EvaluationRecord>& records) {
    std::vector<EvaluationRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [](const EvaluationRecord& r) { return !r.verdict.correct; });
    return out;
}

std::string render_deeper_explain_prompt(const EvaluationRecord& record, const PromptForge& forge) {
    auto [a1, a2] = presented(record.triple, record.verdict.order);
    return forge.render(PromptKind::deeper_explain,
                        {{"question", record.triple.instruction},
                         {"answer1", a1},
                         {"answer2", a2},
                         {"chosen", std::to_string(static_cast<int>(record.verdict.decision))},
                         {"reason", record.verdict.reasoning}});
}

DeepenOutcome deepen_explanations(const std::vector<EvaluationRecord>& misjudged,
                                  const ModelHandle& target, const PromptForge& forge) {
    std::vector<std::optional<std::string>> texts(misjudged.size());
    auto errors = run_indexed(misjudged.size(), target.max_in_flight(), [&](std::size_t i) {
        texts[i] = target.complete(render_deeper_explain_prompt(misjudged[i], forge)).text;
    });
    DeepenOutcome out;
    for (std::size_t i = 0; i < misjudged.size(); ++i) {
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const GatewayError& e) {
                spdlog::warn("deepen: dropping '{}': {}", misjudged[i].triple.id, e.what());
                out.failed_ids.push_back(misjudged[i].triple.id);
                continue;
            }
        }
        EvaluationRecord r = misjudged[i];
        r.deeper_explanation = std::move(*texts[i]);
        out.records.push_back(std::move(r));
    }
    return out;
}

DetectionReply parse_detection(std::string_view raw) {
    std::size_t open = std::string_view::npos;
    std::size_t body = 0;
    for (std::size_t pos = raw.find("```"); pos != std::string_view::npos;
         pos = raw.find("```", pos + 3)) {
        auto after = raw.substr(pos + 3);
        if (lower(after.substr(0, 4)) == "json") {
            open = pos;
            body = pos + 7;
            break;
        }
    }
    if (open == std::string_view::npos) throw MalformedDetection("no ```json fenced block");
    const auto close = raw.find("```", body);
    if (close == std::string_view::npos) throw MalformedDetection("unterminated ```json block");

    json doc;
    try {
        doc = json::parse(raw.substr(body, close - body));
    } catch (const json::exception& e) {
        throw MalformedDetection(std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw MalformedDetection("detection payload is not an object");
    auto whether_it = doc.find("whether");
    if (whether_it == doc.end() || !whether_it->is_string()) {
        throw MalformedDetection("missing 'whether'");
    }
    const auto whether = lower(trim(whether_it->get<std::string>()));
    if (whether != "yes" && whether != "no") {
        throw MalformedDetection("'whether' must be yes or no, got '" + whether + "'");
    }
    if (!doc.contains("name")) throw MalformedDetection("missing 'name'");
    auto def_it = doc.find("Definition");
    if (def_it == doc.end()) def_it = doc.find("definition");
    if (def_it == doc.end()) throw MalformedDetection("missing 'Definition'");

    DetectionReply out;
    if (whether == "no") return out;
    if (is_null_text(doc["name"]) || is_null_text(*def_it)) {
        throw MalformedDetection("'whether' is yes but name/Definition is null");
    }
    try {
        out.name = normalize_bias_name(doc["name"].get<std::string>());
    } catch (const EmptyName& e) {
        throw MalformedDetection(e.what());
    }
    out.definition = std::string(trim(def_it->get<std::string>()));
    out.biased = true;
    return out;
}

std::string render_detection_prompt(const EvaluationRecord& record, bool use_deeper,
                                    const PromptForge& forge) {
    auto [a1, a2] = presented(record.triple, record.verdict.order);
    PromptInputs inputs{{"question", record.triple.instruction},
                        {"resp_a", a1},
                        {"resp_b", a2},
                        {"chosen", std::to_string(static_cast<int>(record.verdict.decision))},
                        {"reason", record.verdict.reasoning}};
    if (use_deeper) {
        if (!record.deeper_explanation) {
            throw ConfigError("detection: record '" + record.triple.id +
                              "' has no deeper explanation");
        }
        inputs.emplace("explanation", *record.deeper_explanation);
        return forge.render(PromptKind::bias_detect_deep, inputs);
    }
    return forge.render(PromptKind::bias_detect_basic, inputs);
}

DetectionResult identify_biases(const std::vector<EvaluationRecord>& records,
                                const ModelHandle& teacher, bool use_deeper, int iteration,
                                const PromptForge& forge) {
    std::vector<std::optional<DetectionReply>> replies(records.size());
    std::vector<bool> malformed(records.size(), false);
    auto errors = run_indexed(records.size(), teacher.max_in_flight(), [&](std::size_t i) {
        const auto text = teacher.complete(render_detection_prompt(records[i], use_deeper, forge)).text;
        try {
            replies[i] = parse_detection(text);
        } catch (const MalformedDetection& e) {
            malformed[i] = true;
        }
    });

    DetectionResult out;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& id = records[i].triple.id;
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const GatewayError& e) {
                spdlog::warn("identify: skipping '{}': {}", id, e.what());
                out.failed_ids.push_back(id);
                continue;
            }
        }
        if (malformed[i]) {
            spdlog::warn("identify: malformed detection reply for '{}'", id);
            out.malformed_ids.push_back(id);
            continue;
        }
        const auto& r = *replies[i];
        if (!r.biased) {
            ++out.no_bias;
            continue;
        }
        if (!seen.insert(r.name).second) continue;
        BiasSpec b;
        b.name = r.name;
        b.definition = r.definition;
        b.origin = BiasOrigin::discovered;
        b.discovered_iteration = iteration;
        out.biases.push_back(std::move(b));
    }
    return out;
}

int parse_merge_decision(std::string_view raw) {
    std::size_t end = raw.size();
    while (true) {
        const auto nl = end == 0 ? std::string_view::npos : raw.rfind('\n', end - 1);
        const std::size_t begin = nl == std::string_view::npos ? 0 : nl + 1;
        auto line = trim(raw.substr(begin, end - begin));
        if (line.substr(0, 9) == "Decision:") {
            auto payload = line.substr(9);
            auto strip = [](char c) {
                auto u = static_cast<unsigned char>(c);
                return std::isspace(u) || std::ispunct(u);
            };
            while (!payload.empty() && strip(payload.front())) payload.remove_prefix(1);
            while (!payload.empty() && strip(payload.back())) payload.remove_suffix(1);
            if (payload == "1") return 1;
            if (payload == "0") return 0;
            throw UnparseableDecision("invalid merge decision '" + std::string(payload) + "'");
        }
        if (begin == 0) break;
        end = begin - 1;
    }
    throw UnparseableDecision("no Decision line in merge reply");
}

std::string render_merge_prompt(const BiasSpec& bias, const std::vector<BiasSpec>& reference,
                                const PromptForge& forge) {
    return forge.render(PromptKind::merge_decision, {{"bias_name", bias.name},
                                                     {"bias_library_text", library_text(reference)},
                                                     {"definition", bias.definition}});
}

MergeOutcome dedup_merge(const std::vector<BiasSpec>& new_biases, const BiasLibrary& library,
                         const ModelHandle& teacher, const PromptForge& forge) {
    MergeOutcome out;
    out.merged = library.entries();
    std::unordered_set<std::string> names;
    for (const auto& e : out.merged) names.insert(e.name);

    for (const auto& candidate : new_biases) {
        BiasSpec b = candidate;
        b.name = normalize_bias_name(b.name);
        if (names.count(b.name)) {
            out.dropped_exact.push_back(b.name);
            continue;
        }
        int decision = 0;
        try {
            decision = parse_merge_decision(teacher.complete(render_merge_prompt(b, out.merged, forge)).text);
        } catch (const UnparseableDecision& e) {
            spdlog::warn("dedup: dropping '{}': {}", b.name, e.what());
            out.dropped_unparseable.push_back(b.name);
            continue;
        }
        if (decision == 1) {
            names.insert(b.name);
            out.kept.push_back(b.name);
            out.merged.push_back(std::move(b));
        } else {
            out.dropped_similar.push_back(b.name);
        }
    }
    return out;
}

std::vector<BiasSpec> candidate_set(const std::vector<BiasSpec>& merged, const BiasLibrary& library) {
    std::vector<BiasSpec> out;
    for (const auto& b : merged) {
        if (!library.contains(b.name)) out.push_back(b);
    }
    return out;
}

}  // namespace biasscope
