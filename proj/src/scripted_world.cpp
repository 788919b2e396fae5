#include "biasscope/scripted_world.hpp"

#include <algorithm>

#include "biasscope/dataset.hpp"
#include "biasscope/errors.hpp"
#include "biasscope/rng.hpp"

namespace biasscope {

std::string bias_marker(std::string_view name) { return "<<bias:" + std::string(name) + ">>"; }

std::string between(std::string_view text, std::string_view after, std::string_view before) {
    auto b = text.find(after);
    if (b == std::string_view::npos) return {};
    b += after.size();
    auto e = text.find(before, b);
    if (e == std::string_view::npos) return std::string(text.substr(b));
    return std::string(text.substr(b, e - b));
}

namespace {

std::vector<std::string> markers_in(std::string_view text) {
    std::vector<std::string> out;
    const std::string_view open = "<<bias:";
    for (auto p = text.find(open); p != std::string_view::npos; p = text.find(open, p + 1)) {
        auto e = text.find(">>", p);
        if (e == std::string_view::npos) break;
        out.emplace_back(text.substr(p + open.size(), e - p - open.size()));
    }
    return out;
}

std::string strip_markers(std::string text) {
    for (auto p = text.find("\n\n<<bias:"); p != std::string::npos; p = text.find("\n\n<<bias:")) {
        auto e = text.find(">>", p);
        if (e == std::string::npos) break;
        text.erase(p, e + 2 - p);
    }
    return text;
}

std::size_t count_of(std::string_view text, std::string_view token) {
    if (token.empty()) return 0;
    std::size_t n = 0;
    for (auto p = text.find(token); p != std::string_view::npos; p = text.find(token, p + token.size())) ++n;
    return n;
}

}  // namespace

ScriptedWorld ScriptedWorld::from_json(const json& j) {
    ScriptedWorld w;
    try {
        for (const auto& s : j.value("susceptible", std::vector<std::string>{})) w.susceptible.insert(s);
        w.reveals = j.value("reveals", std::map<std::string, std::vector<std::string>>{});
        w.definitions = j.value("definitions", std::map<std::string, std::string>{});
        w.similar = j.value("similar", std::vector<std::vector<std::string>>{});
        if (j.contains("penalized_tokens")) {
            w.penalized_tokens = j.at("penalized_tokens").get<std::vector<std::string>>();
        }
        w.echo_injection = j.value("echo_injection", false);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scripted world: ") + e.what());
    }
    return w;
}

ScriptedWorld ScriptedWorld::load(const std::filesystem::path& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

json ScriptedWorld::to_json() const {
    return json{{"susceptible", susceptible},   {"reveals", reveals},
                {"definitions", definitions},   {"similar", similar},
                {"penalized_tokens", penalized_tokens}, {"echo_injection", echo_injection}};
}

std::string ScriptedWorld::definition_of(const std::string& name) const {
    if (auto it = definitions.find(name); it != definitions.end()) return it->second;
    return "Refers to the tendency of the judge to favor responses that display " + name +
           " cues, regardless of their correctness.";
}

std::string ScriptedWorld::respond(std::string_view prompt) const {
    // Bias injection.
    if (prompt.find("**Bias Information:**") != std::string_view::npos) {
        auto answer = between(prompt, "**Existing Response:**\n\n", "\n\n**Bias Information:**");
        if (echo_injection) return answer;
        auto info = between(prompt, "**Bias Information:**\n\n", "\n\n\n**Output Format**");
        auto name = info.substr(0, info.find(": "));
        return answer + "\n\n" + bias_marker(name);
    }

    // Bias detection (both variants).
    if (prompt.find("You must respond **strictly in JSON**") != std::string_view::npos) {
        const bool deep = prompt.find("**LLM explanation**:") != std::string_view::npos;
        std::string name;
        if (deep) {
            auto expl = between(prompt, "**LLM explanation**:\n\n", "\n\n**Some examples**:");
            name = between(expl, "[[", "]]");
        }
        if (name.empty()) {
            auto reason = between(prompt, "**LLM reasoning process**:\n\n",
                                  deep ? "\n\n**LLM explanation**:" : "\n\n**Some examples**:");
            auto m = markers_in(reason);
            if (!m.empty()) name = m.front();
        }
        if (name.empty()) {
            return "```json\n{\"whether\": \"no\", \"name\": null, \"Definition\": null}\n```";
        }
        json payload = {{"whether", "yes"}, {"name", name}, {"Definition", definition_of(name)}};
        return "```json\n" + payload.dump() + "\n```";
    }

    // Merge decision.
    if (prompt.find("**identical or highly similar**") != std::string_view::npos) {
        auto name = between(prompt, "**Name**:\n\n", "\n\n**Definition**:");
        auto lib = between(prompt, "Here is the current bias library:\n", "\n\nBias under test:");
        for (const auto& group : similar) {
            if (std::find(group.begin(), group.end(), name) == group.end()) continue;
            for (const auto& other : group) {
                if (other != name && lib.find(". " + other + ": ") != std::string::npos) {
                    return "Decision: 0";
                }
            }
        }
        return "Decision: 1";
    }

    // Deeper explanation.
    if (prompt.find("You determined that answer") != std::string_view::npos) {
        auto chosen = between(prompt, "You determined that answer", " is better.");
        auto question = between(prompt, "**Question**:\n\n", "\n\n**Answer1**:");
        auto reason = between(prompt, "**Your reasoning process**:\n\n", "\n\nYour explanation must:");
        auto m = markers_in(reason);
        if (m.empty()) {
            return "I chose answer" + chosen + " because it seemed more accurate than the other one.";
        }
        std::string out = "I chose answer" + chosen + " because it exhibits " + bias_marker(m.front()) +
                          ", which made it more convincing than the alternative.";
        if (auto it = reveals.find(m.front()); it != reveals.end() && !it->second.empty()) {
            const auto& hidden = it->second[fnv1a64(question) % it->second.size()];
            out += " Looking deeper, I was also swayed by [[" + hidden + "]].";
        }
        return out;
    }

    // Answer-equivalence check.
    if (prompt.find("Verdict: <SAME or DIFFERENT>") != std::string_view::npos) {
        auto r1 = strip_markers(between(prompt, "**Response 1**:\n\n", "\n\n**Response 2**:"));
        auto r2 = strip_markers(between(prompt, "**Response 2**:\n\n", "\n\nReply with exactly"));
        return r1 == r2 ? "Verdict: SAME" : "Verdict: DIFFERENT";
    }

    // Pairwise judge.
    if (prompt.find("Decision: <Write your decision here>") != std::string_view::npos) {
        const std::string a1 = between(prompt, "**Answer1**:\n\n", "\n\n**Answer2**:");
        const std::string a2 = between(prompt, "**Answer2**:\n\n", "\n\n**Task Description**:");
        auto score = [&](const std::string& a, std::string* lure) {
            long s = 0;
            for (const auto& tok : penalized_tokens) s -= static_cast<long>(count_of(a, tok));
            for (const auto& m : markers_in(a)) {
                if (susceptible.count(m)) {
                    s += 10;
                    if (lure && lure->empty()) *lure = m;
                }
            }
            return s;
        };
        std::string lure1, lure2;
        const long s1 = score(a1, &lure1);
        const long s2 = score(a2, &lure2);
        const int pick = s1 != s2 ? (s1 > s2 ? 1 : 2) : (a1 <= a2 ? 1 : 2);
        const std::string& lure = pick == 1 ? lure1 : lure2;
        std::string reasoning = "Answer " + std::to_string(pick) +
                                (lure.empty() ? " is more accurate and complete."
                                              : " exhibits " + bias_marker(lure) +
                                                    " which makes it more convincing.");
        return "Reasoning: " + reasoning + "\nDecision: " + std::to_string(pick);
    }

    throw MalformedResponse("scripted world: unrecognized prompt");
}

ScriptedBackend::Rule ScriptedWorld::rule() const {
    return [world = *this](const ScriptedRequest& req) { return world.respond(req.prompt); };
}

}  // namespace biasscope
