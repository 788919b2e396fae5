#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "biasscope/gateway.hpp"

namespace biasscope {

// A rule-based stand-in for the target, teacher and filter models, used for
// offline runs and tests. It answers every prompt kind by recognizing the
// template and reading the substituted fields back out of it.
//
//  - injection: appends the marker `<<bias:NAME>>` to the existing response.
//  - judge: scores each answer (+10 per susceptible marker, -1 per penalized
//    token); ties go to the lexicographically smaller text. The decision
//    depends only on content, never on position.
//  - deeper explain: when the pick was driven by marker X, names a hidden bias
//    `[[Y]]` taken from reveals[X] (chosen by a hash of the question).
//  - detection: reports `[[Y]]` from the explanation, else the marker named in
//    the reasoning, else "no".
//  - merge: Decision 0 when the bias under test shares a `similar` group with a
//    library entry, otherwise 1.
//  - answer check: SAME when the responses match after removing markers.
struct ScriptedWorld {
    std::set<std::string> susceptible;
    std::map<std::string, std::vector<std::string>> reveals;
    std::map<std::string, std::string> definitions;
    std::vector<std::vector<std::string>> similar;
    std::vector<std::string> penalized_tokens{"[flaw]"};
    bool echo_injection = false;  // return the existing response unchanged

    static ScriptedWorld from_json(const json& j);
    static ScriptedWorld load(const std::filesystem::path& path);
    json to_json() const;

    std::string respond(std::string_view prompt) const;
    ScriptedBackend::Rule rule() const;

    std::string definition_of(const std::string& name) const;
};

std::string bias_marker(std::string_view name);

// Field between `after` and `before` in a rendered prompt; empty when absent.
std::string between(std::string_view text, std::string_view after, std::string_view before);

}  // namespace biasscope
