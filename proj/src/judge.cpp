#include "biasscope/judge.hpp"

#include <cctype>

#include "biasscope/errors.hpp"
#include "biasscope/parallel.hpp"
#include "biasscope/rng.hpp"

namespace biasscope {

namespace {

std::string_view trim(std::string_view s) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string_view trim_punct(std::string_view s) {
    auto strip = [](char c) {
        auto u = static_cast<unsigned char>(c);
        return std::isspace(u) || std::ispunct(u);
    };
    while (!s.empty() && strip(s.front())) s.remove_prefix(1);
    while (!s.empty() && strip(s.back())) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (true) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}

constexpr std::string_view kDecision = "Decision:";

// Index of the last "Decision:" line, or npos.
std::size_t last_decision_line(const std::vector<std::string_view>& lines) {
    for (std::size_t i = lines.size(); i-- > 0;) {
        auto l = trim(lines[i]);
        if (l.substr(0, kDecision.size()) == kDecision) return i;
    }
    return std::string_view::npos;
}

}  // namespace

OrderMap assign_orders(const std::vector<PreferenceTriple>& dataset, std::uint64_t seed,
                       double swap_probability) {
    if (dataset.empty()) throw EmptyDataset("cannot assign orders to an empty dataset");
    Rng rng(seed);
    OrderMap orders;
    for (const auto& t : dataset) {
        orders[t.id] =
            unit_double(rng) < swap_probability ? Order::rejected_first : Order::chosen_first;
    }
    return orders;
}

Decision parse_verdict(std::string_view raw) {
    const auto lines = split_lines(raw);
    const auto at = last_decision_line(lines);
    if (at == std::string_view::npos) throw UnparseableVerdict("no Decision line");
    auto payload = trim(lines[at]).substr(kDecision.size());
    payload = trim_punct(payload);
    if (payload == "1") return Decision::first;
    if (payload == "2") return Decision::second;
    throw UnparseableVerdict("invalid decision payload '" + std::string(payload) + "'");
}

std::string extract_reasoning(std::string_view raw) {
    const auto lines = split_lines(raw);
    const auto decision_at = last_decision_line(lines);
    const std::size_t stop = decision_at == std::string_view::npos ? lines.size() : decision_at;
    std::size_t begin = 0;
    std::string first_tail;
    for (std::size_t i = 0; i < stop; ++i) {
        auto l = trim(lines[i]);
        if (l.substr(0, 10) == "Reasoning:") {
            begin = i + 1;
            first_tail = std::string(trim(l.substr(10)));
            break;
        }
    }
    std::string out = first_tail;
    for (std::size_t i = begin; i < stop; ++i) {
        if (!out.empty()) out += '\n';
        out += lines[i];
    }
    auto t = trim(out);
    if (t.empty()) return std::string(trim(raw));
    return std::string(t);
}

std::pair<const std::string&, const std::string&> presented(const PreferenceTriple& t,
                                                            Order order) {
    if (order == Order::chosen_first) return {t.chosen, t.rejected};
    return {t.rejected, t.chosen};
}

std::string render_judge_prompt(const PreferenceTriple& triple, Order order,
                                const PromptForge& forge) {
    auto [a1, a2] = presented(triple, order);
    return forge.render(PromptKind::judge,
                        {{"question", triple.instruction}, {"answer1", a1}, {"answer2", a2}});
}

JudgeVerdict judge_pair(const PreferenceTriple& triple, const ModelHandle& judge, Order order,
                        const PromptForge& forge) {
    const auto reply = judge.complete(render_judge_prompt(triple, order, forge));
    JudgeVerdict v;
    v.decision = parse_verdict(reply.text);
    v.reasoning = extract_reasoning(reply.text);
    v.order = order;
    v.correct = is_correct(order, v.decision);
    return v;
}

ErrorReport summarize(std::string tag, const std::vector<EvaluationRecord>& records,
                      const std::vector<PreferenceTriple>& unparsed, bool strict_parse) {
    ErrorReport r;
    r.tag = std::move(tag);
    r.unparsed = unparsed.size();
    for (const auto& u : unparsed) r.unparsed_ids.push_back(u.id);
    auto bump = [&](Category c, bool mistake) {
        auto& cat = r.per_category[std::string(to_string(c))];
        ++cat.total;
        ++r.total;
        if (mistake) {
            ++cat.mistakes;
            ++r.mistakes;
        }
    };
    for (const auto& rec : records) bump(rec.triple.category, !rec.verdict.correct);
    if (strict_parse) {
        for (const auto& u : unparsed) bump(u.category, true);
    }
    for (auto& [_, cat] : r.per_category) {
        cat.err = cat.total ? static_cast<double>(cat.mistakes) / static_cast<double>(cat.total) : 0.0;
    }
    r.err = r.total ? static_cast<double>(r.mistakes) / static_cast<double>(r.total) : 0.0;
    return r;
}

Evaluation evaluate_dataset(const std::vector<PreferenceTriple>& dataset,
                            const ModelHandle& judge, const OrderMap& orders, std::string tag,
                            const EvaluateOptions& options) {
    if (dataset.empty()) throw EmptyDataset("evaluate: empty dataset");
    for (const auto& t : dataset) {
        if (!orders.count(t.id)) throw ConfigError("evaluate: no order assigned for '" + t.id + "'");
    }
    const PromptForge& forge = options.forge ? *options.forge : PromptForge::builtin();

    std::vector<std::optional<JudgeVerdict>> verdicts(dataset.size());
    auto errors = run_indexed(dataset.size(), judge.max_in_flight(), [&](std::size_t i) {
        const auto& t = dataset[i];
        try {
            verdicts[i] = judge_pair(t, judge, orders.at(t.id), forge);
        } catch (const UnparseableVerdict&) {
            verdicts[i].reset();
        }
    });
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    Evaluation out;
    std::vector<PreferenceTriple> unparsed;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (verdicts[i]) {
            out.records.push_back(EvaluationRecord{dataset[i], std::move(*verdicts[i]), {}, {}});
        } else {
            unparsed.push_back(dataset[i]);
        }
    }
    if (out.records.empty()) {
        throw AllUnparseable("evaluate '" + tag + "': no verdict could be parsed");
    }
    out.report = summarize(std::move(tag), out.records, unparsed, options.strict_parse);
    return out;
}

}  // namespace biasscope
