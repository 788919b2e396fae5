#include "biasscope/analysis.hpp"

#include <cctype>
#include <charconv>
#include <optional>

#include <spdlog/spdlog.h>

#include "biasscope/dataset.hpp"
#include "biasscope/errors.hpp"
#include "biasscope/parallel.hpp"

namespace biasscope {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

template <class Fn>
void for_each_token(std::string_view text, Fn&& fn) {
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        if (i == text.size()) break;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (!fn(text.substr(i, j - i))) return;
        i = j;
    }
}

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        cells.emplace_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

std::optional<std::int64_t> to_int(std::string_view s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace

double fleiss_kappa(const CountMatrix& counts, std::int64_t n) {
    if (counts.empty()) throw RowSumMismatch("kappa: no items");
    const std::size_t k = counts.front().size();
    if (k < 2) throw RowSumMismatch("kappa: need at least two categories");
    if (n < 2) throw RowSumMismatch("kappa: need at least two raters per item");

    const auto N = static_cast<std::int64_t>(counts.size());
    std::vector<std::int64_t> column(k, 0);
    double p_bar = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const auto& row = counts[i];
        if (row.size() != k) {
            throw RowSumMismatch("kappa: row " + std::to_string(i) + " has " +
                                 std::to_string(row.size()) + " columns, expected " + std::to_string(k));
        }
        std::int64_t sum = 0;
        std::int64_t pairs = 0;
        for (std::size_t j = 0; j < k; ++j) {
            if (row[j] < 0) throw RowSumMismatch("kappa: negative count in row " + std::to_string(i));
            sum += row[j];
            pairs += row[j] * (row[j] - 1);
            column[j] += row[j];
        }
        if (sum != n) {
            throw RowSumMismatch("kappa: row " + std::to_string(i) + " sums to " + std::to_string(sum) +
                                 ", expected " + std::to_string(n));
        }
        p_bar += static_cast<double>(pairs) / static_cast<double>(n * (n - 1));
    }
    p_bar /= static_cast<double>(N);

    const std::int64_t total = N * n;
    double p_e = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        if (column[j] == total) {
            throw DegenerateAgreement("kappa: every rating falls into one category; agreement is undefined");
        }
        const double p = static_cast<double>(column[j]) / static_cast<double>(total);
        p_e += p * p;
    }
    return (p_bar - p_e) / (1.0 - p_e);
}

double fleiss_kappa(const CountMatrix& counts) {
    if (counts.empty()) throw RowSumMismatch("kappa: no items");
    std::int64_t n = 0;
    for (auto c : counts.front()) n += c;
    return fleiss_kappa(counts, n);
}

CountMatrix parse_count_matrix_csv(std::string_view text) {
    CountMatrix rows;
    std::size_t start = 0;
    std::size_t line_no = 0;
    bool first = true;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = trim(text.substr(start, end - start));
        start = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        auto cells = split_csv_line(line);
        std::vector<std::int64_t> row;
        bool numeric = true;
        for (const auto& c : cells) {
            auto v = to_int(c);
            if (!v) {
                numeric = false;
                break;
            }
            row.push_back(*v);
        }
        if (!numeric) {
            if (first) {
                first = false;
                continue;
            }
            throw MalformedRecord("matrix line " + std::to_string(line_no) + ": non-integer cell");
        }
        first = false;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::size_t token_count(std::string_view text) {
    std::size_t n = 0;
    for_each_token(text, [&](std::string_view) {
        ++n;
        return true;
    });
    return n;
}

double percent_increase(double mean_original, double mean_perturbed) {
    return mean_perturbed / mean_original - 1.0;
}

void to_json(json& j, const LengthStats& s) {
    j = json{{"pairs", s.pairs},
             {"mean_original", s.mean_original},
             {"mean_perturbed", s.mean_perturbed},
             {"percent_increase", s.percent_increase}};
}

LengthStats length_stats(const std::vector<std::pair<std::string, std::string>>& pairs,
                         const Tokenizer& tokenizer) {
    LengthStats s;
    s.pairs = pairs.size();
    if (pairs.empty()) return s;
    double orig = 0.0;
    double pert = 0.0;
    for (const auto& [o, p] : pairs) {
        orig += static_cast<double>(tokenizer ? tokenizer(o) : token_count(o));
        pert += static_cast<double>(tokenizer ? tokenizer(p) : token_count(p));
    }
    s.mean_original = orig / static_cast<double>(pairs.size());
    s.mean_perturbed = pert / static_cast<double>(pairs.size());
    s.percent_increase = s.mean_original > 0.0 ? percent_increase(s.mean_original, s.mean_perturbed) : 0.0;
    return s;
}

std::string truncate_to_match(std::string_view text, std::size_t target_tokens) {
    std::string out;
    std::size_t kept = 0;
    for_each_token(text, [&](std::string_view tok) {
        if (kept == target_tokens) return false;
        if (kept > 0) out.push_back(' ');
        out.append(tok);
        ++kept;
        return true;
    });
    return out;
}

std::vector<PerturbedTriple> truncate_perturbed(const std::vector<PreferenceTriple>& base,
                                                const std::vector<PerturbedTriple>& perturbed) {
    const auto idx = index_by_id(base);
    std::vector<PerturbedTriple> out;
    out.reserve(perturbed.size());
    for (const auto& p : perturbed) {
        auto it = idx.find(p.base_id);
        if (it == idx.end()) throw MalformedRecord("unknown base id '" + p.base_id + "'");
        PerturbedTriple t = p;
        t.rejected_perturbed = truncate_to_match(p.rejected_perturbed, token_count(base[it->second].rejected));
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> rejection_pairs(
    const std::vector<PreferenceTriple>& base, const std::vector<PerturbedTriple>& perturbed) {
    const auto idx = index_by_id(base);
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(perturbed.size());
    for (const auto& p : perturbed) {
        auto it = idx.find(p.base_id);
        if (it == idx.end()) throw MalformedRecord("unknown base id '" + p.base_id + "'");
        out.emplace_back(base[it->second].rejected, p.rejected_perturbed);
    }
    return out;
}

void to_json(json& j, const EqualityCounts& c) {
    j = json{{"total", c.total}, {"equal", c.equal}, {"failed", c.failed}, {"rate", c.rate}};
}

void to_json(json& j, const AuditReport& r) {
    j = json{{"original", r.original}, {"perturbed", r.perturbed}, {"delta", r.delta}};
}

bool parse_answer_check(std::string_view raw) {
    std::string_view verdict;
    bool found = false;
    std::size_t start = 0;
    while (start <= raw.size()) {
        auto end = raw.find('\n', start);
        if (end == std::string_view::npos) end = raw.size();
        auto line = trim(raw.substr(start, end - start));
        if (line.substr(0, 8) == "Verdict:") {
            verdict = trim(line.substr(8));
            found = true;
        }
        if (end == raw.size()) break;
        start = end + 1;
    }
    if (!found) throw UnparseableVerdict("answer check: no 'Verdict:' line");
    std::string word;
    for (char c : verdict) {
        if (std::isalpha(static_cast<unsigned char>(c))) word.push_back(static_cast<char>(std::toupper(c)));
    }
    if (word == "SAME") return true;
    if (word == "DIFFERENT") return false;
    throw UnparseableVerdict("answer check: unrecognized verdict '" + std::string(verdict) + "'");
}

std::string render_answer_check_prompt(std::string_view question, std::string_view response1,
                                       std::string_view response2, const PromptForge& forge) {
    return forge.render(PromptKind::answer_check, {{"question", std::string(question)},
                                                   {"response1", std::string(response1)},
                                                   {"response2", std::string(response2)}});
}

AuditReport answer_change_audit(const std::vector<PreferenceTriple>& base,
                                const std::vector<PerturbedTriple>& perturbed,
                                const ModelHandle& checker, const PromptForge& forge) {
    const auto idx = index_by_id(base);
    // Slot 2i checks the original rejection of item i, slot 2i+1 the perturbed one.
    std::vector<std::optional<bool>> same(perturbed.size() * 2);
    auto errors = run_indexed(same.size(), checker.max_in_flight(), [&](std::size_t s) {
        const auto& p = perturbed[s / 2];
        auto it = idx.find(p.base_id);
        if (it == idx.end()) throw MalformedRecord("unknown base id '" + p.base_id + "'");
        const auto& t = base[it->second];
        const std::string& rejected = s % 2 == 0 ? t.rejected : p.rejected_perturbed;
        same[s] = parse_answer_check(
            checker.complete(render_answer_check_prompt(t.instruction, t.chosen, rejected, forge)).text);
    });
    AuditReport report;
    for (std::size_t s = 0; s < same.size(); ++s) {
        auto& side = s % 2 == 0 ? report.original : report.perturbed;
        if (errors[s]) {
            try {
                std::rethrow_exception(errors[s]);
            } catch (const GatewayError& e) {
                spdlog::warn("audit: '{}' excluded: {}", perturbed[s / 2].base_id, e.what());
            } catch (const UnparseableVerdict& e) {
                spdlog::warn("audit: '{}' excluded: {}", perturbed[s / 2].base_id, e.what());
            }
            ++side.failed;
            continue;
        }
        ++side.total;
        if (*same[s]) ++side.equal;
    }
    for (auto* side : {&report.original, &report.perturbed}) {
        side->rate = side->total ? static_cast<double>(side->equal) / static_cast<double>(side->total) : 0.0;
    }
    report.delta = report.perturbed.rate - report.original.rate;
    return report;
}

void to_json(json& j, const TruncationStudy& s) {
    j = json{{"original", s.original},
             {"perturbed", s.perturbed},
             {"truncated", s.truncated},
             {"lengths_before", s.before},
             {"lengths_after", s.after}};
}

TruncationStudy truncation_study(const std::vector<PreferenceTriple>& base,
                                 const std::vector<PerturbedTriple>& perturbed,
                                 const ModelHandle& judge, std::uint64_t seed,
                                 const EvaluateOptions& options) {
    const auto idx = index_by_id(base);
    std::vector<PreferenceTriple> subset;
    subset.reserve(perturbed.size());
    for (const auto& p : perturbed) {
        auto it = idx.find(p.base_id);
        if (it == idx.end()) throw MalformedRecord("unknown base id '" + p.base_id + "'");
        subset.push_back(base[it->second]);
    }
    const auto truncated = truncate_perturbed(base, perturbed);
    const auto orders = assign_orders(subset, seed);

    TruncationStudy s;
    s.original = evaluate_dataset(subset, judge, orders, "original", options).report;
    s.perturbed = evaluate_dataset(materialize(base, perturbed), judge, orders, "perturbed", options).report;
    s.truncated = evaluate_dataset(materialize(base, truncated), judge, orders, "truncated", options).report;
    s.before = length_stats(rejection_pairs(base, perturbed));
    s.after = length_stats(rejection_pairs(base, truncated));
    return s;
}

}  // namespace biasscope
