#include "biasscope/prompt_forge.hpp"

#include <algorithm>

#include "biasscope/dataset.hpp"
#include "biasscope/errors.hpp"

namespace biasscope {

std::string_view to_string(PromptKind kind) {
    switch (kind) {
        case PromptKind::bias_injection: return "bias_injection";
        case PromptKind::judge: return "judge";
        case PromptKind::deeper_explain: return "deeper_explain";
        case PromptKind::bias_detect_basic: return "bias_detect_basic";
        case PromptKind::bias_detect_deep: return "bias_detect_deep";
        case PromptKind::merge_decision: return "merge_decision";
        case PromptKind::answer_check: return "answer_check";
    }
    return "unknown";
}

std::optional<PromptKind> parse_prompt_kind(std::string_view name) {
    for (auto k : kAllPromptKinds) {
        if (to_string(k) == name) return k;
    }
    return std::nullopt;
}

std::string template_file_name(PromptKind kind) { return std::string(to_string(kind)) + ".txt"; }

std::string template_text_from_file(std::string content) {
    if (!content.empty() && content.back() == '\n') content.pop_back();
    return content;
}

namespace {

bool is_name_start(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }
bool is_name_char(char c) { return is_name_start(c) || (c >= '0' && c <= '9'); }

}  // namespace

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
    for (std::size_t i = 0; i < text_.size(); ++i) {
        if (text_[i] != '{' || i + 1 >= text_.size() || !is_name_start(text_[i + 1])) continue;
        std::size_t j = i + 1;
        while (j < text_.size() && is_name_char(text_[j])) ++j;
        if (j >= text_.size() || text_[j] != '}') continue;
        std::string name = text_.substr(i + 1, j - i - 1);
        auto it = std::find(names_.begin(), names_.end(), name);
        std::size_t idx = static_cast<std::size_t>(it - names_.begin());
        if (it == names_.end()) names_.push_back(std::move(name));
        slots_.push_back({i, j + 1, idx});
        i = j;
    }
}

std::string PromptTemplate::render(const PromptInputs& inputs) const {
    std::vector<const std::string*> values(names_.size(), nullptr);
    for (std::size_t n = 0; n < names_.size(); ++n) {
        auto it = inputs.find(names_[n]);
        if (it == inputs.end()) throw MissingPlaceholder(names_[n]);
        values[n] = &it->second;
    }
    for (const auto& [key, _] : inputs) {
        if (std::find(names_.begin(), names_.end(), key) == names_.end()) {
            throw UnknownPlaceholder(key);
        }
    }
    std::string out;
    std::size_t extra = 0;
    for (const auto& s : slots_) extra += values[s.name_index]->size();
    out.reserve(text_.size() + extra);
    std::size_t pos = 0;
    for (const auto& s : slots_) {
        out.append(text_, pos, s.begin - pos);
        out += *values[s.name_index];
        pos = s.end;
    }
    out.append(text_, pos, std::string::npos);
    return out;
}

const PromptForge& PromptForge::builtin() {
    static const PromptForge forge = [] {
        PromptForge f;
        for (std::size_t i = 0; i < kAllPromptKinds.size(); ++i) {
            f.templates_[i] = PromptTemplate(
                template_text_from_file(std::string(embedded_template_file(kAllPromptKinds[i]))));
        }
        return f;
    }();
    return forge;
}

PromptForge PromptForge::from_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw TemplateError("prompt directory not found: " + dir.string());
    }
    PromptForge f = builtin();
    for (std::size_t i = 0; i < kAllPromptKinds.size(); ++i) {
        auto path = dir / template_file_name(kAllPromptKinds[i]);
        if (std::filesystem::exists(path)) {
            f.templates_[i] = PromptTemplate(template_text_from_file(read_file(path)));
        }
    }
    return f;
}

const PromptTemplate& PromptForge::get(PromptKind kind) const {
    return templates_[static_cast<std::size_t>(kind)];
}

std::string PromptForge::render(PromptKind kind, const PromptInputs& inputs) const {
    return get(kind).render(inputs);
}

}  // namespace biasscope
