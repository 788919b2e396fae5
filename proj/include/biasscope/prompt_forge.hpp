#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace biasscope {

enum class PromptKind {
    bias_injection,
    judge,
    deeper_explain,
    bias_detect_basic,
    bias_detect_deep,
    merge_decision,
    // Not one of the six discovery templates; used by the answer-change audit.
    answer_check,
};

inline constexpr std::array<PromptKind, 7> kAllPromptKinds = {
    PromptKind::bias_injection,   PromptKind::judge,          PromptKind::deeper_explain,
    PromptKind::bias_detect_basic, PromptKind::bias_detect_deep, PromptKind::merge_decision,
    PromptKind::answer_check,
};

std::string_view to_string(PromptKind kind);
std::optional<PromptKind> parse_prompt_kind(std::string_view name);
// `<kind>.txt`
std::string template_file_name(PromptKind kind);

using PromptInputs = std::map<std::string, std::string, std::less<>>;

// A stored prompt with `{name}` placeholders. Placeholders are
// `{` [a-z_][a-z0-9_]* `}`; any other brace is literal text.
class PromptTemplate {
public:
    PromptTemplate() = default;
    explicit PromptTemplate(std::string text);

    const std::string& text() const noexcept { return text_; }
    // Distinct placeholder names in order of first appearance.
    const std::vector<std::string>& placeholders() const noexcept { return names_; }

    // Substitutes every placeholder verbatim in one pass; substituted values are
    // never rescanned. Throws MissingPlaceholder / UnknownPlaceholder.
    std::string render(const PromptInputs& inputs) const;

private:
    struct Slot {
        std::size_t begin;
        std::size_t end;  // one past '}'
        std::size_t name_index;
    };
    std::string text_;
    std::vector<std::string> names_;
    std::vector<Slot> slots_;
};

// Holds one template per PromptKind.
class PromptForge {
public:
    // Templates compiled into the binary from the repository's prompts/ directory.
    static const PromptForge& builtin();
    // Loads `<dir>/<kind>.txt` for every kind; kinds missing on disk fall back
    // to the built-in copy.
    static PromptForge from_directory(const std::filesystem::path& dir);

    const PromptTemplate& get(PromptKind kind) const;
    std::string render(PromptKind kind, const PromptInputs& inputs) const;

private:
    std::array<PromptTemplate, kAllPromptKinds.size()> templates_;
};

// Template text as stored in a file: the bytes minus one trailing newline.
std::string template_text_from_file(std::string content);

// Raw embedded file contents, indexed like kAllPromptKinds.
std::string_view embedded_template_file(PromptKind kind);

}  // namespace biasscope
