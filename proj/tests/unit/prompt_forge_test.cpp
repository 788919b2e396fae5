#include <gtest/gtest.h>

#include <fstream>

#include "biasscope/dataset.hpp"
#include "biasscope/errors.hpp"
#include "biasscope/prompt_forge.hpp"
#include "test_support.hpp"

namespace biasscope {

void PrintTo(PromptKind kind, std::ostream* os) { *os << to_string(kind); }

namespace {

std::filesystem::path golden_dir() { return testing::fixtures() / "prompts"; }

PromptInputs inputs_for(const PromptTemplate& t) {
    auto all = json::parse(read_file(golden_dir() / "inputs.json"));
    PromptInputs in;
    for (const auto& name : t.placeholders()) in[name] = all.at(name).get<std::string>();
    return in;
}

TEST(PromptTemplate, FindsPlaceholdersInOrder) {
    PromptTemplate t("A {x} and {y_1} then {x} again, {\"json\": 1} {Upper} {} {9a}");
    EXPECT_EQ(t.placeholders(), (std::vector<std::string>{"x", "y_1"}));
    EXPECT_EQ(t.render({{"x", "1"}, {"y_1", "2"}}), "A 1 and 2 then 1 again, {\"json\": 1} {Upper} {} {9a}");
}

TEST(PromptTemplate, MissingAndUnknown) {
    PromptTemplate t("{a} {b}");
    EXPECT_THROW(t.render({{"a", "1"}}), MissingPlaceholder);
    EXPECT_THROW(t.render({{"a", "1"}, {"b", "2"}, {"c", "3"}}), UnknownPlaceholder);
}

TEST(PromptTemplate, SubstitutionIsSinglePass) {
    PromptTemplate t("[{a}] [{b}]");
    EXPECT_EQ(t.render({{"a", "{b}"}, {"b", "{a}"}}), "[{b}] [{a}]");
}

TEST(PromptTemplate, EmptyValuesAndNoPlaceholders) {
    EXPECT_EQ(PromptTemplate("x{a}y").render({{"a", ""}}), "xy");
    EXPECT_EQ(PromptTemplate("plain").render({}), "plain");
}

TEST(PromptForge, FileTextDropsOneTrailingNewline) {
    EXPECT_EQ(template_text_from_file("a\n\n"), "a\n");
    EXPECT_EQ(template_text_from_file("a"), "a");
}

TEST(PromptForge, KindNames) {
    for (auto k : kAllPromptKinds) {
        EXPECT_EQ(parse_prompt_kind(to_string(k)), k);
    }
    EXPECT_FALSE(parse_prompt_kind("nope").has_value());
    EXPECT_EQ(template_file_name(PromptKind::judge), "judge.txt");
}

TEST(PromptForge, EmbeddedCopiesMatchRepositoryFiles) {
    for (auto k : kAllPromptKinds) {
        auto file = read_file(std::filesystem::path(BIASSCOPE_PROMPTS_DIR) / template_file_name(k));
        EXPECT_EQ(embedded_template_file(k), file) << to_string(k);
        EXPECT_EQ(PromptForge::builtin().get(k).text(), template_text_from_file(file));
    }
}

class Golden : public ::testing::TestWithParam<PromptKind> {};

TEST_P(Golden, RendersByteIdentical) {
    const auto kind = GetParam();
    const auto& t = PromptForge::builtin().get(kind);
    auto expected = read_file(golden_dir() / (std::string(to_string(kind)) + ".golden"));
    EXPECT_EQ(t.render(inputs_for(t)), expected);
}

INSTANTIATE_TEST_SUITE_P(SixTemplates, Golden,
                         ::testing::Values(PromptKind::bias_injection, PromptKind::judge,
                                           PromptKind::deeper_explain,
                                           PromptKind::bias_detect_basic,
                                           PromptKind::bias_detect_deep,
                                           PromptKind::merge_decision),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(PromptForge, FromDirectoryOverridesAndFallsBack) {
    testing::TempDir dir;
    {
        std::ofstream(dir / "judge.txt") << "Judge {question}: {answer1} vs {answer2}\n";
    }
    auto forge = PromptForge::from_directory(dir.path());
    EXPECT_EQ(forge.get(PromptKind::judge).text(), "Judge {question}: {answer1} vs {answer2}");
    EXPECT_EQ(forge.get(PromptKind::merge_decision).text(),
              PromptForge::builtin().get(PromptKind::merge_decision).text());
    EXPECT_THROW(PromptForge::from_directory(dir / "missing"), TemplateError);
}

}  // namespace
}  // namespace biasscope
