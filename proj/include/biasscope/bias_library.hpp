#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "biasscope/types.hpp"

namespace biasscope {

// Lowercases, collapses internal whitespace and strips leading/trailing
// punctuation. Throws EmptyName when nothing remains.
std::string normalize_bias_name(std::string_view raw);

// The ordered bias collection B_t. Names are unique after normalization and
// the entry set only ever grows.
class BiasLibrary {
public:
    BiasLibrary() = default;
    BiasLibrary(std::vector<BiasSpec> entries, int version);

    const std::vector<BiasSpec>& entries() const noexcept { return entries_; }
    int version() const noexcept { return version_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    bool contains(std::string_view name) const;
    const BiasSpec* find(std::string_view name) const;

    // Appends a new entry; throws DuplicateBias if the name is already present.
    void add(BiasSpec bias);

    // Advances to `version`; throws ConfigError when it would decrease.
    void set_version(int version);

    // Entries carrying a validation record.
    std::vector<BiasSpec> validated() const;

    bool operator==(const BiasLibrary&) const = default;

private:
    std::vector<BiasSpec> entries_;
    int version_ = 0;
};

// Bias-library JSON: an array of BiasSpec objects.
BiasLibrary load_library(const std::filesystem::path& path);
BiasLibrary parse_library(std::string_view text);
std::string serialize_library(const BiasLibrary& library);
void save_library(const std::filesystem::path& path, const BiasLibrary& library);

// Numbered "name: definition" listing used by the merge-decision prompt.
std::string library_text(const std::vector<BiasSpec>& entries);

}  // namespace biasscope
