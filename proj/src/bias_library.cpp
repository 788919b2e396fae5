#include "biasscope/bias_library.hpp"

#include <cctype>

#include "biasscope/dataset.hpp"
#include "biasscope/errors.hpp"

namespace biasscope {

std::string normalize_bias_name(std::string_view raw) {
    std::string collapsed;
    bool pending_space = false;
    for (char ch : raw) {
        auto u = static_cast<unsigned char>(ch);
        if (std::isspace(u)) {
            pending_space = !collapsed.empty();
            continue;
        }
        if (pending_space) collapsed.push_back(' ');
        pending_space = false;
        collapsed.push_back(static_cast<char>(std::tolower(u)));
    }
    auto is_trim = [](char ch) {
        auto u = static_cast<unsigned char>(ch);
        return std::ispunct(u) || std::isspace(u);
    };
    std::size_t b = 0;
    std::size_t e = collapsed.size();
    while (b < e && is_trim(collapsed[b])) ++b;
    while (e > b && is_trim(collapsed[e - 1])) --e;
    if (b == e) throw EmptyName("bias name '" + std::string(raw) + "' is empty after normalization");
    return collapsed.substr(b, e - b);
}

BiasLibrary::BiasLibrary(std::vector<BiasSpec> entries, int version) : version_(version) {
    for (auto& e : entries) add(std::move(e));
}

bool BiasLibrary::contains(std::string_view name) const { return find(name) != nullptr; }

const BiasSpec* BiasLibrary::find(std::string_view name) const {
    std::string key;
    try {
        key = normalize_bias_name(name);
    } catch (const EmptyName&) {
        return nullptr;
    }
    for (const auto& e : entries_) {
        if (e.name == key) return &e;
    }
    return nullptr;
}

void BiasLibrary::add(BiasSpec bias) {
    bias.name = normalize_bias_name(bias.name);
    if (contains(bias.name)) throw DuplicateBias("bias '" + bias.name + "' already in library");
    if (bias.validation && !(bias.validation->err_perturbed > bias.validation->err_baseline)) {
        throw MalformedRecord("bias '" + bias.name +
                              "' carries a validation record without an error increase");
    }
    entries_.push_back(std::move(bias));
}

void BiasLibrary::set_version(int version) {
    if (version < version_) {
        throw ConfigError("library version cannot decrease (" + std::to_string(version_) +
                          " -> " + std::to_string(version) + ")");
    }
    version_ = version;
}

std::vector<BiasSpec> BiasLibrary::validated() const {
    std::vector<BiasSpec> out;
    for (const auto& e : entries_) {
        if (e.validation) out.push_back(e);
    }
    return out;
}

BiasLibrary parse_library(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw MalformedRecord(std::string("bias library: ") + e.what());
    }
    if (!doc.is_array()) throw MalformedRecord("bias library must be a JSON array");
    std::vector<BiasSpec> entries;
    for (const auto& item : doc) {
        try {
            entries.push_back(item.get<BiasSpec>());
        } catch (const json::exception& e) {
            throw MalformedRecord(std::string("bias library entry: ") + e.what());
        }
    }
    return BiasLibrary(std::move(entries), 0);
}

BiasLibrary load_library(const std::filesystem::path& path) {
    return parse_library(read_file(path));
}

std::string serialize_library(const BiasLibrary& library) {
    return json(library.entries()).dump(2) + "\n";
}

void save_library(const std::filesystem::path& path, const BiasLibrary& library) {
    write_file_atomic(path, serialize_library(library));
}

std::string library_text(const std::vector<BiasSpec>& entries) {
    std::string out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i) out += '\n';
        out += std::to_string(i + 1) + ". " + entries[i].name + ": " + entries[i].definition;
    }
    return out;
}

}  // namespace biasscope
