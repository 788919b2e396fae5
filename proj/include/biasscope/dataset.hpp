#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biasscope/types.hpp"

namespace biasscope {

enum class DatasetFormat { jsonl };

// Loads and validates a preference dataset. Throws MalformedRecord (with the
// 1-based line number), DuplicateId or EmptyDataset.
std::vector<PreferenceTriple> load_dataset(const std::filesystem::path& path,
                                           DatasetFormat format = DatasetFormat::jsonl);

// Same as load_dataset but over in-memory JSONL text.
std::vector<PreferenceTriple> parse_dataset(std::string_view jsonl);

void save_dataset(const std::filesystem::path& path, const std::vector<PreferenceTriple>& data);
std::string serialize_dataset(const std::vector<PreferenceTriple>& data);

// Checks the per-triple invariants; throws MalformedRecord.
void validate_triple(const PreferenceTriple& t);

// id -> index into `data`.
std::unordered_map<std::string, std::size_t> index_by_id(const std::vector<PreferenceTriple>& data);

// Applies perturbations onto their base triples. Perturbations whose base id is
// unknown raise MalformedRecord.
std::vector<PreferenceTriple> materialize(const std::vector<PreferenceTriple>& base,
                                          const std::vector<PerturbedTriple>& perturbed);

// Generic JSONL helpers shared by the artifact writers.
template <class T>
std::string to_jsonl(const std::vector<T>& rows) {
    std::string out;
    for (const auto& r : rows) {
        out += json(r).dump();
        out += '\n';
    }
    return out;
}

template <class T>
std::vector<T> from_jsonl(std::string_view text) {
    std::vector<T> rows;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
            rows.push_back(json::parse(line).get<T>());
        }
        start = end + 1;
    }
    return rows;
}

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace biasscope
