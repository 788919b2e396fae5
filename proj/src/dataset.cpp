#include "biasscope/dataset.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include "biasscope/errors.hpp"

namespace biasscope {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void validate_triple(const PreferenceTriple& t) {
    if (t.id.empty()) throw MalformedRecord("empty id");
    if (t.instruction.empty()) throw MalformedRecord("empty instruction in '" + t.id + "'");
    if (t.chosen.empty()) throw MalformedRecord("empty chosen in '" + t.id + "'");
    if (t.rejected.empty()) throw MalformedRecord("empty rejected in '" + t.id + "'");
    if (t.chosen == t.rejected) {
        throw MalformedRecord("chosen and rejected are identical in '" + t.id + "'");
    }
}

std::vector<PreferenceTriple> parse_dataset(std::string_view jsonl) {
    std::vector<PreferenceTriple> out;
    std::unordered_set<std::string> seen;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= jsonl.size()) {
        auto end = jsonl.find('\n', start);
        if (end == std::string_view::npos) end = jsonl.size();
        ++line_no;
        auto line = jsonl.substr(start, end - start);
        start = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
            if (end == jsonl.size()) break;
            continue;
        }
        PreferenceTriple t;
        try {
            t = json::parse(line).get<PreferenceTriple>();
            validate_triple(t);
        } catch (const json::exception& e) {
            throw MalformedRecord("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const MalformedRecord& e) {
            throw MalformedRecord("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!seen.insert(t.id).second) {
            throw DuplicateId("line " + std::to_string(line_no) + ": duplicate id '" + t.id + "'");
        }
        out.push_back(std::move(t));
        if (end == jsonl.size()) break;
    }
    if (out.empty()) throw EmptyDataset("dataset contains no records");
    return out;
}

std::vector<PreferenceTriple> load_dataset(const std::filesystem::path& path, DatasetFormat) {
    try {
        return parse_dataset(read_file(path));
    } catch (const MalformedRecord& e) {
        throw MalformedRecord(path.string() + ": " + e.what());
    }
}

std::string serialize_dataset(const std::vector<PreferenceTriple>& data) {
    return to_jsonl(data);
}

void save_dataset(const std::filesystem::path& path, const std::vector<PreferenceTriple>& data) {
    write_file_atomic(path, serialize_dataset(data));
}

std::unordered_map<std::string, std::size_t> index_by_id(
    const std::vector<PreferenceTriple>& data) {
    std::unordered_map<std::string, std::size_t> idx;
    idx.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) idx.emplace(data[i].id, i);
    return idx;
}

std::vector<PreferenceTriple> materialize(const std::vector<PreferenceTriple>& base,
                                          const std::vector<PerturbedTriple>& perturbed) {
    const auto idx = index_by_id(base);
    std::vector<PreferenceTriple> out;
    out.reserve(perturbed.size());
    for (const auto& p : perturbed) {
        auto it = idx.find(p.base_id);
        if (it == idx.end()) throw MalformedRecord("unknown base id '" + p.base_id + "'");
        PreferenceTriple t = base[it->second];
        t.rejected = p.rejected_perturbed;
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace biasscope
