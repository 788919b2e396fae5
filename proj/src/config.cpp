#include "biasscope/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>

#include "biasscope/dataset.hpp"
#include "biasscope/digest.hpp"
#include "biasscope/errors.hpp"

#ifndef BIASSCOPE_DATA_DIR
#define BIASSCOPE_DATA_DIR "data"
#endif

namespace biasscope {

namespace {

std::string_view trim(std::string_view s) {
    auto sp = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && sp(s.front())) s.remove_prefix(1);
    while (!s.empty() && sp(s.back())) s.remove_suffix(1);
    return s;
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

// Parses a value starting at `s`; returns the value and the unconsumed rest.
std::pair<ConfigValue, std::string_view> parse_value(std::string_view s, std::size_t line) {
    if (s.empty()) fail(line, "missing value");
    if (s.front() == '"') {
        std::string out;
        for (std::size_t i = 1; i < s.size(); ++i) {
            char c = s[i];
            if (c == '"') return {out, s.substr(i + 1)};
            if (c == '\\') {
                if (++i >= s.size()) break;
                switch (s[i]) {
                    case 'n': out.push_back('\n'); break;
                    case 't': out.push_back('\t'); break;
                    case 'r': out.push_back('\r'); break;
                    case '"': out.push_back('"'); break;
                    case '\\': out.push_back('\\'); break;
                    default: fail(line, std::string("unsupported escape \\") + s[i]);
                }
                continue;
            }
            out.push_back(c);
        }
        fail(line, "unterminated string");
    }
    if (s.front() == '\'') {
        auto end = s.find('\'', 1);
        if (end == std::string_view::npos) fail(line, "unterminated string");
        return {std::string(s.substr(1, end - 1)), s.substr(end + 1)};
    }
    auto end = s.find_first_of(" \t#");
    auto token = s.substr(0, end);
    auto rest = end == std::string_view::npos ? std::string_view{} : s.substr(end);
    if (token == "true") return {true, rest};
    if (token == "false") return {false, rest};
    std::string cleaned;
    for (char c : token) {
        if (c != '_') cleaned.push_back(c);
    }
    std::int64_t iv = 0;
    auto [p, ec] = std::from_chars(cleaned.data(), cleaned.data() + cleaned.size(), iv);
    if (ec == std::errc{} && p == cleaned.data() + cleaned.size()) return {iv, rest};
    char* endp = nullptr;
    double dv = std::strtod(cleaned.c_str(), &endp);
    if (!cleaned.empty() && endp == cleaned.c_str() + cleaned.size()) return {dv, rest};
    fail(line, "cannot parse value '" + std::string(token) + "'");
}

const ConfigValue* lookup(const ConfigDocument& doc, std::string_view section, std::string_view key) {
    auto s = doc.find(section);
    if (s == doc.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
}

std::string where(std::string_view section, std::string_view key) {
    return "[" + std::string(section) + "] " + std::string(key);
}

std::optional<std::string> get_string(const ConfigDocument& doc, std::string_view section,
                                      std::string_view key) {
    const auto* v = lookup(doc, section, key);
    if (!v) return std::nullopt;
    if (auto s = std::get_if<std::string>(v)) return *s;
    throw ConfigError(where(section, key) + " must be a string");
}

std::optional<std::int64_t> get_int(const ConfigDocument& doc, std::string_view section,
                                    std::string_view key) {
    const auto* v = lookup(doc, section, key);
    if (!v) return std::nullopt;
    if (auto i = std::get_if<std::int64_t>(v)) return *i;
    throw ConfigError(where(section, key) + " must be an integer");
}

std::optional<double> get_double(const ConfigDocument& doc, std::string_view section,
                                 std::string_view key) {
    const auto* v = lookup(doc, section, key);
    if (!v) return std::nullopt;
    if (auto d = std::get_if<double>(v)) return *d;
    if (auto i = std::get_if<std::int64_t>(v)) return static_cast<double>(*i);
    throw ConfigError(where(section, key) + " must be a number");
}

std::optional<bool> get_bool(const ConfigDocument& doc, std::string_view section,
                             std::string_view key) {
    const auto* v = lookup(doc, section, key);
    if (!v) return std::nullopt;
    if (auto b = std::get_if<bool>(v)) return *b;
    throw ConfigError(where(section, key) + " must be a boolean");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative() && !base.empty()) path = base / path;
    return std::filesystem::absolute(path).lexically_normal();
}

void read_model(const ConfigDocument& doc, std::string_view section, ModelConfig& m) {
    if (auto v = get_string(doc, section, "model_id")) m.ref.model_id = *v;
    if (auto v = get_string(doc, section, "endpoint")) m.ref.endpoint = *v;
    if (auto v = get_string(doc, section, "credentials")) m.ref.credentials = *v;
    if (auto v = get_double(doc, section, "temperature")) m.params.temperature = *v;
    if (auto v = get_int(doc, section, "max_output")) m.params.max_output = static_cast<int>(*v);
    if (auto v = get_int(doc, section, "seed")) m.params.seed = static_cast<std::uint64_t>(*v);
}

json model_echo(const ModelConfig& m) {
    return json{{"model_id", m.ref.model_id},
                {"endpoint", m.ref.endpoint},
                {"temperature", m.params.temperature},
                {"max_output", m.params.max_output},
                {"seed", m.params.seed}};
}

std::string file_digest(const std::filesystem::path& p) {
    if (p.empty()) return "";
    std::error_code ec;
    if (!std::filesystem::exists(p, ec)) return "missing";
    return sha256_hex(read_file(p));
}

}  // namespace

ConfigDocument parse_config_text(std::string_view text) {
    ConfigDocument doc;
    std::string section;
    doc[section];
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        ++line_no;
        auto line = trim(text.substr(start, end - start));
        start = end + 1;
        if (!line.empty() && line.front() != '#') {
            if (line.front() == '[') {
                auto close = line.find(']');
                if (close == std::string_view::npos) fail(line_no, "unterminated section header");
                auto rest = trim(line.substr(close + 1));
                if (!rest.empty() && rest.front() != '#') fail(line_no, "text after section header");
                section = std::string(trim(line.substr(1, close - 1)));
                if (section.empty()) fail(line_no, "empty section name");
                doc[section];
            } else {
                auto eq = line.find('=');
                if (eq == std::string_view::npos) fail(line_no, "expected key = value");
                auto key = trim(line.substr(0, eq));
                if (key.empty()) fail(line_no, "empty key");
                auto [value, rest] = parse_value(trim(line.substr(eq + 1)), line_no);
                rest = trim(rest);
                if (!rest.empty() && rest.front() != '#') fail(line_no, "unexpected trailing text");
                auto& sec = doc[section];
                if (sec.count(key)) fail(line_no, "duplicate key '" + std::string(key) + "'");
                sec.emplace(std::string(key), std::move(value));
            }
        }
        if (end == text.size()) break;
    }
    return doc;
}

std::string_view to_string(BackendKind k) {
    switch (k) {
        case BackendKind::live: return "live";
        case BackendKind::replay: return "replay";
        case BackendKind::scripted: return "scripted";
    }
    return "live";
}

BackendKind parse_backend_kind(std::string_view s) {
    if (s == "live") return BackendKind::live;
    if (s == "replay") return BackendKind::replay;
    if (s == "scripted") return BackendKind::scripted;
    throw ConfigError("unknown backend '" + std::string(s) + "' (expected live, replay or scripted)");
}

RunConfig run_config_from_document(const ConfigDocument& doc, const std::filesystem::path& base) {
    RunConfig c;
    read_model(doc, "target", c.target);
    read_model(doc, "teacher", c.teacher);
    read_model(doc, "filter", c.filter);
    read_model(doc, "checker", c.checker);

    if (auto v = get_string(doc, "datasets", "target")) c.target_dataset = resolve(base, *v);
    if (auto v = get_string(doc, "datasets", "test")) c.test_dataset = resolve(base, *v);
    if (auto v = get_string(doc, "datasets", "seed_library")) c.seed_library = resolve(base, *v);

    if (auto v = get_int(doc, "loop", "t_max")) c.t_max = static_cast<int>(*v);
    if (auto v = get_int(doc, "loop", "seed")) c.seed = static_cast<std::uint64_t>(*v);
    if (auto v = get_bool(doc, "loop", "deeper_explain")) c.deeper_explain = *v;
    if (auto v = get_double(doc, "loop", "swap_probability")) c.swap_probability = *v;
    if (auto v = get_double(doc, "loop", "min_delta")) c.min_delta = *v;
    if (auto v = get_bool(doc, "loop", "strict_parse")) c.strict_parse = *v;

    if (auto v = get_string(doc, "gateway", "backend")) c.backend = parse_backend_kind(*v);
    if (auto v = get_int(doc, "gateway", "max_in_flight")) {
        if (*v < 1) throw ConfigError("[gateway] max_in_flight must be >= 1");
        c.max_in_flight = static_cast<std::size_t>(*v);
    }
    if (auto v = get_string(doc, "gateway", "cache_dir")) c.cache_dir = resolve(base, *v);
    if (auto v = get_string(doc, "gateway", "replay_file")) c.replay_file = resolve(base, *v);
    if (auto v = get_string(doc, "gateway", "world")) c.world_file = resolve(base, *v);
    if (auto v = get_string(doc, "gateway", "record")) c.record_file = resolve(base, *v);
    if (auto v = get_int(doc, "gateway", "max_attempts")) c.max_attempts = static_cast<int>(*v);
    if (auto v = get_int(doc, "gateway", "base_delay_ms")) c.base_delay_ms = static_cast<int>(*v);

    if (auto v = get_string(doc, "prompts", "dir")) c.prompts_dir = resolve(base, *v);

    if (c.t_max < 0) throw ConfigError("[loop] t_max must be >= 0");
    if (c.swap_probability < 0.0 || c.swap_probability > 1.0) {
        throw ConfigError("[loop] swap_probability must lie in [0, 1]");
    }
    if (c.min_delta < 0.0) throw ConfigError("[loop] min_delta must be >= 0");
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return run_config_from_document(parse_config_text(text), path.parent_path());
}

json config_echo(const RunConfig& c) {
    json j;
    j["target"] = model_echo(c.target);
    j["teacher"] = model_echo(c.teacher);
    j["datasets"] = {{"target", c.target_dataset.string()},
                     {"target_sha256", file_digest(c.target_dataset)},
                     {"test", c.test_dataset.string()},
                     {"test_sha256", file_digest(c.test_dataset)},
                     {"seed_library", c.seed_library.string()},
                     {"seed_library_sha256", file_digest(c.seed_library)}};
    j["loop"] = {{"t_max", c.t_max},
                 {"seed", c.seed},
                 {"deeper_explain", c.deeper_explain},
                 {"swap_probability", c.swap_probability},
                 {"min_delta", c.min_delta},
                 {"strict_parse", c.strict_parse}};
    j["backend"] = std::string(to_string(c.backend));
    j["prompts_dir"] = c.prompts_dir ? c.prompts_dir->string() : std::string{};
    if (c.world_file) j["world_sha256"] = file_digest(*c.world_file);
    return j;
}

std::string config_digest(const RunConfig& config) { return sha256_hex(config_echo(config).dump()); }

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("BIASSCOPE_DATA_DIR"); env && *env) return env;
    return BIASSCOPE_DATA_DIR;
}

}  // namespace biasscope
