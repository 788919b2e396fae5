#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "biasscope/gateway.hpp"
#include "biasscope/types.hpp"

namespace biasscope {

// Scalar values of the TOML subset accepted in config files.
using ConfigValue = std::variant<std::string, std::int64_t, double, bool>;
using ConfigSection = std::map<std::string, ConfigValue, std::less<>>;
using ConfigDocument = std::map<std::string, ConfigSection, std::less<>>;

// Parses `[section]` headers, `key = value` pairs with basic/literal strings,
// integers, floats and booleans, and `#` comments. Keys before the first
// header go into section "". Throws ConfigError with the line number.
ConfigDocument parse_config_text(std::string_view text);

enum class BackendKind { live, replay, scripted };

std::string_view to_string(BackendKind k);
BackendKind parse_backend_kind(std::string_view s);

struct ModelConfig {
    ModelRef ref;
    GenParams params;
};

struct RunConfig {
    ModelConfig target{{ModelRole::target, "target", "", "BIASSCOPE_API_KEY"}, {}};
    ModelConfig teacher{{ModelRole::teacher, "teacher", "", "BIASSCOPE_API_KEY"}, {}};
    ModelConfig filter{{ModelRole::filter, "filter", "", "BIASSCOPE_API_KEY"}, {}};
    ModelConfig checker{{ModelRole::checker, "checker", "", "BIASSCOPE_API_KEY"}, {}};

    std::filesystem::path target_dataset;
    std::filesystem::path test_dataset;
    std::filesystem::path seed_library;  // empty: the bundled seven-bias library

    int t_max = 4;
    std::uint64_t seed = 0;
    bool deeper_explain = true;
    double swap_probability = 0.5;
    double min_delta = 0.0;
    bool strict_parse = false;

    BackendKind backend = BackendKind::live;
    std::size_t max_in_flight = 4;
    std::optional<std::filesystem::path> cache_dir;
    std::optional<std::filesystem::path> replay_file;
    std::optional<std::filesystem::path> world_file;
    std::optional<std::filesystem::path> record_file;
    int max_attempts = 5;
    int base_delay_ms = 500;

    std::optional<std::filesystem::path> prompts_dir;
};

// Reads a config file; relative paths resolve against its directory.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_document(const ConfigDocument& doc, const std::filesystem::path& base_dir);

// Settings that influence results, plus content digests of every input file.
// Runtime-only knobs (concurrency, cache location, retry timing) are left out.
json config_echo(const RunConfig& config);
std::string config_digest(const RunConfig& config);

// Default location of the bundled data directory (seed library etc.).
std::filesystem::path default_data_dir();

}  // namespace biasscope
