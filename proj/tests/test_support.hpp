#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "biasscope/dataset.hpp"
#include "biasscope/gateway.hpp"
#include "biasscope/scripted_world.hpp"
#include "biasscope/types.hpp"

namespace biasscope::testing {

inline std::filesystem::path fixtures() { return BIASSCOPE_FIXTURES_DIR; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "bs") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline GatewayOptions fast_options(std::size_t max_in_flight = 4) {
    GatewayOptions o;
    o.max_in_flight = max_in_flight;
    o.retry.base_delay = std::chrono::milliseconds(1);
    o.retry.max_delay = std::chrono::milliseconds(5);
    return o;
}

struct ScriptedRig {
    std::shared_ptr<ScriptedBackend> backend;
    std::unique_ptr<Gateway> gateway;

    explicit ScriptedRig(ScriptedBackend::Rule rule, GatewayOptions options = fast_options())
        : backend(std::make_shared<ScriptedBackend>(std::move(rule))),
          gateway(std::make_unique<Gateway>(backend, std::move(options))) {}

    ModelHandle handle(ModelRole role = ModelRole::target, std::string id = "scripted") const {
        return ModelHandle{gateway.get(), ModelRef{role, std::move(id), "", "BIASSCOPE_API_KEY"}, {}};
    }
};

inline PreferenceTriple triple(std::string id, std::string q, std::string chosen, std::string rejected,
                               Category c = Category::other) {
    return PreferenceTriple{std::move(id), std::move(q), std::move(chosen), std::move(rejected), c, "test"};
}

// `n` distinct triples whose rejected answers carry the "[flaw]" token.
inline std::vector<PreferenceTriple> flawed_triples(std::size_t n, const std::string& prefix = "q") {
    std::vector<PreferenceTriple> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = std::to_string(i);
        out.push_back(triple(prefix + "-" + s, "Question number " + s + " about topic " + prefix + "?",
                             "Correct answer " + s + ".", "Wrong answer " + s + ". [flaw]",
                             static_cast<Category>(i % 8)));
    }
    return out;
}

inline BiasSpec bias(std::string name, std::string def = "") {
    if (def.empty()) def = "The judge favors " + name + " cues.";
    return BiasSpec{std::move(name), std::move(def), BiasOrigin::seed, std::nullopt, std::nullopt};
}

}  // namespace biasscope::testing
