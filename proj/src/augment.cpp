#include "biasscope/augment.hpp"

#include <spdlog/spdlog.h>

#include "biasscope/discovery.hpp"
#include "biasscope/errors.hpp"
#include "biasscope/parallel.hpp"
#include "biasscope/rng.hpp"

namespace biasscope {

void to_json(json& j, const AugmentedRow& r) {
    j = json{{"id", r.id},
             {"prompt", r.prompt},
             {"chosen", r.chosen},
             {"rejected", r.rejected},
             {"bias_name", r.bias_name ? json(*r.bias_name) : json(nullptr)},
             {"skipped", r.skipped}};
}

void from_json(const json& j, AugmentedRow& r) {
    r.id = j.value("id", std::string{});
    r.prompt = j.at("prompt").get<std::string>();
    r.chosen = j.at("chosen").get<std::string>();
    r.rejected = j.at("rejected").get<std::string>();
    const auto& b = j.at("bias_name");
    r.bias_name = b.is_null() ? std::nullopt : std::optional<std::string>(b.get<std::string>());
    r.skipped = j.at("skipped").get<bool>();
}

json preference_training_metadata() {
    return json{{"method", "dpo"},
                {"learning_rate", 5e-7},
                {"beta", 0.01},
                {"epochs", 1},
                {"max_length", 2048},
                {"optimizer", "AdamW"},
                {"lr_scheduler", "cosine"},
                {"warmup_ratio", 0.1}};
}

AugmentResult augment_preferences(const std::vector<PreferenceTriple>& dataset,
                                  const BiasLibrary& library, const ModelHandle& teacher,
                                  const AugmentOptions& options, const PromptForge& forge) {
    if (options.fraction < 0.0 || options.fraction > 1.0) {
        throw ConfigError("augment: fraction must lie in [0, 1]");
    }
    std::vector<BiasSpec> pool = options.include_seed ? library.entries() : library.validated();
    if (pool.empty()) {
        throw ConfigError(options.include_seed
                              ? "augment: bias library is empty"
                              : "augment: bias library has no validated biases (see --include-seed)");
    }

    Rng rng(options.seed);
    std::vector<const BiasSpec*> assigned(dataset.size(), nullptr);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const BiasSpec* b = &pool[uniform_index(rng, pool.size())];
        if (options.fraction >= 1.0 || unit_double(rng) < options.fraction) assigned[i] = b;
    }

    std::vector<std::optional<std::string>> rewritten(dataset.size());
    auto errors = run_indexed(dataset.size(), teacher.max_in_flight(), [&](std::size_t i) {
        if (!assigned[i]) return;
        rewritten[i] = perturb_one(dataset[i], *assigned[i], teacher, forge).rejected_perturbed;
    });

    AugmentResult out;
    out.rows.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& t = dataset[i];
        AugmentedRow row{t.id, t.instruction, t.chosen, t.rejected, std::nullopt, false};
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const GatewayError& e) {
                spdlog::warn("augment: passing '{}' through: {}", t.id, e.what());
                row.skipped = true;
                ++out.skipped;
            }
        } else if (rewritten[i]) {
            row.rejected = std::move(*rewritten[i]);
            row.bias_name = assigned[i]->name;
            ++out.rewritten;
        }
        out.rows.push_back(std::move(row));
    }

    json names = json::array();
    for (const auto& b : pool) names.push_back(b.name);
    out.metadata = json{{"type", "metadata"},
                        {"rows", out.rows.size()},
                        {"rewritten", out.rewritten},
                        {"skipped", out.skipped},
                        {"seed", options.seed},
                        {"fraction", options.fraction},
                        {"bias_pool", names},
                        {"training", preference_training_metadata()}};
    return out;
}

std::string serialize_augmented(const AugmentResult& result) {
    std::string out = result.metadata.dump();
    out += '\n';
    for (const auto& r : result.rows) {
        out += json(r).dump();
        out += '\n';
    }
    return out;
}

}  // namespace biasscope
