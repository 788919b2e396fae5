#include "biasscope/validation.hpp"

#include <spdlog/spdlog.h>

#include "biasscope/dataset.hpp"
#include "biasscope/errors.hpp"
#include "biasscope/parallel.hpp"

namespace biasscope {

PerturbOutcome perturb_testset(const std::vector<PreferenceTriple>& test, const BiasSpec& bias,
                               const ModelHandle& teacher, const PromptForge& forge) {
    if (bias.definition.empty()) {
        throw ConfigError("validation: bias '" + bias.name + "' has an empty definition");
    }
    std::vector<const BiasSpec*> assignment(test.size(), &bias);
    return perturb_assigned(test, assignment, teacher, forge);
}

bool verify(double err_baseline, double err_perturbed, double min_delta) {
    return err_perturbed > err_baseline + min_delta;
}

void to_json(json& j, const CandidateValidation& c) {
    j = json{{"bias", c.bias},
             {"err_baseline", c.err_baseline},
             {"err_perturbed", c.err_perturbed},
             {"delta", c.delta},
             {"accepted", c.accepted}};
    if (!c.note.empty()) j["note"] = c.note;
}

void from_json(const json& j, CandidateValidation& c) {
    c.bias = j.at("bias").get<std::string>();
    c.err_baseline = j.at("err_baseline").get<double>();
    c.err_perturbed = j.at("err_perturbed").get<double>();
    c.delta = j.at("delta").get<double>();
    c.accepted = j.at("accepted").get<bool>();
    c.note = j.value("note", std::string{});
}

ValidationResult validate_candidates(const std::vector<BiasSpec>& candidates,
                                     const std::vector<PreferenceTriple>& test,
                                     const ModelHandle& target, const ModelHandle& teacher,
                                     const OrderMap& orders, const ErrorReport& baseline,
                                     const ValidateOptions& options) {
    const PromptForge& forge = options.forge ? *options.forge : PromptForge::builtin();
    struct Slot {
        std::optional<ErrorReport> report;
        CandidateValidation row;
    };
    std::vector<Slot> slots(candidates.size());

    auto errors = run_indexed(candidates.size(), target.max_in_flight(), [&](std::size_t i) {
        const auto& bias = candidates[i];
        auto& slot = slots[i];
        slot.row.bias = bias.name;
        slot.row.err_baseline = baseline.err;
        auto perturbed = perturb_testset(test, bias, teacher, forge);
        if (perturbed.items.empty()) {
            slot.row.note = "perturbation failed for every test item";
            return;
        }
        try {
            auto eval = evaluate_dataset(materialize(test, perturbed.items), target, orders,
                                         "perturbed:" + bias.name,
                                         EvaluateOptions{options.strict_parse, &forge});
            slot.row.err_perturbed = eval.report.err;
            slot.row.delta = eval.report.err - baseline.err;
            slot.row.accepted = verify(baseline.err, eval.report.err, options.min_delta);
            slot.report = std::move(eval.report);
        } catch (const AllUnparseable& e) {
            slot.row.note = e.what();
        } catch (const GatewayError& e) {
            slot.row.note = e.what();
        }
    });

    ValidationResult out;
    out.reports.push_back(baseline);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (errors[i]) std::rethrow_exception(errors[i]);
        auto& slot = slots[i];
        if (!slot.row.note.empty()) {
            spdlog::warn("validate: '{}' unverified: {}", slot.row.bias, slot.row.note);
        }
        if (slot.report) out.reports.push_back(std::move(*slot.report));
        if (slot.row.accepted) {
            BiasSpec b = candidates[i];
            b.validation = ValidationRecord{slot.row.err_baseline, slot.row.err_perturbed,
                                            options.test_set_id};
            out.validated.push_back(std::move(b));
        }
        out.rows.push_back(std::move(slot.row));
    }
    return out;
}

BiasLibrary extend_library(const BiasLibrary& library, const std::vector<BiasSpec>& validated,
                           int next_version) {
    BiasLibrary next = library;
    for (const auto& b : validated) next.add(b);
    next.set_version(next_version);
    return next;
}

}  // namespace biasscope
