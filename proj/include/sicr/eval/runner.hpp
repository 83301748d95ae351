#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sicr/eval/protocol.hpp"
#include "sicr/eval/results.hpp"
#include "sicr/train/trainer.hpp"

namespace sicr::eval {

// "pooled" when no auxiliary loss is active, else the variant numeral.
std::string variant_label(const train::TrainConfig& config);

std::vector<ProtocolPlan> make_plans(Scenario scenario, const std::vector<signal::Trial>& trials,
                                     std::uint64_t seed);

// Called after each plan with the trained model and that plan's rows.
using PlanCallback =
    std::function<void(const ProtocolPlan&, train::SicrModel<float>&, const std::vector<ResultRow>&)>;

// Trains one model per plan (seeded by config.seed, so every plan and every
// variant starts from the same initialization) and reports the accuracy on
// each test subject.
std::vector<ResultRow> run_plans(const std::vector<signal::Trial>& trials,
                                 const std::vector<ProtocolPlan>& plans, const train::TrainConfig& config,
                                 const PlanCallback& on_plan = {});

// CSP+LDA fitted on train+val of each plan.
std::vector<ResultRow> run_csp_plans(const std::vector<signal::Trial>& trials,
                                     const std::vector<ProtocolPlan>& plans, std::size_t n_filters = 6);

struct AblationResult {
  train::Variant variant;
  ResultTable table;
};

// Same plans, seeds and schedule for every variant; only config.variant
// changes.
std::vector<AblationResult> run_ablation(const std::vector<signal::Trial>& trials,
                                         const std::vector<train::Variant>& variants,
                                         const train::TrainConfig& config, Scenario scenario,
                                         const PlanCallback& on_plan = {});

}  // namespace sicr::eval
