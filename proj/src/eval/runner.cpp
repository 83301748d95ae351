#include "sicr/eval/runner.hpp"

#include <map>

#include "sicr/eval/csp.hpp"

namespace sicr::eval {

std::string variant_label(const train::TrainConfig& config) {
  const auto a = train::active_losses(config.variant, config.weights);
  if (!a.dec && !a.local && !a.global) return "pooled";
  return train::to_string(config.variant);
}

std::vector<ProtocolPlan> make_plans(Scenario scenario, const std::vector<signal::Trial>& trials,
                                     std::uint64_t seed) {
  return scenario == Scenario::I ? plan_scenario1(trials, seed) : plan_scenario2(trials, seed);
}

namespace {

// Test indices grouped by subject, ascending.
std::map<std::uint16_t, std::vector<signal::Trial>> test_by_subject(const std::vector<signal::Trial>& trials,
                                                                    const ProtocolPlan& plan) {
  std::map<std::uint16_t, std::vector<signal::Trial>> out;
  for (auto i : plan.test) out[trials.at(i).subject].push_back(trials[i]);
  return out;
}

ResultRow row_for(const ProtocolPlan& plan, const std::string& backbone, const std::string& variant,
                  std::uint16_t subject, double accuracy) {
  return {to_string(plan.scenario), backbone, variant, subject,
          plan.scenario == Scenario::I ? plan.fold : 0, accuracy};
}

}  // namespace

std::vector<ResultRow> run_plans(const std::vector<signal::Trial>& trials,
                                 const std::vector<ProtocolPlan>& plans, const train::TrainConfig& config,
                                 const PlanCallback& on_plan) {
  config.validate();
  const std::string backbone = model::to_string(config.encoder.backbone);
  const std::string variant = variant_label(config);
  std::vector<ResultRow> rows;
  for (const auto& plan : plans) {
    check_partition(plan, trials.size());
    const auto train_set = select(trials, plan.train);
    const auto val_set = select(trials, plan.val);
    train::RngStreams rngs(config.seed);
    train::SicrModel<float> model(config, rngs.init);
    train::fit(model, train_set, val_set, config, rngs);
    std::vector<ResultRow> plan_rows;
    for (const auto& [subject, test] : test_by_subject(trials, plan)) {
      plan_rows.push_back(row_for(plan, backbone, variant, subject, train::evaluate(model, test).accuracy));
    }
    if (on_plan) on_plan(plan, model, plan_rows);
    rows.insert(rows.end(), plan_rows.begin(), plan_rows.end());
  }
  return rows;
}

std::vector<ResultRow> run_csp_plans(const std::vector<signal::Trial>& trials,
                                     const std::vector<ProtocolPlan>& plans, std::size_t n_filters) {
  std::vector<ResultRow> rows;
  for (const auto& plan : plans) {
    check_partition(plan, trials.size());
    auto fit_idx = plan.train;
    fit_idx.insert(fit_idx.end(), plan.val.begin(), plan.val.end());
    const auto csp = CspLda::fit(select(trials, fit_idx), n_filters);
    for (const auto& [subject, test] : test_by_subject(trials, plan)) {
      rows.push_back(row_for(plan, "csp", "-", subject, csp.accuracy(test)));
    }
  }
  return rows;
}

std::vector<AblationResult> run_ablation(const std::vector<signal::Trial>& trials,
                                         const std::vector<train::Variant>& variants,
                                         const train::TrainConfig& config, Scenario scenario,
                                         const PlanCallback& on_plan) {
  const auto plans = make_plans(scenario, trials, config.seed);
  std::vector<AblationResult> out;
  for (auto v : variants) {
    auto c = config;
    c.variant = v;
    out.push_back({v, aggregate(run_plans(trials, plans, c, on_plan))});
  }
  return out;
}

}  // namespace sicr::eval
