#pragma once

#include <limits>
#include <vector>

#include "tsadv/attack.hpp"
#include "tsadv/evaluation.hpp"

namespace tsadv {

struct GridResult {
  std::vector<AttackRun> runs;
  std::vector<AttackReport> reports;  // d_eval, labeled criterion, one per beta
  std::size_t best = 0;
};

/// Most adversaries wins; ties go to the smaller adversary MSE, then the
/// smaller overall MSE, then the earlier entry.
inline std::size_t select_best(const std::vector<AttackReport>& reports) {
  if (reports.empty()) throw Error("select_best: no reports");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::size_t best = 0;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const auto& a = reports[i];
    const auto& b = reports[best];
    if (a.num_adversaries != b.num_adversaries) {
      if (a.num_adversaries > b.num_adversaries) best = i;
      continue;
    }
    const double ma = a.mse_adversaries.value_or(inf), mb = b.mse_adversaries.value_or(inf);
    if (ma != mb) {
      if (ma < mb) best = i;
      continue;
    }
    if (a.mse_all < b.mse_all) best = i;
  }
  return best;
}

/// One generator per beta in the grid, each trained on d_eval and scored
/// on d_eval against the teacher.
inline GridResult beta_grid_search(const AttackConfig& base, std::shared_ptr<const nn::Model<float>> surrogate,
                                   SurrogateRoute route, const Dataset& d_eval, const Teacher& teacher,
                                   const std::vector<double>& betas = beta_grid(), const std::string& provenance = {}) {
  GridResult g;
  const auto x = d_eval.values();
  for (double beta : betas) {
    AttackConfig cfg = base;
    cfg.beta = beta;
    auto run = train_gatn(make_attack_run(cfg, surrogate, route, provenance), x);
    g.reports.push_back(evaluate_attack(run, teacher, d_eval, SplitKind::d_eval));
    g.runs.push_back(std::move(run));
  }
  g.best = select_best(g.reports);
  return g;
}

}  // namespace tsadv
