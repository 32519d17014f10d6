#pragma once

// Adversary counting against the teacher, perturbation MSE and report I/O.
//
// Labeled criterion: a sample counts iff teacher(x) equals its true label
// and teacher(x_hat) differs from teacher(x). Unlabeled criterion: teacher(x)
// is taken as ground truth, so only the second condition applies.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsadv/attack.hpp"
#include "tsadv/error.hpp"
#include "tsadv/nn/losses.hpp"
#include "tsadv/teacher.hpp"
#include "tsadv/timeseries.hpp"

namespace tsadv {

enum class Criterion { labeled, unlabeled };
enum class SplitKind { d_eval, d_test };

inline std::string to_string(Criterion c) { return c == Criterion::labeled ? "labeled" : "unlabeled"; }
inline std::string to_string(SplitKind s) { return s == SplitKind::d_eval ? "d_eval" : "d_test"; }
inline Criterion criterion_from_string(const std::string& s) {
  if (s == "labeled") return Criterion::labeled;
  if (s == "unlabeled") return Criterion::unlabeled;
  throw ConfigError("unknown criterion '" + s + "'");
}
inline SplitKind split_from_string(const std::string& s) {
  if (s == "d_eval") return SplitKind::d_eval;
  if (s == "d_test") return SplitKind::d_test;
  throw ConfigError("unknown split '" + s + "'");
}

struct AttackReport {
  std::string dataset;
  BoxMode box = BoxMode::white;
  TeacherKind teacher = TeacherKind::fcn;
  double beta = 0.0;
  std::size_t num_adversaries = 0;
  std::size_t num_evaluated = 0;
  std::optional<double> mse_adversaries;  // empty when no adversary was found
  double mse_all = 0.0;
  SplitKind split = SplitKind::d_eval;
  Criterion criterion = Criterion::labeled;
  std::vector<std::size_t> adversary_indices;

  bool operator==(const AttackReport&) const = default;
};

namespace detail {

inline void check_pairs(const Series& x, const Series& x_hat) {
  if (x.empty()) throw Error("adversary count: no samples");
  if (x.size() != x_hat.size()) throw ShapeError("adversary count: x and x_hat counts differ");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i].size() != x_hat[i].size())
      throw ShapeError("adversary count: sample " + std::to_string(i) + " has mismatched lengths");
}

inline AttackReport tally(const Series& x, const Series& x_hat, const std::vector<bool>& counted, Criterion crit) {
  AttackReport r;
  r.criterion = crit;
  r.num_evaluated = x.size();
  double sum_all = 0.0, sum_adv = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double mse = nn::l2(x_hat[i], x[i]);
    sum_all += mse;
    if (counted[i]) {
      sum_adv += mse;
      r.adversary_indices.push_back(i);
    }
  }
  r.num_adversaries = r.adversary_indices.size();
  r.mse_all = sum_all / static_cast<double>(x.size());
  if (r.num_adversaries > 0) r.mse_adversaries = sum_adv / static_cast<double>(r.num_adversaries);
  return r;
}

}  // namespace detail

/// Labeled criterion from precomputed teacher predictions.
inline AttackReport count_adversaries_labeled(const std::vector<int>& pred_clean, const std::vector<int>& pred_adv,
                                              const std::vector<int>& y_true, const Series& x, const Series& x_hat) {
  detail::check_pairs(x, x_hat);
  if (pred_clean.size() != x.size() || pred_adv.size() != x.size() || y_true.size() != x.size())
    throw ShapeError("adversary count: prediction/label counts differ from the sample count");
  std::vector<bool> counted(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) counted[i] = pred_clean[i] == y_true[i] && pred_adv[i] != pred_clean[i];
  return detail::tally(x, x_hat, counted, Criterion::labeled);
}

inline AttackReport count_adversaries_labeled(const Teacher& teacher, const Series& x, const Series& x_hat,
                                              const std::vector<int>& y_true) {
  detail::check_pairs(x, x_hat);
  return count_adversaries_labeled(teacher.predict(x), teacher.predict(x_hat), y_true, x, x_hat);
}

/// Unlabeled criterion: pseudo-labels teacher(x) are computed once, up front.
inline AttackReport count_adversaries_unlabeled(const std::vector<int>& pseudo, const std::vector<int>& pred_adv,
                                                const Series& x, const Series& x_hat) {
  detail::check_pairs(x, x_hat);
  if (pseudo.size() != x.size() || pred_adv.size() != x.size())
    throw ShapeError("adversary count: prediction counts differ from the sample count");
  std::vector<bool> counted(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) counted[i] = pred_adv[i] != pseudo[i];
  return detail::tally(x, x_hat, counted, Criterion::unlabeled);
}

inline AttackReport count_adversaries_unlabeled(const Teacher& teacher, const Series& x, const Series& x_hat) {
  detail::check_pairs(x, x_hat);
  const auto pseudo = teacher.predict(x);
  return count_adversaries_unlabeled(pseudo, teacher.predict(x_hat), x, x_hat);
}

inline void stamp(AttackReport& r, const std::string& dataset, const AttackRun& run, SplitKind split) {
  r.dataset = dataset;
  r.box = run.config.box;
  r.teacher = run.config.teacher_kind;
  r.beta = run.config.beta;
  r.split = split;
}

/// Generates adversaries for a labeled split and counts them against the teacher.
inline AttackReport evaluate_attack(const AttackRun& run, const Teacher& teacher, const Dataset& split_data,
                                    SplitKind split, Criterion crit = Criterion::labeled) {
  const auto x = split_data.values();
  const auto gen = generate(run, x);
  AttackReport r = crit == Criterion::labeled ? count_adversaries_labeled(teacher, x, gen.x_hat, split_data.labels())
                                              : count_adversaries_unlabeled(teacher, x, gen.x_hat);
  stamp(r, split_data.name, run, split);
  return r;
}

/// Applies a generator trained on d_eval to the unseen d_test split with no
/// parameter updates; the generator and surrogate are checked bit-identical
/// before and after.
inline AttackReport generalization_eval(const AttackRun& run, const Teacher& teacher, const Dataset& d_test,
                                        Criterion crit = Criterion::labeled) {
  const auto gatn_before = run.gatn;
  const auto surrogate_before = *run.surrogate;
  AttackReport r = evaluate_attack(run, teacher, d_test, SplitKind::d_test, crit);
  if (!nn::same_parameters(run.gatn, gatn_before) || !nn::same_parameters(*run.surrogate, surrogate_before))
    throw Error("generalization_eval: model parameters changed during evaluation");
  return r;
}

inline const char* kReportCsvHeader =
    "dataset,teacher,box,beta,split,criterion,num_adversaries,num_evaluated,mse_adversaries,mse_all";

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

inline std::string to_csv_row(const AttackReport& r) {
  std::ostringstream os;
  os << r.dataset << ',' << to_string(r.teacher) << ',' << to_string(r.box) << ',' << format_double(r.beta) << ','
     << to_string(r.split) << ',' << to_string(r.criterion) << ',' << r.num_adversaries << ',' << r.num_evaluated << ','
     << (r.mse_adversaries ? format_double(*r.mse_adversaries) : std::string("NA")) << ',' << format_double(r.mse_all);
  return os.str();
}

inline void write_reports_csv(const std::vector<AttackReport>& reports, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << kReportCsvHeader << '\n';
  for (const auto& r : reports) out << to_csv_row(r) << '\n';
}

inline nlohmann::json to_json(const AttackReport& r) {
  nlohmann::json j{{"dataset", r.dataset},
                   {"teacher", to_string(r.teacher)},
                   {"box", to_string(r.box)},
                   {"beta", r.beta},
                   {"split", to_string(r.split)},
                   {"criterion", to_string(r.criterion)},
                   {"num_adversaries", r.num_adversaries},
                   {"num_evaluated", r.num_evaluated},
                   {"mse_all", r.mse_all},
                   {"adversary_indices", r.adversary_indices}};
  j["mse_adversaries"] = r.mse_adversaries ? nlohmann::json(*r.mse_adversaries) : nlohmann::json(nullptr);
  return j;
}

inline AttackReport report_from_json(const nlohmann::json& j) {
  AttackReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.teacher = teacher_kind_from_string(j.at("teacher").get<std::string>());
  r.box = box_mode_from_string(j.at("box").get<std::string>());
  r.beta = j.at("beta").get<double>();
  r.split = split_from_string(j.at("split").get<std::string>());
  r.criterion = criterion_from_string(j.at("criterion").get<std::string>());
  r.num_adversaries = j.at("num_adversaries").get<std::size_t>();
  r.num_evaluated = j.at("num_evaluated").get<std::size_t>();
  r.mse_all = j.at("mse_all").get<double>();
  if (!j.at("mse_adversaries").is_null()) r.mse_adversaries = j.at("mse_adversaries").get<double>();
  r.adversary_indices = j.at("adversary_indices").get<std::vector<std::size_t>>();
  return r;
}

}  // namespace tsadv
