#pragma once

// Knowledge distillation of a (possibly non-differentiable) teacher into a
// LeNet-5 student:
//   L = gamma * H(target, softmax(z_s / tau)) + (1 - gamma) * H(y, softmax(z_s))
// where `target` is the tempered teacher distribution (white box) or the
// one-hot teacher label (black box) and y is the teacher's hard label.

#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsadv/audit.hpp"
#include "tsadv/error.hpp"
#include "tsadv/models.hpp"
#include "tsadv/nn/losses.hpp"
#include "tsadv/teacher.hpp"

namespace tsadv {

enum class OutputMode { hard, soft };

inline std::string to_string(OutputMode m) { return m == OutputMode::hard ? "hard" : "soft"; }

/// Teacher predictions on the attacker's dataset, computed once.
class TeacherOutputs {
public:
  TeacherOutputs() = default;
  TeacherOutputs(OutputMode mode, TeacherKind kind, std::vector<int> hard, std::optional<Matrix> probs,
                 std::optional<Matrix> logits, std::size_t num_classes)
      : mode_(mode), kind_(kind), hard_(std::move(hard)), probs_(std::move(probs)), logits_(std::move(logits)),
        classes_(num_classes) {
    if (mode_ == OutputMode::soft) {
      detail::require(probs_.has_value(), "soft teacher outputs need probabilities");
      detail::require<ShapeError>(probs_->rows == hard_.size(), "teacher probabilities and labels disagree in size");
      for (std::size_t r = 0; r < probs_->rows; ++r) {
        const auto row = probs_->row(r);
        double s = 0.0;
        for (double v : row) s += v;
        detail::require(std::abs(s - 1.0) <= 1e-9, "teacher probability row does not sum to 1");
        detail::require(nn::argmax(row) == hard_[r], "teacher probability argmax disagrees with the hard label");
      }
    } else {
      detail::require(!probs_ && !logits_, "hard teacher outputs must not carry distributions");
    }
  }

  OutputMode mode() const noexcept { return mode_; }
  TeacherKind teacher_kind() const noexcept { return kind_; }
  std::size_t num_classes() const noexcept { return classes_; }
  std::size_t size() const noexcept { return hard_.size(); }
  const std::vector<int>& hard_labels() const noexcept { return hard_; }
  bool has_logits() const noexcept { return logits_.has_value(); }

  /// Teacher distributions. Reads are counted by audit::Scope; throws in hard mode.
  const Matrix& soft_probs() const {
    audit::note_teacher_prob_read();
    if (!probs_) throw Error("teacher outputs are hard labels only");
    return *probs_;
  }
  const Matrix& logits() const {
    audit::note_teacher_prob_read();
    if (!logits_) throw Error("teacher outputs carry no logits");
    return *logits_;
  }

private:
  OutputMode mode_ = OutputMode::hard;
  TeacherKind kind_ = TeacherKind::fcn;
  std::vector<int> hard_;
  std::optional<Matrix> probs_;
  std::optional<Matrix> logits_;
  std::size_t classes_ = 0;
};

/// Queries the teacher once. Hard mode keeps labels only; soft mode keeps
/// the distribution (and logits when the teacher has them) with labels
/// derived from its argmax.
inline TeacherOutputs teacher_outputs(const Teacher& teacher, const Series& x, OutputMode mode) {
  const std::size_t C = teacher.num_classes();
  if (mode == OutputMode::hard)
    return TeacherOutputs(mode, teacher.kind(), teacher.predict(x), std::nullopt, std::nullopt, C);
  auto logits = teacher.logits(x);
  Matrix probs;
  if (logits) {
    probs = *logits;
    for (std::size_t r = 0; r < probs.rows; ++r) {
      const auto q = nn::softmax(probs.row(r), 1.0);
      std::copy(q.begin(), q.end(), probs.row(r).begin());
    }
  } else {
    probs = teacher.probabilities(x);
  }
  std::vector<int> hard(probs.rows);
  for (std::size_t r = 0; r < probs.rows; ++r) hard[r] = nn::argmax(probs.row(r));
  return TeacherOutputs(mode, teacher.kind(), std::move(hard), std::move(probs), std::move(logits), C);
}

inline void save_teacher_outputs(const TeacherOutputs& t, const std::string& path, const nlohmann::json& key) {
  nlohmann::json j;
  j["key"] = key;
  j["mode"] = to_string(t.mode());
  j["teacher_kind"] = to_string(t.teacher_kind());
  j["num_classes"] = t.num_classes();
  j["hard_labels"] = t.hard_labels();
  if (t.mode() == OutputMode::soft) {
    j["soft_probs"] = t.soft_probs().data;
    if (t.has_logits()) j["logits"] = t.logits().data;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(1) << '\n';
}

inline TeacherOutputs load_teacher_outputs(const std::string& path, nlohmann::json* key = nullptr) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open teacher outputs '" + path + "'");
  const auto j = nlohmann::json::parse(in);
  if (key) *key = j.at("key");
  const auto mode = j.at("mode").get<std::string>() == "soft" ? OutputMode::soft : OutputMode::hard;
  const auto C = j.at("num_classes").get<std::size_t>();
  auto hard = j.at("hard_labels").get<std::vector<int>>();
  std::optional<Matrix> probs, logits;
  auto as_matrix = [&](const nlohmann::json& a) {
    Matrix m(hard.size(), C);
    m.data = a.get<std::vector<double>>();
    if (m.data.size() != m.rows * m.cols) throw ParseError(path + ": distribution matrix has the wrong size");
    return m;
  };
  if (j.contains("soft_probs")) probs = as_matrix(j.at("soft_probs"));
  if (j.contains("logits")) logits = as_matrix(j.at("logits"));
  return TeacherOutputs(mode, teacher_kind_from_string(j.at("teacher_kind").get<std::string>()), std::move(hard),
                        std::move(probs), std::move(logits), C);
}

struct DistillConfig {
  double gamma = 0.5;
  double tau = 10.0;
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  static DistillConfig white_box() { return {}; }
  static DistillConfig black_box() {
    DistillConfig c;
    c.gamma = 1.0;
    return c;
  }

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("distillation: gamma must lie in [0, 1]");
    if (!(tau > 0.0)) throw ConfigError("distillation: tau must be > 0");
  }
};

/// Distribution the distillation term imitates for sample `i`: the one-hot
/// label in hard mode, softmax(z_f / tau) when teacher logits exist, and the
/// teacher probabilities unchanged otherwise (Soft-1NN).
inline std::vector<double> distillation_target(const TeacherOutputs& t, std::size_t i, double tau) {
  if (t.mode() == OutputMode::hard) return nn::one_hot(t.hard_labels().at(i), t.num_classes());
  if (t.has_logits()) return nn::softmax(t.logits().row(i), tau);
  const auto row = t.soft_probs().row(i);
  return {row.begin(), row.end()};
}

struct DistillLoss {
  double value = 0.0;
  std::vector<double> grad;  // dL/dz_s
};

/// L_transfer for one sample. `y_onehot` is ignored when gamma == 1.
inline DistillLoss distill_loss(std::span<const double> z_s, std::span<const double> target,
                                std::span<const double> y_onehot, const DistillConfig& cfg) {
  cfg.validate();
  if (z_s.size() != target.size()) throw ShapeError("distill_loss: student logits and teacher target differ in size");
  DistillLoss r{0.0, std::vector<double>(z_s.size(), 0.0)};
  if (cfg.gamma > 0.0) {
    const auto q_tau = nn::softmax(z_s, cfg.tau);
    r.value += cfg.gamma * nn::cross_entropy(target, q_tau);
    const auto g = nn::softmax_cross_entropy_grad(target, q_tau, cfg.tau);
    for (std::size_t c = 0; c < g.size(); ++c) r.grad[c] += cfg.gamma * g[c];
  }
  if (cfg.gamma < 1.0) {
    if (y_onehot.size() != z_s.size()) throw ShapeError("distill_loss: hard label and logits differ in size");
    const auto q1 = nn::softmax(z_s, 1.0);
    r.value += (1.0 - cfg.gamma) * nn::cross_entropy(y_onehot, q1);
    const auto g = nn::softmax_cross_entropy_grad(y_onehot, q1, 1.0);
    for (std::size_t c = 0; c < g.size(); ++c) r.grad[c] += (1.0 - cfg.gamma) * g[c];
  }
  return r;
}

struct StudentResult {
  nn::Model<float> model;
  double fidelity = 0.0;                   // agreement with teacher labels, best checkpoint
  std::vector<double> checkpoint_fidelity;  // fidelity at each retained checkpoint
};

template <typename T>
double fidelity(const nn::Model<T>& model, const Series& x, const std::vector<int>& teacher_labels) {
  std::size_t agree = 0;
  for_each_chunk<T>(x, 256, [&](std::size_t first, const nn::Tensor<T>& t) {
    const auto p = nn::predict_labels(model, t);
    for (std::size_t i = 0; i < p.size(); ++i) agree += p[i] == teacher_labels[first + i];
  });
  return static_cast<double>(agree) / static_cast<double>(x.size());
}

/// Trains the student on the attacker's split against the teacher outputs.
/// Only series values and teacher outputs are consumed; the split's own
/// labels are never read. Keeps the parameters with the best fidelity.
inline StudentResult train_student(nn::Model<float> student, const Series& d_eval, const TeacherOutputs& teacher,
                                   const DistillConfig& cfg, BoxMode box) {
  cfg.validate();
  if (student.arch.architecture != Architecture::lenet5) throw ConfigError("train_student: the student must be a LeNet-5");
  if (d_eval.size() != teacher.size()) throw ShapeError("train_student: teacher outputs do not match the split size");
  if (student.arch.num_classes != teacher.num_classes()) throw ShapeError("train_student: class count mismatch");
  if (box == BoxMode::black && teacher.mode() != OutputMode::hard)
    throw ConfigError("black-box distillation accepts hard teacher labels only");

  const std::size_t C = teacher.num_classes();
  const auto& hard = teacher.hard_labels();
  std::vector<std::vector<double>> targets(d_eval.size());
  for (std::size_t i = 0; i < d_eval.size(); ++i) targets[i] = distillation_target(teacher, i, cfg.tau);

  const auto inputs = nn::to_input<float>(d_eval);
  nn::Adam<float> opt({cfg.learning_rate});
  std::mt19937_64 rng(cfg.seed);

  StudentResult res;
  res.model = student;
  res.fidelity = -1.0;
  student.training_log.clear();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& rows : nn::epoch_batches(d_eval.size(), cfg.batch_size, rng)) {
      const auto batch = nn::gather_rows(inputs, rows);
      loss_sum += static_cast<double>(rows.size()) *
                  nn::train_step(student, batch, [&](const nn::Tensor<float>& logits) {
                    nn::LossResult<float> lr{0.0, nn::Tensor<float>(logits.shape())};
                    const double B = static_cast<double>(rows.size());
                    std::vector<double> z(C);
                    for (std::size_t b = 0; b < rows.size(); ++b) {
                      for (std::size_t c = 0; c < C; ++c) z[c] = static_cast<double>(logits[b * C + c]);
                      const auto y = cfg.gamma < 1.0 ? nn::one_hot(hard[rows[b]], C) : std::vector<double>{};
                      const auto l = distill_loss(z, targets[rows[b]], y, cfg);
                      lr.value += l.value / B;
                      for (std::size_t c = 0; c < C; ++c) lr.grad_output[b * C + c] = static_cast<float>(l.grad[c] / B);
                    }
                    return lr;
                  }, opt);
    }
    const double fid = fidelity(student, d_eval, hard);
    student.training_log.push_back({epoch, loss_sum / static_cast<double>(d_eval.size()), fid});
    if (fid > res.fidelity) {
      res.fidelity = fid;
      res.model = student;
      res.checkpoint_fidelity.push_back(fid);
    }
  }
  res.model.training_log = student.training_log;
  return res;
}

}  // namespace tsadv
