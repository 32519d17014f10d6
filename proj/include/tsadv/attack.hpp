#pragma once

// Gradient Adversarial Transformation Network attack.
//
// The generator g maps a series x and the surrogate's input gradient
// x_tilde = d softmax(s(x))_t / dx to x_hat. It is trained against a frozen
// surrogate s with
//   L = beta * mse(x_hat, x) + mse(s(x_hat), rerank(s(x), t, alpha)).

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "tsadv/error.hpp"
#include "tsadv/models.hpp"
#include "tsadv/nn/losses.hpp"
#include "tsadv/nn/model.hpp"
#include "tsadv/teacher.hpp"

namespace tsadv {

/// Boosts class t to alpha * max(y), keeps the rest, then divides by the
/// sum. For alpha > 1 the result's argmax is t.
inline std::vector<double> rerank(std::span<const double> y, int t, double alpha) {
  if (!(alpha > 1.0)) throw ConfigError("rerank: alpha must be > 1");
  if (t < 0 || static_cast<std::size_t>(t) >= y.size())
    throw ConfigError("rerank: target class " + std::to_string(t) + " out of range");
  std::vector<double> r(y.begin(), y.end());
  r[static_cast<std::size_t>(t)] = alpha * *std::max_element(y.begin(), y.end());
  double sum = 0.0;
  for (double v : r) sum += v;
  for (double& v : r) v /= sum;
  return r;
}

enum class SurrogateRoute { teacher_direct, student };

inline std::string to_string(SurrogateRoute r) { return r == SurrogateRoute::teacher_direct ? "teacher" : "student"; }

/// The generator differentiates through the teacher itself only for a
/// white-box attack on the FCN; every other combination goes through the
/// distilled student.
constexpr SurrogateRoute select_surrogate(BoxMode box, TeacherKind kind) noexcept {
  return box == BoxMode::white && kind == TeacherKind::fcn ? SurrogateRoute::teacher_direct : SurrogateRoute::student;
}

inline const std::vector<double>& beta_grid() {
  static const std::vector<double> grid{1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
  return grid;
}

struct AttackConfig {
  double alpha = 1.5;
  double beta = 1e-2;
  int target_class = 1;
  BoxMode box = BoxMode::white;
  TeacherKind teacher_kind = TeacherKind::fcn;
  std::uint64_t seed = 0;
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::vector<std::size_t> hidden_units{128, 128};
  bool residual = false;
  bool cache_gradients = true;  // reuse x_tilde and s(x) across epochs

  void validate(std::size_t num_classes) const {
    if (!(alpha > 1.0)) throw ConfigError("attack: alpha must be > 1");
    if (!(beta >= 0.0)) throw ConfigError("attack: beta must be >= 0");
    if (target_class < 0 || static_cast<std::size_t>(target_class) >= num_classes)
      throw ConfigError("attack: target class " + std::to_string(target_class) + " out of range for " +
                        std::to_string(num_classes) + " classes");
    if (hidden_units.empty()) throw ConfigError("attack: generator needs at least one hidden layer");
  }
};

struct GatnEpoch {
  double loss = 0.0;
  double input_loss = 0.0;   // mean mse(x_hat, x)
  double output_loss = 0.0;  // mean mse(y_adv, rerank(y_clean))
  double surrogate_success = 0.0;  // share of samples the surrogate assigns to t
};

struct AttackRun {
  AttackConfig config;
  SurrogateRoute route = SurrogateRoute::student;
  std::shared_ptr<const nn::Model<float>> surrogate;
  nn::Model<float> gatn;
  std::vector<GatnEpoch> history;
  std::string provenance;
};

/// Starts an attack run: validates the routing rule and builds an untrained generator.
inline AttackRun make_attack_run(const AttackConfig& cfg, std::shared_ptr<const nn::Model<float>> surrogate,
                                 SurrogateRoute route, std::string provenance = {}) {
  if (!surrogate) throw ConfigError("attack: no surrogate model");
  if (route != select_surrogate(cfg.box, cfg.teacher_kind))
    throw ConfigError("attack: a " + to_string(cfg.box) + "-box attack on " + to_string(cfg.teacher_kind) +
                      " must use the " + to_string(select_surrogate(cfg.box, cfg.teacher_kind)) + " surrogate");
  cfg.validate(surrogate->arch.num_classes);
  ArchitectureConfig arch;
  arch.architecture = Architecture::gatn;
  arch.input_length = surrogate->arch.input_length;
  arch.num_classes = surrogate->arch.num_classes;
  arch.gatn_hidden_units = cfg.hidden_units;
  arch.gatn_residual = cfg.residual;
  AttackRun run{cfg, route, std::move(surrogate), build_gatn<float>(arch, cfg.seed), {}, std::move(provenance)};
  return run;
}

struct GatnLoss {
  double value = 0.0;
  double input_loss = 0.0;
  double output_loss = 0.0;
};

/// beta * mse(x_hat, x) + mse(y_adv, rerank(y_clean, t, alpha)).
inline GatnLoss gatn_loss(std::span<const double> x, std::span<const double> x_hat, std::span<const double> y_clean,
                          std::span<const double> y_adv, const AttackConfig& cfg) {
  if (x.size() != x_hat.size()) throw ShapeError("gatn_loss: x and x_hat differ in length");
  if (y_clean.size() != y_adv.size()) throw ShapeError("gatn_loss: prediction sizes differ");
  const auto target = rerank(y_clean, cfg.target_class, cfg.alpha);
  GatnLoss l;
  l.input_loss = nn::l2<double, double>(x_hat, x);
  l.output_loss = nn::l2<double, double>(y_adv, std::span<const double>(target));
  l.value = cfg.beta * l.input_loss + l.output_loss;
  return l;
}

namespace detail {

/// Stacks x and x_tilde ([B, 1, T] each) into the generator input [B, 2, T].
template <typename T>
nn::Tensor<T> stack_generator_input(const nn::Tensor<T>& x, const nn::Tensor<T>& x_tilde) {
  const std::size_t B = x.dim(0), L = x.dim(2);
  nn::Tensor<T> out({B, 2, L});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy(x.data() + b * L, x.data() + (b + 1) * L, out.data() + (2 * b) * L);
    std::copy(x_tilde.data() + b * L, x_tilde.data() + (b + 1) * L, out.data() + (2 * b + 1) * L);
  }
  return out;
}

/// Generator output [B, T] -> adversarial batch [B, 1, T].
template <typename T>
nn::Tensor<T> to_series_batch(nn::Tensor<T> out, const nn::Tensor<T>& x, bool residual) {
  if (residual)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  const std::size_t B = out.dim(0), L = out.dim(1);
  return std::move(out).reshaped({B, 1, L});
}

}  // namespace detail

struct Generated {
  Series x_hat;
  Matrix y_clean;  // surrogate distribution on x
  Matrix y_adv;    // surrogate distribution on x_hat
};

/// Two surrogate passes around one generator pass; no parameter changes.
template <typename T>
Generated generate_with(const nn::Model<T>& surrogate, const nn::Model<T>& gatn, const AttackConfig& cfg, const Series& x) {
  Generated g;
  const std::size_t C = surrogate.arch.num_classes;
  g.y_clean = Matrix(x.size(), C);
  g.y_adv = Matrix(x.size(), C);
  for_each_chunk<T>(x, 256, [&](std::size_t first, const nn::Tensor<T>& xb) {
    if (xb.dim(2) != gatn.arch.input_length)
      throw ShapeError("generate: series length " + std::to_string(xb.dim(2)) + " does not match the generator's " +
                       std::to_string(gatn.arch.input_length));
    const auto clean = nn::forward(surrogate, xb);
    const auto x_tilde = nn::input_gradient(surrogate, xb, cfg.target_class);
    const auto out = gatn.net.forward(detail::stack_generator_input(xb, x_tilde), nn::Mode::inference);
    const auto x_hat = detail::to_series_batch(out, xb, gatn.arch.gatn_residual);
    const auto adv = nn::forward(surrogate, x_hat);
    const std::size_t L = xb.dim(2);
    for (std::size_t b = 0; b < xb.dim(0); ++b) {
      g.x_hat.emplace_back(x_hat.data() + b * L, x_hat.data() + (b + 1) * L);
      for (std::size_t c = 0; c < C; ++c) {
        g.y_clean(first + b, c) = clean.probabilities[b * C + c];
        g.y_adv(first + b, c) = adv.probabilities[b * C + c];
      }
    }
  });
  return g;
}

inline Generated generate(const AttackRun& run, const Series& x) {
  return generate_with(*run.surrogate, run.gatn, run.config, x);
}

struct GatnBatch {
  double value = 0.0;        // mean loss over the batch
  double input_loss = 0.0;   // mean mse(x_hat, x)
  double output_loss = 0.0;  // mean mse(y_adv, target)
  std::size_t surrogate_hits = 0;
};

/// Mean generator loss over one batch and its gradient w.r.t. the generator
/// parameters, back-propagated through the frozen surrogate. `clean` and
/// `x_tilde` are the surrogate's distribution and input gradient on `xb`.
template <typename T>
GatnBatch gatn_batch_backward(const nn::Model<T>& surrogate, const nn::Model<T>& gatn, const AttackConfig& cfg,
                              const nn::Tensor<T>& xb, const nn::Tensor<double>& clean, const nn::Tensor<T>& x_tilde,
                              nn::Tape<T>* gen_tape, nn::Gradients<T>* grads) {
  const std::size_t B = xb.dim(0), L = xb.dim(2), C = surrogate.arch.num_classes;
  nn::Tape<T> local_tape, sur_tape;
  nn::Tape<T>& tape = gen_tape ? *gen_tape : local_tape;
  const auto out = gatn.net.forward(detail::stack_generator_input(xb, x_tilde), nn::Mode::training, &tape);
  const auto x_hat = detail::to_series_batch(out, xb, gatn.arch.gatn_residual);
  const auto adv = nn::softmax_rows(surrogate.net.forward(x_hat, nn::Mode::inference, &sur_tape), 1.0);

  GatnBatch r;
  nn::Tensor<T> dlogits({B, C});
  const double Bd = static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    const std::span<const double> yc(clean.data() + b * C, C), ya(adv.data() + b * C, C);
    const auto target = rerank(yc, cfg.target_class, cfg.alpha);
    const double ly = nn::l2<double, double>(ya, std::span<const double>(target));
    const double lx = nn::l2<T, T>(std::span<const T>(x_hat.data() + b * L, L), std::span<const T>(xb.data() + b * L, L));
    r.value += (cfg.beta * lx + ly) / Bd;
    r.input_loss += lx / Bd;
    r.output_loss += ly / Bd;
    r.surrogate_hits += nn::argmax(ya) == cfg.target_class;
    const auto dy = nn::l2_grad<double, double>(ya, std::span<const double>(target));
    const auto dz = nn::softmax_backward(ya, dy, 1.0);
    for (std::size_t c = 0; c < C; ++c) dlogits[b * C + c] = static_cast<T>(dz[c] / Bd);
  }
  if (!grads || !std::isfinite(r.value)) return r;

  auto dx_hat = surrogate.net.backward(sur_tape, std::move(dlogits));  // surrogate parameters stay constant
  for (std::size_t i = 0; i < B * L; ++i)
    dx_hat[i] += static_cast<T>(cfg.beta * 2.0 * (static_cast<double>(x_hat[i]) - static_cast<double>(xb[i])) /
                                static_cast<double>(L * B));
  gatn.net.backward(tape, std::move(dx_hat).reshaped({B, L}), grads);
  return r;
}

/// Trains the generator on the attacker's split against the frozen
/// surrogate. Only series values are consumed.
inline AttackRun train_gatn(AttackRun run, const Series& d_eval) {
  const auto& cfg = run.config;
  const auto& s = *run.surrogate;
  const std::size_t C = s.arch.num_classes;
  cfg.validate(C);
  if (d_eval.empty()) throw ConfigError("train_gatn: empty training split");
  const std::size_t L = d_eval.front().size();
  if (L != run.gatn.arch.input_length) throw ShapeError("train_gatn: series length does not match the generator");

  const auto inputs = nn::to_input<float>(d_eval);
  const std::size_t N = d_eval.size();

  // Surrogate clean distribution and input gradient per sample.
  auto surrogate_view = [&](const nn::Tensor<float>& xb) {
    auto clean = nn::forward(s, xb).probabilities;
    auto grad = nn::input_gradient(s, xb, cfg.target_class);
    return std::pair{std::move(clean), std::move(grad)};
  };
  nn::Tensor<double> cached_clean({N, C});
  nn::Tensor<float> cached_grad({N, 1, L});
  if (cfg.cache_gradients) {
    for (std::size_t i = 0; i < N; i += 256) {
      const std::size_t n = std::min<std::size_t>(256, N - i);
      auto [clean, grad] = surrogate_view(nn::batch_slice(inputs, i, n));
      std::copy(clean.data(), clean.data() + clean.size(), cached_clean.data() + i * C);
      std::copy(grad.data(), grad.data() + grad.size(), cached_grad.data() + i * L);
    }
  }

  nn::Adam<float> opt({cfg.learning_rate});
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  run.history.clear();
  run.gatn.training_log.clear();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    GatnEpoch rec;
    for (const auto& rows : nn::epoch_batches(N, cfg.batch_size, rng)) {
      const std::size_t B = rows.size();
      const auto xb = nn::gather_rows(inputs, rows);
      nn::Tensor<double> clean;
      nn::Tensor<float> x_tilde;
      if (cfg.cache_gradients) {
        clean = nn::gather_rows(cached_clean, rows);
        x_tilde = nn::gather_rows(cached_grad, rows);
      } else {
        std::tie(clean, x_tilde) = surrogate_view(xb);
      }

      auto grads = run.gatn.net.zero_gradients();
      nn::Tape<float> gen_tape;
      const auto stats = gatn_batch_backward(s, run.gatn, cfg, xb, clean, x_tilde, &gen_tape, &grads);
      if (!std::isfinite(stats.value))
        throw DivergenceError("generator training diverged at epoch " + std::to_string(epoch));
      rec.loss += stats.value * static_cast<double>(B);
      rec.input_loss += stats.input_loss * static_cast<double>(B);
      rec.output_loss += stats.output_loss * static_cast<double>(B);
      rec.surrogate_success += stats.surrogate_hits;
      opt.step(run.gatn.net, grads);
      run.gatn.net.commit(gen_tape);
    }
    const double n = static_cast<double>(N);
    rec.loss /= n;
    rec.input_loss /= n;
    rec.output_loss /= n;
    rec.surrogate_success /= n;
    run.history.push_back(rec);
    run.gatn.training_log.push_back({epoch, rec.loss, rec.surrogate_success});
  }
  return run;
}

}  // namespace tsadv
