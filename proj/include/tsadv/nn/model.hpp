#pragma once

// Sequential networks, trained-model container, reverse-mode backward pass,
// input gradients, Adam and a single optimization step.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "tsadv/error.hpp"
#include "tsadv/nn/layers.hpp"
#include "tsadv/nn/losses.hpp"
#include "tsadv/nn/tensor.hpp"

namespace tsadv::nn {

template <typename T>
using Gradients = std::vector<std::vector<Tensor<T>>>;  // [layer][param]

/// Per-layer caches of one forward pass, consumed by backward().
template <typename T>
struct Tape {
  std::vector<LayerCache<T>> caches;
};

enum class Mode { inference, training };

template <typename T>
class Sequential {
public:
  Sequential() = default;
  explicit Sequential(const std::vector<LayerSpec>& specs) {
    layers_.reserve(specs.size());
    for (const auto& s : specs) layers_.push_back(make_layer<T>(s));
  }

  std::size_t size() const noexcept { return layers_.size(); }
  const std::vector<Layer<T>>& layers() const noexcept { return layers_; }
  std::vector<Layer<T>>& layers() noexcept { return layers_; }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(std::visit([](const auto& x) { return x.spec; }, l));
    return out;
  }

  void initialize(std::mt19937_64& rng) {
    for (auto& l : layers_) std::visit([&](auto& x) { x.initialize(rng); }, l);
  }

  /// Output shape for an input shape, or ShapeError naming the failing layer.
  Shape output_shape(Shape s) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        s = std::visit([&](const auto& x) { return x.output_shape(s); }, layers_[i]);
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(i) + " (" + e.what() + ")");
      }
    }
    return s;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Tape<T>* tape = nullptr) const {
    output_shape(x.shape());
    if (tape) tape->caches.assign(layers_.size(), {});
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      LayerCache<T>* c = tape ? &tape->caches[i] : nullptr;
      h = std::visit([&](const auto& l) { return l.forward(h, mode == Mode::training, c); }, layers_[i]);
    }
    return h;
  }

  /// Reverse pass. Parameter gradients accumulate into `grads` when given;
  /// otherwise parameters are treated as constants.
  Tensor<T> backward(const Tape<T>& tape, Tensor<T> grad, Gradients<T>* grads = nullptr) const {
    if (tape.caches.size() != layers_.size()) throw Error("backward: tape does not belong to this network");
    for (std::size_t i = layers_.size(); i-- > 0;) {
      std::vector<Tensor<T>>* g = grads ? &(*grads)[i] : nullptr;
      grad = std::visit([&](const auto& l) { return l.backward(grad, tape.caches[i], g); }, layers_[i]);
    }
    return grad;
  }

  /// Folds training-mode batch statistics into running statistics.
  void commit(const Tape<T>& tape) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (auto* bn = std::get_if<BatchNorm<T>>(&layers_[i])) bn->commit(tape.caches[i]);
  }

  Gradients<T> zero_gradients() const {
    Gradients<T> g(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (const auto* p : std::visit([](const auto& x) { return x.params(); }, layers_[i]))
        g[i].emplace_back(p->shape());
    return g;
  }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_)
      for (auto* p : std::visit([](auto& x) { return x.params(); }, l)) out.push_back(p);
    return out;
  }
  std::vector<const Tensor<T>*> parameters() const {
    std::vector<const Tensor<T>*> out;
    for (const auto& l : layers_)
      for (const auto* p : std::visit([](const auto& x) { return x.params(); }, l)) out.push_back(p);
    return out;
  }
  /// Trainable parameters followed by non-trainable buffers, in layer order.
  std::vector<Tensor<T>*> state() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_) {
      for (auto* p : std::visit([](auto& x) { return x.params(); }, l)) out.push_back(p);
      for (auto* p : std::visit([](auto& x) { return x.buffers(); }, l)) out.push_back(p);
    }
    return out;
  }
  std::vector<const Tensor<T>*> state() const {
    std::vector<const Tensor<T>*> out;
    for (const auto& l : layers_) {
      for (const auto* p : std::visit([](const auto& x) { return x.params(); }, l)) out.push_back(p);
      for (const auto* p : std::visit([](const auto& x) { return x.buffers(); }, l)) out.push_back(p);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
  }

private:
  std::vector<Layer<T>> layers_;
};

enum class Architecture { fcn, lenet5, gatn, custom };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::fcn: return "fcn";
    case Architecture::lenet5: return "lenet5";
    case Architecture::gatn: return "gatn";
    case Architecture::custom: return "custom";
  }
  return "?";
}

inline Architecture architecture_from_string(const std::string& s) {
  for (auto a : {Architecture::fcn, Architecture::lenet5, Architecture::gatn, Architecture::custom})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown architecture '" + s + "'");
}

struct ArchitectureConfig {
  Architecture architecture = Architecture::custom;
  std::size_t input_length = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> gatn_hidden_units{128, 128};
  bool gatn_residual = false;

  bool operator==(const ArchitectureConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double metric = 0.0;  // accuracy / fidelity / adversary rate, per trainer

  bool operator==(const EpochRecord&) const = default;
};

template <typename T>
struct Model {
  ArchitectureConfig arch;
  Sequential<T> net;
  std::uint64_t rng_seed = 0;
  std::vector<EpochRecord> training_log;

  Shape input_shape(std::size_t batch) const {
    if (arch.architecture == Architecture::gatn) return {batch, 2, arch.input_length};
    return {batch, 1, arch.input_length};
  }

  template <typename U>
  Model<U> cast() const {
    Model<U> out;
    out.arch = arch;
    out.net = Sequential<U>(net.specs());
    out.rng_seed = rng_seed;
    out.training_log = training_log;
    auto src = net.state();
    auto dst = out.net.state();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }
};

/// Bitwise equality of every parameter and buffer.
template <typename T>
bool same_parameters(const Model<T>& a, const Model<T>& b) {
  const auto sa = a.net.state(), sb = b.net.state();
  if (sa.size() != sb.size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (!(*sa[i] == *sb[i])) return false;
  return true;
}

/// [B, 1, L] tensor from equal-length series.
template <typename T>
Tensor<T> to_input(const std::vector<std::vector<double>>& series) {
  if (series.empty()) throw ShapeError("to_input: no series");
  const std::size_t L = series.front().size();
  Tensor<T> x({series.size(), 1, L});
  for (std::size_t b = 0; b < series.size(); ++b) {
    if (series[b].size() != L) throw ShapeError("to_input: unequal series lengths");
    for (std::size_t l = 0; l < L; ++l) x[b * L + l] = static_cast<T>(series[b][l]);
  }
  return x;
}

template <typename T>
struct ForwardResult {
  Tensor<T> logits;            // [B, C]
  Tensor<double> probabilities;  // [B, C], softmax(logits / T)
};

/// Inference-mode forward pass followed by a temperature softmax.
template <typename T>
ForwardResult<T> forward(const Model<T>& model, const Tensor<T>& x, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw ConfigError("forward: temperature must be > 0");
  ForwardResult<T> r;
  r.logits = model.net.forward(x, Mode::inference);
  r.probabilities = softmax_rows(r.logits, temperature);
  return r;
}

template <typename T>
std::vector<int> predict_labels(const Model<T>& model, const Tensor<T>& x) {
  const auto logits = model.net.forward(x, Mode::inference);
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) out[b] = argmax(std::span<const T>(logits.data() + b * C, C));
  return out;
}

/// Gradient of the target-class softmax probability w.r.t. the input,
/// per sample: d softmax(f(x))_t / dx. Parameters are held constant.
template <typename T>
Tensor<T> input_gradient(const Model<T>& model, const Tensor<T>& x, int target_class) {
  Tape<T> tape;
  const auto logits = model.net.forward(x, Mode::inference, &tape);
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= C)
    throw Error("input_gradient: target class " + std::to_string(target_class) + " out of range for " +
                std::to_string(C) + " classes");
  const auto probs = softmax_rows(logits, 1.0);
  Tensor<T> dlogits({B, C});
  for (std::size_t b = 0; b < B; ++b) {
    const std::span<const double> q(probs.data() + b * C, C);
    const double pt = q[static_cast<std::size_t>(target_class)];
    for (std::size_t c = 0; c < C; ++c)
      dlogits[b * C + c] = static_cast<T>(pt * ((static_cast<int>(c) == target_class ? 1.0 : 0.0) - q[c]));
  }
  return model.net.backward(tape, std::move(dlogits));
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

template <typename T>
class Adam {
public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return t_; }

  void step(Sequential<T>& net, const Gradients<T>& grads) {
    if (!(cfg_.learning_rate >= 0.0)) throw ConfigError("Adam: learning rate must be >= 0");
    if (m_.empty()) {
      m_ = net.zero_gradients();
      v_ = net.zero_gradients();
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& layers = net.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto params = std::visit([](auto& x) { return x.params(); }, layers[i]);
      for (std::size_t j = 0; j < params.size(); ++j) {
        auto& p = *params[j];
        const auto& g = grads[i][j];
        auto& m = m_[i][j];
        auto& v = v_[i][j];
        for (std::size_t k = 0; k < p.size(); ++k) {
          const double gk = static_cast<double>(g[k]);
          const double mk = cfg_.beta1 * static_cast<double>(m[k]) + (1.0 - cfg_.beta1) * gk;
          const double vk = cfg_.beta2 * static_cast<double>(v[k]) + (1.0 - cfg_.beta2) * gk * gk;
          m[k] = static_cast<T>(mk);
          v[k] = static_cast<T>(vk);
          if (cfg_.learning_rate == 0.0) continue;
          const double update = cfg_.learning_rate * (mk / bc1) / (std::sqrt(vk / bc2) + cfg_.epsilon);
          p[k] = static_cast<T>(static_cast<double>(p[k]) - update);
        }
      }
    }
  }

private:
  AdamConfig cfg_;
  Gradients<T> m_, v_;
  std::uint64_t t_ = 0;
};

template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad_output;  // dLoss/dOutput, same shape as the network output
};

/// One optimizer update on a batch: training-mode forward, loss, backward,
/// Adam step, then running-statistics update. Returns the batch loss.
template <typename T, typename LossFn>
double train_step(Model<T>& model, const Tensor<T>& batch, LossFn&& loss_fn, Adam<T>& optimizer) {
  Tape<T> tape;
  const auto out = model.net.forward(batch, Mode::training, &tape);
  LossResult<T> loss = loss_fn(out);
  if (!std::isfinite(loss.value))
    throw DivergenceError("non-finite loss (" + std::to_string(loss.value) + ") after " +
                          std::to_string(optimizer.steps()) + " optimizer steps on a batch of " +
                          std::to_string(batch.dim(0)));
  if (loss.grad_output.shape() != out.shape()) throw ShapeError("train_step: loss gradient shape mismatch");
  auto grads = model.net.zero_gradients();
  model.net.backward(tape, std::move(loss.grad_output), &grads);
  optimizer.step(model.net, grads);
  model.net.commit(tape);
  return loss.value;
}

/// Mean cross entropy of softmax(logits) against one-hot labels.
template <typename T>
LossResult<T> softmax_cross_entropy_loss(const Tensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) throw ShapeError("cross entropy: label count does not match batch");
  const auto probs = softmax_rows(logits, 1.0);
  LossResult<T> r{0.0, Tensor<T>(logits.shape())};
  for (std::size_t b = 0; b < B; ++b) {
    const std::span<const double> q(probs.data() + b * C, C);
    const auto y = one_hot(labels[b], C);
    r.value += cross_entropy(y, q);
    const auto g = softmax_cross_entropy_grad(y, q, 1.0);
    for (std::size_t c = 0; c < C; ++c) r.grad_output[b * C + c] = static_cast<T>(g[c] / static_cast<double>(B));
  }
  r.value /= static_cast<double>(B);
  return r;
}

/// Mini-batch index order for one epoch; batch size capped at the dataset size.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng,
                                                           bool shuffle = true) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (shuffle) std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t bs = std::max<std::size_t>(1, std::min(batch_size, n));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += bs)
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + bs)));
  return out;
}

/// Gathers rows of a [N, ...] tensor.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& src, const std::vector<std::size_t>& rows) {
  Shape s = src.shape();
  const std::size_t per = src.size() / s[0];
  s[0] = rows.size();
  Tensor<T> out(s);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(src.data() + rows[i] * per, src.data() + (rows[i] + 1) * per, out.data() + i * per);
  return out;
}

}  // namespace tsadv::nn
