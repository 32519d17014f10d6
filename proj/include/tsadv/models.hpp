#pragma once

// The three fixed architectures (FCN teacher, 1-D LeNet-5 student, GATN
// generator) and supervised classifier training.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tsadv/error.hpp"
#include "tsadv/nn/model.hpp"
#include "tsadv/timeseries.hpp"

namespace tsadv {

using nn::Architecture;
using nn::ArchitectureConfig;
using nn::Model;
using nn::Padding;

namespace detail {

template <typename T>
Model<T> assemble(const ArchitectureConfig& cfg, const std::vector<nn::LayerSpec>& specs, std::uint64_t seed) {
  Model<T> m;
  m.arch = cfg;
  m.net = nn::Sequential<T>(specs);
  m.rng_seed = seed;
  std::mt19937_64 rng(seed);
  m.net.initialize(rng);
  m.net.output_shape(m.input_shape(1));  // validates the whole chain
  return m;
}

}  // namespace detail

/// Three [conv1d(same) -> batchnorm -> relu] blocks with 128/256/128
/// filters and kernels 8/5/3, global average pooling, dense(num_classes).
template <typename T = float>
Model<T> build_fcn(ArchitectureConfig cfg, std::uint64_t seed) {
  cfg.architecture = Architecture::fcn;
  if (cfg.num_classes < 2) throw ConfigError("fcn: num_classes must be >= 2");
  if (cfg.input_length < 1) throw ConfigError("fcn: input_length must be >= 1");
  using namespace nn;
  const std::vector<LayerSpec> specs{
      conv1d_spec(1, 128, 8, Padding::same),   batchnorm_spec(128), relu_spec(),
      conv1d_spec(128, 256, 5, Padding::same), batchnorm_spec(256), relu_spec(),
      conv1d_spec(256, 128, 3, Padding::same), batchnorm_spec(128), relu_spec(),
      gap_spec(),                              dense_spec(128, cfg.num_classes)};
  return tsadv::detail::assemble<T>(cfg, specs, seed);
}

/// Shortest input the 1-D LeNet-5 accepts: both valid convolutions and both
/// floor poolings must leave at least one step.
inline constexpr std::size_t kLenet5MinLength = 16;

/// conv(6, k5, valid) -> maxpool(2) -> conv(16, k5, valid) -> maxpool(2) ->
/// flatten -> dense(120, relu) -> dense(84, relu) -> dense(num_classes).
template <typename T = float>
Model<T> build_lenet5_1d(ArchitectureConfig cfg, std::uint64_t seed) {
  cfg.architecture = Architecture::lenet5;
  if (cfg.num_classes < 2) throw ConfigError("lenet5: num_classes must be >= 2");
  using namespace nn;
  auto conv_out = [](std::size_t l) { return l >= 5 ? l - 4 : 0; };
  const std::size_t c1 = conv_out(cfg.input_length);
  const std::size_t p1 = c1 / 2;
  const std::size_t c2 = conv_out(p1);
  const std::size_t p2 = c2 / 2;
  if (p2 == 0)
    throw ConfigError("lenet5: input length " + std::to_string(cfg.input_length) + " is too short (minimum " +
                      std::to_string(kLenet5MinLength) + ")");
  const std::vector<LayerSpec> specs{conv1d_spec(1, 6, 5, Padding::valid),  maxpool_spec(2, 2),
                                     conv1d_spec(6, 16, 5, Padding::valid), maxpool_spec(2, 2),
                                     flatten_spec(),                        dense_spec(16 * p2, 120),
                                     relu_spec(),                           dense_spec(120, 84),
                                     relu_spec(),                           dense_spec(84, cfg.num_classes)};
  return tsadv::detail::assemble<T>(cfg, specs, seed);
}

/// Generator g(x, x_tilde) -> x_hat: the two length-T inputs are stacked as
/// [B, 2, T], concatenated to 2T features, passed through relu dense hidden
/// layers and a linear dense(T) output.
template <typename T = float>
Model<T> build_gatn(ArchitectureConfig cfg, std::uint64_t seed) {
  cfg.architecture = Architecture::gatn;
  if (cfg.gatn_hidden_units.empty()) throw ConfigError("gatn: at least one hidden layer is required");
  if (cfg.input_length < 1) throw ConfigError("gatn: input_length must be >= 1");
  using namespace nn;
  std::vector<LayerSpec> specs{concat_spec(2)};
  std::size_t width = 2 * cfg.input_length;
  for (auto units : cfg.gatn_hidden_units) {
    if (units < 1) throw ConfigError("gatn: hidden units must be >= 1");
    specs.push_back(dense_spec(width, units));
    specs.push_back(relu_spec());
    width = units;
  }
  specs.push_back(dense_spec(width, cfg.input_length));
  return tsadv::detail::assemble<T>(cfg, specs, seed);
}

/// Dispatches on cfg.architecture.
template <typename T = float>
Model<T> build_model(const ArchitectureConfig& cfg, std::uint64_t seed) {
  switch (cfg.architecture) {
    case Architecture::fcn: return build_fcn<T>(cfg, seed);
    case Architecture::lenet5: return build_lenet5_1d<T>(cfg, seed);
    case Architecture::gatn: return build_gatn<T>(cfg, seed);
    case Architecture::custom: break;
  }
  throw ConfigError("build_model: no builder for architecture '" + to_string(cfg.architecture) + "'");
}

struct TrainHyper {
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::function<void(const nn::EpochRecord&)> on_epoch;  // progress hook
};

/// Minimizes cross entropy against one-hot labels with Adam. The training
/// log records mean batch loss and training accuracy per epoch.
template <typename T>
Model<T> train_classifier(Model<T> model, const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                          const TrainHyper& hyper) {
  if (x.size() != y.size() || x.empty()) throw ConfigError("train_classifier: need one label per series");
  for (int l : y)
    if (l < 0 || static_cast<std::size_t>(l) >= model.arch.num_classes)
      throw ConfigError("train_classifier: label " + std::to_string(l) + " out of range");
  const auto inputs = nn::to_input<T>(x);
  nn::Adam<T> opt({hyper.learning_rate});
  std::mt19937_64 rng(hyper.seed);
  model.training_log.clear();
  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& rows : nn::epoch_batches(x.size(), hyper.batch_size, rng)) {
      const auto batch = nn::gather_rows(inputs, rows);
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(y[r]);
      try {
        loss_sum += static_cast<double>(rows.size()) *
                    nn::train_step(model, batch, [&](const nn::Tensor<T>& logits) {
                      const std::size_t C = logits.dim(1);
                      for (std::size_t b = 0; b < rows.size(); ++b)
                        if (nn::argmax(std::span<const T>(logits.data() + b * C, C)) == labels[b]) ++correct;
                      return nn::softmax_cross_entropy_loss(logits, labels);
                    }, opt);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string("classifier training diverged at epoch ") + std::to_string(epoch) + ": " + e.what());
      }
    }
    nn::EpochRecord rec{epoch, loss_sum / static_cast<double>(x.size()),
                        static_cast<double>(correct) / static_cast<double>(x.size())};
    model.training_log.push_back(rec);
    if (hyper.on_epoch) hyper.on_epoch(rec);
  }
  return model;
}

template <typename T>
Model<T> train_classifier(Model<T> model, const Dataset& ds, const TrainHyper& hyper) {
  return train_classifier(std::move(model), ds.values(), ds.labels(), hyper);
}

/// Fraction of samples whose predicted label equals `labels`.
template <typename T>
double accuracy(const Model<T>& model, const std::vector<std::vector<double>>& x, const std::vector<int>& labels) {
  const auto pred = nn::predict_labels(model, nn::to_input<T>(x));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

}  // namespace tsadv
