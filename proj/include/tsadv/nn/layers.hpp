#pragma once

// Layer kinds used by the three fixed architectures. Every layer exposes a
// pure forward pass that records what backward() needs into a LayerCache,
// and a backward pass that maps the output gradient to the input gradient
// while accumulating parameter gradients when asked to.

// Small products would otherwise take a coefficient-based path whose
// rounding depends on pointer alignment.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "tsadv/error.hpp"
#include "tsadv/nn/tensor.hpp"

namespace tsadv::nn {

enum class LayerKind { conv1d, batchnorm, relu, maxpool1d, globalavgpool1d, dense, flatten, concat };
enum class Padding { same, valid };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool1d: return "maxpool1d";
    case LayerKind::globalavgpool1d: return "globalavgpool1d";
    case LayerKind::dense: return "dense";
    case LayerKind::flatten: return "flatten";
    case LayerKind::concat: return "concat";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  for (auto k : {LayerKind::conv1d, LayerKind::batchnorm, LayerKind::relu, LayerKind::maxpool1d,
                 LayerKind::globalavgpool1d, LayerKind::dense, LayerKind::flatten, LayerKind::concat})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown layer kind '" + s + "'");
}

inline std::string to_string(Padding p) { return p == Padding::same ? "same" : "valid"; }
inline Padding padding_from_string(const std::string& s) {
  if (s == "same") return Padding::same;
  if (s == "valid") return Padding::valid;
  throw ConfigError("unknown padding mode '" + s + "'");
}

/// Hyperparameters of one layer. `in` is input channels (conv1d, batchnorm)
/// or input features (dense) or the number of concatenated parts (concat);
/// `out` is the filter count (conv1d) or unit count (dense).
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pool = 0;
  Padding padding = Padding::valid;

  void validate() const {
    auto fail = [&](const std::string& m) { throw ConfigError(to_string(kind) + ": " + m); };
    switch (kind) {
      case LayerKind::conv1d:
        if (in < 1 || out < 1) fail("channel counts must be >= 1");
        if (kernel < 1) fail("kernel must be >= 1");
        if (stride < 1) fail("stride must be >= 1");
        break;
      case LayerKind::batchnorm:
        if (in < 1) fail("channels must be >= 1");
        break;
      case LayerKind::maxpool1d:
        if (pool < 1 || stride < 1) fail("pool size and stride must be >= 1");
        break;
      case LayerKind::dense:
        if (in < 1 || out < 1) fail("units must be >= 1");
        break;
      case LayerKind::concat:
        if (in < 1) fail("part count must be >= 1");
        break;
      default: break;
    }
  }

  bool operator==(const LayerSpec&) const = default;
};

inline LayerSpec conv1d_spec(std::size_t in, std::size_t filters, std::size_t kernel, Padding p, std::size_t stride = 1) {
  return {LayerKind::conv1d, in, filters, kernel, stride, 0, p};
}
inline LayerSpec batchnorm_spec(std::size_t channels) { return {LayerKind::batchnorm, channels}; }
inline LayerSpec relu_spec() { return {LayerKind::relu}; }
inline LayerSpec maxpool_spec(std::size_t pool, std::size_t stride) { return {LayerKind::maxpool1d, 0, 0, 0, stride, pool}; }
inline LayerSpec gap_spec() { return {LayerKind::globalavgpool1d}; }
inline LayerSpec dense_spec(std::size_t in, std::size_t units) { return {LayerKind::dense, in, units}; }
inline LayerSpec flatten_spec() { return {LayerKind::flatten}; }
inline LayerSpec concat_spec(std::size_t parts) { return {LayerKind::concat, parts}; }

/// Scratch state recorded by a forward pass for the matching backward pass.
template <typename T>
struct LayerCache {
  Shape input_shape;
  Tensor<T> saved;                 // layer-specific: im2col buffer, normalized input, ...
  std::vector<std::size_t> index;  // argmax positions for max pooling
  std::vector<T> stats;            // batchnorm: inv_std, batch mean, batch variance
  bool training = false;
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

inline void expect_rank(const Shape& s, std::size_t rank, const char* layer) {
  if (s.size() != rank)
    throw ShapeError(std::string(layer) + ": expected rank-" + std::to_string(rank) + " input, got " + shape_str(s));
}

/// He-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)). Sampled in double so
/// float and double models built from one seed agree.
template <typename T>
void he_uniform(Tensor<T>& w, std::size_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : w.storage()) v = static_cast<T>(dist(rng));
}

}  // namespace detail

template <typename T>
struct Conv1d {
  LayerSpec spec;
  Tensor<T> weight;  // [out, in, kernel]
  Tensor<T> bias;    // [out]

  explicit Conv1d(const LayerSpec& s) : spec(s), weight({s.out, s.in, s.kernel}), bias({s.out}) {}

  void initialize(std::mt19937_64& rng) {
    detail::he_uniform(weight, spec.in * spec.kernel, rng);
    bias.fill(T{0});
  }

  std::size_t out_length(std::size_t len) const {
    if (spec.padding == Padding::same) return (len + spec.stride - 1) / spec.stride;
    if (len < spec.kernel) return 0;
    return (len - spec.kernel) / spec.stride + 1;
  }

  std::size_t pad_left(std::size_t len) const {
    if (spec.padding == Padding::valid) return 0;
    const std::size_t lout = out_length(len);
    const std::size_t needed = (lout - 1) * spec.stride + spec.kernel;
    const std::size_t total = needed > len ? needed - len : 0;
    return total / 2;  // extra element goes on the right
  }

  Shape output_shape(const Shape& in) const {
    detail::expect_rank(in, 3, "conv1d");
    if (in[1] != spec.in)
      throw ShapeError("conv1d: expected " + std::to_string(spec.in) + " input channels, got " + std::to_string(in[1]));
    const std::size_t lout = out_length(in[2]);
    if (lout == 0) throw ShapeError("conv1d: input length " + std::to_string(in[2]) + " yields an empty output");
    return {in[0], spec.out, lout};
  }

  Tensor<T> forward(const Tensor<T>& x, bool, LayerCache<T>* cache) const {
    const Shape os = output_shape(x.shape());
    const std::size_t B = x.dim(0), L = x.dim(2), Lout = os[2], K = spec.kernel, Cin = spec.in;
    const std::size_t rows = Cin * K;
    const std::size_t pad = pad_left(L);

    Tensor<T> cols({B, rows, Lout});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* src = x.data() + (b * Cin + ci) * L;
        for (std::size_t k = 0; k < K; ++k) {
          T* dst = cols.data() + (b * rows + ci * K + k) * Lout;
          for (std::size_t l = 0; l < Lout; ++l) {
            const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(l * spec.stride + k) - static_cast<std::ptrdiff_t>(pad);
            dst[l] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L)) ? src[pos] : T{0};
          }
        }
      }

    Tensor<T> y(os);
    detail::CMatMap<T> W(weight.data(), spec.out, rows);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.data(), spec.out);
    for (std::size_t b = 0; b < B; ++b) {
      detail::CMatMap<T> col(cols.data() + b * rows * Lout, rows, Lout);
      detail::MatMap<T> out(y.data() + b * spec.out * Lout, spec.out, Lout);
      out.noalias() = W * col;
      out.colwise() += bvec;
    }
    if (cache) {
      cache->input_shape = x.shape();
      cache->saved = std::move(cols);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, const LayerCache<T>& cache, std::vector<Tensor<T>>* grads) const {
    const std::size_t B = cache.input_shape[0], L = cache.input_shape[2];
    const std::size_t Lout = g.dim(2), K = spec.kernel, Cin = spec.in, rows = Cin * K;
    const std::size_t pad = pad_left(L);
    detail::CMatMap<T> W(weight.data(), spec.out, rows);

    if (grads) {
      detail::MatMap<T> dW((*grads)[0].data(), spec.out, rows);
      T* db = (*grads)[1].data();
      for (std::size_t b = 0; b < B; ++b) {
        detail::CMatMap<T> gb(g.data() + b * spec.out * Lout, spec.out, Lout);
        detail::CMatMap<T> col(cache.saved.data() + b * rows * Lout, rows, Lout);
        dW.noalias() += gb * col.transpose();
        for (std::size_t co = 0; co < spec.out; ++co) {
          const T* row = g.data() + (b * spec.out + co) * Lout;
          T acc{0};
          for (std::size_t l = 0; l < Lout; ++l) acc += row[l];
          db[co] += acc;
        }
      }
    }

    Tensor<T> dx(cache.input_shape);
    detail::RowMat<T> dcol(rows, Lout);
    for (std::size_t b = 0; b < B; ++b) {
      detail::CMatMap<T> gb(g.data() + b * spec.out * Lout, spec.out, Lout);
      dcol.noalias() = W.transpose() * gb;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        T* dst = dx.data() + (b * Cin + ci) * L;
        for (std::size_t k = 0; k < K; ++k) {
          const T* src = dcol.data() + (ci * K + k) * Lout;
          for (std::size_t l = 0; l < Lout; ++l) {
            const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(l * spec.stride + k) - static_cast<std::ptrdiff_t>(pad);
            if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L)) dst[pos] += src[l];
          }
        }
      }
    }
    return dx;
  }

  std::vector<Tensor<T>*> params() { return {&weight, &bias}; }
  std::vector<const Tensor<T>*> params() const { return {&weight, &bias}; }
  std::vector<Tensor<T>*> buffers() { return {}; }
  std::vector<const Tensor<T>*> buffers() const { return {}; }
};

/// Batch normalization over the batch (and length) axes of [B, C, L] or [B, C].
/// Training mode normalizes with batch statistics; inference mode with the
/// running statistics, updated as running = momentum * running + (1 - momentum) * batch.
template <typename T>
struct BatchNorm {
  LayerSpec spec;
  Tensor<T> gamma, beta;                 // [C]
  Tensor<T> running_mean, running_var;   // [C]
  double momentum = 0.9;
  double eps = 1e-5;

  explicit BatchNorm(const LayerSpec& s)
      : spec(s), gamma({s.in}, T{1}), beta({s.in}, T{0}), running_mean({s.in}, T{0}), running_var({s.in}, T{1}) {}

  void initialize(std::mt19937_64&) {
    gamma.fill(T{1});
    beta.fill(T{0});
    running_mean.fill(T{0});
    running_var.fill(T{1});
  }

  Shape output_shape(const Shape& in) const {
    if (in.size() != 2 && in.size() != 3)
      throw ShapeError("batchnorm: expected rank-2 or rank-3 input, got " + shape_str(in));
    if (in[1] != spec.in)
      throw ShapeError("batchnorm: expected " + std::to_string(spec.in) + " channels, got " + std::to_string(in[1]));
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, bool training, LayerCache<T>* cache) const {
    output_shape(x.shape());
    const std::size_t B = x.dim(0), C = spec.in, L = x.rank() == 3 ? x.dim(2) : 1;
    const double n = static_cast<double>(B * L);
    Tensor<T> y(x.shape());
    Tensor<T> xhat(x.shape());
    std::vector<T> stats(3 * C);  // inv_std | mean | var

    for (std::size_t c = 0; c < C; ++c) {
      double mean, var;
      if (training) {
        double s = 0.0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t l = 0; l < L; ++l) s += static_cast<double>(x[(b * C + c) * L + l]);
        mean = s / n;
        double v = 0.0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t l = 0; l < L; ++l) {
            const double d = static_cast<double>(x[(b * C + c) * L + l]) - mean;
            v += d * d;
          }
        var = v / n;
      } else {
        mean = static_cast<double>(running_mean[c]);
        var = static_cast<double>(running_var[c]);
      }
      const double inv_std = 1.0 / std::sqrt(var + eps);
      stats[c] = static_cast<T>(inv_std);
      stats[C + c] = static_cast<T>(mean);
      stats[2 * C + c] = static_cast<T>(var);
      const T g = gamma[c], bt = beta[c];
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t i = (b * C + c) * L + l;
          const T xh = static_cast<T>((static_cast<double>(x[i]) - mean) * inv_std);
          xhat[i] = xh;
          y[i] = g * xh + bt;
        }
    }
    if (cache) {
      cache->input_shape = x.shape();
      cache->saved = std::move(xhat);
      cache->stats = std::move(stats);
      cache->training = training;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, const LayerCache<T>& cache, std::vector<Tensor<T>>* grads) const {
    const auto& shape = cache.input_shape;
    const std::size_t B = shape[0], C = spec.in, L = shape.size() == 3 ? shape[2] : 1;
    const double n = static_cast<double>(B * L);
    const auto& xhat = cache.saved;
    Tensor<T> dx(shape);
    for (std::size_t c = 0; c < C; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t i = (b * C + c) * L + l;
          sum_g += static_cast<double>(g[i]);
          sum_gx += static_cast<double>(g[i]) * static_cast<double>(xhat[i]);
        }
      if (grads) {
        (*grads)[0][c] += static_cast<T>(sum_gx);
        (*grads)[1][c] += static_cast<T>(sum_g);
      }
      const double gm = static_cast<double>(gamma[c]);
      const double inv_std = static_cast<double>(cache.stats[c]);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t i = (b * C + c) * L + l;
          if (cache.training) {
            // d/dx of gamma * (x - mean(x)) / std(x) + beta
            dx[i] = static_cast<T>(gm * inv_std / n *
                                   (n * static_cast<double>(g[i]) - sum_g - static_cast<double>(xhat[i]) * sum_gx));
          } else {
            dx[i] = static_cast<T>(gm * inv_std * static_cast<double>(g[i]));
          }
        }
    }
    return dx;
  }

  /// Folds the batch statistics of a training-mode pass into the running statistics.
  void commit(const LayerCache<T>& cache) {
    if (!cache.training) return;
    const std::size_t C = spec.in;
    for (std::size_t c = 0; c < C; ++c) {
      running_mean[c] = static_cast<T>(momentum * static_cast<double>(running_mean[c]) +
                                       (1.0 - momentum) * static_cast<double>(cache.stats[C + c]));
      running_var[c] = static_cast<T>(momentum * static_cast<double>(running_var[c]) +
                                      (1.0 - momentum) * static_cast<double>(cache.stats[2 * C + c]));
    }
  }

  std::vector<Tensor<T>*> params() { return {&gamma, &beta}; }
  std::vector<const Tensor<T>*> params() const { return {&gamma, &beta}; }
  std::vector<Tensor<T>*> buffers() { return {&running_mean, &running_var}; }
  std::vector<const Tensor<T>*> buffers() const { return {&running_mean, &running_var}; }
};

/// Parameter-free layers share this boilerplate.
template <typename T>
struct Stateless {
  LayerSpec spec;
  void initialize(std::mt19937_64&) {}
  std::vector<Tensor<T>*> params() { return {}; }
  std::vector<const Tensor<T>*> params() const { return {}; }
  std::vector<Tensor<T>*> buffers() { return {}; }
  std::vector<const Tensor<T>*> buffers() const { return {}; }
};

template <typename T>
struct ReLU : Stateless<T> {
  explicit ReLU(const LayerSpec& s) : Stateless<T>{s} {}

  Shape output_shape(const Shape& in) const { return in; }

  Tensor<T> forward(const Tensor<T>& x, bool, LayerCache<T>* cache) const {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
    if (cache) {
      cache->input_shape = x.shape();
      cache->saved = x;
    }
    return y;
  }

  // Gradient at exactly 0 is 0.
  Tensor<T> backward(const Tensor<T>& g, const LayerCache<T>& cache, std::vector<Tensor<T>>*) const {
    Tensor<T> dx(cache.input_shape);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = cache.saved[i] > T{0} ? g[i] : T{0};
    return dx;
  }
};

template <typename T>
struct MaxPool1d : Stateless<T> {
  explicit MaxPool1d(const LayerSpec& s) : Stateless<T>{s} {}

  Shape output_shape(const Shape& in) const {
    detail::expect_rank(in, 3, "maxpool1d");
    const auto& s = this->spec;
    const std::size_t lout = in[2] < s.pool ? 0 : (in[2] - s.pool) / s.stride + 1;
    if (lout == 0) throw ShapeError("maxpool1d: input length " + std::to_string(in[2]) + " yields an empty output");
    return {in[0], in[1], lout};
  }

  Tensor<T> forward(const Tensor<T>& x, bool, LayerCache<T>* cache) const {
    const Shape os = output_shape(x.shape());
    const std::size_t rows = x.dim(0) * x.dim(1), L = x.dim(2), Lout = os[2];
    Tensor<T> y(os);
    std::vector<std::size_t> idx(y.size());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < Lout; ++o) {
        std::size_t best = r * L + o * this->spec.stride;
        for (std::size_t k = 1; k < this->spec.pool; ++k) {
          const std::size_t i = r * L + o * this->spec.stride + k;
          if (x[i] > x[best]) best = i;
        }
        y[r * Lout + o] = x[best];
        idx[r * Lout + o] = best;
      }
    if (cache) {
      cache->input_shape = x.shape();
      cache->index = std::move(idx);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, const LayerCache<T>& cache, std::vector<Tensor<T>>*) const {
    Tensor<T> dx(cache.input_shape);
    for (std::size_t i = 0; i < g.size(); ++i) dx[cache.index[i]] += g[i];
    return dx;
  }
};

template <typename T>
struct GlobalAvgPool1d : Stateless<T> {
  explicit GlobalAvgPool1d(const LayerSpec& s) : Stateless<T>{s} {}

  Shape output_shape(const Shape& in) const {
    detail::expect_rank(in, 3, "globalavgpool1d");
    return {in[0], in[1]};
  }

  Tensor<T> forward(const Tensor<T>& x, bool, LayerCache<T>* cache) const {
    const Shape os = output_shape(x.shape());
    const std::size_t rows = os[0] * os[1], L = x.dim(2);
    Tensor<T> y(os);
    for (std::size_t r = 0; r < rows; ++r) {
      T s{0};
      for (std::size_t l = 0; l < L; ++l) s += x[r * L + l];
      y[r] = s / static_cast<T>(L);
    }
    if (cache) cache->input_shape = x.shape();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, const LayerCache<T>& cache, std::vector<Tensor<T>>*) const {
    Tensor<T> dx(cache.input_shape);
    const std::size_t L = cache.input_shape[2];
    for (std::size_t r = 0; r < g.size(); ++r)
      for (std::size_t l = 0; l < L; ++l) dx[r * L + l] = g[r] / static_cast<T>(L);
    return dx;
  }
};

/// y = x W^T + b on [B, in].
template <typename T>
struct Dense {
  LayerSpec spec;
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  explicit Dense(const LayerSpec& s) : spec(s), weight({s.out, s.in}), bias({s.out}) {}

  void initialize(std::mt19937_64& rng) {
    detail::he_uniform(weight, spec.in, rng);
    bias.fill(T{0});
  }

  Shape output_shape(const Shape& in) const {
    detail::expect_rank(in, 2, "dense");
    if (in[1] != spec.in)
      throw ShapeError("dense: expected " + std::to_string(spec.in) + " input features, got " + std::to_string(in[1]));
    return {in[0], spec.out};
  }

  Tensor<T> forward(const Tensor<T>& x, bool, LayerCache<T>* cache) const {
    const Shape os = output_shape(x.shape());
    Tensor<T> y(os);
    detail::CMatMap<T> W(weight.data(), spec.out, spec.in);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.data(), spec.out);
    // One matrix-vector product per sample keeps each row's result
    // independent of how samples are grouped into batches.
    for (std::size_t b = 0; b < os[0]; ++b) {
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xb(x.data() + b * spec.in, spec.in);
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> yb(y.data() + b * spec.out, spec.out);
      yb.noalias() = W * xb;
      yb += bvec;
    }
    if (cache) {
      cache->input_shape = x.shape();
      cache->saved = x;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, const LayerCache<T>& cache, std::vector<Tensor<T>>* grads) const {
    const std::size_t B = cache.input_shape[0];
    detail::CMatMap<T> G(g.data(), B, spec.out);
    detail::CMatMap<T> W(weight.data(), spec.out, spec.in);
    if (grads) {
      detail::CMatMap<T> X(cache.saved.data(), B, spec.in);
      detail::MatMap<T> dW((*grads)[0].data(), spec.out, spec.in);
      dW.noalias() += G.transpose() * X;
      T* db = (*grads)[1].data();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < spec.out; ++o) db[o] += g[b * spec.out + o];
    }
    Tensor<T> dx(cache.input_shape);
    for (std::size_t b = 0; b < B; ++b) {
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(g.data() + b * spec.out, spec.out);
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(dx.data() + b * spec.in, spec.in);
      db.noalias() = W.transpose() * gb;
    }
    return dx;
  }

  std::vector<Tensor<T>*> params() { return {&weight, &bias}; }
  std::vector<const Tensor<T>*> params() const { return {&weight, &bias}; }
  std::vector<Tensor<T>*> buffers() { return {}; }
  std::vector<const Tensor<T>*> buffers() const { return {}; }
};

/// [B, C, L] -> [B, C * L].
template <typename T>
struct Flatten : Stateless<T> {
  explicit Flatten(const LayerSpec& s) : Stateless<T>{s} {}

  Shape output_shape(const Shape& in) const {
    detail::expect_rank(in, 3, "flatten");
    return {in[0], in[1] * in[2]};
  }
  Tensor<T> forward(const Tensor<T>& x, bool, LayerCache<T>* cache) const {
    if (cache) cache->input_shape = x.shape();
    return x.reshaped(output_shape(x.shape()));
  }
  Tensor<T> backward(const Tensor<T>& g, const LayerCache<T>& cache, std::vector<Tensor<T>>*) const {
    return g.reshaped(cache.input_shape);
  }
};

/// Joins the `spec.in` parts stacked along axis 1 of a [B, parts, L] input
/// end to end: [x_1 | x_2 | ...] of shape [B, parts * L].
template <typename T>
struct Concat : Stateless<T> {
  explicit Concat(const LayerSpec& s) : Stateless<T>{s} {}

  Shape output_shape(const Shape& in) const {
    detail::expect_rank(in, 3, "concat");
    if (in[1] != this->spec.in)
      throw ShapeError("concat: expected " + std::to_string(this->spec.in) + " parts, got " + std::to_string(in[1]));
    return {in[0], in[1] * in[2]};
  }
  Tensor<T> forward(const Tensor<T>& x, bool, LayerCache<T>* cache) const {
    if (cache) cache->input_shape = x.shape();
    return x.reshaped(output_shape(x.shape()));
  }
  Tensor<T> backward(const Tensor<T>& g, const LayerCache<T>& cache, std::vector<Tensor<T>>*) const {
    return g.reshaped(cache.input_shape);
  }
};

template <typename T>
using Layer = std::variant<Conv1d<T>, BatchNorm<T>, ReLU<T>, MaxPool1d<T>, GlobalAvgPool1d<T>, Dense<T>, Flatten<T>, Concat<T>>;

template <typename T>
Layer<T> make_layer(const LayerSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case LayerKind::conv1d: return Conv1d<T>(spec);
    case LayerKind::batchnorm: return BatchNorm<T>(spec);
    case LayerKind::relu: return ReLU<T>(spec);
    case LayerKind::maxpool1d: return MaxPool1d<T>(spec);
    case LayerKind::globalavgpool1d: return GlobalAvgPool1d<T>(spec);
    case LayerKind::dense: return Dense<T>(spec);
    case LayerKind::flatten: return Flatten<T>(spec);
    case LayerKind::concat: return Concat<T>(spec);
  }
  throw ConfigError("unhandled layer kind");
}

}  // namespace tsadv::nn
