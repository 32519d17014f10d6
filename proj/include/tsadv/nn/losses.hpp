#pragma once

// Temperature softmax, cross entropy and mean squared error with their
// derivatives. Probabilities are always carried in double precision.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tsadv/error.hpp"
#include "tsadv/nn/tensor.hpp"

namespace tsadv::nn {

inline constexpr double kProbFloor = 1e-12;

/// q_i = exp(z_i / T) / sum_j exp(z_j / T), max-subtracted.
inline std::vector<double> softmax(std::span<const double> z, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw Error("softmax: temperature must be > 0");
  std::vector<double> q(z.size());
  if (z.empty()) return q;
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    q[i] = std::exp((z[i] - mx) / temperature);
    sum += q[i];
  }
  for (double& v : q) v /= sum;
  return q;
}

/// Row-wise softmax of [B, C] logits.
template <typename T>
Tensor<double> softmax_rows(const Tensor<T>& logits, double temperature = 1.0) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows: expected [batch, classes], got " + shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  Tensor<double> out({B, C});
  std::vector<double> row(C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) row[c] = static_cast<double>(logits.at(b, c));
    const auto q = softmax(row, temperature);
    std::copy(q.begin(), q.end(), out.data() + b * C);
  }
  return out;
}

/// Pulls dL/dq back through q = softmax(z / T): dz_i = q_i (dq_i - <q, dq>) / T.
inline std::vector<double> softmax_backward(std::span<const double> q, std::span<const double> dq, double temperature = 1.0) {
  double dot = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * dq[i];
  std::vector<double> dz(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) dz[i] = q[i] * (dq[i] - dot) / temperature;
  return dz;
}

/// -sum p log q, natural log, q clamped at 1e-12.
inline double cross_entropy(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("cross_entropy: distribution sizes differ");
  double h = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] != 0.0) h -= p[i] * std::log(std::max(q[i], kProbFloor));
  return h;
}

/// dH/dq; zero where q sits on the clamp.
inline std::vector<double> cross_entropy_grad_q(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("cross_entropy: distribution sizes differ");
  std::vector<double> g(q.size(), 0.0);
  for (std::size_t i = 0; i < q.size(); ++i)
    if (q[i] > kProbFloor) g[i] = -p[i] / q[i];
  return g;
}

/// d/dz H(p, softmax(z / T)) for a target p summing to one: (softmax(z / T) - p) / T.
inline std::vector<double> softmax_cross_entropy_grad(std::span<const double> p, std::span<const double> q, double temperature) {
  std::vector<double> g(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) g[i] = (q[i] - p[i]) / temperature;
  return g;
}

/// Mean of squared element differences.
template <typename A, typename B>
double l2(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw ShapeError("l2: operand sizes differ");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

inline double l2(const std::vector<double>& a, const std::vector<double>& b) {
  return l2<double, double>(std::span<const double>(a), std::span<const double>(b));
}

template <typename T>
double l2(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("l2: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  return l2<T, T>(a.span(), b.span());
}

/// dl2/da = 2 (a - b) / n.
template <typename A, typename B>
std::vector<double> l2_grad(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw ShapeError("l2: operand sizes differ");
  std::vector<double> g(a.size());
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = 2.0 * (static_cast<double>(a[i]) - static_cast<double>(b[i])) / n;
  return g;
}

inline std::vector<double> one_hot(int label, std::size_t classes) {
  std::vector<double> v(classes, 0.0);
  v.at(static_cast<std::size_t>(label)) = 1.0;
  return v;
}

/// Index of the largest element, lowest index on ties.
template <typename R>
int argmax(const R& r) {
  return static_cast<int>(std::max_element(std::begin(r), std::end(r)) - std::begin(r));
}

}  // namespace tsadv::nn
