#pragma once

// Dynamic time warping with a full warping window, DTW distance matrices,
// 1-NN classification and the Soft-1NN probabilistic representation of a
// distance matrix.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <thread>
#include <vector>

#include "tsadv/error.hpp"
#include "tsadv/timeseries.hpp"

namespace tsadv {

/// Row-major [rows x cols] matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

struct DistanceMatrix {
  Matrix values;                // [N_test, N_train]
  std::vector<int> train_labels;  // length N_train

  std::size_t num_test() const noexcept { return values.rows; }
  std::size_t num_train() const noexcept { return values.cols; }

  void validate() const {
    detail::require<ShapeError>(values.cols == train_labels.size(),
                                "distance matrix has " + std::to_string(values.cols) + " columns but " +
                                    std::to_string(train_labels.size()) + " train labels");
    for (double d : values.data)
      detail::require(std::isfinite(d) && d >= 0.0, "distance matrix entries must be finite and non-negative");
  }
};

/// sqrt of the minimal cumulative squared difference over monotone,
/// contiguous warping paths from (1,1) to (n,m). Two rolling rows.
inline double dtw_distance(std::span<const double> q, std::span<const double> c) {
  if (q.empty() || c.empty()) throw Error("dtw_distance: empty series");
  // Iterate the longer series in the outer loop so rows are O(min(n, m)).
  if (c.size() > q.size()) std::swap(q, c);
  const std::size_t m = c.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m, inf), cur(m, inf);
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double d = (q[i] - c[j]) * (q[i] - c[j]);
      double best;
      if (i == 0 && j == 0) best = 0.0;
      else {
        best = inf;
        if (i > 0) best = std::min(best, prev[j]);
        if (j > 0) best = std::min(best, cur[j - 1]);
        if (i > 0 && j > 0) best = std::min(best, prev[j - 1]);
      }
      cur[j] = d + best;
    }
    std::swap(prev, cur);
  }
  return std::sqrt(prev[m - 1]);
}

inline double dtw_distance(const TimeSeries& q, const TimeSeries& c) {
  return dtw_distance(std::span<const double>(q.values()), std::span<const double>(c.values()));
}

/// Pairwise distances between raw series and a labeled reference set. Rows
/// are striped over `workers` threads; each cell is written exactly once.
inline DistanceMatrix dtw_distance_matrix(const std::vector<std::vector<double>>& eval_values,
                                          const std::vector<std::vector<double>>& ref_values,
                                          std::vector<int> ref_labels, unsigned workers = 1) {
  if (eval_values.empty() || ref_values.empty()) throw Error("dtw_distance_matrix: empty input set");
  detail::require<ShapeError>(ref_labels.size() == ref_values.size(), "dtw_distance_matrix: label count mismatch");
  DistanceMatrix dm;
  dm.values = Matrix(eval_values.size(), ref_values.size());
  dm.train_labels = std::move(ref_labels);

  auto fill_rows = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < eval_values.size(); i += stride)
      for (std::size_t j = 0; j < ref_values.size(); ++j)
        dm.values(i, j) = dtw_distance(eval_values[i], ref_values[j]);
  };

  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(eval_values.size())));
  if (workers == 1) {
    fill_rows(0, 1);
  } else {
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          fill_rows(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    pool.clear();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return dm;
}

inline DistanceMatrix dtw_distance_matrix(const Dataset& eval_set, const Dataset& ref_set, unsigned workers = 1) {
  return dtw_distance_matrix(eval_set.values(), ref_set.values(), ref_set.labels(), workers);
}

/// Label of the nearest reference column per row; ties go to the lowest column.
inline std::vector<int> nn1_classify(const DistanceMatrix& v) {
  detail::require<ShapeError>(v.values.cols == v.train_labels.size() && v.values.cols > 0,
                              "nn1_classify: malformed distance matrix");
  std::vector<int> out(v.num_test());
  for (std::size_t i = 0; i < v.num_test(); ++i) {
    const auto row = v.values.row(i);
    const auto best = std::min_element(row.begin(), row.end()) - row.begin();
    out[i] = v.train_labels[static_cast<std::size_t>(best)];
  }
  return out;
}

struct Soft1nnResult {
  Matrix probs;            // [N_test, C]
  std::vector<int> labels; // argmax per row, lowest index on ties
};

/// Soft-1NN: negate the distances, take the per-class maximum (i.e. the
/// nearest neighbour of each class), then a unit-temperature softmax per row.
inline Soft1nnResult soft_1nn(const DistanceMatrix& v, int num_classes = -1) {
  detail::require<ShapeError>(v.values.cols == v.train_labels.size() && v.values.cols > 0,
                              "soft_1nn: malformed distance matrix");
  int c_max = 0;
  for (int l : v.train_labels) {
    detail::require(l >= 0, "soft_1nn: negative train label");
    c_max = std::max(c_max, l + 1);
  }
  const int C = num_classes < 0 ? c_max : num_classes;
  detail::require(C >= c_max, "soft_1nn: train label exceeds num_classes");
  std::vector<bool> present(static_cast<std::size_t>(C), false);
  for (int l : v.train_labels) present[static_cast<std::size_t>(l)] = true;
  for (int c = 0; c < C; ++c)
    if (!present[static_cast<std::size_t>(c)])
      throw Error("soft_1nn: class " + std::to_string(c) + " does not appear in the train labels");

  Soft1nnResult res{Matrix(v.num_test(), static_cast<std::size_t>(C)), std::vector<int>(v.num_test())};
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.num_test(); ++i) {
    auto out = res.probs.row(i);
    std::fill(out.begin(), out.end(), neg_inf);
    const auto row = v.values.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      auto& slot = out[static_cast<std::size_t>(v.train_labels[j])];
      slot = std::max(slot, -row[j]);
    }
    const double mx = *std::max_element(out.begin(), out.end());
    double sum = 0.0;
    for (double& x : out) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (double& x : out) x /= sum;
    res.labels[i] = static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
  }
  return res;
}

/// CSV cache: first line holds the train labels, then one line per row.
inline void save_distance_matrix(const DistanceMatrix& dm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t j = 0; j < dm.train_labels.size(); ++j) out << (j ? "," : "") << dm.train_labels[j];
  out << '\n';
  for (std::size_t i = 0; i < dm.num_test(); ++i) {
    const auto row = dm.values.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
    out << '\n';
  }
}

inline DistanceMatrix load_distance_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  DistanceMatrix dm;
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> data;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(detail::trim(line), ',');
    if (lineno == 1) {
      for (auto f : fields) {
        const auto v = detail::parse_number(f);
        if (!v || !std::isfinite(*v)) throw ParseError(path + ": bad label", lineno);
        dm.train_labels.push_back(static_cast<int>(*v));
      }
      continue;
    }
    if (fields.size() != dm.train_labels.size()) throw ParseError(path + ": row width mismatch", lineno);
    for (auto f : fields) {
      const auto v = detail::parse_number(f);
      if (!v) throw ParseError(path + ": bad distance", lineno);
      data.push_back(*v);
    }
    ++rows;
  }
  dm.values.rows = rows;
  dm.values.cols = dm.train_labels.size();
  dm.values.data = std::move(data);
  dm.validate();
  return dm;
}

}  // namespace tsadv
