#pragma once

// Univariate labeled time series, UCR-format ingestion, preprocessing and
// the class-balanced evaluation split.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tsadv/audit.hpp"
#include "tsadv/error.hpp"

namespace tsadv {

class TimeSeries {
public:
  TimeSeries() = default;
  TimeSeries(std::vector<double> values, std::optional<int> label, std::size_t source_id,
             std::optional<int> raw_label = std::nullopt)
      : values_(std::move(values)), label_(label), raw_label_(raw_label), source_id_(source_id) {}

  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  /// Remapped class id. Reads are counted by audit::Scope.
  std::optional<int> label() const noexcept {
    audit::note_label_read();
    return label_;
  }
  bool has_label() const noexcept { return label_.has_value(); }
  void set_label(std::optional<int> label) noexcept { label_ = label; }

  /// Label as it appeared in the source file.
  std::optional<int> raw_label() const noexcept { return raw_label_; }
  void set_raw_label(std::optional<int> raw) noexcept { raw_label_ = raw; }

  std::size_t source_id() const noexcept { return source_id_; }

private:
  std::vector<double> values_;
  std::optional<int> label_;
  std::optional<int> raw_label_;
  std::size_t source_id_ = 0;
};

struct Dataset {
  std::string name;
  std::vector<TimeSeries> series;
  int num_classes = 0;
  std::map<int, int> label_map;  // raw label -> contiguous index

  std::size_t size() const noexcept { return series.size(); }
  bool empty() const noexcept { return series.empty(); }

  /// Common length; throws if series lengths differ.
  std::size_t length() const {
    detail::require<ShapeError>(!series.empty(), "dataset '" + name + "' is empty");
    const auto n = series.front().size();
    for (const auto& s : series)
      detail::require<ShapeError>(s.size() == n, "dataset '" + name + "' has unequal series lengths");
    return n;
  }

  /// Copy with every label removed (the "unlabeled" regime).
  Dataset unlabeled() const {
    Dataset out = *this;
    for (auto& s : out.series) s.set_label(std::nullopt);
    return out;
  }

  /// Remapped labels in series order. Every series must be labeled.
  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(series.size());
    for (const auto& s : series) {
      const auto l = s.label();
      detail::require(l.has_value(), "dataset '" + name + "' contains an unlabeled series");
      out.push_back(*l);
    }
    return out;
  }

  std::vector<std::vector<double>> values() const {
    std::vector<std::vector<double>> out;
    out.reserve(series.size());
    for (const auto& s : series) out.push_back(s.values());
    return out;
  }
};

struct SplitPair {
  Dataset d_eval;
  Dataset d_test;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> out;
  if (delimiter == ' ') {
    // Whitespace-separated files may pad with runs of spaces.
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    }
    return out;
  }
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delimiter, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_number(std::string_view field) {
  field = trim(field);
  if (field.empty()) return std::numeric_limits<double>::quiet_NaN();  // empty field = missing
  std::string buf(field);
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size()) return std::nullopt;
  return v;
}

inline bool is_missing(double v) noexcept { return !std::isfinite(v); }

}  // namespace detail

/// Reads a UCR-style file: one series per row, class label in the first field.
/// Missing-value markers (NaN, empty fields) are kept for preprocess().
inline Dataset load_ucr(const std::string& path, char delimiter = '\t') {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");

  Dataset ds;
  {
    auto slash = path.find_last_of("/\\");
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    auto dot = base.find_last_of('.');
    ds.name = dot == std::string::npos ? base : base.substr(0, dot);
  }

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    const auto fields = detail::split_fields(trimmed, delimiter);
    if (fields.size() < 2) throw ParseError(path + ": expected a label and at least one value", lineno);

    const auto label = detail::parse_number(fields[0]);
    if (!label || !std::isfinite(*label) || *label != std::round(*label))
      throw ParseError(path + ": class label '" + std::string(fields[0]) + "' is not an integer", lineno);

    std::vector<double> values;
    values.reserve(fields.size() - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const auto v = detail::parse_number(fields[i]);
      if (!v) throw ParseError(path + ": field " + std::to_string(i + 1) + " ('" + std::string(fields[i]) + "') is not a number", lineno);
      values.push_back(*v);
    }
    const int raw = static_cast<int>(*label);
    ds.series.emplace_back(std::move(values), std::nullopt, ds.series.size(), raw);
  }
  if (ds.series.empty()) throw ParseError(path + ": file contains no series");
  return ds;
}

/// Writes series in the load_ucr format with raw labels. Values round-trip exactly.
inline void write_ucr(const Dataset& ds, const std::string& path, char delimiter = '\t') {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& s : ds.series) {
    const auto raw = s.raw_label();
    detail::require(raw.has_value(), "write_ucr: series " + std::to_string(s.source_id()) + " has no raw label");
    out << *raw;
    for (double v : s.values()) {
      out << delimiter;
      if (std::isnan(v)) out << "NaN";
      else out << v;
    }
    out << '\n';
  }
}

/// Maps raw labels onto 0..C-1 in ascending raw order.
inline Dataset remap_labels(Dataset ds) {
  std::set<int> raw;
  for (const auto& s : ds.series) {
    detail::require(s.raw_label().has_value(), "remap_labels: series without raw label");
    raw.insert(*s.raw_label());
  }
  if (raw.size() < 2)
    throw Error("dataset '" + ds.name + "' has a single class; at least two are required");
  ds.label_map.clear();
  int next = 0;
  for (int r : raw) ds.label_map[r] = next++;
  ds.num_classes = next;
  for (auto& s : ds.series) s.set_label(ds.label_map.at(*s.raw_label()));
  return ds;
}

/// Applies an existing label map (e.g. the train split's) to another file of the same dataset.
inline Dataset apply_label_map(Dataset ds, const std::map<int, int>& label_map) {
  ds.label_map = label_map;
  ds.num_classes = static_cast<int>(label_map.size());
  for (auto& s : ds.series) {
    const auto it = label_map.find(*s.raw_label());
    if (it == label_map.end())
      throw Error("dataset '" + ds.name + "': label " + std::to_string(*s.raw_label()) + " absent from the label map");
    s.set_label(it->second);
  }
  return ds;
}

/// Fills missing values (linear interpolation inside, nearest value at the
/// ends), resamples linearly to target_len and optionally z-normalizes.
/// A constant series z-normalizes to all zeros.
inline TimeSeries preprocess(const TimeSeries& series, std::size_t target_len, bool znorm) {
  detail::require(target_len >= 1, "preprocess: target_len must be >= 1");
  std::vector<double> v = series.values();
  std::vector<std::size_t> known;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!detail::is_missing(v[i])) known.push_back(i);
  if (known.empty()) throw Error("preprocess: series " + std::to_string(series.source_id()) + " has no finite values");

  for (std::size_t i = 0; i < known.front(); ++i) v[i] = v[known.front()];
  for (std::size_t i = known.back() + 1; i < v.size(); ++i) v[i] = v[known.back()];
  for (std::size_t k = 0; k + 1 < known.size(); ++k) {
    const auto a = known[k], b = known[k + 1];
    for (std::size_t i = a + 1; i < b; ++i) {
      const double w = static_cast<double>(i - a) / static_cast<double>(b - a);
      v[i] = v[a] + w * (v[b] - v[a]);
    }
  }

  std::vector<double> out(target_len);
  if (v.size() == target_len) {
    out = v;
  } else if (v.size() == 1 || target_len == 1) {
    std::fill(out.begin(), out.end(), v.front());
  } else {
    const double scale = static_cast<double>(v.size() - 1) / static_cast<double>(target_len - 1);
    for (std::size_t i = 0; i < target_len; ++i) {
      const double pos = static_cast<double>(i) * scale;
      auto lo = static_cast<std::size_t>(std::floor(pos));
      if (lo >= v.size() - 1) lo = v.size() - 2;
      const double w = pos - static_cast<double>(lo);
      out[i] = v[lo] + w * (v[lo + 1] - v[lo]);
    }
  }

  if (znorm) {
    const double n = static_cast<double>(out.size());
    const double mean = std::accumulate(out.begin(), out.end(), 0.0) / n;
    double var = 0.0;
    for (double x : out) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / n);
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
      std::fill(out.begin(), out.end(), 0.0);
    } else {
      for (double& x : out) x = (x - mean) / sd;
    }
  }

  TimeSeries res = series;
  res.values() = std::move(out);
  return res;
}

/// Drops the trailing run of missing markers that pads variable-length rows.
inline TimeSeries trim_trailing_missing(const TimeSeries& series) {
  TimeSeries out = series;
  auto& v = out.values();
  while (v.size() > 1 && detail::is_missing(v.back())) v.pop_back();
  return out;
}

/// Brings every series of a loaded dataset to a common length (the longest
/// observed length unless target_len is given).
inline Dataset prepare_dataset(const Dataset& ds, bool znorm, std::optional<std::size_t> target_len = std::nullopt) {
  Dataset out = ds;
  std::size_t max_len = 0;
  for (auto& s : out.series) {
    s = trim_trailing_missing(s);
    max_len = std::max(max_len, s.size());
  }
  const std::size_t len = target_len.value_or(max_len);
  for (auto& s : out.series) s = preprocess(s, len, znorm);
  return out;
}

/// Splits a labeled dataset into two class-balanced halves. For odd class
/// counts the extra sample goes to d_eval.
inline SplitPair stratified_split(const Dataset& ds, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.series.size(); ++i) {
    const auto l = ds.series[i].label();
    detail::require(l.has_value(), "stratified_split: dataset '" + ds.name + "' has unlabeled series");
    by_class[*l].push_back(i);
  }
  for (const auto& [cls, idx] : by_class)
    if (idx.size() < 2)
      throw Error("stratified_split: class " + std::to_string(cls) + " of dataset '" + ds.name + "' has fewer than 2 samples");

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> eval_idx, test_idx;
  for (auto& [cls, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_eval = (idx.size() + 1) / 2;
    eval_idx.insert(eval_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_eval));
    test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_eval), idx.end());
  }
  std::sort(eval_idx.begin(), eval_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  auto subset = [&](const std::vector<std::size_t>& idx, const std::string& suffix) {
    Dataset d;
    d.name = ds.name + suffix;
    d.num_classes = ds.num_classes;
    d.label_map = ds.label_map;
    d.series.reserve(idx.size());
    for (auto i : idx) d.series.push_back(ds.series[i]);
    return d;
  };
  return SplitPair{subset(eval_idx, "/d_eval"), subset(test_idx, "/d_test"), seed};
}

/// Per-class sample counts (index = remapped label).
inline std::vector<std::size_t> class_counts(const Dataset& ds) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(ds.num_classes, 0)), 0);
  for (const auto& s : ds.series) {
    const auto l = s.label();
    if (l && *l >= 0) {
      if (static_cast<std::size_t>(*l) >= counts.size()) counts.resize(static_cast<std::size_t>(*l) + 1, 0);
      ++counts[static_cast<std::size_t>(*l)];
    }
  }
  return counts;
}

}  // namespace tsadv
