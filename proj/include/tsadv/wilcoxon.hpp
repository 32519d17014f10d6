#pragma once

// Paired Wilcoxon signed-rank test. Zero differences are dropped and tied
// absolute differences share their average rank. Up to 25 non-zero pairs
// the null distribution of W+ is computed exactly by counting sign
// assignments (a subset-sum over doubled ranks); beyond that a normal
// approximation with tie and continuity corrections is used.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tsadv/error.hpp"

namespace tsadv {

enum class Alternative { two_sided, greater, less };

struct WilcoxonResult {
  double statistic = 0.0;   // min(W+, W-) for two-sided, W+ otherwise
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;        // non-zero differences used
  bool exact = false;
  bool warning = false;     // every difference was zero
};

inline constexpr std::size_t kWilcoxonExactLimit = 25;
inline constexpr std::size_t kWilcoxonMinPairs = 5;

/// Average ranks (1-based) of |d|.
inline std::vector<double> signed_rank_ranks(const std::vector<double>& abs_d) {
  const std::size_t n = abs_d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return abs_d[a] < abs_d[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b,
                                           Alternative alt = Alternative::two_sided) {
  if (a.size() != b.size()) throw ShapeError("wilcoxon: samples have different lengths");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    if (!std::isfinite(diff)) throw Error("wilcoxon: non-finite difference");
    if (diff != 0.0) d.push_back(diff);
  }
  WilcoxonResult r;
  r.n = d.size();
  if (d.empty()) {
    r.warning = true;
    return r;
  }
  if (d.size() < kWilcoxonMinPairs)
    throw Error("wilcoxon: only " + std::to_string(d.size()) + " non-zero differences (need at least " +
                std::to_string(kWilcoxonMinPairs) + ")");

  std::vector<double> abs_d(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) abs_d[i] = std::abs(d[i]);
  const auto ranks = signed_rank_ranks(abs_d);
  for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? r.w_plus : r.w_minus) += ranks[i];
  r.statistic = alt == Alternative::two_sided ? std::min(r.w_plus, r.w_minus) : r.w_plus;

  const std::size_t n = d.size();
  if (n <= kWilcoxonExactLimit) {
    // Doubled ranks are integers, so W+ takes values on a half-integer grid.
    std::vector<std::size_t> twice(n);
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      twice[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
      total += twice[i];
    }
    std::vector<double> count(total + 1, 0.0);
    count[0] = 1.0;
    for (auto w : twice)
      for (std::size_t s = total; s + 1 > w; --s) count[s] += count[s - w];
    const auto observed = static_cast<std::size_t>(std::llround(2.0 * r.w_plus));
    const double all = std::ldexp(1.0, static_cast<int>(n));
    double le = 0.0, ge = 0.0;
    for (std::size_t s = 0; s <= total; ++s) {
      if (s <= observed) le += count[s];
      if (s >= observed) ge += count[s];
    }
    r.exact = true;
    switch (alt) {
      case Alternative::two_sided: r.p_value = std::min(1.0, 2.0 * std::min(le, ge) / all); break;
      case Alternative::greater: r.p_value = ge / all; break;
      case Alternative::less: r.p_value = le / all; break;
    }
    return r;
  }

  const double nd = static_cast<double>(n);
  const double mean = nd * (nd + 1.0) / 4.0;
  double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0;
  {
    auto sorted = abs_d;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      var -= (t * t * t - t) / 48.0;
      i = j + 1;
    }
  }
  const double sd = std::sqrt(var);
  auto upper_tail = [](double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); };
  switch (alt) {
    case Alternative::two_sided: {
      const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / sd;
      r.p_value = std::min(1.0, 2.0 * upper_tail(z));
      break;
    }
    case Alternative::greater: r.p_value = upper_tail((r.w_plus - mean - 0.5) / sd); break;
    case Alternative::less: r.p_value = 1.0 - upper_tail((r.w_plus - mean + 0.5) / sd); break;
  }
  return r;
}

}  // namespace tsadv
