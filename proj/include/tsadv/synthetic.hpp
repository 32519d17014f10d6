#pragma once

// Two-class toy problem: a noisy half-sine bump (class 0) versus its
// negation (class 1). Used by tests and the CLI's --synthetic mode.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include "tsadv/timeseries.hpp"

namespace tsadv::synthetic {

struct BumpOptions {
  std::size_t length = 32;
  double noise = 0.1;
  double amplitude_jitter = 0.2;
  double shift_jitter = 0.1;  // fraction of the length
};

/// `count` samples alternating between the two classes, raw labels {1, 2}.
inline Dataset bump_dataset(std::size_t count, std::uint64_t seed, const BumpOptions& opt = {},
                            std::string name = "SyntheticBump") {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, opt.noise);
  std::uniform_real_distribution<double> amp(1.0 - opt.amplitude_jitter, 1.0 + opt.amplitude_jitter);
  std::uniform_real_distribution<double> shift(-opt.shift_jitter, opt.shift_jitter);

  Dataset ds;
  ds.name = std::move(name);
  const double T = static_cast<double>(opt.length);
  for (std::size_t i = 0; i < count; ++i) {
    const int cls = static_cast<int>(i % 2);
    const double a = amp(rng) * (cls == 0 ? 1.0 : -1.0);
    const double centre = 0.5 + shift(rng);
    std::vector<double> v(opt.length);
    for (std::size_t t = 0; t < opt.length; ++t) {
      const double u = (static_cast<double>(t) + 0.5) / T;
      const double arg = (u - centre) * 2.0 + 0.5;  // bump spans half the window
      const double bump = (arg > 0.0 && arg < 1.0) ? std::sin(std::numbers::pi * arg) : 0.0;
      v[t] = a * bump + noise(rng);
    }
    ds.series.emplace_back(std::move(v), std::nullopt, i, cls + 1);
  }
  return remap_labels(std::move(ds));
}

}  // namespace tsadv::synthetic
