#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "../support/tempdir.hpp"
#include "tsadv/dtw.hpp"
#include "tsadv/synthetic.hpp"

using namespace tsadv;

namespace {

std::vector<double> random_series(std::mt19937_64& rng, std::size_t max_len) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> v(1 + rng() % max_len);
  for (auto& x : v) x = u(rng);
  return v;
}

DistanceMatrix dm(std::vector<double> row, std::vector<int> labels) {
  DistanceMatrix d{Matrix(1, row.size()), std::move(labels)};
  d.values.data = std::move(row);
  return d;
}

}  // namespace

TEST(Dtw, FixedCases) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_EQ(dtw_distance(a, a), 0.0);
  EXPECT_NEAR(dtw_distance(std::vector<double>{0, 0}, std::vector<double>{1, 1}), std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(dtw_distance(a, std::vector<double>{2, 2, 3}), 1.0, 1e-12);
  EXPECT_THROW(dtw_distance(std::vector<double>{}, a), Error);
}

TEST(Dtw, PathCountOfOracle) { EXPECT_EQ(oracle::delannoy(2, 2), 13u); }

TEST(Dtw, MatchesPathEnumeration) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto q = random_series(rng, 5), c = random_series(rng, 5);
    ASSERT_NEAR(dtw_distance(q, c), oracle::dtw_enumerate(q, c), 1e-9);
  }
}

TEST(Dtw, SymmetricAndBoundedByEuclidean) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const auto q = random_series(rng, 20);
    auto c = q;
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (auto& x : c) x = u(rng);
    double e = 0;
    for (std::size_t i = 0; i < q.size(); ++i) e += (q[i] - c[i]) * (q[i] - c[i]);
    EXPECT_LE(dtw_distance(q, c), std::sqrt(e) + 1e-12);
    const auto r = random_series(rng, 20);
    EXPECT_EQ(dtw_distance(q, r), dtw_distance(r, q));
  }
}

TEST(DtwMatrix, ZeroDiagonalAndWorkerInvariance) {
  const auto ds = synthetic::bump_dataset(13, 9, {.length = 20});
  const auto seq = dtw_distance_matrix(ds, ds, 1);
  const auto par = dtw_distance_matrix(ds, ds, 4);
  EXPECT_EQ(seq.values, par.values);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(seq.values(i, i), 0.0);
  EXPECT_EQ(seq.values(2, 5), dtw_distance(ds.series[2], ds.series[5]));
  seq.validate();
}

TEST(DtwMatrix, SaveLoadRoundTrip) {
  testing_support::TempDir dir;
  const auto ds = synthetic::bump_dataset(6, 1, {.length = 12});
  const auto m = dtw_distance_matrix(ds, ds);
  save_distance_matrix(m, dir.file("m.csv"));
  const auto back = load_distance_matrix(dir.file("m.csv"));
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(back.train_labels, m.train_labels);
}

TEST(Nn1, ArgminWithLowestIndexTies) {
  EXPECT_EQ(nn1_classify(dm({3, 1, 2}, {0, 0, 1})), std::vector<int>{0});
  EXPECT_EQ(nn1_classify(dm({1, 1}, {0, 1})), std::vector<int>{0});
  EXPECT_EQ(nn1_classify(dm({0, 5}, {1, 0})), std::vector<int>{1});
}

TEST(Soft1nn, FixedCases) {
  auto r = soft_1nn(dm({0, 1}, {0, 1}));
  EXPECT_NEAR(r.probs(0, 0), 0.7310585786300049, 1e-12);
  EXPECT_NEAR(r.probs(0, 1), 0.2689414213699951, 1e-12);
  EXPECT_EQ(r.labels[0], 0);
  r = soft_1nn(dm({3, 1, 2}, {0, 0, 1}));
  EXPECT_NEAR(r.probs(0, 0), 0.7310585786300049, 1e-12);
  EXPECT_EQ(r.labels[0], 0);
  r = soft_1nn(dm({1, 1}, {0, 1}));
  EXPECT_EQ(r.probs(0, 0), 0.5);
  EXPECT_EQ(r.labels[0], 0);
  EXPECT_THROW(soft_1nn(dm({1, 2}, {0, 2})), Error);
}

TEST(Soft1nn, AgreesWithNearestNeighbour) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t nt = 1 + rng() % 20, nr = 2 + rng() % 29;
    const int C = 2 + int(rng() % std::min<std::size_t>(4, nr - 1));
    std::vector<int> labels(nr);
    for (std::size_t j = 0; j < nr; ++j) labels[j] = j < std::size_t(C) ? int(j) : int(rng() % C);
    std::shuffle(labels.begin(), labels.end(), rng);
    DistanceMatrix d{Matrix(nt, nr), labels};
    for (auto& x : d.values.data) x = u(rng);
    const auto nn = nn1_classify(d);
    const auto s = soft_1nn(d, C);
    for (std::size_t i = 0; i < nt; ++i) {
      ASSERT_EQ(s.labels[i], nn[i]);
      double sum = 0;
      for (double p : s.probs.row(i)) {
        ASSERT_GE(p, 0.0);
        sum += p;
      }
      ASSERT_NEAR(sum, 1.0, 1e-9);
    }
  }
}
