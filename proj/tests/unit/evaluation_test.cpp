#include <gtest/gtest.h>

#include <random>

#include "../support/oracles.hpp"
#include "../support/tempdir.hpp"
#include "../support/toy.hpp"
#include "tsadv/evaluation.hpp"
#include "tsadv/wilcoxon.hpp"

using namespace tsadv;

namespace {

Series constant(std::size_t n, double v) { return Series(n, std::vector<double>(4, v)); }

}  // namespace

TEST(CountLabeled, BothFoldsRequired) {
  const auto x = constant(3, 0.0), xh = constant(3, 1.0);
  // wrong clean prediction, unchanged prediction, flipped correct prediction
  const auto r = count_adversaries_labeled({1, 0, 0}, {0, 0, 1}, {0, 0, 0}, x, xh);
  EXPECT_EQ(r.num_adversaries, 1u);
  EXPECT_EQ(r.adversary_indices, std::vector<std::size_t>{2});
  EXPECT_EQ(r.num_evaluated, 3u);
  EXPECT_DOUBLE_EQ(*r.mse_adversaries, 1.0);
  EXPECT_DOUBLE_EQ(r.mse_all, 1.0);
  EXPECT_EQ(r.criterion, Criterion::labeled);
}

TEST(CountLabeled, NoAdversaryLeavesMseUndefined) {
  const auto x = constant(2, 0.0);
  const auto r = count_adversaries_labeled({0, 1}, {0, 1}, {0, 1}, x, x);
  EXPECT_EQ(r.num_adversaries, 0u);
  EXPECT_FALSE(r.mse_adversaries.has_value());
  EXPECT_EQ(r.mse_all, 0.0);
}

TEST(CountUnlabeled, FixedCases) {
  const auto x = constant(3, 0.0), xh = constant(3, 0.5);
  EXPECT_EQ(count_adversaries_unlabeled({0, 1, 1}, {0, 1, 1}, x, xh).num_adversaries, 0u);
  const auto one = count_adversaries_unlabeled({0, 1, 1}, {0, 0, 1}, x, xh);
  EXPECT_EQ(one.num_adversaries, 1u);
  EXPECT_DOUBLE_EQ(*one.mse_adversaries, 0.25);
  EXPECT_EQ(one.criterion, Criterion::unlabeled);
}

TEST(Count, Errors) {
  EXPECT_THROW(count_adversaries_labeled({}, {}, {}, {}, {}), Error);
  EXPECT_THROW(count_adversaries_unlabeled({}, {}, {}, {}), Error);
  EXPECT_THROW(count_adversaries_unlabeled({0}, {0}, constant(1, 0.0), Series{{1.0}}), ShapeError);
  EXPECT_THROW(count_adversaries_labeled({0}, {0}, {0, 1}, constant(1, 0.0), constant(1, 0.0)), ShapeError);
}

TEST(Count, LabeledSetIsSubsetOfUnlabeledSet) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 20, C = 2 + rng() % 3;
    std::vector<int> clean(n), adv(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      clean[i] = int(rng() % C);
      adv[i] = int(rng() % C);
      y[i] = int(rng() % C);
    }
    const auto x = constant(n, 0.0), xh = constant(n, 0.1);
    const auto lab = count_adversaries_labeled(clean, adv, y, x, xh);
    const auto unl = count_adversaries_unlabeled(clean, adv, x, xh);
    ASSERT_LE(lab.num_adversaries, unl.num_adversaries);
    for (auto i : lab.adversary_indices)
      ASSERT_NE(std::find(unl.adversary_indices.begin(), unl.adversary_indices.end(), i), unl.adversary_indices.end());
    ASSERT_LE(unl.num_adversaries, n);
  }
}

TEST(Count, IdentityPerturbationHasZeroMse) {
  const auto& p = toy::shared();
  const FcnTeacher teacher(*p.fcn);
  const auto x = p.split.d_eval.values();
  const auto r = count_adversaries_labeled(teacher, x, x, p.split.d_eval.labels());
  EXPECT_EQ(r.mse_all, 0.0);
  EXPECT_EQ(r.num_adversaries, 0u);
  EXPECT_EQ(count_adversaries_unlabeled(teacher, x, x).num_adversaries, 0u);
}

TEST(Generalization, UnchangedParametersAndTestSplit) {
  const auto& p = toy::shared();
  AttackConfig cfg;
  cfg.epochs = 15;
  cfg.hidden_units = {64, 64};
  const auto run = train_gatn(make_attack_run(cfg, p.fcn, SurrogateRoute::teacher_direct), p.split.d_eval.values());
  const auto gatn_before = run.gatn;
  const FcnTeacher teacher(*p.fcn);
  const auto r = generalization_eval(run, teacher, p.split.d_test);
  EXPECT_TRUE(nn::same_parameters(run.gatn, gatn_before));
  EXPECT_EQ(r.split, SplitKind::d_test);
  EXPECT_EQ(r.num_evaluated, p.split.d_test.size());
  EXPECT_GE(r.num_adversaries, 1u);
}

TEST(Wilcoxon, IdenticalSamplesWarn) {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  const auto r = wilcoxon_signed_rank(a, a);
  EXPECT_TRUE(r.warning);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_EQ(r.statistic, 0.0);
}

TEST(Wilcoxon, AllPositiveFive) {
  const auto r = wilcoxon_signed_rank({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
  EXPECT_NEAR(r.p_value, 0.0625, 1e-15);
  EXPECT_TRUE(r.exact);
  EXPECT_EQ(r.w_plus, 15.0);
  EXPECT_EQ(r.statistic, 0.0);
}

TEST(Wilcoxon, TooFewNonZeroDifferences) {
  EXPECT_THROW(wilcoxon_signed_rank({1, 2, 3, 4, 5}, {1, 2, 3, 0, 0}), Error);
  EXPECT_THROW(wilcoxon_signed_rank({1, 2}, {1}), ShapeError);
}

TEST(Wilcoxon, MatchesEnumerationOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 5 + rng() % 6;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      // small integers produce ties and occasional zero differences
      a[i] = double(rng() % 7);
      b[i] = double(rng() % 7);
    }
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < n; ++i) nonzero += a[i] != b[i];
    if (nonzero < kWilcoxonMinPairs) continue;
    for (auto alt : {Alternative::two_sided, Alternative::greater, Alternative::less})
      ASSERT_NEAR(wilcoxon_signed_rank(a, b, alt).p_value, oracle::wilcoxon_enumerate(a, b, alt), 1e-12);
  }
}

TEST(Wilcoxon, SymmetricAndInUnitInterval) {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 5 + rng() % 40;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = nd(rng);
      b[i] = nd(rng) + 0.3;
    }
    const auto ab = wilcoxon_signed_rank(a, b), ba = wilcoxon_signed_rank(b, a);
    ASSERT_GT(ab.p_value, 0.0);
    ASSERT_LE(ab.p_value, 1.0);
    ASSERT_NEAR(ab.p_value, ba.p_value, 1e-12);
    ASSERT_EQ(ab.exact, n <= kWilcoxonExactLimit);
  }
}

TEST(Wilcoxon, NormalApproximationCloseToExactNearLimit) {
  std::vector<double> a(30), b(30, 0.0);
  for (std::size_t i = 0; i < 30; ++i) a[i] = (i % 3 == 0 ? -1.0 : 1.0) * double(i + 1);
  const auto approx = wilcoxon_signed_rank(a, b);
  EXPECT_FALSE(approx.exact);
  // W+ = 465 - W-; W- = sum of ranks 1,4,...,28
  EXPECT_DOUBLE_EQ(approx.w_minus, 145.0);
  const double mean = 30.0 * 31.0 / 4.0, sd = std::sqrt(30.0 * 31.0 * 61.0 / 24.0);
  const double z = (std::abs(approx.w_plus - mean) - 0.5) / sd;
  EXPECT_NEAR(approx.p_value, std::erfc(z / std::sqrt(2.0)), 1e-12);
}

TEST(Report, CsvAndJsonRoundTrip) {
  AttackReport r;
  r.dataset = "Toy";
  r.box = BoxMode::black;
  r.teacher = TeacherKind::dtw1nn;
  r.beta = 1e-3;
  r.num_adversaries = 2;
  r.num_evaluated = 7;
  r.mse_adversaries = 0.1 + 0.2;
  r.mse_all = 1.0 / 3.0;
  r.split = SplitKind::d_test;
  r.criterion = Criterion::unlabeled;
  r.adversary_indices = {1, 5};
  EXPECT_EQ(report_from_json(nlohmann::json::parse(to_json(r).dump())), r);
  auto none = r;
  none.mse_adversaries.reset();
  none.num_adversaries = 0;
  none.adversary_indices.clear();
  EXPECT_EQ(report_from_json(nlohmann::json::parse(to_json(none).dump())), none);

  testing_support::TempDir dir;
  write_reports_csv({r, none}, dir.file("r.csv"));
  std::ifstream in(dir.file("r.csv"));
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  EXPECT_EQ(header, kReportCsvHeader);
  EXPECT_EQ(row1, "Toy,dtw1nn,black,0.001,d_test,unlabeled,2,7,0.30000000000000004,0.33333333333333331");
  EXPECT_NE(row2.find(",NA,"), std::string::npos);
}
