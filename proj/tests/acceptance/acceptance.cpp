// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "../support/tempdir.hpp"
#include "../support/toy.hpp"
#include "tsadv/tsadv.hpp"

using namespace tsadv;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool cond, const std::string& what) {
    if (!cond) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Check = std::function<void(Outcome&)>;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---- 1 ----
void dtw_oracle(Outcome& o) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> len(1, 5);
  std::normal_distribution<double> nd;
  double worst = 0.0, self = 0.0;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> q(len(rng)), c(len(rng));
    for (auto& v : q) v = nd(rng);
    for (auto& v : c) v = nd(rng);
    worst = std::max(worst, std::abs(dtw_distance(q, c) - oracle::dtw_enumerate(q, c)));
    self = std::max(self, dtw_distance(q, q));
  }
  o.check(worst <= 1e-9, "DP differs from enumeration");
  o.check(self == 0.0, "dtw(Q,Q) != 0");
  o.check(std::abs(dtw_distance(std::vector<double>{0, 0}, std::vector<double>{1, 1}) - std::sqrt(2.0)) < 1e-12,
          "[0,0] vs [1,1]");
  o.check(std::abs(dtw_distance(std::vector<double>{1, 2, 3}, std::vector<double>{2, 2, 3}) - 1.0) < 1e-12,
          "[1,2,3] vs [2,2,3]");
  o.detail << "max |DP - enumeration| = " << worst << " over 200 pairs";
}

// ---- 2 ----
void soft1nn_matches_1nn(Outcome& o) {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::size_t rows = 0, agree = 0;
  double worst_sum = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 2 + rng() % 4, n_train = C + rng() % (31 - C), n_test = 1 + rng() % 20;
    DistanceMatrix dm{Matrix(n_test, n_train), std::vector<int>(n_train)};
    for (std::size_t j = 0; j < n_train; ++j) dm.train_labels[j] = static_cast<int>(j < C ? j : rng() % C);
    std::shuffle(dm.train_labels.begin(), dm.train_labels.end(), rng);
    // continuous draws: unique row minima with probability one, asserted below
    for (auto& v : dm.values.data) v = u(rng);
    for (std::size_t i = 0; i < n_test; ++i) {
      const auto row = dm.values.row(i);
      const double mn = *std::min_element(row.begin(), row.end());
      if (std::count(row.begin(), row.end(), mn) != 1) o.check(false, "duplicate row minimum generated");
    }
    const auto soft = soft_1nn(dm, static_cast<int>(C));
    const auto hard = nn1_classify(dm);
    for (std::size_t i = 0; i < n_test; ++i, ++rows) {
      agree += soft.labels[i] == hard[i] && nn::argmax(soft.probs.row(i)) == hard[i];
      double s = 0.0;
      for (double p : soft.probs.row(i)) s += p;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
  }
  o.check(agree == rows, "argmax differs from 1-NN");
  o.check(worst_sum <= 1e-9, "row sums");
  o.detail << agree << "/" << rows << " rows agree, max |sum - 1| = " << worst_sum;
}

// ---- 3 ----
void gradient_checks(Outcome& o) {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  std::size_t checked = 0;
  auto run = [&](const std::string& name, const std::function<gradcheck::Report()>& fn) {
    gradcheck::Report rep;
    for (int i = 0; i < 20; ++i) rep.merge(fn());
    worst = std::max(worst, rep.max_rel_error);
    checked += rep.checked;
    o.check(rep.max_rel_error < 1e-4, name);
  };
  for (auto kind : gradcheck::all_layer_kinds())
    run(nn::to_string(kind), [&] { return gradcheck::check_layer(kind, rng); });
  run("cross entropy", [&] { return gradcheck::check_cross_entropy(rng); });
  run("distillation loss", [&] { return gradcheck::check_distill_loss(rng); });
  run("generator loss", [&] { return gradcheck::check_gatn_loss(rng); });
  o.detail << gradcheck::all_layer_kinds().size() << " layer kinds + 3 losses, " << checked
           << " derivatives, max relative error " << worst;
}

// ---- 4 ----
void rerank_guarantee(Outcome& o) {
  std::mt19937_64 rng(404);
  std::gamma_distribution<double> g(0.5, 1.0);
  std::uniform_real_distribution<double> a(0.0, 1.0);
  double worst = 0.0;
  std::size_t hits = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 2 + rng() % 9;
    std::vector<double> y(C);
    double s = 0.0;
    for (auto& v : y) s += v = g(rng) + 1e-12;
    for (auto& v : y) v /= s;
    const int t = static_cast<int>(rng() % C);
    const double alpha = 3.0 - 2.0 * a(rng);  // (1, 3]
    const auto r = rerank(y, t, alpha);
    hits += nn::argmax(std::span<const double>(r)) == t;
    double sum = 0.0;
    for (double v : r) sum += v;
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  const auto fixed = rerank(std::vector<double>{0.7, 0.3}, 1, 1.5);
  o.check(hits == 1000, "argmax != t");
  o.check(worst <= 1e-9, "sums");
  o.check(std::abs(fixed[0] - 0.4) <= 1e-12 && std::abs(fixed[1] - 0.6) <= 1e-12, "fixed case");
  o.detail << hits << "/1000 argmax = t, max |sum - 1| = " << worst << ", fixed case [" << fixed[0] << ", "
           << fixed[1] << "]";
}

// ---- 5 ----
void distillation_fidelity(Outcome& o) {
  const auto p = toy::make_problem(1, 200);
  o.check(p.train_accuracy >= 0.95, "teacher train accuracy");
  const FcnTeacher teacher(*p.fcn);
  const auto x = p.split.d_eval.values();
  o.detail << "teacher train accuracy " << p.train_accuracy;
  for (auto box : {BoxMode::white, BoxMode::black}) {
    const auto cfg = box == BoxMode::white ? DistillConfig::white_box() : DistillConfig::black_box();
    const auto mode = box == BoxMode::white ? OutputMode::soft : OutputMode::hard;
    const auto res = train_student(build_lenet5_1d<float>({nn::Architecture::lenet5, 32, 2}, 5), x,
                                   teacher_outputs(teacher, x, mode), cfg, box);
    const double agree = fidelity(res.model, x, teacher.predict(x));
    o.check(agree >= 0.9, "fidelity gamma=" + std::to_string(cfg.gamma));
    o.detail << ", gamma " << cfg.gamma << " (" << to_string(mode) << ") fidelity " << agree;
  }
}

// ---- 6 and 10 ----
struct EndToEnd {
  std::vector<pipeline::RunConfig> configs;
  std::vector<std::vector<AttackReport>> reports;
  std::vector<std::map<std::string, std::string>> artifacts;  // relative path -> bytes
  std::vector<bool> frozen;  // artifacts unchanged across the d_test evaluation
};

std::vector<pipeline::RunConfig> end_to_end_configs(const std::string& out) {
  pipeline::RunConfig synth;
  synth.synthetic = true;
  synth.out = out;
  pipeline::RunConfig ucr;
  ucr.dataset = "ItalyPowerDemand";
  ucr.archive_root = TSADV_TEST_DATA_DIR;
  ucr.out = out;
  return {synth, ucr};
}

EndToEnd run_end_to_end(const std::string& out) {
  EndToEnd e;
  e.configs = end_to_end_configs(out);
  for (const auto& cfg : e.configs) {
    pipeline::Pipeline p(cfg);
    p.prepare();
    p.train_teacher();
    p.attack();
    auto snapshot = [&] {
      std::map<std::string, std::string> files;
      for (const auto& dir : {p.teacher_dir(), p.attack_dir(), p.evaluate_dir()})
        if (std::filesystem::exists(dir))
          for (const auto& f : std::filesystem::directory_iterator(dir))
            if (f.path().extension() == ".model" || f.path().filename() == "reports.json")
              files[std::filesystem::relative(f.path(), cfg.out).string()] = slurp(f.path());
      return files;
    };
    const auto before = snapshot();
    p.evaluate();
    auto after = snapshot();
    bool frozen = true;
    for (const auto& [path, bytes] : before) frozen = frozen && after.at(path) == bytes;
    e.frozen.push_back(frozen);
    e.reports.push_back(p.reports());
    e.artifacts.push_back(std::move(after));
  }
  return e;
}

EndToEnd first_run;
testing_support::TempDir first_dir;

void end_to_end_attack(Outcome& o) {
  first_run = run_end_to_end(first_dir.file("run"));
  for (std::size_t i = 0; i < first_run.configs.size(); ++i) {
    const auto& r = first_run.reports[i];
    const auto name = first_run.configs[i].dataset_name();
    o.check(r.size() == 2 && r[0].split == SplitKind::d_eval && r[1].split == SplitKind::d_test, name + " splits");
    o.check(r[0].num_adversaries >= 1, name + " d_eval adversaries");
    o.check(r[1].num_adversaries >= 1, name + " d_test adversaries");
    o.check(first_run.frozen[i], name + " parameters changed during evaluation");
    o.detail << (i ? "; " : "") << name << " beta " << r[0].beta << ": d_eval " << r[0].num_adversaries << "/"
             << r[0].num_evaluated << ", d_test " << r[1].num_adversaries << "/" << r[1].num_evaluated;
  }
}

// ---- 7 ----
void surrogate_routing(Outcome& o) {
  const auto& p = toy::shared();
  const FcnTeacher fcn(*p.fcn);
  const auto x = p.split.d_eval.values();
  auto student = std::make_shared<const nn::Model<float>>(
      train_student(build_lenet5_1d<float>({nn::Architecture::lenet5, 32, 2}, 3), x,
                    teacher_outputs(fcn, x, OutputMode::hard), [] {
                      auto c = DistillConfig::black_box();
                      c.epochs = 20;
                      return c;
                    }(), BoxMode::black)
          .model);
  std::size_t direct = 0;
  for (auto box : {BoxMode::white, BoxMode::black})
    for (auto kind : {TeacherKind::fcn, TeacherKind::dtw1nn}) {
      const bool expect_direct = box == BoxMode::white && kind == TeacherKind::fcn;
      const auto route = select_surrogate(box, kind);
      o.check((route == SurrogateRoute::teacher_direct) == expect_direct, "rule");
      AttackConfig cfg;
      cfg.box = box;
      cfg.teacher_kind = kind;
      cfg.epochs = 1;
      cfg.hidden_units = {16, 16};
      const auto surrogate = route == SurrogateRoute::teacher_direct ? p.fcn : student;
      const auto run = train_gatn(make_attack_run(cfg, surrogate, route), x);
      o.check(run.surrogate.get() == (expect_direct ? p.fcn.get() : student.get()), "trained against wrong model");
      const auto wrong = route == SurrogateRoute::teacher_direct ? SurrogateRoute::student : SurrogateRoute::teacher_direct;
      bool rejected = false;
      try {
        make_attack_run(cfg, expect_direct ? student : p.fcn, wrong);
      } catch (const ConfigError&) {
        rejected = true;
      }
      o.check(rejected, "wrong route accepted");
      pipeline::RunConfig rc;
      rc.synthetic = true;
      rc.box = box;
      rc.teacher = kind;
      o.check(rc.route() == route, "pipeline route");
      direct += expect_direct;
    }
  o.detail << "4 combinations, teacher used directly in " << direct << " (white, fcn)";
}

// ---- 8 ----
void black_box_hygiene(Outcome& o) {
  const auto& p = toy::shared();
  const auto x = p.split.d_eval.values();
  const FcnTeacher fcn(*p.fcn);
  const Dtw1nnTeacher dtw(p.train);
  for (const Teacher* teacher : {static_cast<const Teacher*>(&fcn), static_cast<const Teacher*>(&dtw)}) {
    audit::Scope scope;
    auto cfg = DistillConfig::black_box();
    cfg.epochs = 30;
    const auto outputs = teacher_outputs(*teacher, x, OutputMode::hard);
    auto student = std::make_shared<const nn::Model<float>>(
        train_student(build_lenet5_1d<float>({nn::Architecture::lenet5, 32, 2}, 4), x, outputs, cfg, BoxMode::black).model);
    AttackConfig ac;
    ac.box = BoxMode::black;
    ac.teacher_kind = teacher->kind();
    ac.epochs = 5;
    ac.hidden_units = {32, 32};
    train_gatn(make_attack_run(ac, student, SurrogateRoute::student), x);
    const auto c = scope.counters();
    o.check(c.label_reads == 0 && c.teacher_prob_reads == 0, to_string(teacher->kind()) + " black-box reads");
    o.detail << to_string(teacher->kind()) << ": " << c.label_reads << " label / " << c.teacher_prob_reads
             << " probability reads; ";
  }
  // the instrumentation does see a white-box query and a label read
  audit::Scope control;
  teacher_outputs(fcn, x, OutputMode::soft);
  p.split.d_eval.labels();
  const auto c = control.counters();
  o.check(c.teacher_prob_reads > 0 && c.label_reads > 0, "control run not counted");
  o.detail << "control: " << c.label_reads << " label / " << c.teacher_prob_reads << " probability reads";
}

// ---- 9 ----
void wilcoxon_correctness(Outcome& o) {
  std::mt19937_64 rng(909);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t n = 5; n <= 10; ++n)
    for (int trial = 0; trial < 100; ++trial, ++cases) {
      std::vector<double> a(n), b(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = nd(rng);
        b[i] = nd(rng) + 0.5 * nd(rng);
      }
      for (auto alt : {Alternative::two_sided, Alternative::greater, Alternative::less})
        worst = std::max(worst, std::abs(wilcoxon_signed_rank(a, b, alt).p_value - oracle::wilcoxon_enumerate(a, b, alt)));
    }
  const double fixed = wilcoxon_signed_rank({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0}).p_value;
  o.check(worst <= 1e-12, "oracle");
  o.check(std::abs(fixed - 0.0625) <= 1e-15, "fixed case");
  o.detail << cases << " samples (n = 5..10, 3 alternatives), max |p - oracle| = " << worst << ", fixed case p = " << fixed;
}

// ---- 10 ----
void determinism(Outcome& o) {
  testing_support::TempDir dir;
  const auto second = run_end_to_end(dir.file("run"));
  std::size_t files = 0;
  for (std::size_t i = 0; i < second.configs.size(); ++i) {
    const auto name = second.configs[i].dataset_name();
    o.check(!first_run.reports.empty(), "criterion 6 did not run");
    if (first_run.reports.empty()) return;
    o.check(second.reports[i] == first_run.reports[i], name + " reports differ");
    o.check(second.artifacts[i] == first_run.artifacts[i], name + " artifacts differ");
    for (const auto& [path, bytes] : second.artifacts[i]) {
      const auto it = first_run.artifacts[i].find(path);
      o.check(it != first_run.artifacts[i].end() && it->second == bytes, path);
    }
    files += second.artifacts[i].size();
    o.detail << name << " d_eval " << second.reports[i][0].num_adversaries << " / d_test "
             << second.reports[i][1].num_adversaries << " (first run " << first_run.reports[i][0].num_adversaries
             << " / " << first_run.reports[i][1].num_adversaries << "); ";
  }
  o.detail << files << " model/report files compared byte for byte";
}

}  // namespace

int main() {
  struct Entry {
    std::string name;
    Check run;
    double limit_seconds;  // 0 = no limit
  };
  const std::vector<Entry> criteria{
      {"DTW matches warping-path enumeration", dtw_oracle, 10},
      {"Soft-1NN argmax equals 1-NN", soft1nn_matches_1nn, 10},
      {"finite-difference gradient checks", gradient_checks, 60},
      {"reranking guarantee", rerank_guarantee, 0},
      {"distillation fidelity", distillation_fidelity, 300},
      {"end-to-end white-box FCN attack", end_to_end_attack, 1200},
      {"surrogate routing rule", surrogate_routing, 0},
      {"black-box information hygiene", black_box_hygiene, 0},
      {"Wilcoxon signed-rank correctness", wilcoxon_correctness, 0},
      {"determinism of the end-to-end run", determinism, 0}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (criteria[i].limit_seconds > 0 && secs > criteria[i].limit_seconds) {
      o.pass = false;
      o.detail << " [exceeded " << criteria[i].limit_seconds << " s]";
    }
    failed += !o.pass;
    std::printf("criterion %zu: %s  %s (%.1f s): %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].name.c_str(), secs,
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
