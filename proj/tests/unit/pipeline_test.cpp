#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <set>
#include <sys/wait.h>
#include <sstream>

#include "../support/tempdir.hpp"
#include "tsadv/pipeline.hpp"

using namespace tsadv;
using namespace tsadv::pipeline;

namespace {

RunConfig small(const std::string& out) {
  RunConfig c;
  c.synthetic = true;
  c.out = out;
  c.teacher_epochs = 30;
  c.student_epochs = 30;
  c.gatn_epochs = 10;
  c.gatn_hidden = {32, 32};
  c.beta_grid = false;
  c.beta = 1e-2;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct CliResult {
  int code = 0;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(TSADV_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  std::array<char, 512> buf{};
  while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace

TEST(RunConfig, GammaFollowsBoxUnlessOverridden) {
  RunConfig c;
  c.box = BoxMode::white;
  EXPECT_EQ(c.resolved_gamma(), 0.5);
  c.box = BoxMode::black;
  EXPECT_EQ(c.resolved_gamma(), 1.0);
  c.gamma = 0.3;
  EXPECT_EQ(c.resolved_gamma(), 0.3);
}

TEST(RunConfig, JsonRoundTripAndUnknownKeys) {
  RunConfig c = small("x");
  c.teacher = TeacherKind::dtw1nn;
  c.box = BoxMode::black;
  c.delimiter = ',';
  c.seeds = {1, 2, 3, 4};
  c.gatn_hidden = {7, 9};
  c.gamma = 0.25;
  const auto back = config_from_json(json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(config_from_json(json{{"betta", 1.0}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"box", "grey"}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"alpha", "big"}}), ConfigError);
  const auto overlay = config_from_json(json{{"alpha", 2.0}}, c);
  EXPECT_EQ(overlay.alpha, 2.0);
  EXPECT_EQ(overlay.seeds.gatn, 4u);
}

TEST(RunConfig, ValidationRejectsBadValues) {
  RunConfig c = small("x");
  c.alpha = 1.0;
  EXPECT_THROW(Pipeline p(c), ConfigError);
  c = small("x");
  c.synthetic = false;
  EXPECT_THROW(Pipeline p(c), ConfigError);
}

TEST(Hash, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
  EXPECT_EQ(fnv1a_hex("foobar"), "85944171f73967e8");
}

TEST(Prepare, DeterministicBalancedAndRestartable) {
  testing_support::TempDir a, b;
  Pipeline pa(small(a.file("out"))), pb(small(b.file("out")));
  EXPECT_EQ(pa.prepare().status, StageStatus::ran);
  pb.prepare();
  for (const char* f : {"train.tsv", "d_eval.tsv", "d_test.tsv"})
    EXPECT_EQ(slurp(pa.prepare_dir() / f), slurp(pb.prepare_dir() / f)) << f;
  const auto ma = json::parse(slurp(pa.prepare_dir() / "manifest.json"));
  const auto mb = json::parse(slurp(pb.prepare_dir() / "manifest.json"));
  EXPECT_EQ(ma.at("key"), mb.at("key"));
  EXPECT_EQ(ma.at("class_counts"), mb.at("class_counts"));
  const auto ev = ma.at("class_counts").at("d_eval").get<std::vector<std::size_t>>();
  const auto te = ma.at("class_counts").at("d_test").get<std::vector<std::size_t>>();
  ASSERT_EQ(ev.size(), te.size());
  for (std::size_t c = 0; c < ev.size(); ++c) EXPECT_LE(ev[c] - te[c], 1u);

  const auto before = fs::last_write_time(pa.prepare_dir() / "d_eval.tsv");
  EXPECT_EQ(pa.prepare().status, StageStatus::up_to_date);
  EXPECT_EQ(fs::last_write_time(pa.prepare_dir() / "d_eval.tsv"), before);
}

TEST(Prepare, ReadsUcrFilesAndNamesMissingPath) {
  testing_support::TempDir dir;
  Dataset train = synthetic::bump_dataset(20, 3), test = synthetic::bump_dataset(30, 4);
  write_ucr(train, dir.file("Toy_TRAIN.tsv"));
  write_ucr(test, dir.file("Toy_TEST.tsv"));
  RunConfig c = small(dir.file("out"));
  c.synthetic = false;
  c.dataset = "Toy";
  c.archive_root = dir.path().string();
  fs::create_directories(dir.path() / "Toy");
  fs::rename(dir.file("Toy_TRAIN.tsv"), dir.path() / "Toy" / "Toy_TRAIN.tsv");
  fs::rename(dir.file("Toy_TEST.tsv"), dir.path() / "Toy" / "Toy_TEST.tsv");
  Pipeline p(c);
  p.prepare();
  const auto data = p.load_prepared();
  EXPECT_EQ(data.train.size(), 20u);
  EXPECT_EQ(data.d_eval.size() + data.d_test.size(), 30u);
  EXPECT_EQ(data.d_eval.values().front().size(), 32u);

  fs::remove(dir.path() / "Toy" / "Toy_TEST.tsv");
  c.out = dir.file("out2");
  try {
    Pipeline(c).prepare();
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("Toy_TEST.tsv"), std::string::npos) << e.what();
  }
}

TEST(Stages, MissingUpstreamNamesTheCommand) {
  testing_support::TempDir dir;
  Pipeline p(small(dir.file("out")));
  try {
    p.evaluate();
    FAIL() << "expected MissingArtifactError";
  } catch (const MissingArtifactError& e) {
    EXPECT_NE(std::string(e.what()).find("tsadv prepare"), std::string::npos) << e.what();
  }
  p.prepare();
  p.train_teacher();
  try {
    p.evaluate();
    FAIL() << "expected MissingArtifactError";
  } catch (const MissingArtifactError& e) {
    EXPECT_NE(std::string(e.what()).find("tsadv attack"), std::string::npos) << e.what();
  }
  auto changed = small(dir.file("out"));
  changed.seeds.teacher = 9;
  try {
    Pipeline(changed).attack();
    FAIL() << "expected MissingArtifactError";
  } catch (const MissingArtifactError& e) {
    EXPECT_NE(std::string(e.what()).find("rerun `tsadv train-teacher`"), std::string::npos) << e.what();
  }
}

TEST(Stages, DistillOnlyForStudentRoutes) {
  testing_support::TempDir dir;
  auto c = small(dir.file("out"));
  EXPECT_EQ(Pipeline(c).distill().status, StageStatus::not_needed);
  c.box = BoxMode::black;
  Pipeline p(c);
  p.prepare();
  p.train_teacher();
  EXPECT_EQ(p.distill().status, StageStatus::ran);
  const auto m = json::parse(slurp(p.distill_dir() / "manifest.json"));
  EXPECT_EQ(m.at("output_mode"), "hard");
  EXPECT_EQ(m.at("config").at("gamma"), 1.0);
  EXPECT_EQ(p.distill().status, StageStatus::up_to_date);
}

TEST(Pipeline, ToyRunFindsAdversariesAndReproducesBitExactly) {
  testing_support::TempDir a, b;
  Pipeline pa(small(a.file("out"))), pb(small(b.file("out")));
  for (auto& r : pa.run_all()) EXPECT_NE(r.status, StageStatus::up_to_date) << r.stage;
  pb.run_all();
  const auto reports = pa.reports();
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_GE(reports[0].num_adversaries, 1u);
  EXPECT_EQ(reports[0].split, SplitKind::d_eval);
  EXPECT_EQ(reports[1].split, SplitKind::d_test);
  EXPECT_EQ(reports, pb.reports());
  EXPECT_EQ(slurp(pa.teacher_dir() / "teacher.model"), slurp(pb.teacher_dir() / "teacher.model"));
  EXPECT_EQ(slurp(pa.attack_dir() / "gatn_0.model"), slurp(pb.attack_dir() / "gatn_0.model"));
  EXPECT_EQ(slurp(pa.evaluate_dir() / "reports.json"), slurp(pb.evaluate_dir() / "reports.json"));
  for (auto& r : pa.run_all()) EXPECT_NE(r.status, StageStatus::ran) << r.stage;
}

TEST(Report, FourVariantsGiveSixPairs) {
  std::vector<AttackReport> reports;
  std::mt19937_64 rng(5);
  for (int d = 0; d < 8; ++d)
    for (const auto& v : variants()) {
      AttackReport r;
      r.dataset = "D" + std::to_string(d);
      r.teacher = v.teacher;
      r.box = v.box;
      r.num_adversaries = rng() % 50;
      reports.push_back(r);
    }
  const auto m = wilcoxon_matrix(reports, SplitKind::d_eval);
  ASSERT_EQ(m.size(), 6u);
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& t : m) {
    EXPECT_NE(t.a, t.b);
    EXPECT_TRUE(pairs.insert({t.a, t.b}).second);
    EXPECT_EQ(t.datasets, 8u);
  }
  // first pair against a direct call
  std::vector<double> a, b;
  for (const auto& r : reports) {
    if (r.teacher == TeacherKind::fcn && r.box == BoxMode::black) a.push_back(double(r.num_adversaries));
    if (r.teacher == TeacherKind::fcn && r.box == BoxMode::white) b.push_back(double(r.num_adversaries));
  }
  ASSERT_TRUE(m[0].result);
  EXPECT_EQ(m[0].result->p_value, wilcoxon_signed_rank(a, b).p_value);
}

TEST(Report, AggregatesEvaluateOutputs) {
  testing_support::TempDir dir;
  EXPECT_THROW(build_report(dir.file("none")), MissingArtifactError);
  fs::create_directories(dir.file("out"));
  EXPECT_THROW(build_report(dir.file("out")), MissingArtifactError);
  for (const auto& v : variants()) {
    auto c = small(dir.file("out"));
    c.teacher = v.teacher;
    c.box = v.box;
    c.gatn_epochs = 3;
    Pipeline(c).run_all();
  }
  const auto s = build_report(dir.file("out"));
  EXPECT_EQ(s.reports.size(), 8u);
  EXPECT_EQ(s.wilcoxon.size(), 6u);
  for (const char* f : {"summary.csv", "summary.json", "comparison_d_eval.csv", "comparison_d_test.csv",
                        "plot_adversaries_d_eval.dat", "wilcoxon.csv", "wilcoxon.json"})
    EXPECT_TRUE(fs::exists(dir.path() / "out" / "report" / f)) << f;
  const auto w = json::parse(slurp(dir.path() / "out" / "report" / "wilcoxon.json"));
  EXPECT_EQ(w.at("tests").at("d_eval").size(), 6u);
}

TEST(Cli, ExitCodesAndDiagnostics) {
  testing_support::TempDir dir;
  const auto out = dir.file("out");
  auto r = run_cli("evaluate --synthetic -q --out " + out);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("run `tsadv prepare` first"), std::string::npos) << r.output;

  r = run_cli("prepare --box grey --synthetic");
  EXPECT_NE(r.code, 0);

  r = run_cli("prepare -q --dataset Nope --train " + dir.file("missing.tsv") + " --test " + dir.file("t.tsv") +
              " --out " + out);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("missing.tsv"), std::string::npos) << r.output;

  r = run_cli("run -q --synthetic --beta 0.01 --teacher-epochs 20 --gatn-epochs 3 --gatn-hidden 16,16 --seed 2 --out " + out);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("SyntheticBump,fcn,white,0.01,d_test,labeled"), std::string::npos) << r.output;
  const auto cfg = json::parse(slurp(fs::path(out) / "SyntheticBump" / "config.fcn-white.json"));
  EXPECT_EQ(cfg.at("seeds").at("gatn"), 2);
  EXPECT_EQ(cfg.at("gamma"), 0.5);
  EXPECT_EQ(cfg.at("beta_grid"), false);

  std::ofstream(dir.file("cfg.json")) << R"({"synthetic": true, "teacher_epochs": 20, "gatn_epochs": 3,
                                            "gatn_hidden": [16, 16], "beta": 0.01, "beta_grid": false,
                                            "seeds": {"split": 2, "teacher": 2, "student": 2, "gatn": 2}})";
  r = run_cli("run -q --config " + dir.file("cfg.json") + " --out " + out);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("evaluate: up to date"), std::string::npos) << r.output;

  r = run_cli("report --out " + out);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("fcn-black vs fcn-white"), std::string::npos) << r.output;
}
