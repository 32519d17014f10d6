// tsadv: command line front end for the attack pipeline.

#include <cstring>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsadv/pipeline.hpp"

namespace {

using namespace tsadv;
using namespace tsadv::pipeline;

struct Flags {
  std::string config;
  std::string delimiter;
  std::string teacher, box, criterion, alternative;
  std::optional<double> beta;
  bool beta_grid = false;
  std::optional<double> gamma;
  std::optional<std::uint64_t> seed, seed_split, seed_teacher, seed_student, seed_gatn;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  std::vector<std::string> datasets;
  bool all_datasets = false;
  bool all_variants = false;
};

void add_common(CLI::App* sub, RunConfig& c, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file; flags override its fields");
  sub->add_option("--dataset", c.dataset, "Dataset name (archive lookup and output subdirectory)");
  sub->add_option("--train", c.train_path, "UCR train file");
  sub->add_option("--test", c.test_path, "UCR test file");
  sub->add_option("--archive-root", c.archive_root, "UCR archive root")->envname(kArchiveRootEnv);
  sub->add_flag("--synthetic", c.synthetic, "Use the built-in two-class bump dataset");
  sub->add_option("--delimiter", f.delimiter, "Field delimiter: tab, comma, space or one character");
  sub->add_flag("--znorm,!--no-znorm", c.znorm, "z-normalize every series");
  sub->add_option("--teacher", f.teacher, "Attacked model")->check(CLI::IsMember({"fcn", "dtw1nn"}));
  sub->add_option("--box", f.box, "Attack regime")->check(CLI::IsMember({"white", "black"}));
  sub->add_option("--criterion", f.criterion, "Adversary counting")->check(CLI::IsMember({"labeled", "unlabeled"}));
  sub->add_option("--alpha", c.alpha, "Reranking weight (> 1)");
  sub->add_option("--beta", f.beta, "Reconstruction weight; disables the grid");
  sub->add_flag("--beta-grid", f.beta_grid, "Search beta over 1e-1 ... 1e-5 (default)");
  sub->add_option("--target-class", c.target_class, "Target class (remapped index)");
  sub->add_option("--tau", c.tau, "Distillation temperature");
  sub->add_option("--gamma", f.gamma, "Distillation gate (default 0.5 white, 1.0 black)");
  sub->add_option("--seed", f.seed, "Sets all four seeds");
  sub->add_option("--seed-split", f.seed_split, "Seed of the d_eval/d_test split");
  sub->add_option("--seed-teacher", f.seed_teacher, "Teacher initialization and shuffling seed");
  sub->add_option("--seed-student", f.seed_student, "Student initialization and shuffling seed");
  sub->add_option("--seed-gatn", f.seed_gatn, "Generator initialization and shuffling seed");
  sub->add_option("--teacher-epochs", c.teacher_epochs);
  sub->add_option("--student-epochs", c.student_epochs);
  sub->add_option("--gatn-epochs", c.gatn_epochs);
  sub->add_option("--batch-size", f.batch, "Batch size of every trainer");
  sub->add_option("--lr", f.lr, "Learning rate of every trainer");
  sub->add_option("--gatn-hidden", c.gatn_hidden, "Generator hidden layer widths")->delimiter(',');
  sub->add_flag("--residual", c.gatn_residual, "Generator outputs x + delta");
  sub->add_option("--workers", c.workers, "Threads for DTW distance matrices");
  sub->add_option("--out", c.out, "Output directory");
}

void apply_flags(RunConfig& c, const Flags& f) {
  if (!f.delimiter.empty()) c.delimiter = parse_delimiter(f.delimiter);
  if (!f.teacher.empty()) c.teacher = teacher_kind_from_string(f.teacher);
  if (!f.box.empty()) c.box = box_mode_from_string(f.box);
  if (!f.criterion.empty()) c.criterion = criterion_from_string(f.criterion);
  if (!f.alternative.empty()) c.alternative = alternative_from_string(f.alternative);
  if (f.beta) {
    c.beta = *f.beta;
    c.beta_grid = false;
  }
  if (f.beta_grid) c.beta_grid = true;
  if (f.gamma) c.gamma = f.gamma;
  if (f.seed) c.seeds = {*f.seed, *f.seed, *f.seed, *f.seed};
  if (f.seed_split) c.seeds.split = *f.seed_split;
  if (f.seed_teacher) c.seeds.teacher = *f.seed_teacher;
  if (f.seed_student) c.seeds.student = *f.seed_student;
  if (f.seed_gatn) c.seeds.gatn = *f.seed_gatn;
  if (f.batch) c.teacher_batch = c.student_batch = c.gatn_batch = *f.batch;
  if (f.lr) c.teacher_lr = c.student_lr = c.gatn_lr = *f.lr;
}

/// The --config value, read before the full parse so flags can override it.
std::optional<std::string> config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) return argv[i + 1];
    if (std::strncmp(argv[i], "--config=", 9) == 0) return argv[i] + 9;
  }
  return std::nullopt;
}

void print(const StageResult& r) {
  std::cout << r.stage << ": " << to_string(r.status);
  if (!r.hash.empty()) std::cout << " [" << r.hash << "] " << r.dir.string();
  std::cout << '\n';
}

void print_reports(const std::vector<AttackReport>& reports) {
  std::cout << kReportCsvHeader << '\n';
  for (const auto& r : reports) std::cout << to_csv_row(r) << '\n';
}

int run_one(const RunConfig& cfg, const std::string& command, const Logger& log) {
  Pipeline p(cfg, log);
  p.echo_config();
  if (command == "prepare") print(p.prepare());
  else if (command == "train-teacher") print(p.train_teacher());
  else if (command == "distill") print(p.distill());
  else if (command == "attack") print(p.attack());
  else if (command == "evaluate") {
    print(p.evaluate());
    print_reports(p.reports());
  } else {
    for (const auto& r : p.run_all()) print(r);
    print_reports(p.reports());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  Flags flags;
  try {
    if (const auto path = config_path(argc, argv)) cfg = load_config(*path);
  } catch (const std::exception& e) {
    std::cerr << "tsadv: error: " << e.what() << '\n';
    return 2;
  }

  CLI::App app{"Adversarial attacks on time series classifiers via distilled surrogates"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");
  const std::vector<std::pair<std::string, std::string>> commands{
      {"prepare", "Load, preprocess and split a dataset"},
      {"train-teacher", "Train the attacked model"},
      {"distill", "Distill the teacher into a LeNet-5 student"},
      {"attack", "Train the generator (beta grid unless --beta is given)"},
      {"evaluate", "Count adversaries on d_eval and d_test"},
      {"run", "Run every stage, for one or many datasets"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, cfg, flags);
    if (name == "run") {
      sub->add_option("--datasets", flags.datasets, "Datasets to run, looked up in the archive root")->delimiter(',');
      sub->add_flag("--all-datasets", flags.all_datasets, "Run the 42-dataset benchmark list");
      sub->add_flag("--all-variants", flags.all_variants, "Run all four teacher/box combinations");
    }
  }
  auto* report = app.add_subcommand("report", "Aggregate evaluate outputs into tables, plot data and Wilcoxon tests");
  report->add_option("--config", flags.config, "JSON config file; flags override its fields");
  report->add_option("--out", cfg.out, "Output directory");
  report->add_option("--alternative", flags.alternative, "Wilcoxon alternative")
      ->check(CLI::IsMember({"two-sided", "greater", "less"}));

  CLI11_PARSE(app, argc, argv);
  const Logger log = quiet ? Logger{} : Logger{[](const std::string& m) { std::cerr << "[tsadv] " << m << '\n'; }};

  try {
    apply_flags(cfg, flags);
    const auto* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    if (command == "report") {
      const auto s = build_report(cfg.out, cfg.alternative, log);
      std::cout << "report: " << s.datasets.size() << " dataset(s), " << s.reports.size() << " report(s) -> "
                << (fs::path(cfg.out) / "report").string() << '\n';
      for (const auto& t : s.wilcoxon) {
        std::cout << "wilcoxon " << t.a << " vs " << t.b << ": ";
        if (t.result && !t.result->warning) std::cout << "p=" << format_double(t.result->p_value) << " (n=" << t.result->n << ")";
        else std::cout << t.status;
        std::cout << '\n';
      }
      return 0;
    }
    if (command != "run") return run_one(cfg, command, log);

    std::vector<std::string> names = flags.datasets;
    if (flags.all_datasets) names = benchmark_datasets();
    if (names.empty()) names.push_back(cfg.dataset);
    if (names.size() > 1 && !cfg.train_path.empty())
      throw ConfigError("--train/--test name a single dataset; use --archive-root with --datasets");
    std::vector<std::pair<TeacherKind, BoxMode>> combos{{cfg.teacher, cfg.box}};
    if (flags.all_variants) {
      combos.clear();
      for (const auto& v : variants()) combos.emplace_back(v.teacher, v.box);
    }
    int failures = 0;
    for (const auto& name : names)
      for (const auto& [kind, box] : combos) {
        RunConfig c = cfg;
        c.dataset = name;
        c.teacher = kind;
        c.box = box;
        try {
          run_one(c, command, log);
        } catch (const std::exception& e) {
          ++failures;
          std::cerr << "tsadv: error: " << c.dataset_name() << " " << c.variant() << ": " << e.what() << '\n';
          if (names.size() == 1 && combos.size() == 1) return 1;
        }
      }
    if (failures > 0) {
      std::cerr << "tsadv: " << failures << " run(s) failed\n";
      return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "tsadv: error: " << e.what() << '\n';
    return 1;
  }
}
