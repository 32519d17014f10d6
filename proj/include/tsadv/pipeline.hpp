#pragma once

// End-to-end experiment pipeline behind the command line tool. Each stage
// reads the artifacts of the stage before it, writes its own into the output
// directory together with a manifest, and is skipped when the manifest's key
// hash matches the current configuration.
//
// Layout under RunConfig::out:
//   <dataset>/prepare/                train.tsv d_eval.tsv d_test.tsv manifest.json
//   <dataset>/teacher-<kind>/         teacher.model (fcn only) manifest.json
//   <dataset>/<kind>-<box>/distill/   student.model teacher_outputs.json manifest.json
//   <dataset>/<kind>-<box>/attack/    gatn_<k>.model manifest.json
//   <dataset>/<kind>-<box>/evaluate/  reports.json reports.csv grid.dat adversarial_*.tsv manifest.json
//   report/                           summary.* comparison_*.csv plot_*.dat wilcoxon.*

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsadv/attack.hpp"
#include "tsadv/distillation.hpp"
#include "tsadv/error.hpp"
#include "tsadv/evaluation.hpp"
#include "tsadv/grid_search.hpp"
#include "tsadv/models.hpp"
#include "tsadv/nn/serialize.hpp"
#include "tsadv/synthetic.hpp"
#include "tsadv/teacher.hpp"
#include "tsadv/timeseries.hpp"
#include "tsadv/wilcoxon.hpp"

namespace tsadv::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

/// The 42-dataset UCR benchmark list used by batch mode.
inline const std::vector<std::string>& benchmark_datasets() {
  static const std::vector<std::string> names{
      "Car", "ChlorineConcentration", "CinCECGTorso", "Earthquakes", "ECG200", "ECG5000", "ECGFiveDays", "FordA",
      "FordB", "InsectWingbeatSound", "ItalyPowerDemand", "Lightning2", "Lightning7", "MoteStrain",
      "NonInvasiveFetalECGThorax1", "NonInvasiveFetalECGThorax2", "Phoneme", "Plane", "SonyAIBORobotSurface1",
      "SonyAIBORobotSurface2", "StarLightCurves", "Trace", "TwoLeadECG", "Wafer", "AllGestureWiimoteX",
      "AllGestureWiimoteY", "AllGestureWiimoteZ", "DodgerLoopDay", "DodgerLoopGame", "DodgerLoopWeekend",
      "EOGHorizontalSignal", "EOGVerticalSignal", "FreezerRegularTrain", "FreezerSmallTrain", "Fungi",
      "GesturePebbleZ1", "GesturePebbleZ2", "PickupGestureWiimoteZ", "PigAirwayPressure", "PigArtPressure", "PigCVP",
      "ShakeGestureWiimoteZ"};
  return names;
}

inline constexpr const char* kArchiveRootEnv = "TSADV_ARCHIVE_ROOT";

struct Seeds {
  std::uint64_t split = 0;
  std::uint64_t teacher = 0;
  std::uint64_t student = 0;
  std::uint64_t gatn = 0;
};

struct RunConfig {
  std::string dataset;
  std::string train_path;    // default <archive>/<dataset>/<dataset>_TRAIN.tsv
  std::string test_path;     // default <archive>/<dataset>/<dataset>_TEST.tsv
  std::string archive_root;  // default $TSADV_ARCHIVE_ROOT
  bool synthetic = false;
  std::size_t synthetic_train = 64;
  std::size_t synthetic_test = 128;
  std::size_t synthetic_length = 32;
  std::uint64_t synthetic_seed = 1;
  char delimiter = '\t';
  bool znorm = false;

  TeacherKind teacher = TeacherKind::fcn;
  BoxMode box = BoxMode::white;
  Criterion criterion = Criterion::labeled;
  Alternative alternative = Alternative::two_sided;

  double alpha = 1.5;
  double beta = 1e-2;
  bool beta_grid = true;
  int target_class = 1;
  double tau = 10.0;
  std::optional<double> gamma;  // default 0.5 white, 1.0 black
  Seeds seeds;

  std::size_t teacher_epochs = 200;
  std::size_t teacher_batch = 128;
  double teacher_lr = 1e-3;
  std::size_t student_epochs = 200;
  std::size_t student_batch = 128;
  double student_lr = 1e-3;
  std::size_t gatn_epochs = 100;
  std::size_t gatn_batch = 128;
  double gatn_lr = 1e-3;
  std::vector<std::size_t> gatn_hidden{128, 128};
  bool gatn_residual = false;

  unsigned workers = 1;
  std::string out = "tsadv_out";

  double resolved_gamma() const { return gamma.value_or(box == BoxMode::white ? 0.5 : 1.0); }
  SurrogateRoute route() const { return select_surrogate(box, teacher); }
  std::string variant() const { return to_string(teacher) + "-" + to_string(box); }
  std::vector<double> betas() const { return beta_grid ? beta_grid_values() : std::vector<double>{beta}; }

  static std::vector<double> beta_grid_values() { return tsadv::beta_grid(); }

  void validate() const {
    if (dataset.empty() && !synthetic) throw ConfigError("no dataset given (use --dataset or --synthetic)");
    if (!(alpha > 1.0)) throw ConfigError("alpha must be > 1");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (target_class < 0) throw ConfigError("target class must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (gamma && !(*gamma >= 0.0 && *gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
    if (gatn_hidden.empty()) throw ConfigError("the generator needs at least one hidden layer");
    for (auto v : {teacher_batch, student_batch, gatn_batch})
      if (v == 0) throw ConfigError("batch sizes must be >= 1");
    if (out.empty()) throw ConfigError("no output directory");
  }

  std::string dataset_name() const { return dataset.empty() ? std::string("SyntheticBump") : dataset; }
};

inline std::string delimiter_name(char d) {
  switch (d) {
    case '\t': return "tab";
    case ',': return "comma";
    case ' ': return "space";
    default: return std::string(1, d);
  }
}

inline char parse_delimiter(const std::string& s) {
  if (s == "tab" || s == "\\t" || s == "\t") return '\t';
  if (s == "comma" || s == ",") return ',';
  if (s == "space" || s == " ") return ' ';
  if (s.size() == 1) return s[0];
  throw ConfigError("unknown delimiter '" + s + "' (tab, comma, space or a single character)");
}

inline Alternative alternative_from_string(const std::string& s) {
  if (s == "two-sided" || s == "two_sided") return Alternative::two_sided;
  if (s == "greater") return Alternative::greater;
  if (s == "less") return Alternative::less;
  throw ConfigError("unknown alternative '" + s + "' (two-sided, greater or less)");
}

inline std::string to_string(Alternative a) {
  switch (a) {
    case Alternative::greater: return "greater";
    case Alternative::less: return "less";
    default: return "two-sided";
  }
}

/// Every field, with gamma resolved.
inline json to_json(const RunConfig& c) {
  return json{{"dataset", c.dataset},
              {"train_path", c.train_path},
              {"test_path", c.test_path},
              {"archive_root", c.archive_root},
              {"synthetic", c.synthetic},
              {"synthetic_train", c.synthetic_train},
              {"synthetic_test", c.synthetic_test},
              {"synthetic_length", c.synthetic_length},
              {"synthetic_seed", c.synthetic_seed},
              {"delimiter", delimiter_name(c.delimiter)},
              {"znorm", c.znorm},
              {"teacher", to_string(c.teacher)},
              {"box", to_string(c.box)},
              {"criterion", to_string(c.criterion)},
              {"alternative", to_string(c.alternative)},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"beta_grid", c.beta_grid},
              {"target_class", c.target_class},
              {"tau", c.tau},
              {"gamma", c.resolved_gamma()},
              {"seeds", {{"split", c.seeds.split}, {"teacher", c.seeds.teacher}, {"student", c.seeds.student}, {"gatn", c.seeds.gatn}}},
              {"teacher_epochs", c.teacher_epochs},
              {"teacher_batch", c.teacher_batch},
              {"teacher_lr", c.teacher_lr},
              {"student_epochs", c.student_epochs},
              {"student_batch", c.student_batch},
              {"student_lr", c.student_lr},
              {"gatn_epochs", c.gatn_epochs},
              {"gatn_batch", c.gatn_batch},
              {"gatn_lr", c.gatn_lr},
              {"gatn_hidden", c.gatn_hidden},
              {"gatn_residual", c.gatn_residual},
              {"workers", c.workers},
              {"out", c.out}};
}

/// Overlays the fields present in `j` on `base`. Unknown keys are rejected.
inline RunConfig config_from_json(const json& j, RunConfig c = {}) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "dataset") c.dataset = v.get<std::string>();
      else if (key == "train_path") c.train_path = v.get<std::string>();
      else if (key == "test_path") c.test_path = v.get<std::string>();
      else if (key == "archive_root") c.archive_root = v.get<std::string>();
      else if (key == "synthetic") c.synthetic = v.get<bool>();
      else if (key == "synthetic_train") c.synthetic_train = v.get<std::size_t>();
      else if (key == "synthetic_test") c.synthetic_test = v.get<std::size_t>();
      else if (key == "synthetic_length") c.synthetic_length = v.get<std::size_t>();
      else if (key == "synthetic_seed") c.synthetic_seed = v.get<std::uint64_t>();
      else if (key == "delimiter") c.delimiter = parse_delimiter(v.get<std::string>());
      else if (key == "znorm") c.znorm = v.get<bool>();
      else if (key == "teacher") c.teacher = teacher_kind_from_string(v.get<std::string>());
      else if (key == "box") c.box = box_mode_from_string(v.get<std::string>());
      else if (key == "criterion") c.criterion = criterion_from_string(v.get<std::string>());
      else if (key == "alternative") c.alternative = alternative_from_string(v.get<std::string>());
      else if (key == "alpha") c.alpha = v.get<double>();
      else if (key == "beta") c.beta = v.get<double>();
      else if (key == "beta_grid") c.beta_grid = v.get<bool>();
      else if (key == "target_class") c.target_class = v.get<int>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "gamma") c.gamma = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (key == "seeds") {
        for (const auto& [name, s] : v.items()) {
          if (name == "split") c.seeds.split = s.get<std::uint64_t>();
          else if (name == "teacher") c.seeds.teacher = s.get<std::uint64_t>();
          else if (name == "student") c.seeds.student = s.get<std::uint64_t>();
          else if (name == "gatn") c.seeds.gatn = s.get<std::uint64_t>();
          else throw ConfigError("unknown seed '" + name + "'");
        }
      }
      else if (key == "teacher_epochs") c.teacher_epochs = v.get<std::size_t>();
      else if (key == "teacher_batch") c.teacher_batch = v.get<std::size_t>();
      else if (key == "teacher_lr") c.teacher_lr = v.get<double>();
      else if (key == "student_epochs") c.student_epochs = v.get<std::size_t>();
      else if (key == "student_batch") c.student_batch = v.get<std::size_t>();
      else if (key == "student_lr") c.student_lr = v.get<double>();
      else if (key == "gatn_epochs") c.gatn_epochs = v.get<std::size_t>();
      else if (key == "gatn_batch") c.gatn_batch = v.get<std::size_t>();
      else if (key == "gatn_lr") c.gatn_lr = v.get<double>();
      else if (key == "gatn_hidden") c.gatn_hidden = v.get<std::vector<std::size_t>>();
      else if (key == "gatn_residual") c.gatn_residual = v.get<bool>();
      else if (key == "workers") c.workers = v.get<unsigned>();
      else if (key == "out") c.out = v.get<std::string>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

/// 64-bit FNV-1a, as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string hash_json(const json& j) { return fnv1a_hex(j.dump()); }

inline std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return fnv1a_hex(os.str());
}

enum class StageStatus { ran, up_to_date, not_needed };

inline std::string to_string(StageStatus s) {
  switch (s) {
    case StageStatus::ran: return "done";
    case StageStatus::up_to_date: return "up to date";
    default: return "not needed";
  }
}

struct StageResult {
  std::string stage;
  StageStatus status = StageStatus::ran;
  fs::path dir;
  std::string hash;
};

using Logger = std::function<void(const std::string&)>;

class Pipeline {
public:
  explicit Pipeline(RunConfig cfg, Logger log = {}) : cfg_(std::move(cfg)), log_(std::move(log)) {
    cfg_.validate();
    if (cfg_.archive_root.empty())
      if (const char* env = std::getenv(kArchiveRootEnv)) cfg_.archive_root = env;
  }

  const RunConfig& config() const noexcept { return cfg_; }

  fs::path dataset_dir() const { return fs::path(cfg_.out) / cfg_.dataset_name(); }
  fs::path prepare_dir() const { return dataset_dir() / "prepare"; }
  fs::path teacher_dir() const { return dataset_dir() / ("teacher-" + to_string(cfg_.teacher)); }
  fs::path variant_dir() const { return dataset_dir() / cfg_.variant(); }
  fs::path distill_dir() const { return variant_dir() / "distill"; }
  fs::path attack_dir() const { return variant_dir() / "attack"; }
  fs::path evaluate_dir() const { return variant_dir() / "evaluate"; }

  std::pair<std::string, std::string> source_paths() const {
    if (!cfg_.train_path.empty() || !cfg_.test_path.empty()) {
      if (cfg_.train_path.empty() || cfg_.test_path.empty())
        throw ConfigError("give both --train and --test, or neither");
      return {cfg_.train_path, cfg_.test_path};
    }
    if (cfg_.archive_root.empty())
      throw ConfigError("no data source: give --train/--test, --archive-root, set " + std::string(kArchiveRootEnv) +
                        ", or use --synthetic");
    const auto dir = fs::path(cfg_.archive_root) / cfg_.dataset;
    return {(dir / (cfg_.dataset + "_TRAIN.tsv")).string(), (dir / (cfg_.dataset + "_TEST.tsv")).string()};
  }

  // ---- stage keys: everything that determines a stage's output ----

  json prepare_key() const {
    if (prepare_key_) return *prepare_key_;
    json k{{"dataset", cfg_.dataset_name()}, {"split_seed", cfg_.seeds.split}, {"znorm", cfg_.znorm}};
    if (cfg_.synthetic) {
      k["source"] = {{"synthetic", true},
                     {"train", cfg_.synthetic_train},
                     {"test", cfg_.synthetic_test},
                     {"length", cfg_.synthetic_length},
                     {"seed", cfg_.synthetic_seed}};
    } else {
      const auto [train, test] = source_paths();
      for (const auto& p : {train, test})
        if (!fs::exists(p)) throw Error("input file '" + p + "' does not exist");
      k["source"] = {{"train_hash", file_hash(train)}, {"test_hash", file_hash(test)},
                     {"delimiter", delimiter_name(cfg_.delimiter)}};
    }
    prepare_key_ = k;
    return k;
  }

  json teacher_key() const {
    json k{{"prepare", hash_json(prepare_key())}, {"teacher", to_string(cfg_.teacher)}};
    if (cfg_.teacher == TeacherKind::fcn)
      k["train"] = {{"seed", cfg_.seeds.teacher}, {"epochs", cfg_.teacher_epochs}, {"batch", cfg_.teacher_batch},
                    {"lr", cfg_.teacher_lr}};
    return k;
  }

  json distill_key() const {
    return json{{"teacher", hash_json(teacher_key())}, {"box", to_string(cfg_.box)},
                {"gamma", cfg_.resolved_gamma()},     {"tau", cfg_.tau},
                {"seed", cfg_.seeds.student},         {"epochs", cfg_.student_epochs},
                {"batch", cfg_.student_batch},        {"lr", cfg_.student_lr}};
  }

  json attack_key() const {
    const auto upstream = cfg_.route() == SurrogateRoute::student ? hash_json(distill_key()) : hash_json(teacher_key());
    return json{{"surrogate", upstream},        {"box", to_string(cfg_.box)},   {"alpha", cfg_.alpha},
                {"betas", cfg_.betas()},        {"target", cfg_.target_class},  {"seed", cfg_.seeds.gatn},
                {"epochs", cfg_.gatn_epochs},   {"batch", cfg_.gatn_batch},     {"lr", cfg_.gatn_lr},
                {"hidden", cfg_.gatn_hidden},   {"residual", cfg_.gatn_residual}};
  }

  json evaluate_key() const {
    return json{{"attack", hash_json(attack_key())}, {"criterion", to_string(cfg_.criterion)}};
  }

  // ---- stages ----

  StageResult prepare() {
    const auto key = prepare_key();
    StageResult r{"prepare", StageStatus::ran, prepare_dir(), hash_json(key)};
    if (up_to_date(r, {"train.tsv", "d_eval.tsv", "d_test.tsv"})) return r;
    log("prepare: " + cfg_.dataset_name());

    Dataset train, test;
    if (cfg_.synthetic) {
      synthetic::BumpOptions opt;
      opt.length = cfg_.synthetic_length;
      train = synthetic::bump_dataset(cfg_.synthetic_train, cfg_.synthetic_seed, opt, cfg_.dataset_name());
      test = synthetic::bump_dataset(cfg_.synthetic_test, cfg_.synthetic_seed + 1000, opt, cfg_.dataset_name());
    } else {
      const auto [train_path, test_path] = source_paths();
      train = remap_labels(load_ucr(train_path, cfg_.delimiter));
      test = apply_label_map(load_ucr(test_path, cfg_.delimiter), train.label_map);
    }
    std::size_t len = 0;
    for (const auto* ds : {&train, &test})
      for (const auto& s : ds->series) len = std::max(len, trim_trailing_missing(s).size());
    train = prepare_dataset(train, cfg_.znorm, len);
    test = prepare_dataset(test, cfg_.znorm, len);
    train.name = test.name = cfg_.dataset_name();
    const auto split = stratified_split(test, cfg_.seeds.split);

    fs::create_directories(r.dir);
    write_ucr(train, (r.dir / "train.tsv").string());
    write_ucr(split.d_eval, (r.dir / "d_eval.tsv").string());
    write_ucr(split.d_test, (r.dir / "d_test.tsv").string());
    json label_map = json::object();
    for (const auto& [raw, idx] : train.label_map) label_map[std::to_string(raw)] = idx;
    json m = manifest("prepare", key, r.hash);
    m["length"] = len;
    m["num_classes"] = train.num_classes;
    m["label_map"] = label_map;
    m["class_counts"] = {{"train", class_counts(train)},
                         {"d_eval", class_counts(split.d_eval)},
                         {"d_test", class_counts(split.d_test)}};
    m["sizes"] = {{"train", train.size()}, {"d_eval", split.d_eval.size()}, {"d_test", split.d_test.size()}};
    write_manifest(r.dir, m);
    return r;
  }

  StageResult train_teacher() {
    const auto key = teacher_key();
    StageResult r{"train-teacher", StageStatus::ran, teacher_dir(), hash_json(key)};
    const std::vector<std::string> files = cfg_.teacher == TeacherKind::fcn ? std::vector<std::string>{"teacher.model"}
                                                                             : std::vector<std::string>{};
    if (up_to_date(r, files)) return r;
    const auto data = load_prepared();
    log("train-teacher: " + to_string(cfg_.teacher) + " on " + cfg_.dataset_name());
    fs::create_directories(r.dir);
    json m = manifest("train-teacher", key, r.hash);
    std::unique_ptr<Teacher> teacher;
    if (cfg_.teacher == TeacherKind::fcn) {
      TrainHyper hyper;
      hyper.epochs = cfg_.teacher_epochs;
      hyper.batch_size = cfg_.teacher_batch;
      hyper.learning_rate = cfg_.teacher_lr;
      hyper.seed = cfg_.seeds.teacher;
      auto model = train_classifier(build_fcn<float>({Architecture::fcn, data.length, data.num_classes}, cfg_.seeds.teacher),
                                    data.train, hyper);
      nn::save_model(model, (r.dir / "teacher.model").string());
      m["train_accuracy"] = model.training_log.empty() ? 0.0 : model.training_log.back().metric;
      teacher = std::make_unique<FcnTeacher>(std::move(model));
    } else {
      teacher = std::make_unique<Dtw1nnTeacher>(data.train, cfg_.workers);
      m["reference"] = "prepare/train.tsv";
    }
    for (const auto* split : {&data.d_eval, &data.d_test}) {
      const auto pred = teacher->predict(split->values());
      const auto y = split->labels();
      std::size_t ok = 0;
      for (std::size_t i = 0; i < y.size(); ++i) ok += pred[i] == y[i];
      m[split == &data.d_eval ? "d_eval_accuracy" : "d_test_accuracy"] =
          static_cast<double>(ok) / static_cast<double>(y.size());
    }
    write_manifest(r.dir, m);
    return r;
  }

  StageResult distill() {
    if (cfg_.route() == SurrogateRoute::teacher_direct) {
      log("distill: not needed, the white-box fcn attack differentiates through the teacher");
      return {"distill", StageStatus::not_needed, distill_dir(), {}};
    }
    const auto key = distill_key();
    StageResult r{"distill", StageStatus::ran, distill_dir(), hash_json(key)};
    if (up_to_date(r, {"student.model", "teacher_outputs.json"})) return r;
    const auto data = load_prepared();
    const auto teacher = load_teacher(data);
    log("distill: " + cfg_.variant() + " on " + cfg_.dataset_name());

    const auto x = data.d_eval.values();
    const auto mode = cfg_.box == BoxMode::white ? OutputMode::soft : OutputMode::hard;
    const auto outputs = teacher_outputs(*teacher, x, mode);
    DistillConfig dc;
    dc.gamma = cfg_.resolved_gamma();
    dc.tau = cfg_.tau;
    dc.epochs = cfg_.student_epochs;
    dc.batch_size = cfg_.student_batch;
    dc.learning_rate = cfg_.student_lr;
    dc.seed = cfg_.seeds.student;
    auto res = train_student(build_lenet5_1d<float>({Architecture::lenet5, data.length, data.num_classes}, cfg_.seeds.student),
                             x, outputs, dc, cfg_.box);

    fs::create_directories(r.dir);
    save_teacher_outputs(outputs, (r.dir / "teacher_outputs.json").string(), json{{"hash", r.hash}});
    nn::save_model(res.model, (r.dir / "student.model").string());
    json m = manifest("distill", key, r.hash);
    m["fidelity"] = res.fidelity;
    m["checkpoint_fidelity"] = res.checkpoint_fidelity;
    m["output_mode"] = to_string(mode);
    write_manifest(r.dir, m);
    return r;
  }

  StageResult attack() {
    const auto key = attack_key();
    StageResult r{"attack", StageStatus::ran, attack_dir(), hash_json(key)};
    const auto betas = cfg_.betas();
    std::vector<std::string> files;
    for (std::size_t i = 0; i < betas.size(); ++i) files.push_back(gatn_file(i));
    if (up_to_date(r, files)) return r;
    const auto data = load_prepared();
    const auto teacher = load_teacher(data);
    const auto surrogate = load_surrogate();
    log("attack: " + cfg_.variant() + " on " + cfg_.dataset_name() + " (" + std::to_string(betas.size()) + " beta value" +
        (betas.size() == 1 ? "" : "s") + ")");

    AttackConfig ac = attack_config();
    const auto grid = beta_grid_search(ac, surrogate, cfg_.route(), data.d_eval, *teacher, betas, r.hash);
    fs::create_directories(r.dir);
    json runs = json::array();
    for (std::size_t i = 0; i < grid.runs.size(); ++i) {
      nn::save_model(grid.runs[i].gatn, (r.dir / gatn_file(i)).string());
      json hist = json::array();
      for (const auto& e : grid.runs[i].history)
        hist.push_back({e.loss, e.input_loss, e.output_loss, e.surrogate_success});
      runs.push_back({{"beta", betas[i]}, {"model", gatn_file(i)}, {"report", tsadv::to_json(grid.reports[i])},
                      {"history", hist}});
    }
    json m = manifest("attack", key, r.hash);
    m["route"] = to_string(cfg_.route());
    m["runs"] = runs;
    m["best"] = grid.best;
    m["best_beta"] = betas[grid.best];
    write_manifest(r.dir, m);
    return r;
  }

  StageResult evaluate() {
    const auto key = evaluate_key();
    StageResult r{"evaluate", StageStatus::ran, evaluate_dir(), hash_json(key)};
    if (up_to_date(r, {"reports.json", "reports.csv"})) return r;
    const auto data = load_prepared();
    const auto teacher = load_teacher(data);
    const auto am = require_manifest(attack_dir(), hash_json(attack_key()), "attack");
    const std::size_t best = am.at("best").get<std::size_t>();
    const auto& best_run = am.at("runs").at(best);
    log("evaluate: " + cfg_.variant() + " on " + cfg_.dataset_name() + " (beta " +
        format_double(best_run.at("beta").get<double>()) + ")");

    AttackRun run;
    run.config = attack_config();
    run.config.beta = best_run.at("beta").get<double>();
    run.route = cfg_.route();
    run.surrogate = load_surrogate();
    run.gatn = nn::load_model<float>((attack_dir() / best_run.at("model").get<std::string>()).string());
    run.provenance = am.at("hash").get<std::string>();

    auto on_eval = evaluate_attack(run, *teacher, data.d_eval, SplitKind::d_eval, cfg_.criterion);
    auto on_test = generalization_eval(run, *teacher, data.d_test, cfg_.criterion);
    for (auto* rep : {&on_eval, &on_test}) rep->dataset = cfg_.dataset_name();

    fs::create_directories(r.dir);
    write_reports_csv({on_eval, on_test}, (r.dir / "reports.csv").string());
    {
      std::ofstream out(r.dir / "reports.json");
      out << json{{"reports", {tsadv::to_json(on_eval), tsadv::to_json(on_test)}}, {"hash", r.hash}}.dump(1) << '\n';
    }
    {
      std::ofstream out(r.dir / "grid.dat");
      out << "# beta num_adversaries mse_adversaries mse_all (d_eval, labeled)\n";
      for (const auto& g : am.at("runs")) {
        const auto rep = report_from_json(g.at("report"));
        out << format_double(rep.beta) << ' ' << rep.num_adversaries << ' '
            << (rep.mse_adversaries ? format_double(*rep.mse_adversaries) : std::string("NA")) << ' '
            << format_double(rep.mse_all) << '\n';
      }
    }
    write_adversarial(run, data.d_eval, (r.dir / "adversarial_d_eval.tsv").string());
    write_adversarial(run, data.d_test, (r.dir / "adversarial_d_test.tsv").string());
    json m = manifest("evaluate", key, r.hash);
    m["best_beta"] = run.config.beta;
    m["reports"] = {tsadv::to_json(on_eval), tsadv::to_json(on_test)};
    write_manifest(r.dir, m);
    return r;
  }

  /// prepare -> train-teacher -> distill -> attack -> evaluate.
  std::vector<StageResult> run_all() {
    std::vector<StageResult> out;
    out.push_back(prepare());
    out.push_back(train_teacher());
    out.push_back(distill());
    out.push_back(attack());
    out.push_back(evaluate());
    return out;
  }

  /// The evaluate reports of this configuration.
  std::vector<AttackReport> reports() const {
    const auto m = require_manifest(evaluate_dir(), hash_json(evaluate_key()), "evaluate");
    std::vector<AttackReport> out;
    for (const auto& j : m.at("reports")) out.push_back(report_from_json(j));
    return out;
  }

  struct Prepared {
    Dataset train, d_eval, d_test;
    std::size_t length = 0;
    std::size_t num_classes = 0;
  };

  Prepared load_prepared() const {
    const auto m = require_manifest(prepare_dir(), hash_json(prepare_key()), "prepare");
    std::map<int, int> label_map;
    for (const auto& [raw, idx] : m.at("label_map").items()) label_map[std::stoi(raw)] = idx.get<int>();
    auto read = [&](const char* file) {
      auto ds = apply_label_map(load_ucr((prepare_dir() / file).string(), '\t'), label_map);
      ds.name = cfg_.dataset_name();
      return ds;
    };
    Prepared p{read("train.tsv"), read("d_eval.tsv"), read("d_test.tsv"), m.at("length").get<std::size_t>(),
               m.at("num_classes").get<std::size_t>()};
    return p;
  }

  std::unique_ptr<Teacher> load_teacher(const Prepared& data) const {
    require_manifest(teacher_dir(), hash_json(teacher_key()), "train-teacher");
    if (cfg_.teacher == TeacherKind::fcn)
      return std::make_unique<FcnTeacher>(nn::load_model<float>((teacher_dir() / "teacher.model").string()));
    return std::make_unique<Dtw1nnTeacher>(data.train, cfg_.workers);
  }

  std::shared_ptr<const nn::Model<float>> load_surrogate() const {
    if (cfg_.route() == SurrogateRoute::teacher_direct) {
      require_manifest(teacher_dir(), hash_json(teacher_key()), "train-teacher");
      return std::make_shared<const nn::Model<float>>(nn::load_model<float>((teacher_dir() / "teacher.model").string()));
    }
    require_manifest(distill_dir(), hash_json(distill_key()), "distill");
    return std::make_shared<const nn::Model<float>>(nn::load_model<float>((distill_dir() / "student.model").string()));
  }

  AttackConfig attack_config() const {
    AttackConfig ac;
    ac.alpha = cfg_.alpha;
    ac.beta = cfg_.beta;
    ac.target_class = cfg_.target_class;
    ac.box = cfg_.box;
    ac.teacher_kind = cfg_.teacher;
    ac.seed = cfg_.seeds.gatn;
    ac.epochs = cfg_.gatn_epochs;
    ac.batch_size = cfg_.gatn_batch;
    ac.learning_rate = cfg_.gatn_lr;
    ac.hidden_units = cfg_.gatn_hidden;
    ac.residual = cfg_.gatn_residual;
    return ac;
  }

  /// Writes the resolved configuration next to the dataset's artifacts.
  void echo_config() const {
    fs::create_directories(dataset_dir());
    std::ofstream out(dataset_dir() / ("config." + cfg_.variant() + ".json"));
    if (!out) throw Error("cannot write to '" + dataset_dir().string() + "'");
    out << to_json(cfg_).dump(2) << '\n';
  }

private:
  static std::string gatn_file(std::size_t i) { return "gatn_" + std::to_string(i) + ".model"; }

  json manifest(const std::string& stage, const json& key, const std::string& hash) const {
    return json{{"stage", stage},
                {"dataset", cfg_.dataset_name()},
                {"key", key},
                {"hash", hash},
                {"seeds", to_json(cfg_).at("seeds")},
                {"config", to_json(cfg_)}};
  }

  static void write_manifest(const fs::path& dir, const json& m) {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw Error("cannot write '" + (dir / "manifest.json").string() + "'");
    out << m.dump(1) << '\n';
  }

  static std::optional<json> read_manifest(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) return std::nullopt;
    try {
      return json::parse(in);
    } catch (const json::exception&) {
      return std::nullopt;
    }
  }

  /// Loads an upstream manifest, or explains which command must run first.
  static json require_manifest(const fs::path& dir, const std::string& hash, const std::string& command) {
    const auto m = read_manifest(dir);
    if (!m)
      throw MissingArtifactError("no " + command + " output in '" + dir.string() + "'; run `tsadv " + command +
                                 "` first");
    if (m->value("hash", std::string()) != hash)
      throw MissingArtifactError("the " + command + " output in '" + dir.string() +
                                 "' was produced with a different configuration; rerun `tsadv " + command + "`");
    return *m;
  }

  bool up_to_date(StageResult& r, const std::vector<std::string>& files) const {
    const auto m = read_manifest(r.dir);
    if (!m || m->value("hash", std::string()) != r.hash) return false;
    for (const auto& f : files)
      if (!fs::exists(r.dir / f)) return false;
    r.status = StageStatus::up_to_date;
    log(r.stage + ": up to date (" + r.hash + ")");
    return true;
  }

  static void write_adversarial(const AttackRun& run, const Dataset& split, const std::string& path) {
    const auto gen = generate(run, split.values());
    Dataset adv = split;
    for (std::size_t i = 0; i < adv.size(); ++i) adv.series[i].values() = gen.x_hat[i];
    write_ucr(adv, path);
  }

  void log(const std::string& msg) const {
    if (log_) log_(msg);
  }

  RunConfig cfg_;
  Logger log_;
  mutable std::optional<json> prepare_key_;
};

// ---- aggregation over datasets and attack variants ----

struct Variant {
  TeacherKind teacher;
  BoxMode box;
  std::string name() const { return to_string(teacher) + "-" + to_string(box); }
};

/// The four attacks compared in the summary tables.
inline const std::array<Variant, 4>& variants() {
  static const std::array<Variant, 4> v{{{TeacherKind::fcn, BoxMode::black},
                                         {TeacherKind::fcn, BoxMode::white},
                                         {TeacherKind::dtw1nn, BoxMode::black},
                                         {TeacherKind::dtw1nn, BoxMode::white}}};
  return v;
}

struct PairwiseTest {
  std::string a, b;
  std::size_t datasets = 0;  // datasets where both variants have results
  std::optional<WilcoxonResult> result;
  std::string status;  // "ok", "all differences zero", or why the test could not run
};

struct ReportSummary {
  std::vector<AttackReport> reports;
  std::vector<PairwiseTest> wilcoxon;  // upper triangle over variants(), row-major
  std::vector<std::string> datasets;
};

inline json to_json(const PairwiseTest& t) {
  json j{{"a", t.a}, {"b", t.b}, {"datasets", t.datasets}, {"status", t.status}};
  if (t.result) {
    j["statistic"] = t.result->statistic;
    j["w_plus"] = t.result->w_plus;
    j["w_minus"] = t.result->w_minus;
    j["p_value"] = t.result->p_value;
    j["n"] = t.result->n;
    j["exact"] = t.result->exact;
  }
  return j;
}

/// Pairwise signed-rank tests on per-dataset adversary counts.
inline std::vector<PairwiseTest> wilcoxon_matrix(const std::vector<AttackReport>& reports, SplitKind split,
                                                 Alternative alt = Alternative::two_sided) {
  std::map<std::string, std::map<std::string, double>> counts;  // variant -> dataset -> count
  for (const auto& r : reports)
    if (r.split == split) counts[Variant{r.teacher, r.box}.name()][r.dataset] = static_cast<double>(r.num_adversaries);
  std::vector<PairwiseTest> out;
  const auto& v = variants();
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      PairwiseTest t{v[i].name(), v[j].name(), 0, std::nullopt, {}};
      std::vector<double> a, b;
      for (const auto& [ds, ca] : counts[t.a]) {
        const auto it = counts[t.b].find(ds);
        if (it == counts[t.b].end()) continue;
        a.push_back(ca);
        b.push_back(it->second);
      }
      t.datasets = a.size();
      try {
        t.result = wilcoxon_signed_rank(a, b, alt);
        t.status = t.result->warning ? "all differences zero" : "ok";
      } catch (const Error& e) {
        t.status = e.what();
      }
      out.push_back(std::move(t));
    }
  return out;
}

/// Collects every evaluate output under `out` and writes the summary tables,
/// plot data and the Wilcoxon matrix into `out/report`.
inline ReportSummary build_report(const fs::path& out, Alternative alt = Alternative::two_sided, const Logger& log = {}) {
  if (!fs::is_directory(out)) throw MissingArtifactError("output directory '" + out.string() + "' does not exist");
  ReportSummary s;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(out))
    if (entry.is_directory() && entry.path().filename() != "report") dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    bool any = false;
    for (const auto& v : variants()) {
      std::ifstream in(d / v.name() / "evaluate" / "reports.json");
      if (!in) continue;
      const auto doc = json::parse(in);
      for (const auto& j : doc.at("reports")) s.reports.push_back(report_from_json(j));
      any = true;
    }
    if (any) s.datasets.push_back(d.filename().string());
  }
  if (s.reports.empty())
    throw MissingArtifactError("no evaluate outputs under '" + out.string() + "'; run `tsadv evaluate` first");
  if (log) log("report: " + std::to_string(s.datasets.size()) + " dataset(s), " + std::to_string(s.reports.size()) + " report(s)");

  const auto dir = out / "report";
  fs::create_directories(dir);
  write_reports_csv(s.reports, (dir / "summary.csv").string());
  json all = json::array();
  for (const auto& r : s.reports) all.push_back(tsadv::to_json(r));

  // dataset -> variant -> report, per split
  auto table = [&](SplitKind split) {
    std::map<std::string, std::map<std::string, const AttackReport*>> t;
    for (const auto& r : s.reports)
      if (r.split == split) t[r.dataset][Variant{r.teacher, r.box}.name()] = &r;
    return t;
  };
  json tests = json::object();
  for (auto split : {SplitKind::d_eval, SplitKind::d_test}) {
    const auto t = table(split);
    const auto tag = to_string(split);
    std::ofstream csv(dir / ("comparison_" + tag + ".csv"));
    std::ofstream dat(dir / ("plot_adversaries_" + tag + ".dat"));
    csv << "dataset";
    dat << "# dataset";
    for (const auto& v : variants()) {
      csv << ',' << v.name() << "_adversaries," << v.name() << "_mse";
      dat << ' ' << v.name();
    }
    csv << '\n';
    dat << '\n';
    for (const auto& [ds, row] : t) {
      csv << ds;
      dat << ds;
      for (const auto& v : variants()) {
        const auto it = row.find(v.name());
        if (it == row.end()) {
          csv << ",NA,NA";
          dat << " NA";
          continue;
        }
        const auto& r = *it->second;
        csv << ',' << r.num_adversaries << ','
            << (r.mse_adversaries ? format_double(*r.mse_adversaries) : std::string("NA"));
        dat << ' ' << r.num_adversaries;
      }
      csv << '\n';
      dat << '\n';
    }
    const auto m = wilcoxon_matrix(s.reports, split, alt);
    json arr = json::array();
    for (const auto& p : m) arr.push_back(to_json(p));
    tests[tag] = arr;
    if (split == SplitKind::d_eval) s.wilcoxon = m;
  }
  // d_eval versus d_test counts per variant, one file each.
  const auto te = table(SplitKind::d_eval), tt = table(SplitKind::d_test);
  for (const auto& v : variants()) {
    std::ostringstream body;
    for (const auto& [ds, row] : te) {
      const auto a = row.find(v.name());
      if (a == row.end()) continue;
      const auto trow = tt.find(ds);
      std::string test_count = "NA";
      if (trow != tt.end())
        if (const auto b = trow->second.find(v.name()); b != trow->second.end())
          test_count = std::to_string(b->second->num_adversaries);
      body << ds << ' ' << a->second->num_adversaries << ' ' << test_count << '\n';
    }
    if (body.str().empty()) continue;
    std::ofstream dat(dir / ("plot_generalization_" + v.name() + ".dat"));
    dat << "# dataset d_eval_adversaries d_test_adversaries\n" << body.str();
  }
  {
    std::ofstream csv(dir / "wilcoxon.csv");
    csv << "split,a,b,datasets,statistic,p_value,exact,status\n";
    for (const auto& [tag, arr] : tests.items())
      for (const auto& p : arr) {
        csv << tag << ',' << p.at("a").get<std::string>() << ',' << p.at("b").get<std::string>() << ','
            << p.at("datasets").get<std::size_t>() << ',';
        if (p.contains("p_value"))
          csv << format_double(p.at("statistic").get<double>()) << ',' << format_double(p.at("p_value").get<double>())
              << ',' << (p.at("exact").get<bool>() ? "true" : "false");
        else
          csv << "NA,NA,NA";
        auto status = p.at("status").get<std::string>();
        std::replace(status.begin(), status.end(), ',', ';');
        csv << ',' << status << '\n';
      }
  }
  {
    std::ofstream js(dir / "wilcoxon.json");
    js << json{{"alternative", to_string(alt)}, {"tests", tests}}.dump(1) << '\n';
  }
  {
    std::ofstream js(dir / "summary.json");
    js << json{{"datasets", s.datasets}, {"reports", all}}.dump(1) << '\n';
  }
  return s;
}

}  // namespace tsadv::pipeline
