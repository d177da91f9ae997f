#include "trainspeed/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "trainspeed/akf.hpp"
#include "trainspeed/architectures.hpp"
#include "trainspeed/errors.hpp"
#include "trainspeed/eval.hpp"
#include "trainspeed/hpo.hpp"
#include "trainspeed/rng.hpp"
#include "trainspeed/signals.hpp"
#include "trainspeed/simulator.hpp"

namespace trainspeed::cli {

namespace {

namespace fs = std::filesystem;

/// Bad flag combinations found after parsing; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 42;
  std::string out_dir = ".";
  bool quiet = false;
};

struct SimulateArgs {
  std::string scenario;
  bool benchmark_suite = false;
  std::string out;
};

struct TrainArgs {
  std::string data;
  std::string arch;
  std::string config;
  bool optimal = false;
  std::size_t epochs = 40;
  std::string optimizer = "sgd";
  double split_ratio = 0.8;
};

struct SearchArgs {
  std::string data;
  std::string arch;
  std::size_t trials = 30;
  std::size_t epoch_budget = 60;
  std::string optimizer = "sgd";
  double split_ratio = 0.8;
};

struct EvaluateArgs {
  std::string data;
  std::vector<std::string> estimators{"akf"};
  std::vector<std::string> checkpoints;
  std::string akf_config;
};

/// Progress output, silenced by --quiet. Artifact paths bypass it.
class Printer {
 public:
  Printer(std::ostream& out, bool quiet) : out_(out), quiet_(quiet) {}

  std::ostream& info() { return quiet_ ? null_ : out_; }
  void artifact(const fs::path& p) { out_ << p.string() << '\n'; }

 private:
  std::ostream& out_;
  bool quiet_;
  std::ostringstream null_;
};

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path under(const Globals& g, const fs::path& p) { return p.is_absolute() ? p : fs::path(g.out_dir) / p; }

void ensure_out_dir(const Globals& g) {
  std::error_code ec;
  fs::create_directories(g.out_dir, ec);
  if (ec) throw IoError("cannot create " + g.out_dir + ": " + ec.message());
}

std::vector<signals::TrainRun> load_data(const fs::path& csv) {
  auto runs = signals::load_runs(csv);
  const auto manifest = signals::manifest_path(csv);
  if (fs::exists(manifest)) signals::apply_manifest(runs, manifest);
  return runs;
}

arch::Arch parse_arch(const std::string& name) {
  try {
    return arch::arch_from_string(name);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

nn::OptimizerKind parse_optimizer(const std::string& name) {
  try {
    return nn::optimizer_from_string(name);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

int cmd_simulate(const Globals& g, const SimulateArgs& a, Printer& p) {
  if (a.benchmark_suite == !a.scenario.empty()) throw UsageError("simulate needs exactly one of --scenario or --benchmark-suite");
  std::vector<signals::TrainRun> runs;
  if (a.benchmark_suite) {
    runs = sim::make_benchmark_suite(g.seed);
  } else {
    const auto j = read_json(a.scenario);
    const auto entries = j.is_array() ? j : nlohmann::json::array({j});
    for (const auto& e : entries) {
      auto spec = e.get<sim::ScenarioSpec>();
      if (!e.contains("seed")) spec.seed = derive_seed(g.seed, "sim/" + spec.run_id);
      runs.push_back(sim::simulate(spec));
    }
  }
  ensure_out_dir(g);
  const auto csv = under(g, a.out);
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  signals::save_runs(runs, csv);
  const auto manifest = signals::manifest_path(csv);
  signals::save_manifest(runs, manifest);

  std::size_t wsp = 0, samples = 0;
  for (const auto& r : runs) {
    double peak = 0.0;
    for (const auto& s : r.samples) peak = std::max(peak, s.train_speed.value_or(0.0));
    wsp += r.has_wsp ? 1 : 0;
    samples += r.size();
    p.info() << r.run_id << "  role=" << signals::to_string(r.role) << "  samples=" << r.size()
             << "  wsp=" << (r.has_wsp ? "yes" : "no") << "  peak=" << signals::format_double(peak) << " m/s\n";
  }
  p.info() << runs.size() << " runs, " << samples << " samples: " << runs.size() - wsp << " without WSP, " << wsp
           << " with WSP\n";
  p.artifact(csv);
  p.artifact(manifest);
  return kExitOk;
}

int cmd_train(const Globals& g, const TrainArgs& a, Printer& p) {
  const auto which = parse_arch(a.arch);
  if (a.optimal == !a.config.empty()) throw UsageError("train needs exactly one of --config or --optimal");
  const auto optimizer = parse_optimizer(a.optimizer);
  if (!(a.split_ratio > 0.0 && a.split_ratio < 1.0)) throw UsageError("--split-ratio must lie in (0, 1)");

  arch::ArchConfig config;
  if (a.optimal) {
    config = arch::optimal_config(which);
  } else {
    config = read_json(a.config).get<arch::ArchConfig>();
    if (config.arch != which) throw UsageError("--config describes " + arch::to_string(config.arch) + ", not " + a.arch);
  }
  arch::validate(config);

  const auto runs = load_data(a.data);
  const auto split = dataset::make_split(runs, config.history, {}, a.split_ratio, derive_seed(g.seed, "split"));
  p.info() << arch::to_string(which) << ": " << split.train.size() << " train / " << split.validation.size()
           << " validation windows, history " << config.history << '\n';

  nn::TrainerConfig trainer;
  trainer.learning_rate = config.learning_rate;
  trainer.batch_size = config.batch_size;
  trainer.epochs = a.epochs;
  trainer.optimizer = optimizer;
  trainer.seed = derive_seed(g.seed, "train");

  auto network = arch::build(config, derive_seed(g.seed, "init"));
  arch::TrainedModel model{std::move(network), {}, 0, false};
  if (a.epochs > 0) {
    model = arch::train(std::move(model.network), split, trainer, [&](std::size_t epoch, double val) {
      p.info() << "epoch " << epoch << "  val_loss " << signals::format_double(val) << '\n';
      return true;
    });
  }

  ensure_out_dir(g);
  const auto checkpoint = under(g, "checkpoint_" + arch::to_string(which) + ".json");
  const auto history = under(g, "history.csv");
  arch::save_checkpoint(model, checkpoint);
  arch::save_history_csv(model.history, history);
  if (model.history.empty()) {
    p.info() << "no epochs run; checkpoint holds initialized weights\n";
  } else {
    p.info() << "final val_loss " << signals::format_double(model.history.back().val_loss) << " after "
             << model.epochs_trained << " epochs\n";
  }
  p.artifact(checkpoint);
  p.artifact(history);
  return kExitOk;
}

int cmd_search(const Globals& g, const SearchArgs& a, Printer& p) {
  const auto which = parse_arch(a.arch);
  if (a.trials < 1) throw UsageError("--trials must be at least 1");
  if (a.epoch_budget < 1) throw UsageError("--epoch-budget must be at least 1");
  if (!(a.split_ratio > 0.0 && a.split_ratio < 1.0)) throw UsageError("--split-ratio must lie in (0, 1)");

  hpo::StudyOptions options;
  options.budget = a.trials;
  options.epoch_budget = a.epoch_budget;
  options.seed = g.seed;
  options.optimizer = parse_optimizer(a.optimizer);
  options.split_ratio = a.split_ratio;

  const auto space = hpo::table1_space(which);
  hpo::SplitCache splits(load_data(a.data), options.norm, options.split_ratio, derive_seed(g.seed, "split"));
  const auto study = hpo::run_study(which, space, splits, options);

  ensure_out_dir(g);
  const auto log = under(g, "study.jsonl");
  const auto summary = under(g, "study_summary.json");
  const auto best = under(g, "best_config.json");
  const auto space_file = under(g, "search_space.json");
  hpo::write_study(study, log, summary);
  write_json(best, study.best.config);
  write_json(space_file, hpo::space_to_json(space));

  p.info() << study.trials.size() << " trials: " << study.count(hpo::TrialStatus::completed) << " completed, "
           << study.count(hpo::TrialStatus::pruned) << " pruned, " << study.count(hpo::TrialStatus::failed)
           << " failed; best trial " << study.best.trial_id << " val_loss "
           << signals::format_double(study.best.best_val_loss) << '\n';
  for (const auto& path : {log, summary, best, space_file}) p.artifact(path);
  return kExitOk;
}

int cmd_evaluate(const Globals& g, const EvaluateArgs& a, Printer& p) {
  std::vector<std::string> estimators;
  for (const auto& item : a.estimators) {
    std::stringstream ss(item);
    for (std::string name; std::getline(ss, name, ',');) {
      if (name.empty()) continue;
      if (name != "akf" && name != "single2d" && name != "single1d" && name != "multibranch") {
        throw UsageError("unknown estimator '" + name + "'");
      }
      if (std::find(estimators.begin(), estimators.end(), name) == estimators.end()) estimators.push_back(name);
    }
  }
  if (estimators.empty()) throw UsageError("--estimators is empty");

  akf::AkfConfig akf_config;
  if (!a.akf_config.empty()) akf_config = read_json(a.akf_config).get<akf::AkfConfig>();

  // Checkpoints are matched to estimators by the architecture they store;
  // unlisted ones default to <out-dir>/checkpoint_<arch>.json.
  std::map<std::string, fs::path> checkpoint_paths;
  for (const auto& c : a.checkpoints) {
    const auto j = read_json(c);
    const auto name = j.at("config").at("arch").get<std::string>();
    checkpoint_paths[name] = c;
  }
  std::map<std::string, arch::TrainedModel> models;
  for (const auto& name : estimators) {
    if (name == "akf") continue;
    auto it = checkpoint_paths.find(name);
    const fs::path path = it != checkpoint_paths.end() ? it->second : under(g, "checkpoint_" + name + ".json");
    if (!fs::exists(path)) throw IoError("no checkpoint for estimator '" + name + "' (looked for " + path.string() + ")");
    models.emplace(name, arch::load_checkpoint(path));
  }

  const auto runs = load_data(a.data);
  std::vector<const signals::TrainRun*> tests;
  for (const auto& r : runs) {
    if (r.role == signals::RunRole::test) tests.push_back(&r);
  }
  if (tests.empty()) throw ValidationError("no test runs in " + a.data + " (roles come from the manifest)");

  ensure_out_dir(g);
  std::vector<eval::EvalReport> reports;
  std::vector<fs::path> files;
  for (const auto* run : tests) {
    std::vector<SpeedEstimateTrace> traces;
    for (const auto& name : estimators) {
      if (name == "akf") {
        traces.push_back(akf::run_akf(*run, akf_config));
      } else {
        traces.push_back(arch::predict_run(models.at(name), *run));
      }
      if (traces.back().entries.empty()) {
        throw ValidationError("estimator '" + name + "' produced no estimates on run '" + run->run_id + "'");
      }
    }
    traces.push_back(eval::wheel_baseline(*run));
    traces.push_back(eval::gps_baseline(*run));
    auto report = eval::compare(traces, *run);
    const auto rendered = eval::render_plots(report, *run, g.out_dir);
    for (const auto& w : rendered.warnings) p.info() << "warning: " << w << '\n';
    files.insert(files.end(), rendered.files.begin(), rendered.files.end());
    reports.push_back(std::move(report));
  }
  const auto csv = under(g, "report.csv");
  const auto json = under(g, "report.json");
  eval::write_report_csv(reports, csv);
  eval::write_report_json(reports, json);

  auto& info = p.info();
  info << "run_id            estimator         rmse_mps   max_abs_mps  full_rmse_mps  paper_rmse\n";
  for (const auto& r : reports) {
    for (const auto& m : r.rows) {
      char line[160];
      const auto ref = eval::paper_reference_rmse(m.estimator, r.has_wsp);
      std::snprintf(line, sizeof line, "%-17s %-17s %8.4f   %11.4f  %13.4f  %s\n", r.run_id.c_str(),
                    m.estimator.c_str(), m.rmse, m.max_abs_error, m.full_rmse,
                    ref ? signals::format_double(*ref).c_str() : "-");
      info << line;
    }
  }
  files.push_back(csv);
  files.push_back(json);
  for (const auto& f : files) p.artifact(f);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train speed estimation from wheel and GPS speed: simulation, AKF, CNN training and evaluation"};
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Root seed for every random stream")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Directory for output artifacts")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Print only the artifact paths");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate sensor runs as CSV");
  auto* scenario_opt = simulate->add_option("--scenario", sim.scenario, "Scenario spec JSON (object or array)")
                           ->check(CLI::ExistingFile);
  auto* suite_flag = simulate->add_flag("--benchmark-suite", sim.benchmark_suite, "The 17-run benchmark suite");
  scenario_opt->excludes(suite_flag);
  simulate->add_option("--out", sim.out, "Output CSV path (relative paths go under --out-dir)")->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train one architecture");
  train->add_option("--data", tr.data, "Runs CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--arch", tr.arch, "single2d | single1d | multibranch")->required();
  auto* config_opt = train->add_option("--config", tr.config, "ArchConfig JSON")->check(CLI::ExistingFile);
  auto* optimal_flag = train->add_flag("--optimal", tr.optimal, "Use the published optimal hyperparameters");
  config_opt->excludes(optimal_flag);
  train->add_option("--epochs", tr.epochs, "Training epochs (0 writes the initialized model)")->capture_default_str();
  train->add_option("--optimizer", tr.optimizer, "sgd | adam")->capture_default_str();
  train->add_option("--split-ratio", tr.split_ratio, "Train fraction of non-test windows")->capture_default_str();

  SearchArgs se;
  auto* search = app.add_subcommand("search", "Hyperparameter search");
  search->add_option("--data", se.data, "Runs CSV")->required()->check(CLI::ExistingFile);
  search->add_option("--arch", se.arch, "single2d | single1d | multibranch")->required();
  search->add_option("--trials", se.trials, "Trial budget")->capture_default_str();
  search->add_option("--epoch-budget", se.epoch_budget, "Epochs per trial")->capture_default_str();
  search->add_option("--optimizer", se.optimizer, "sgd | adam")->capture_default_str();
  search->add_option("--split-ratio", se.split_ratio, "Train fraction of non-test windows")->capture_default_str();

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate estimators on the test runs");
  evaluate->add_option("--data", ev.data, "Runs CSV with manifest")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--estimators", ev.estimators, "akf,single2d,single1d,multibranch")
      ->delimiter(',')
      ->capture_default_str();
  evaluate->add_option("--checkpoints", ev.checkpoints, "Checkpoint files")->check(CLI::ExistingFile);
  evaluate->add_option("--akf-config", ev.akf_config, "AkfConfig JSON")->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  Printer printer(out, g.quiet);
  try {
    if (simulate->parsed()) return cmd_simulate(g, sim, printer);
    if (train->parsed()) return cmd_train(g, tr, printer);
    if (search->parsed()) return cmd_search(g, se, printer);
    if (evaluate->parsed()) return cmd_evaluate(g, ev, printer);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NonFiniteError& e) {
    err << "error: training aborted at epoch " << e.epoch() << ": " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace trainspeed::cli
