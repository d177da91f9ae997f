#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trainspeed/architectures.hpp"
#include "trainspeed/dataset.hpp"
#include "trainspeed/rng.hpp"
#include "trainspeed/signals.hpp"

namespace trainspeed::hpo {

enum class DomainKind { categorical, int_range, float_range, float_log_range };

struct Domain {
  std::string name;
  DomainKind kind = DomainKind::float_range;
  std::vector<double> choices;  // categorical only
  double low = 0.0;
  double high = 1.0;

  static Domain categorical(std::string name, std::vector<double> choices);
  static Domain int_range(std::string name, double low, double high);
  static Domain float_range(std::string name, double low, double high);
  static Domain float_log_range(std::string name, double low, double high);

  bool contains(double value) const;
};

/// Ordered parameter domains; a point in the space is a vector of values
/// aligned with `domains`.
struct SearchSpace {
  std::vector<Domain> domains;

  /// Throws ConfigError for empty spaces, empty ranges, or non-positive log bounds.
  void validate() const;
  bool contains(std::span<const double> values) const;
};

/// The search ranges of one architecture: history, n_blocks, n_filters,
/// kernel_size, dropout_rate, learning_rate, batch_size.
SearchSpace table1_space(arch::Arch arch);
arch::ArchConfig config_from_values(arch::Arch arch, std::span<const double> values);

nlohmann::json space_to_json(const SearchSpace& space);
SearchSpace space_from_json(const nlohmann::json& j);

struct TpeOptions {
  double gamma = 0.25;
  std::size_t n_candidates = 24;
  std::size_t n_startup = 10;
};

/// A completed evaluation: parameter values and the objective (lower is better).
struct Observation {
  std::vector<double> values;
  double objective = 0.0;
};

std::size_t elite_count(std::size_t n_observations, double gamma);

std::vector<double> sample_uniform(const SearchSpace& space, Rng& rng);

/// Tree-structured Parzen Estimator draw. Observations are ranked by
/// objective; the best ceil(gamma * n) (at least 1) form the elite set.
/// Each parameter gets independent Parzen densities l (elite) and g (rest),
/// Gaussian mixtures in transformed coordinates (log for log ranges) or
/// smoothed frequencies for categorical domains. Returns the one of
/// n_candidates draws from l maximizing l(x)/g(x). Falls back to a uniform
/// draw below n_startup observations.
std::vector<double> sample_tpe(std::span<const Observation> observations, const SearchSpace& space,
                               const TpeOptions& options, Rng& rng);

enum class TrialStatus { completed, pruned, failed };

std::string to_string(TrialStatus status);

struct Intermediate {
  std::size_t epoch = 0;
  double val_loss = 0.0;
};

struct TrialRecord {
  std::size_t trial_id = 0;
  arch::ArchConfig config;
  std::vector<double> values;
  std::vector<Intermediate> intermediate;
  TrialStatus status = TrialStatus::completed;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::string failure;
};

/// ArchConfig draw from the completed trials of `history`.
arch::ArchConfig sample_tpe(std::span<const TrialRecord> history, const SearchSpace& space, arch::Arch arch,
                            const TpeOptions& options, Rng& rng);

/// Median rule: prune iff at least `warmup_trials` prior trials finished
/// (completed or pruned) and reported the current epoch, the current epoch
/// is at least `warmup_epochs`, and the current loss exceeds the median of
/// those prior losses.
bool should_prune(std::span<const TrialRecord> history, std::span<const Intermediate> current,
                  std::size_t warmup_trials, std::size_t warmup_epochs);

struct StudyOptions {
  std::size_t budget = 30;
  std::size_t epoch_budget = 60;
  std::uint64_t seed = 0;
  TpeOptions tpe;
  std::size_t warmup_trials = 5;
  std::size_t warmup_epochs = 5;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  double split_ratio = 0.8;
  dataset::NormalizationConfig norm;
};

struct StudyResult {
  arch::Arch arch = arch::Arch::multibranch;
  std::vector<TrialRecord> trials;
  TrialRecord best;
  std::uint64_t seed = 0;

  std::size_t count(TrialStatus status) const;
  /// Running minimum of best_val_loss over completed trials (infinity
  /// until the first completed trial).
  std::vector<double> best_so_far() const;
};

/// Train/validation windows per history length, built on first use.
class SplitCache {
 public:
  SplitCache(std::vector<signals::TrainRun> runs, dataset::NormalizationConfig norm, double ratio,
             std::uint64_t seed);
  const dataset::DatasetSplit& get(std::size_t history);

 private:
  std::vector<signals::TrainRun> runs_;
  dataset::NormalizationConfig norm_;
  double ratio_;
  std::uint64_t seed_;
  std::map<std::size_t, dataset::DatasetSplit> cache_;
};

/// Sample -> train with per-epoch pruning -> record, `budget` times.
/// Deterministic given the options. Throws ValidationError carrying the
/// failure log when no trial completes.
StudyResult run_study(arch::Arch arch, const SearchSpace& space, SplitCache& splits, const StudyOptions& options);

nlohmann::json trial_to_json(const TrialRecord& trial);
void write_study(const StudyResult& study, const std::filesystem::path& jsonl_path,
                 const std::filesystem::path& summary_path);

}  // namespace trainspeed::hpo
