#include "trainspeed/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "trainspeed/errors.hpp"

namespace trainspeed::hpo {

Domain Domain::categorical(std::string name, std::vector<double> choices) {
  return {std::move(name), DomainKind::categorical, std::move(choices), 0.0, 0.0};
}
Domain Domain::int_range(std::string name, double low, double high) {
  return {std::move(name), DomainKind::int_range, {}, low, high};
}
Domain Domain::float_range(std::string name, double low, double high) {
  return {std::move(name), DomainKind::float_range, {}, low, high};
}
Domain Domain::float_log_range(std::string name, double low, double high) {
  return {std::move(name), DomainKind::float_log_range, {}, low, high};
}

bool Domain::contains(double v) const {
  switch (kind) {
    case DomainKind::categorical:
      return std::find(choices.begin(), choices.end(), v) != choices.end();
    case DomainKind::int_range:
      return v >= low && v <= high && std::floor(v) == v;
    case DomainKind::float_range:
    case DomainKind::float_log_range:
      return v >= low && v <= high;
  }
  return false;
}

void SearchSpace::validate() const {
  if (domains.empty()) throw ConfigError("search space is empty");
  for (const auto& d : domains) {
    if (d.kind == DomainKind::categorical) {
      if (d.choices.empty()) throw ConfigError("categorical domain '" + d.name + "' has no choices");
    } else if (!(d.low <= d.high)) {
      throw ConfigError("domain '" + d.name + "' has an empty range");
    } else if (d.kind == DomainKind::float_log_range && !(d.low > 0.0)) {
      throw ConfigError("log domain '" + d.name + "' must be strictly positive");
    }
  }
}

bool SearchSpace::contains(std::span<const double> values) const {
  if (values.size() != domains.size()) return false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!domains[i].contains(values[i])) return false;
  }
  return true;
}

SearchSpace table1_space(arch::Arch a) {
  SearchSpace s;
  s.domains.push_back(Domain::categorical("history", {10, 20, 30, 40}));
  s.domains.push_back(Domain::int_range("n_blocks", 1, a == arch::Arch::multibranch ? 3 : 20));
  s.domains.push_back(Domain::int_range("n_filters", 8, 64));
  if (a == arch::Arch::single2d) {
    s.domains.push_back(Domain::categorical("kernel_size", {3, 5, 7}));
  } else {
    s.domains.push_back(Domain::int_range("kernel_size", 2, 10));
  }
  s.domains.push_back(Domain::float_range("dropout_rate", 0.0, 0.5));
  s.domains.push_back(Domain::float_log_range("learning_rate", 1e-5, 1e-2));
  s.domains.push_back(Domain::categorical("batch_size", {8, 16, 32, 64}));
  return s;
}

arch::ArchConfig config_from_values(arch::Arch a, std::span<const double> v) {
  if (v.size() != 7) throw ConfigError("expected 7 hyperparameter values");
  auto count = [](double x) { return static_cast<std::size_t>(std::llround(x)); };
  arch::ArchConfig c;
  c.arch = a;
  c.history = count(v[0]);
  c.n_blocks = count(v[1]);
  c.n_filters = count(v[2]);
  c.kernel_size = count(v[3]);
  c.dropout_rate = v[4];
  c.learning_rate = v[5];
  c.batch_size = count(v[6]);
  return c;
}

namespace {

std::string kind_name(DomainKind k) {
  switch (k) {
    case DomainKind::categorical: return "categorical";
    case DomainKind::int_range: return "int_range";
    case DomainKind::float_range: return "float_range";
    case DomainKind::float_log_range: return "float_log_range";
  }
  return "float_range";
}

DomainKind kind_from_name(const std::string& s) {
  if (s == "categorical") return DomainKind::categorical;
  if (s == "int_range") return DomainKind::int_range;
  if (s == "float_range") return DomainKind::float_range;
  if (s == "float_log_range") return DomainKind::float_log_range;
  throw ConfigError("unknown domain kind '" + s + "'");
}

}  // namespace

nlohmann::json space_to_json(const SearchSpace& space) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& d : space.domains) {
    nlohmann::json e{{"name", d.name}, {"kind", kind_name(d.kind)}};
    if (d.kind == DomainKind::categorical) {
      e["choices"] = d.choices;
    } else {
      e["low"] = d.low;
      e["high"] = d.high;
    }
    j.push_back(e);
  }
  return j;
}

SearchSpace space_from_json(const nlohmann::json& j) {
  SearchSpace s;
  for (const auto& e : j) {
    Domain d;
    d.name = e.at("name").get<std::string>();
    d.kind = kind_from_name(e.at("kind").get<std::string>());
    if (d.kind == DomainKind::categorical) {
      d.choices = e.at("choices").get<std::vector<double>>();
    } else {
      d.low = e.at("low").get<double>();
      d.high = e.at("high").get<double>();
    }
    s.domains.push_back(std::move(d));
  }
  s.validate();
  return s;
}

std::size_t elite_count(std::size_t n, double gamma) {
  if (n == 0) return 0;
  const auto k = static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(n) - 1e-12));
  return std::clamp<std::size_t>(k, 1, n);
}

namespace {

// Internal sampling coordinates of a numeric domain.
struct Interval {
  double low;
  double high;
};

Interval internal_bounds(const Domain& d) {
  switch (d.kind) {
    case DomainKind::int_range: return {d.low - 0.5, d.high + 0.5};
    case DomainKind::float_log_range: return {std::log(d.low), std::log(d.high)};
    default: return {d.low, d.high};
  }
}

double to_internal(const Domain& d, double v) { return d.kind == DomainKind::float_log_range ? std::log(v) : v; }

double from_internal(const Domain& d, double u) {
  switch (d.kind) {
    case DomainKind::int_range: return std::clamp(std::round(u), d.low, d.high);
    case DomainKind::float_log_range: return std::clamp(std::exp(u), d.low, d.high);
    default: return std::clamp(u, d.low, d.high);
  }
}

std::size_t choice_index(const Domain& d, double v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.choices.size(); ++i) {
    if (std::abs(d.choices[i] - v) < std::abs(d.choices[best] - v)) best = i;
  }
  return best;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Equal-weight mixture of truncated Gaussians: one per observation plus a
/// wide prior component centred in the interval. Each bandwidth is the
/// larger gap to its sorted neighbours, clipped to
/// [(high-low)/min(100, m+1), high-low].
class ParzenEstimator {
 public:
  ParzenEstimator(std::vector<double> points, Interval bounds) : bounds_(bounds) {
    const double width = bounds.high - bounds.low;
    const double prior_mu = 0.5 * (bounds.low + bounds.high);
    if (width <= 0.0) {
      mus_ = {prior_mu};
      sigmas_ = {1.0};
      return;
    }
    points.push_back(prior_mu);
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return points[a] < points[b]; });
    const double min_sigma = width / std::min(100.0, static_cast<double>(points.size()));
    mus_.resize(points.size());
    sigmas_.resize(points.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
      const double mu = points[order[r]];
      const double left = r == 0 ? mu - bounds.low : mu - points[order[r - 1]];
      const double right = r + 1 == order.size() ? bounds.high - mu : points[order[r + 1]] - mu;
      mus_[r] = mu;
      sigmas_[r] = std::clamp(std::max(left, right), min_sigma, width);
      if (order[r] == points.size() - 1) sigmas_[r] = width;  // the prior
    }
  }

  double sample(Rng& rng) const {
    const auto k = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(mus_.size())),
                            mus_.size() - 1);
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double u = mus_[k] + sigmas_[k] * standard_normal(rng);
      if (u >= bounds_.low && u <= bounds_.high) return u;
    }
    return std::clamp(mus_[k], bounds_.low, bounds_.high);
  }

  double log_pdf(double u) const {
    double total = 0.0;
    for (std::size_t i = 0; i < mus_.size(); ++i) {
      const double z = (u - mus_[i]) / sigmas_[i];
      const double mass = normal_cdf((bounds_.high - mus_[i]) / sigmas_[i]) -
                          normal_cdf((bounds_.low - mus_[i]) / sigmas_[i]);
      total += std::exp(-0.5 * z * z) / (sigmas_[i] * std::sqrt(2.0 * std::numbers::pi) * std::max(mass, 1e-300));
    }
    return std::log(std::max(total / static_cast<double>(mus_.size()), 1e-300));
  }

 private:
  Interval bounds_;
  std::vector<double> mus_;
  std::vector<double> sigmas_;
};

/// Frequency estimate with one pseudo-count per choice.
class CategoricalEstimator {
 public:
  CategoricalEstimator(const Domain& d, std::span<const double> values) : weights_(d.choices.size(), 1.0) {
    for (double v : values) weights_[choice_index(d, v)] += 1.0;
    const double total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
    for (auto& w : weights_) w /= total;
  }

  std::size_t sample(Rng& rng) const {
    double u = uniform01(rng);
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if (u < weights_[i]) return i;
      u -= weights_[i];
    }
    return weights_.size() - 1;
  }

  double log_pmf(std::size_t i) const { return std::log(weights_[i]); }

 private:
  std::vector<double> weights_;
};

}  // namespace

std::vector<double> sample_uniform(const SearchSpace& space, Rng& rng) {
  space.validate();
  std::vector<double> v;
  v.reserve(space.domains.size());
  for (const auto& d : space.domains) {
    if (d.kind == DomainKind::categorical) {
      const auto i = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(d.choices.size())),
                              d.choices.size() - 1);
      v.push_back(d.choices[i]);
    } else {
      const auto b = internal_bounds(d);
      v.push_back(from_internal(d, b.low + uniform01(rng) * (b.high - b.low)));
    }
  }
  return v;
}

std::vector<double> sample_tpe(std::span<const Observation> observations, const SearchSpace& space,
                               const TpeOptions& options, Rng& rng) {
  space.validate();
  if (observations.size() < std::max<std::size_t>(options.n_startup, 1)) return sample_uniform(space, rng);

  std::vector<std::size_t> order(observations.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return observations[a].objective < observations[b].objective; });
  const std::size_t n_elite = elite_count(observations.size(), options.gamma);
  const std::size_t n_candidates = std::max<std::size_t>(options.n_candidates, 1);

  // candidates[c][p]; score accumulates log l - log g over parameters.
  std::vector<std::vector<double>> candidates(n_candidates, std::vector<double>(space.domains.size()));
  std::vector<double> score(n_candidates, 0.0);

  for (std::size_t p = 0; p < space.domains.size(); ++p) {
    const auto& d = space.domains[p];
    std::vector<double> elite, rest;
    for (std::size_t r = 0; r < order.size(); ++r) {
      (r < n_elite ? elite : rest).push_back(observations[order[r]].values.at(p));
    }
    if (d.kind == DomainKind::categorical) {
      const CategoricalEstimator l(d, elite), g(d, rest);
      for (std::size_t c = 0; c < n_candidates; ++c) {
        const auto i = l.sample(rng);
        candidates[c][p] = d.choices[i];
        score[c] += l.log_pmf(i) - g.log_pmf(i);
      }
    } else {
      const auto bounds = internal_bounds(d);
      auto transform = [&](std::vector<double>& xs) {
        for (auto& x : xs) x = to_internal(d, x);
      };
      transform(elite);
      transform(rest);
      const ParzenEstimator l(elite, bounds), g(rest, bounds);
      for (std::size_t c = 0; c < n_candidates; ++c) {
        const double u = l.sample(rng);
        const double value = from_internal(d, u);
        candidates[c][p] = value;
        const double snapped = to_internal(d, value);
        score[c] += l.log_pdf(snapped) - g.log_pdf(snapped);
      }
    }
  }
  const auto best = static_cast<std::size_t>(std::max_element(score.begin(), score.end()) - score.begin());
  return candidates[best];
}

std::string to_string(TrialStatus status) {
  switch (status) {
    case TrialStatus::completed: return "completed";
    case TrialStatus::pruned: return "pruned";
    case TrialStatus::failed: return "failed";
  }
  return "failed";
}

arch::ArchConfig sample_tpe(std::span<const TrialRecord> history, const SearchSpace& space, arch::Arch a,
                            const TpeOptions& options, Rng& rng) {
  std::vector<Observation> observations;
  for (const auto& t : history) {
    if (t.status == TrialStatus::completed) observations.push_back({t.values, t.best_val_loss});
  }
  return config_from_values(a, sample_tpe(observations, space, options, rng));
}

bool should_prune(std::span<const TrialRecord> history, std::span<const Intermediate> current,
                  std::size_t warmup_trials, std::size_t warmup_epochs) {
  if (current.empty()) return false;
  const auto& now = current.back();
  if (now.epoch < warmup_epochs) return false;

  std::size_t finished = 0;
  std::vector<double> same_epoch;
  for (const auto& t : history) {
    if (t.status == TrialStatus::failed) continue;
    ++finished;
    for (const auto& im : t.intermediate) {
      if (im.epoch == now.epoch) {
        same_epoch.push_back(im.val_loss);
        break;
      }
    }
  }
  if (finished < warmup_trials || same_epoch.size() < std::max<std::size_t>(warmup_trials, 1)) return false;

  std::sort(same_epoch.begin(), same_epoch.end());
  const std::size_t m = same_epoch.size();
  const double median = m % 2 == 1 ? same_epoch[m / 2] : 0.5 * (same_epoch[m / 2 - 1] + same_epoch[m / 2]);
  return now.val_loss > median;
}

std::size_t StudyResult::count(TrialStatus status) const {
  return static_cast<std::size_t>(
      std::count_if(trials.begin(), trials.end(), [&](const TrialRecord& t) { return t.status == status; }));
}

std::vector<double> StudyResult::best_so_far() const {
  std::vector<double> curve;
  double best_value = std::numeric_limits<double>::infinity();
  for (const auto& t : trials) {
    if (t.status == TrialStatus::completed) best_value = std::min(best_value, t.best_val_loss);
    curve.push_back(best_value);
  }
  return curve;
}

SplitCache::SplitCache(std::vector<signals::TrainRun> runs, dataset::NormalizationConfig norm, double ratio,
                       std::uint64_t seed)
    : runs_(std::move(runs)), norm_(norm), ratio_(ratio), seed_(seed) {}

const dataset::DatasetSplit& SplitCache::get(std::size_t history) {
  auto it = cache_.find(history);
  if (it == cache_.end()) {
    it = cache_.emplace(history, dataset::make_split(runs_, history, norm_, ratio_, seed_)).first;
  }
  return it->second;
}

StudyResult run_study(arch::Arch a, const SearchSpace& space, SplitCache& splits, const StudyOptions& options) {
  if (options.budget == 0) throw ConfigError("study budget must be at least 1");
  space.validate();
  StudyResult study;
  study.arch = a;
  study.seed = options.seed;
  auto sampler_rng = make_rng(options.seed, "sampler");

  for (std::size_t id = 0; id < options.budget; ++id) {
    TrialRecord trial;
    trial.trial_id = id;
    std::vector<Observation> observations;
    for (const auto& t : study.trials) {
      if (t.status == TrialStatus::completed) observations.push_back({t.values, t.best_val_loss});
    }
    trial.values = sample_tpe(observations, space, options.tpe, sampler_rng);
    trial.config = config_from_values(a, trial.values);

    try {
      const std::uint64_t trial_seed = derive_seed(options.seed, "trial" + std::to_string(id));
      auto network = arch::build(trial.config, trial_seed);
      nn::TrainerConfig trainer;
      trainer.learning_rate = trial.config.learning_rate;
      trainer.batch_size = trial.config.batch_size;
      trainer.epochs = options.epoch_budget;
      trainer.optimizer = options.optimizer;
      trainer.seed = trial_seed;
      const auto reporter = [&](std::size_t epoch, double val_loss) {
        trial.intermediate.push_back({epoch, val_loss});
        if (epoch >= options.epoch_budget) return true;
        return !should_prune(study.trials, trial.intermediate, options.warmup_trials, options.warmup_epochs);
      };
      const auto model = arch::train(std::move(network), splits.get(trial.config.history), trainer, reporter);
      trial.status = model.pruned ? TrialStatus::pruned : TrialStatus::completed;
      for (const auto& im : trial.intermediate) trial.best_val_loss = std::min(trial.best_val_loss, im.val_loss);
    } catch (const NonFiniteError& e) {
      trial.status = TrialStatus::failed;
      trial.failure = e.what();
    } catch (const DimensionError& e) {
      trial.status = TrialStatus::failed;
      trial.failure = e.what();
    }
    study.trials.push_back(std::move(trial));
  }

  const TrialRecord* best = nullptr;
  std::string failures;
  for (const auto& t : study.trials) {
    if (t.status == TrialStatus::completed && (!best || t.best_val_loss < best->best_val_loss)) best = &t;
    if (t.status == TrialStatus::failed) failures += "trial " + std::to_string(t.trial_id) + ": " + t.failure + "\n";
  }
  if (!best) throw ValidationError("no trial completed\n" + failures);
  study.best = *best;
  return study;
}

nlohmann::json trial_to_json(const TrialRecord& t) {
  nlohmann::json im = nlohmann::json::array();
  for (const auto& i : t.intermediate) im.push_back({i.epoch, i.val_loss});
  nlohmann::json j{{"trial_id", t.trial_id},
                   {"config", t.config},
                   {"intermediate", im},
                   {"status", to_string(t.status)},
                   {"best_val_loss", nullptr}};
  if (std::isfinite(t.best_val_loss)) j["best_val_loss"] = t.best_val_loss;
  if (!t.failure.empty()) j["failure"] = t.failure;
  return j;
}

void write_study(const StudyResult& study, const std::filesystem::path& jsonl_path,
                 const std::filesystem::path& summary_path) {
  std::ofstream lines(jsonl_path);
  if (!lines) throw IoError("cannot write " + jsonl_path.string());
  const auto curve = study.best_so_far();
  for (std::size_t i = 0; i < study.trials.size(); ++i) {
    auto j = trial_to_json(study.trials[i]);
    j["best_so_far"] = std::isfinite(curve[i]) ? nlohmann::json(curve[i]) : nlohmann::json(nullptr);
    lines << j.dump() << '\n';
  }
  const nlohmann::json summary{{"arch", arch::to_string(study.arch)},
                               {"seed", study.seed},
                               {"trials", study.trials.size()},
                               {"completed", study.count(TrialStatus::completed)},
                               {"pruned", study.count(TrialStatus::pruned)},
                               {"failed", study.count(TrialStatus::failed)},
                               {"best", trial_to_json(study.best)}};
  std::ofstream out(summary_path);
  if (!out) throw IoError("cannot write " + summary_path.string());
  out << summary.dump(2) << '\n';
}

}  // namespace trainspeed::hpo
