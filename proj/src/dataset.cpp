#include "trainspeed/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "trainspeed/errors.hpp"
#include "trainspeed/rng.hpp"

namespace trainspeed::dataset {

namespace {

void fill_inputs(const signals::TrainRun& run, std::size_t end, std::size_t n,
                 const NormalizationConfig& norm, WindowSample& w) {
  const std::size_t begin = end - n;
  const double t_first = run.samples[begin].t;
  const double span = run.samples[end - 1].t - t_first;
  w.inputs.resize(n * kChannels);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& s = run.samples[begin + r];
    w.inputs[r * kChannels + 0] = span > 0.0 ? (s.t - t_first) / span : 0.0;
    w.inputs[r * kChannels + 1] = norm.normalize(s.wheel_speed);
    w.inputs[r * kChannels + 2] = norm.normalize(s.gps_speed);
  }
}

void check_norm(const NormalizationConfig& norm) {
  if (!(norm.speed_divisor > 0.0)) throw ConfigError("speed divisor must be positive");
}

}  // namespace

std::size_t count_windows(std::size_t total_timestamps, std::size_t num_runs, std::size_t n) {
  if (total_timestamps <= num_runs * n) {
    throw ValidationError("runs too short for history length " + std::to_string(n));
  }
  return total_timestamps - num_runs * n;
}

std::vector<WindowSample> make_windows(std::span<const signals::TrainRun> runs, std::size_t n,
                                       const NormalizationConfig& norm) {
  check_norm(norm);
  if (n == 0) throw ConfigError("history length must be positive");
  std::vector<WindowSample> windows;
  for (const auto& run : runs) {
    if (run.samples.size() < n + 1) {
      throw ValidationError("run '" + run.run_id + "' has " + std::to_string(run.samples.size()) +
                            " samples, needs at least " + std::to_string(n + 1));
    }
    if (!run.has_ground_truth()) {
      throw ValidationError("run '" + run.run_id + "' lacks ground-truth train speed");
    }
    for (std::size_t k = n; k < run.samples.size(); ++k) {
      WindowSample w;
      fill_inputs(run, k, n, norm, w);
      w.target = norm.normalize(*run.samples[k].train_speed);
      w.source_run = run.run_id;
      w.t_target = run.samples[k].t;
      windows.push_back(std::move(w));
    }
  }
  return windows;
}

std::vector<WindowSample> make_inference_windows(const signals::TrainRun& run, std::size_t n,
                                                 const NormalizationConfig& norm) {
  check_norm(norm);
  if (n == 0) throw ConfigError("history length must be positive");
  if (run.samples.size() < n + 1) {
    throw ValidationError("run '" + run.run_id + "' too short for history length " +
                          std::to_string(n));
  }
  std::vector<WindowSample> windows;
  windows.reserve(run.samples.size() - n);
  for (std::size_t k = n; k < run.samples.size(); ++k) {
    WindowSample w;
    fill_inputs(run, k, n, norm, w);
    w.source_run = run.run_id;
    w.t_target = run.samples[k].t;
    windows.push_back(std::move(w));
  }
  return windows;
}

DatasetSplit split(std::span<const WindowSample> windows, double ratio, std::uint64_t seed) {
  if (windows.empty()) throw ValidationError("cannot split an empty window list");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");

  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, "split");
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1));
    std::swap(order[i], order[j]);
  }

  const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(windows.size())));
  DatasetSplit out;
  out.split_seed = seed;
  out.train.reserve(n_train);
  out.validation.reserve(windows.size() - n_train);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.train : out.validation).push_back(windows[order[i]]);
  }
  return out;
}

DatasetSplit make_split(std::span<const signals::TrainRun> runs, std::size_t n,
                        const NormalizationConfig& norm, double ratio, std::uint64_t seed) {
  std::vector<signals::TrainRun> fit_runs;
  std::vector<signals::TrainRun> test_runs;
  for (const auto& run : runs) {
    (run.role == signals::RunRole::test ? test_runs : fit_runs).push_back(run);
  }
  auto out = split(make_windows(fit_runs, n, norm), ratio, seed);
  if (!test_runs.empty()) out.test = make_windows(test_runs, n, norm);
  return out;
}

namespace {

constexpr char kMagic[4] = {'T', 'S', 'W', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("truncated window cache");
  return v;
}

}  // namespace

void save_window_cache(std::span<const WindowSample> windows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put(out, kCacheVersion);
  put(out, static_cast<std::uint64_t>(windows.size()));
  for (const auto& w : windows) {
    put(out, static_cast<std::uint64_t>(w.source_run.size()));
    out.write(w.source_run.data(), static_cast<std::streamsize>(w.source_run.size()));
    put(out, w.t_target);
    put(out, w.target);
    put(out, static_cast<std::uint64_t>(w.inputs.size()));
    out.write(reinterpret_cast<const char*>(w.inputs.data()),
              static_cast<std::streamsize>(w.inputs.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<WindowSample> load_window_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("not a window cache: " + path.string());
  }
  if (const auto version = get<std::uint32_t>(in); version != kCacheVersion) {
    throw ParseError("unsupported window cache version " + std::to_string(version));
  }
  const auto count = get<std::uint64_t>(in);
  std::vector<WindowSample> windows(count);
  for (auto& w : windows) {
    w.source_run.resize(get<std::uint64_t>(in));
    in.read(w.source_run.data(), static_cast<std::streamsize>(w.source_run.size()));
    w.t_target = get<double>(in);
    w.target = get<double>(in);
    w.inputs.resize(get<std::uint64_t>(in));
    in.read(reinterpret_cast<char*>(w.inputs.data()),
            static_cast<std::streamsize>(w.inputs.size() * sizeof(double)));
    if (!in) throw ParseError("truncated window cache");
  }
  return windows;
}

}  // namespace trainspeed::dataset
