#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "trainspeed/signals.hpp"

namespace trainspeed::dataset {

inline constexpr double kDefaultSpeedDivisor = 31.3877;  // m/s, peak speed of the data
inline constexpr std::size_t kChannels = 3;               // time, wheel speed, GPS speed

struct NormalizationConfig {
  double speed_divisor = kDefaultSpeedDivisor;

  double normalize(double speed) const { return speed / speed_divisor; }
  double denormalize(double value) const { return value * speed_divisor; }
};

/// One model input: n rows of (window-relative time, wheel speed, GPS speed),
/// row-major, plus the normalized ground-truth speed at the step after the
/// window.
struct WindowSample {
  std::vector<double> inputs;
  double target = 0.0;
  std::string source_run;
  double t_target = 0.0;

  std::size_t history() const noexcept { return inputs.size() / kChannels; }
  double at(std::size_t row, std::size_t channel) const { return inputs[row * kChannels + channel]; }

  bool operator==(const WindowSample&) const = default;
};

struct DatasetSplit {
  std::vector<WindowSample> train;
  std::vector<WindowSample> validation;
  std::vector<WindowSample> test;
  std::uint64_t split_seed = 0;
};

/// Windows obtained from `num_runs` runs totalling `total_timestamps`
/// samples: each run of length L contributes L - n windows.
std::size_t count_windows(std::size_t total_timestamps, std::size_t num_runs, std::size_t n);

/// Window k (k = n .. L-1) of a run takes samples k-n .. k-1 as input and
/// the train speed at sample k as target.
std::vector<WindowSample> make_windows(std::span<const signals::TrainRun> runs, std::size_t n,
                                       const NormalizationConfig& norm = {});

/// Inputs only, for runs without ground truth; targets are set to 0.
std::vector<WindowSample> make_inference_windows(const signals::TrainRun& run, std::size_t n,
                                                 const NormalizationConfig& norm = {});

/// Seeded shuffled split: floor(ratio * N) windows go to train.
DatasetSplit split(std::span<const WindowSample> windows, double ratio, std::uint64_t seed);

/// Windows of non-test runs split into train/validation; test-flagged runs
/// become the test set.
DatasetSplit make_split(std::span<const signals::TrainRun> runs, std::size_t n,
                        const NormalizationConfig& norm, double ratio, std::uint64_t seed);

/// Versioned binary cache of windows.
void save_window_cache(std::span<const WindowSample> windows, const std::filesystem::path& path);
std::vector<WindowSample> load_window_cache(const std::filesystem::path& path);

}  // namespace trainspeed::dataset
