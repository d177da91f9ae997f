#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trainspeed/signals.hpp"

namespace trainspeed::sim {

enum class PhaseKind { accelerate, constant, coast, brake };

struct Phase {
  PhaseKind kind = PhaseKind::constant;
  double duration = 0.0;
  /// End speed for accelerate/brake phases; ignored otherwise.
  double target_speed = 0.0;
};

struct OdometerError {
  double start_t = 0.0;
  double factor = 1.2;
};

/// Wheel Slide Protection episode: periodic raised-cosine dips of the wheel
/// speed below the train speed.
struct WspSpec {
  double start_t = 0.0;
  double end_t = 0.0;
  double max_slip_fraction = 0.5;
  double cycle_period = 3.0;
};

inline constexpr double kDefaultCoastDecel = 0.02;  // m/s^2
inline constexpr double kDefaultGpsBias = 1.0;      // m/s, DSM017-style preset
inline constexpr double kNormalizationSpeed = 31.3877;

struct ScenarioSpec {
  std::string run_id = "run";
  signals::RunRole role = signals::RunRole::train;
  std::vector<Phase> phases;
  double initial_speed = 0.0;
  double gps_noise_sigma = 0.0;
  double gps_bias = 0.0;
  double wheel_noise_sigma = 0.0;
  double coast_decel = kDefaultCoastDecel;
  std::optional<OdometerError> odometer_error;
  std::optional<WspSpec> wsp;
  /// Sensor channels are clipped to this value when set (saturating sensor).
  std::optional<double> speed_ceiling;
  std::uint64_t seed = 0;
  double dt = 1.0;
};

void validate(const ScenarioSpec& spec);

double total_duration(const ScenarioSpec& spec);

/// Ground-truth speed at time t (continuous piecewise profile).
double train_speed_at(const ScenarioSpec& spec, double t);

/// Multiplicative wheel-slip factor at time t: 1 outside the WSP window,
/// in [1 - max_slip_fraction, 1] inside it.
double slip_factor_at(const ScenarioSpec& spec, double t);

/// Generates one run. Deterministic given the spec (including seed).
signals::TrainRun simulate(const ScenarioSpec& spec);

/// Scenario definitions of the benchmark suite: 13 runs without WSP and 4
/// with, 15 for training/validation (5205 samples) and 2 for test (947).
std::vector<ScenarioSpec> benchmark_scenarios(std::uint64_t seed);
std::vector<signals::TrainRun> make_benchmark_suite(std::uint64_t seed);

void to_json(nlohmann::json& j, const ScenarioSpec& spec);
void from_json(const nlohmann::json& j, ScenarioSpec& spec);

}  // namespace trainspeed::sim
