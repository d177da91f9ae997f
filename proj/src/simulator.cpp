#include "trainspeed/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "trainspeed/errors.hpp"
#include "trainspeed/rng.hpp"

namespace trainspeed::sim {

namespace {

double phase_speed(const Phase& p, double v0, double tau, double coast_decel) {
  switch (p.kind) {
    case PhaseKind::accelerate:
    case PhaseKind::brake:
      if (tau >= p.duration) return p.target_speed;
      return v0 + (p.target_speed - v0) * (tau / p.duration);
    case PhaseKind::constant:
      return v0;
    case PhaseKind::coast:
      return std::max(0.0, v0 - coast_decel * tau);
  }
  return v0;
}

double final_speed(const ScenarioSpec& spec) {
  double v = spec.initial_speed;
  for (const auto& p : spec.phases) v = phase_speed(p, v, p.duration, spec.coast_decel);
  return v;
}

// Gaussian noise truncated at 3 sigma, so sensor deviations are bounded.
double bounded_noise(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  double z = standard_normal(rng);
  while (std::abs(z) > 3.0) z = standard_normal(rng);
  return sigma * z;
}

double cycle_depth(const ScenarioSpec& spec, long cycle) {
  Rng rng(derive_seed(spec.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(cycle + 1),
                      "wsp-cycle"));
  return spec.wsp->max_slip_fraction * (0.6 + 0.4 * uniform01(rng));
}

std::string_view kind_name(PhaseKind k) {
  switch (k) {
    case PhaseKind::accelerate: return "accelerate";
    case PhaseKind::constant: return "constant";
    case PhaseKind::coast: return "coast";
    case PhaseKind::brake: return "brake";
  }
  return "constant";
}

PhaseKind kind_from_name(const std::string& s) {
  if (s == "accelerate") return PhaseKind::accelerate;
  if (s == "constant") return PhaseKind::constant;
  if (s == "coast") return PhaseKind::coast;
  if (s == "brake") return PhaseKind::brake;
  throw ParseError("unknown phase kind '" + s + "'");
}

}  // namespace

void validate(const ScenarioSpec& spec) {
  if (spec.phases.empty()) throw ValidationError("scenario has no phases");
  if (!(spec.dt > 0.0)) throw ValidationError("dt must be positive");
  if (!(spec.initial_speed >= 0.0)) throw ValidationError("initial speed must be non-negative");
  for (const auto& p : spec.phases) {
    if (!(p.duration > 0.0) || !std::isfinite(p.duration)) {
      throw ValidationError("phase durations must be positive");
    }
    if (!(p.target_speed >= 0.0)) throw ValidationError("phase target speed must be non-negative");
  }
  if (!(spec.gps_noise_sigma >= 0.0) || !(spec.wheel_noise_sigma >= 0.0)) {
    throw ValidationError("noise sigmas must be non-negative");
  }
  if (!(spec.coast_decel >= 0.0)) throw ValidationError("coast deceleration must be non-negative");
  if (spec.odometer_error && !(spec.odometer_error->factor > 0.0)) {
    throw ValidationError("odometer factor must be positive");
  }
  if (spec.speed_ceiling && !(*spec.speed_ceiling > 0.0)) {
    throw ValidationError("speed ceiling must be positive");
  }
  if (spec.wsp) {
    const auto& w = *spec.wsp;
    if (!(w.start_t < w.end_t)) throw ValidationError("WSP start must precede end");
    if (!(w.max_slip_fraction > 0.0 && w.max_slip_fraction < 1.0)) {
      throw ValidationError("WSP max slip fraction must lie in (0, 1)");
    }
    if (!(w.cycle_period > 0.0)) throw ValidationError("WSP cycle period must be positive");
    if (w.end_t > total_duration(spec) && final_speed(spec) > 0.0) {
      throw ValidationError("WSP extends past the end of a run that ends in motion");
    }
  }
}

double total_duration(const ScenarioSpec& spec) {
  double total = 0.0;
  for (const auto& p : spec.phases) total += p.duration;
  return total;
}

double train_speed_at(const ScenarioSpec& spec, double t) {
  double v = spec.initial_speed;
  double start = 0.0;
  for (const auto& p : spec.phases) {
    if (t < start + p.duration) return phase_speed(p, v, t - start, spec.coast_decel);
    v = phase_speed(p, v, p.duration, spec.coast_decel);
    start += p.duration;
  }
  return v;
}

double slip_factor_at(const ScenarioSpec& spec, double t) {
  if (!spec.wsp) return 1.0;
  const auto& w = *spec.wsp;
  if (t < w.start_t || t > w.end_t) return 1.0;
  const double since = t - w.start_t;
  const auto cycle = static_cast<long>(std::floor(since / w.cycle_period));
  const double phase = since / w.cycle_period - static_cast<double>(cycle);
  const double dip = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * phase));
  return 1.0 - cycle_depth(spec, cycle) * dip;
}

signals::TrainRun simulate(const ScenarioSpec& spec) {
  validate(spec);
  signals::TrainRun run;
  run.run_id = spec.run_id;
  run.role = spec.role;
  run.has_wsp = spec.wsp.has_value();

  const auto count = static_cast<std::size_t>(std::llround(total_duration(spec) / spec.dt));
  run.samples.reserve(count);
  auto wheel_rng = make_rng(spec.seed, "wheel-noise");
  auto gps_rng = make_rng(spec.seed, "gps-noise");
  const double ceiling = spec.speed_ceiling.value_or(std::numeric_limits<double>::infinity());

  for (std::size_t i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) * spec.dt;
    const double v = train_speed_at(spec, t);
    double odo = 1.0;
    if (spec.odometer_error && t >= spec.odometer_error->start_t) odo = spec.odometer_error->factor;
    double wheel = v * slip_factor_at(spec, t) * odo + bounded_noise(wheel_rng, spec.wheel_noise_sigma);
    double gps = v + spec.gps_bias + bounded_noise(gps_rng, spec.gps_noise_sigma);
    wheel = std::clamp(wheel, 0.0, ceiling);
    gps = std::clamp(gps, 0.0, ceiling);
    run.samples.push_back({t, wheel, gps, v});
  }
  return run;
}

namespace {

struct SuiteEntry {
  const char* id;
  signals::RunRole role;
  int length;
  double top_speed;
  double accel;
  double brake;
  double cruise_fraction;
  double coast_fraction;
  double gps_bias;
  double gps_sigma;
  double wheel_sigma;
  bool odometer_error;
  bool wsp;
};

// Lengths of the 15 training/validation runs sum to 5205 samples and those
// of the two test runs to 947. run_07 reaches the normalization speed; its
// positive GPS bias saturates the GPS channel at the ceiling during cruise.
constexpr SuiteEntry kSuite[] = {
    {"run_01", signals::RunRole::train, 300, 12.0, 0.45, 0.60, 0.30, 0.15, 0.0, 0.20, 0.10, false, false},
    {"run_02", signals::RunRole::train, 310, 15.5, 0.50, 0.70, 0.25, 0.20, 0.5, 0.25, 0.10, false, false},
    {"run_03", signals::RunRole::train, 320, 18.0, 0.40, 0.80, 0.30, 0.10, 1.0, 0.30, 0.15, true, false},
    {"run_04", signals::RunRole::train, 330, 20.5, 0.55, 0.75, 0.20, 0.25, 0.0, 0.20, 0.10, false, false},
    {"run_05", signals::RunRole::train, 340, 22.0, 0.35, 0.90, 0.25, 0.20, 0.3, 0.30, 0.12, false, false},
    {"run_06", signals::RunRole::train, 350, 25.0, 0.50, 1.00, 0.30, 0.15, 1.0, 0.25, 0.10, true, false},
    {"run_07", signals::RunRole::train, 360, kNormalizationSpeed, 0.60, 1.10, 0.25, 0.10, 1.0, 0.30, 0.10, false, false},
    {"run_08", signals::RunRole::train, 370, 27.5, 0.45, 0.85, 0.20, 0.25, 0.0, 0.20, 0.15, false, false},
    {"run_09", signals::RunRole::train, 380, 14.0, 0.30, 0.50, 0.35, 0.20, 0.5, 0.25, 0.10, false, false},
    {"run_10", signals::RunRole::train, 390, 24.0, 0.40, 0.70, 0.30, 0.20, 1.0, 0.30, 0.12, true, false},
    {"run_11", signals::RunRole::train, 300, 10.0, 0.35, 0.55, 0.30, 0.20, 0.2, 0.20, 0.10, false, false},
    {"run_12", signals::RunRole::train, 335, 29.0, 0.55, 1.00, 0.20, 0.15, 0.0, 0.25, 0.10, false, false},
    {"run_13", signals::RunRole::train, 345, 13.5, 0.40, 0.45, 0.25, 0.15, 0.3, 0.25, 0.10, false, true},
    {"run_14", signals::RunRole::train, 355, 19.0, 0.45, 0.55, 0.20, 0.15, 0.0, 0.30, 0.12, false, true},
    {"run_15", signals::RunRole::train, 420, 23.0, 0.50, 0.60, 0.25, 0.15, 1.0, 0.25, 0.10, false, true},
    {"test_nowsp", signals::RunRole::test, 450, 21.0, 0.45, 0.80, 0.25, 0.20, 1.0, 0.25, 0.12, true, false},
    {"test_wsp", signals::RunRole::test, 497, 16.0, 0.40, 0.50, 0.25, 0.15, 0.5, 0.25, 0.10, false, true},
};

ScenarioSpec scenario_from_entry(const SuiteEntry& e, std::uint64_t seed, std::size_t index) {
  ScenarioSpec spec;
  spec.run_id = e.id;
  spec.role = e.role;
  spec.seed = derive_seed(seed, std::string("sim/") + e.id) + index;
  spec.gps_bias = e.gps_bias;
  spec.gps_noise_sigma = e.gps_sigma;
  spec.wheel_noise_sigma = e.wheel_sigma;
  spec.speed_ceiling = kNormalizationSpeed;

  const double dwell = 10.0;
  const double t_acc = std::ceil(e.top_speed / e.accel);
  const double t_cruise = std::round(e.cruise_fraction * e.length);
  const double t_coast = std::round(e.coast_fraction * e.length);
  const double v_coast_end = std::max(0.0, e.top_speed - kDefaultCoastDecel * t_coast);
  const double t_brake = std::ceil(v_coast_end / e.brake);
  const double t_stop = e.length - (dwell + t_acc + t_cruise + t_coast + t_brake);
  if (t_stop < 1.0) throw std::logic_error(std::string("suite entry too short: ") + e.id);

  spec.phases = {{PhaseKind::constant, dwell, 0.0},
                 {PhaseKind::accelerate, t_acc, e.top_speed},
                 {PhaseKind::constant, t_cruise, 0.0},
                 {PhaseKind::coast, t_coast, 0.0},
                 {PhaseKind::brake, t_brake, 0.0},
                 {PhaseKind::constant, t_stop, 0.0}};
  const double brake_start = dwell + t_acc + t_cruise + t_coast;
  if (e.odometer_error) spec.odometer_error = OdometerError{brake_start, 1.2};
  if (e.wsp) {
    spec.wsp = WspSpec{brake_start + 3.0, brake_start + t_brake - 3.0, 0.5, 3.0};
  }
  return spec;
}

}  // namespace

std::vector<ScenarioSpec> benchmark_scenarios(std::uint64_t seed) {
  std::vector<ScenarioSpec> specs;
  std::size_t i = 0;
  for (const auto& entry : kSuite) specs.push_back(scenario_from_entry(entry, seed, i++));
  return specs;
}

std::vector<signals::TrainRun> make_benchmark_suite(std::uint64_t seed) {
  std::vector<signals::TrainRun> runs;
  for (const auto& spec : benchmark_scenarios(seed)) runs.push_back(simulate(spec));
  return runs;
}

void to_json(nlohmann::json& j, const ScenarioSpec& spec) {
  j = nlohmann::json{{"run_id", spec.run_id},
                     {"role", std::string(signals::to_string(spec.role))},
                     {"initial_speed", spec.initial_speed},
                     {"gps_noise_sigma", spec.gps_noise_sigma},
                     {"gps_bias", spec.gps_bias},
                     {"wheel_noise_sigma", spec.wheel_noise_sigma},
                     {"coast_decel", spec.coast_decel},
                     {"seed", spec.seed},
                     {"dt", spec.dt}};
  auto& phases = j["phases"] = nlohmann::json::array();
  for (const auto& p : spec.phases) {
    phases.push_back({{"kind", std::string(kind_name(p.kind))},
                      {"duration", p.duration},
                      {"target_speed", p.target_speed}});
  }
  if (spec.odometer_error) {
    j["odometer_error"] = {{"start_t", spec.odometer_error->start_t},
                           {"factor", spec.odometer_error->factor}};
  }
  if (spec.wsp) {
    j["wsp"] = {{"start_t", spec.wsp->start_t},
                {"end_t", spec.wsp->end_t},
                {"max_slip_fraction", spec.wsp->max_slip_fraction},
                {"cycle_period", spec.wsp->cycle_period}};
  }
  if (spec.speed_ceiling) j["speed_ceiling"] = *spec.speed_ceiling;
}

void from_json(const nlohmann::json& j, ScenarioSpec& spec) {
  spec = ScenarioSpec{};
  spec.run_id = j.value("run_id", "run");
  spec.role = signals::role_from_string(j.value("role", "train"));
  spec.initial_speed = j.value("initial_speed", 0.0);
  spec.gps_noise_sigma = j.value("gps_noise_sigma", 0.0);
  spec.gps_bias = j.value("gps_bias", 0.0);
  spec.wheel_noise_sigma = j.value("wheel_noise_sigma", 0.0);
  spec.coast_decel = j.value("coast_decel", kDefaultCoastDecel);
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.dt = j.value("dt", 1.0);
  for (const auto& p : j.at("phases")) {
    spec.phases.push_back({kind_from_name(p.at("kind").get<std::string>()),
                           p.at("duration").get<double>(), p.value("target_speed", 0.0)});
  }
  if (j.contains("odometer_error")) {
    const auto& o = j["odometer_error"];
    spec.odometer_error = OdometerError{o.at("start_t").get<double>(), o.value("factor", 1.2)};
  }
  if (j.contains("wsp")) {
    const auto& w = j["wsp"];
    spec.wsp = WspSpec{w.at("start_t").get<double>(), w.at("end_t").get<double>(),
                       w.value("max_slip_fraction", 0.5), w.value("cycle_period", 3.0)};
  }
  if (j.contains("speed_ceiling")) spec.speed_ceiling = j["speed_ceiling"].get<double>();
}

}  // namespace trainspeed::sim
