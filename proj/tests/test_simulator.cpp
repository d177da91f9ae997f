#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trainspeed/errors.hpp"
#include "trainspeed/simulator.hpp"

using namespace trainspeed;
using namespace trainspeed::sim;

namespace {

ScenarioSpec cruise(double speed, double duration) {
  ScenarioSpec s;
  s.run_id = "cruise";
  s.initial_speed = speed;
  s.phases = {{PhaseKind::constant, duration, 0.0}};
  return s;
}

ScenarioSpec profile() {
  ScenarioSpec s;
  s.run_id = "profile";
  s.phases = {{PhaseKind::accelerate, 60, 20.0},
              {PhaseKind::constant, 40, 0.0},
              {PhaseKind::coast, 30, 0.0},
              {PhaseKind::brake, 50, 0.0},
              {PhaseKind::constant, 10, 0.0}};
  return s;
}

}  // namespace

TEST(Simulate, FaultFreeIdentity) {
  const auto run = simulate(profile());
  ASSERT_FALSE(run.samples.empty());
  for (const auto& s : run.samples) {
    EXPECT_EQ(s.wheel_speed, *s.train_speed);
    EXPECT_EQ(s.gps_speed, *s.train_speed);
  }
}

TEST(Simulate, OdometerErrorScalesWheelSpeed) {
  auto spec = cruise(10.0, 100);
  spec.odometer_error = OdometerError{40.0, 1.2};
  const auto run = simulate(spec);
  for (const auto& s : run.samples) {
    if (s.t < 40.0) {
      EXPECT_DOUBLE_EQ(s.wheel_speed, 10.0);
    } else {
      EXPECT_DOUBLE_EQ(s.wheel_speed, 12.0);
    }
  }
}

TEST(Simulate, WspDipsStayWithinBound) {
  auto spec = cruise(13.5, 120);
  spec.wsp = WspSpec{20.0, 80.0, 0.5, 3.0};
  const auto run = simulate(spec);
  EXPECT_TRUE(run.has_wsp);
  double lowest = 1e9;
  for (const auto& s : run.samples) {
    if (s.t >= 20.0 && s.t <= 80.0) lowest = std::min(lowest, s.wheel_speed);
    if (s.t < 20.0 || s.t > 80.0) EXPECT_DOUBLE_EQ(s.wheel_speed, 13.5);
  }
  EXPECT_GE(lowest, 6.75);
  EXPECT_LT(lowest, 13.5);
}

TEST(Simulate, WspBoundHoldsWithNoise) {
  auto spec = cruise(15.0, 300);
  spec.wheel_noise_sigma = 0.3;
  spec.wsp = WspSpec{10.0, 290.0, 0.4, 4.0};
  spec.seed = 9;
  const auto run = simulate(spec);
  for (const auto& s : run.samples) {
    if (s.t >= 10.0 && s.t <= 290.0) {
      EXPECT_GE(s.wheel_speed, *s.train_speed * (1.0 - 0.4) - 3.0 * 0.3 - 1e-12);
    }
  }
}

TEST(Simulate, SlipFactorRange) {
  auto spec = cruise(10.0, 60);
  spec.wsp = WspSpec{0.0, 60.0, 0.5, 3.0};
  for (double t = 0.0; t <= 60.0; t += 0.1) {
    const double f = slip_factor_at(spec, t);
    EXPECT_GE(f, 0.5);
    EXPECT_LE(f, 1.0);
  }
  EXPECT_EQ(slip_factor_at(cruise(10.0, 60), 5.0), 1.0);
}

TEST(Simulate, Deterministic) {
  auto spec = profile();
  spec.gps_noise_sigma = 0.5;
  spec.wheel_noise_sigma = 0.3;
  spec.gps_bias = kDefaultGpsBias;
  spec.seed = 123;
  EXPECT_EQ(simulate(spec), simulate(spec));
  auto other = spec;
  other.seed = 124;
  EXPECT_NE(simulate(spec), simulate(other));
}

TEST(Simulate, ProfileIsContinuousWithBoundedSlope) {
  const auto spec = profile();
  const auto run = simulate(spec);
  const double a_max = 20.0 / 50.0;  // steepest ramp: brake 20 -> 0 in 50 s
  for (std::size_t i = 1; i < run.size(); ++i) {
    EXPECT_LE(std::abs(*run.samples[i].train_speed - *run.samples[i - 1].train_speed), a_max + 1e-12);
  }
  EXPECT_NEAR(train_speed_at(spec, 60.0), 20.0, 1e-12);
  EXPECT_NEAR(train_speed_at(spec, 100.0), 20.0, 1e-12);
  EXPECT_NEAR(train_speed_at(spec, 130.0), 20.0 - 0.02 * 30.0, 1e-12);
  EXPECT_NEAR(train_speed_at(spec, 180.0), 0.0, 1e-12);
}

TEST(Simulate, NoiseNeverMakesChannelsNegative) {
  auto spec = cruise(0.0, 200);
  spec.gps_noise_sigma = 1.0;
  spec.wheel_noise_sigma = 1.0;
  spec.seed = 5;
  for (const auto& s : simulate(spec).samples) {
    EXPECT_GE(s.wheel_speed, 0.0);
    EXPECT_GE(s.gps_speed, 0.0);
  }
}

TEST(Simulate, GpsBiasAddsOffset) {
  auto spec = cruise(10.0, 20);
  spec.gps_bias = 1.0;
  for (const auto& s : simulate(spec).samples) EXPECT_DOUBLE_EQ(s.gps_speed, 11.0);
}

TEST(Simulate, InvalidSpecsAreRejected) {
  ScenarioSpec empty;
  EXPECT_THROW(simulate(empty), ValidationError);
  auto zero = cruise(5.0, 0.0);
  EXPECT_THROW(simulate(zero), ValidationError);
  auto noisy = cruise(5.0, 10);
  noisy.gps_noise_sigma = -1.0;
  EXPECT_THROW(simulate(noisy), ValidationError);
  auto odo = cruise(5.0, 10);
  odo.odometer_error = OdometerError{0.0, 0.0};
  EXPECT_THROW(simulate(odo), ValidationError);
  // WSP beyond the end of a profile that is still moving
  auto wsp = cruise(5.0, 10);
  wsp.wsp = WspSpec{5.0, 20.0, 0.5, 3.0};
  EXPECT_THROW(simulate(wsp), ValidationError);
}

TEST(Simulate, JsonRoundTrip) {
  auto spec = profile();
  spec.odometer_error = OdometerError{12.0, 1.2};
  spec.wsp = WspSpec{110.0, 170.0, 0.45, 3.5};
  spec.speed_ceiling = 31.3877;
  spec.seed = 77;
  spec.role = signals::RunRole::test;
  const nlohmann::json j = spec;
  const auto back = j.get<ScenarioSpec>();
  EXPECT_EQ(simulate(back), simulate(spec));
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(BenchmarkSuite, Composition) {
  const auto runs = make_benchmark_suite(42);
  ASSERT_EQ(runs.size(), 17u);
  std::size_t wsp = 0, test = 0, train_samples = 0, test_samples = 0;
  for (const auto& r : runs) {
    wsp += r.has_wsp;
    if (r.role == signals::RunRole::test) {
      ++test;
      test_samples += r.size();
    } else {
      train_samples += r.size();
    }
  }
  EXPECT_EQ(wsp, 4u);
  EXPECT_EQ(test, 2u);
  EXPECT_EQ(train_samples, 5205u);
  EXPECT_EQ(test_samples, 947u);
  std::size_t test_wsp = 0;
  for (const auto& r : runs) test_wsp += r.role == signals::RunRole::test && r.has_wsp;
  EXPECT_EQ(test_wsp, 1u);
}

TEST(BenchmarkSuite, PeakSpeedIsTheNormalizationConstant) {
  double peak = 0.0;
  std::size_t runs_at_peak = 0;
  for (const auto& r : make_benchmark_suite(42)) {
    double run_peak = 0.0;
    for (const auto& s : r.samples) run_peak = std::max({run_peak, s.wheel_speed, s.gps_speed});
    peak = std::max(peak, run_peak);
    runs_at_peak += run_peak == kNormalizationSpeed;
  }
  EXPECT_EQ(peak, kNormalizationSpeed);
  EXPECT_EQ(runs_at_peak, 1u);
}

TEST(BenchmarkSuite, DeterministicPerSeed) {
  EXPECT_EQ(make_benchmark_suite(7), make_benchmark_suite(7));
  EXPECT_NE(make_benchmark_suite(7), make_benchmark_suite(8));
}
