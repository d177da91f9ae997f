#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "trainspeed/dataset.hpp"
#include "trainspeed/errors.hpp"
#include "trainspeed/simulator.hpp"

using namespace trainspeed;
namespace support = trainspeed::test_support;
using namespace trainspeed::dataset;

TEST(CountWindows, PublishedCounts) {
  EXPECT_EQ(count_windows(5205, 15, 10), 5055u);
  EXPECT_EQ(count_windows(5205, 15, 20), 4905u);
  EXPECT_EQ(count_windows(5205, 15, 30), 4755u);
}

TEST(CountWindows, RunsTooShortIsAnError) {
  EXPECT_THROW(count_windows(150, 15, 10), ValidationError);
  EXPECT_THROW(count_windows(100, 15, 10), ValidationError);
}

TEST(MakeWindows, LengthTwelveHistoryTen) {
  signals::TrainRun run = support::constant_run("r", 12, 3.0);
  for (std::size_t i = 0; i < run.size(); ++i) run.samples[i].train_speed = static_cast<double>(i);
  const auto w = make_windows(std::span(&run, 1), 10);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].history(), 10u);
  EXPECT_DOUBLE_EQ(w[0].target, 10.0 / kDefaultSpeedDivisor);
  EXPECT_DOUBLE_EQ(w[1].target, 11.0 / kDefaultSpeedDivisor);
  EXPECT_EQ(w[0].t_target, 10.0);
  EXPECT_EQ(w[1].source_run, "r");
}

TEST(MakeWindows, ConstantRunAtDivisorNormalizesToOne) {
  const auto run = support::constant_run("c", 40, 31.3877);
  for (const auto& w : make_windows(std::span(&run, 1), 20)) {
    EXPECT_EQ(w.target, 1.0);
    for (std::size_t r = 0; r < 20; ++r) {
      EXPECT_EQ(w.at(r, 1), 1.0);
      EXPECT_EQ(w.at(r, 2), 1.0);
    }
  }
}

TEST(MakeWindows, TimeColumnIsWindowRelative) {
  signals::TrainRun run = support::constant_run("t", 30, 5.0);
  for (std::size_t i = 0; i < run.size(); ++i) run.samples[i].t = 100.0 + 2.0 * i;
  for (const auto& w : make_windows(std::span(&run, 1), 5)) {
    EXPECT_EQ(w.at(0, 0), 0.0);
    EXPECT_EQ(w.at(4, 0), 1.0);
    EXPECT_DOUBLE_EQ(w.at(2, 0), 0.5);
  }
}

TEST(MakeWindows, InputsAreTheSamplesBeforeTheTarget) {
  const auto runs = sim::make_benchmark_suite(3);
  const auto& run = runs[4];
  const auto w = make_windows(std::span(&run, 1), 10);
  const NormalizationConfig norm;
  for (std::size_t k = 10; k < run.size(); k += 37) {
    const auto& win = w[k - 10];
    EXPECT_EQ(win.t_target, run.samples[k].t);
    for (std::size_t r = 0; r < 10; ++r) {
      const auto& s = run.samples[k - 10 + r];
      EXPECT_NEAR(norm.denormalize(win.at(r, 1)), s.wheel_speed, 1e-12 * std::max(1.0, s.wheel_speed));
      EXPECT_NEAR(norm.denormalize(win.at(r, 2)), s.gps_speed, 1e-12 * std::max(1.0, s.gps_speed));
    }
  }
}

TEST(MakeWindows, SuiteCountMatchesClosedForm) {
  auto runs = sim::make_benchmark_suite(42);
  std::erase_if(runs, [](const auto& r) { return r.role == signals::RunRole::test; });
  std::size_t total = 0;
  for (const auto& r : runs) total += r.size();
  for (std::size_t n : {10u, 20u, 30u, 40u}) {
    EXPECT_EQ(make_windows(runs, n).size(), count_windows(total, runs.size(), n));
  }
}

TEST(MakeWindows, ShortRunAndMissingTruthAreErrors) {
  const auto short_run = support::constant_run("short", 10, 1.0);
  try {
    make_windows(std::span(&short_run, 1), 10);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("short"), std::string::npos);
  }
  auto unlabeled = support::constant_run("u", 20, 1.0);
  unlabeled.samples[15].train_speed.reset();
  EXPECT_THROW(make_windows(std::span(&unlabeled, 1), 10), ValidationError);
  EXPECT_EQ(make_inference_windows(unlabeled, 10).size(), 10u);
}

TEST(MakeWindows, NormalizedRangeOnSuite) {
  const auto runs = sim::make_benchmark_suite(42);
  for (const auto& w : make_windows(runs, 10)) {
    for (std::size_t r = 0; r < 10; ++r) {
      EXPECT_GE(w.at(r, 0), 0.0);
      EXPECT_LE(w.at(r, 0), 1.0);
      EXPECT_GE(w.at(r, 1), 0.0);
      EXPECT_LE(w.at(r, 1), 1.05);
      EXPECT_LE(w.at(r, 2), 1.05);
    }
  }
}

TEST(Split, EightyTwenty) {
  const auto run = support::constant_run("r", 110, 2.0);
  const auto windows = make_windows(std::span(&run, 1), 10);
  ASSERT_EQ(windows.size(), 100u);
  const auto s = split(windows, 0.8, 1);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.validation.size(), 20u);
  EXPECT_EQ(s.split_seed, 1u);
}

TEST(Split, FloorArithmeticOnSuiteSize) {
  auto runs = sim::make_benchmark_suite(42);
  std::erase_if(runs, [](const auto& r) { return r.role == signals::RunRole::test; });
  const auto windows = make_windows(runs, 10);
  ASSERT_EQ(windows.size(), 5055u);
  const auto s = split(windows, 0.8, 42);
  EXPECT_EQ(s.train.size(), 4044u);
  EXPECT_EQ(s.validation.size(), 1011u);
}

TEST(Split, DeterministicAndDisjoint) {
  signals::TrainRun run = support::constant_run("r", 300, 1.0);
  for (std::size_t i = 0; i < run.size(); ++i) run.samples[i].train_speed = static_cast<double>(i);
  const auto windows = make_windows(std::span(&run, 1), 10);
  const auto a = split(windows, 0.8, 5);
  const auto b = split(windows, 0.8, 5);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  std::set<double> train_t, val_t;
  for (const auto& w : a.train) train_t.insert(w.t_target);
  for (const auto& w : a.validation) val_t.insert(w.t_target);
  for (double t : val_t) EXPECT_FALSE(train_t.contains(t));
  EXPECT_EQ(train_t.size() + val_t.size(), windows.size());
  EXPECT_NE(split(windows, 0.8, 6).train, a.train);
}

TEST(Split, InvalidArguments) {
  EXPECT_THROW(split({}, 0.8, 1), ValidationError);
  const auto run = support::constant_run("r", 20, 1.0);
  const auto w = make_windows(std::span(&run, 1), 10);
  EXPECT_THROW(split(w, 0.0, 1), ConfigError);
  EXPECT_THROW(split(w, 1.0, 1), ConfigError);
}

TEST(MakeSplit, TestRunsNeverLeak) {
  const auto runs = sim::make_benchmark_suite(42);
  const auto s = make_split(runs, 20, {}, 0.8, 42);
  std::set<std::string> test_ids;
  for (const auto& r : runs) {
    if (r.role == signals::RunRole::test) test_ids.insert(r.run_id);
  }
  for (const auto& w : s.train) EXPECT_FALSE(test_ids.contains(w.source_run));
  for (const auto& w : s.validation) EXPECT_FALSE(test_ids.contains(w.source_run));
  for (const auto& w : s.test) EXPECT_TRUE(test_ids.contains(w.source_run));
  EXPECT_EQ(s.test.size(), 947u - 2u * 20u);
  EXPECT_EQ(s.train.size() + s.validation.size(), 4905u);
}

TEST(Normalization, RoundTrip) {
  const NormalizationConfig norm;
  EXPECT_EQ(norm.normalize(31.3877), 1.0);
  for (double v : {0.0, 0.1, 5.5, 12.345678, 31.3877, 33.0}) {
    EXPECT_LE(std::abs(norm.denormalize(norm.normalize(v)) - v), 1e-12 * std::max(v, 1e-300));
  }
}

TEST(WindowCache, RoundTripIsBitIdentical) {
  support::TempDir dir("cache");
  const auto runs = sim::make_benchmark_suite(11);
  const auto windows = make_windows(std::span(runs.data(), 3), 10);
  save_window_cache(windows, dir / "w.bin");
  EXPECT_EQ(load_window_cache(dir / "w.bin"), windows);
  EXPECT_EQ(load_window_cache(dir / "w.bin"), make_windows(std::span(runs.data(), 3), 10));
}

TEST(WindowCache, RejectsForeignFiles) {
  support::TempDir dir("cache_bad");
  support::write_file(dir / "bad.bin", "not a cache");
  EXPECT_THROW(load_window_cache(dir / "bad.bin"), ParseError);
  EXPECT_THROW(load_window_cache(dir / "missing.bin"), IoError);
}
