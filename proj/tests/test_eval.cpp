#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "trainspeed/errors.hpp"
#include "trainspeed/eval.hpp"
#include "trainspeed/simulator.hpp"
#include "trainspeed/svg.hpp"

using namespace trainspeed;
using namespace trainspeed::eval;
namespace support = trainspeed::test_support;

namespace {

SpeedEstimateTrace trace_from(const signals::TrainRun& run, const std::string& estimator, double offset,
                              std::size_t skip = 0) {
  SpeedEstimateTrace tr{run.run_id, estimator, {}};
  for (std::size_t i = skip; i < run.size(); ++i) {
    tr.entries.push_back({run.samples[i].t, *run.samples[i].train_speed + offset});
  }
  return tr;
}

signals::TrainRun ramp_run() {
  auto run = support::constant_run("ramp", 12, 0.0);
  for (std::size_t i = 0; i < run.size(); ++i) run.samples[i].train_speed = 0.5 * static_cast<double>(i);
  return run;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST(Rmse, Examples) {
  const auto run = support::constant_run("c", 4, 10.0);
  EXPECT_EQ(rmse(trace_from(run, "akf", 0.0), run), 0.0);
  EXPECT_DOUBLE_EQ(rmse(trace_from(run, "akf", 0.5), run), 0.5);
  auto alt = trace_from(run, "akf", 0.0);
  for (std::size_t i = 0; i < alt.entries.size(); ++i) alt.entries[i].estimate += i % 2 ? -1.0 : 1.0;
  EXPECT_DOUBLE_EQ(rmse(alt, run), 1.0);
}

TEST(Rmse, NoOverlapIsAnError) {
  const auto run = support::constant_run("c", 4, 10.0);
  SpeedEstimateTrace tr{"c", "akf", {{100.0, 1.0}, {101.0, 1.0}}};
  EXPECT_THROW(rmse(tr, run), ValidationError);
  auto no_truth = run;
  for (auto& s : no_truth.samples) s.train_speed.reset();
  EXPECT_THROW(rmse(trace_from(run, "akf", 0.0), no_truth), ValidationError);
}

TEST(Rmse, OrderInvariantAndZeroOnTruth) {
  const auto run = sim::make_benchmark_suite(42).at(6);
  EXPECT_EQ(rmse(trace_from(run, "akf", 0.0), run), 0.0);
  auto tr = wheel_baseline(run);
  const double before = rmse(tr, run);
  std::mt19937 gen(4);
  std::shuffle(tr.entries.begin(), tr.entries.end(), gen);
  EXPECT_NEAR(rmse(tr, run), before, 1e-12);
}

TEST(Rmse, MatchesDirectComputationOnPartialTrace) {
  const auto run = ramp_run();
  auto tr = trace_from(run, "akf", 0.0, 5);
  double sum = 0.0;
  for (std::size_t i = 0; i < tr.entries.size(); ++i) {
    const double e = 0.1 * static_cast<double>(i);
    tr.entries[i].estimate += e;
    sum += e * e;
  }
  EXPECT_NEAR(rmse(tr, run), std::sqrt(sum / static_cast<double>(tr.entries.size())), 1e-12);
}

TEST(Compare, SortsByRmse) {
  const auto run = support::constant_run("c", 6, 10.0);
  const std::vector<SpeedEstimateTrace> traces{trace_from(run, "wheel-baseline", 1.0), trace_from(run, "akf", 0.0)};
  const auto report = compare(traces, run);
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[0].estimator, "akf");
  EXPECT_EQ(report.rows[0].rmse, 0.0);
  EXPECT_DOUBLE_EQ(report.rows[1].rmse, 1.0);
  EXPECT_DOUBLE_EQ(report.rows[1].max_abs_error, 1.0);
  EXPECT_EQ(report.find("akf"), &report.rows[0]);
  EXPECT_EQ(report.find("gps-baseline"), nullptr);
}

TEST(Compare, IntersectionOnlyShrinks) {
  const auto run = ramp_run();
  std::vector<SpeedEstimateTrace> traces{trace_from(run, "akf", 0.3)};
  auto report = compare(traces, run);
  std::size_t previous = report.common_timestamps.size();
  EXPECT_EQ(previous, run.size());
  for (std::size_t skip : {2u, 0u, 5u, 3u}) {
    traces.push_back(trace_from(run, "cnn" + std::to_string(skip), 0.1 * static_cast<double>(skip), skip));
    report = compare(traces, run);
    EXPECT_LE(report.common_timestamps.size(), previous);
    previous = report.common_timestamps.size();
  }
  EXPECT_EQ(previous, run.size() - 5);
  const auto* akf = report.find("akf");
  EXPECT_EQ(akf->error_trace.size(), previous);
  EXPECT_EQ(akf->full_count, run.size());
  EXPECT_DOUBLE_EQ(akf->full_rmse, 0.3);
}

TEST(Compare, Errors) {
  const auto run = ramp_run();
  const std::vector<SpeedEstimateTrace> none;
  EXPECT_THROW(compare(none, run), ValidationError);
  SpeedEstimateTrace late{"ramp", "akf", {{100.0, 1.0}}};
  const std::vector<SpeedEstimateTrace> disjoint{trace_from(run, "gps-baseline", 0.0), late};
  EXPECT_THROW(compare(disjoint, run), ValidationError);
  const std::vector<SpeedEstimateTrace> other{SpeedEstimateTrace{"other", "akf", {{0.0, 1.0}}}};
  EXPECT_THROW(compare(other, run), ValidationError);
}

TEST(Compare, RmseNeverExceedsMaxError) {
  for (const auto& run : sim::make_benchmark_suite(42)) {
    const std::vector<SpeedEstimateTrace> traces{wheel_baseline(run), gps_baseline(run)};
    for (const auto& row : compare(traces, run).rows) {
      EXPECT_LE(row.rmse, row.max_abs_error + 1e-12);
      EXPECT_LE(row.full_rmse, row.full_max_abs_error + 1e-12);
    }
  }
}

TEST(Baselines, WheelSlipRaisesWheelError) {
  for (const auto& spec : sim::benchmark_scenarios(42)) {
    if (!spec.wsp) continue;
    auto clean = spec;
    clean.wsp.reset();
    const auto with = sim::simulate(spec);
    const auto without = sim::simulate(clean);
    EXPECT_GT(rmse(wheel_baseline(with), with), rmse(wheel_baseline(without), without)) << spec.run_id;
    EXPECT_EQ(rmse(gps_baseline(with), with), rmse(gps_baseline(without), without)) << spec.run_id;
  }
}

TEST(Baselines, EchoSensorChannels) {
  const auto run = sim::make_benchmark_suite(42).at(0);
  const auto w = wheel_baseline(run);
  const auto g = gps_baseline(run);
  ASSERT_EQ(w.entries.size(), run.size());
  EXPECT_EQ(w.estimator, "wheel-baseline");
  EXPECT_EQ(g.estimator, "gps-baseline");
  EXPECT_EQ(w.entries[7].estimate, run.samples[7].wheel_speed);
  EXPECT_EQ(g.entries[7].estimate, run.samples[7].gps_speed);
}

TEST(PaperReference, ValuesFromText) {
  EXPECT_EQ(paper_reference_rmse("multibranch", false), 0.3809);
  EXPECT_EQ(paper_reference_rmse("multibranch", true), 0.4241);
  EXPECT_EQ(paper_reference_rmse("akf", false), 0.4832);
  EXPECT_EQ(paper_reference_rmse("akf", true), 0.5274);
  EXPECT_EQ(paper_reference_rmse("single2d", false), 1.2991);
  EXPECT_EQ(paper_reference_rmse("single2d", true), 0.4170);
  EXPECT_EQ(paper_reference_rmse("single1d", false), 0.6965);
  EXPECT_FALSE(paper_reference_rmse("single1d", true).has_value());
  EXPECT_FALSE(paper_reference_rmse("wheel-baseline", false).has_value());
}

TEST(Report, CsvAndJson) {
  support::TempDir dir("report");
  const auto run = support::constant_run("c", 6, 10.0);
  const std::vector<SpeedEstimateTrace> traces{trace_from(run, "akf", 0.5)};
  const std::vector<EvalReport> reports{compare(traces, run)};
  write_report_csv(reports, dir / "r.csv");
  EXPECT_EQ(support::read_file(dir / "r.csv"), "run_id,estimator,rmse_mps,max_abs_error_mps\nc,akf,0.5,0.5\n");
  write_report_json(reports, dir / "r.json");
  const auto j = nlohmann::json::parse(support::read_file(dir / "r.json"));
  const auto& row = j.at("runs").at(0).at("estimators").at(0);
  EXPECT_EQ(row.at("estimator"), "akf");
  EXPECT_EQ(row.at("trace").size(), 6u);
  EXPECT_EQ(row.at("paper_reference_rmse_mps"), 0.4832);
}

TEST(Render, FilesAndDeterminism) {
  support::TempDir dir("render");
  const auto run = ramp_run();
  const std::vector<SpeedEstimateTrace> traces{trace_from(run, "akf", 0.2)};
  const auto report = compare(traces, run);
  const auto result = render_plots(report, run, dir.path());
  ASSERT_EQ(result.files.size(), 4u);
  const auto speeds = support::read_file(dir / "speeds_ramp.svg");
  const auto errors = support::read_file(dir / "errors_ramp.svg");
  EXPECT_NE(speeds.find("viewBox=\"0 0 1200 400\""), std::string::npos);
  EXPECT_EQ(count(speeds, "<polyline"), 4u);  // truth, wheel, gps, akf
  EXPECT_EQ(count(errors, "<polyline"), 1u);
  EXPECT_TRUE(std::filesystem::exists(dir / "report_ramp.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "report_ramp.json"));
  render_plots(report, run, dir.path());
  EXPECT_EQ(support::read_file(dir / "speeds_ramp.svg"), speeds);
  EXPECT_EQ(support::read_file(dir / "errors_ramp.svg"), errors);
}

TEST(Render, ShortSeriesOmittedWithWarning) {
  const auto chart = svg::line_chart({{"one", "#000", {1.0}, {2.0}, false},
                                      {"two", "#111", {1.0, 2.0}, {2.0, 3.0}, false},
                                      {"nan", "#222", {1.0, 2.0}, {NAN, 3.0}, false}},
                                     {"t", "x", "y", false});
  EXPECT_EQ(count(chart.markup, "<polyline"), 1u);
  EXPECT_EQ(chart.warnings.size(), 2u);
  EXPECT_EQ(svg::escape("a<b&\"c\">"), "a&lt;b&amp;&quot;c&quot;&gt;");
}

TEST(Render, UnwritableDirectory) {
  support::TempDir dir("blocked");
  support::write_file(dir / "file", "x");
  const auto run = ramp_run();
  const std::vector<SpeedEstimateTrace> traces{trace_from(run, "akf", 0.0)};
  EXPECT_THROW(render_plots(compare(traces, run), run, dir / "file" / "sub"), IoError);
}
