#include "trainspeed/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "trainspeed/errors.hpp"
#include "trainspeed/svg.hpp"

namespace trainspeed::eval {

namespace {

std::map<double, double> truth_by_time(const signals::TrainRun& run) {
  std::map<double, double> out;
  for (const auto& s : run.samples) {
    if (s.train_speed) out.emplace(s.t, *s.train_speed);
  }
  return out;
}

struct ErrorStats {
  double rmse = 0.0;
  double max_abs = 0.0;
  std::size_t count = 0;
};

ErrorStats stats_of(const std::vector<ErrorPoint>& errors) {
  ErrorStats s;
  double sum = 0.0;
  for (const auto& e : errors) {
    sum += e.error * e.error;
    s.max_abs = std::max(s.max_abs, std::abs(e.error));
  }
  s.count = errors.size();
  if (s.count > 0) s.rmse = std::sqrt(sum / static_cast<double>(s.count));
  // Floating-point rounding can push rmse a hair above max_abs for constant errors.
  s.rmse = std::min(s.rmse, s.max_abs);
  return s;
}

std::vector<ErrorPoint> aligned_errors(const SpeedEstimateTrace& trace, const std::map<double, double>& truth,
                                       const std::set<double>* only = nullptr) {
  std::vector<ErrorPoint> errors;
  for (const auto& e : trace.entries) {
    if (!std::isfinite(e.estimate)) continue;
    if (only && !only->contains(e.t)) continue;
    const auto it = truth.find(e.t);
    if (it != truth.end()) errors.push_back({e.t, e.estimate - it->second});
  }
  std::sort(errors.begin(), errors.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  errors.erase(std::unique(errors.begin(), errors.end(), [](const auto& a, const auto& b) { return a.t == b.t; }),
               errors.end());
  return errors;
}

SpeedEstimateTrace baseline(const signals::TrainRun& run, const char* label, double signals::SensorSample::*field) {
  SpeedEstimateTrace trace{run.run_id, label, {}};
  trace.entries.reserve(run.size());
  for (const auto& s : run.samples) trace.entries.push_back({s.t, s.*field});
  return trace;
}

}  // namespace

double rmse(const SpeedEstimateTrace& trace, const signals::TrainRun& truth) {
  const auto errors = aligned_errors(trace, truth_by_time(truth));
  if (errors.empty()) {
    throw ValidationError("estimator '" + trace.estimator + "' has no timestamps overlapping run '" +
                          truth.run_id + "'");
  }
  return stats_of(errors).rmse;
}

const EstimatorMetrics* EvalReport::find(const std::string& estimator) const {
  for (const auto& r : rows) {
    if (r.estimator == estimator) return &r;
  }
  return nullptr;
}

EvalReport compare(std::span<const SpeedEstimateTrace> traces, const signals::TrainRun& truth) {
  if (traces.empty()) throw ValidationError("compare needs at least one trace");
  const auto truth_map = truth_by_time(truth);

  std::set<double> common;
  for (const auto& [t, v] : truth_map) common.insert(t);
  for (const auto& trace : traces) {
    if (trace.run_id != truth.run_id) {
      throw ValidationError("trace '" + trace.estimator + "' belongs to run '" + trace.run_id + "', not '" +
                            truth.run_id + "'");
    }
    std::set<double> mine;
    for (const auto& e : trace.entries) {
      if (std::isfinite(e.estimate)) mine.insert(e.t);
    }
    std::set<double> kept;
    std::set_intersection(common.begin(), common.end(), mine.begin(), mine.end(), std::inserter(kept, kept.end()));
    common = std::move(kept);
  }
  if (common.empty()) throw ValidationError("traces share no timestamps with run '" + truth.run_id + "'");

  EvalReport report;
  report.run_id = truth.run_id;
  report.has_wsp = truth.has_wsp;
  report.run_length = truth.size();
  report.common_timestamps.assign(common.begin(), common.end());
  for (const auto& trace : traces) {
    EstimatorMetrics m;
    m.estimator = trace.estimator;
    m.error_trace = aligned_errors(trace, truth_map, &common);
    const auto shared = stats_of(m.error_trace);
    m.rmse = shared.rmse;
    m.max_abs_error = shared.max_abs;
    const auto full = stats_of(aligned_errors(trace, truth_map));
    m.full_rmse = full.rmse;
    m.full_max_abs_error = full.max_abs;
    m.full_count = full.count;
    m.trace = trace;
    report.rows.push_back(std::move(m));
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const auto& a, const auto& b) { return a.rmse < b.rmse; });
  return report;
}

SpeedEstimateTrace wheel_baseline(const signals::TrainRun& run) {
  return baseline(run, "wheel-baseline", &signals::SensorSample::wheel_speed);
}

SpeedEstimateTrace gps_baseline(const signals::TrainRun& run) {
  return baseline(run, "gps-baseline", &signals::SensorSample::gps_speed);
}

std::optional<double> paper_reference_rmse(const std::string& estimator, bool wsp) {
  if (estimator == "multibranch") return wsp ? 0.4241 : 0.3809;
  if (estimator == "akf") return wsp ? 0.5274 : 0.4832;
  if (estimator == "single2d") return wsp ? 0.4170 : 1.2991;
  if (estimator == "single1d" && !wsp) return 0.6965;
  return std::nullopt;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& m : report.rows) {
    nlohmann::json errors = nlohmann::json::array();
    for (const auto& e : m.error_trace) errors.push_back({e.t, e.error});
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.trace.entries) entries.push_back({e.t, e.estimate});
    nlohmann::json row{{"estimator", m.estimator},
                       {"rmse_mps", m.rmse},
                       {"max_abs_error_mps", m.max_abs_error},
                       {"full_rmse_mps", m.full_rmse},
                       {"full_max_abs_error_mps", m.full_max_abs_error},
                       {"full_count", m.full_count},
                       {"paper_reference_rmse_mps", nullptr},
                       {"error_trace", errors},
                       {"trace", entries}};
    if (const auto ref = paper_reference_rmse(m.estimator, report.has_wsp)) row["paper_reference_rmse_mps"] = *ref;
    rows.push_back(std::move(row));
  }
  return {{"run_id", report.run_id},
          {"has_wsp", report.has_wsp},
          {"run_length", report.run_length},
          {"common_count", report.common_timestamps.size()},
          {"estimators", rows}};
}

void write_report_csv(std::span<const EvalReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "run_id,estimator,rmse_mps,max_abs_error_mps\n";
  for (const auto& r : reports) {
    for (const auto& m : r.rows) {
      out << r.run_id << ',' << m.estimator << ',' << signals::format_double(m.rmse) << ','
          << signals::format_double(m.max_abs_error) << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_report_json(std::span<const EvalReport> reports, const std::filesystem::path& path) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : reports) runs.push_back(report_to_json(r));
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json{{"runs", runs}}.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

const char* color_for(const std::string& estimator, std::size_t fallback_index) {
  if (estimator == "akf") return "#d62728";
  if (estimator == "single2d") return "#9467bd";
  if (estimator == "single1d") return "#8c564b";
  if (estimator == "multibranch") return "#2ca02c";
  if (estimator == "wheel-baseline") return "#1f77b4";
  if (estimator == "gps-baseline") return "#ff7f0e";
  static const char* extra[] = {"#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return extra[fallback_index % 4];
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

RenderResult render_plots(const EvalReport& report, const signals::TrainRun& truth,
                          const std::filesystem::path& out_dir) {
  if (report.rows.empty()) throw ValidationError("cannot render an empty report");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<svg::Series> speeds;
  svg::Series truth_series{"truth", "#000000", {}, {}, false};
  svg::Series wheel{"wheel", "#1f77b4", {}, {}, true};
  svg::Series gps{"gps", "#ff7f0e", {}, {}, true};
  for (const auto& s : truth.samples) {
    if (s.train_speed) {
      truth_series.x.push_back(s.t);
      truth_series.y.push_back(*s.train_speed);
    }
    wheel.x.push_back(s.t);
    wheel.y.push_back(s.wheel_speed);
    gps.x.push_back(s.t);
    gps.y.push_back(s.gps_speed);
  }
  speeds.push_back(std::move(truth_series));
  speeds.push_back(std::move(wheel));
  speeds.push_back(std::move(gps));

  std::vector<svg::Series> errors;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& m = report.rows[i];
    const bool is_baseline = m.estimator == "wheel-baseline" || m.estimator == "gps-baseline";
    if (!is_baseline) {
      svg::Series s{m.estimator, color_for(m.estimator, i), {}, {}, false};
      for (const auto& e : m.trace.entries) {
        s.x.push_back(e.t);
        s.y.push_back(e.estimate);
      }
      speeds.push_back(std::move(s));
    }
    svg::Series err{m.estimator, color_for(m.estimator, i), {}, {}, is_baseline};
    for (const auto& e : m.error_trace) {
      err.x.push_back(e.t);
      err.y.push_back(e.error);
    }
    errors.push_back(std::move(err));
  }

  const auto speed_chart =
      svg::line_chart(speeds, {"Speed estimates: " + report.run_id, "time (s)", "speed (m/s)", false});
  const auto error_chart =
      svg::line_chart(errors, {"Estimation error: " + report.run_id, "time (s)", "error (m/s)", true});

  RenderResult result;
  for (const auto& w : speed_chart.warnings) result.warnings.push_back("speeds_" + report.run_id + ": " + w);
  for (const auto& w : error_chart.warnings) result.warnings.push_back("errors_" + report.run_id + ": " + w);

  const auto speeds_path = out_dir / ("speeds_" + report.run_id + ".svg");
  const auto errors_path = out_dir / ("errors_" + report.run_id + ".svg");
  const auto csv_path = out_dir / ("report_" + report.run_id + ".csv");
  const auto json_path = out_dir / ("report_" + report.run_id + ".json");
  write_text(speeds_path, speed_chart.markup);
  write_text(errors_path, error_chart.markup);
  write_report_csv(std::span(&report, 1), csv_path);
  write_report_json(std::span(&report, 1), json_path);
  result.files = {speeds_path, errors_path, csv_path, json_path};
  return result;
}

}  // namespace trainspeed::eval
