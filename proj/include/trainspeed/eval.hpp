#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trainspeed/signals.hpp"
#include "trainspeed/trace.hpp"

namespace trainspeed::eval {

/// Root mean square error over timestamps present in both the trace and the
/// run's ground truth. Throws ValidationError when nothing overlaps.
double rmse(const SpeedEstimateTrace& trace, const signals::TrainRun& truth);

struct ErrorPoint {
  double t = 0.0;
  double error = 0.0;  // estimate - truth, m/s
};

struct EstimatorMetrics {
  std::string estimator;
  // Over the timestamps shared by every compared trace.
  double rmse = 0.0;
  double max_abs_error = 0.0;
  std::vector<ErrorPoint> error_trace;
  // Over every timestamp this estimator covers.
  double full_rmse = 0.0;
  double full_max_abs_error = 0.0;
  std::size_t full_count = 0;
  SpeedEstimateTrace trace;
};

struct EvalReport {
  std::string run_id;
  bool has_wsp = false;
  std::size_t run_length = 0;
  std::vector<double> common_timestamps;
  std::vector<EstimatorMetrics> rows;  // rmse ascending

  const EstimatorMetrics* find(const std::string& estimator) const;
};

/// Metrics for each trace over the intersection of all traces' timestamps
/// (and the run's ground truth), sorted by rmse. Ties keep input order.
EvalReport compare(std::span<const SpeedEstimateTrace> traces, const signals::TrainRun& truth);

SpeedEstimateTrace wheel_baseline(const signals::TrainRun& run);
SpeedEstimateTrace gps_baseline(const signals::TrainRun& run);

/// RMSE values reported in the paper for its two test profiles. Context
/// only: the underlying dataset is not available.
std::optional<double> paper_reference_rmse(const std::string& estimator, bool wsp);

nlohmann::json report_to_json(const EvalReport& report);

/// report.csv layout: run_id, estimator, rmse_mps, max_abs_error_mps.
void write_report_csv(std::span<const EvalReport> reports, const std::filesystem::path& path);
void write_report_json(std::span<const EvalReport> reports, const std::filesystem::path& path);

struct RenderResult {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

/// Writes speeds_<run>.svg, errors_<run>.svg, report_<run>.csv and
/// report_<run>.json into out_dir.
RenderResult render_plots(const EvalReport& report, const signals::TrainRun& truth,
                          const std::filesystem::path& out_dir);

}  // namespace trainspeed::eval
