#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace trainspeed::signals {

/// One timestep of sensor data. Speeds in m/s.
struct SensorSample {
  double t = 0.0;
  double wheel_speed = 0.0;
  double gps_speed = 0.0;
  /// Ground truth. Absent for inference-only data, never encoded as 0.0.
  std::optional<double> train_speed;

  bool operator==(const SensorSample&) const = default;
};

enum class RunRole { train, validation, test };

std::string_view to_string(RunRole role);
RunRole role_from_string(std::string_view name);

struct TrainRun {
  std::string run_id;
  std::vector<SensorSample> samples;
  bool has_wsp = false;
  RunRole role = RunRole::train;

  std::size_t size() const noexcept { return samples.size(); }
  bool has_ground_truth() const;

  bool operator==(const TrainRun&) const = default;
};

/// Throws ValidationError if the run is empty, time is not strictly
/// increasing, or any speed is negative or non-finite.
void validate_run(const TrainRun& run);

/// Time steps deviating from `nominal_dt` by more than 10%. Non-fatal: the
/// toolkit assumes uniform 1 Hz data and only reports irregular spacing.
std::vector<std::string> spacing_warnings(const TrainRun& run, double nominal_dt = 1.0);

inline constexpr std::string_view kCsvHeader = "run_id,t,wheel_speed,gps_speed,train_speed";

/// Parses the run CSV format. Rows are grouped by run_id in order of first
/// appearance; samples are sorted by t within each run. Roles and WSP flags
/// are not part of the CSV and default to train / false.
std::vector<TrainRun> read_runs(std::istream& in);
std::vector<TrainRun> load_runs(const std::filesystem::path& path);

void write_runs(std::ostream& out, const std::vector<TrainRun>& runs);
void save_runs(const std::vector<TrainRun>& runs, const std::filesystem::path& path);

/// Sidecar manifest carrying what the CSV cannot: role and WSP flag per run.
std::filesystem::path manifest_path(const std::filesystem::path& csv_path);
void save_manifest(const std::vector<TrainRun>& runs, const std::filesystem::path& path);
/// Applies the manifest to runs with matching ids; unknown ids are ignored.
void apply_manifest(std::vector<TrainRun>& runs, const std::filesystem::path& path);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double value);

}  // namespace trainspeed::signals
