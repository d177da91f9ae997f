#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "trainspeed/signals.hpp"
#include "trainspeed/trace.hpp"

namespace trainspeed::akf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Linear state-space model x_k = F x_{k-1} + B u_k + w_k, z_k = H x_k + v_k
/// with w ~ N(0, Q) and v ~ N(0, R).
struct FilterModel {
  Matrix F;
  Matrix B;
  Matrix H;
  Matrix Q;
  Matrix R;

  Eigen::Index state_dim() const { return F.rows(); }
  Eigen::Index meas_dim() const { return H.rows(); }
  /// Throws DimensionError when the matrices do not compose.
  void validate() const;
};

struct FilterState {
  Vector x_hat;
  Matrix P;
  std::size_t step = 0;
};

struct UpdateResult {
  FilterState posterior;
  Vector innovation;      // z - H x_prior
  Matrix innovation_cov;  // H P_prior H^T + R
  Matrix gain;
};

/// Innovation covariance that is numerically singular. `condition()` is the
/// ratio of extreme singular values (infinite when exactly singular).
class SingularInnovationError : public std::runtime_error {
 public:
  SingularInnovationError(double condition)
      : std::runtime_error("innovation covariance is singular (condition estimate " +
                           std::to_string(condition) + ")"),
        condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

inline constexpr double kMaxCondition = 1e12;
inline constexpr double kEigenFloor = 1e-9;

FilterState predict(const FilterModel& model, const FilterState& state, const Vector& u);
UpdateResult update(const FilterModel& model, const FilterState& prior, const Vector& z);

/// Fixed-capacity ring buffer of the most recent innovations.
class InnovationWindow {
 public:
  explicit InnovationWindow(std::size_t capacity);

  void push(const Vector& innovation);
  std::size_t size() const noexcept { return buffer_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool full() const noexcept { return buffer_.size() == capacity_; }
  /// (1/N') sum of nu nu^T over the N' buffered innovations.
  Matrix covariance() const;

 private:
  std::size_t capacity_;
  std::deque<Vector> buffer_;
};

enum class AdaptationMode { none, covariance_matching, max_likelihood };

std::string to_string(AdaptationMode mode);
AdaptationMode adaptation_mode_from_string(const std::string& name);

struct AdaptationState {
  AdaptationMode mode = AdaptationMode::covariance_matching;
  InnovationWindow window{30};
  Matrix innovation_cov_estimate;
};

/// Symmetric part with eigenvalues floored at `floor`.
Matrix project_psd(const Matrix& m, double floor = kEigenFloor);

/// Covariance matching: C = window covariance, R = C - H P_prior H^T
/// (projected to PSD), Q = K C K^T. Returns the model with Q and R replaced
/// and stores C in `adapt`.
FilterModel adapt_covariance_matching(AdaptationState& adapt, const FilterModel& model,
                                      const Matrix& gain, const Matrix& P_prior);

struct InnovationRecord {
  Vector innovation;
  Matrix innovation_cov;
};

/// L = -1/2 sum (ln|S_k| + nu_k^T S_k^-1 nu_k).
double log_likelihood(std::span<const InnovationRecord> history);

struct NoiseScales {
  double q_scale = 1.0;
  double r_scale = 1.0;

  bool operator==(const NoiseScales&) const = default;
};

/// Grid search of scalar multipliers on the nominal Q and R maximizing the
/// innovation log-likelihood of a filter re-run over `measurements` from
/// `start`. Ties resolve toward the pair nearest (1, 1) in log scale, then
/// toward the first grid pair.
NoiseScales adapt_max_likelihood(const FilterModel& nominal, const FilterState& start,
                                 std::span<const Vector> measurements,
                                 std::span<const double> scale_grid);

struct AkfConfig {
  AdaptationMode mode = AdaptationMode::covariance_matching;
  std::size_t window_N = 30;
  double q_init = 0.05;  // scales the white-jerk process noise shape
  double r_init = 0.25;  // measurement variance per channel, (m/s)^2
  double dt = 1.0;
  std::vector<double> ml_grid = {0.25, 0.5, 1.0, 2.0, 4.0};
};

void to_json(nlohmann::json& j, const AkfConfig& c);
void from_json(const nlohmann::json& j, AkfConfig& c);

/// Speed/acceleration model fusing wheel and GPS speed:
/// x = [v, a], F = [[1, dt], [0, 1]], H = [[1, 0], [1, 0]].
FilterModel speed_model(const AkfConfig& config);

struct AkfDiagnostics {
  std::vector<Matrix> posterior_covariances;
  std::vector<Matrix> measurement_noise;
};

/// Runs the adaptive filter over a run, emitting one estimate per sample
/// (speed component of the posterior, clamped at 0).
SpeedEstimateTrace run_akf(const signals::TrainRun& run, const AkfConfig& config,
                           AkfDiagnostics* diagnostics = nullptr);

}  // namespace trainspeed::akf
