#include "trainspeed/akf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trainspeed/errors.hpp"

namespace trainspeed::akf {

namespace {

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

double condition_estimate(const Matrix& s) {
  Eigen::JacobiSVD<Matrix> svd(s);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0) return std::numeric_limits<double>::infinity();
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return sv(0) / smin;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace

void FilterModel::validate() const {
  const auto n = F.rows();
  require(F.cols() == n && n > 0, "F must be square and non-empty");
  require(Q.rows() == n && Q.cols() == n, "Q must be state_dim x state_dim");
  require(H.cols() == n && H.rows() > 0, "H must have state_dim columns");
  require(R.rows() == H.rows() && R.cols() == H.rows(), "R must be meas_dim x meas_dim");
  require(B.rows() == n || B.size() == 0, "B must have state_dim rows");
}

FilterState predict(const FilterModel& model, const FilterState& state, const Vector& u) {
  model.validate();
  require(state.x_hat.size() == model.state_dim(), "state vector size mismatch");
  require(state.P.rows() == model.state_dim() && state.P.cols() == model.state_dim(),
          "covariance size mismatch");
  FilterState out;
  out.x_hat = model.F * state.x_hat;
  if (model.B.size() != 0 && u.size() != 0) {
    require(model.B.cols() == u.size(), "control vector size mismatch");
    out.x_hat += model.B * u;
  }
  out.P = symmetrize(model.F * state.P * model.F.transpose() + model.Q);
  out.step = state.step + 1;
  return out;
}

UpdateResult update(const FilterModel& model, const FilterState& prior, const Vector& z) {
  model.validate();
  require(z.size() == model.meas_dim(), "measurement size mismatch");
  require(prior.x_hat.size() == model.state_dim(), "state vector size mismatch");

  const Matrix& H = model.H;
  UpdateResult out;
  out.innovation = z - H * prior.x_hat;
  out.innovation_cov = H * prior.P * H.transpose() + model.R;
  const double cond = condition_estimate(out.innovation_cov);
  if (!std::isfinite(cond) || cond > kMaxCondition) throw SingularInnovationError(cond);

  // K = P H^T S^-1, computed as (S^-1 H P)^T using the symmetry of S and P.
  out.gain = out.innovation_cov.partialPivLu().solve(H * prior.P).transpose();
  const auto n = model.state_dim();
  out.posterior.x_hat = prior.x_hat + out.gain * out.innovation;
  out.posterior.P = symmetrize((Matrix::Identity(n, n) - out.gain * H) * prior.P);
  out.posterior.step = prior.step;
  return out;
}

InnovationWindow::InnovationWindow(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("innovation window size must be positive");
}

void InnovationWindow::push(const Vector& innovation) {
  if (!buffer_.empty() && buffer_.front().size() != innovation.size()) {
    throw DimensionError("innovation size changed within window");
  }
  buffer_.push_back(innovation);
  if (buffer_.size() > capacity_) buffer_.pop_front();
}

Matrix InnovationWindow::covariance() const {
  if (buffer_.empty()) throw ValidationError("innovation window is empty");
  const auto m = buffer_.front().size();
  Matrix c = Matrix::Zero(m, m);
  for (const auto& nu : buffer_) c.noalias() += nu * nu.transpose();
  return c / static_cast<double>(buffer_.size());
}

std::string to_string(AdaptationMode mode) {
  switch (mode) {
    case AdaptationMode::none: return "none";
    case AdaptationMode::covariance_matching: return "covariance_matching";
    case AdaptationMode::max_likelihood: return "max_likelihood";
  }
  return "none";
}

AdaptationMode adaptation_mode_from_string(const std::string& name) {
  if (name == "none") return AdaptationMode::none;
  if (name == "covariance_matching") return AdaptationMode::covariance_matching;
  if (name == "max_likelihood") return AdaptationMode::max_likelihood;
  throw ConfigError("unknown adaptation mode '" + name + "'");
}

Matrix project_psd(const Matrix& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m));
  Vector values = eig.eigenvalues().cwiseMax(floor);
  return symmetrize(eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose());
}

FilterModel adapt_covariance_matching(AdaptationState& adapt, const FilterModel& model,
                                      const Matrix& gain, const Matrix& P_prior) {
  adapt.innovation_cov_estimate = symmetrize(adapt.window.covariance());
  const Matrix& C = adapt.innovation_cov_estimate;
  require(C.rows() == model.meas_dim(), "innovation size does not match the model");
  require(gain.rows() == model.state_dim() && gain.cols() == model.meas_dim(), "gain shape mismatch");

  FilterModel out = model;
  out.R = project_psd(C - model.H * P_prior * model.H.transpose());
  out.Q = symmetrize(gain * C * gain.transpose());
  return out;
}

double log_likelihood(std::span<const InnovationRecord> history) {
  double sum = 0.0;
  for (const auto& rec : history) {
    const auto lu = rec.innovation_cov.partialPivLu();
    const double det = lu.determinant();
    if (!(det > 0.0)) throw SingularInnovationError(condition_estimate(rec.innovation_cov));
    sum += std::log(det) + rec.innovation.dot(lu.solve(rec.innovation));
  }
  return -0.5 * sum;
}

NoiseScales adapt_max_likelihood(const FilterModel& nominal, const FilterState& start,
                                 std::span<const Vector> measurements,
                                 std::span<const double> scale_grid) {
  if (measurements.size() < 2) throw ValidationError("maximum likelihood needs at least 2 steps");
  if (scale_grid.empty()) throw ConfigError("empty scale grid");

  bool found = false;
  NoiseScales best;
  double best_ll = -std::numeric_limits<double>::infinity();
  double best_distance = std::numeric_limits<double>::infinity();
  const Vector no_control;
  std::vector<InnovationRecord> history;
  for (double q : scale_grid) {
    for (double r : scale_grid) {
      if (!(q > 0.0 && r > 0.0)) throw ConfigError("scale grid values must be positive");
      FilterModel candidate = nominal;
      candidate.Q = nominal.Q * q;
      candidate.R = nominal.R * r;
      history.clear();
      double ll = 0.0;
      try {
        FilterState state = start;
        for (const auto& z : measurements) {
          const auto prior = predict(candidate, state, no_control);
          auto upd = update(candidate, prior, z);
          history.push_back({upd.innovation, upd.innovation_cov});
          state = std::move(upd.posterior);
        }
        ll = log_likelihood(history);
      } catch (const SingularInnovationError&) {
        continue;
      }
      // Ties go to the pair nearest (1, 1) in log scale, then to the earlier pair.
      const double distance = std::abs(std::log(q)) + std::abs(std::log(r));
      if (!found || ll > best_ll || (ll == best_ll && distance < best_distance)) {
        found = true;
        best = {q, r};
        best_ll = ll;
        best_distance = distance;
      }
    }
  }
  if (!found) throw SingularInnovationError(std::numeric_limits<double>::infinity());
  return best;
}

void to_json(nlohmann::json& j, const AkfConfig& c) {
  j = nlohmann::json{{"mode", to_string(c.mode)}, {"window_N", c.window_N}, {"q_init", c.q_init},
                     {"r_init", c.r_init},        {"dt", c.dt},             {"ml_grid", c.ml_grid}};
}

void from_json(const nlohmann::json& j, AkfConfig& c) {
  c = AkfConfig{};
  if (j.contains("mode")) c.mode = adaptation_mode_from_string(j["mode"].get<std::string>());
  c.window_N = j.value("window_N", c.window_N);
  c.q_init = j.value("q_init", c.q_init);
  c.r_init = j.value("r_init", c.r_init);
  c.dt = j.value("dt", c.dt);
  if (j.contains("ml_grid")) c.ml_grid = j["ml_grid"].get<std::vector<double>>();
  if (c.window_N == 0 || !(c.dt > 0.0) || !(c.q_init >= 0.0) || !(c.r_init > 0.0)) {
    throw ConfigError("invalid AKF configuration");
  }
}

FilterModel speed_model(const AkfConfig& config) {
  const double dt = config.dt;
  FilterModel m;
  m.F = Matrix{{1.0, dt}, {0.0, 1.0}};
  m.B = Matrix::Zero(2, 1);
  m.H = Matrix{{1.0, 0.0}, {1.0, 0.0}};
  m.Q = config.q_init * Matrix{{dt * dt * dt / 3.0, dt * dt / 2.0}, {dt * dt / 2.0, dt}};
  m.R = config.r_init * Matrix::Identity(2, 2);
  return m;
}

SpeedEstimateTrace run_akf(const signals::TrainRun& run, const AkfConfig& config,
                           AkfDiagnostics* diagnostics) {
  if (run.samples.empty()) throw ValidationError("run '" + run.run_id + "' has no samples");
  const FilterModel nominal = speed_model(config);
  FilterModel model = nominal;

  const auto& first = run.samples.front();
  FilterState state;
  state.x_hat = Vector{{0.5 * (first.wheel_speed + first.gps_speed), 0.0}};
  state.P = Matrix{{10.0, 0.0}, {0.0, 1.0}};

  AdaptationState adapt{config.mode, InnovationWindow(config.window_N), {}};
  std::deque<FilterState> posteriors;  // max-likelihood re-run anchors
  std::deque<Vector> recent;

  SpeedEstimateTrace trace{run.run_id, "akf", {}};
  trace.entries.reserve(run.samples.size());
  const Vector no_control = Vector::Zero(1);

  for (std::size_t k = 0; k < run.samples.size(); ++k) {
    const auto& s = run.samples[k];
    const Vector z{{s.wheel_speed, s.gps_speed}};
    const FilterState prior = k == 0 ? state : predict(model, state, no_control);
    auto upd = update(model, prior, z);

    switch (config.mode) {
      case AdaptationMode::none:
        break;
      case AdaptationMode::covariance_matching:
        adapt.window.push(upd.innovation);
        // Adaptation starts once the window is full; a partly filled window
        // gives rank-deficient covariance estimates.
        if (adapt.window.full()) {
          model = adapt_covariance_matching(adapt, model, upd.gain, prior.P);
        }
        break;
      case AdaptationMode::max_likelihood:
        posteriors.push_back(upd.posterior);
        recent.push_back(z);
        if (recent.size() > config.window_N) {
          recent.pop_front();
          posteriors.pop_front();
          const std::vector<Vector> window(recent.begin() + 1, recent.end());
          const auto scales =
              adapt_max_likelihood(nominal, posteriors.front(), window, config.ml_grid);
          model.Q = nominal.Q * scales.q_scale;
          model.R = nominal.R * scales.r_scale;
        }
        break;
    }

    state = std::move(upd.posterior);
    if (diagnostics) {
      diagnostics->posterior_covariances.push_back(state.P);
      diagnostics->measurement_noise.push_back(model.R);
    }
    trace.entries.push_back({s.t, std::max(0.0, state.x_hat(0))});
  }
  return trace;
}

}  // namespace trainspeed::akf
