#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trainspeed/nn/layers.hpp"
#include "trainspeed/nn/tensor.hpp"

namespace trainspeed::nn {

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d loss / d pred, same shape as pred
};

/// L = (1/N) sum (y_i - yhat_i)^2 over all elements; grad = 2 (yhat - y) / N.
LossResult mse_loss(const Tensor& pred, const Tensor& target);

/// w <- w - lr * grad for every parameter, then zeroes the gradients.
/// Throws DimensionError if a gradient is missing or mis-shaped.
void sgd_step(std::span<Parameter* const> params, double learning_rate);

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct TrainerConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 40;
  OptimizerKind optimizer = OptimizerKind::sgd;
  bool dropout_active = true;
  std::uint64_t seed = 0;
};

/// Applies one update to `params` and zeroes their gradients.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
            double epsilon = 1e-7);

  void step(std::span<Parameter* const> params);
  OptimizerKind kind() const noexcept { return kind_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct GradCheckOptions {
  double h = 1e-5;
  /// 0 checks every element; otherwise a seeded sample of this many
  /// elements per parameter tensor.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
  /// When positive, the step is divided by 10 (at most twice) until the
  /// forward and backward one-sided slopes agree to this fraction. Elements
  /// that never agree sit on a ReLU or max-pool switch and are skipped.
  double smoothness_tolerance = 0.0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst_parameter;
};

/// Central finite differences of the MSE loss of `network(input)` against
/// `target`, compared with backpropagated gradients. Runs batch norm in
/// training mode with dropout off. Relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8). Batch-norm running statistics are
/// restored afterwards.
GradCheckResult gradient_check(Layer& network, const Tensor& input, const Tensor& target,
                               const GradCheckOptions& options = {});

/// Gradient of the loss w.r.t. the network input, checked the same way.
GradCheckResult input_gradient_check(Layer& network, const Tensor& input, const Tensor& target,
                                     double h = 1e-5);

/// Parameter and buffer values keyed by position, with shapes.
nlohmann::json save_state(Layer& network);
/// Loads values saved by save_state into a network of identical structure.
/// Throws ParseError on any count or shape mismatch.
void load_state(Layer& network, const nlohmann::json& state);

}  // namespace trainspeed::nn
