#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "trainspeed/nn/kernels.hpp"
#include "trainspeed/nn/tensor.hpp"
#include "trainspeed/rng.hpp"

namespace trainspeed::nn {

using kernels::Padding;

/// Forward-pass mode. Batch norm uses batch statistics when `training`;
/// dropout is active only when both flags are set, so gradient checks can
/// run batch norm in training mode with a deterministic network.
struct Context {
  bool training = false;
  bool dropout_active = false;

  static Context train() { return {true, true}; }
  static Context infer() { return {false, false}; }
  static Context deterministic_train() { return {true, false}; }
};

/// Non-trainable state saved with a checkpoint (batch-norm running stats).
struct Buffer {
  std::string name;
  Tensor* value;
};

/// Layers map a batch (B, ...) to a batch (B, ...). `backward` consumes the
/// gradient of the loss w.r.t. the last forward output, accumulates
/// parameter gradients, and returns the gradient w.r.t. that forward input.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Tensor forward(const Tensor& input, const Context& ctx) = 0;
  virtual Tensor backward(const Tensor& grad_output) = 0;
  /// Per-sample output shape (batch axis excluded) for a per-sample input shape.
  virtual Shape output_shape(const Shape& input) const = 0;

  virtual void collect_parameters(std::vector<Parameter*>&) {}
  virtual void collect_buffers(std::vector<Buffer>&) {}
  /// Initializes trainable parameters from `rng`.
  virtual void initialize(Rng&) {}
  virtual void seed_dropout(std::uint64_t) {}
};

class Conv2D : public Layer {
 public:
  Conv2D(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
         Padding padding = Padding::same, bool use_bias = true);

  std::string kind() const override { return "conv2d"; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void initialize(Rng& rng) override;

  Parameter& weights() { return weights_; }
  Parameter& bias() { return bias_; }

 private:
  Padding padding_;
  bool use_bias_;
  Parameter weights_;  // (KH, KW, C_in, C_out)
  Parameter bias_;     // (C_out)
  Tensor input_;
};

class Conv1D : public Layer {
 public:
  Conv1D(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         Padding padding = Padding::same, bool use_bias = true);

  std::string kind() const override { return "conv1d"; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void initialize(Rng& rng) override;

  Parameter& weights() { return weights_; }
  Parameter& bias() { return bias_; }

 private:
  Padding padding_;
  bool use_bias_;
  Parameter weights_;  // (K, C_in, C_out)
  Parameter bias_;
  Tensor input_;
};

/// Per-channel normalization over every axis but the last.
class BatchNorm : public Layer {
 public:
  explicit BatchNorm(std::size_t channels, double epsilon = 1e-5, double momentum = 0.9);

  std::string kind() const override { return "batch_norm"; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override { return input; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Buffer>& out) override;
  void initialize(Rng& rng) override;

  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  double epsilon_;
  double momentum_;
  Parameter gamma_;
  Parameter beta_;
  Tensor running_mean_;
  Tensor running_var_;
  // cache of the last forward
  bool cached_training_ = false;
  Tensor normalized_;
  std::vector<double> inv_std_;
};

class ReLU : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override { return input; }

 private:
  Tensor input_;
};

/// Inverted dropout: survivors are scaled by 1/(1-rate) during training so
/// inference is the identity.
class Dropout : public Layer {
 public:
  explicit Dropout(double rate, std::uint64_t seed = 0);

  std::string kind() const override { return "dropout"; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override { return input; }
  void seed_dropout(std::uint64_t seed) override { rng_.seed(seed); }

  double rate() const noexcept { return rate_; }

 private:
  double rate_;
  Rng rng_;
  std::vector<double> mask_;  // empty when the last forward was the identity
};

/// Max pooling over the time axis of (B, L, C). The pool is clamped to the
/// sequence length, so short sequences pool to length 1.
class MaxPool1D : public Layer {
 public:
  MaxPool1D(std::size_t pool, std::size_t stride);

  std::string kind() const override { return "max_pool1d"; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override;

 private:
  std::size_t pool_;
  std::size_t stride_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

class GlobalMaxPool1D : public Layer {
 public:
  std::string kind() const override { return "global_max_pool"; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override;

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

class Dense : public Layer {
 public:
  Dense(std::size_t in_features, std::size_t out_features);

  std::string kind() const override { return "dense"; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void initialize(Rng& rng) override;

  Parameter& weights() { return weights_; }  // (D_out, D_in)
  Parameter& bias() { return bias_; }

 private:
  Parameter weights_;
  Parameter bias_;
  Tensor input_;
};

/// Reshapes every sample to `shape` (element count preserved).
class Reshape : public Layer {
 public:
  explicit Reshape(Shape per_sample_shape, std::string kind = "reshape");

  std::string kind() const override { return kind_; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override;

 private:
  Shape shape_;
  std::string kind_;
  Shape input_shape_;
};

/// (B, d1, d2, ...) -> (B, d1*d2*...).
class Flatten : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override;

 private:
  Shape input_shape_;
};

/// Layers applied in order. Every intermediate output is checked for
/// non-finite values.
class Sequential : public Layer {
 public:
  Sequential() = default;

  Sequential& add(std::unique_ptr<Layer> layer);
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    add(std::move(layer));
    return ref;
  }

  std::string kind() const override { return "sequential"; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Buffer>& out) override;
  void initialize(Rng& rng) override;
  void seed_dropout(std::uint64_t seed) override;

  std::size_t size() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Splits the last axis of (B, L, C) into C single-channel inputs (B, L, 1),
/// runs one branch per channel (each ending in a (B, F_i) feature vector),
/// and concatenates the features to (B, sum F_i).
class MultiBranch : public Layer {
 public:
  explicit MultiBranch(std::vector<std::unique_ptr<Sequential>> branches);

  std::string kind() const override { return "multi_branch"; }
  Tensor forward(const Tensor& input, const Context& ctx) override;
  Tensor backward(const Tensor& grad_output) override;
  Shape output_shape(const Shape& input) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Buffer>& out) override;
  void initialize(Rng& rng) override;
  void seed_dropout(std::uint64_t seed) override;

  std::size_t branch_count() const noexcept { return branches_.size(); }
  Sequential& branch(std::size_t i) { return *branches_.at(i); }
  /// Pre-concatenation features of branch i from the last forward.
  const Tensor& branch_output(std::size_t i) const { return outputs_.at(i); }

 private:
  std::vector<std::unique_ptr<Sequential>> branches_;
  std::vector<Tensor> outputs_;
};

/// Kaiming-uniform fill: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

}  // namespace trainspeed::nn
