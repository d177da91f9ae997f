#include "trainspeed/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "trainspeed/errors.hpp"

namespace trainspeed::nn {

namespace {

void accumulate(Tensor& into, const Tensor& delta) {
  if (into.shape() != delta.shape()) throw DimensionError("gradient shape mismatch");
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += delta[i];
}

Shape batch_shape(std::size_t batch, const Shape& per_sample) {
  Shape s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

Shape sample_shape(const Shape& full) { return Shape(full.begin() + 1, full.end()); }

Parameter make_parameter(std::string name, Shape shape) {
  Parameter p{std::move(name), Tensor(shape), Tensor(shape)};
  return p;
}

}  // namespace

void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& v : t.values()) v = (2.0 * uniform01(rng) - 1.0) * bound;
}

// --- Conv2D ---------------------------------------------------------------

Conv2D::Conv2D(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h,
               std::size_t kernel_w, Padding padding, bool use_bias)
    : padding_(padding),
      use_bias_(use_bias),
      weights_(make_parameter("kernel", {kernel_h, kernel_w, in_channels, out_channels})),
      bias_(use_bias ? make_parameter("bias", {out_channels}) : Parameter{}) {}

Tensor Conv2D::forward(const Tensor& input, const Context&) {
  input_ = input;
  return kernels::conv2d_forward(input, weights_.value, bias_.value, padding_);
}

Tensor Conv2D::backward(const Tensor& grad_output) {
  auto g = kernels::conv2d_backward(input_, weights_.value, grad_output, padding_, use_bias_);
  accumulate(weights_.grad, g.kernel);
  if (use_bias_) accumulate(bias_.grad, g.bias);
  return std::move(g.input);
}

Shape Conv2D::output_shape(const Shape& input) const {
  const auto g = kernels::conv_geometry(batch_shape(1, input), weights_.value.shape(), padding_);
  return {g.out_h, g.out_w, g.out_channels};
}

void Conv2D::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weights_);
  if (use_bias_) out.push_back(&bias_);
}

void Conv2D::initialize(Rng& rng) {
  const auto& s = weights_.value.shape();
  kaiming_uniform(weights_.value, s[0] * s[1] * s[2], rng);
  if (use_bias_) bias_.value.fill(0.0);
}

// --- Conv1D ---------------------------------------------------------------

Conv1D::Conv1D(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Padding padding,
               bool use_bias)
    : padding_(padding),
      use_bias_(use_bias),
      weights_(make_parameter("kernel", {kernel, in_channels, out_channels})),
      bias_(use_bias ? make_parameter("bias", {out_channels}) : Parameter{}) {}

Tensor Conv1D::forward(const Tensor& input, const Context&) {
  input_ = input;
  return kernels::conv1d_forward(input, weights_.value, bias_.value, padding_);
}

Tensor Conv1D::backward(const Tensor& grad_output) {
  auto g = kernels::conv1d_backward(input_, weights_.value, grad_output, padding_, use_bias_);
  accumulate(weights_.grad, g.kernel);
  if (use_bias_) accumulate(bias_.grad, g.bias);
  return std::move(g.input);
}

Shape Conv1D::output_shape(const Shape& input) const {
  if (input.size() != 2) throw DimensionError("conv1d expects (L, C) samples");
  const auto& k = weights_.value.shape();
  const auto g = kernels::conv_geometry({1, input[0], 1, input[1]}, {k[0], 1, k[1], k[2]}, padding_);
  return {g.out_h, g.out_channels};
}

void Conv1D::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weights_);
  if (use_bias_) out.push_back(&bias_);
}

void Conv1D::initialize(Rng& rng) {
  const auto& s = weights_.value.shape();
  kaiming_uniform(weights_.value, s[0] * s[1], rng);
  if (use_bias_) bias_.value.fill(0.0);
}

// --- BatchNorm ------------------------------------------------------------

BatchNorm::BatchNorm(std::size_t channels, double epsilon, double momentum)
    : epsilon_(epsilon),
      momentum_(momentum),
      gamma_(make_parameter("gamma", {channels})),
      beta_(make_parameter("beta", {channels})),
      running_mean_({channels}, 0.0),
      running_var_({channels}, 1.0) {
  gamma_.value.fill(1.0);
}

Tensor BatchNorm::forward(const Tensor& input, const Context& ctx) {
  const std::size_t channels = gamma_.value.size();
  if (input.rank() < 2 || input.shape().back() != channels) {
    throw DimensionError("batch_norm expects " + std::to_string(channels) + " channels, got " +
                         shape_string(input.shape()));
  }
  const std::size_t rows = input.size() / channels;
  cached_training_ = ctx.training;
  normalized_ = Tensor(input.shape());
  inv_std_.assign(channels, 0.0);
  Tensor out(input.shape());

  if (ctx.training && input.dim(0) < 2) {
    throw DimensionError("batch_norm in training mode needs a batch of at least 2");
  }

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(channels); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    double mean = running_mean_[c];
    double var = running_var_[c];
    if (ctx.training) {
      mean = 0.0;
      for (std::size_t r = 0; r < rows; ++r) mean += input[r * channels + c];
      mean /= static_cast<double>(rows);
      var = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = input[r * channels + c] - mean;
        var += d * d;
      }
      var /= static_cast<double>(rows);
      running_mean_[c] = momentum_ * running_mean_[c] + (1.0 - momentum_) * mean;
      running_var_[c] = momentum_ * running_var_[c] + (1.0 - momentum_) * var;
    }
    const double inv_std = 1.0 / std::sqrt(var + epsilon_);
    inv_std_[c] = inv_std;
    for (std::size_t r = 0; r < rows; ++r) {
      const double xhat = (input[r * channels + c] - mean) * inv_std;
      normalized_[r * channels + c] = xhat;
      out[r * channels + c] = gamma_.value[c] * xhat + beta_.value[c];
    }
  }
  return out;
}

Tensor BatchNorm::backward(const Tensor& grad_output) {
  const std::size_t channels = gamma_.value.size();
  if (grad_output.shape() != normalized_.shape()) throw DimensionError("batch_norm grad shape mismatch");
  const std::size_t rows = grad_output.size() / channels;
  const double m = static_cast<double>(rows);
  Tensor dx(grad_output.shape());

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(channels); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double dy = grad_output[r * channels + c];
      sum_dy += dy;
      sum_dy_xhat += dy * normalized_[r * channels + c];
    }
    gamma_.grad[c] += sum_dy_xhat;
    beta_.grad[c] += sum_dy;
    const double g = gamma_.value[c] * inv_std_[c];
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = r * channels + c;
      if (cached_training_) {
        dx[i] = g * (grad_output[i] - sum_dy / m - normalized_[i] * sum_dy_xhat / m);
      } else {
        dx[i] = g * grad_output[i];
      }
    }
  }
  return dx;
}

void BatchNorm::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm::collect_buffers(std::vector<Buffer>& out) {
  out.push_back({"running_mean", &running_mean_});
  out.push_back({"running_var", &running_var_});
}

void BatchNorm::initialize(Rng&) {
  gamma_.value.fill(1.0);
  beta_.value.fill(0.0);
  running_mean_.fill(0.0);
  running_var_.fill(1.0);
}

// --- ReLU -----------------------------------------------------------------

Tensor ReLU::forward(const Tensor& input, const Context&) {
  input_ = input;
  Tensor out = input;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor ReLU::backward(const Tensor& grad_output) {
  if (grad_output.shape() != input_.shape()) throw DimensionError("relu grad shape mismatch");
  Tensor dx(grad_output.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = input_[i] > 0.0 ? grad_output[i] : 0.0;
  return dx;
}

// --- Dropout --------------------------------------------------------------

Dropout::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
}

Tensor Dropout::forward(const Tensor& input, const Context& ctx) {
  mask_.clear();
  if (!(ctx.training && ctx.dropout_active) || rate_ == 0.0) return input;
  const double scale = 1.0 / (1.0 - rate_);
  mask_.resize(input.size());
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    mask_[i] = uniform01(rng_) < rate_ ? 0.0 : scale;
    out[i] = input[i] * mask_[i];
  }
  return out;
}

Tensor Dropout::backward(const Tensor& grad_output) {
  if (mask_.empty()) return grad_output;
  if (grad_output.size() != mask_.size()) throw DimensionError("dropout grad shape mismatch");
  Tensor dx(grad_output.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_output[i] * mask_[i];
  return dx;
}

// --- Pooling --------------------------------------------------------------

MaxPool1D::MaxPool1D(std::size_t pool, std::size_t stride) : pool_(pool), stride_(stride) {
  if (pool == 0 || stride == 0) throw ConfigError("pool size and stride must be positive");
}

Tensor MaxPool1D::forward(const Tensor& input, const Context&) {
  input_shape_ = input.shape();
  auto r = kernels::max_pool1d_forward(input, pool_, stride_);
  argmax_ = std::move(r.argmax);
  return std::move(r.output);
}

Tensor MaxPool1D::backward(const Tensor& grad_output) {
  return kernels::pool_backward(input_shape_, grad_output, argmax_);
}

Shape MaxPool1D::output_shape(const Shape& input) const {
  if (input.size() != 2) throw DimensionError("max_pool1d expects (L, C) samples");
  return {kernels::pooled_length(input[0], pool_, stride_), input[1]};
}

Tensor GlobalMaxPool1D::forward(const Tensor& input, const Context&) {
  input_shape_ = input.shape();
  auto r = kernels::global_max_pool_forward(input);
  argmax_ = std::move(r.argmax);
  return std::move(r.output);
}

Tensor GlobalMaxPool1D::backward(const Tensor& grad_output) {
  return kernels::pool_backward(input_shape_, grad_output, argmax_);
}

Shape GlobalMaxPool1D::output_shape(const Shape& input) const {
  if (input.size() != 2 || input[0] == 0) throw DimensionError("global_max_pool expects (L>=1, C) samples");
  return {input[1]};
}

// --- Dense ----------------------------------------------------------------

Dense::Dense(std::size_t in_features, std::size_t out_features)
    : weights_(make_parameter("weights", {out_features, in_features})),
      bias_(make_parameter("bias", {out_features})) {}

Tensor Dense::forward(const Tensor& input, const Context&) {
  input_ = input;
  return kernels::dense_forward(input, weights_.value, bias_.value);
}

Tensor Dense::backward(const Tensor& grad_output) {
  auto g = kernels::dense_backward(input_, weights_.value, grad_output);
  accumulate(weights_.grad, g.weights);
  accumulate(bias_.grad, g.bias);
  return std::move(g.input);
}

Shape Dense::output_shape(const Shape& input) const {
  if (input.size() != 1 || input[0] != weights_.value.dim(1)) {
    throw DimensionError("dense expects " + std::to_string(weights_.value.dim(1)) + " features, got " +
                         shape_string(input));
  }
  return {weights_.value.dim(0)};
}

void Dense::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weights_);
  out.push_back(&bias_);
}

void Dense::initialize(Rng& rng) {
  kaiming_uniform(weights_.value, weights_.value.dim(1), rng);
  bias_.value.fill(0.0);
}

// --- Shape layers ---------------------------------------------------------

Reshape::Reshape(Shape per_sample_shape, std::string kind)
    : shape_(std::move(per_sample_shape)), kind_(std::move(kind)) {}

Tensor Reshape::forward(const Tensor& input, const Context&) {
  input_shape_ = input.shape();
  return input.reshaped(batch_shape(input.dim(0), output_shape(sample_shape(input.shape()))));
}

Tensor Reshape::backward(const Tensor& grad_output) { return grad_output.reshaped(input_shape_); }

Shape Reshape::output_shape(const Shape& input) const {
  if (shape_size(input) != shape_size(shape_)) {
    throw DimensionError("cannot reshape " + shape_string(input) + " to " + shape_string(shape_));
  }
  return shape_;
}

Tensor Flatten::forward(const Tensor& input, const Context&) {
  input_shape_ = input.shape();
  return input.reshaped({input.dim(0), input.size() / std::max<std::size_t>(input.dim(0), 1)});
}

Tensor Flatten::backward(const Tensor& grad_output) { return grad_output.reshaped(input_shape_); }

Shape Flatten::output_shape(const Shape& input) const { return {shape_size(input)}; }

// --- Sequential -----------------------------------------------------------

Sequential& Sequential::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
  return *this;
}

Tensor Sequential::forward(const Tensor& input, const Context& ctx) {
  Tensor x = input;
  for (auto& layer : layers_) {
    x = layer->forward(x, ctx);
    if (!x.all_finite()) throw NonFiniteError("non-finite output from layer " + layer->kind());
  }
  return x;
}

Tensor Sequential::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = (*it)->backward(g);
    if (!g.all_finite()) throw NonFiniteError("non-finite gradient in layer " + (*it)->kind());
  }
  return g;
}

Shape Sequential::output_shape(const Shape& input) const {
  Shape s = input;
  for (const auto& layer : layers_) s = layer->output_shape(s);
  return s;
}

void Sequential::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& layer : layers_) layer->collect_parameters(out);
}

void Sequential::collect_buffers(std::vector<Buffer>& out) {
  for (auto& layer : layers_) layer->collect_buffers(out);
}

void Sequential::initialize(Rng& rng) {
  for (auto& layer : layers_) layer->initialize(rng);
}

void Sequential::seed_dropout(std::uint64_t seed) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->seed_dropout(derive_seed(seed, "layer" + std::to_string(i)));
  }
}

// --- MultiBranch ----------------------------------------------------------

MultiBranch::MultiBranch(std::vector<std::unique_ptr<Sequential>> branches)
    : branches_(std::move(branches)) {
  if (branches_.empty()) throw ConfigError("multi-branch layer needs at least one branch");
}

Tensor MultiBranch::forward(const Tensor& input, const Context& ctx) {
  if (input.rank() != 3 || input.dim(2) != branches_.size()) {
    throw DimensionError("multi-branch input must be (B, L, " + std::to_string(branches_.size()) +
                         "), got " + shape_string(input.shape()));
  }
  const std::size_t batch = input.dim(0), length = input.dim(1), channels = input.dim(2);
  outputs_.clear();
  std::size_t total = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    Tensor slice({batch, length, 1});
    for (std::size_t i = 0; i < batch * length; ++i) slice[i] = input[i * channels + c];
    auto out = branches_[c]->forward(slice, ctx);
    if (out.rank() != 2) throw DimensionError("branch output must be (B, F)");
    total += out.dim(1);
    outputs_.push_back(std::move(out));
  }
  Tensor concat({batch, total});
  std::size_t offset = 0;
  for (const auto& out : outputs_) {
    const std::size_t f = out.dim(1);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(out.data() + b * f, f, concat.data() + b * total + offset);
    }
    offset += f;
  }
  return concat;
}

Tensor MultiBranch::backward(const Tensor& grad_output) {
  const std::size_t batch = grad_output.dim(0), total = grad_output.dim(1);
  const std::size_t channels = branches_.size();
  Tensor dx;
  std::size_t offset = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t f = outputs_[c].dim(1);
    Tensor g({batch, f});
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(grad_output.data() + b * total + offset, f, g.data() + b * f);
    }
    offset += f;
    const Tensor di = branches_[c]->backward(g);
    if (dx.empty()) dx = Tensor({batch, di.dim(1), channels});
    for (std::size_t i = 0; i < di.size(); ++i) dx[i * channels + c] = di[i];
  }
  return dx;
}

Shape MultiBranch::output_shape(const Shape& input) const {
  if (input.size() != 2 || input[1] != branches_.size()) {
    throw DimensionError("multi-branch expects (L, " + std::to_string(branches_.size()) + ") samples");
  }
  std::size_t total = 0;
  for (const auto& b : branches_) total += shape_size(b->output_shape({input[0], 1}));
  return {total};
}

void MultiBranch::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& b : branches_) b->collect_parameters(out);
}

void MultiBranch::collect_buffers(std::vector<Buffer>& out) {
  for (auto& b : branches_) b->collect_buffers(out);
}

void MultiBranch::initialize(Rng& rng) {
  for (auto& b : branches_) b->initialize(rng);
}

void MultiBranch::seed_dropout(std::uint64_t seed) {
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    branches_[i]->seed_dropout(derive_seed(seed, "branch" + std::to_string(i)));
  }
}

}  // namespace trainspeed::nn
