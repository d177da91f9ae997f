#include "trainspeed/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trainspeed/errors.hpp"
#include "trainspeed/rng.hpp"

namespace trainspeed::nn {

LossResult mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.size() != target.size()) {
    throw DimensionError("mse: prediction has " + std::to_string(pred.size()) + " elements, target " +
                         std::to_string(target.size()));
  }
  if (pred.empty()) throw DimensionError("mse: empty input");
  const double n = static_cast<double>(pred.size());
  LossResult r{0.0, Tensor(pred.shape())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    r.value += d * d;
    r.grad[i] = 2.0 * d / n;
  }
  r.value /= n;
  return r;
}

void sgd_step(std::span<Parameter* const> params, double learning_rate) {
  for (auto* p : params) {
    if (p->grad.shape() != p->value.shape()) {
      throw DimensionError("missing gradient for parameter '" + p->name + "'");
    }
  }
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= learning_rate * p->grad[i];
    p->grad.fill(0.0);
  }
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double beta1, double beta2, double epsilon)
    : kind_(kind), lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

void Optimizer::step(std::span<Parameter* const> params) {
  if (kind_ == OptimizerKind::sgd) {
    sgd_step(params, lr_);
    return;
  }
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw DimensionError("optimizer parameter list changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    if (p->grad.shape() != p->value.shape()) {
      throw DimensionError("missing gradient for parameter '" + p->name + "'");
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p->value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon_);
    }
    p->grad.fill(0.0);
  }
}

namespace {

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

std::vector<Tensor> snapshot(std::vector<Buffer>& buffers) {
  std::vector<Tensor> saved;
  for (auto& b : buffers) saved.push_back(*b.value);
  return saved;
}

void restore(std::vector<Buffer>& buffers, const std::vector<Tensor>& saved) {
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].value = saved[i];
}

}  // namespace

GradCheckResult gradient_check(Layer& network, const Tensor& input, const Tensor& target,
                               const GradCheckOptions& options) {
  const auto ctx = Context::deterministic_train();
  std::vector<Parameter*> params;
  network.collect_parameters(params);
  std::vector<Buffer> buffers;
  network.collect_buffers(buffers);
  const auto saved = snapshot(buffers);

  for (auto* p : params) p->zero_grad();
  const auto loss = mse_loss(network.forward(input, ctx), target);
  network.backward(loss.grad);

  auto eval = [&]() { return mse_loss(network.forward(input, ctx), target).value; };
  const double base = options.smoothness_tolerance > 0.0 ? eval() : 0.0;

  Rng rng(derive_seed(options.seed, "gradcheck"));
  GradCheckResult result;
  for (auto* p : params) {
    std::vector<std::size_t> idx(p->value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_per_tensor > 0 && idx.size() > options.max_per_tensor) {
      for (std::size_t i = 0; i < options.max_per_tensor; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(idx.size() - i));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(options.max_per_tensor);
    }
    for (std::size_t i : idx) {
      const double w = p->value[i];
      // Shrinks the step until the one-sided slopes agree (at most twice).
      double numeric = 0.0;
      bool smooth = false;
      for (int refine = 0, limit = options.smoothness_tolerance > 0.0 ? 3 : 1; refine < limit && !smooth; ++refine) {
        const double h = options.h * std::pow(0.1, refine);
        p->value[i] = w + h;
        const double up = eval();
        p->value[i] = w - h;
        const double down = eval();
        p->value[i] = w;
        numeric = (up - down) / (2.0 * h);
        smooth = options.smoothness_tolerance <= 0.0 ||
                 relative_error((up - base) / h, (base - down) / h) <= options.smoothness_tolerance;
      }
      if (!smooth) {
        ++result.skipped;
        continue;
      }
      const double err = relative_error(p->grad[i], numeric);
      ++result.checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  for (auto* p : params) p->zero_grad();
  restore(buffers, saved);
  return result;
}

GradCheckResult input_gradient_check(Layer& network, const Tensor& input, const Tensor& target, double h) {
  const auto ctx = Context::deterministic_train();
  std::vector<Parameter*> params;
  network.collect_parameters(params);
  std::vector<Buffer> buffers;
  network.collect_buffers(buffers);
  const auto saved = snapshot(buffers);

  const auto loss = mse_loss(network.forward(input, ctx), target);
  const Tensor analytic = network.backward(loss.grad);

  GradCheckResult result;
  Tensor x = input;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    x[i] = v + h;
    const double up = mse_loss(network.forward(x, ctx), target).value;
    x[i] = v - h;
    const double down = mse_loss(network.forward(x, ctx), target).value;
    x[i] = v;
    const double err = relative_error(analytic[i], (up - down) / (2.0 * h));
    ++result.checked;
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = "input[" + std::to_string(i) + "]";
    }
  }
  for (auto* p : params) p->zero_grad();
  restore(buffers, saved);
  return result;
}

namespace {

nlohmann::json tensor_json(const std::string& name, const Tensor& t) {
  return {{"name", name}, {"shape", t.shape()}, {"values", t.buffer()}};
}

void load_tensor(Tensor& into, const nlohmann::json& j) {
  const auto shape = j.at("shape").get<Shape>();
  if (shape != into.shape()) {
    throw ParseError("checkpoint tensor '" + j.value("name", "") + "' has shape " + shape_string(shape) +
                     ", network expects " + shape_string(into.shape()));
  }
  into = Tensor(shape, j.at("values").get<std::vector<double>>());
}

}  // namespace

nlohmann::json save_state(Layer& network) {
  std::vector<Parameter*> params;
  network.collect_parameters(params);
  std::vector<Buffer> buffers;
  network.collect_buffers(buffers);
  nlohmann::json out{{"parameters", nlohmann::json::array()}, {"buffers", nlohmann::json::array()}};
  for (auto* p : params) out["parameters"].push_back(tensor_json(p->name, p->value));
  for (auto& b : buffers) out["buffers"].push_back(tensor_json(b.name, *b.value));
  return out;
}

void load_state(Layer& network, const nlohmann::json& state) {
  std::vector<Parameter*> params;
  network.collect_parameters(params);
  std::vector<Buffer> buffers;
  network.collect_buffers(buffers);
  const auto& jp = state.at("parameters");
  const auto& jb = state.at("buffers");
  if (jp.size() != params.size() || jb.size() != buffers.size()) {
    throw ParseError("checkpoint has " + std::to_string(jp.size()) + " parameters / " +
                     std::to_string(jb.size()) + " buffers, network has " + std::to_string(params.size()) +
                     " / " + std::to_string(buffers.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    load_tensor(params[i]->value, jp[i]);
    params[i]->zero_grad();
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) load_tensor(*buffers[i].value, jb[i]);
}

}  // namespace trainspeed::nn
