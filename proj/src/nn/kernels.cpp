#include "trainspeed/nn/kernels.hpp"

#include <algorithm>
#include <cstring>

#include <Eigen/Dense>

#include "trainspeed/errors.hpp"

namespace trainspeed::nn::kernels {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

std::ptrdiff_t as_index(std::size_t n) { return static_cast<std::ptrdiff_t>(n); }

Shape as_2d_input(const Shape& s) {
  if (s.size() != 3) throw DimensionError("conv1d input must be (B, L, C), got " + shape_string(s));
  return {s[0], s[1], 1, s[2]};
}

Shape as_2d_kernel(const Shape& s) {
  if (s.size() != 3) throw DimensionError("conv1d kernel must be (K, C_in, C_out), got " + shape_string(s));
  return {s[0], 1, s[1], s[2]};
}

}  // namespace

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, Padding padding) {
  if (input.size() != 4) throw DimensionError("conv2d input must be (B, H, W, C), got " + shape_string(input));
  if (kernel.size() != 4) {
    throw DimensionError("conv2d kernel must be (KH, KW, C_in, C_out), got " + shape_string(kernel));
  }
  if (input[3] != kernel[2]) {
    throw DimensionError("conv input has " + std::to_string(input[3]) + " channels, kernel expects " +
                         std::to_string(kernel[2]));
  }
  ConvGeometry g;
  g.batch = input[0];
  g.height = input[1];
  g.width = input[2];
  g.in_channels = input[3];
  g.kernel_h = kernel[0];
  g.kernel_w = kernel[1];
  g.out_channels = kernel[3];
  if (g.kernel_h == 0 || g.kernel_w == 0) throw DimensionError("empty convolution kernel");
  std::size_t padded_h = g.height, padded_w = g.width;
  if (padding == Padding::same) {
    g.pad_top = (g.kernel_h - 1) / 2;
    g.pad_left = (g.kernel_w - 1) / 2;
    padded_h += g.kernel_h - 1;
    padded_w += g.kernel_w - 1;
  }
  if (g.kernel_h > padded_h || g.kernel_w > padded_w) {
    throw DimensionError("kernel " + shape_string(kernel) + " larger than padded input " +
                         shape_string(input));
  }
  g.out_h = padded_h - g.kernel_h + 1;
  g.out_w = padded_w - g.kernel_w + 1;
  return g;
}

AlignedVector im2col(const Tensor& input, const ConvGeometry& g) {
  const std::size_t patch = g.patch_size();
  const std::size_t rows_per_sample = g.positions();
  AlignedVector col(g.batch * rows_per_sample * patch, 0.0);
  const double* x = input.data();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < as_index(g.batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        double* row = col.data() + ((b * g.out_h + oh) * g.out_w + ow) * patch;
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh + kh) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (ih < 0 || ih >= as_index(g.height)) continue;
          for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
            const auto iw = static_cast<std::ptrdiff_t>(ow + kw) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (iw < 0 || iw >= as_index(g.width)) continue;
            const double* src =
                x + ((b * g.height + static_cast<std::size_t>(ih)) * g.width + static_cast<std::size_t>(iw)) *
                        g.in_channels;
            std::memcpy(row + (kh * g.kernel_w + kw) * g.in_channels, src, g.in_channels * sizeof(double));
          }
        }
      }
    }
  }
  return col;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding) {
  const auto g = conv_geometry(input.shape(), kernel.shape(), padding);
  if (!bias.empty() && bias.size() != g.out_channels) throw DimensionError("conv bias size mismatch");
  const auto col = im2col(input, g);
  const auto rows = as_index(g.batch * g.positions());
  const auto k = as_index(g.patch_size());
  const auto c_out = as_index(g.out_channels);

  Tensor out({g.batch, g.out_h, g.out_w, g.out_channels});
  Map y(out.data(), rows, c_out);
  y.noalias() = ConstMap(col.data(), rows, k) * ConstMap(kernel.data(), k, c_out);
  if (!bias.empty()) {
    y.rowwise() += Eigen::Map<const RowVector>(bias.data(), c_out);
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_output,
                          Padding padding, bool with_bias) {
  const auto g = conv_geometry(input.shape(), kernel.shape(), padding);
  const Shape expected{g.batch, g.out_h, g.out_w, g.out_channels};
  if (grad_output.shape() != expected) {
    throw DimensionError("conv grad shape " + shape_string(grad_output.shape()) + ", expected " +
                         shape_string(expected));
  }
  const auto rows = as_index(g.batch * g.positions());
  const auto k = as_index(g.patch_size());
  const auto c_out = as_index(g.out_channels);
  const auto col = im2col(input, g);
  const ConstMap dy(grad_output.data(), rows, c_out);

  ConvGrads grads;
  grads.kernel = Tensor(kernel.shape());
  Map(grads.kernel.data(), k, c_out).noalias() = ConstMap(col.data(), rows, k).transpose() * dy;
  if (with_bias) {
    grads.bias = Tensor({g.out_channels});
    Eigen::Map<RowVector>(grads.bias.data(), c_out) = dy.colwise().sum();
  }

  RowMatrix dcol = dy * ConstMap(kernel.data(), k, c_out).transpose();
  grads.input = Tensor(input.shape());
  double* dx = grads.input.data();
  const std::size_t patch = g.patch_size();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < as_index(g.batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        const double* row = dcol.data() + ((b * g.out_h + oh) * g.out_w + ow) * patch;
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh + kh) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (ih < 0 || ih >= as_index(g.height)) continue;
          for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
            const auto iw = static_cast<std::ptrdiff_t>(ow + kw) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (iw < 0 || iw >= as_index(g.width)) continue;
            double* dst =
                dx + ((b * g.height + static_cast<std::size_t>(ih)) * g.width + static_cast<std::size_t>(iw)) *
                         g.in_channels;
            const double* src = row + (kh * g.kernel_w + kw) * g.in_channels;
            for (std::size_t c = 0; c < g.in_channels; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
  return grads;
}

Tensor conv1d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding) {
  const auto& s = input.shape();
  Tensor out = conv2d_forward(input.reshaped(as_2d_input(s)), kernel.reshaped(as_2d_kernel(kernel.shape())),
                              bias, padding);
  const Shape shape{out.dim(0), out.dim(1), out.dim(3)};
  return std::move(out).reshaped(shape);
}

ConvGrads conv1d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_output,
                          Padding padding, bool with_bias) {
  const auto& go = grad_output.shape();
  if (go.size() != 3) throw DimensionError("conv1d grad must be (B, L, C)");
  auto grads = conv2d_backward(input.reshaped(as_2d_input(input.shape())),
                               kernel.reshaped(as_2d_kernel(kernel.shape())),
                               grad_output.reshaped({go[0], go[1], 1, go[2]}), padding, with_bias);
  grads.input = std::move(grads.input).reshaped(input.shape());
  grads.kernel = std::move(grads.kernel).reshaped(kernel.shape());
  return grads;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.rank() != 2 || weights.rank() != 2 || input.dim(1) != weights.dim(1)) {
    throw DimensionError("dense: input " + shape_string(input.shape()) + " incompatible with weights " +
                         shape_string(weights.shape()));
  }
  if (bias.size() != weights.dim(0)) throw DimensionError("dense bias size mismatch");
  const auto b = as_index(input.dim(0));
  const auto d_in = as_index(input.dim(1));
  const auto d_out = as_index(weights.dim(0));
  Tensor out({input.dim(0), weights.dim(0)});
  Map y(out.data(), b, d_out);
  y.noalias() = ConstMap(input.data(), b, d_in) * ConstMap(weights.data(), d_out, d_in).transpose();
  y.rowwise() += Eigen::Map<const RowVector>(bias.data(), d_out);
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output) {
  const auto b = as_index(input.dim(0));
  const auto d_in = as_index(input.dim(1));
  const auto d_out = as_index(weights.dim(0));
  if (grad_output.shape() != Shape{input.dim(0), weights.dim(0)}) {
    throw DimensionError("dense grad shape mismatch");
  }
  const ConstMap dy(grad_output.data(), b, d_out);
  DenseGrads grads{Tensor(input.shape()), Tensor(weights.shape()), Tensor({weights.dim(0)})};
  Map(grads.input.data(), b, d_in).noalias() = dy * ConstMap(weights.data(), d_out, d_in);
  Map(grads.weights.data(), d_out, d_in).noalias() = dy.transpose() * ConstMap(input.data(), b, d_in);
  Eigen::Map<RowVector>(grads.bias.data(), d_out) = dy.colwise().sum();
  return grads;
}

std::size_t effective_pool(std::size_t length, std::size_t pool) { return std::min(pool, length); }

std::size_t pooled_length(std::size_t length, std::size_t pool, std::size_t stride) {
  if (length == 0 || pool == 0 || stride == 0) throw DimensionError("pooling needs positive sizes");
  const std::size_t p = effective_pool(length, pool);
  // With stride > pool the last window could start past the end; cap so
  // every window begins inside the sequence.
  return std::min((length - p + stride - 1) / stride + 1, (length + stride - 1) / stride);
}

PoolResult max_pool1d_forward(const Tensor& input, std::size_t pool, std::size_t stride) {
  if (input.rank() != 3) throw DimensionError("max_pool1d input must be (B, L, C)");
  const std::size_t batch = input.dim(0), length = input.dim(1), channels = input.dim(2);
  const std::size_t p = effective_pool(length, pool);
  const std::size_t out_len = pooled_length(length, pool, stride);
  PoolResult r{Tensor({batch, out_len, channels}), std::vector<std::size_t>(batch * out_len * channels)};
  const double* x = input.data();
  double* y = r.output.data();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < as_index(batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    for (std::size_t o = 0; o < out_len; ++o) {
      const std::size_t begin = o * stride;
      const std::size_t end = std::min(begin + p, length);
      for (std::size_t c = 0; c < channels; ++c) {
        std::size_t best = (b * length + begin) * channels + c;
        for (std::size_t i = begin + 1; i < end; ++i) {
          const std::size_t idx = (b * length + i) * channels + c;
          if (x[idx] > x[best]) best = idx;
        }
        const std::size_t out_idx = (b * out_len + o) * channels + c;
        y[out_idx] = x[best];
        r.argmax[out_idx] = best;
      }
    }
  }
  return r;
}

PoolResult global_max_pool_forward(const Tensor& input) {
  if (input.rank() != 3 || input.dim(1) == 0) throw DimensionError("global_max_pool input must be (B, L>=1, C)");
  const std::size_t batch = input.dim(0), length = input.dim(1), channels = input.dim(2);
  PoolResult r{Tensor({batch, channels}), std::vector<std::size_t>(batch * channels)};
  const double* x = input.data();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < as_index(batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    for (std::size_t c = 0; c < channels; ++c) {
      std::size_t best = b * length * channels + c;
      for (std::size_t i = 1; i < length; ++i) {
        const std::size_t idx = (b * length + i) * channels + c;
        if (x[idx] > x[best]) best = idx;
      }
      r.output[b * channels + c] = x[best];
      r.argmax[b * channels + c] = best;
    }
  }
  return r;
}

Tensor pool_backward(const Shape& input_shape, const Tensor& grad_output,
                     const std::vector<std::size_t>& argmax) {
  if (grad_output.size() != argmax.size()) throw DimensionError("pool grad size mismatch");
  Tensor dx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += grad_output[i];
  return dx;
}

}  // namespace trainspeed::nn::kernels
