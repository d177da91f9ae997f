#pragma once

#include <cstddef>
#include <vector>

#include "trainspeed/nn/tensor.hpp"

/// Batched compute kernels used by the layers: im2col + GEMM convolution,
/// dense products, and pooling, parallelized over the batch with OpenMP.
/// `reference.hpp` holds serial loop transcriptions of the same operations
/// for testing.
namespace trainspeed::nn::kernels {

enum class Padding { same, valid };

/// Geometry of a 2D convolution over (B, H, W, C_in) channels-last input
/// with a (KH, KW, C_in, C_out) kernel and stride 1. Same padding puts
/// (k-1)/2 zeros before and the remainder after each axis.
struct ConvGeometry {
  std::size_t batch = 0, height = 0, width = 0, in_channels = 0;
  std::size_t kernel_h = 0, kernel_w = 0, out_channels = 0;
  std::size_t pad_top = 0, pad_left = 0;
  std::size_t out_h = 0, out_w = 0;

  std::size_t patch_size() const { return kernel_h * kernel_w * in_channels; }
  std::size_t positions() const { return out_h * out_w; }
};

/// Throws DimensionError when the kernel does not fit the padded input or
/// channel counts disagree.
ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, Padding padding);

/// (B*OH*OW, KH*KW*C_in) patch matrix, zero where the window leaves the input.
AlignedVector im2col(const Tensor& input, const ConvGeometry& g);

/// Output (B, OH, OW, C_out). `bias` may be empty.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding);

struct ConvGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};

/// Gradients of the convolution w.r.t. its input, kernel, and bias (the bias
/// gradient is empty when `with_bias` is false).
ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_output,
                          Padding padding, bool with_bias);

/// 1D convolution over (B, L, C_in) with a (K, C_in, C_out) kernel,
/// evaluated as a width-1 2D convolution.
Tensor conv1d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding);
ConvGrads conv1d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_output,
                          Padding padding, bool with_bias);

/// y = x W^T + b for x (B, D_in), W (D_out, D_in), b (D_out).
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output);

/// Pool length actually used: `pool` clamped to the sequence length.
std::size_t effective_pool(std::size_t length, std::size_t pool);
/// ceil((L - p) / stride) + 1 with p the clamped pool, capped at
/// ceil(L / stride) so no window starts past the end.
std::size_t pooled_length(std::size_t length, std::size_t pool, std::size_t stride);

struct PoolResult {
  Tensor output;
  /// Flat input index of the selected element for each output element.
  std::vector<std::size_t> argmax;
};

/// Windowed max over the time axis of (B, L, C); ties pick the first index.
PoolResult max_pool1d_forward(const Tensor& input, std::size_t pool, std::size_t stride);

/// Per-channel max over the time axis: (B, L, C) -> (B, C).
PoolResult global_max_pool_forward(const Tensor& input);

/// Routes each output gradient to its argmax input element.
Tensor pool_backward(const Shape& input_shape, const Tensor& grad_output,
                     const std::vector<std::size_t>& argmax);

}  // namespace trainspeed::nn::kernels
