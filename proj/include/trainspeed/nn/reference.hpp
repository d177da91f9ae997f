#pragma once

#include <cstddef>

#include "trainspeed/nn/kernels.hpp"
#include "trainspeed/nn/tensor.hpp"

// Serial loop transcriptions of the forward kernels. Slow on purpose; kept
// as test oracles and benchmark baselines.
namespace trainspeed::nn::reference {

using kernels::Padding;

// S(i,j) = sum_m sum_n I(i+m, j+n) K(m,n), per output channel, summed over
// input channels, plus bias.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding);
Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding);
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor max_pool1d(const Tensor& input, std::size_t pool, std::size_t stride);
Tensor global_max_pool(const Tensor& input);

}  // namespace trainspeed::nn::reference
