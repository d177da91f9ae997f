#include "trainspeed/nn/reference.hpp"

#include <algorithm>

#include "trainspeed/errors.hpp"

namespace trainspeed::nn::reference {

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding) {
  const std::size_t B = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  const std::size_t KH = kernel.dim(0), KW = kernel.dim(1), F = kernel.dim(3);
  if (kernel.dim(2) != C) throw DimensionError("channel mismatch");
  long pad_h = 0, pad_w = 0;
  std::size_t OH = H - KH + 1, OW = W - KW + 1;
  if (padding == Padding::same) {
    pad_h = static_cast<long>((KH - 1) / 2);
    pad_w = static_cast<long>((KW - 1) / 2);
    OH = H;
    OW = W;
  } else if (KH > H || KW > W) {
    throw DimensionError("kernel larger than input");
  }

  Tensor out({B, OH, OW, F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j)
        for (std::size_t f = 0; f < F; ++f) {
          double s = bias.empty() ? 0.0 : bias[f];
          for (std::size_t m = 0; m < KH; ++m)
            for (std::size_t n = 0; n < KW; ++n) {
              const long r = static_cast<long>(i + m) - pad_h;
              const long c = static_cast<long>(j + n) - pad_w;
              if (r < 0 || c < 0 || r >= static_cast<long>(H) || c >= static_cast<long>(W)) continue;
              for (std::size_t ch = 0; ch < C; ++ch) {
                s += input[((b * H + static_cast<std::size_t>(r)) * W + static_cast<std::size_t>(c)) * C + ch] *
                     kernel[((m * KW + n) * C + ch) * F + f];
              }
            }
          out[((b * OH + i) * OW + j) * F + f] = s;
        }
  return out;
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding) {
  const std::size_t B = input.dim(0), L = input.dim(1), C = input.dim(2);
  const std::size_t K = kernel.dim(0), F = kernel.dim(2);
  if (kernel.dim(1) != C) throw DimensionError("channel mismatch");
  long pad = 0;
  std::size_t OL = L - K + 1;
  if (padding == Padding::same) {
    pad = static_cast<long>((K - 1) / 2);
    OL = L;
  } else if (K > L) {
    throw DimensionError("kernel larger than input");
  }

  Tensor out({B, OL, F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < OL; ++i)
      for (std::size_t f = 0; f < F; ++f) {
        double s = bias.empty() ? 0.0 : bias[f];
        for (std::size_t m = 0; m < K; ++m) {
          const long t = static_cast<long>(i + m) - pad;
          if (t < 0 || t >= static_cast<long>(L)) continue;
          for (std::size_t ch = 0; ch < C; ++ch) {
            s += input[(b * L + static_cast<std::size_t>(t)) * C + ch] * kernel[(m * C + ch) * F + f];
          }
        }
        out[(b * OL + i) * F + f] = s;
      }
  return out;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  const std::size_t B = input.dim(0), D = input.dim(1), O = weights.dim(0);
  if (weights.dim(1) != D) throw DimensionError("dense shape mismatch");
  Tensor out({B, O});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o) {
      double s = bias[o];
      for (std::size_t d = 0; d < D; ++d) s += weights[o * D + d] * input[b * D + d];
      out[b * O + o] = s;
    }
  return out;
}

Tensor max_pool1d(const Tensor& input, std::size_t pool, std::size_t stride) {
  const std::size_t B = input.dim(0), L = input.dim(1), C = input.dim(2);
  const std::size_t p = std::min(pool, L);
  std::size_t OL = 1;
  while ((OL - 1) * stride + p < L && OL * stride < L) ++OL;
  Tensor out({B, OL, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < OL; ++o)
      for (std::size_t c = 0; c < C; ++c) {
        double m = input[(b * L + o * stride) * C + c];
        for (std::size_t i = o * stride; i < std::min(o * stride + p, L); ++i) {
          m = std::max(m, input[(b * L + i) * C + c]);
        }
        out[(b * OL + o) * C + c] = m;
      }
  return out;
}

Tensor global_max_pool(const Tensor& input) {
  const std::size_t B = input.dim(0), L = input.dim(1), C = input.dim(2);
  Tensor out({B, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      double m = input[b * L * C + c];
      for (std::size_t i = 1; i < L; ++i) m = std::max(m, input[(b * L + i) * C + c]);
      out[b * C + c] = m;
    }
  return out;
}

}  // namespace trainspeed::nn::reference
