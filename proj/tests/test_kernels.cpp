#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "trainspeed/errors.hpp"
#include "trainspeed/nn/kernels.hpp"
#include "trainspeed/nn/reference.hpp"
#include "trainspeed/rng.hpp"

using namespace trainspeed;
using namespace trainspeed::nn;
namespace k = trainspeed::nn::kernels;
namespace ref = trainspeed::nn::reference;
using trainspeed::nn::kernels::Padding;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = 2.0 * uniform01(rng) - 1.0;
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(hi - lo + 1));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Gradients of sum(grad_out * conv(x, w)) by direct loops over the output.
k::ConvGrads naive_conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& g, Padding padding) {
  const auto geo = k::conv_geometry(x.shape(), w.shape(), padding);
  k::ConvGrads out{Tensor(x.shape()), Tensor(w.shape()), Tensor(Shape{geo.out_channels})};
  const std::size_t H = geo.height, W = geo.width, C = geo.in_channels, O = geo.out_channels;
  for (std::size_t b = 0; b < geo.batch; ++b)
    for (std::size_t i = 0; i < geo.out_h; ++i)
      for (std::size_t j = 0; j < geo.out_w; ++j)
        for (std::size_t o = 0; o < O; ++o) {
          const double go = g[((b * geo.out_h + i) * geo.out_w + j) * O + o];
          out.bias[o] += go;
          for (std::size_t m = 0; m < geo.kernel_h; ++m)
            for (std::size_t n = 0; n < geo.kernel_w; ++n) {
              const long r = static_cast<long>(i + m) - static_cast<long>(geo.pad_top);
              const long c = static_cast<long>(j + n) - static_cast<long>(geo.pad_left);
              if (r < 0 || c < 0 || r >= static_cast<long>(H) || c >= static_cast<long>(W)) continue;
              for (std::size_t ci = 0; ci < C; ++ci) {
                const std::size_t xi = ((b * H + r) * W + c) * C + ci;
                const std::size_t wi = ((m * geo.kernel_w + n) * C + ci) * O + o;
                out.kernel[wi] += go * x[xi];
                out.input[xi] += go * w[wi];
              }
            }
        }
  return out;
}

}  // namespace

TEST(ConvGeometry, SamePaddingSplit) {
  const auto g = k::conv_geometry({2, 10, 3, 1}, {7, 2, 1, 4}, Padding::same);
  EXPECT_EQ(g.pad_top, 3u);
  EXPECT_EQ(g.pad_left, 0u);  // (2-1)/2 before, 1 after
  EXPECT_EQ(g.out_h, 10u);
  EXPECT_EQ(g.out_w, 3u);
  const auto v = k::conv_geometry({2, 10, 3, 1}, {7, 2, 1, 4}, Padding::valid);
  EXPECT_EQ(v.out_h, 4u);
  EXPECT_EQ(v.out_w, 2u);
}

TEST(ConvGeometry, Errors) {
  EXPECT_THROW(k::conv_geometry({1, 3, 3, 1}, {5, 1, 1, 1}, Padding::valid), DimensionError);
  EXPECT_THROW(k::conv_geometry({1, 3, 3, 2}, {3, 1, 1, 1}, Padding::same), DimensionError);
  EXPECT_THROW(k::conv_geometry({1, 3, 3}, {3, 1, 1, 1}, Padding::same), DimensionError);
}

TEST(Conv1d, HandComputedSamePadding) {
  // input [1,2,3], kernel [1,1] (K=2): pad 0 before, 1 after -> [3,5,3]
  const Tensor x({1, 3, 1}, {1.0, 2.0, 3.0});
  const Tensor w({2, 1, 1}, {1.0, 1.0});
  const auto y = k::conv1d_forward(x, w, Tensor(), Padding::same);
  EXPECT_EQ(y.buffer(), (std::vector<double>{3.0, 5.0, 3.0}));
}

TEST(Pooling, LengthsAndClamping) {
  EXPECT_EQ(k::pooled_length(100, 5, 5), 20u);
  EXPECT_EQ(k::pooled_length(20, 5, 5), 4u);
  EXPECT_EQ(k::pooled_length(4, 5, 5), 1u);
  EXPECT_EQ(k::effective_pool(3, 5), 3u);
  EXPECT_EQ(k::pooled_length(7, 5, 5), 2u);  // ceil((7-5)/5)+1
  EXPECT_EQ(k::pooled_length(7, 1, 5), 2u);  // windows at 0 and 5 only
}

TEST(Pooling, TiesPickFirstIndex) {
  const Tensor x({1, 4, 1}, {2.0, 2.0, 1.0, 2.0});
  const auto r = k::max_pool1d_forward(x, 2, 2);
  EXPECT_EQ(r.output.buffer(), (std::vector<double>{2.0, 2.0}));
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{0, 3}));
  const auto g = k::global_max_pool_forward(x);
  EXPECT_EQ(g.argmax, (std::vector<std::size_t>{0}));
}

TEST(Pooling, BackwardRoutesToArgmax) {
  const Tensor x({1, 4, 2}, {1, 8, 5, 2, 3, 3, 0, 9});
  const auto r = k::global_max_pool_forward(x);
  EXPECT_EQ(r.output.buffer(), (std::vector<double>{5.0, 9.0}));
  const auto g = k::pool_backward(x.shape(), Tensor({1, 2}, {10.0, 20.0}), r.argmax);
  EXPECT_EQ(g.buffer(), (std::vector<double>{0, 0, 10, 0, 0, 0, 0, 20}));
}

TEST(Dense, HandComputed) {
  const Tensor x({1, 2}, {1.0, 2.0});
  const Tensor w({3, 2}, {1, 0, 0, 1, 1, 1});
  const Tensor b({3}, {0.5, 0.0, -1.0});
  EXPECT_EQ(k::dense_forward(x, w, b).buffer(), (std::vector<double>{1.5, 2.0, 2.0}));
}

TEST(Oracle, RandomShapesMatchReference) {
  auto rng = make_rng(99, "kernels");
  for (int trial = 0; trial < 100; ++trial) {
    const auto padding = uniform01(rng) < 0.5 ? Padding::same : Padding::valid;
    const std::size_t B = pick(rng, 1, 4);
    {
      const std::size_t H = pick(rng, 1, 24), W = pick(rng, 1, 4), C = pick(rng, 1, 4), O = pick(rng, 1, 6);
      const std::size_t KH = pick(rng, 1, std::min<std::size_t>(H, 7)), KW = pick(rng, 1, std::min<std::size_t>(W, 3));
      const auto x = random_tensor({B, H, W, C}, rng);
      const auto w = random_tensor({KH, KW, C, O}, rng);
      const auto b = random_tensor({O}, rng);
      EXPECT_LE(max_abs_diff(k::conv2d_forward(x, w, b, padding), ref::conv2d(x, w, b, padding)), 1e-12);
    }
    {
      const std::size_t L = pick(rng, 1, 40), C = pick(rng, 1, 5), O = pick(rng, 1, 8);
      const std::size_t K = pick(rng, 1, std::min<std::size_t>(L, 10));
      const auto x = random_tensor({B, L, C}, rng);
      const auto w = random_tensor({K, C, O}, rng);
      const auto b = random_tensor({O}, rng);
      EXPECT_LE(max_abs_diff(k::conv1d_forward(x, w, b, padding), ref::conv1d(x, w, b, padding)), 1e-12);
      const std::size_t pool = pick(rng, 1, 6), stride = pick(rng, 1, 6);
      EXPECT_LE(max_abs_diff(k::max_pool1d_forward(x, pool, stride).output, ref::max_pool1d(x, pool, stride)),
                1e-12);
      EXPECT_LE(max_abs_diff(k::global_max_pool_forward(x).output, ref::global_max_pool(x)), 1e-12);
    }
    {
      const std::size_t I = pick(rng, 1, 64), O = pick(rng, 1, 32);
      const auto x = random_tensor({B, I}, rng);
      const auto w = random_tensor({O, I}, rng);
      const auto b = random_tensor({O}, rng);
      EXPECT_LE(max_abs_diff(k::dense_forward(x, w, b), ref::dense(x, w, b)), 1e-12);
    }
  }
}

TEST(Oracle, ConvBackwardMatchesDirectLoops) {
  auto rng = make_rng(5, "conv-backward");
  for (int trial = 0; trial < 40; ++trial) {
    const auto padding = trial % 2 ? Padding::same : Padding::valid;
    const std::size_t B = pick(rng, 1, 3), H = pick(rng, 2, 15), W = pick(rng, 1, 3), C = pick(rng, 1, 3),
                      O = pick(rng, 1, 4);
    const std::size_t KH = pick(rng, 1, std::min<std::size_t>(H, 5)), KW = pick(rng, 1, W);
    const auto x = random_tensor({B, H, W, C}, rng);
    const auto w = random_tensor({KH, KW, C, O}, rng);
    const auto y = k::conv2d_forward(x, w, Tensor(), padding);
    const auto g = random_tensor(y.shape(), rng);
    const auto fast = k::conv2d_backward(x, w, g, padding, true);
    const auto slow = naive_conv2d_backward(x, w, g, padding);
    EXPECT_LE(max_abs_diff(fast.input, slow.input), 1e-12);
    EXPECT_LE(max_abs_diff(fast.kernel, slow.kernel), 1e-12);
    EXPECT_LE(max_abs_diff(fast.bias, slow.bias), 1e-12);
    EXPECT_TRUE(k::conv2d_backward(x, w, g, padding, false).bias.empty());
  }
}

TEST(Oracle, DenseBackwardMatchesDirectLoops) {
  auto rng = make_rng(6, "dense-backward");
  const auto x = random_tensor({3, 7}, rng);
  const auto w = random_tensor({4, 7}, rng);
  const auto g = random_tensor({3, 4}, rng);
  const auto grads = k::dense_backward(x, w, g);
  for (std::size_t o = 0; o < 4; ++o) {
    double gb = 0.0;
    for (std::size_t b = 0; b < 3; ++b) gb += g[b * 4 + o];
    EXPECT_NEAR(grads.bias[o], gb, 1e-14);
    for (std::size_t i = 0; i < 7; ++i) {
      double gw = 0.0;
      for (std::size_t b = 0; b < 3; ++b) gw += g[b * 4 + o] * x[b * 7 + i];
      EXPECT_NEAR(grads.weights[o * 7 + i], gw, 1e-14);
    }
  }
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < 7; ++i) {
      double gx = 0.0;
      for (std::size_t o = 0; o < 4; ++o) gx += g[b * 4 + o] * w[o * 7 + i];
      EXPECT_NEAR(grads.input[b * 7 + i], gx, 1e-14);
    }
}
