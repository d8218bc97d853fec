#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "lwanet/kernels.hpp"
#include "lwanet/tensor.hpp"

using namespace lwanet;

namespace {

ConvSpec spec(int64_t d1, int64_t d2, int64_t k, int64_t s, int64_t p, int64_t g = 1) {
  ConvSpec c;
  c.in_channels = d1;
  c.out_channels = d2;
  c.kernel = k;
  c.stride = s;
  c.padding = p;
  c.groups = g;
  return c;
}

ConvSpec with_bias(ConvSpec c) {
  c.has_bias = true;
  return c;
}

}  // namespace

TEST(Tensor, ConstructionAndIndexing) {
  Tensor<float> t(Shape{2, 3, 4, 5}, 1.5f);
  EXPECT_EQ(t.numel(), 120);
  EXPECT_EQ(t.at(1, 2, 3, 4), 1.5f);
  t.at(1, 2, 3, 4) = 7.0f;
  EXPECT_EQ(t[119], 7.0f);
  EXPECT_EQ(t.plane(1, 2)[19], 7.0f);
  EXPECT_THROW(Tensor<float>(Shape{1, 2, 2, 2}, std::vector<float>(7)), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{1, -1, 2, 2}), ShapeError);
}

TEST(Tensor, ReshapeKeepsCount) {
  Tensor<float> t(Shape{1, 2, 3, 4});
  t.reshape(Shape{1, 24, 1, 1});
  EXPECT_EQ(t.shape().c, 24);
  EXPECT_THROW(t.reshape(Shape{1, 5, 1, 1}), ShapeError);
}

TEST(Tensor, AllFinite) {
  Tensor<double> t(Shape{1, 1, 2, 2});
  EXPECT_TRUE(t.all_finite());
  t[3] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(ConvSpec, RejectsBadHyperparameters) {
  EXPECT_THROW(spec(3, 4, 0, 1, 0).validate(), ShapeError);
  EXPECT_THROW(spec(3, 4, 3, 0, 0).validate(), ShapeError);
  EXPECT_THROW(spec(3, 4, 3, 1, -1).validate(), ShapeError);
  EXPECT_THROW(spec(3, 4, 3, 1, 1, 2).validate(), ShapeError);
  EXPECT_NO_THROW(spec(4, 4, 3, 1, 1, 4).validate());
}

TEST(ConvSpec, OutputShapeLawHoldsForRandomSpecs) {
  std::mt19937_64 rng(3);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int i = 0; i < 200; ++i) {
    const int k = pick(1, 5), s = pick(1, 3), p = pick(0, k - 1);
    const int h = pick(k, 20), w = pick(k, 20);
    const ConvSpec c = spec(pick(1, 4), pick(1, 4), k, s, p);
    const Shape out = c.output_shape(Shape{2, c.in_channels, h, w});
    EXPECT_EQ(out.h, (h + 2 * p - k) / s + 1);
    EXPECT_EQ(out.w, (w + 2 * p - k) / s + 1);
    EXPECT_EQ(out.c, c.out_channels);
    EXPECT_EQ(out.n, 2);
    // transposed conv inverts the law
    const Shape t = c.transposed_output_shape(Shape{1, c.in_channels, h, w});
    EXPECT_EQ(t.h, (h - 1) * s - 2 * p + k);
  }
  EXPECT_THROW(spec(3, 4, 3, 1, 0).output_shape(Shape{1, 2, 8, 8}), ShapeError);
  EXPECT_THROW(spec(3, 4, 5, 1, 0).output_shape(Shape{1, 3, 4, 4}), ShapeError);
}

TEST(Kernels, PointwiseConvIsChannelMatrixProduct) {
  // 1x1 conv with W = [[1, 2], [3, 4]] on a single pixel (5, 6)
  Tensor<double> x(Shape{1, 2, 1, 1}, {5.0, 6.0});
  Tensor<double> w(Shape{2, 2, 1, 1}, {1.0, 2.0, 3.0, 4.0});
  Tensor<double> b(Shape{1, 2, 1, 1}, {0.5, -0.5});
  const Tensor<double> y = kernels::conv2d(x, w, &b, with_bias(spec(2, 2, 1, 1, 0)));
  EXPECT_DOUBLE_EQ(y[0], 17.5);
  EXPECT_DOUBLE_EQ(y[1], 38.5);
}

TEST(Kernels, Conv3x3HandComputed) {
  // all-ones 3x3 kernel with padding 1 on a 3x3 ramp counts neighbourhood sums
  Tensor<double> x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> w(Shape{1, 1, 3, 3}, 1.0);
  const Tensor<double> y = kernels::conv2d(x, w, nullptr, spec(1, 1, 3, 1, 1));
  const std::vector<double> expect{12, 21, 16, 27, 45, 33, 24, 39, 28};
  for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y[i], expect[static_cast<size_t>(i)]);
  const Tensor<double> s2 = kernels::conv2d(x, w, nullptr, spec(1, 1, 3, 2, 1));
  EXPECT_EQ(s2.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_DOUBLE_EQ(s2[0], 12);
  EXPECT_DOUBLE_EQ(s2[3], 28);
}

TEST(Kernels, Im2colMatchesDirectBitForBit) {
  std::mt19937_64 rng(11);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int i = 0; i < 40; ++i) {
    const int k = pick(1, 3) * 2 - 1, s = pick(1, 2);
    const ConvSpec c = with_bias(spec(pick(1, 8), pick(1, 8), k, s, k / 2));
    const Tensor<float> x = Tensor<float>::randn(Shape{pick(1, 2), c.in_channels, pick(k, 12), pick(k, 12)}, rng);
    const Tensor<float> w = Tensor<float>::randn(c.weight_shape(), rng);
    const Tensor<float> b = Tensor<float>::randn(Shape{1, c.out_channels, 1, 1}, rng);
    const Tensor<float> fast = kernels::conv2d(x, w, &b, c);
    const Tensor<float> direct = kernels::conv2d_direct(x, w, &b, c);
    ASSERT_EQ(fast.shape(), direct.shape());
    EXPECT_EQ(fast.vec(), direct.vec()) << "case " << i;
  }
}

TEST(Kernels, DepthwiseMatchesPerChannelConvolution) {
  std::mt19937_64 rng(5);
  const int64_t c = 3;
  ConvSpec dw = spec(c, c, 3, 2, 1, c);
  const Tensor<double> x = Tensor<double>::randn(Shape{2, c, 7, 6}, rng);
  const Tensor<double> w = Tensor<double>::randn(dw.weight_shape(), rng);
  const Tensor<double> y = kernels::depthwise_conv2d(x, w, nullptr, dw);
  for (int64_t ch = 0; ch < c; ++ch) {
    Tensor<double> xc(Shape{2, 1, 7, 6});
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t i = 0; i < 42; ++i) xc.plane(n, 0)[i] = x.plane(n, ch)[i];
    Tensor<double> wc(Shape{1, 1, 3, 3});
    for (int64_t i = 0; i < 9; ++i) wc[i] = w.plane(ch, 0)[i];
    const Tensor<double> yc = kernels::conv2d_direct(xc, wc, nullptr, spec(1, 1, 3, 2, 1));
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t i = 0; i < yc.shape().plane(); ++i) EXPECT_NEAR(y.plane(n, ch)[i], yc.plane(n, 0)[i], 1e-12);
  }
}

TEST(Kernels, DepthwiseSeparableEqualsFactorizedStandardConv) {
  // depthwise(k) then pointwise(1x1) equals a standard conv whose kernel is
  // W[o, i, :, :] = P[o, i] * D[i, :, :]
  std::mt19937_64 rng(9);
  const int64_t d1 = 3, d2 = 4, k = 3;
  const Tensor<double> x = Tensor<double>::randn(Shape{1, d1, 6, 5}, rng);
  const Tensor<double> dwk = Tensor<double>::randn(Shape{d1, 1, k, k}, rng);
  const Tensor<double> pwk = Tensor<double>::randn(Shape{d2, d1, 1, 1}, rng);
  const Tensor<double> ds = kernels::conv2d(kernels::depthwise_conv2d(x, dwk, nullptr, spec(d1, d1, k, 1, 1, d1)),
                                            pwk, nullptr, spec(d1, d2, 1, 1, 0));
  Tensor<double> full(Shape{d2, d1, k, k});
  for (int64_t o = 0; o < d2; ++o)
    for (int64_t i = 0; i < d1; ++i)
      for (int64_t t = 0; t < k * k; ++t) full.plane(o, i)[t] = pwk.at(o, i, 0, 0) * dwk.plane(i, 0)[t];
  const Tensor<double> std_conv = kernels::conv2d(x, full, nullptr, spec(d1, d2, k, 1, 1));
  EXPECT_LT(max_abs_diff(ds, std_conv), 1e-12);
}

TEST(Kernels, TransposedConvIsAdjointOfConv) {
  std::mt19937_64 rng(21);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int i = 0; i < 20; ++i) {
    const int k = pick(1, 4), s = pick(1, 3), p = pick(0, (k - 1) / 2);
    ConvSpec t = spec(pick(1, 4), pick(1, 4), k, s, p);
    const Shape xin{pick(1, 2), t.in_channels, pick(1, 5), pick(1, 5)};
    const Shape yout = t.transposed_output_shape(xin);
    if (yout.h < 1 || yout.w < 1) continue;
    const Tensor<double> w = Tensor<double>::randn(t.transposed_weight_shape(), rng);
    const Tensor<double> x = Tensor<double>::randn(xin, rng);
    const Tensor<double> u = Tensor<double>::randn(yout, rng);
    const ConvSpec c = kernels::adjoint_conv_spec(t);
    const double lhs = dot(kernels::conv2d(u, w, nullptr, c), x);
    const double rhs = dot(u, kernels::transposed_conv2d(x, w, nullptr, t));
    EXPECT_LE(std::abs(lhs - rhs), 1e-10 * std::max(1.0, std::abs(lhs))) << "case " << i;
  }
}

TEST(Kernels, TransposedConvK2S2ScattersEachPixelToItsBlock) {
  Tensor<double> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> w(Shape{1, 1, 2, 2}, {1, 10, 100, 1000});
  const Tensor<double> y = kernels::transposed_conv2d(x, w, nullptr, spec(1, 1, 2, 2, 0));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 1);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1, 1), 1000);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 3), 20);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 3, 2), 400);
}

TEST(Kernels, GlobalAveragePool) {
  Tensor<double> x(Shape{1, 2, 2, 2}, {1, 2, 3, 4, -1, -1, -1, 3});
  const Tensor<double> y = kernels::global_avg_pool(x);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 2.5);
  EXPECT_DOUBLE_EQ(y[1], 0.0);
}

TEST(Kernels, Activations) {
  Tensor<double> x(Shape{1, 1, 1, 5}, {-3, 0, 2, 6, 9});
  EXPECT_EQ(kernels::relu(x).vec(), (std::vector<double>{0, 0, 2, 6, 9}));
  EXPECT_EQ(kernels::relu6(x).vec(), (std::vector<double>{0, 0, 2, 6, 6}));
  const Tensor<double> s = kernels::sigmoid(x);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  EXPECT_NEAR(s[0], 1.0 / (1.0 + std::exp(3.0)), 1e-15);
}

TEST(Kernels, SoftmaxSumsToOneOverChannels) {
  std::mt19937_64 rng(4);
  Tensor<double> x = Tensor<double>::randn(Shape{2, 5, 3, 4}, rng, 10.0);
  x[0] = 800.0;  // must not overflow
  const Tensor<double> p = kernels::softmax_channels(x);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 12; ++i) {
      double total = 0;
      for (int64_t c = 0; c < 5; ++c) {
        const double v = p.plane(n, c)[i];
        EXPECT_GE(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  EXPECT_TRUE(p.all_finite());
}

TEST(Kernels, BilinearUpsample) {
  Tensor<double> c(Shape{1, 1, 2, 3}, 4.25);
  EXPECT_EQ(kernels::bilinear_upsample(c, 4).vec(), std::vector<double>(96, 4.25));
  // half-pixel centers: a 2-pixel row [0, 1] upsampled by 2 gives [0, .25, .75, 1]
  Tensor<double> r(Shape{1, 1, 1, 2}, {0.0, 1.0});
  const Tensor<double> u = kernels::bilinear_upsample(r, 2);
  EXPECT_EQ(u.shape(), (Shape{1, 1, 2, 4}));
  EXPECT_EQ(u.vec(), (std::vector<double>{0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0}));
  EXPECT_EQ(kernels::bilinear_upsample(r, 1).vec(), r.vec());
}

TEST(Kernels, BatchnormTrainNormalizesAndTracksStatistics) {
  std::mt19937_64 rng(8);
  Tensor<double> x = Tensor<double>::randn(Shape{4, 2, 3, 3}, rng, 3.0);
  Tensor<double> gamma(Shape{1, 2, 1, 1}, 1.0), beta(Shape{1, 2, 1, 1}, 0.0);
  Tensor<double> rm(Shape{1, 2, 1, 1}, 0.0), rv(Shape{1, 2, 1, 1}, 1.0);
  const Tensor<double> y = kernels::batchnorm_train(x, gamma, beta, rm, rv, 0.1, 1e-5, nullptr);
  for (int64_t c = 0; c < 2; ++c) {
    double m = 0, sq = 0, xm = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 9; ++i) {
        m += y.plane(n, c)[i];
        sq += y.plane(n, c)[i] * y.plane(n, c)[i];
        xm += x.plane(n, c)[i];
      }
    EXPECT_NEAR(m / 36, 0.0, 1e-12);
    EXPECT_NEAR(sq / 36, 1.0, 1e-3);
    EXPECT_NEAR(rm[c], 0.1 * xm / 36, 1e-12);
  }
  const Tensor<double> e = kernels::batchnorm_eval(x, gamma, beta, Tensor<double>(Shape{1, 2, 1, 1}, 0.0),
                                                   Tensor<double>(Shape{1, 2, 1, 1}, 1.0), 0.0,
                                                   nullptr);
  EXPECT_EQ(e.vec(), x.vec());
}

TEST(Kernels, ElementwiseShapeChecks) {
  Tensor<float> a(Shape{1, 2, 2, 2}, 1.0f), b(Shape{1, 2, 2, 3}, 1.0f);
  EXPECT_THROW(kernels::add(a, b), ShapeError);
  Tensor<float> s(Shape{1, 2, 1, 1}, {2.0f, -1.0f});
  const Tensor<float> y = kernels::broadcast_mul_channels(a, s);
  EXPECT_EQ(y.at(0, 0, 1, 1), 2.0f);
  EXPECT_EQ(y.at(0, 1, 0, 1), -1.0f);
  EXPECT_THROW(kernels::broadcast_mul_channels(a, Tensor<float>(Shape{1, 3, 1, 1})), ShapeError);
}

TEST(Kernels, WorkerCountDoesNotChangeResults) {
  std::mt19937_64 rng(17);
  const ConvSpec c = spec(8, 16, 3, 1, 1);
  const Tensor<float> x = Tensor<float>::randn(Shape{2, 8, 12, 12}, rng);
  const Tensor<float> w = Tensor<float>::randn(c.weight_shape(), rng);
  kernels::set_num_workers(1);
  const Tensor<float> one = kernels::conv2d(x, w, nullptr, c);
  kernels::set_num_workers(3);
  const Tensor<float> three = kernels::conv2d(x, w, nullptr, c);
  kernels::set_num_workers(1);
  EXPECT_EQ(one.vec(), three.vec());
}
