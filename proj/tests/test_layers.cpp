#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "cbanet/nn/grad_check.hpp"
#include "cbanet/nn/network.hpp"

namespace cbanet::nn {
namespace {

FeatureMap<double> random_map(int c, int h, int w, std::uint64_t seed, double lo = -1.0,
                              double hi = 1.0) {
  Rng rng(seed);
  FeatureMap<double> x(c, h, w);
  for (double& v : x.values()) v = rng.uniform(lo, hi);
  return x;
}

std::vector<Array<double>> random_params(const LayerSpec& s, std::uint64_t seed) {
  Layer<double> layer(s);
  Rng rng(seed);
  init_layer(layer, rng);
  // perturb so that biases and GDN couplings are non-trivial
  for (auto& p : layer.params) {
    for (double& v : p.data) v += rng.uniform(-0.3, 0.3);
  }
  return layer.params;
}

// Direct convolution with explicit reflect padding; independent of im2col.
FeatureMap<double> naive_conv(const LayerSpec& s, const std::vector<Array<double>>& p,
                              const FeatureMap<double>& x) {
  const int h = x.height(), w = x.width(), k = s.kernel_h, st = s.stride;
  const int oh = (h + st - 1) / st, ow = (w + st - 1) / st;
  const int pad_h = std::max((oh - 1) * st + k - h, 0), pad_w = std::max((ow - 1) * st + k - w, 0);
  const int top = pad_h / 2, left = pad_w / 2;
  auto refl = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  FeatureMap<double> y(s.out_channels, oh, ow);
  for (int o = 0; o < s.out_channels; ++o) {
    for (int yy = 0; yy < oh; ++yy) {
      for (int xx = 0; xx < ow; ++xx) {
        double acc = p[1][o];
        for (int c = 0; c < s.in_channels; ++c) {
          for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
              const double wv = p[0][((o * s.in_channels + c) * k + i) * k + j];
              acc += wv * x.at(c, refl(yy * st + i - top, h), refl(xx * st + j - left, w));
            }
          }
        }
        y.at(o, yy, xx) = acc;
      }
    }
  }
  return y;
}

// Full transposed convolution by scattering, then center crop to stride * h.
FeatureMap<double> naive_deconv(const LayerSpec& s, const std::vector<Array<double>>& p,
                                const FeatureMap<double>& x) {
  const int k = s.kernel_h, st = s.stride;
  const int fh = (x.height() - 1) * st + k, fw = (x.width() - 1) * st + k;
  FeatureMap<double> full(s.out_channels, fh, fw);
  for (int c = 0; c < s.in_channels; ++c) {
    for (int o = 0; o < s.out_channels; ++o) {
      for (int iy = 0; iy < x.height(); ++iy) {
        for (int ix = 0; ix < x.width(); ++ix) {
          for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
              full.at(o, iy * st + i, ix * st + j) +=
                  x.at(c, iy, ix) * p[0][((c * s.out_channels + o) * k + i) * k + j];
            }
          }
        }
      }
    }
  }
  const int oh = x.height() * st, ow = x.width() * st;
  const int top = (fh - oh) / 2, left = (fw - ow) / 2;
  FeatureMap<double> y(s.out_channels, oh, ow);
  for (int o = 0; o < s.out_channels; ++o) {
    for (int yy = 0; yy < oh; ++yy) {
      for (int xx = 0; xx < ow; ++xx) y.at(o, yy, xx) = full.at(o, yy + top, xx + left) + p[1][o];
    }
  }
  return y;
}

TEST(Gdn, ZeroGammaUnitBetaIsIdentity) {
  const auto x = random_map(4, 3, 5, 1, -5.0, 5.0);
  const std::vector<double> beta(4, 1.0), gamma(16, 0.0);
  EXPECT_EQ(gdn_apply(x, beta, gamma, false), x);
  EXPECT_EQ(gdn_apply(x, beta, gamma, true), x);
}

TEST(Gdn, SingleChannelHandValue) {
  FeatureMap<double> x(1, 1, 1, 3.0);
  const auto y = gdn_apply(x, {1.0}, {1.0}, false);
  EXPECT_NEAR(y[0], 0.94868, 1e-5);
  const auto yi = gdn_apply(x, {1.0}, {1.0}, true);
  EXPECT_NEAR(yi[0], 3.0 * std::sqrt(10.0), 1e-12);
}

TEST(Gdn, GradientAtIdentityPassesUpstream) {
  const auto x = random_map(3, 4, 4, 2);
  const auto g = random_map(3, 4, 4, 3);
  const std::vector<double> beta(3, 1.0), gamma(9, 0.0);
  for (bool inverse : {false, true}) {
    const auto dx = gdn_apply_backward<double>(x, beta, gamma, inverse, g, nullptr, nullptr, true);
    for (std::size_t i = 0; i < dx.size(); ++i) EXPECT_DOUBLE_EQ(dx[i], g[i]);
  }
}

TEST(Gdn, ForwardThenInverseIdentityWhenGammaZero) {
  const auto x = random_map(5, 4, 3, 4, -3.0, 3.0);
  const std::vector<double> beta = {1.0, 2.0, 0.5, 4.0, 1.0};
  const std::vector<double> gamma(25, 0.0);
  const auto back = gdn_apply(gdn_apply(x, beta, gamma, false), beta, gamma, true);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-12);
}

TEST(Gdn, InitIsNearIdentityWithPositiveParams) {
  Layer<double> layer(LayerSpec::gdn(3));
  Rng rng(0);
  init_layer(layer, rng);
  std::vector<double> beta, gamma;
  gdn_effective(layer.params, beta, gamma);
  for (double b : beta) EXPECT_NEAR(b, 1.0, 1e-9);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      EXPECT_GE(gamma[i * 3 + j], 0.0);
      EXPECT_NEAR(gamma[i * 3 + j], i == j ? 0.1 : 0.0, 1e-8);
    }
  }
}

TEST(Conv, OneByOneScales) {
  const auto s = LayerSpec::conv(1, 1, 1);
  auto p = zero_params<double>(s);
  p[0][0] = 2.0;
  FeatureMap<double> x(1, 2, 2, std::vector<double>{1, 2, 3, 4});
  const auto y = layer_forward(s, p, x);
  EXPECT_EQ(y, FeatureMap<double>(1, 2, 2, std::vector<double>{2, 4, 6, 8}));
}

TEST(Conv, MatchesDirectConvolution) {
  for (int stride : {1, 2}) {
    const auto s = LayerSpec::conv(3, 4, 5, stride);
    const auto p = random_params(s, 10 + stride);
    const auto x = random_map(3, 9, 6, 20 + stride);
    const auto got = layer_forward(s, p, x);
    const auto want = naive_conv(s, p, x);
    ASSERT_TRUE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Deconv, MatchesScatterAndCenterCrop) {
  const auto s = LayerSpec::deconv(3, 2, 5, 2);
  const auto p = random_params(s, 30);
  const auto x = random_map(3, 4, 3, 31);
  const auto got = layer_forward(s, p, x);
  const auto want = naive_deconv(s, p, x);
  ASSERT_TRUE(got.same_shape(want));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(ShapeLaw, StrideTwoConvAndDeconv) {
  for (auto [h, w] : {std::pair{16, 16}, {7, 9}, {1, 3}, {64, 48}}) {
    const auto conv = LayerSpec::conv(2, 5, 5, 2);
    const auto y = layer_forward(conv, zero_params<double>(conv), FeatureMap<double>(2, h, w));
    EXPECT_EQ(y.channels(), 5);
    EXPECT_EQ(y.height(), (h + 1) / 2);
    EXPECT_EQ(y.width(), (w + 1) / 2);
    const auto deconv = LayerSpec::deconv(2, 5, 5, 2);
    const auto z = layer_forward(deconv, zero_params<double>(deconv), FeatureMap<double>(2, h, w));
    EXPECT_EQ(z.channels(), 5);
    EXPECT_EQ(z.height(), 2 * h);
    EXPECT_EQ(z.width(), 2 * w);
  }
}

TEST(Depthwise, ChannelsAreIndependent) {
  const auto s = LayerSpec::depthwise(3, 3);
  const auto p = random_params(s, 40);
  auto x = random_map(3, 5, 5, 41);
  const auto y0 = layer_forward(s, p, x);
  for (std::size_t i = 0; i < x.plane(); ++i) x.channel(1)[i] += 7.0;
  const auto y1 = layer_forward(s, p, x);
  for (int c : {0, 2}) {
    for (std::size_t i = 0; i < y0.plane(); ++i) EXPECT_EQ(y0.channel(c)[i], y1.channel(c)[i]);
  }
  bool changed = false;
  for (std::size_t i = 0; i < y0.plane(); ++i) changed |= y0.channel(1)[i] != y1.channel(1)[i];
  EXPECT_TRUE(changed);
}

TEST(Backward, LinearConvWeightGradIsInputTimesUpstream) {
  const auto s = LayerSpec::conv(1, 1, 1);
  auto p = zero_params<double>(s);
  p[0][0] = 0.7;
  const auto x = random_map(1, 3, 4, 50);
  const auto g = random_map(1, 3, 4, 51);
  const auto y = layer_forward(s, p, x);
  auto grads = zero_params<double>(s);
  layer_backward(s, p, x, y, g, &grads, true);
  double expect_w = 0.0, expect_b = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    expect_w += x[i] * g[i];
    expect_b += g[i];
  }
  EXPECT_NEAR(grads[0][0], expect_w, 1e-12);
  EXPECT_NEAR(grads[1][0], expect_b, 1e-12);
}

TEST(GradCheck, ReluAtPositiveInputsIsExact) {
  const auto x = random_map(2, 3, 3, 60, 0.1, 2.0);
  EXPECT_LT(grad_check(LayerSpec::relu(2), {}, x, 1e-3), 1e-6);
}

struct GradCase {
  LayerSpec spec;
  int h, w;
};

TEST(GradCheck, EveryDifferentiableLayer) {
  const std::vector<GradCase> cases = {
      {LayerSpec::conv(2, 3, 5, 2), 6, 5},
      {LayerSpec::conv(3, 2, 3, 1), 4, 4},
      {LayerSpec::conv(2, 2, 3, 1, Padding::kValid), 5, 4},
      {LayerSpec::deconv(3, 2, 5, 2), 3, 2},
      {LayerSpec::deconv(2, 2, 3, 2, Padding::kValid), 2, 3},
      {LayerSpec::depthwise(3, 3), 4, 5},
      {LayerSpec::gdn(2), 3, 3},
      {LayerSpec::gdn(4), 2, 3},
      {LayerSpec::igdn(2), 3, 3},
      {LayerSpec::igdn(4), 2, 3},
      {LayerSpec::leaky_relu(3), 3, 3},
      {LayerSpec::sigmoid(3), 3, 3},
  };
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    SCOPED_TRACE(kind_name(c.spec.kind));
    const auto p = random_params(c.spec, seed++);
    const auto x = random_map(c.spec.in_channels, c.h, c.w, seed++, -2.0, 2.0);
    EXPECT_LT(grad_check(c.spec, p, x, 1e-3), 1e-3);
  }
}

TEST(Errors, ShapeMismatchAndNonFinite) {
  const auto s = LayerSpec::conv(3, 2, 3);
  const auto p = zero_params<double>(s);
  EXPECT_THROW(layer_forward(s, p, FeatureMap<double>(2, 4, 4)), Error);
  FeatureMap<double> bad(3, 4, 4);
  bad.at(1, 2, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(layer_forward(s, p, bad), Error);
  auto wrong = p;
  wrong[0].shape = {2, 3, 5, 5};
  EXPECT_THROW((Layer<double>{s, wrong}), Error);
  EXPECT_THROW(gdn_apply(FeatureMap<double>(2, 1, 1), {1.0}, {0.0}, false), Error);
  const LayerSpec uneven{LayerKind::kDepthwiseConv, 3, 4, 3, 3, 1, Padding::kSameReflect};
  EXPECT_THROW(uneven.validate(), Error);
}

TEST(Reflect, IndexBouncesWithoutRepeatingEdge) {
  EXPECT_EQ(reflect_index(-1, 4), 1);
  EXPECT_EQ(reflect_index(-2, 4), 2);
  EXPECT_EQ(reflect_index(4, 4), 2);
  EXPECT_EQ(reflect_index(5, 4), 1);
  EXPECT_EQ(reflect_index(-3, 2), 1);
  EXPECT_EQ(reflect_index(3, 1), 0);
}

}  // namespace
}  // namespace cbanet::nn
