#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "cbanet/latent.hpp"
#include "cbanet/nn/layers.hpp"

namespace cbanet::entropy {

inline constexpr int kMixtureComponents = 3;
inline constexpr double kLikelihoodFloor = 1e-9;

/// Per-channel factorized prior: each channel is an independent mixture of
/// logistics, and a latent value v gets the mass of [v - 0.5, v + 0.5].
/// Parameters are unconstrained (softmax weights, log scales).
struct FactorizedDensity {
  int channels = 0;
  Array<float> logits;      // [C, 3]
  Array<float> means;       // [C, 3]
  Array<float> log_scales;  // [C, 3]

  static FactorizedDensity initial(int channels) {
    FactorizedDensity d;
    d.channels = channels;
    const std::vector<std::size_t> shape = {static_cast<std::size_t>(channels), kMixtureComponents};
    d.logits = Array<float>(shape, 0.0f);
    d.means = Array<float>(shape);
    d.log_scales = Array<float>(shape);
    const std::array<float, kMixtureComponents> mu = {-2.0f, 0.0f, 2.0f};
    const std::array<float, kMixtureComponents> scale = {1.0f, 0.5f, 1.0f};
    for (int c = 0; c < channels; ++c) {
      for (int m = 0; m < kMixtureComponents; ++m) {
        d.means[c * kMixtureComponents + m] = mu[m];
        d.log_scales[c * kMixtureComponents + m] = std::log(scale[m]);
      }
    }
    return d;
  }

  std::size_t param_count() const { return logits.size() + means.size() + log_scales.size(); }

  /// Continuous CDF of channel c at x.
  double cdf(int c, double x) const {
    const auto w = weights(c);
    double acc = 0.0;
    for (int m = 0; m < kMixtureComponents; ++m) {
      const int k = c * kMixtureComponents + m;
      acc += w[m] * nn::sigmoid((x - means[k]) / std::exp(static_cast<double>(log_scales[k])));
    }
    return acc;
  }

  /// Mass of [v - 0.5, v + 0.5] for channel c (unfloored).
  double likelihood(int c, double v) const {
    const auto w = weights(c);
    double acc = 0.0;
    for (int m = 0; m < kMixtureComponents; ++m) {
      const int k = c * kMixtureComponents + m;
      const double s = std::exp(static_cast<double>(log_scales[k]));
      acc += w[m] * interval_mass((v + 0.5 - means[k]) / s, (v - 0.5 - means[k]) / s);
    }
    return acc;
  }

  std::array<double, kMixtureComponents> weights(int c) const {
    std::array<double, kMixtureComponents> w{};
    double mx = -1e300;
    for (int m = 0; m < kMixtureComponents; ++m) mx = std::max(mx, double(logits[c * kMixtureComponents + m]));
    double z = 0.0;
    for (int m = 0; m < kMixtureComponents; ++m) {
      w[m] = std::exp(logits[c * kMixtureComponents + m] - mx);
      z += w[m];
    }
    for (double& v : w) v /= z;
    return w;
  }

  /// sigmoid(hi) - sigmoid(lo), evaluated on the tail side that avoids cancellation.
  static double interval_mass(double hi, double lo) {
    if (lo > 0.0) return nn::sigmoid(-lo) - nn::sigmoid(-hi);
    return nn::sigmoid(hi) - nn::sigmoid(lo);
  }

  friend bool operator==(const FactorizedDensity&, const FactorizedDensity&) = default;
};

struct DensityGradients {
  std::vector<double> logits, means, log_scales;

  explicit DensityGradients(const FactorizedDensity& d)
      : logits(d.logits.size(), 0.0), means(d.means.size(), 0.0), log_scales(d.log_scales.size(), 0.0) {}
};

/// Total information content sum(-log2 p) of `y` under the density. When
/// non-null, `dy` receives d bits / d y (for noisy training latents) and
/// `grads` accumulates d bits / d params. Likelihoods are floored at 1e-9;
/// the floor passes gradients straight through.
inline double rate_bits(const FactorizedDensity& d, const FeatureMap<float>& y,
                        FeatureMap<float>* dy = nullptr, DensityGradients* grads = nullptr) {
  if (y.channels() != d.channels) throw invalid_argument("rate: channel count mismatch");
  if (dy != nullptr) *dy = FeatureMap<float>(y.channels(), y.height(), y.width());
  constexpr int M = kMixtureComponents;
  const double inv_ln2 = 1.0 / std::numbers::ln2;
  double total = 0.0;
  for (int c = 0; c < d.channels; ++c) {
    const auto w = d.weights(c);
    std::array<double, M> mu{}, s{};
    for (int m = 0; m < M; ++m) {
      mu[m] = d.means[c * M + m];
      s[m] = std::exp(static_cast<double>(d.log_scales[c * M + m]));
    }
    const float* src = y.channel(c);
    for (std::size_t i = 0; i < y.plane(); ++i) {
      const double v = src[i];
      std::array<double, M> q{}, dq_dv{}, dq_dlogs{};
      double p = 0.0;
      for (int m = 0; m < M; ++m) {
        const double hi = (v + 0.5 - mu[m]) / s[m];
        const double lo = (v - 0.5 - mu[m]) / s[m];
        q[m] = FactorizedDensity::interval_mass(hi, lo);
        p += w[m] * q[m];
        if (dy != nullptr || grads != nullptr) {
          const double sh = nn::sigmoid(hi), sl = nn::sigmoid(lo);
          const double dh = sh * (1.0 - sh), dl = sl * (1.0 - sl);
          dq_dv[m] = (dh - dl) / s[m];
          dq_dlogs[m] = -(dh * hi - dl * lo);
        }
      }
      const double pf = std::max(p, kLikelihoodFloor);
      total -= std::log2(pf);
      if (dy == nullptr && grads == nullptr) continue;
      const double dbits_dp = -inv_ln2 / pf;
      if (dy != nullptr) {
        double dv = 0.0;
        for (int m = 0; m < M; ++m) dv += w[m] * dq_dv[m];
        dy->channel(c)[i] = static_cast<float>(dbits_dp * dv);
      }
      if (grads != nullptr) {
        for (int m = 0; m < M; ++m) {
          grads->logits[c * M + m] += dbits_dp * w[m] * (q[m] - p);
          grads->means[c * M + m] -= dbits_dp * w[m] * dq_dv[m];
          grads->log_scales[c * M + m] += dbits_dp * w[m] * dq_dlogs[m];
        }
      }
    }
  }
  return total;
}

/// rate_estimate over a latent: bits under the continuous density.
inline double rate_estimate(const Latent& y, const FactorizedDensity& d) {
  return rate_bits(d, y.values);
}

}  // namespace cbanet::entropy
