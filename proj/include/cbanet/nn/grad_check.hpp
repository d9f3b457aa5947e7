#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "cbanet/nn/layers.hpp"
#include "cbanet/rng.hpp"

namespace cbanet::nn {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Max relative error between analytic gradients and central differences of
/// `loss` over every element of `vars`. `analytic[i]` pairs with `vars[i]`.
template <typename LossFn>
double check_gradient(const std::vector<std::span<double>>& vars,
                      const std::vector<std::vector<double>>& analytic, LossFn&& loss,
                      double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw invalid_argument("grad_check: eps must be in (0, 1e-2]");
  if (vars.size() != analytic.size()) throw invalid_argument("grad_check: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (vars[i].size() != analytic[i].size()) throw invalid_argument("grad_check: size mismatch");
    for (std::size_t k = 0; k < vars[i].size(); ++k) {
      const double saved = vars[i][k];
      vars[i][k] = saved + eps;
      const double plus = loss();
      vars[i][k] = saved - eps;
      const double minus = loss();
      vars[i][k] = saved;
      worst = std::max(worst, relative_error(analytic[i][k], (plus - minus) / (2.0 * eps)));
    }
  }
  return worst;
}

/// Random projection weights used as the upstream gradient of a scalar probe loss.
inline FeatureMap<double> probe_weights(int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  FeatureMap<double> r(c, h, w);
  for (double& v : r.values()) v = rng.uniform(-1.0, 1.0);
  return r;
}

inline double dot(const FeatureMap<double>& a, const FeatureMap<double>& b) {
  a.require_same_shape(b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Checks layer_backward against central differences of <r, layer_forward(x)>
/// over all parameters and all input elements.
inline double grad_check(const LayerSpec& spec, std::vector<Array<double>> params,
                         FeatureMap<double> x, double eps, std::uint64_t seed = 7) {
  const FeatureMap<double> y = layer_forward(spec, params, x);
  const FeatureMap<double> r = probe_weights(y.channels(), y.height(), y.width(), seed);
  std::vector<Array<double>> grads = zero_params<double>(spec);
  const FeatureMap<double> dx = layer_backward(spec, params, x, y, r, &grads, true);

  std::vector<std::span<double>> vars;
  std::vector<std::vector<double>> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars.emplace_back(params[i].data);
    analytic.emplace_back(grads[i].data.begin(), grads[i].data.end());
  }
  vars.emplace_back(x.storage());
  analytic.emplace_back(dx.storage().begin(), dx.storage().end());
  return check_gradient(vars, analytic, [&] { return dot(r, layer_forward(spec, params, x)); },
                        eps);
}

}  // namespace cbanet::nn
