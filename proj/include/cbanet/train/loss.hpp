#pragma once

#include "cbanet/tensor.hpp"

namespace cbanet::train {

/// Mean squared error on the 255-scaled image domain.
inline double mse255(const FeatureMap<float>& x, const FeatureMap<float>& x_hat) {
  x.require_same_shape(x_hat, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = 255.0 * (double(x_hat[i]) - double(x[i]));
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

/// d mse255 / d x_hat.
inline FeatureMap<float> mse255_grad(const FeatureMap<float>& x, const FeatureMap<float>& x_hat,
                                     double scale = 1.0) {
  FeatureMap<float> g(x.channels(), x.height(), x.width());
  const double k = scale * 2.0 * 255.0 * 255.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = static_cast<float>(k * (double(x_hat[i]) - double(x[i])));
  return g;
}

/// Rate per pixel plus lambda times 255-scale MSE.
inline double loss_rd(const FeatureMap<float>& x, const FeatureMap<float>& x_hat, double bits,
                      double lambda, double pixels) {
  return bits / pixels + lambda * mse255(x, x_hat);
}

}  // namespace cbanet::train
