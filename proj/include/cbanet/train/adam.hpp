#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "cbanet/entropy/density.hpp"
#include "cbanet/nn/network.hpp"

namespace cbanet::train {

/// Ordered list of trainable float slots; gradients are flattened in the
/// same order by GradientBuffer.
class ParamSet {
 public:
  void add(nn::Network<float>& net) {
    net.for_each_param([&](Array<float>& p) { spans_.emplace_back(p.data); });
  }
  void add(entropy::FactorizedDensity& d) {
    spans_.emplace_back(d.logits.data);
    spans_.emplace_back(d.means.data);
    spans_.emplace_back(d.log_scales.data);
  }
  void add(float& scalar) { spans_.emplace_back(&scalar, 1); }

  const std::vector<std::span<float>>& spans() const { return spans_; }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& s : spans_) n += s.size();
    return n;
  }

 private:
  std::vector<std::span<float>> spans_;
};

class GradientBuffer {
 public:
  void add(const nn::Gradients<float>& g, double scale) {
    for (const auto& layer : g) {
      for (const auto& p : layer) {
        for (float v : p.data) flat_.push_back(scale * v);
      }
    }
  }
  void add(const entropy::DensityGradients& g, double scale) {
    for (const auto* v : {&g.logits, &g.means, &g.log_scales}) {
      for (double x : *v) flat_.push_back(scale * x);
    }
  }
  void add(double g) { flat_.push_back(g); }

  std::span<const double> values() const { return flat_; }
  double norm() const {
    double acc = 0.0;
    for (double v : flat_) acc += v * v;
    return std::sqrt(acc);
  }
  void scale(double s) {
    for (double& v : flat_) v *= s;
  }
  bool all_finite() const {
    for (double v : flat_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  std::vector<double> flat_;
};

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  explicit Adam(ParamSet params) : params_(std::move(params)), m_(params_.size()), v_(params_.size()) {}

  void step(std::span<const double> grad, double lr) {
    if (grad.size() != m_.size()) throw invalid_argument("adam: gradient size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    std::size_t i = 0;
    for (const auto& span : params_.spans()) {
      for (float& p : span) {
        m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
        v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
        p = static_cast<float>(p - lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps));
        ++i;
      }
    }
  }

  long steps() const { return t_; }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  ParamSet params_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace cbanet::train
