#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cbanet/nn/layers.hpp"
#include "cbanet/rng.hpp"

namespace cbanet::nn {

template <typename T>
struct Layer {
  LayerSpec spec;
  std::vector<Array<T>> params;

  explicit Layer(LayerSpec s) : spec(s), params(zero_params<T>(s)) { spec.validate(); }
  Layer(LayerSpec s, std::vector<Array<T>> p) : spec(s), params(std::move(p)) {
    spec.validate();
    check_params(spec, params);
  }

  FeatureMap<T> forward(const FeatureMap<T>& x) const { return layer_forward(spec, params, x); }
};

/// Fan-in scaled uniform for conv kernels; GDN starts at beta = 1, gamma = 0.1 I.
template <typename T>
void init_layer(Layer<T>& layer, Rng& rng) {
  const LayerSpec& s = layer.spec;
  auto fill_uniform = [&](Array<T>& a, double bound) {
    for (T& v : a.data) v = static_cast<T>(rng.uniform(-bound, bound));
  };
  switch (s.kind) {
    case LayerKind::kConv:
      fill_uniform(layer.params[0], std::sqrt(3.0 / (s.in_channels * s.kernel_h * s.kernel_w)));
      break;
    case LayerKind::kDeconv: {
      const double taps = static_cast<double>(s.kernel_h * s.kernel_w) / (s.stride * s.stride);
      fill_uniform(layer.params[0], std::sqrt(3.0 / (s.in_channels * taps)));
      break;
    }
    case LayerKind::kDepthwiseConv:
      fill_uniform(layer.params[0], std::sqrt(3.0 / (s.kernel_h * s.kernel_w)));
      break;
    case LayerKind::kGdn:
    case LayerKind::kIgdn: {
      const int c = s.in_channels;
      const T beta_raw = softplus_inverse(T(1) - T(kBetaFloor));
      const T diag_raw = softplus_inverse(T(0.1));
      // softplus(-20) ~ 2e-9: effectively zero off-diagonal coupling, still finite.
      for (int i = 0; i < c; ++i) layer.params[0][i] = beta_raw;
      for (int i = 0; i < c; ++i) {
        for (int j = 0; j < c; ++j) layer.params[1][i * c + j] = i == j ? diag_raw : T(-20);
      }
      break;
    }
    default:
      break;
  }
}

template <typename T>
using Gradients = std::vector<std::vector<Array<T>>>;

/// A chain of layers. Forward is const and reentrant; training keeps the
/// activations in a caller-owned Trace.
template <typename T>
class Network {
 public:
  struct Trace {
    std::vector<FeatureMap<T>> activations;  // [0] = input, [i+1] = output of layer i
  };

  Network() = default;
  explicit Network(std::vector<LayerSpec> specs) {
    for (const auto& s : specs) layers_.emplace_back(s);
  }

  void init(Rng& rng) {
    for (auto& l : layers_) init_layer(l, rng);
  }

  std::vector<Layer<T>>& layers() { return layers_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(l.spec);
    return out;
  }

  FeatureMap<T> forward(const FeatureMap<T>& x) const {
    FeatureMap<T> cur = x;
    for (const auto& l : layers_) cur = l.forward(cur);
    return cur;
  }

  FeatureMap<T> forward(const FeatureMap<T>& x, Trace& trace) const {
    trace.activations.clear();
    trace.activations.reserve(layers_.size() + 1);
    trace.activations.push_back(x);
    for (const auto& l : layers_) trace.activations.push_back(l.forward(trace.activations.back()));
    return trace.activations.back();
  }

  /// Backpropagates gy; param grads are accumulated when grads is non-null.
  FeatureMap<T> backward(const Trace& trace, const FeatureMap<T>& gy, Gradients<T>* grads,
                         bool need_input_grad) const {
    FeatureMap<T> g = gy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const bool need_dx = i > 0 || need_input_grad;
      auto* lg = grads ? &(*grads)[i] : nullptr;
      g = layer_backward(layers_[i].spec, layers_[i].params, trace.activations[i],
                         trace.activations[i + 1], g, lg, need_dx);
      if (!need_dx) break;
    }
    return g;
  }

  Gradients<T> zero_gradients() const {
    Gradients<T> g;
    for (const auto& l : layers_) g.push_back(zero_params<T>(l.spec));
    return g;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
      for (const auto& p : l.params) n += p.size();
    }
    return n;
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (auto& l : layers_) {
      for (auto& p : l.params) fn(p);
    }
  }
  template <typename Fn>
  void for_each_param(Fn&& fn) const {
    for (const auto& l : layers_) {
      for (const auto& p : l.params) fn(p);
    }
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    for (const auto& l : layers_) {
      std::vector<Array<U>> p;
      for (const auto& a : l.params) p.push_back(a.template cast<U>());
      out.layers().emplace_back(l.spec, std::move(p));
    }
    return out;
  }

  friend bool operator==(const Network& a, const Network& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      if (!(a.layers_[i].spec == b.layers_[i].spec) || a.layers_[i].params != b.layers_[i].params) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Layer<T>> layers_;
};

}  // namespace cbanet::nn
