#pragma once

#include <algorithm>
#include <vector>

#include "cbanet/nn/network.hpp"

namespace cbanet::codec {

/// Gate network shared by BAL and IBAL: 1x1 conv C->P, depthwise 3x3,
/// 1x1 conv P->P, 1x1 conv P->C with leaky-relu between.
inline std::vector<nn::LayerSpec> gate_specs(int channels, int width) {
  using nn::LayerSpec;
  return {LayerSpec::conv(channels, width, 1), LayerSpec::leaky_relu(width),
          LayerSpec::depthwise(width, 3),       LayerSpec::leaky_relu(width),
          LayerSpec::conv(width, width, 1),    LayerSpec::leaky_relu(width),
          LayerSpec::conv(width, channels, 1)};
}

enum class GateKind { kContract, kExpand };

inline constexpr float kContractGateBias = -5.0f;
inline constexpr float kGateOutputScale = 0.01f;

/// Near-identity start: the last layer is shrunk so the gate output is almost
/// constant, then biased so BAL scales by ~0.993 and IBAL by ~1.
template <typename T>
void init_gate(nn::Network<T>& gate, GateKind kind, Rng& rng) {
  gate.init(rng);
  auto& last = gate.layers().back();
  for (T& v : last.params[0].data) v *= T(kGateOutputScale);
  const T bias = kind == GateKind::kContract ? T(kContractGateBias) : T(0);
  for (T& v : last.params[1].data) v = bias;
}

template <typename T>
struct GateTrace {
  typename nn::Network<T>::Trace net;
  FeatureMap<T> gate;  // raw gate network output
};

/// y * (1 - sigmoid(B(y))): shrinks every element toward zero, sign kept.
template <typename T>
FeatureMap<T> contract_apply(const nn::Network<T>& gate, const FeatureMap<T>& y,
                             GateTrace<T>* trace = nullptr) {
  FeatureMap<T> s = trace ? gate.forward(y, trace->net) : gate.forward(y);
  y.require_same_shape(s, "bal");
  FeatureMap<T> out = y;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= T(1) - nn::sigmoid(s[i]);
  if (trace) trace->gate = std::move(s);
  return out;
}

/// y * (1 + relu(B(y))): grows every element away from zero, sign kept.
template <typename T>
FeatureMap<T> expand_apply(const nn::Network<T>& gate, const FeatureMap<T>& y,
                           GateTrace<T>* trace = nullptr) {
  FeatureMap<T> s = trace ? gate.forward(y, trace->net) : gate.forward(y);
  y.require_same_shape(s, "ibal");
  FeatureMap<T> out = y;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= T(1) + std::max(s[i], T(0));
  if (trace) trace->gate = std::move(s);
  return out;
}

/// Gradients of contract_apply; returns d/dy (empty when need_dx is false).
template <typename T>
FeatureMap<T> contract_backward(const nn::Network<T>& gate, const FeatureMap<T>& y,
                                const GateTrace<T>& trace, const FeatureMap<T>& gout,
                                nn::Gradients<T>* grads, bool need_dx) {
  FeatureMap<T> ds(y.channels(), y.height(), y.width());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const T sg = nn::sigmoid(trace.gate[i]);
    ds[i] = -gout[i] * y[i] * sg * (T(1) - sg);
  }
  FeatureMap<T> dy = gate.backward(trace.net, ds, grads, need_dx);
  if (!need_dx) return {};
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dy[i] += gout[i] * (T(1) - nn::sigmoid(trace.gate[i]));
  }
  return dy;
}

template <typename T>
FeatureMap<T> expand_backward(const nn::Network<T>& gate, const FeatureMap<T>& y,
                              const GateTrace<T>& trace, const FeatureMap<T>& gout,
                              nn::Gradients<T>* grads, bool need_dx) {
  FeatureMap<T> ds(y.channels(), y.height(), y.width());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ds[i] = trace.gate[i] > T(0) ? gout[i] * y[i] : T(0);
  }
  FeatureMap<T> dy = gate.backward(trace.net, ds, grads, need_dx);
  if (!need_dx) return {};
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dy[i] += gout[i] * (T(1) + std::max(trace.gate[i], T(0)));
  }
  return dy;
}

}  // namespace cbanet::codec
