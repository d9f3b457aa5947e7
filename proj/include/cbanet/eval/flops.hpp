#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cbanet/nn/layers.hpp"

namespace cbanet::eval {

/// One multiply-accumulate counts as one FLOP.
struct LayerFlops {
  std::string name;
  double macs = 0.0;
  int out_channels = 0;
  int out_h = 0;
  int out_w = 0;
};

inline double layer_macs(const nn::LayerSpec& s, int in_h, int in_w, nn::Geometry* out = nullptr) {
  const nn::Geometry g = nn::output_geometry(s, in_h, in_w);
  if (out != nullptr) *out = g;
  const double sites_out = static_cast<double>(g.out_h) * g.out_w;
  const double kernel = static_cast<double>(s.kernel_h) * s.kernel_w;
  switch (s.kind) {
    case nn::LayerKind::kConv:
    case nn::LayerKind::kDeconv:
      return kernel * s.in_channels * s.out_channels * sites_out;
    case nn::LayerKind::kDepthwiseConv:
      return kernel * s.in_channels * sites_out;
    case nn::LayerKind::kGdn:
    case nn::LayerKind::kIgdn:
      return (static_cast<double>(s.in_channels) * s.in_channels + s.in_channels) * sites_out;
    case nn::LayerKind::kLeakyRelu:
    case nn::LayerKind::kSigmoid:
    case nn::LayerKind::kRelu:
      return static_cast<double>(s.in_channels) * sites_out;
  }
  return 0.0;
}

/// Per-layer MACs of a layer chain applied to an (in_h, in_w) input.
inline std::vector<LayerFlops> count_layers(const std::vector<nn::LayerSpec>& specs, int in_h,
                                            int in_w, const std::string& prefix = "") {
  std::vector<LayerFlops> out;
  int h = in_h, w = in_w;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    nn::Geometry g;
    const double macs = layer_macs(specs[i], h, w, &g);
    out.push_back({prefix + std::to_string(i) + ":" + nn::kind_name(specs[i].kind), macs,
                   specs[i].out_channels, g.out_h, g.out_w});
    h = g.out_h;
    w = g.out_w;
  }
  return out;
}

inline double total_macs(const std::vector<LayerFlops>& layers) {
  return std::accumulate(layers.begin(), layers.end(), 0.0,
                         [](double acc, const LayerFlops& l) { return acc + l.macs; });
}

inline double count_macs(const std::vector<nn::LayerSpec>& specs, int in_h, int in_w) {
  return total_macs(count_layers(specs, in_h, in_w));
}

inline std::size_t count_params(const std::vector<nn::LayerSpec>& specs) {
  std::size_t n = 0;
  for (const auto& s : specs) {
    for (const auto& shape : nn::param_shapes(s)) n += Array<float>::element_count(shape);
  }
  return n;
}

}  // namespace cbanet::eval
