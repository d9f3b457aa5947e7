#pragma once

#include "cbanet/tensor.hpp"

namespace cbanet {

/// Encoder-side representation (C x h x w) tagged with the bitrate it targets.
/// When `quantized` is set every value is an integer stored as float.
struct Latent {
  FeatureMap<float> values;
  int quality_index = 0;
  bool quantized = false;

  int channels() const { return values.channels(); }
  int height() const { return values.height(); }
  int width() const { return values.width(); }
};

}  // namespace cbanet
