#pragma once

#include <cmath>

#include "cbanet/latent.hpp"
#include "cbanet/rng.hpp"

namespace cbanet::entropy {

enum class QuantizeMode { kTrain, kEval };

/// Round half away from zero.
inline float round_half_away(float v) { return std::round(v); }

/// Eval: integer rounding. Train: additive U(-0.5, 0.5) noise as a
/// differentiable stand-in (output stays unquantized).
inline Latent quantize(const Latent& y, QuantizeMode mode, Rng* rng = nullptr) {
  if (y.quantized) throw invalid_argument("quantize: latent is already quantized");
  Latent out = y;
  if (mode == QuantizeMode::kEval) {
    for (float& v : out.values.values()) v = round_half_away(v);
    out.quantized = true;
    return out;
  }
  if (rng == nullptr) throw invalid_argument("quantize: train mode needs a generator");
  for (float& v : out.values.values()) {
    const double base = v;
    float noisy = static_cast<float>(base + (rng->uniform() - 0.5));
    // float rounding must not push the offset outside the noise support
    while (std::abs(static_cast<double>(noisy) - base) > 0.5) noisy = std::nextafter(noisy, v);
    v = noisy;
  }
  return out;
}

}  // namespace cbanet::entropy
