#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cbanet/codec/pipeline.hpp"

namespace cbanet::eval {

inline constexpr double kPsnrCap = 100.0;

inline double psnr(const FeatureMap<std::uint8_t>& a, const FeatureMap<std::uint8_t>& b) {
  if (!a.same_shape(b)) throw invalid_argument("psnr: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  if (acc == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / (acc / static_cast<double>(a.size()))));
}

/// Both images are rounded to 8-bit levels before comparison.
inline double psnr(const FeatureMap<float>& a, const FeatureMap<float>& b) {
  return psnr(codec::to_8bit(a), codec::to_8bit(b));
}

/// Bits per pixel of a full stream, header included.
inline double bpp(std::size_t stream_bytes, std::uint32_t orig_h, std::uint32_t orig_w) {
  if (orig_h == 0 || orig_w == 0) throw invalid_argument("bpp: empty image");
  return 8.0 * static_cast<double>(stream_bytes) / (static_cast<double>(orig_h) * orig_w);
}

inline double bpp(const std::vector<std::uint8_t>& stream) {
  const auto bs = entropy::parse_bitstream(stream);
  return bpp(stream.size(), bs.header.orig_h, bs.header.orig_w);
}

}  // namespace cbanet::eval
