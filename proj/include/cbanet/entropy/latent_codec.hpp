#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cbanet/entropy/range_coder.hpp"
#include "cbanet/latent.hpp"

namespace cbanet::entropy {

/// Range-codes an integer latent channel by channel in raster order, each
/// channel with its own frozen table. Out-of-support values are sent as the
/// escape symbol followed by the two's-complement value as two raw 16-bit halves.
inline std::vector<std::uint8_t> compress_latent(const Latent& y, const std::vector<CdfTable>& tables) {
  if (!y.quantized) throw invalid_argument("compress_latent: latent is not quantized");
  if (static_cast<int>(tables.size()) != y.channels()) {
    throw invalid_argument("compress_latent: table count does not match channels");
  }
  RangeEncoder enc;
  for (int c = 0; c < y.channels(); ++c) {
    const float* src = y.values.channel(c);
    for (std::size_t i = 0; i < y.values.plane(); ++i) {
      if (!(std::abs(src[i]) < 2147483648.0f)) {
        throw invalid_argument("compress_latent: value outside int32 range");
      }
      const auto value = static_cast<std::int32_t>(src[i]);
      const int idx = symbol_index(value);
      enc.encode_symbol(idx, tables[c]);
      if (idx == kEscapeIndex) {
        const auto bits = static_cast<std::uint32_t>(value);
        enc.encode_raw16(bits >> 16);
        enc.encode_raw16(bits & 0xFFFFu);
      }
    }
  }
  return enc.finish();
}

inline Latent decompress_latent(std::span<const std::uint8_t> payload, const std::vector<CdfTable>& tables,
                            int channels, int height, int width, int quality_index) {
  if (static_cast<int>(tables.size()) != channels) {
    throw data_error("decompress_latent: table count does not match channels");
  }
  Latent y{FeatureMap<float>(channels, height, width), quality_index, true};
  RangeDecoder dec(payload);
  for (int c = 0; c < channels; ++c) {
    float* dst = y.values.channel(c);
    for (std::size_t i = 0; i < y.values.plane(); ++i) {
      const int idx = dec.decode_symbol(tables[c]);
      if (idx == kEscapeIndex) {
        const std::uint32_t hi = dec.decode_raw16();
        const std::uint32_t lo = dec.decode_raw16();
        dst[i] = static_cast<float>(static_cast<std::int32_t>((hi << 16) | lo));
      } else {
        dst[i] = static_cast<float>(idx + kSupportMin);
      }
    }
  }
  dec.finish();
  return y;
}

}  // namespace cbanet::entropy
