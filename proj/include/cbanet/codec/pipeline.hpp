#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "cbanet/codec/model.hpp"
#include "cbanet/entropy/bitstream.hpp"
#include "cbanet/entropy/latent_codec.hpp"
#include "cbanet/entropy/quantize.hpp"

namespace cbanet::codec {

inline int padded_extent(int n) { return (n + kDownsampling - 1) / kDownsampling * kDownsampling; }

/// Mirrors the image on the bottom/right edges up to the next multiple of 16.
inline FeatureMap<float> reflect_pad(const FeatureMap<float>& img) {
  const int h = padded_extent(img.height()), w = padded_extent(img.width());
  if (h == img.height() && w == img.width()) return img;
  FeatureMap<float> out(img.channels(), h, w);
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      const int sy = nn::reflect_index(y, img.height());
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, sy, nn::reflect_index(x, img.width()));
    }
  }
  return out;
}

template <typename T>
FeatureMap<T> crop_top_left(const FeatureMap<T>& img, int h, int w) {
  if (h > img.height() || w > img.width()) throw invalid_argument("crop larger than image");
  FeatureMap<T> out(img.channels(), h, w);
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      std::copy_n(&img.at(c, y, 0), w, &out.at(c, y, 0));
    }
  }
  return out;
}

/// Clamps to [0, 1] and rounds to 8-bit levels.
inline FeatureMap<std::uint8_t> to_8bit(const FeatureMap<float>& img) {
  FeatureMap<std::uint8_t> out(img.channels(), img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float v = std::isfinite(img[i]) ? std::clamp(img[i], 0.0f, 1.0f) : 0.0f;
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

inline FeatureMap<float> from_8bit(const FeatureMap<std::uint8_t>& img) {
  FeatureMap<float> out(img.channels(), img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] / 255.0f;
  return out;
}

/// Quantized target-quality latent of an image in [0, 1] (any size).
inline Latent analyze(const FeatureMap<float>& image, int quality, const ModelBundle& b) {
  b.check_quality(quality);
  const Latent base = encode_latent(reflect_pad(image), b);
  return entropy::quantize(bal_forward(base, quality, b), entropy::QuantizeMode::kEval);
}

/// Full encoder: pad, analyze, retarget, quantize and range-code into a stream.
inline std::vector<std::uint8_t> encode_image(const FeatureMap<float>& image, int quality,
                                              const ModelBundle& b) {
  const Latent q = analyze(image, quality, b);
  if (q.height() > std::numeric_limits<std::uint16_t>::max() ||
      q.width() > std::numeric_limits<std::uint16_t>::max()) {
    throw invalid_argument("encode: image too large for the bitstream header");
  }
  entropy::BitstreamHeader h;
  h.quality_index = static_cast<std::uint8_t>(quality);
  h.orig_h = static_cast<std::uint32_t>(image.height());
  h.orig_w = static_cast<std::uint32_t>(image.width());
  h.latent_c = static_cast<std::uint16_t>(q.channels());
  h.latent_h = static_cast<std::uint16_t>(q.height());
  h.latent_w = static_cast<std::uint16_t>(q.width());
  return entropy::pack_bitstream(h, entropy::compress_latent(q, b.entropy_for(quality).tables));
}

/// Recovers the quantized target-quality latent from a stream.
inline Latent read_latent(const entropy::Bitstream& bs, const ModelBundle& b) {
  const auto& h = bs.header;
  if (h.quality_index < 1 || h.quality_index > b.config.qualities) {
    throw data_error("stream quality " + std::to_string(h.quality_index) +
                     " outside supported range 1.." + std::to_string(b.config.qualities));
  }
  if (h.latent_c != b.config.latent_channels) throw data_error("stream latent channels do not match the model");
  if (h.orig_h == 0 || h.orig_w == 0 ||
      h.latent_h != padded_extent(static_cast<int>(h.orig_h)) / kDownsampling ||
      h.latent_w != padded_extent(static_cast<int>(h.orig_w)) / kDownsampling) {
    throw data_error("stream latent dims inconsistent with image dims");
  }
  return entropy::decompress_latent(bs.payload, b.entropy_for(h.quality_index).tables, h.latent_c,
                                    h.latent_h, h.latent_w, h.quality_index);
}

/// Full decoder with K branches; returns the unclamped reconstruction at the
/// original size.
inline FeatureMap<float> decode_image(const std::vector<std::uint8_t>& bytes, int branches,
                                      const ModelBundle& b) {
  const entropy::Bitstream bs = entropy::parse_bitstream(bytes);
  const Latent q = read_latent(bs, b);
  const FeatureMap<float> x = cam_decode(ibal_forward(q, q.quality_index, b), branches, b);
  return crop_top_left(x, static_cast<int>(bs.header.orig_h), static_cast<int>(bs.header.orig_w));
}

}  // namespace cbanet::codec
