#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "cbanet/error.hpp"
#include "cbanet/tensor.hpp"

namespace cbanet::io {

/// Reads any PNG as 8-bit RGB planes; grayscale is replicated to 3 channels
/// and alpha is dropped.
inline FeatureMap<std::uint8_t> read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw data_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw data_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  FeatureMap<std::uint8_t> out(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c];
    }
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const FeatureMap<std::uint8_t>& img) {
  if (img.channels() != 3) throw invalid_argument("write_png: expects 3 channels");
  const int h = img.height(), w = img.width();
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] = img.at(c, y, x);
    }
  }
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw data_error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace cbanet::io
