#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "cbanet/codec/pipeline.hpp"
#include "cbanet/io/png.hpp"
#include "cbanet/rng.hpp"

namespace cbanet::train {

struct NamedImage {
  std::string name;
  FeatureMap<float> pixels;  // [0, 1]
};

/// All decodable PNGs in `dir` (sorted by file name) with both sides at least
/// `min_side`. Others are skipped with a warning on stderr.
inline std::vector<NamedImage> load_images(const std::filesystem::path& dir, int min_side,
                                           std::ostream& warn = std::cerr) {
  if (!std::filesystem::is_directory(dir)) throw data_error("dataset: not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<NamedImage> out;
  for (const auto& f : files) {
    try {
      auto px = codec::from_8bit(io::read_png(f));
      if (px.height() < min_side || px.width() < min_side) {
        warn << "warning: skipping " << f.filename().string() << " (smaller than " << min_side << ")\n";
        continue;
      }
      out.push_back({f.filename().string(), std::move(px)});
    } catch (const Error& e) {
      warn << "warning: skipping " << f.filename().string() << ": " << e.what() << "\n";
    }
  }
  if (out.empty()) throw data_error("dataset: no usable images in " + dir.string());
  return out;
}

/// Seeded stream of random square crops.
class CropStream {
 public:
  CropStream(const std::vector<NamedImage>& images, int crop, std::uint64_t seed)
      : images_(&images), crop_(crop), rng_(seed) {
    if (images.empty()) throw data_error("dataset: no usable images");
    if (crop <= 0) throw invalid_argument("crop size must be positive");
    for (const auto& img : images) {
      if (img.pixels.height() < crop || img.pixels.width() < crop) {
        throw data_error("dataset: image " + img.name + " smaller than crop");
      }
    }
  }

  struct Crop {
    std::size_t image = 0;
    int top = 0;
    int left = 0;
  };

  Crop next_position() {
    Crop c;
    c.image = rng_.below(images_->size());
    const auto& px = (*images_)[c.image].pixels;
    c.top = static_cast<int>(rng_.below(px.height() - crop_ + 1));
    c.left = static_cast<int>(rng_.below(px.width() - crop_ + 1));
    return c;
  }

  FeatureMap<float> next() { return extract(next_position()); }

  FeatureMap<float> extract(const Crop& c) const {
    const auto& px = (*images_)[c.image].pixels;
    FeatureMap<float> out(px.channels(), crop_, crop_);
    for (int ch = 0; ch < px.channels(); ++ch) {
      for (int y = 0; y < crop_; ++y) {
        std::copy_n(&px.at(ch, c.top + y, c.left), crop_, &out.at(ch, y, 0));
      }
    }
    return out;
  }

 private:
  const std::vector<NamedImage>* images_;
  int crop_;
  Rng rng_;
};

}  // namespace cbanet::train
