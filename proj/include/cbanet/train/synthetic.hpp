#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "cbanet/codec/pipeline.hpp"
#include "cbanet/io/png.hpp"
#include "cbanet/rng.hpp"

namespace cbanet::train {

/// Smooth colour field: a few low-frequency waves per channel plus two
/// soft-edged discs. Stands in for natural images in desk-scale runs.
inline FeatureMap<float> synthetic_image(int height, int width, Rng& rng) {
  FeatureMap<float> img(3, height, width);
  const double two_pi = 2.0 * std::numbers::pi;
  const double size = std::max(height, width);
  for (int c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.3, 0.7);
    double fx[3], fy[3], amp[3], phase[3];
    for (int n = 0; n < 3; ++n) {
      fx[n] = rng.uniform(-2.5, 2.5);
      fy[n] = rng.uniform(-2.5, 2.5);
      amp[n] = rng.uniform(0.05, 0.15);
      phase[n] = rng.uniform(0.0, two_pi);
    }
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double v = base;
        for (int n = 0; n < 3; ++n) v += amp[n] * std::sin(two_pi * (fx[n] * x + fy[n] * y) / size + phase[n]);
        img.at(c, y, x) = static_cast<float>(v);
      }
    }
  }
  for (int d = 0; d < 2; ++d) {
    const double cy = rng.uniform(0.0, height), cx = rng.uniform(0.0, width);
    const double radius = rng.uniform(0.15, 0.35) * size;
    const double soft = rng.uniform(2.0, 6.0);
    double colour[3];
    for (double& v : colour) v = rng.uniform(0.1, 0.9);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double r = std::hypot(y - cy, x - cx);
        const double a = 0.6 / (1.0 + std::exp((r - radius) / soft));
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>((1.0 - a) * img.at(c, y, x) + a * colour[c]);
      }
    }
  }
  for (float& v : img.values()) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

/// Writes `count` synthetic PNGs named img_000.png, img_001.png, ...
inline void write_synthetic_dataset(const std::filesystem::path& dir, int count, int height, int width,
                                    std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03d.png", i);
    io::write_png(dir / name, codec::to_8bit(synthetic_image(height, width, rng)));
  }
}

}  // namespace cbanet::train
