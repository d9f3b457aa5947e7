#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cbanet/error.hpp"

namespace cbanet {

/// 64-byte aligned storage. Eigen picks its vectorization path from the
/// buffer address, so equal alignment everywhere keeps results bit-identical.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense [channel][row][col] activation map.
template <typename T>
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int channels, int height, int width, T fill = T(0))
      : channels_(channels), height_(height), width_(width) {
    if (channels <= 0 || height <= 0 || width <= 0) {
      throw invalid_argument("FeatureMap: dims must be positive, got " +
                             shape_string(channels, height, width));
    }
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
  }
  FeatureMap(int channels, int height, int width, const std::vector<T>& data)
      : FeatureMap(channels, height, width) {
    if (data.size() != data_.size()) {
      throw invalid_argument("FeatureMap: data size does not match dims");
    }
    std::copy(data.begin(), data.end(), data_.begin());
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  const T& at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T* channel(int c) { return data_.data() + c * plane(); }
  const T* channel(int c) const { return data_.data() + c * plane(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  AlignedVector<T>& storage() { return data_; }
  const AlignedVector<T>& storage() const { return data_; }

  bool same_shape(const FeatureMap& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }
  std::string shape_string() const { return shape_string(channels_, height_, width_); }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  FeatureMap<U> cast() const {
    FeatureMap<U> out(channels_, height_, width_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  FeatureMap& operator+=(const FeatureMap& o) {
    require_same_shape(o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  FeatureMap& operator*=(T s) {
    for (T& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const FeatureMap& o, const char* where) const {
    if (!same_shape(o)) {
      throw invalid_argument(std::string(where) + ": shape mismatch " + shape_string() +
                             " vs " + o.shape_string());
    }
  }

  friend bool operator==(const FeatureMap& a, const FeatureMap& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

  static std::string shape_string(int c, int h, int w) {
    return "(" + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) + ")";
  }

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  AlignedVector<T> data_;
};

/// Parameter storage: flat values plus a shape. Serialized as-is into bundles.
template <typename T>
struct Array {
  std::vector<std::size_t> shape;
  AlignedVector<T> data;

  Array() = default;
  explicit Array(std::vector<std::size_t> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(element_count(shape), fill);
  }

  std::size_t size() const { return data.size(); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  template <typename U>
  Array<U> cast() const {
    Array<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  friend bool operator==(const Array& a, const Array& b) {
    return a.shape == b.shape && a.data == b.data;
  }
};

}  // namespace cbanet
