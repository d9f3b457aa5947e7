#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "cbanet/tensor.hpp"

namespace cbanet {

/// FNV-1a 64-bit, used to fingerprint parameter sets and files.
class Digest {
 public:
  void bytes(std::span<const std::uint8_t> data) {
    for (std::uint8_t b : data) {
      state_ ^= b;
      state_ *= 0x100000001B3ULL;
    }
  }
  void u32(std::uint32_t v) {
    const std::uint8_t b[4] = {std::uint8_t(v), std::uint8_t(v >> 8), std::uint8_t(v >> 16),
                               std::uint8_t(v >> 24)};
    bytes(b);
  }
  void floats(std::span<const float> v) {
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
  }
  void array(const Array<float>& a) {
    u32(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) u32(static_cast<std::uint32_t>(d));
    floats(a.data);
  }

  std::uint64_t value() const { return state_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::string digest_hex(std::span<const std::uint8_t> data) {
  Digest d;
  d.bytes(data);
  return d.hex();
}

}  // namespace cbanet
