#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbanet/entropy/cdf.hpp"

namespace cbanet::entropy {

/// 32-bit range encoder over 16-bit frequency tables. Bytes are emitted
/// big-endian from the top of `low`; carries propagate into already-written
/// output. finish() flushes the 4 bytes of `low`, so the stream costs at most
/// the information content plus 32 bits plus per-symbol truncation loss.
class RangeEncoder {
 public:
  void encode(std::uint32_t start, std::uint32_t frequency) {
    const std::uint32_t r = range_ >> kPrecisionBits;
    low_ += static_cast<std::uint64_t>(r) * start;
    range_ = r * frequency;
    if (low_ >> 32) {
      propagate_carry();
      low_ &= 0xFFFFFFFFu;
    }
    while (range_ < kTop) {
      out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
      low_ = (low_ << 8) & 0xFFFFFFFFu;
      range_ <<= 8;
    }
  }

  void encode_symbol(int symbol, const CdfTable& table) {
    if (symbol < 0 || symbol >= table.symbols()) {
      throw invalid_argument("range_encode: symbol " + std::to_string(symbol) +
                             " outside table support");
    }
    encode(table.start(symbol), table.frequency(symbol));
  }

  /// A 16-bit value under the flat distribution.
  void encode_raw16(std::uint32_t value) { encode(value & 0xFFFFu, 1); }

  std::vector<std::uint8_t> finish() {
    for (int shift = 24; shift >= 0; shift -= 8) {
      out_.push_back(static_cast<std::uint8_t>(low_ >> shift));
    }
    std::vector<std::uint8_t> out = std::move(out_);
    out_.clear();
    low_ = 0;
    range_ = 0xFFFFFFFFu;
    return out;
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  void propagate_carry() {
    std::size_t i = out_.size();
    while (i > 0 && out_[i - 1] == 0xFF) out_[--i] = 0;
    if (i == 0) throw std::logic_error("range coder: carry past start of stream");
    ++out_[i - 1];
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
    if (bytes_.size() < 4) throw data_error("range_decode: truncated payload");
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | bytes_[pos_++];
  }

  std::uint32_t decode_frequency_slot() {
    r_ = range_ >> kPrecisionBits;
    const std::uint32_t slot = code_ / r_;
    if (slot >= kTotalFrequency) throw data_error("range_decode: corrupt payload");
    return slot;
  }

  void consume(std::uint32_t start, std::uint32_t frequency) {
    code_ -= r_ * start;
    range_ = r_ * frequency;
    while (range_ < kTop) {
      if (pos_ >= bytes_.size()) throw data_error("range_decode: truncated payload");
      code_ = (code_ << 8) | bytes_[pos_++];
      range_ <<= 8;
    }
  }

  int decode_symbol(const CdfTable& table) {
    const std::uint32_t slot = decode_frequency_slot();
    const auto it = std::upper_bound(table.cdf.begin(), table.cdf.end(), slot);
    const int symbol = static_cast<int>(it - table.cdf.begin()) - 1;
    if (symbol < 0 || symbol >= table.symbols()) throw data_error("range_decode: corrupt payload");
    consume(table.start(symbol), table.frequency(symbol));
    return symbol;
  }

  std::uint32_t decode_raw16() {
    const std::uint32_t slot = decode_frequency_slot();
    consume(slot, 1);
    return slot;
  }

  /// Every byte must have been consumed by the time the last symbol is read.
  void finish() const {
    if (pos_ != bytes_.size()) throw data_error("range_decode: trailing bytes after payload");
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t r_ = 0;
};

inline std::vector<std::uint8_t> range_encode(std::span<const int> symbols, const CdfTable& table) {
  RangeEncoder enc;
  for (int s : symbols) enc.encode_symbol(s, table);
  return enc.finish();
}

inline std::vector<int> range_decode(std::span<const std::uint8_t> bytes, const CdfTable& table,
                                     std::size_t n) {
  RangeDecoder dec(bytes);
  std::vector<int> out(n);
  for (auto& s : out) s = dec.decode_symbol(table);
  dec.finish();
  return out;
}

}  // namespace cbanet::entropy
