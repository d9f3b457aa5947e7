#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "cbanet/error.hpp"

namespace cbanet::entropy {

inline constexpr std::array<std::uint8_t, 4> kMagic = {'C', 'B', 'A', 'N'};
inline constexpr std::uint8_t kBitstreamVersion = 1;
inline constexpr std::size_t kHeaderBytes = 25;

/// `.cba` header; every multi-byte field is little-endian.
///   magic[4] version u8 quality u8 flags u8 orig_h u32 orig_w u32
///   latent_c u16 latent_h u16 latent_w u16 payload_len u32
struct BitstreamHeader {
  std::uint8_t version = kBitstreamVersion;
  std::uint8_t quality_index = 0;
  std::uint8_t flags = 0;
  std::uint32_t orig_h = 0;
  std::uint32_t orig_w = 0;
  std::uint16_t latent_c = 0;
  std::uint16_t latent_h = 0;
  std::uint16_t latent_w = 0;
  std::uint32_t payload_len = 0;

  friend bool operator==(const BitstreamHeader&, const BitstreamHeader&) = default;
};

struct Bitstream {
  BitstreamHeader header;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const Bitstream&, const Bitstream&) = default;
};

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in[pos++]) << (8 * i));
  return v;
}

}  // namespace detail

/// payload_len is taken from the payload, not from the header argument.
inline std::vector<std::uint8_t> pack_bitstream(BitstreamHeader header,
                                                std::span<const std::uint8_t> payload) {
  if (payload.size() > UINT32_MAX) throw invalid_argument("pack_bitstream: payload too large");
  header.payload_len = static_cast<std::uint32_t>(payload.size());
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  out.reserve(kHeaderBytes + payload.size());
  out.push_back(header.version);
  out.push_back(header.quality_index);
  out.push_back(header.flags);
  detail::put_le(out, header.orig_h);
  detail::put_le(out, header.orig_w);
  detail::put_le(out, header.latent_c);
  detail::put_le(out, header.latent_h);
  detail::put_le(out, header.latent_w);
  detail::put_le(out, header.payload_len);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline Bitstream parse_bitstream(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw data_error("bitstream: shorter than header");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw data_error("bitstream: bad magic");
  }
  Bitstream bs;
  std::size_t pos = kMagic.size();
  bs.header.version = bytes[pos++];
  if (bs.header.version != kBitstreamVersion) {
    throw data_error("bitstream: unsupported version " + std::to_string(bs.header.version));
  }
  bs.header.quality_index = bytes[pos++];
  bs.header.flags = bytes[pos++];
  if (bs.header.flags != 0) throw data_error("bitstream: unsupported flags");
  bs.header.orig_h = detail::get_le<std::uint32_t>(bytes, pos);
  bs.header.orig_w = detail::get_le<std::uint32_t>(bytes, pos);
  bs.header.latent_c = detail::get_le<std::uint16_t>(bytes, pos);
  bs.header.latent_h = detail::get_le<std::uint16_t>(bytes, pos);
  bs.header.latent_w = detail::get_le<std::uint16_t>(bytes, pos);
  bs.header.payload_len = detail::get_le<std::uint32_t>(bytes, pos);
  if (bytes.size() - kHeaderBytes != bs.header.payload_len) {
    throw data_error("bitstream: payload length " + std::to_string(bytes.size() - kHeaderBytes) +
                     " does not match header " + std::to_string(bs.header.payload_len));
  }
  bs.payload.assign(bytes.begin() + kHeaderBytes, bytes.end());
  return bs;
}

}  // namespace cbanet::entropy
