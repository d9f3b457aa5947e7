#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "cbanet/entropy/density.hpp"
#include "cbanet/error.hpp"

namespace cbanet::entropy {

inline constexpr int kPrecisionBits = 16;
inline constexpr std::uint32_t kTotalFrequency = 1u << kPrecisionBits;

// Latent symbols are coded over [kSupportMin, kSupportMax]; anything outside
// is sent as the escape symbol followed by a flat 32-bit value.
inline constexpr int kSupportMin = -128;
inline constexpr int kSupportMax = 127;
inline constexpr int kSupportSize = kSupportMax - kSupportMin + 1;
inline constexpr int kEscapeIndex = kSupportSize;
inline constexpr int kEscapeRawBits = 32;

/// Cumulative frequency table with total 2^16. Symbol i occupies
/// [cdf[i], cdf[i+1]).
struct CdfTable {
  std::vector<std::uint32_t> cdf;

  int symbols() const { return static_cast<int>(cdf.size()) - 1; }
  std::uint32_t start(int s) const { return cdf[s]; }
  std::uint32_t frequency(int s) const { return cdf[s + 1] - cdf[s]; }
  double bits(int s) const {
    return kPrecisionBits - std::log2(static_cast<double>(frequency(s)));
  }

  /// Builds a table from per-symbol frequencies that must sum to 2^16.
  static CdfTable from_frequencies(const std::vector<std::uint32_t>& freq) {
    CdfTable t;
    t.cdf.assign(freq.size() + 1, 0);
    for (std::size_t i = 0; i < freq.size(); ++i) t.cdf[i + 1] = t.cdf[i] + freq[i];
    t.validate();
    return t;
  }

  void validate() const {
    if (cdf.size() < 2 || cdf.front() != 0 || cdf.back() != kTotalFrequency) {
      throw invalid_argument("cdf table must start at 0 and end at 2^16");
    }
    for (std::size_t i = 1; i < cdf.size(); ++i) {
      if (cdf[i] <= cdf[i - 1]) throw invalid_argument("cdf table must be strictly increasing");
    }
  }

  friend bool operator==(const CdfTable&, const CdfTable&) = default;
};

/// Quantizes a probability vector to integer frequencies summing to exactly
/// 2^16 with every symbol at least 1. Leftover counts go to the largest
/// fractional remainders, lowest index first on ties.
inline std::vector<std::uint32_t> quantize_probabilities(const std::vector<double>& probs) {
  const std::size_t n = probs.size();
  if (n == 0 || n > kTotalFrequency) throw invalid_argument("quantize_probabilities: bad size");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw invalid_argument("quantize_probabilities: bad mass");
    sum += p;
  }
  const double budget = static_cast<double>(kTotalFrequency - n);
  std::vector<std::uint32_t> freq(n);
  std::vector<double> frac(n);
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double share = sum > 0.0 ? probs[i] / sum * budget : budget / n;
    const double whole = std::floor(share);
    freq[i] = 1 + static_cast<std::uint32_t>(whole);
    frac[i] = share - whole;
    assigned += freq[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  std::size_t k = 0;
  while (assigned < kTotalFrequency) {
    ++freq[order[k++ % n]];
    ++assigned;
  }
  while (assigned > kTotalFrequency) {  // only reachable through float slop
    auto it = std::max_element(freq.begin(), freq.end());
    --*it;
    --assigned;
  }
  return freq;
}

/// Frozen per-channel tables over [kSupportMin, kSupportMax] plus the escape
/// symbol, which carries the mass of both tails.
inline std::vector<CdfTable> export_cdf(const FactorizedDensity& d) {
  std::vector<CdfTable> tables;
  tables.reserve(d.channels);
  for (int c = 0; c < d.channels; ++c) {
    std::vector<double> probs(kSupportSize + 1);
    for (int s = kSupportMin; s <= kSupportMax; ++s) probs[s - kSupportMin] = d.likelihood(c, s);
    const double tails = d.cdf(c, kSupportMin - 0.5) + (1.0 - d.cdf(c, kSupportMax + 0.5));
    probs[kEscapeIndex] = std::max(tails, 0.0);
    tables.push_back(CdfTable::from_frequencies(quantize_probabilities(probs)));
  }
  return tables;
}

inline int symbol_index(int value) {
  return value < kSupportMin || value > kSupportMax ? kEscapeIndex : value - kSupportMin;
}

/// Bits the range coder is charged for an integer latent under frozen tables;
/// escaped values pay the escape symbol plus the flat 32-bit tail.
inline double table_rate_bits(const std::vector<CdfTable>& tables, const FeatureMap<float>& y) {
  if (static_cast<int>(tables.size()) != y.channels()) {
    throw invalid_argument("table rate: channel count mismatch");
  }
  double bits = 0.0;
  for (int c = 0; c < y.channels(); ++c) {
    const float* src = y.channel(c);
    for (std::size_t i = 0; i < y.plane(); ++i) {
      const int idx = symbol_index(static_cast<int>(src[i]));
      bits += tables[c].bits(idx);
      if (idx == kEscapeIndex) bits += kEscapeRawBits;
    }
  }
  return bits;
}

/// Sum of -log2 p over a symbol sequence coded with a single table.
inline double table_rate_bits(const CdfTable& table, const std::vector<int>& symbols) {
  double bits = 0.0;
  for (int s : symbols) bits += table.bits(s);
  return bits;
}

}  // namespace cbanet::entropy
