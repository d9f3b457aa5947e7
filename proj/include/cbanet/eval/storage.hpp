#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "cbanet/codec/model.hpp"
#include "cbanet/entropy/density.hpp"
#include "cbanet/eval/flops.hpp"

namespace cbanet::eval {

inline std::size_t entropy_params(int channels) {
  return 3 * static_cast<std::size_t>(channels) * entropy::kMixtureComponents;
}

/// One BAL plus one IBAL gate.
inline std::size_t gate_pair_params(int channels, int width) {
  return 2 * count_params(codec::gate_specs(channels, width));
}

/// Parameter counts that the storage tables are built from.
struct StorageCounts {
  std::size_t base = 0;     // encoder + all CAM branches and gains + base entropy model
  std::size_t adapter = 0;  // BAL + IBAL + per-bitrate entropy model
  // Stand-alone model per complexity level: encoder, entropy model and one
  // plain decoder with the cumulative FLOPs of the first k branches.
  std::vector<std::size_t> level_models;
};

inline StorageCounts storage_counts(const codec::CodecConfig& cfg, const std::vector<int>& branch_widths) {
  const int c = cfg.latent_channels;
  const std::size_t shared = count_params(codec::encoder_specs(c)) + entropy_params(c);
  StorageCounts s;
  s.base = shared;
  for (int w : branch_widths) s.base += count_params(codec::decoder_specs(c, w)) + 1;
  s.adapter = gate_pair_params(c, cfg.bam_width) + entropy_params(c);

  const int lh = codec::kReferenceHeight / codec::kDownsampling, lw = codec::kReferenceWidth / codec::kDownsampling;
  auto cost = [&](int w) { return count_macs(codec::decoder_specs(c, w), lh, lw); };
  double target = 0.0;
  for (int w : branch_widths) {
    target += cost(w);
    int lo = 1, hi = 4 * std::accumulate(branch_widths.begin(), branch_widths.end(), 0);
    while (lo < hi) {
      const int mid = lo + (hi - lo) / 2;
      if (cost(mid) >= target) hi = mid; else lo = mid + 1;
    }
    s.level_models.push_back(shared + count_params(codec::decoder_specs(c, lo)));
  }
  return s;
}

inline StorageCounts storage_counts(const codec::ModelBundle& b) { return storage_counts(b.config, b.branch_widths); }

struct StorageRow {
  int bitrates = 0;
  double single_model = 0.0;  // base + adapter * (n - 1)
  double multi_model = 0.0;   // one model per (bitrate, level)
};

/// Rows for n = 1..n_bitrates from raw counts; `multi_per_bitrate` is the
/// summed size of the per-level baselines.
inline std::vector<StorageRow> storage_table(double base, double adapter, double multi_per_bitrate, int n_bitrates) {
  if (n_bitrates < 1) throw invalid_argument("storage_table: n_bitrates must be positive");
  std::vector<StorageRow> rows;
  for (int n = 1; n <= n_bitrates; ++n) rows.push_back({n, base + adapter * (n - 1), multi_per_bitrate * n});
  return rows;
}

inline std::vector<StorageRow> storage_report(const codec::ModelBundle& b, int n_bitrates, int n_levels) {
  const auto s = storage_counts(b);
  if (n_levels < 1 || n_levels > static_cast<int>(s.level_models.size())) {
    throw invalid_argument("storage_report: n_levels must be in 1.." + std::to_string(s.level_models.size()));
  }
  const double multi = std::accumulate(s.level_models.begin(), s.level_models.begin() + n_levels, 0.0);
  return storage_table(static_cast<double>(s.base), static_cast<double>(s.adapter), multi, n_bitrates);
}

}  // namespace cbanet::eval
