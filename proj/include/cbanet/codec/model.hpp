#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cbanet/codec/gate.hpp"
#include "cbanet/entropy/cdf.hpp"
#include "cbanet/entropy/density.hpp"
#include "cbanet/eval/flops.hpp"
#include "cbanet/latent.hpp"
#include "cbanet/nn/network.hpp"

namespace cbanet::codec {

inline constexpr int kDownsampling = 16;
inline constexpr int kKernel = 5;
inline constexpr int kImageChannels = 3;
// FLOPs tables in the manifest are quoted at this output resolution.
inline constexpr int kReferenceWidth = 768;
inline constexpr int kReferenceHeight = 512;

struct CodecConfig {
  int latent_channels = 32;
  int cam_width = 32;  // width of the single-branch reference decoder
  int bam_width = 48;
  int k_max = 3;
  int qualities = 3;
  double lambda_base = 8192.0 / 65025.0;
  std::vector<double> lambdas = {2048.0 / 65025.0, 4096.0 / 65025.0};
  std::vector<double> branch_fractions = {0.25, 0.25, 0.50};

  void validate() const {
    auto fail = [](const std::string& m) { throw config_error("codec config: " + m); };
    if (latent_channels < 1 || cam_width < 1 || bam_width < 1) fail("channel widths must be positive");
    if (latent_channels > 65535) fail("latent_channels does not fit the bitstream header");
    if (k_max < 1) fail("k_max must be at least 1");
    if (qualities < 1 || qualities > 255) fail("qualities must be in 1..255");
    if (!(lambda_base > 0.0) || !std::isfinite(lambda_base)) fail("lambda_base must be positive");
    if (static_cast<int>(lambdas.size()) != qualities - 1) {
      fail("lambdas needs qualities - 1 = " + std::to_string(qualities - 1) + " entries");
    }
    double prev = 0.0;
    for (double l : lambdas) {
      if (!(l > prev) || !std::isfinite(l)) fail("lambdas must be positive and strictly increasing");
      prev = l;
    }
    if (!lambdas.empty() && !(lambdas.back() < lambda_base)) fail("lambdas must stay below lambda_base");
    if (static_cast<int>(branch_fractions.size()) != k_max) fail("branch_fractions needs k_max entries");
    double sum = 0.0;
    for (double f : branch_fractions) {
      if (!(f > 0.0)) fail("branch_fractions must be positive");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) fail("branch_fractions must sum to 1");
  }

  double lambda_for(int quality) const {
    return quality == qualities ? lambda_base : lambdas.at(quality - 1);
  }

  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

inline std::vector<nn::LayerSpec> encoder_specs(int channels) {
  using nn::LayerSpec;
  return {LayerSpec::conv(kImageChannels, channels, kKernel, 2), LayerSpec::gdn(channels),
          LayerSpec::conv(channels, channels, kKernel, 2),       LayerSpec::gdn(channels),
          LayerSpec::conv(channels, channels, kKernel, 2),       LayerSpec::gdn(channels),
          LayerSpec::conv(channels, channels, kKernel, 2)};
}

/// Four stride-2 deconvs with IGDN between; one CAM branch or the scratch decoder.
inline std::vector<nn::LayerSpec> decoder_specs(int channels, int width) {
  using nn::LayerSpec;
  return {LayerSpec::deconv(channels, width, kKernel), LayerSpec::igdn(width),
          LayerSpec::deconv(width, width, kKernel),    LayerSpec::igdn(width),
          LayerSpec::deconv(width, width, kKernel),    LayerSpec::igdn(width),
          LayerSpec::deconv(width, kImageChannels, kKernel)};
}

inline double decoder_macs(int channels, int width, int out_h, int out_w) {
  return eval::count_macs(decoder_specs(channels, width), out_h / kDownsampling,
                          out_w / kDownsampling);
}

/// Width per branch so that its FLOPs match its fraction of the reference
/// decoder; the last branch takes whatever share the others left.
inline std::vector<int> size_branches(const CodecConfig& cfg) {
  const int lh = kReferenceHeight / kDownsampling, lw = kReferenceWidth / kDownsampling;
  auto cost = [&](int w) { return eval::count_macs(decoder_specs(cfg.latent_channels, w), lh, lw); };
  const double full = cost(cfg.cam_width);
  std::vector<int> widths;
  double used = 0.0;
  for (int k = 0; k < cfg.k_max; ++k) {
    const double target = (k + 1 < cfg.k_max ? cfg.branch_fractions[k] : 1.0 - used) * full;
    int lo = 1, hi = 4 * cfg.cam_width;
    while (lo < hi) {  // smallest width reaching the target
      const int mid = lo + (hi - lo) / 2;
      if (cost(mid) >= target) hi = mid; else lo = mid + 1;
    }
    if (lo > 1 && std::abs(cost(lo - 1) - target) <= std::abs(cost(lo) - target)) --lo;
    widths.push_back(lo);
    used += cost(lo) / full;
  }
  return widths;
}

/// Largest K whose cumulative branch cost fits in the budget.
inline int select_branches(double budget_flops, const std::vector<double>& branch_flops) {
  if (!(budget_flops > 0.0)) throw invalid_argument("select_branches: budget must be positive");
  if (branch_flops.empty()) throw invalid_argument("select_branches: empty FLOPs table");
  double cumulative = 0.0;
  int k = 0;
  for (double f : branch_flops) {
    if (cumulative + f > budget_flops) break;
    cumulative += f;
    ++k;
  }
  if (k == 0) throw invalid_argument("budget infeasible: branch 1 alone needs more than the budget");
  return k;
}

struct EntropyModel {
  entropy::FactorizedDensity density;
  std::vector<entropy::CdfTable> tables;

  void freeze() { tables = entropy::export_cdf(density); }
  friend bool operator==(const EntropyModel&, const EntropyModel&) = default;
};

struct CamBranch {
  nn::Network<float> net;
  float gain = 1.0f;
  friend bool operator==(const CamBranch&, const CamBranch&) = default;
};

struct BamAdapter {
  double lambda = 0.0;
  nn::Network<float> bal;
  nn::Network<float> ibal;
  EntropyModel entropy;
  friend bool operator==(const BamAdapter&, const BamAdapter&) = default;
};

inline constexpr float kFirstBranchGain = 1.0f;
inline constexpr float kLaterBranchGain = 0.1f;

/// Everything one deployable codec needs. Quality index `config.qualities`
/// is the base bitrate and never has an adapter.
struct ModelBundle {
  CodecConfig config;
  std::vector<int> branch_widths;
  nn::Network<float> encoder;
  EntropyModel base_entropy;
  std::vector<CamBranch> cam;
  std::map<int, BamAdapter> adapters;
  std::vector<std::string> stages;

  static ModelBundle create(const CodecConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelBundle b;
    b.config = cfg;
    b.branch_widths = size_branches(cfg);
    b.encoder = nn::Network<float>(encoder_specs(cfg.latent_channels));
    Rng enc_rng = rng.fork(1);
    b.encoder.init(enc_rng);
    b.base_entropy.density = entropy::FactorizedDensity::initial(cfg.latent_channels);
    b.base_entropy.freeze();
    for (int k = 0; k < cfg.k_max; ++k) b.cam.push_back(new_branch(cfg, b.branch_widths[k], k, rng));
    return b;
  }

  static CamBranch new_branch(const CodecConfig& cfg, int width, int k, Rng& rng) {
    CamBranch br{nn::Network<float>(decoder_specs(cfg.latent_channels, width)),
                 k == 0 ? kFirstBranchGain : kLaterBranchGain};
    Rng r = rng.fork(100 + k);
    br.net.init(r);
    return br;
  }

  /// Fresh adapter for quality j: near-identity gates and a copy of the base prior.
  BamAdapter new_adapter(int quality, double lambda, Rng& rng) const {
    check_quality(quality);
    if (quality == base_quality()) throw invalid_argument("the base quality has no adapter");
    BamAdapter a;
    a.lambda = lambda;
    a.bal = nn::Network<float>(gate_specs(config.latent_channels, config.bam_width));
    a.ibal = nn::Network<float>(gate_specs(config.latent_channels, config.bam_width));
    Rng r = rng.fork(1000 + quality);
    init_gate(a.bal, GateKind::kContract, r);
    init_gate(a.ibal, GateKind::kExpand, r);
    a.entropy = base_entropy;
    return a;
  }

  int base_quality() const { return config.qualities; }

  bool has_stage(const std::string& name) const {
    return std::find(stages.begin(), stages.end(), name) != stages.end();
  }
  void mark_stage(const std::string& name) {
    if (!has_stage(name)) stages.push_back(name);
  }

  void check_quality(int quality) const {
    if (quality < 1 || quality > config.qualities) {
      throw invalid_argument("quality index " + std::to_string(quality) +
                             " outside supported range 1.." + std::to_string(config.qualities));
    }
  }

  const BamAdapter& adapter(int quality) const {
    check_quality(quality);
    const auto it = adapters.find(quality);
    if (it == adapters.end()) {
      throw invalid_argument("no adapter installed for quality " + std::to_string(quality));
    }
    return it->second;
  }

  const EntropyModel& entropy_for(int quality) const {
    check_quality(quality);
    return quality == base_quality() ? base_entropy : adapter(quality).entropy;
  }

  /// MACs of each CAM branch when decoding to an (out_h, out_w) image.
  std::vector<double> branch_flops(int out_h, int out_w) const {
    std::vector<double> out;
    for (int w : branch_widths) out.push_back(decoder_macs(config.latent_channels, w, out_h, out_w));
    return out;
  }

  /// MACs of one BAL + IBAL pair for an (out_h, out_w) image.
  double bam_flops(int out_h, int out_w) const {
    return 2.0 * eval::count_macs(gate_specs(config.latent_channels, config.bam_width),
                                  out_h / kDownsampling, out_w / kDownsampling);
  }
};

/// Base latent y^b of an image already padded to multiples of 16.
inline Latent encode_latent(const FeatureMap<float>& image, const ModelBundle& b) {
  if (image.channels() != kImageChannels) throw invalid_argument("encode: image must have 3 channels");
  if (image.height() % kDownsampling != 0 || image.width() % kDownsampling != 0) {
    throw invalid_argument("encode: image dims " + image.shape_string() +
                           " are not multiples of 16; pad first");
  }
  return Latent{b.encoder.forward(image), b.base_quality(), false};
}

inline Latent bal_forward(const Latent& y, int quality, const ModelBundle& b) {
  b.check_quality(quality);
  if (y.quality_index != b.base_quality() || y.quantized) {
    throw invalid_argument("bal: expects an unquantized base latent");
  }
  if (quality == b.base_quality()) return y;
  return Latent{contract_apply(b.adapter(quality).bal, y.values), quality, false};
}

inline Latent ibal_forward(const Latent& y, int quality, const ModelBundle& b) {
  b.check_quality(quality);
  if (y.quality_index != quality) throw invalid_argument("ibal: latent quality does not match");
  if (quality == b.base_quality()) return y;
  return Latent{expand_apply(b.adapter(quality).ibal, y.values), b.base_quality(), y.quantized};
}

/// Weighted sum of the first K branch outputs, accumulated in branch order.
inline FeatureMap<float> cam_decode(const Latent& y, int branches, const ModelBundle& b) {
  if (branches < 1 || branches > b.config.k_max) {
    throw invalid_argument("branch count " + std::to_string(branches) + " outside 1.." +
                           std::to_string(b.config.k_max));
  }
  if (static_cast<int>(b.cam.size()) < branches) throw invalid_argument("CAM is not trained");
  if (y.quality_index != b.base_quality()) throw invalid_argument("cam: expects a base-quality latent");
  FeatureMap<float> out;
  for (int k = 0; k < branches; ++k) {
    FeatureMap<float> part = b.cam[k].net.forward(y.values);
    part *= b.cam[k].gain;
    if (k == 0) out = std::move(part); else out += part;
  }
  return out;
}

}  // namespace cbanet::codec
