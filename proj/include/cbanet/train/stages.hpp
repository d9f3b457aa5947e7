#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cbanet/codec/bundle_io.hpp"
#include "cbanet/entropy/quantize.hpp"
#include "cbanet/train/adam.hpp"
#include "cbanet/train/dataset.hpp"
#include "cbanet/train/loss.hpp"

namespace cbanet::train {

struct TrainConfig {
  int crop_size = 64;
  int batch_size = 8;
  double learning_rate = 1e-4;
  long base_iterations = 20000;
  long cam_iterations = 20000;
  long bam_iterations = 20000;
  // The rate drops by lr_drop_factor once this fraction of a stage is done.
  double lr_drop_at = 1.0;
  double lr_drop_factor = 0.1;
  // Global gradient L2 norm cap; 0 disables clipping.
  double grad_clip = 0.0;
  std::uint64_t seed = 1;
  long log_every = 100;

  void validate() const {
    auto fail = [](const std::string& m) { throw config_error("train config: " + m); };
    if (crop_size < codec::kDownsampling || crop_size % codec::kDownsampling != 0) {
      fail("crop_size must be a positive multiple of 16");
    }
    if (batch_size < 1) fail("batch_size must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
    if (base_iterations < 1 || cam_iterations < 1 || bam_iterations < 1) fail("iterations must be positive");
    if (!(lr_drop_at > 0.0 && lr_drop_at <= 1.0)) fail("lr_drop_at must be in (0, 1]");
    if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) fail("lr_drop_factor must be in (0, 1]");
    if (!(grad_clip >= 0.0) || !std::isfinite(grad_clip)) fail("grad_clip must be non-negative");
    if (log_every < 1) fail("log_every must be positive");
  }

  double rate_at(long it, long total) const {
    return it >= static_cast<long>(lr_drop_at * static_cast<double>(total)) ? learning_rate * lr_drop_factor
                                                                               : learning_rate;
  }
};

struct LogRow {
  long iteration = 0;
  double bpp = 0.0;  // continuous rate estimate per pixel
  double mse = 0.0;  // 255-scale
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
};

using Digests = std::map<std::string, std::string>;

inline Digests component_digests(const codec::ModelBundle& b) {
  Digests d;
  d["encoder"] = codec::digest_of(b.encoder);
  d["entropy_base"] = codec::digest_of(b.base_entropy);
  for (std::size_t k = 0; k < b.cam.size(); ++k) d["cam_k" + std::to_string(k + 1)] = codec::digest_of(b.cam[k]);
  for (const auto& [q, a] : b.adapters) d["adapter_q" + std::to_string(q)] = codec::digest_of(a);
  return d;
}

inline Digests select(const Digests& all, const std::vector<std::string>& keys) {
  Digests out;
  for (const auto& k : keys) {
    if (all.count(k)) out[k] = all.at(k);
  }
  return out;
}

struct StageReport {
  std::string stage;
  std::vector<LogRow> rows;
  Digests frozen_before;
  Digests frozen_after;
  Digests trained_after;

  bool frozen_intact() const { return frozen_before == frozen_after; }

  std::string csv() const {
    std::ostringstream os;
    os << "iteration,bpp,mse,loss,grad_norm\n" << std::setprecision(9);
    for (const auto& r : rows) {
      os << r.iteration << ',' << r.bpp << ',' << r.mse << ',' << r.loss << ',' << r.grad_norm << '\n';
    }
    return os.str();
  }

  nlohmann::json json() const {
    nlohmann::json j = {{"stage", stage},
                        {"frozen_before", frozen_before},
                        {"frozen_after", frozen_after},
                        {"frozen_intact", frozen_intact()},
                        {"trained_after", trained_after}};
    if (!rows.empty()) {
      const auto& r = rows.back();
      j["final"] = {{"iteration", r.iteration}, {"bpp", r.bpp}, {"mse", r.mse}, {"loss", r.loss}};
    }
    return j;
  }

  /// Writes <dir>/<stage>.csv and <dir>/<stage>.json; returns the JSON path.
  std::filesystem::path write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / (stage + ".csv")) << csv();
    const auto path = dir / (stage + ".json");
    std::ofstream(path) << json().dump(2) << '\n';
    return path;
  }
};

namespace detail {

struct Accumulator {
  double bits = 0.0, mse = 0.0, loss = 0.0, grad_norm = 0.0;
  long count = 0;
  void add(double b, double m, double l) {
    bits += b;
    mse += m;
    loss += l;
    ++count;
  }
};

/// Shared optimization loop: `step` fills a gradient buffer for one batch and
/// returns its per-sample metrics.
template <typename StepFn>
void optimize(const std::string& name, long iterations, const TrainConfig& cfg, double pixels, Adam& adam,
              StepFn&& step, StageReport& report) {
  Accumulator window;
  for (long it = 0; it < iterations; ++it) {
    GradientBuffer grad;
    Accumulator batch;
    try {
      step(grad, batch);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kInvalidArgument) {
        throw divergence_error(name + ": numeric failure at iteration " + std::to_string(it) + ": " + e.what());
      }
      throw;
    }
    if (!std::isfinite(batch.loss) || !grad.all_finite()) {
      throw divergence_error(name + ": loss diverged at iteration " + std::to_string(it));
    }
    const double norm = grad.norm();
    if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) grad.scale(cfg.grad_clip / norm);
    adam.step(grad.values(), cfg.rate_at(it, iterations));
    window.grad_norm += norm;
    window.bits += batch.bits / batch.count;
    window.mse += batch.mse / batch.count;
    window.loss += batch.loss / batch.count;
    ++window.count;
    if ((it + 1) % cfg.log_every == 0 || it + 1 == iterations) {
      report.rows.push_back({it + 1, window.bits / window.count / pixels, window.mse / window.count,
                             window.loss / window.count, window.grad_norm / window.count});
      window = {};
    }
  }
}

inline void add_scaled(FeatureMap<float>& acc, const FeatureMap<float>& v, float s) {
  acc.require_same_shape(v, "add_scaled");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s * v[i];
}

inline Rng stage_rng(std::uint64_t seed, std::uint64_t salt) { return Rng(seed).fork(salt); }

}  // namespace detail

/// Encoder preparation: encoder, E_base and a throwaway single decoder are
/// trained jointly at the base lambda. Only the encoder and E_base are kept.
inline StageReport train_base(codec::ModelBundle& b, const TrainConfig& cfg,
                              const std::vector<NamedImage>& images) {
  cfg.validate();
  Rng rng = detail::stage_rng(cfg.seed, 1);
  CropStream crops(images, cfg.crop_size, rng.next());
  Rng noise = rng.fork(2);
  Rng init = rng.fork(3);
  const int c = b.config.latent_channels;
  b.encoder = nn::Network<float>(codec::encoder_specs(c));
  b.encoder.init(init);
  b.base_entropy.density = entropy::FactorizedDensity::initial(c);
  nn::Network<float> decoder(codec::decoder_specs(c, b.config.cam_width));
  decoder.init(init);

  StageReport report;
  report.stage = "base";
  ParamSet params;
  params.add(b.encoder);
  params.add(decoder);
  params.add(b.base_entropy.density);
  Adam adam(std::move(params));
  const double lambda = b.config.lambda_base;
  const double pixels = double(cfg.crop_size) * cfg.crop_size;

  detail::optimize("base", cfg.base_iterations, cfg, pixels, adam, [&](GradientBuffer& grad, detail::Accumulator& m) {
    auto g_enc = b.encoder.zero_gradients();
    auto g_dec = decoder.zero_gradients();
    entropy::DensityGradients g_den(b.base_entropy.density);
    for (int s = 0; s < cfg.batch_size; ++s) {
      const FeatureMap<float> x = crops.next();
      nn::Network<float>::Trace te, td;
      const Latent y{b.encoder.forward(x, te), b.base_quality(), false};
      const Latent noisy = entropy::quantize(y, entropy::QuantizeMode::kTrain, &noise);
      FeatureMap<float> d_rate;
      const double bits = entropy::rate_bits(b.base_entropy.density, noisy.values, &d_rate, &g_den);
      const FeatureMap<float> x_hat = decoder.forward(noisy.values, td);
      const double mse = mse255(x, x_hat);
      FeatureMap<float> gy = decoder.backward(td, mse255_grad(x, x_hat, lambda), &g_dec, true);
      detail::add_scaled(gy, d_rate, static_cast<float>(1.0 / pixels));
      b.encoder.backward(te, gy, &g_enc, false);
      m.add(bits, mse, bits / pixels + lambda * mse);
    }
    const double inv = 1.0 / cfg.batch_size;
    grad.add(g_enc, inv);
    grad.add(g_dec, inv);
    grad.add(g_den, inv / pixels);
  }, report);

  b.base_entropy.freeze();
  b.adapters.clear();
  b.cam.clear();
  b.stages = {"base"};
  report.trained_after = select(component_digests(b), {"encoder", "entropy_base"});
  return report;
}

/// Progressive CAM training: branch k is fitted with branches < k (and their
/// gains) frozen, minimizing distortion of the running weighted sum.
inline std::vector<StageReport> train_cam_progressive(codec::ModelBundle& b, const TrainConfig& cfg,
                                                      const std::vector<NamedImage>& images) {
  cfg.validate();
  if (!b.has_stage("base")) throw usage_error("stage order: cam requires a trained base stage");
  Rng rng = detail::stage_rng(cfg.seed, 2);
  CropStream crops(images, cfg.crop_size, rng.next());
  Rng noise = rng.fork(2);
  Rng init = rng.fork(3);
  b.cam.clear();
  b.adapters.clear();
  b.stages = {"base"};
  const double pixels = double(cfg.crop_size) * cfg.crop_size;
  std::vector<StageReport> reports;

  for (int k = 0; k < b.config.k_max; ++k) {
    b.cam.push_back(codec::ModelBundle::new_branch(b.config, b.branch_widths[k], k, init));
    std::vector<std::string> frozen_keys = {"encoder", "entropy_base"};
    for (int i = 0; i < k; ++i) frozen_keys.push_back("cam_k" + std::to_string(i + 1));
    StageReport report;
    report.stage = "cam_k" + std::to_string(k + 1);
    report.frozen_before = select(component_digests(b), frozen_keys);

    codec::CamBranch& branch = b.cam[k];
    ParamSet params;
    params.add(branch.net);
    params.add(branch.gain);
    Adam adam(std::move(params));

    detail::optimize(report.stage, cfg.cam_iterations, cfg, pixels, adam,
                     [&](GradientBuffer& grad, detail::Accumulator& m) {
      auto g_net = branch.net.zero_gradients();
      double g_gain = 0.0;
      for (int s = 0; s < cfg.batch_size; ++s) {
        const FeatureMap<float> x = crops.next();
        const Latent y{b.encoder.forward(x), b.base_quality(), false};
        const Latent noisy = entropy::quantize(y, entropy::QuantizeMode::kTrain, &noise);
        nn::Network<float>::Trace t;
        const FeatureMap<float> out = branch.net.forward(noisy.values, t);
        FeatureMap<float> x_hat = k > 0 ? codec::cam_decode(noisy, k, b) : FeatureMap<float>(out.channels(), out.height(), out.width());
        detail::add_scaled(x_hat, out, branch.gain);
        const double mse = mse255(x, x_hat);
        const FeatureMap<float> g = mse255_grad(x, x_hat);
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += double(g[i]) * out[i];
        g_gain += dot;
        FeatureMap<float> g_out = g;
        g_out *= branch.gain;
        branch.net.backward(t, g_out, &g_net, false);
        m.add(entropy::rate_bits(b.base_entropy.density, noisy.values), mse, mse);
      }
      const double inv = 1.0 / cfg.batch_size;
      grad.add(g_net, inv);
      grad.add(g_gain * inv);
    }, report);

    const Digests after = component_digests(b);
    report.frozen_after = select(after, frozen_keys);
    report.trained_after = select(after, {"cam_k" + std::to_string(k + 1)});
    if (!report.frozen_intact()) throw std::logic_error(report.stage + ": frozen parameters changed");
    reports.push_back(std::move(report));
  }
  b.mark_stage("cam");
  return reports;
}

/// One BAM adapter for quality j: BAL, IBAL and E_j are trained against the
/// frozen encoder and the full CAM (all K_max branches).
inline StageReport train_bam(codec::ModelBundle& b, const TrainConfig& cfg, const std::vector<NamedImage>& images,
                             int quality, double lambda) {
  cfg.validate();
  if (!b.has_stage("cam")) throw usage_error("stage order: bam requires a trained cam stage");
  b.check_quality(quality);
  if (quality == b.base_quality()) throw invalid_argument("the base quality has no adapter to train");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw invalid_argument("lambda must be positive");
  Rng rng = detail::stage_rng(cfg.seed, 100 + static_cast<std::uint64_t>(quality));
  CropStream crops(images, cfg.crop_size, rng.next());
  Rng noise = rng.fork(2);
  Rng init = rng.fork(3);

  b.adapters.erase(quality);
  StageReport report;
  report.stage = "bam_q" + std::to_string(quality);
  std::vector<std::string> frozen_keys = {"encoder", "entropy_base"};
  for (int k = 0; k < b.config.k_max; ++k) frozen_keys.push_back("cam_k" + std::to_string(k + 1));
  for (const auto& [q, a] : b.adapters) frozen_keys.push_back("adapter_q" + std::to_string(q));
  report.frozen_before = select(component_digests(b), frozen_keys);

  codec::BamAdapter adapter = b.new_adapter(quality, lambda, init);
  ParamSet params;
  params.add(adapter.bal);
  params.add(adapter.ibal);
  params.add(adapter.entropy.density);
  Adam adam(std::move(params));
  const double pixels = double(cfg.crop_size) * cfg.crop_size;

  detail::optimize(report.stage, cfg.bam_iterations, cfg, pixels, adam, [&](GradientBuffer& grad, detail::Accumulator& m) {
    auto g_bal = adapter.bal.zero_gradients();
    auto g_ibal = adapter.ibal.zero_gradients();
    entropy::DensityGradients g_den(adapter.entropy.density);
    for (int s = 0; s < cfg.batch_size; ++s) {
      const FeatureMap<float> x = crops.next();
      const FeatureMap<float> y = b.encoder.forward(x);
      codec::GateTrace<float> tb, ti;
      const Latent yj{codec::contract_apply(adapter.bal, y, &tb), quality, false};
      const Latent noisy = entropy::quantize(yj, entropy::QuantizeMode::kTrain, &noise);
      FeatureMap<float> d_rate;
      const double bits = entropy::rate_bits(adapter.entropy.density, noisy.values, &d_rate, &g_den);
      const FeatureMap<float> yb = codec::expand_apply(adapter.ibal, noisy.values, &ti);
      std::vector<nn::Network<float>::Trace> traces(b.cam.size());
      FeatureMap<float> x_hat;
      for (std::size_t k = 0; k < b.cam.size(); ++k) {
        FeatureMap<float> part = b.cam[k].net.forward(yb, traces[k]);
        part *= b.cam[k].gain;
        if (k == 0) x_hat = std::move(part); else x_hat += part;
      }
      const double mse = mse255(x, x_hat);
      const FeatureMap<float> g = mse255_grad(x, x_hat, lambda);
      FeatureMap<float> g_yb(yb.channels(), yb.height(), yb.width());
      for (std::size_t k = 0; k < b.cam.size(); ++k) {
        FeatureMap<float> gk = g;
        gk *= b.cam[k].gain;
        g_yb += b.cam[k].net.backward(traces[k], gk, nullptr, true);
      }
      FeatureMap<float> g_noisy = codec::expand_backward(adapter.ibal, noisy.values, ti, g_yb, &g_ibal, true);
      detail::add_scaled(g_noisy, d_rate, static_cast<float>(1.0 / pixels));
      codec::contract_backward(adapter.bal, y, tb, g_noisy, &g_bal, false);
      m.add(bits, mse, bits / pixels + lambda * mse);
    }
    const double inv = 1.0 / cfg.batch_size;
    grad.add(g_bal, inv);
    grad.add(g_ibal, inv);
    grad.add(g_den, inv / pixels);
  }, report);

  adapter.entropy.freeze();
  b.adapters[quality] = std::move(adapter);
  b.mark_stage("bam");
  const Digests after = component_digests(b);
  report.frozen_after = select(after, frozen_keys);
  report.trained_after = select(after, {"adapter_q" + std::to_string(quality)});
  if (!report.frozen_intact()) throw std::logic_error(report.stage + ": frozen parameters changed");
  return report;
}

}  // namespace cbanet::train
