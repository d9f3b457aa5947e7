#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "cbanet/codec/bundle_io.hpp"
#include "cbanet/codec/pipeline.hpp"
#include "cbanet/nn/grad_check.hpp"

namespace cbanet::codec {
namespace {

namespace fs = std::filesystem;

CodecConfig small_config() {
  CodecConfig c;
  c.latent_channels = 8;
  c.cam_width = 8;
  c.bam_width = 6;
  return c;
}

FeatureMap<float> random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  FeatureMap<float> img(3, h, w);
  for (float& v : img.values()) v = static_cast<float>(rng.uniform());
  return img;
}

ModelBundle bundle_with_adapters(std::uint64_t seed = 1) {
  Rng rng(seed);
  ModelBundle b = ModelBundle::create(small_config(), rng);
  for (int q = 1; q < b.base_quality(); ++q) b.adapters.emplace(q, b.new_adapter(q, b.config.lambdas[q - 1], rng));
  return b;
}

/// Sets a gate so its output is the constant `value` everywhere.
void constant_gate(nn::Network<float>& gate, float value) {
  gate.for_each_param([](Array<float>& p) { std::fill(p.data.begin(), p.data.end(), 0.0f); });
  for (float& v : gate.layers().back().params[1].data) v = value;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cbanet_codec_" + name);
  fs::remove_all(p);
  return p;
}

std::uintmax_t total_size(const fs::path& dir) {
  std::uintmax_t n = 0;
  for (const auto& [name, size] : bundle_file_sizes(dir)) n += size;
  return n;
}

TEST(Encoder, LatentShapeFollowsStrideArithmetic) {
  Rng rng(3);
  CodecConfig c;
  const ModelBundle b = ModelBundle::create(c, rng);
  const Latent y = encode_latent(random_image(256, 256, 4), b);
  EXPECT_EQ(y.values.shape_string(), "(32, 16, 16)");
  EXPECT_EQ(y.quality_index, c.qualities);
  EXPECT_FALSE(y.quantized);
  EXPECT_THROW(encode_latent(random_image(40, 48, 4), b), Error);
}

TEST(Encoder, ZeroImageWithZeroBiasesGivesZeroLatent) {
  Rng rng(5);
  ModelBundle b = ModelBundle::create(small_config(), rng);
  for (auto& l : b.encoder.layers()) {
    if (l.spec.kind == nn::LayerKind::kConv) std::fill(l.params[1].data.begin(), l.params[1].data.end(), 0.0f);
  }
  const Latent y = encode_latent(FeatureMap<float>(3, 32, 32), b);
  for (float v : y.values.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Encoder, DeterministicAcrossRuns) {
  Rng r1(6), r2(6);
  const auto b1 = ModelBundle::create(small_config(), r1);
  const auto b2 = ModelBundle::create(small_config(), r2);
  const auto img = random_image(48, 64, 7);
  EXPECT_EQ(encode_latent(img, b1).values, encode_latent(img, b2).values);
}

TEST(Bal, BaseQualityIsIdentity) {
  const auto b = bundle_with_adapters();
  const Latent y = encode_latent(random_image(32, 32, 8), b);
  EXPECT_EQ(bal_forward(y, b.base_quality(), b).values, y.values);
  EXPECT_EQ(ibal_forward(y, b.base_quality(), b).values, y.values);
}

TEST(Bal, ConstantGateValues) {
  auto b = bundle_with_adapters();
  constant_gate(b.adapters.at(1).bal, 0.0f);
  const Latent y = encode_latent(random_image(32, 32, 9), b);
  const Latent half = bal_forward(y, 1, b);
  for (std::size_t i = 0; i < y.values.size(); ++i) EXPECT_FLOAT_EQ(half.values[i], 0.5f * y.values[i]);

  constant_gate(b.adapters.at(1).bal, std::log(3.0f));
  Latent two{FeatureMap<float>(b.config.latent_channels, 2, 2, 2.0f), b.base_quality(), false};
  const Latent quarter = bal_forward(two, 1, b);
  for (float v : quarter.values.values()) EXPECT_NEAR(v, 0.5f, 1e-6f);
}

TEST(Ibal, ConstantGateValues) {
  auto b = bundle_with_adapters();
  constant_gate(b.adapters.at(2).ibal, 0.0f);
  Latent y{FeatureMap<float>(b.config.latent_channels, 2, 3, -2.0f), 2, true};
  EXPECT_EQ(ibal_forward(y, 2, b).values, y.values);
  constant_gate(b.adapters.at(2).ibal, 0.5f);
  const Latent out = ibal_forward(y, 2, b);
  EXPECT_EQ(out.quality_index, b.base_quality());
  for (float v : out.values.values()) EXPECT_FLOAT_EQ(v, -3.0f);
}

TEST(Bam, ContractionAndExpansionKeepSigns) {
  auto b = bundle_with_adapters(11);
  Rng rng(12);
  for (auto* net : {&b.adapters.at(1).bal, &b.adapters.at(1).ibal}) {
    net->for_each_param([&](Array<float>& p) {
      for (float& v : p.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    });
  }
  const Latent y = encode_latent(random_image(64, 48, 13), b);
  const Latent c = bal_forward(y, 1, b);
  const Latent e = ibal_forward(c, 1, b);
  for (std::size_t i = 0; i < y.values.size(); ++i) {
    EXPECT_LE(std::abs(c.values[i]), std::abs(y.values[i]));
    EXPECT_GE(std::abs(e.values[i]), std::abs(c.values[i]));
    EXPECT_GE(c.values[i] * y.values[i], 0.0f);
    EXPECT_GE(e.values[i] * c.values[i], 0.0f);
  }
}

TEST(Bam, QualityErrors) {
  auto b = bundle_with_adapters();
  const Latent y = encode_latent(random_image(32, 32, 14), b);
  EXPECT_THROW(bal_forward(y, 0, b), Error);
  EXPECT_THROW(bal_forward(y, b.base_quality() + 1, b), Error);
  b.adapters.erase(1);
  EXPECT_THROW(bal_forward(y, 1, b), Error);
  Rng rng(1);
  EXPECT_THROW(b.new_adapter(b.base_quality(), 1.0, rng), Error);
}

TEST(Bam, GateGradientsMatchFiniteDifferences) {
  Rng rng(15);
  for (GateKind kind : {GateKind::kContract, GateKind::kExpand}) {
    nn::Network<double> gate(gate_specs(3, 4));
    gate.init(rng);
    gate.for_each_param([&](Array<double>& p) {
      for (double& v : p.data) v = rng.uniform(-0.8, 0.8);
    });
    FeatureMap<double> y(3, 4, 5);
    for (double& v : y.values()) v = rng.uniform(-2.0, 2.0);
    auto apply = [&](const FeatureMap<double>& in, GateTrace<double>* t) {
      return kind == GateKind::kContract ? contract_apply(gate, in, t) : expand_apply(gate, in, t);
    };
    GateTrace<double> trace;
    const auto out = apply(y, &trace);
    const auto r = nn::probe_weights(out.channels(), out.height(), out.width(), 16);
    auto grads = gate.zero_gradients();
    const auto dy = kind == GateKind::kContract
                        ? contract_backward(gate, y, trace, r, &grads, true)
                        : expand_backward(gate, y, trace, r, &grads, true);
    std::vector<std::span<double>> vars;
    std::vector<std::vector<double>> analytic;
    for (std::size_t l = 0; l < gate.layers().size(); ++l) {
      for (std::size_t p = 0; p < gate.layers()[l].params.size(); ++p) {
        vars.emplace_back(gate.layers()[l].params[p].data);
        analytic.emplace_back(grads[l][p].data.begin(), grads[l][p].data.end());
      }
    }
    vars.emplace_back(y.storage());
    analytic.emplace_back(dy.storage().begin(), dy.storage().end());
    const double err =
        nn::check_gradient(vars, analytic, [&] { return nn::dot(r, apply(y, nullptr)); }, 1e-3);
    EXPECT_LT(err, 1e-3) << (kind == GateKind::kContract ? "bal" : "ibal");
  }
}

TEST(Cam, PrefixSumsAreExact) {
  const auto b = bundle_with_adapters();
  const Latent y = entropy::quantize(encode_latent(random_image(32, 48, 17), b), entropy::QuantizeMode::kEval);
  auto branch = [&](int k) {
    auto o = b.cam[k].net.forward(y.values);
    o *= b.cam[k].gain;
    return o;
  };
  EXPECT_EQ(cam_decode(y, 1, b), branch(0));
  for (int k = 1; k < b.config.k_max; ++k) {
    auto expect = cam_decode(y, k, b);
    expect += branch(k);
    EXPECT_EQ(cam_decode(y, k + 1, b), expect);
  }
  EXPECT_THROW(cam_decode(y, 0, b), Error);
  EXPECT_THROW(cam_decode(y, b.config.k_max + 1, b), Error);
}

TEST(SelectBranches, CumulativeBudget) {
  const std::vector<double> table = {25.0, 25.0, 50.0};
  EXPECT_EQ(select_branches(100.0, table), 3);
  EXPECT_EQ(select_branches(1e9, table), 3);
  EXPECT_EQ(select_branches(30.0, table), 1);
  EXPECT_EQ(select_branches(50.0, table), 2);
  EXPECT_THROW(select_branches(10.0, table), Error);
  EXPECT_THROW(select_branches(0.0, table), Error);
}

TEST(SizeBranches, SingleBranchKeepsFullWidth) {
  CodecConfig c;
  c.k_max = 1;
  c.branch_fractions = {1.0};
  EXPECT_EQ(size_branches(c), std::vector<int>{c.cam_width});
}

TEST(SizeBranches, FractionsWithinTolerance) {
  for (int t : {32, 128}) {
    CodecConfig c;
    c.latent_channels = t;
    c.cam_width = t;
    const auto widths = size_branches(c);
    const double full = decoder_macs(c.latent_channels, t, kReferenceHeight, kReferenceWidth);
    double sum = 0.0;
    for (int k = 0; k < c.k_max; ++k) {
      const double frac = decoder_macs(c.latent_channels, widths[k], kReferenceHeight, kReferenceWidth) / full;
      EXPECT_NEAR(frac, c.branch_fractions[k], 0.02) << "T=" << t << " branch " << k;
      sum += frac;
    }
    EXPECT_NEAR(sum, 1.0, 0.02 * c.k_max);
    if (t == 128) {
      EXPECT_NEAR(widths[0], 64, 4);
    }
  }
}

TEST(Bundle, SaveLoadSaveIsByteIdentical) {
  const auto b = bundle_with_adapters(21);
  const auto d1 = temp_dir("a"), d2 = temp_dir("b");
  save_bundle(b, d1);
  const ModelBundle loaded = load_bundle(d1);
  EXPECT_EQ(loaded.encoder, b.encoder);
  EXPECT_EQ(loaded.cam, b.cam);
  EXPECT_EQ(loaded.adapters, b.adapters);
  EXPECT_EQ(loaded.base_entropy, b.base_entropy);
  save_bundle(loaded, d2);
  for (const auto& entry : fs::directory_iterator(d1)) {
    const auto name = entry.path().filename();
    EXPECT_EQ(detail::read_file(d1 / name), detail::read_file(d2 / name)) << name;
  }
}

TEST(Bundle, AdapterFilesComposeLinearly) {
  Rng rng(22);
  CodecConfig one = small_config();
  one.qualities = 1;
  one.lambdas = {};
  const auto d = temp_dir("m1");
  save_bundle(ModelBundle::create(one, rng), d);
  for (const auto& [name, size] : bundle_file_sizes(d)) EXPECT_EQ(name.rfind("adapter", 0), std::string::npos);

  auto b = bundle_with_adapters(23);
  b.adapters.clear();
  const auto d2 = temp_dir("grow");
  save_bundle(b, d2);
  const auto before = total_size(d2);
  b.adapters.emplace(1, b.new_adapter(1, b.config.lambdas[0], rng));
  save_bundle(b, d2);
  EXPECT_EQ(total_size(d2) - before, fs::file_size(d2 / adapter_file(1)));
  EXPECT_EQ(fs::file_size(d2 / adapter_file(1)), adapter_bytes(b.adapters.at(1)).size());
}

TEST(Bundle, TamperingRefusesToLoad) {
  const auto b = bundle_with_adapters(24);
  const auto d = temp_dir("tamper");
  save_bundle(b, d);
  auto bytes = detail::read_file(d / branch_file(2));
  bytes[100] ^= 1;
  detail::write_file(d / branch_file(2), bytes);
  EXPECT_THROW(load_bundle(d), Error);

  save_bundle(b, d);
  auto manifest = read_manifest(d);
  manifest["config"]["bam_width"] = 7;
  const std::string text = manifest.dump(2);
  detail::write_file(d / kManifestName, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  EXPECT_THROW(load_bundle(d), Error);
}

TEST(Pipeline, BaseQualityIgnoresAdapters) {
  const auto with = bundle_with_adapters(31);
  auto without = with;
  without.adapters.clear();
  const auto img = random_image(37, 53, 32);
  const auto s1 = encode_image(img, with.base_quality(), with);
  const auto s2 = encode_image(img, without.base_quality(), without);
  EXPECT_EQ(s1, s2);
  for (int k = 1; k <= with.config.k_max; ++k) EXPECT_EQ(decode_image(s1, k, with), decode_image(s2, k, without));
}

TEST(Pipeline, RoundTripRestoresLatentAndDims) {
  const auto b = bundle_with_adapters(33);
  const auto img = random_image(37, 53, 34);
  for (int q = 1; q <= b.base_quality(); ++q) {
    const auto stream = encode_image(img, q, b);
    const auto bs = entropy::parse_bitstream(stream);
    EXPECT_EQ(bs.header.quality_index, q);
    EXPECT_EQ(bs.header.orig_h, 37u);
    EXPECT_EQ(bs.header.latent_h, 3);
    EXPECT_EQ(bs.header.latent_w, 4);
    EXPECT_EQ(read_latent(bs, b).values, analyze(img, q, b).values);
    const auto out = decode_image(stream, b.config.k_max, b);
    EXPECT_EQ(out.height(), 37);
    EXPECT_EQ(out.width(), 53);
    EXPECT_EQ(encode_image(img, q, b), stream);
  }
  EXPECT_THROW(encode_image(img, 0, b), Error);
}

TEST(Pipeline, PaddingMirrorsEdges) {
  const auto img = random_image(5, 18, 35);
  const auto p = reflect_pad(img);
  EXPECT_EQ(p.height(), 16);
  EXPECT_EQ(p.width(), 32);
  EXPECT_EQ(p.at(1, 5, 3), img.at(1, 3, 3));
  EXPECT_EQ(p.at(2, 0, 18), img.at(2, 0, 16));
  EXPECT_EQ(crop_top_left(p, 5, 18), img);
}

}  // namespace
}  // namespace cbanet::codec
