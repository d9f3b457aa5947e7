#pragma once

#include <bit>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "cbanet/codec/model.hpp"
#include "cbanet/digest.hpp"

namespace cbanet::codec {

inline constexpr int kBundleFormatVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kEncoderFile = "encoder.bin";
inline constexpr const char* kBaseEntropyFile = "entropy_base.bin";

inline std::string branch_file(int k) { return "cam_k" + std::to_string(k) + ".bin"; }
inline std::string adapter_file(int quality) { return "adapter_q" + std::to_string(quality) + ".bin"; }

namespace detail {

/// Parameter files are a sequence of records: u32 rank, u32 dims, then
/// little-endian f32 values.
class RecordWriter {
 public:
  void array(const Array<float>& a) {
    u32(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) u32(static_cast<std::uint32_t>(d));
    for (float f : a.data) u32(std::bit_cast<std::uint32_t>(f));
  }
  void scalar(float v) {
    Array<float> a({1});
    a[0] = v;
    array(a);
  }
  void network(const nn::Network<float>& net) {
    net.for_each_param([&](const Array<float>& p) { array(p); });
  }
  void entropy(const EntropyModel& e) {
    array(e.density.logits);
    array(e.density.means);
    array(e.density.log_scales);
    const std::size_t width = e.tables.empty() ? 0 : e.tables.front().cdf.size();
    Array<float> cdf({e.tables.size(), width});
    for (std::size_t c = 0; c < e.tables.size(); ++c) {
      for (std::size_t i = 0; i < width; ++i) cdf[c * width + i] = static_cast<float>(e.tables[c].cdf[i]);
    }
    array(cdf);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  std::vector<std::uint8_t> out_;
};

class RecordReader {
 public:
  RecordReader(std::span<const std::uint8_t> bytes, std::string name)
      : bytes_(bytes), name_(std::move(name)) {}

  Array<float> array(const std::vector<std::size_t>& expected) {
    const std::uint32_t rank = u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = u32();
    if (shape != expected) fail("parameter shape mismatch");
    Array<float> a(shape);
    for (float& f : a.data) f = std::bit_cast<float>(u32());
    return a;
  }
  float scalar() { return array({1})[0]; }
  void network(nn::Network<float>& net) {
    net.for_each_param([&](Array<float>& p) { p = array(p.shape); });
  }
  void entropy(EntropyModel& e, int channels) {
    e.density = entropy::FactorizedDensity::initial(channels);
    e.density.logits = array(e.density.logits.shape);
    e.density.means = array(e.density.means.shape);
    e.density.log_scales = array(e.density.log_scales.shape);
    const std::size_t width = entropy::kSupportSize + 2;
    const Array<float> cdf = array({static_cast<std::size_t>(channels), width});
    e.tables.assign(channels, {});
    for (int c = 0; c < channels; ++c) {
      auto& t = e.tables[c].cdf;
      t.resize(width);
      for (std::size_t i = 0; i < width; ++i) {
        const float v = cdf[c * width + i];
        if (!(v >= 0.0f && v <= float(entropy::kTotalFrequency)) || v != std::floor(v)) {
          fail("invalid cdf entry");
        }
        t[i] = static_cast<std::uint32_t>(v);
      }
      try {
        e.tables[c].validate();
      } catch (const Error&) {
        fail("invalid cdf table");
      }
    }
  }
  void finish() const {
    if (pos_ != bytes_.size()) fail("trailing bytes");
  }

 private:
  std::uint32_t u32() {
    if (pos_ + 4 > bytes_.size()) fail("truncated file");
    std::uint32_t v = 0;
    for (int s = 0; s < 4; ++s) v |= std::uint32_t(bytes_[pos_++]) << (8 * s);
    return v;
  }
  [[noreturn]] void fail(const std::string& what) const { throw data_error(name_ + ": " + what); }

  std::span<const std::uint8_t> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw data_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw data_error("cannot write " + p.string());
}

}  // namespace detail

inline std::vector<std::uint8_t> encoder_bytes(const nn::Network<float>& encoder) {
  detail::RecordWriter w;
  w.network(encoder);
  return w.take();
}

inline std::vector<std::uint8_t> branch_bytes(const CamBranch& br) {
  detail::RecordWriter w;
  w.network(br.net);
  w.scalar(br.gain);
  return w.take();
}

inline std::vector<std::uint8_t> entropy_bytes(const EntropyModel& e) {
  detail::RecordWriter w;
  w.entropy(e);
  return w.take();
}

inline std::vector<std::uint8_t> adapter_bytes(const BamAdapter& a) {
  detail::RecordWriter w;
  w.network(a.bal);
  w.network(a.ibal);
  w.entropy(a.entropy);
  return w.take();
}

// Component digests hash the exact bytes that land on disk.
inline std::string digest_of(const nn::Network<float>& encoder) { return digest_hex(encoder_bytes(encoder)); }
inline std::string digest_of(const CamBranch& br) { return digest_hex(branch_bytes(br)); }
inline std::string digest_of(const EntropyModel& e) { return digest_hex(entropy_bytes(e)); }
inline std::string digest_of(const BamAdapter& a) { return digest_hex(adapter_bytes(a)); }

inline nlohmann::json config_to_json(const CodecConfig& c) {
  return {{"latent_channels", c.latent_channels}, {"cam_width", c.cam_width},
          {"bam_width", c.bam_width},             {"k_max", c.k_max},
          {"qualities", c.qualities},             {"lambda_base", c.lambda_base},
          {"lambdas", c.lambdas},                 {"branch_fractions", c.branch_fractions}};
}

inline CodecConfig config_from_json(const nlohmann::json& j) {
  try {
    CodecConfig c;
    c.latent_channels = j.at("latent_channels").get<int>();
    c.cam_width = j.at("cam_width").get<int>();
    c.bam_width = j.at("bam_width").get<int>();
    c.k_max = j.at("k_max").get<int>();
    c.qualities = j.at("qualities").get<int>();
    c.lambda_base = j.at("lambda_base").get<double>();
    c.lambdas = j.at("lambdas").get<std::vector<double>>();
    c.branch_fractions = j.at("branch_fractions").get<std::vector<double>>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("manifest config: ") + e.what());
  } catch (const Error& e) {
    throw data_error(std::string("manifest config: ") + e.what());
  }
}

inline std::string config_hash(const CodecConfig& c) {
  const std::string text = config_to_json(c).dump();
  return digest_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Per-branch FLOPs at the reference resolution plus the BAM pair cost.
inline nlohmann::json flops_json(const ModelBundle& b) {
  const auto branch = b.branch_flops(kReferenceHeight, kReferenceWidth);
  std::vector<double> cumulative;
  double acc = 0.0;
  for (double f : branch) cumulative.push_back(acc += f);
  return {{"reference_height", kReferenceHeight},
          {"reference_width", kReferenceWidth},
          {"branch", branch},
          {"cumulative", cumulative},
          {"bam_pair", b.bam_flops(kReferenceHeight, kReferenceWidth)}};
}

/// Scales the manifest's reference FLOPs table to an (h, w) output; exact
/// when both are multiples of 16 since every layer cost is linear in area.
inline std::vector<double> scaled_branch_flops(const nlohmann::json& flops, int out_h, int out_w) {
  const double ref = flops.at("reference_height").get<double>() * flops.at("reference_width").get<double>();
  std::vector<double> out = flops.at("branch").get<std::vector<double>>();
  for (double& f : out) f *= static_cast<double>(out_h) * out_w / ref;
  return out;
}

struct BundleFile {
  std::string name;
  std::vector<std::uint8_t> bytes;
};

inline std::vector<BundleFile> bundle_files(const ModelBundle& b) {
  std::vector<BundleFile> files;
  files.push_back({kEncoderFile, encoder_bytes(b.encoder)});
  files.push_back({kBaseEntropyFile, entropy_bytes(b.base_entropy)});
  for (std::size_t k = 0; k < b.cam.size(); ++k) files.push_back({branch_file(int(k) + 1), branch_bytes(b.cam[k])});
  for (const auto& [q, a] : b.adapters) files.push_back({adapter_file(q), adapter_bytes(a)});
  return files;
}

inline nlohmann::json manifest_json(const ModelBundle& b, const std::vector<BundleFile>& files) {
  nlohmann::json digests = nlohmann::json::object();
  for (const auto& f : files) digests[f.name] = digest_hex(f.bytes);
  nlohmann::json adapters = nlohmann::json::array();
  for (const auto& [q, a] : b.adapters) {
    adapters.push_back({{"quality", q}, {"lambda", a.lambda}, {"file", adapter_file(q)}});
  }
  return {{"format", "cbanet-bundle"},
          {"format_version", kBundleFormatVersion},
          {"config", config_to_json(b.config)},
          {"config_hash", config_hash(b.config)},
          {"stages", b.stages},
          {"branch_widths", b.branch_widths},
          {"cam_branches", b.cam.size()},
          {"adapters", adapters},
          {"flops", flops_json(b)},
          {"files", digests}};
}

inline bool is_bundle_payload(const std::string& name) {
  const auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  return name.ends_with(".bin") && (starts("cam_k") || starts("adapter_q") || name == kEncoderFile ||
                                    name == kBaseEntropyFile);
}

inline void save_bundle(const ModelBundle& b, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto files = bundle_files(b);
  std::set<std::string> keep;
  for (const auto& f : files) {
    detail::write_file(dir / f.name, f.bytes);
    keep.insert(f.name);
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (is_bundle_payload(name) && !keep.count(name)) fs::remove(entry.path());
  }
  const std::string text = manifest_json(b, files).dump(2) + "\n";
  detail::write_file(dir / kManifestName,
                     std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto bytes = detail::read_file(dir / kManifestName);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("manifest: ") + e.what());
  }
}

/// Loads and verifies a bundle; any digest or hash mismatch refuses the load.
inline ModelBundle load_bundle(const std::filesystem::path& dir) {
  const nlohmann::json m = read_manifest(dir);
  try {
    if (m.at("format") != "cbanet-bundle" || m.at("format_version") != kBundleFormatVersion) {
      throw data_error("unsupported bundle format");
    }
    ModelBundle b;
    b.config = config_from_json(m.at("config"));
    if (m.at("config_hash").get<std::string>() != config_hash(b.config)) {
      throw data_error("manifest hash mismatch: config was modified");
    }
    b.branch_widths = size_branches(b.config);
    if (m.at("branch_widths").get<std::vector<int>>() != b.branch_widths) {
      throw data_error("manifest branch widths disagree with the config");
    }
    b.stages = m.at("stages").get<std::vector<std::string>>();
    const auto& digests = m.at("files");
    auto load = [&](const std::string& name) {
      auto bytes = detail::read_file(dir / name);
      if (!digests.contains(name) || digests.at(name).get<std::string>() != digest_hex(bytes)) {
        throw data_error("manifest hash mismatch for " + name);
      }
      return bytes;
    };
    const int c = b.config.latent_channels;
    {
      const auto bytes = load(kEncoderFile);
      b.encoder = nn::Network<float>(encoder_specs(c));
      detail::RecordReader r(bytes, kEncoderFile);
      r.network(b.encoder);
      r.finish();
    }
    {
      const auto bytes = load(kBaseEntropyFile);
      detail::RecordReader r(bytes, kBaseEntropyFile);
      r.entropy(b.base_entropy, c);
      r.finish();
    }
    const int branches = m.at("cam_branches").get<int>();
    if (branches != 0 && branches != b.config.k_max) throw data_error("manifest: bad cam_branches");
    for (int k = 0; k < branches; ++k) {
      const auto bytes = load(branch_file(k + 1));
      CamBranch br{nn::Network<float>(decoder_specs(c, b.branch_widths[k])), 0.0f};
      detail::RecordReader r(bytes, branch_file(k + 1));
      r.network(br.net);
      br.gain = r.scalar();
      r.finish();
      b.cam.push_back(std::move(br));
    }
    for (const auto& entry : m.at("adapters")) {
      const int q = entry.at("quality").get<int>();
      if (q < 1 || q >= b.config.qualities || b.adapters.count(q)) {
        throw data_error("manifest: invalid adapter quality " + std::to_string(q));
      }
      const auto bytes = load(adapter_file(q));
      BamAdapter a;
      a.lambda = entry.at("lambda").get<double>();
      a.bal = nn::Network<float>(gate_specs(c, b.config.bam_width));
      a.ibal = nn::Network<float>(gate_specs(c, b.config.bam_width));
      detail::RecordReader r(bytes, adapter_file(q));
      r.network(a.bal);
      r.network(a.ibal);
      r.entropy(a.entropy, c);
      r.finish();
      b.adapters.emplace(q, std::move(a));
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("manifest: ") + e.what());
  }
}

/// On-disk bytes of each parameter file (manifest excluded).
inline std::map<std::string, std::uintmax_t> bundle_file_sizes(const std::filesystem::path& dir) {
  std::map<std::string, std::uintmax_t> sizes;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (is_bundle_payload(name)) sizes[name] = entry.file_size();
  }
  return sizes;
}

}  // namespace cbanet::codec
