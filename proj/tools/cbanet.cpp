#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cbanet/codec/bundle_io.hpp"
#include "cbanet/codec/pipeline.hpp"
#include "cbanet/config.hpp"
#include "cbanet/eval/bd.hpp"
#include "cbanet/eval/metrics.hpp"
#include "cbanet/eval/storage.hpp"
#include "cbanet/eval/sweep.hpp"
#include "cbanet/io/png.hpp"
#include "cbanet/train/stages.hpp"
#include "cbanet/train/synthetic.hpp"

namespace fs = std::filesystem;
using namespace cbanet;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw data_error("cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f || !(f << text)) throw data_error("cannot write " + p.string());
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  codec::detail::write_file(p, bytes);
}

std::vector<int> all_up_to(int n) {
  std::vector<int> v;
  for (int i = 1; i <= n; ++i) v.push_back(i);
  return v;
}

void print_report(const train::StageReport& r, const fs::path& dir) {
  const fs::path path = r.write(dir);
  if (!r.rows.empty()) {
    const auto& last = r.rows.back();
    std::printf("%s: iter %ld bpp %.4f mse %.3f loss %.4f\n", r.stage.c_str(), last.iteration, last.bpp, last.mse,
                last.loss);
  }
  std::printf("report %s\n", path.string().c_str());
}

struct TrainArgs {
  std::string stage, config, data, out, reports;
  std::vector<std::string> overrides;
  int quality = 0;
  double lambda = 0.0;
};

int run_train(const TrainArgs& a) {
  const CliConfig cfg = load_config(a.config, a.overrides);
  const fs::path reports = a.reports.empty() ? fs::path(a.out) / "reports" : fs::path(a.reports);
  const auto images = train::load_images(a.data, cfg.train.crop_size);
  if (a.stage == "base") {
    Rng rng(cfg.train.seed);
    auto b = codec::ModelBundle::create(cfg.codec, rng);
    const auto report = train::train_base(b, cfg.train, images);
    codec::save_bundle(b, a.out);
    print_report(report, reports);
    return 0;
  }
  auto b = codec::load_bundle(a.out);
  if (!(b.config == cfg.codec)) throw config_error("config [codec] section does not match the bundle in " + a.out);
  if (a.stage == "cam") {
    const auto reps = train::train_cam_progressive(b, cfg.train, images);
    codec::save_bundle(b, a.out);
    for (const auto& r : reps) print_report(r, reports);
    return 0;
  }
  std::vector<int> qualities;
  if (a.quality != 0) {
    qualities = {a.quality};
  } else {
    if (a.lambda != 0.0) throw usage_error("--lambda needs --quality");
    qualities = all_up_to(b.config.qualities - 1);
  }
  for (int q : qualities) {
    b.check_quality(q);
    const double lambda = a.lambda != 0.0 ? a.lambda : (q < b.base_quality() ? b.config.lambda_for(q) : 0.0);
    const auto report = train::train_bam(b, cfg.train, images, q, lambda);
    codec::save_bundle(b, a.out);
    print_report(report, reports);
  }
  return 0;
}

int run_decode(const std::string& model, const std::string& input, const std::string& output, int branches,
               double budget_gflops) {
  const auto b = codec::load_bundle(model);
  const auto bytes = codec::detail::read_file(input);
  int k = b.config.k_max;
  if (branches != 0) {
    if (branches < 1 || branches > b.config.k_max) {
      throw usage_error("--branches must be in 1.." + std::to_string(b.config.k_max));
    }
    k = branches;
  } else if (budget_gflops != 0.0) {
    const auto h = entropy::parse_bitstream(bytes).header;
    const auto flops = codec::scaled_branch_flops(codec::read_manifest(model).at("flops"),
                                                  codec::padded_extent(static_cast<int>(h.orig_h)),
                                                  codec::padded_extent(static_cast<int>(h.orig_w)));
    k = codec::select_branches(budget_gflops * 1e9, flops);
  }
  io::write_png(output, codec::to_8bit(codec::decode_image(bytes, k, b)));
  std::printf("decoded %s with %d branch%s\n", output.c_str(), k, k == 1 ? "" : "es");
  return 0;
}

std::pair<int, int> parse_resolution(const std::string& s) {
  int w = 0, h = 0;
  char x = 0, extra = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c", &w, &x, &h, &extra) != 3 || (x != 'x' && x != 'X') || w < 1 || h < 1) {
    throw usage_error("--resolution must look like 768x512");
  }
  return {w, h};
}

int run_flops(const std::string& model, const std::string& config, const std::string& resolution) {
  const auto [w, h] = parse_resolution(resolution);
  codec::ModelBundle b;
  if (!model.empty()) {
    b = codec::load_bundle(model);
  } else {
    b.config = load_config(config).codec;
    b.branch_widths = codec::size_branches(b.config);
  }
  const int ph = codec::padded_extent(h), pw = codec::padded_extent(w);
  const auto branch = b.branch_flops(ph, pw);
  double total = 0.0;
  for (double f : branch) total += f;
  std::printf("branch,width,gflops,cumulative_gflops,share\n");
  double acc = 0.0;
  for (std::size_t k = 0; k < branch.size(); ++k) {
    acc += branch[k];
    std::printf("%zu,%d,%.4f,%.4f,%.4f\n", k + 1, b.branch_widths[k], branch[k] / 1e9, acc / 1e9, branch[k] / total);
  }
  const double bam = b.bam_flops(ph, pw);
  std::printf("bam_pair_gflops,%.4f\nbam_share_of_decoder,%.4f%%\n", bam / 1e9, 100.0 * bam / (total + bam));
  return 0;
}

std::vector<eval::RdCurve> read_curves(const std::string& path) {
  return eval::curves_from_rows(eval::parse_sweep_csv(read_text(path)));
}

const eval::RdCurve& find_curve(const std::vector<eval::RdCurve>& curves, const std::string& label,
                                const std::string& path) {
  for (const auto& c : curves) {
    if (c.label == label) return c;
  }
  throw data_error("no curve labelled '" + label + "' in " + path);
}

int run_bd(const std::string& anchor, const std::string& test, const std::string& anchor_label,
           const std::string& test_label) {
  const auto ca = read_curves(anchor), ct = read_curves(test);
  std::string out = "anchor,test,bdbr_percent,bd_psnr_db\n";
  auto emit = [&out](const eval::RdCurve& a, const eval::RdCurve& t) {
    const auto r = eval::bd_metrics(a, t);
    char line[64];
    std::snprintf(line, sizeof line, ",%.6f,%.6f\n", r.bdbr_percent, r.bd_psnr_db);
    out += a.label + "," + t.label + line;
  };
  if (!anchor_label.empty() || !test_label.empty()) {
    if (anchor_label.empty() || test_label.empty()) throw usage_error("--anchor-label and --test-label go together");
    emit(find_curve(ca, anchor_label, anchor), find_curve(ct, test_label, test));
    std::printf("%s", out.c_str());
    return 0;
  }
  int matched = 0;
  for (const auto& a : ca) {
    for (const auto& t : ct) {
      if (a.label == t.label) {
        emit(a, t);
        ++matched;
      }
    }
  }
  if (matched == 0) throw data_error("no curve labels shared between " + anchor + " and " + test);
  std::printf("%s", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-model variable-rate, variable-complexity learned image codec"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Run one training stage (base, cam or bam)");
  train->add_option("stage", ta.stage, "Stage")->required()->check(CLI::IsMember({"base", "cam", "bam"}));
  train->add_option("--config", ta.config, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--data", ta.data, "Directory of training PNGs")->required();
  train->add_option("--out", ta.out, "Bundle directory")->required();
  train->add_option("--reports", ta.reports, "Stage report directory (default <out>/reports)");
  train->add_option("--set", ta.overrides, "Config override section.key=value");
  train->add_option("--quality", ta.quality, "bam: quality index (default: every non-base quality)");
  train->add_option("--lambda", ta.lambda, "bam: lambda (default: from the config)");

  std::string model, input, output;
  int quality = 0;
  auto* enc = app.add_subcommand("encode", "Compress a PNG into a .cba stream");
  enc->add_option("--model", model, "Bundle directory")->required();
  enc->add_option("--quality", quality, "Quality index")->required();
  enc->add_option("--input", input, "Input PNG")->required();
  enc->add_option("--output", output, "Output stream")->required();

  int branches = 0;
  double budget = 0.0;
  auto* dec = app.add_subcommand("decode", "Reconstruct a PNG from a .cba stream");
  dec->add_option("--model", model, "Bundle directory")->required();
  dec->add_option("--input", input, "Input stream")->required();
  dec->add_option("--output", output, "Output PNG")->required();
  auto* br_opt = dec->add_option("--branches", branches, "Number of decoder branches");
  auto* bg_opt = dec->add_option("--budget-gflops", budget, "Decoder FLOPs budget in GFLOPs");
  br_opt->excludes(bg_opt);

  std::string data, report;
  std::vector<int> qualities, branch_list;
  auto* ev = app.add_subcommand("eval", "Rate-distortion sweep over qualities and branch counts");
  ev->add_option("--model", model, "Bundle directory")->required();
  ev->add_option("--data", data, "Directory of PNGs")->required();
  ev->add_option("--qualities", qualities, "Quality indices (default all)")->delimiter(',');
  ev->add_option("--branches", branch_list, "Branch counts (default all)")->delimiter(',');
  ev->add_option("--report", report, "Output CSV")->required();

  std::string anchor, test, anchor_label, test_label;
  auto* bd = app.add_subcommand("bd", "BDBR and BD-PSNR between two sweep CSVs");
  bd->add_option("--anchor", anchor, "Anchor CSV")->required();
  bd->add_option("--test", test, "Test CSV")->required();
  bd->add_option("--anchor-label", anchor_label, "Curve label in the anchor CSV");
  bd->add_option("--test-label", test_label, "Curve label in the test CSV");

  std::string config, resolution = "768x512";
  auto* fl = app.add_subcommand("flops", "Per-branch decoder FLOPs");
  auto* fl_model = fl->add_option("--model", model, "Bundle directory");
  auto* fl_config = fl->add_option("--config", config, "Config file (instead of a bundle)");
  fl_model->excludes(fl_config);
  fl->add_option("--resolution", resolution, "Output resolution WxH");

  int bitrates = 0, levels = 0;
  auto* st = app.add_subcommand("storage", "Single-model vs per-model parameter counts");
  st->add_option("--model", model, "Bundle directory")->required();
  st->add_option("--bitrates", bitrates, "Largest number of bitrates (default: qualities)");
  st->add_option("--levels", levels, "Complexity levels for the multi-model baseline (default: k_max)");

  int count = 8, size = 96;
  std::uint64_t seed = 1;
  auto* md = app.add_subcommand("make-data", "Write a synthetic PNG dataset");
  md->add_option("--out", output, "Output directory")->required();
  md->add_option("--count", count, "Number of images")->check(CLI::PositiveNumber);
  md->add_option("--size", size, "Side length in pixels")->check(CLI::PositiveNumber);
  md->add_option("--seed", seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::kUsage);
  }

  try {
    if (*train) return run_train(ta);
    if (*enc) {
      const auto b = codec::load_bundle(model);
      const auto bytes = codec::encode_image(codec::from_8bit(io::read_png(input)), quality, b);
      write_bytes(output, bytes);
      std::printf("wrote %s (%zu bytes, %.4f bpp)\n", output.c_str(), bytes.size(), eval::bpp(bytes));
      return 0;
    }
    if (*dec) return run_decode(model, input, output, branches, budget);
    if (*ev) {
      const auto b = codec::load_bundle(model);
      const auto images = train::load_images(data, 1);
      const auto rows = eval::rd_sweep(b, images, qualities.empty() ? all_up_to(b.config.qualities) : qualities,
                                       branch_list.empty() ? all_up_to(b.config.k_max) : branch_list);
      write_text(report, eval::sweep_csv(rows));
      std::printf("%s", eval::sweep_csv(rows).c_str());
      return 0;
    }
    if (*bd) return run_bd(anchor, test, anchor_label, test_label);
    if (*fl) {
      if (model.empty() && config.empty()) throw usage_error("flops needs --model or --config");
      return run_flops(model, config, resolution);
    }
    if (*st) {
      const auto b = codec::load_bundle(model);
      const auto rows = eval::storage_report(b, bitrates ? bitrates : b.config.qualities, levels ? levels : b.config.k_max);
      std::printf("bitrates,single_model_params,multi_model_params\n");
      for (const auto& r : rows) std::printf("%d,%.0f,%.0f\n", r.bitrates, r.single_model, r.multi_model);
      return 0;
    }
    if (*md) {
      train::write_synthetic_dataset(output, count, size, size, seed);
      std::printf("wrote %d images to %s\n", count, output.c_str());
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::kInvalidArgument ? static_cast<int>(ErrorKind::kUsage) : static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kData);
  }
  return 0;
}
