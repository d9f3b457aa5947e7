#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "cbanet/codec/pipeline.hpp"
#include "cbanet/eval/metrics.hpp"
#include "cbanet/train/dataset.hpp"

namespace cbanet::eval {

struct RdPoint {
  double bpp = 0.0;
  double psnr_db = 0.0;
  friend bool operator==(const RdPoint&, const RdPoint&) = default;
};

struct RdCurve {
  std::string label;
  std::vector<RdPoint> points;
};

struct SweepRow {
  std::string label;
  int quality_index = 0;
  int branches = 0;
  double bpp = 0.0;
  double psnr_db = 0.0;
};

/// "CBANet-25%" style label from the cumulative FLOPs share of K branches.
inline std::string branch_label(const codec::CodecConfig& cfg, int branches) {
  double share = 0.0;
  for (int k = 0; k < branches; ++k) share += cfg.branch_fractions[k];
  return "CBANet-" + std::to_string(static_cast<int>(std::lround(100.0 * share))) + "%";
}

/// Mean bpp and PSNR over the images for every (quality, K) pair, rows
/// ordered by quality then K. Streams are encoded once per quality.
inline std::vector<SweepRow> rd_sweep(const codec::ModelBundle& b, const std::vector<train::NamedImage>& images,
                                      const std::vector<int>& qualities, const std::vector<int>& branches) {
  if (images.empty()) throw data_error("rd_sweep: no images");
  std::vector<SweepRow> rows;
  for (int q : qualities) {
    b.check_quality(q);
    std::vector<std::vector<std::uint8_t>> streams;
    double mean_bpp = 0.0;
    for (const auto& img : images) {
      streams.push_back(codec::encode_image(img.pixels, q, b));
      mean_bpp += bpp(streams.back());
    }
    mean_bpp /= static_cast<double>(images.size());
    for (int k : branches) {
      double mean_psnr = 0.0;
      for (std::size_t i = 0; i < images.size(); ++i) {
        mean_psnr += psnr(images[i].pixels, codec::decode_image(streams[i], k, b));
      }
      rows.push_back({branch_label(b.config, k), q, k, mean_bpp, mean_psnr / static_cast<double>(images.size())});
    }
  }
  return rows;
}

/// One curve per branch count, points ordered by increasing bpp.
inline std::vector<RdCurve> curves_from_rows(const std::vector<SweepRow>& rows) {
  std::vector<RdCurve> curves;
  for (const auto& r : rows) {
    auto it = std::find_if(curves.begin(), curves.end(), [&](const RdCurve& c) { return c.label == r.label; });
    if (it == curves.end()) {
      curves.push_back({r.label, {}});
      it = curves.end() - 1;
    }
    it->points.push_back({r.bpp, r.psnr_db});
  }
  for (auto& c : curves) {
    std::sort(c.points.begin(), c.points.end(), [](const RdPoint& a, const RdPoint& b) { return a.bpp < b.bpp; });
  }
  return curves;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "label,quality_index,branches,bpp,psnr_db\n" << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.label << ',' << r.quality_index << ',' << r.branches << ',' << r.bpp << ',' << r.psnr_db << '\n';
  }
  return os.str();
}

/// Parses the sweep CSV; rows with a blank label are rejected.
inline std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("label,quality_index,branches,bpp,psnr_db", 0) != 0) {
    throw data_error("rd csv: missing header label,quality_index,branches,bpp,psnr_db");
  }
  std::vector<SweepRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    for (std::string f; std::getline(ls, f, ',');) fields.push_back(f);
    if (fields.size() != 5 || fields[0].empty()) throw data_error("rd csv: malformed line " + std::to_string(line_no));
    try {
      SweepRow r{fields[0], std::stoi(fields[1]), std::stoi(fields[2]), std::stod(fields[3]), std::stod(fields[4])};
      rows.push_back(r);
    } catch (const std::exception&) {
      throw data_error("rd csv: bad number on line " + std::to_string(line_no));
    }
  }
  return rows;
}

}  // namespace cbanet::eval
