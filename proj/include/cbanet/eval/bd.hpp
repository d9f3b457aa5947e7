#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "cbanet/error.hpp"
#include "cbanet/eval/sweep.hpp"

namespace cbanet::eval {

struct BdResult {
  double bdbr_percent = 0.0;
  double bd_psnr_db = 0.0;
};

using Cubic = std::array<double, 4>;  // c0 + c1 x + c2 x^2 + c3 x^3

/// Least-squares cubic through (x, y).
inline Cubic fit_cubic(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double p = 1.0;
    for (int k = 0; k < 4; ++k, p *= x[i]) a(i, k) = p;
    b(i) = y[i];
  }
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
  return {c(0), c(1), c(2), c(3)};
}

inline double eval_cubic(const Cubic& c, double x) { return c[0] + x * (c[1] + x * (c[2] + x * c[3])); }

/// Composite Simpson rule over 1000 intervals.
inline double integrate_cubic(const Cubic& c, double lo, double hi) {
  constexpr int kIntervals = 1000;
  const double h = (hi - lo) / kIntervals;
  double acc = eval_cubic(c, lo) + eval_cubic(c, hi);
  for (int i = 1; i < kIntervals; ++i) acc += (i % 2 ? 4.0 : 2.0) * eval_cubic(c, lo + i * h);
  return acc * h / 3.0;
}

namespace detail {

inline void check_curve(const RdCurve& c, const char* role) {
  if (c.points.size() < 4) throw invalid_argument(std::string("bd: ") + role + " curve needs at least 4 points");
  for (const auto& p : c.points) {
    if (!(p.bpp > 0.0) || !std::isfinite(p.bpp) || !std::isfinite(p.psnr_db)) {
      throw invalid_argument(std::string("bd: ") + role + " curve has a non-positive or non-finite point");
    }
  }
}

// Mean of (fit_test - fit_anchor) over the shared x range.
inline double mean_gap(const std::vector<double>& xa, const std::vector<double>& ya, const std::vector<double>& xt,
                       const std::vector<double>& yt) {
  const double lo = std::max(*std::min_element(xa.begin(), xa.end()), *std::min_element(xt.begin(), xt.end()));
  const double hi = std::min(*std::max_element(xa.begin(), xa.end()), *std::max_element(xt.begin(), xt.end()));
  if (!(hi > lo)) throw invalid_argument("bd: curves do not overlap");
  const Cubic fa = fit_cubic(xa, ya), ft = fit_cubic(xt, yt);
  return (integrate_cubic(ft, lo, hi) - integrate_cubic(fa, lo, hi)) / (hi - lo);
}

}  // namespace detail

/// Bjontegaard deltas of `test` against `anchor`. Positive BD-PSNR and
/// negative BDBR mean the test curve is better.
inline BdResult bd_metrics(const RdCurve& anchor, const RdCurve& test) {
  detail::check_curve(anchor, "anchor");
  detail::check_curve(test, "test");
  auto split = [](const RdCurve& c, std::vector<double>& log_rate, std::vector<double>& psnr) {
    for (const auto& p : c.points) {
      log_rate.push_back(std::log10(p.bpp));
      psnr.push_back(p.psnr_db);
    }
  };
  std::vector<double> ra, pa, rt, pt;
  split(anchor, ra, pa);
  split(test, rt, pt);
  BdResult r;
  r.bd_psnr_db = detail::mean_gap(ra, pa, rt, pt);
  r.bdbr_percent = (std::pow(10.0, detail::mean_gap(pa, ra, pt, rt)) - 1.0) * 100.0;
  return r;
}

}  // namespace cbanet::eval
