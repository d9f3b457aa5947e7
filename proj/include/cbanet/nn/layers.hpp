#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cbanet/error.hpp"
#include "cbanet/tensor.hpp"

namespace cbanet::nn {

enum class LayerKind { kConv, kDeconv, kDepthwiseConv, kGdn, kIgdn, kLeakyRelu, kSigmoid, kRelu };
enum class Padding { kSameReflect, kValid };

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kBetaFloor = 1e-6;

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kDeconv: return "deconv";
    case LayerKind::kDepthwiseConv: return "depthwise-conv";
    case LayerKind::kGdn: return "gdn";
    case LayerKind::kIgdn: return "igdn";
    case LayerKind::kLeakyRelu: return "leaky-relu";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kRelu: return "relu";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  Padding padding = Padding::kSameReflect;

  static LayerSpec conv(int in, int out, int k, int stride = 1,
                        Padding p = Padding::kSameReflect) {
    return {LayerKind::kConv, in, out, k, k, stride, p};
  }
  static LayerSpec deconv(int in, int out, int k, int stride = 2,
                          Padding p = Padding::kSameReflect) {
    return {LayerKind::kDeconv, in, out, k, k, stride, p};
  }
  static LayerSpec depthwise(int channels, int k, int stride = 1) {
    return {LayerKind::kDepthwiseConv, channels, channels, k, k, stride, Padding::kSameReflect};
  }
  static LayerSpec gdn(int channels) { return pointwise(LayerKind::kGdn, channels); }
  static LayerSpec igdn(int channels) { return pointwise(LayerKind::kIgdn, channels); }
  static LayerSpec leaky_relu(int channels) { return pointwise(LayerKind::kLeakyRelu, channels); }
  static LayerSpec sigmoid(int channels) { return pointwise(LayerKind::kSigmoid, channels); }
  static LayerSpec relu(int channels) { return pointwise(LayerKind::kRelu, channels); }

  bool has_params() const {
    return kind == LayerKind::kConv || kind == LayerKind::kDeconv ||
           kind == LayerKind::kDepthwiseConv || kind == LayerKind::kGdn ||
           kind == LayerKind::kIgdn;
  }

  void validate() const {
    if (in_channels <= 0 || out_channels <= 0 || kernel_h <= 0 || kernel_w <= 0 || stride <= 0) {
      throw invalid_argument(std::string(kind_name(kind)) + ": non-positive layer dimension");
    }
    const bool shape_preserving = kind != LayerKind::kConv && kind != LayerKind::kDeconv;
    if (shape_preserving && in_channels != out_channels) {
      throw invalid_argument(std::string(kind_name(kind)) + ": requires out_channels == in_channels");
    }
    if (kind == LayerKind::kDeconv && kernel_h < stride) {
      throw invalid_argument("deconv: kernel smaller than stride");
    }
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;

 private:
  static LayerSpec pointwise(LayerKind k, int c) {
    return {k, c, c, 1, 1, 1, Padding::kSameReflect};
  }
};

/// Mirror index without edge repetition; handles pads wider than the extent.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

struct Geometry {
  int out_h = 0;
  int out_w = 0;
  int offset_h = 0;  // conv: top pad; deconv: top crop
  int offset_w = 0;
};

inline Geometry conv_geometry(const LayerSpec& s, int h, int w) {
  Geometry g;
  if (s.padding == Padding::kValid) {
    if (h < s.kernel_h || w < s.kernel_w) {
      throw invalid_argument("conv: valid padding with input smaller than kernel");
    }
    g.out_h = (h - s.kernel_h) / s.stride + 1;
    g.out_w = (w - s.kernel_w) / s.stride + 1;
    return g;
  }
  g.out_h = (h + s.stride - 1) / s.stride;
  g.out_w = (w + s.stride - 1) / s.stride;
  g.offset_h = std::max((g.out_h - 1) * s.stride + s.kernel_h - h, 0) / 2;
  g.offset_w = std::max((g.out_w - 1) * s.stride + s.kernel_w - w, 0) / 2;
  return g;
}

inline Geometry deconv_geometry(const LayerSpec& s, int h, int w) {
  Geometry g;
  const int full_h = (h - 1) * s.stride + s.kernel_h;
  const int full_w = (w - 1) * s.stride + s.kernel_w;
  if (s.padding == Padding::kValid) {
    g.out_h = full_h;
    g.out_w = full_w;
    return g;
  }
  g.out_h = h * s.stride;
  g.out_w = w * s.stride;
  g.offset_h = (full_h - g.out_h) / 2;
  g.offset_w = (full_w - g.out_w) / 2;
  return g;
}

/// Output (channels, height, width) a layer produces for an input of (h, w).
inline Geometry output_geometry(const LayerSpec& s, int h, int w) {
  switch (s.kind) {
    case LayerKind::kConv:
    case LayerKind::kDepthwiseConv:
      return conv_geometry(s, h, w);
    case LayerKind::kDeconv:
      return deconv_geometry(s, h, w);
    default:
      return {h, w, 0, 0};
  }
}

/// Parameter shapes in storage order.
inline std::vector<std::vector<std::size_t>> param_shapes(const LayerSpec& s) {
  const auto ci = static_cast<std::size_t>(s.in_channels);
  const auto co = static_cast<std::size_t>(s.out_channels);
  const auto kh = static_cast<std::size_t>(s.kernel_h);
  const auto kw = static_cast<std::size_t>(s.kernel_w);
  switch (s.kind) {
    case LayerKind::kConv: return {{co, ci, kh, kw}, {co}};
    case LayerKind::kDeconv: return {{ci, co, kh, kw}, {co}};
    case LayerKind::kDepthwiseConv: return {{ci, kh, kw}, {ci}};
    case LayerKind::kGdn:
    case LayerKind::kIgdn: return {{ci}, {ci, ci}};
    default: return {};
  }
}

template <typename T>
std::vector<Array<T>> zero_params(const LayerSpec& s) {
  std::vector<Array<T>> out;
  for (auto& shape : param_shapes(s)) out.emplace_back(shape);
  return out;
}

template <typename T>
inline T softplus(T v) {
  return v > T(20) ? v : std::log1p(std::exp(v));
}
template <typename T>
inline T softplus_inverse(T v) {
  return v > T(20) ? v : std::log(std::expm1(v));
}
template <typename T>
inline T sigmoid(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Source row/col for every (output position, kernel tap) pair.
inline std::vector<int> tap_table(int out, int k, int stride, int offset, int n, bool reflect) {
  std::vector<int> table(static_cast<std::size_t>(out) * k);
  for (int o = 0; o < out; ++o) {
    for (int t = 0; t < k; ++t) {
      const int src = o * stride + t - offset;
      table[o * k + t] = reflect ? reflect_index(src, n) : src;
    }
  }
  return table;
}

template <typename T>
RowMatrix<T> im2col(const FeatureMap<T>& x, const LayerSpec& s, const Geometry& g) {
  const int kh = s.kernel_h, kw = s.kernel_w;
  const bool reflect = s.padding == Padding::kSameReflect;
  const auto rows = tap_table(g.out_h, kh, s.stride, g.offset_h, x.height(), reflect);
  const auto cols = tap_table(g.out_w, kw, s.stride, g.offset_w, x.width(), reflect);
  RowMatrix<T> col(static_cast<Eigen::Index>(x.channels()) * kh * kw,
                   static_cast<Eigen::Index>(g.out_h) * g.out_w);
  for (int c = 0; c < x.channels(); ++c) {
    const T* src = x.channel(c);
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        T* dst = col.row((c * kh + i) * kw + j).data();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const T* src_row = src + static_cast<std::size_t>(rows[oy * kh + i]) * x.width();
          for (int ox = 0; ox < g.out_w; ++ox) *dst++ = src_row[cols[ox * kw + j]];
        }
      }
    }
  }
  return col;
}

template <typename T>
void col2im_accumulate(const RowMatrix<T>& col, const LayerSpec& s, const Geometry& g,
                       FeatureMap<T>& dx) {
  const int kh = s.kernel_h, kw = s.kernel_w;
  const bool reflect = s.padding == Padding::kSameReflect;
  const auto rows = tap_table(g.out_h, kh, s.stride, g.offset_h, dx.height(), reflect);
  const auto cols = tap_table(g.out_w, kw, s.stride, g.offset_w, dx.width(), reflect);
  for (int c = 0; c < dx.channels(); ++c) {
    T* dst = dx.channel(c);
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const T* src = col.row((c * kh + i) * kw + j).data();
        for (int oy = 0; oy < g.out_h; ++oy) {
          T* dst_row = dst + static_cast<std::size_t>(rows[oy * kh + i]) * dx.width();
          for (int ox = 0; ox < g.out_w; ++ox) dst_row[cols[ox * kw + j]] += *src++;
        }
      }
    }
  }
}

template <typename T>
ConstMatrixMap<T> as_matrix(const FeatureMap<T>& x) {
  return ConstMatrixMap<T>(x.data(), x.channels(), static_cast<Eigen::Index>(x.plane()));
}
template <typename T>
MatrixMap<T> as_matrix(FeatureMap<T>& x) {
  return MatrixMap<T>(x.data(), x.channels(), static_cast<Eigen::Index>(x.plane()));
}

template <typename T>
FeatureMap<T> conv_forward(const LayerSpec& s, const std::vector<Array<T>>& p,
                           const FeatureMap<T>& x) {
  const Geometry g = conv_geometry(s, x.height(), x.width());
  const RowMatrix<T> col = im2col(x, s, g);
  ConstMatrixMap<T> w(p[0].data.data(), s.out_channels, col.rows());
  FeatureMap<T> y(s.out_channels, g.out_h, g.out_w);
  auto ym = as_matrix(y);
  ym.noalias() = w * col;
  for (int o = 0; o < s.out_channels; ++o) ym.row(o).array() += p[1][o];
  return y;
}

template <typename T>
FeatureMap<T> conv_backward(const LayerSpec& s, const std::vector<Array<T>>& p,
                            const FeatureMap<T>& x, const FeatureMap<T>& gy,
                            std::vector<Array<T>>* grads, bool need_dx) {
  const Geometry g = conv_geometry(s, x.height(), x.width());
  ConstMatrixMap<T> w(p[0].data.data(), s.out_channels,
                      static_cast<Eigen::Index>(s.in_channels) * s.kernel_h * s.kernel_w);
  const auto gm = as_matrix(gy);
  if (grads != nullptr) {
    const RowMatrix<T> col = im2col(x, s, g);
    MatrixMap<T> gw((*grads)[0].data.data(), w.rows(), w.cols());
    gw.noalias() += gm * col.transpose();
    for (int o = 0; o < s.out_channels; ++o) (*grads)[1][o] += gm.row(o).sum();
  }
  if (!need_dx) return {};
  const RowMatrix<T> dcol = w.transpose() * gm;
  FeatureMap<T> dx(x.channels(), x.height(), x.width());
  col2im_accumulate(dcol, s, g, dx);
  return dx;
}

template <typename T>
void deconv_scatter(const RowMatrix<T>& col, const LayerSpec& s, const Geometry& g, int in_h,
                    int in_w, FeatureMap<T>& y) {
  const int kh = s.kernel_h, kw = s.kernel_w;
  for (int o = 0; o < s.out_channels; ++o) {
    T* dst = y.channel(o);
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = col.row((o * kh + ki) * kw + kj).data();
        for (int iy = 0; iy < in_h; ++iy) {
          const int oy = iy * s.stride + ki - g.offset_h;
          if (oy < 0 || oy >= g.out_h) continue;
          T* dst_row = dst + static_cast<std::size_t>(oy) * g.out_w;
          const T* src_row = src + static_cast<std::size_t>(iy) * in_w;
          for (int ix = 0; ix < in_w; ++ix) {
            const int ox = ix * s.stride + kj - g.offset_w;
            if (ox >= 0 && ox < g.out_w) dst_row[ox] += src_row[ix];
          }
        }
      }
    }
  }
}

template <typename T>
RowMatrix<T> deconv_gather(const FeatureMap<T>& gy, const LayerSpec& s, const Geometry& g,
                           int in_h, int in_w) {
  const int kh = s.kernel_h, kw = s.kernel_w;
  RowMatrix<T> col = RowMatrix<T>::Zero(static_cast<Eigen::Index>(s.out_channels) * kh * kw,
                                        static_cast<Eigen::Index>(in_h) * in_w);
  for (int o = 0; o < s.out_channels; ++o) {
    const T* src = gy.channel(o);
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = col.row((o * kh + ki) * kw + kj).data();
        for (int iy = 0; iy < in_h; ++iy) {
          const int oy = iy * s.stride + ki - g.offset_h;
          if (oy < 0 || oy >= g.out_h) continue;
          const T* src_row = src + static_cast<std::size_t>(oy) * g.out_w;
          T* dst_row = dst + static_cast<std::size_t>(iy) * in_w;
          for (int ix = 0; ix < in_w; ++ix) {
            const int ox = ix * s.stride + kj - g.offset_w;
            if (ox >= 0 && ox < g.out_w) dst_row[ix] = src_row[ox];
          }
        }
      }
    }
  }
  return col;
}

template <typename T>
FeatureMap<T> deconv_forward(const LayerSpec& s, const std::vector<Array<T>>& p,
                             const FeatureMap<T>& x) {
  const Geometry g = deconv_geometry(s, x.height(), x.width());
  ConstMatrixMap<T> w(p[0].data.data(), s.in_channels,
                      static_cast<Eigen::Index>(s.out_channels) * s.kernel_h * s.kernel_w);
  const RowMatrix<T> col = w.transpose() * as_matrix(x);
  FeatureMap<T> y(s.out_channels, g.out_h, g.out_w);
  deconv_scatter(col, s, g, x.height(), x.width(), y);
  auto ym = as_matrix(y);
  for (int o = 0; o < s.out_channels; ++o) ym.row(o).array() += p[1][o];
  return y;
}

template <typename T>
FeatureMap<T> deconv_backward(const LayerSpec& s, const std::vector<Array<T>>& p,
                              const FeatureMap<T>& x, const FeatureMap<T>& gy,
                              std::vector<Array<T>>* grads, bool need_dx) {
  const Geometry g = deconv_geometry(s, x.height(), x.width());
  ConstMatrixMap<T> w(p[0].data.data(), s.in_channels,
                      static_cast<Eigen::Index>(s.out_channels) * s.kernel_h * s.kernel_w);
  const RowMatrix<T> dcol = deconv_gather(gy, s, g, x.height(), x.width());
  if (grads != nullptr) {
    MatrixMap<T> gw((*grads)[0].data.data(), w.rows(), w.cols());
    gw.noalias() += as_matrix(x) * dcol.transpose();
    const auto gm = as_matrix(gy);
    for (int o = 0; o < s.out_channels; ++o) (*grads)[1][o] += gm.row(o).sum();
  }
  if (!need_dx) return {};
  FeatureMap<T> dx(x.channels(), x.height(), x.width());
  as_matrix(dx).noalias() = w * dcol;
  return dx;
}

template <typename T>
FeatureMap<T> depthwise_forward(const LayerSpec& s, const std::vector<Array<T>>& p,
                                const FeatureMap<T>& x) {
  const Geometry g = conv_geometry(s, x.height(), x.width());
  const int kh = s.kernel_h, kw = s.kernel_w;
  const auto rows = tap_table(g.out_h, kh, s.stride, g.offset_h, x.height(), true);
  const auto cols = tap_table(g.out_w, kw, s.stride, g.offset_w, x.width(), true);
  FeatureMap<T> y(x.channels(), g.out_h, g.out_w);
  for (int c = 0; c < x.channels(); ++c) {
    const T* wt = p[0].data.data() + static_cast<std::size_t>(c) * kh * kw;
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        T acc = p[1][c];
        for (int i = 0; i < kh; ++i) {
          for (int j = 0; j < kw; ++j) {
            acc += wt[i * kw + j] * x.at(c, rows[oy * kh + i], cols[ox * kw + j]);
          }
        }
        y.at(c, oy, ox) = acc;
      }
    }
  }
  return y;
}

template <typename T>
FeatureMap<T> depthwise_backward(const LayerSpec& s, const std::vector<Array<T>>& p,
                                 const FeatureMap<T>& x, const FeatureMap<T>& gy,
                                 std::vector<Array<T>>* grads, bool need_dx) {
  const Geometry g = conv_geometry(s, x.height(), x.width());
  const int kh = s.kernel_h, kw = s.kernel_w;
  const auto rows = tap_table(g.out_h, kh, s.stride, g.offset_h, x.height(), true);
  const auto cols = tap_table(g.out_w, kw, s.stride, g.offset_w, x.width(), true);
  FeatureMap<T> dx;
  if (need_dx) dx = FeatureMap<T>(x.channels(), x.height(), x.width());
  for (int c = 0; c < x.channels(); ++c) {
    const T* wt = p[0].data.data() + static_cast<std::size_t>(c) * kh * kw;
    T* gw = grads ? (*grads)[0].data.data() + static_cast<std::size_t>(c) * kh * kw : nullptr;
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        const T up = gy.at(c, oy, ox);
        if (grads) (*grads)[1][c] += up;
        for (int i = 0; i < kh; ++i) {
          for (int j = 0; j < kw; ++j) {
            const int sy = rows[oy * kh + i], sx = cols[ox * kw + j];
            if (gw) gw[i * kw + j] += up * x.at(c, sy, sx);
            if (need_dx) dx.at(c, sy, sx) += up * wt[i * kw + j];
          }
        }
      }
    }
  }
  return dx;
}

}  // namespace detail

/// GDN / IGDN on effective (already positive) parameters.
///   gdn:  y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)
///   igdn: y_i = x_i * sqrt(beta_i + sum_j gamma_ij x_j^2)
template <typename T>
FeatureMap<T> gdn_apply(const FeatureMap<T>& x, const std::vector<T>& beta,
                        const std::vector<T>& gamma, bool inverse) {
  const int c = x.channels();
  if (beta.size() != static_cast<std::size_t>(c) ||
      gamma.size() != static_cast<std::size_t>(c) * c) {
    throw invalid_argument("gdn: parameter shape does not match channels");
  }
  using Mat = detail::RowMatrix<T>;
  const auto xm = detail::as_matrix(x);
  detail::ConstMatrixMap<T> gm(gamma.data(), c, c);
  Mat norm = gm * xm.array().square().matrix();
  for (int i = 0; i < c; ++i) norm.row(i).array() += beta[i];
  FeatureMap<T> y(x.channels(), x.height(), x.width());
  auto ym = detail::as_matrix(y);
  if (inverse) {
    ym = xm.array() * norm.array().sqrt();
  } else {
    ym = xm.array() / norm.array().sqrt();
  }
  return y;
}

/// Gradients of gdn_apply with respect to effective beta, gamma and x.
template <typename T>
FeatureMap<T> gdn_apply_backward(const FeatureMap<T>& x, const std::vector<T>& beta,
                                 const std::vector<T>& gamma, bool inverse,
                                 const FeatureMap<T>& gy, std::vector<T>* dbeta,
                                 std::vector<T>* dgamma, bool need_dx) {
  const int c = x.channels();
  using Mat = detail::RowMatrix<T>;
  const auto xm = detail::as_matrix(x);
  const auto gym = detail::as_matrix(gy);
  detail::ConstMatrixMap<T> gm(gamma.data(), c, c);
  const Mat x2 = xm.array().square().matrix();
  Mat norm = gm * x2;
  for (int i = 0; i < c; ++i) norm.row(i).array() += beta[i];
  // a = g * x * dS/dN where S = N^{-1/2} (gdn) or N^{1/2} (igdn)
  Mat a;
  if (inverse) {
    a = (T(0.5) * gym.array() * xm.array() * norm.array().sqrt().inverse()).matrix();
  } else {
    a = (T(-0.5) * gym.array() * xm.array() * norm.array().sqrt().inverse() / norm.array()).matrix();
  }
  if (dbeta != nullptr) {
    for (int i = 0; i < c; ++i) (*dbeta)[i] += a.row(i).sum();
  }
  if (dgamma != nullptr) {
    detail::MatrixMap<T> dg(dgamma->data(), c, c);
    dg.noalias() += a * x2.transpose();
  }
  if (!need_dx) return {};
  FeatureMap<T> dx(x.channels(), x.height(), x.width());
  auto dxm = detail::as_matrix(dx);
  const Mat back = gm.transpose() * a;
  const auto scale = inverse ? Mat(norm.array().sqrt()) : Mat(norm.array().sqrt().inverse());
  dxm = gym.array() * scale.array() + T(2) * xm.array() * back.array();
  return dx;
}

/// Positive beta/gamma from stored unconstrained values.
template <typename T>
void gdn_effective(const std::vector<Array<T>>& p, std::vector<T>& beta, std::vector<T>& gamma) {
  beta.resize(p[0].size());
  gamma.resize(p[1].size());
  for (std::size_t i = 0; i < beta.size(); ++i) beta[i] = softplus(p[0][i]) + T(kBetaFloor);
  for (std::size_t i = 0; i < gamma.size(); ++i) gamma[i] = softplus(p[1][i]);
}

inline void check_input(const LayerSpec& spec, int channels) {
  if (channels != spec.in_channels) {
    throw invalid_argument(std::string(kind_name(spec.kind)) + ": expected " +
                           std::to_string(spec.in_channels) + " input channels, got " +
                           std::to_string(channels));
  }
}

template <typename T>
void check_params(const LayerSpec& spec, const std::vector<Array<T>>& params) {
  const auto shapes = param_shapes(spec);
  if (params.size() != shapes.size()) {
    throw invalid_argument(std::string(kind_name(spec.kind)) + ": wrong parameter count");
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (params[i].shape != shapes[i] || params[i].data.size() != Array<T>::element_count(shapes[i])) {
      throw invalid_argument(std::string(kind_name(spec.kind)) + ": parameter " +
                             std::to_string(i) + " has wrong shape");
    }
  }
}

template <typename T>
FeatureMap<T> layer_forward(const LayerSpec& spec, const std::vector<Array<T>>& params,
                            const FeatureMap<T>& x) {
  check_input(spec, x.channels());
  if (!x.all_finite()) {
    throw invalid_argument(std::string(kind_name(spec.kind)) + ": non-finite input");
  }
  switch (spec.kind) {
    case LayerKind::kConv: return detail::conv_forward(spec, params, x);
    case LayerKind::kDeconv: return detail::deconv_forward(spec, params, x);
    case LayerKind::kDepthwiseConv: return detail::depthwise_forward(spec, params, x);
    case LayerKind::kGdn:
    case LayerKind::kIgdn: {
      std::vector<T> beta, gamma;
      gdn_effective(params, beta, gamma);
      return gdn_apply(x, beta, gamma, spec.kind == LayerKind::kIgdn);
    }
    case LayerKind::kLeakyRelu: {
      FeatureMap<T> y = x;
      for (T& v : y.values()) v = v > T(0) ? v : T(kLeakySlope) * v;
      return y;
    }
    case LayerKind::kRelu: {
      FeatureMap<T> y = x;
      for (T& v : y.values()) v = std::max(v, T(0));
      return y;
    }
    case LayerKind::kSigmoid: {
      FeatureMap<T> y = x;
      for (T& v : y.values()) v = sigmoid(v);
      return y;
    }
  }
  throw invalid_argument("unknown layer kind");
}

/// Accumulates parameter gradients into `grads` (if non-null) and returns the
/// input gradient (empty map when need_dx is false). `y` is the forward output.
template <typename T>
FeatureMap<T> layer_backward(const LayerSpec& spec, const std::vector<Array<T>>& params,
                             const FeatureMap<T>& x, const FeatureMap<T>& y,
                             const FeatureMap<T>& gy, std::vector<Array<T>>* grads,
                             bool need_dx = true) {
  switch (spec.kind) {
    case LayerKind::kConv: return detail::conv_backward(spec, params, x, gy, grads, need_dx);
    case LayerKind::kDeconv: return detail::deconv_backward(spec, params, x, gy, grads, need_dx);
    case LayerKind::kDepthwiseConv:
      return detail::depthwise_backward(spec, params, x, gy, grads, need_dx);
    case LayerKind::kGdn:
    case LayerKind::kIgdn: {
      std::vector<T> beta, gamma;
      gdn_effective(params, beta, gamma);
      std::vector<T> dbeta(beta.size(), T(0)), dgamma(gamma.size(), T(0));
      FeatureMap<T> dx = gdn_apply_backward(x, beta, gamma, spec.kind == LayerKind::kIgdn, gy,
                                            grads ? &dbeta : nullptr,
                                            grads ? &dgamma : nullptr, need_dx);
      if (grads) {
        // chain through softplus: d softplus(v)/dv = sigmoid(v)
        for (std::size_t i = 0; i < dbeta.size(); ++i) {
          (*grads)[0][i] += dbeta[i] * sigmoid(params[0][i]);
        }
        for (std::size_t i = 0; i < dgamma.size(); ++i) {
          (*grads)[1][i] += dgamma[i] * sigmoid(params[1][i]);
        }
      }
      return dx;
    }
    case LayerKind::kLeakyRelu: {
      if (!need_dx) return {};
      FeatureMap<T> dx = gy;
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(x[i] > T(0))) dx[i] *= T(kLeakySlope);
      }
      return dx;
    }
    case LayerKind::kRelu: {
      if (!need_dx) return {};
      FeatureMap<T> dx = gy;
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(x[i] > T(0))) dx[i] = T(0);
      }
      return dx;
    }
    case LayerKind::kSigmoid: {
      if (!need_dx) return {};
      FeatureMap<T> dx = gy;
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (T(1) - y[i]);
      return dx;
    }
  }
  throw invalid_argument("unknown layer kind");
}

}  // namespace cbanet::nn
