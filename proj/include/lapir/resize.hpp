#pragma once

#include <cmath>
#include <vector>

#include "lapir/image.hpp"

namespace lapir {

/// Keys cubic convolution kernel with a = -0.5.
inline double keys_cubic(double x) {
  const double ax = std::abs(x);
  const double ax2 = ax * ax;
  const double ax3 = ax2 * ax;
  if (ax <= 1.0) return 1.5 * ax3 - 2.5 * ax2 + 1.0;
  if (ax <= 2.0) return -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0;
  return 0.0;
}

/// Source taps of one output sample along one axis.
struct ResampleTaps {
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

/// Normalized cubic weights mapping `in_len` samples onto `out_len`. For
/// downscaling with antialiasing the kernel is stretched by 1/scale.
/// Out-of-range taps are clamped to the edge sample.
inline std::vector<ResampleTaps> resample_taps(std::size_t in_len, std::size_t out_len, bool antialias) {
  const double scale = static_cast<double>(out_len) / static_cast<double>(in_len);
  const bool widen = antialias && scale < 1.0;
  const double support = widen ? 4.0 / scale : 4.0;
  const auto taps = static_cast<std::size_t>(std::ceil(support)) + 2;
  std::vector<ResampleTaps> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    // 1-based output coordinate mapped to 1-based input coordinate.
    const double u = static_cast<double>(i + 1) / scale + 0.5 * (1.0 - 1.0 / scale);
    const auto left = static_cast<std::ptrdiff_t>(std::floor(u - support / 2.0));
    ResampleTaps& t = out[i];
    double total = 0.0;
    for (std::size_t k = 0; k < taps; ++k) {
      const std::ptrdiff_t pos = left + static_cast<std::ptrdiff_t>(k);
      const double d = u - static_cast<double>(pos);
      const double wgt = widen ? scale * keys_cubic(scale * d) : keys_cubic(d);
      if (wgt == 0.0) continue;
      const std::ptrdiff_t clamped = std::clamp<std::ptrdiff_t>(pos, 1, static_cast<std::ptrdiff_t>(in_len));
      t.index.push_back(static_cast<std::size_t>(clamped - 1));
      t.weight.push_back(wgt);
      total += wgt;
    }
    for (double& w : t.weight) w /= total;
  }
  return out;
}

namespace detail {

inline Plane resize_width(const Plane& src, std::size_t out_w, bool antialias) {
  if (out_w == src.width) return src;
  const auto taps = resample_taps(src.width, out_w, antialias);
  Plane dst(src.height, out_w);
  for (std::size_t y = 0; y < src.height; ++y) {
    const double* row = src.px.data() + y * src.width;
    for (std::size_t x = 0; x < out_w; ++x) {
      const ResampleTaps& t = taps[x];
      double acc = 0.0;
      for (std::size_t k = 0; k < t.index.size(); ++k) acc += t.weight[k] * row[t.index[k]];
      dst(y, x) = acc;
    }
  }
  return dst;
}

inline Plane resize_height(const Plane& src, std::size_t out_h, bool antialias) {
  if (out_h == src.height) return src;
  const auto taps = resample_taps(src.height, out_h, antialias);
  Plane dst(out_h, src.width);
  for (std::size_t y = 0; y < out_h; ++y) {
    const ResampleTaps& t = taps[y];
    for (std::size_t x = 0; x < src.width; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < t.index.size(); ++k) acc += t.weight[k] * src(t.index[k], x);
      dst(y, x) = acc;
    }
  }
  return dst;
}

}  // namespace detail

/// Separable bicubic resampling (rows, then columns). Antialiasing only
/// affects axes that shrink.
inline Plane bicubic_resize(const Plane& img, std::size_t out_h, std::size_t out_w, bool antialias = true) {
  if (out_h == 0 || out_w == 0) {
    throw Error("bicubic_resize: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                " must be positive");
  }
  if (img.empty()) throw Error("bicubic_resize: empty source image");
  return detail::resize_height(detail::resize_width(img, out_w, antialias), out_h, antialias);
}

/// Same as bicubic_resize but resampling columns before rows.
inline Plane bicubic_resize_columns_first(const Plane& img, std::size_t out_h, std::size_t out_w,
                                          bool antialias = true) {
  if (out_h == 0 || out_w == 0) throw Error("bicubic_resize: target dims must be positive");
  return detail::resize_width(detail::resize_height(img, out_h, antialias), out_w, antialias);
}

inline ColorImage bicubic_resize(const ColorImage& img, std::size_t out_h, std::size_t out_w,
                                 bool antialias = true) {
  ColorImage out;
  for (std::size_t c = 0; c < 3; ++c) out.ch[c] = bicubic_resize(img.ch[c], out_h, out_w, antialias);
  return out;
}

}  // namespace lapir
