#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "lapir/image.hpp"

namespace lapir {

/// Removes `border` pixels from every side.
inline Plane crop_border(const Plane& img, std::size_t border) {
  if (border == 0) return img;
  if (img.height <= 2 * border || img.width <= 2 * border) {
    throw Error("crop_border: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                " is too small for a border of " + std::to_string(border));
  }
  return crop(img, border, border, img.height - 2 * border, img.width - 2 * border);
}

/// Crops the bottom/right so both sides are multiples of `scale`.
inline Plane crop_to_multiple(const Plane& img, std::size_t scale) {
  const std::size_t h = img.height - img.height % scale, w = img.width - img.width % scale;
  if (h == 0 || w == 0) throw Error("crop_to_multiple: image smaller than the scale factor");
  return crop(img, 0, 0, h, w);
}

inline double mean_squared_error(const Plane& a, const Plane& b) {
  if (a.height != b.height || a.width != b.width) {
    throw Error("metric: shape mismatch " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                std::to_string(b.height) + "x" + std::to_string(b.width));
  }
  if (a.px.empty()) throw Error("metric: empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.px.size(); ++i) {
    const double d = a.px[i] - b.px[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.px.size());
}

/// 10 log10(peak^2 / MSE); identical images give +infinity.
inline double psnr(const Plane& a, const Plane& b, double peak = 1.0) {
  const double m = mean_squared_error(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

namespace detail {

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - c;
    g[i] = std::exp(-(x * x) / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Separable "valid" filtering: output shrinks by size-1 per axis.
inline Plane filter_valid(const Plane& img, const std::vector<double>& k) {
  const std::size_t ks = k.size();
  Plane rows(img.height, img.width - ks + 1);
  for (std::size_t y = 0; y < rows.height; ++y) {
    for (std::size_t x = 0; x < rows.width; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < ks; ++i) acc += k[i] * img(y, x + i);
      rows(y, x) = acc;
    }
  }
  Plane out(img.height - ks + 1, rows.width);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < ks; ++i) acc += k[i] * rows(y + i, x);
      out(y, x) = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03 and dynamic range 1, averaged over the valid map.
inline double ssim(const Plane& a, const Plane& b) {
  constexpr std::size_t kWindow = 11;
  if (a.height != b.height || a.width != b.width) throw Error("ssim: shape mismatch");
  if (a.height < kWindow || a.width < kWindow) throw Error("ssim: image smaller than the 11x11 window");
  const auto g = detail::gaussian_window(kWindow, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  Plane aa(a.height, a.width), bb(a.height, a.width), ab(a.height, a.width);
  for (std::size_t i = 0; i < a.px.size(); ++i) {
    aa.px[i] = a.px[i] * a.px[i];
    bb.px[i] = b.px[i] * b.px[i];
    ab.px[i] = a.px[i] * b.px[i];
  }
  const Plane mu_a = detail::filter_valid(a, g), mu_b = detail::filter_valid(b, g);
  const Plane e_aa = detail::filter_valid(aa, g), e_bb = detail::filter_valid(bb, g), e_ab = detail::filter_valid(ab, g);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.px.size(); ++i) {
    const double ma = mu_a.px[i], mb = mu_b.px[i];
    const double va = e_aa.px[i] - ma * ma, vb = e_bb.px[i] - mb * mb, cov = e_ab.px[i] - ma * mb;
    total += ((2.0 * (ma * mb) + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.px.size());
}

}  // namespace lapir
