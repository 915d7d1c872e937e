#pragma once

#include <algorithm>
#include <array>
#include <iostream>

#include "lapir/image.hpp"

namespace lapir {

namespace detail {

// Studio-swing BT.601, inputs in [0, 1], outputs scaled back to [0, 1].
inline constexpr std::array<std::array<double, 3>, 3> kRgbToYcc{{
    {65.481, 128.553, 24.966},
    {-37.797, -74.203, 112.0},
    {112.0, -93.786, -18.214},
}};
inline constexpr std::array<double, 3> kYccOffset{16.0, 128.0, 128.0};

inline std::array<std::array<double, 3>, 3> invert3(const std::array<std::array<double, 3>, 3>& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  std::array<std::array<double, 3>, 3> inv{};
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return inv;
}

inline const std::array<std::array<double, 3>, 3>& ycc_to_rgb_matrix() {
  static const auto inv = invert3(kRgbToYcc);
  return inv;
}

}  // namespace detail

inline std::array<double, 3> rgb_to_ycbcr(std::array<double, 3> rgb) {
  std::array<double, 3> out{};
  for (std::size_t r = 0; r < 3; ++r) {
    const auto& m = detail::kRgbToYcc[r];
    out[r] = (detail::kYccOffset[r] + m[0] * rgb[0] + m[1] * rgb[1] + m[2] * rgb[2]) / 255.0;
  }
  return out;
}

inline std::array<double, 3> ycbcr_to_rgb(std::array<double, 3> ycc) {
  const auto& inv = detail::ycc_to_rgb_matrix();
  std::array<double, 3> centered{};
  for (std::size_t r = 0; r < 3; ++r) centered[r] = ycc[r] * 255.0 - detail::kYccOffset[r];
  std::array<double, 3> out{};
  for (std::size_t r = 0; r < 3; ++r) {
    out[r] = inv[r][0] * centered[0] + inv[r][1] * centered[1] + inv[r][2] * centered[2];
  }
  return out;
}

/// Converts an RGB image; values outside [0, 1] are clamped with a warning.
inline ColorImage rgb_to_ycbcr(const ColorImage& rgb) {
  ColorImage out;
  for (auto& p : out.ch) p = Plane(rgb.height(), rgb.width());
  bool clamped = false;
  for (std::size_t i = 0; i < rgb.ch[0].px.size(); ++i) {
    std::array<double, 3> px{};
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = rgb.ch[c].px[i];
      px[c] = std::clamp(v, 0.0, 1.0);
      clamped |= px[c] != v;
    }
    const auto ycc = rgb_to_ycbcr(px);
    for (std::size_t c = 0; c < 3; ++c) out.ch[c].px[i] = ycc[c];
  }
  if (clamped) std::cerr << "warning: rgb_to_ycbcr clamped out-of-range input values\n";
  return out;
}

inline ColorImage ycbcr_to_rgb(const ColorImage& ycc) {
  ColorImage out;
  for (auto& p : out.ch) p = Plane(ycc.height(), ycc.width());
  for (std::size_t i = 0; i < ycc.ch[0].px.size(); ++i) {
    const auto rgb = ycbcr_to_rgb({ycc.ch[0].px[i], ycc.ch[1].px[i], ycc.ch[2].px[i]});
    for (std::size_t c = 0; c < 3; ++c) out.ch[c].px[i] = rgb[c];
  }
  return out;
}

inline Plane luminance(const ColorImage& rgb) { return rgb_to_ycbcr(rgb).ch[0]; }

}  // namespace lapir
