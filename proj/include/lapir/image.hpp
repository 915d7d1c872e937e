#pragma once

#include <png.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "lapir/tensor.hpp"

namespace lapir {

/// Single-channel floating image, row-major.
struct Plane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> px;

  Plane() = default;
  Plane(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), px(h * w, fill) {}
  Plane(std::size_t h, std::size_t w, std::vector<double> values) : height(h), width(w), px(std::move(values)) {
    if (px.size() != h * w) throw Error("plane: value count does not match dims");
  }

  double& operator()(std::size_t y, std::size_t x) { return px[y * width + x]; }
  double operator()(std::size_t y, std::size_t x) const { return px[y * width + x]; }
  bool empty() const { return px.empty(); }
  friend bool operator==(const Plane&, const Plane&) = default;
};

/// Three planes; interpretation (RGB or YCbCr) is up to the caller.
struct ColorImage {
  std::array<Plane, 3> ch;
  std::size_t height() const { return ch[0].height; }
  std::size_t width() const { return ch[0].width; }
};

/// Copies of the window [y0, y0+h) x [x0, x0+w).
inline Plane crop(const Plane& p, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > p.height || x0 + w > p.width) throw Error("crop: window exceeds image");
  Plane out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(p.px.begin() + (y0 + y) * p.width + x0, w, out.px.begin() + y * w);
  }
  return out;
}

/// Stacks equally-sized planes into an (N, 1, H, W) tensor.
inline Tensor stack_planes(const std::vector<const Plane*>& planes) {
  if (planes.empty()) throw Error("stack_planes: no planes");
  const std::size_t h = planes.front()->height, w = planes.front()->width;
  std::vector<double> values;
  values.reserve(planes.size() * h * w);
  for (const Plane* p : planes) {
    if (p->height != h || p->width != w) throw Error("stack_planes: mixed plane sizes");
    values.insert(values.end(), p->px.begin(), p->px.end());
  }
  return Tensor(Shape{planes.size(), 1, h, w}, std::move(values));
}

inline Tensor to_tensor(const Plane& p) { return stack_planes({&p}); }

/// Plane at (n, c) of a tensor.
inline Plane to_plane(const Tensor& t, std::size_t n = 0, std::size_t c = 0) {
  const Shape& s = t.shape();
  auto begin = t.data().begin() + static_cast<std::ptrdiff_t>((n * s.c + c) * s.plane());
  return Plane(s.h, s.w, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(s.plane())));
}

// ---------------------------------------------------------------------------
// 8-bit image file I/O (PNG via libpng, uncompressed 24/32-bit BMP)
// ---------------------------------------------------------------------------

namespace detail {

inline ColorImage from_interleaved(const std::vector<std::uint8_t>& bytes, std::size_t h, std::size_t w,
                                   std::size_t channels) {
  ColorImage img;
  for (auto& p : img.ch) p = Plane(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t src = channels >= 3 ? c : 0;
      img.ch[c].px[i] = bytes[i * channels + src] / 255.0;
    }
  }
  return img;
}

inline std::uint8_t to_byte(double v) {
  const double s = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(s);
}

inline ColorImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw Error("read_png: " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error("read_png: " + path.string() + ": " + msg);
  }
  return from_interleaved(buf, image.height, image.width, 3);
}

inline void write_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, std::size_t h,
                      std::size_t w) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw Error("write_png: " + path.string() + ": " + image.message);
  }
}

inline std::uint32_t le32(const std::uint8_t* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline ColorImage read_bmp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_bmp: cannot open " + path.string());
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file.size() < 54 || file[0] != 'B' || file[1] != 'M') throw Error("read_bmp: " + path.string() + ": not a BMP");
  const std::uint32_t offset = le32(&file[10]);
  const auto width = static_cast<std::int32_t>(le32(&file[18]));
  const auto height_raw = static_cast<std::int32_t>(le32(&file[22]));
  const std::uint16_t bpp = static_cast<std::uint16_t>(file[28] | (file[29] << 8));
  const std::uint32_t compression = le32(&file[30]);
  if ((bpp != 24 && bpp != 32) || (compression != 0 && compression != 3) || width <= 0 || height_raw == 0) {
    throw Error("read_bmp: " + path.string() + ": only uncompressed 24/32-bit BMP is supported");
  }
  const bool bottom_up = height_raw > 0;
  const std::size_t h = static_cast<std::size_t>(bottom_up ? height_raw : -height_raw);
  const std::size_t w = static_cast<std::size_t>(width);
  const std::size_t bytes_pp = bpp / 8;
  const std::size_t stride = (w * bytes_pp + 3) & ~std::size_t{3};
  if (offset + stride * h > file.size()) throw Error("read_bmp: " + path.string() + ": truncated pixel data");
  std::vector<std::uint8_t> rgb(h * w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t src_row = bottom_up ? h - 1 - y : y;
    const std::uint8_t* row = &file[offset + src_row * stride];
    for (std::size_t x = 0; x < w; ++x) {
      rgb[(y * w + x) * 3 + 0] = row[x * bytes_pp + 2];
      rgb[(y * w + x) * 3 + 1] = row[x * bytes_pp + 1];
      rgb[(y * w + x) * 3 + 2] = row[x * bytes_pp + 0];
    }
  }
  return from_interleaved(rgb, h, w, 3);
}

inline void write_bmp(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, std::size_t h,
                      std::size_t w) {
  const std::size_t stride = (w * 3 + 3) & ~std::size_t{3};
  const auto data_size = static_cast<std::uint32_t>(stride * h);
  std::vector<std::uint8_t> file(54 + data_size, 0);
  auto put32 = [&](std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) file[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  };
  file[0] = 'B';
  file[1] = 'M';
  put32(2, 54 + data_size);
  put32(10, 54);
  put32(14, 40);
  put32(18, static_cast<std::uint32_t>(w));
  put32(22, static_cast<std::uint32_t>(h));
  file[26] = 1;
  file[28] = 24;
  put32(34, data_size);
  for (std::size_t y = 0; y < h; ++y) {
    std::uint8_t* row = &file[54 + (h - 1 - y) * stride];
    for (std::size_t x = 0; x < w; ++x) {
      row[x * 3 + 0] = rgb[(y * w + x) * 3 + 2];
      row[x * 3 + 1] = rgb[(y * w + x) * 3 + 1];
      row[x * 3 + 2] = rgb[(y * w + x) * 3 + 0];
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_bmp: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
}

inline std::string lower_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

}  // namespace detail

inline bool is_supported_image(const std::filesystem::path& p) {
  const std::string ext = detail::lower_extension(p);
  return ext == ".png" || ext == ".bmp";
}

/// Loads an 8-bit PNG or BMP as RGB planes in [0, 1]. Gray images are
/// replicated into all three channels.
inline ColorImage read_image(const std::filesystem::path& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".png") return detail::read_png(path);
  if (ext == ".bmp") return detail::read_bmp(path);
  throw Error("read_image: unsupported format " + path.string());
}

/// Writes RGB planes quantized to 8 bits; format chosen by extension.
inline void write_image(const std::filesystem::path& path, const ColorImage& img) {
  const std::size_t h = img.height(), w = img.width();
  std::vector<std::uint8_t> rgb(h * w * 3);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < 3; ++c) rgb[i * 3 + c] = detail::to_byte(img.ch[c].px[i]);
  }
  const std::string ext = detail::lower_extension(path);
  if (ext == ".png") {
    detail::write_png(path, rgb, h, w);
  } else if (ext == ".bmp") {
    detail::write_bmp(path, rgb, h, w);
  } else {
    throw Error("write_image: unsupported format " + path.string());
  }
}

/// Supported image files in a directory, sorted by filename.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_supported_image(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace lapir
