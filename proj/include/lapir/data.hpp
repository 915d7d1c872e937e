#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lapir/checkpoint.hpp"
#include "lapir/color.hpp"
#include "lapir/metrics.hpp"
#include "lapir/pyramid.hpp"
#include "lapir/resize.hpp"

namespace lapir {

/// A training image as luminance in [0, 1] plus where it came from.
struct ImageRecord {
  std::string id;
  Plane luma;
  std::string provenance;
};

/// Loads every PNG/BMP in `dir` (sorted by name) and converts it to luminance.
inline std::vector<ImageRecord> load_image_records(const std::filesystem::path& dir) {
  std::vector<ImageRecord> out;
  for (const auto& file : list_images(dir)) {
    ImageRecord r;
    r.id = file.stem().string();
    r.luma = luminance(read_image(file));
    r.provenance = file.filename().string();
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Rotation counter-clockwise by quarter turns.
inline Plane rotate_quarter(const Plane& p, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  if (q == 0) return p;
  const bool swap = q % 2 == 1;
  Plane out(swap ? p.width : p.height, swap ? p.height : p.width);
  for (std::size_t y = 0; y < p.height; ++y) {
    for (std::size_t x = 0; x < p.width; ++x) {
      const double v = p(y, x);
      switch (q) {
        case 1: out(p.width - 1 - x, y) = v; break;
        case 2: out(p.height - 1 - y, p.width - 1 - x) = v; break;
        default: out(x, p.height - 1 - y) = v; break;
      }
    }
  }
  return out;
}

inline Plane flip_horizontal(const Plane& p) {
  Plane out(p.height, p.width);
  for (std::size_t y = 0; y < p.height; ++y) {
    for (std::size_t x = 0; x < p.width; ++x) out(y, p.width - 1 - x) = p(y, x);
  }
  return out;
}

inline Plane flip_vertical(const Plane& p) {
  Plane out(p.height, p.width);
  for (std::size_t y = 0; y < p.height; ++y) {
    std::copy_n(p.px.begin() + y * p.width, p.width, out.px.begin() + (p.height - 1 - y) * p.width);
  }
  return out;
}

struct AugmentOptions {
  std::vector<double> scales{1.0, 0.9, 0.8, 0.7, 0.6};
  std::size_t min_side = 8;
};

/// Scales x rotations {0, 90, 180, 270} x flips {none, horizontal, vertical},
/// 60 variants per input. Output is ordered by provenance string.
inline std::vector<ImageRecord> augment(const std::vector<ImageRecord>& images, const AugmentOptions& opt = {}) {
  if (images.empty()) throw Error("augment: no input images");
  static const char* kFlipNames[] = {"none", "h", "v"};
  std::vector<ImageRecord> out;
  for (const auto& img : images) {
    for (std::size_t si = 0; si < opt.scales.size(); ++si) {
      const double s = opt.scales[si];
      const auto h = static_cast<std::size_t>(std::llround(static_cast<double>(img.luma.height) * s));
      const auto w = static_cast<std::size_t>(std::llround(static_cast<double>(img.luma.width) * s));
      char tag[32];
      std::snprintf(tag, sizeof tag, "s%03d", static_cast<int>(std::lround(s * 100)));
      if (h < opt.min_side || w < opt.min_side) {
        std::cerr << "warning: augment: dropping " << img.id << " at scale " << s << " (" << h << "x" << w << ")\n";
        continue;
      }
      const Plane scaled = bicubic_resize(img.luma, h, w, true);
      for (int rot = 0; rot < 4; ++rot) {
        const Plane rotated = rotate_quarter(scaled, rot);
        for (int flip = 0; flip < 3; ++flip) {
          ImageRecord r;
          r.id = img.id;
          r.luma = flip == 0 ? rotated : flip == 1 ? flip_horizontal(rotated) : flip_vertical(rotated);
          r.provenance = img.provenance + "|" + tag + "|r" + std::to_string(rot * 90) + "|f" + kFlipNames[flip];
          out.push_back(std::move(r));
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const ImageRecord& a, const ImageRecord& b) { return a.provenance < b.provenance; });
  return out;
}

// ---------------------------------------------------------------------------
// Degradation and patches
// ---------------------------------------------------------------------------

/// Bicubic antialiased downscale by 1/scale after cropping to a multiple of scale.
inline Plane degrade(const Plane& hr, int scale) {
  const auto n = static_cast<std::size_t>(scale);
  const Plane cropped = crop_to_multiple(hr, n);
  return bicubic_resize(cropped, cropped.height / n, cropped.width / n, true);
}

struct PatchPair {
  Plane lr;
  Plane hr;
};

/// LR windows of side `lr_size` at stride `stride`, each paired with the HR
/// window of side scale*lr_size at stride scale*stride.
inline std::vector<PatchPair> extract_patches(const Plane& lr, const Plane& hr, int scale, std::size_t lr_size = 27,
                                              std::size_t stride = 14) {
  const auto n = static_cast<std::size_t>(scale);
  if (hr.height != n * lr.height || hr.width != n * lr.width) {
    throw Error("extract_patches: HR must be exactly " + std::to_string(n) + "x the LR size");
  }
  if (stride == 0) throw Error("extract_patches: stride must be positive");
  std::vector<PatchPair> pairs;
  if (lr.height < lr_size || lr.width < lr_size) return pairs;
  for (std::size_t y = 0; y + lr_size <= lr.height; y += stride) {
    for (std::size_t x = 0; x + lr_size <= lr.width; x += stride) {
      pairs.push_back({crop(lr, y, x, lr_size, lr_size), crop(hr, n * y, n * x, n * lr_size, n * lr_size)});
    }
  }
  return pairs;
}

/// Per-level labels (HR downscaled to r_s, the HR itself at the top) and
/// skips (LR upscaled to r_s). `resolutions` holds r_0 .. r_L.
struct LevelTargets {
  std::vector<Plane> labels;
  std::vector<Plane> skips;
};

inline LevelTargets make_level_targets(const Plane& hr_patch, const Plane& lr_patch,
                                       const std::vector<std::size_t>& resolutions) {
  if (resolutions.size() < 2) throw Error("make_level_targets: need at least one level");
  const std::size_t levels = resolutions.size() - 1;
  if (hr_patch.height != resolutions.back() || hr_patch.width != resolutions.back()) {
    throw Error("make_level_targets: HR patch does not match the top resolution");
  }
  LevelTargets t;
  for (std::size_t s = 1; s <= levels; ++s) {
    const std::size_t r = resolutions[s];
    t.labels.push_back(s == levels ? hr_patch : bicubic_resize(hr_patch, r, r, true));
    t.skips.push_back(bicubic_resize(lr_patch, r, r, false));
  }
  return t;
}

/// Seeded shuffle of [0, count) cut into batches; the last batch may be short.
inline std::vector<std::vector<std::size_t>> batch_order(std::size_t count, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw Error("batches: batch size must be positive");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < count; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training sets
// ---------------------------------------------------------------------------

struct PatchBatch {
  Tensor lr;
  std::vector<Tensor> labels;
  std::vector<Tensor> skips;
};

/// Patch pairs with their per-level targets, ready for batching.
class TrainingSet {
 public:
  TrainingSet() = default;
  TrainingSet(std::vector<PatchPair> pairs, int scale, std::size_t levels) : scale_(scale), levels_(levels) {
    if (pairs.empty()) throw Error("training set: no patch pairs");
    const std::size_t side = pairs.front().lr.height;
    resolutions_ = level_resolutions(side, scale, levels);
    for (const auto& p : pairs) {
      if (p.lr.height != side || p.lr.width != side) throw Error("training set: patches must share one square size");
      targets_.push_back(make_level_targets(p.hr, p.lr, resolutions_));
    }
    pairs_ = std::move(pairs);
  }

  std::size_t size() const { return pairs_.size(); }
  int scale() const { return scale_; }
  std::size_t levels() const { return levels_; }
  const std::vector<std::size_t>& resolutions() const { return resolutions_; }
  const std::vector<PatchPair>& pairs() const { return pairs_; }
  const std::vector<LevelTargets>& targets() const { return targets_; }

  PatchBatch batch(const std::vector<std::size_t>& indices) const {
    PatchBatch b;
    std::vector<const Plane*> lr;
    for (std::size_t i : indices) lr.push_back(&pairs_.at(i).lr);
    b.lr = stack_planes(lr);
    for (std::size_t s = 0; s < levels_; ++s) {
      std::vector<const Plane*> labels, skips;
      for (std::size_t i : indices) {
        labels.push_back(&targets_[i].labels[s]);
        skips.push_back(&targets_[i].skips[s]);
      }
      b.labels.push_back(stack_planes(labels));
      b.skips.push_back(stack_planes(skips));
    }
    return b;
  }

 private:
  int scale_ = 2;
  std::size_t levels_ = 1;
  std::vector<std::size_t> resolutions_;
  std::vector<PatchPair> pairs_;
  std::vector<LevelTargets> targets_;
};

// ---------------------------------------------------------------------------
// Preparation pipeline and patch cache
// ---------------------------------------------------------------------------

struct PreparedData {
  std::size_t source_images = 0;
  std::size_t augmented_images = 0;
  int scale = 2;
  std::size_t patch_size = 27;
  std::uint64_t seed = 0;
  std::vector<PatchPair> pairs;
  std::vector<std::string> provenance;  // per augmented image
};

/// augment -> degrade -> extract patches, in provenance order.
inline PreparedData prepare_patches(const std::vector<ImageRecord>& images, int scale, bool do_augment,
                                    std::size_t patch_size, std::size_t stride, std::uint64_t seed) {
  if (images.empty()) throw Error("prepare: no input images");
  PreparedData out;
  out.source_images = images.size();
  out.scale = scale;
  out.patch_size = patch_size;
  out.seed = seed;
  std::vector<ImageRecord> pool = do_augment ? augment(images) : images;
  out.augmented_images = pool.size();
  const auto n = static_cast<std::size_t>(scale);
  for (const auto& rec : pool) {
    out.provenance.push_back(rec.provenance);
    if (rec.luma.height < n || rec.luma.width < n) continue;
    const Plane hr = crop_to_multiple(rec.luma, n);
    const Plane lr = degrade(hr, scale);
    for (auto& p : extract_patches(lr, hr, scale, patch_size, stride)) out.pairs.push_back(std::move(p));
  }
  return out;
}

inline TensorArchive to_archive(const PreparedData& d) {
  if (d.pairs.empty()) throw Error("patch cache: no patch pairs to store");
  std::ostringstream os;
  os << "[cache]\nscale=" << d.scale << "\npatch_size=" << d.patch_size << "\npairs=" << d.pairs.size()
     << "\nsource_images=" << d.source_images << "\naugmented_images=" << d.augmented_images << "\nseed=" << d.seed
     << "\n";
  TensorArchive a;
  a.text = os.str();
  std::vector<const Plane*> lr, hr;
  for (const auto& p : d.pairs) {
    lr.push_back(&p.lr);
    hr.push_back(&p.hr);
  }
  a.tensors.emplace("lr", stack_planes(lr));
  a.tensors.emplace("hr", stack_planes(hr));
  return a;
}

inline PreparedData from_archive(const TensorArchive& a) {
  boost::property_tree::ptree tree;
  std::istringstream is(a.text);
  boost::property_tree::ini_parser::read_ini(is, tree);
  PreparedData d;
  d.scale = tree.get<int>("cache.scale");
  d.patch_size = tree.get<std::size_t>("cache.patch_size");
  d.source_images = tree.get<std::size_t>("cache.source_images");
  d.augmented_images = tree.get<std::size_t>("cache.augmented_images");
  d.seed = tree.get<std::uint64_t>("cache.seed");
  auto lr_it = a.tensors.find("lr");
  auto hr_it = a.tensors.find("hr");
  if (lr_it == a.tensors.end() || hr_it == a.tensors.end()) throw Error("patch cache: missing lr/hr records");
  const Tensor& lr = lr_it->second;
  const Tensor& hr = hr_it->second;
  if (lr.shape().n != hr.shape().n || hr.shape().h != lr.shape().h * static_cast<std::size_t>(d.scale)) {
    throw Error("patch cache: lr/hr records disagree with the stored scale");
  }
  for (std::size_t i = 0; i < lr.shape().n; ++i) d.pairs.push_back({to_plane(lr, i), to_plane(hr, i)});
  return d;
}

}  // namespace lapir
