#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lapir/layers.hpp"
#include "lapir/rank_loss.hpp"
#include "lapir/resize.hpp"

namespace lapir {

/// Architecture and loss hyperparameters of the pyramid network.
struct NetworkConfig {
  int scale = 2;
  std::size_t levels = 2;
  std::size_t blocks_per_level = 1;
  std::size_t channels = 16;
  std::size_t input_patch = 27;
  std::size_t branch_width = 0;  // 0 selects channels / 4
  RankParams rank;
  LossWeights loss;

  std::size_t branch() const { return branch_width == 0 ? std::max<std::size_t>(channels / 4, 1) : branch_width; }

  void validate() const {
    if (scale < 2 || scale > 4) throw Error("network: scale must be 2, 3 or 4");
    if (levels == 0) throw Error("network: at least one pyramid level is required");
    if (blocks_per_level == 0) throw Error("network: at least one block per level is required");
    if (channels == 0) throw Error("network: channel width must be positive");
    if (input_patch < 2) throw Error("network: input patch must be at least 2 pixels");
    rank.validate();
    if (loss.beta < 0.0) throw Error("network: beta must be non-negative");
    for (double k : loss.level_weights) {
      if (k <= 0.0) throw Error("network: level weights must be positive");
    }
  }
};

/// Per-level side lengths r_0 .. r_L: r_0 = input, r_L = scale * input and
/// r_s = round(input * scale^(s/L)) in between. Must be strictly increasing.
inline std::vector<std::size_t> level_resolutions(std::size_t input, int scale, std::size_t levels) {
  if (input < 2) throw Error("level_resolutions: input side must be at least 2");
  std::vector<std::size_t> r(levels + 1);
  r[0] = input;
  r[levels] = input * static_cast<std::size_t>(scale);
  for (std::size_t s = 1; s < levels; ++s) {
    const double exact = static_cast<double>(input) *
                         std::pow(static_cast<double>(scale), static_cast<double>(s) / static_cast<double>(levels));
    r[s] = static_cast<std::size_t>(std::llround(exact));
  }
  for (std::size_t s = 1; s <= levels; ++s) {
    if (r[s] <= r[s - 1]) {
      throw Error("level_resolutions: input " + std::to_string(input) + " with " + std::to_string(levels) +
                  " levels gives non-increasing sizes " + std::to_string(r[s - 1]) + " -> " +
                  std::to_string(r[s]));
    }
  }
  return r;
}

/// Fractional stride taking side a to side b with a 3x3, pad-1 transposed conv.
inline Rational level_stride(std::size_t from, std::size_t to) {
  return Rational(static_cast<std::int64_t>(to) - 1, static_cast<std::int64_t>(from) - 1);
}

enum class ParamKind { conv_weight, conv_bias, up_weight, up_bias, bn_gamma, bn_beta, bn_running_mean, bn_running_var };

struct Param {
  Tensor tensor;
  ParamKind kind = ParamKind::conv_weight;
  std::size_t level = 0;  // 0 is the input stem

  bool trainable() const { return kind != ParamKind::bn_running_mean && kind != ParamKind::bn_running_var; }
  bool weight_decayed() const { return kind == ParamKind::conv_weight || kind == ParamKind::up_weight; }
  bool upsampling() const { return kind == ParamKind::up_weight || kind == ParamKind::up_bias; }
  bool is_filter_or_bias() const {
    return kind == ParamKind::conv_weight || kind == ParamKind::conv_bias || kind == ParamKind::up_weight ||
           kind == ParamKind::up_bias;
  }
};

/// Named network tensors, ordered by name.
class ParamStore {
 public:
  void add(const std::string& name, Param p) {
    if (!entries_.emplace(name, std::move(p)).second) throw Error("param store: duplicate name " + name);
  }
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Param& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("param store: no parameter named " + name);
    return it->second;
  }
  Tensor tensor(const std::string& name) const { return at(name).tensor; }
  const std::map<std::string, Param>& entries() const { return entries_; }
  std::map<std::string, Param>& entries() { return entries_; }

 private:
  std::map<std::string, Param> entries_;
};

struct LevelOutput {
  Tensor features;
  Tensor residual;  // undefined unless requested
};

class Network {
 public:
  static Network build(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    level_resolutions(cfg.input_patch, cfg.scale, cfg.levels);
    Network net;
    net.cfg_ = cfg;
    net.seed_ = seed;
    const std::size_t C = cfg.channels, B = cfg.branch();
    net.add_conv("stem.conv", 1, C, 3, ParamKind::conv_weight, 0);
    for (std::size_t s = 1; s <= cfg.levels; ++s) {
      const std::string lv = "level" + std::to_string(s);
      net.add_conv(lv + ".up", C, C, 3, ParamKind::up_weight, s);
      for (std::size_t b = 0; b < cfg.blocks_per_level; ++b) {
        const std::string blk = lv + ".block" + std::to_string(b);
        net.add_bn(blk + ".bn", C, s);
        net.add_conv(blk + ".a.conv0", C, B, 1, ParamKind::conv_weight, s);
        net.add_conv(blk + ".b.conv0", C, B, 1, ParamKind::conv_weight, s);
        net.add_conv(blk + ".b.conv1", B, B, 3, ParamKind::conv_weight, s);
        net.add_conv(blk + ".c.conv0", C, B, 1, ParamKind::conv_weight, s);
        net.add_conv(blk + ".c.conv1", B, B, 3, ParamKind::conv_weight, s);
        net.add_conv(blk + ".c.conv2", B, B, 3, ParamKind::conv_weight, s);
        net.add_conv(blk + ".proj", 3 * B, C, 1, ParamKind::conv_weight, s);
      }
      net.add_bn(lv + ".recon_bn", C, s);
      net.add_conv(lv + ".recon", C, 1, 3, ParamKind::conv_weight, s, /*zero=*/true);
    }
    return net;
  }

  /// Independent copy (parameters are shared handles otherwise).
  Network clone() const {
    Network copy = *this;
    for (auto& [name, p] : copy.params_.entries()) {
      const bool tracked = p.tensor.requires_grad();
      p.tensor = p.tensor.detach();
      p.tensor.set_requires_grad(tracked);
    }
    return copy;
  }

  const NetworkConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Number of trainable scalars; a pure function of the config.
  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, p] : params_.entries()) {
      if (p.trainable()) total += p.tensor.numel();
    }
    return total;
  }

  /// Sets every filter and bias to zero, leaving normalization untouched.
  void zero_filters() {
    for (auto& [name, p] : params_.entries()) {
      if (p.is_filter_or_bias()) {
        auto v = p.tensor.mutable_data();
        std::fill(v.begin(), v.end(), 0.0);
      }
    }
  }

  /// Enables gradient tracking exactly for trainable parameters accepted by `pred`.
  template <class Pred>
  void set_trainable(Pred pred) {
    for (auto& [name, p] : params_.entries()) p.tensor.set_requires_grad(p.trainable() && pred(name, p));
  }

  void zero_grad() {
    for (auto& [name, p] : params_.entries()) p.tensor.zero_grad();
  }

  // -------------------------------------------------------------------------
  // Forward building blocks
  // -------------------------------------------------------------------------

  Tensor stem(const Tensor& lr) const {
    if (lr.shape().c != 1) throw Error("network: expected a luminance input, got " + lr.shape().str());
    return conv2d(lr, conv("stem.conv"));
  }

  /// Pre-activation inception-residual block: y = F(x) + x.
  Tensor block_forward(const Tensor& x, std::size_t level, std::size_t block, Mode mode) const {
    check_level(level);
    if (block >= cfg_.blocks_per_level) throw Error("network: block index out of range");
    if (x.shape().c != cfg_.channels) {
      throw Error("block_forward: expected " + std::to_string(cfg_.channels) + " channels, got " + x.shape().str());
    }
    const std::string blk = "level" + std::to_string(level) + ".block" + std::to_string(block);
    BatchNormParams bn = bn_params(blk + ".bn");
    Tensor a = relu(batch_norm(x, bn, mode));
    Tensor ya = conv2d(a, conv(blk + ".a.conv0"));
    Tensor yb = conv2d(relu(conv2d(a, conv(blk + ".b.conv0"))), conv(blk + ".b.conv1"));
    Tensor yc = conv2d(relu(conv2d(a, conv(blk + ".c.conv0"))), conv(blk + ".c.conv1"));
    yc = conv2d(relu(yc), conv(blk + ".c.conv2"));
    Tensor mixed = conv2d(concat_channels({ya, yb, yc}), conv(blk + ".proj"));
    return add(mixed, x);
  }

  /// Upsamples features to (out_h, out_w), runs the level's blocks and
  /// optionally the reconstruction conv producing a residual image.
  LevelOutput level_forward(const Tensor& feat, std::size_t level, std::size_t out_h, std::size_t out_w, Mode mode,
                            bool emit_residual) const {
    check_level(level);
    const Shape& fs = feat.shape();
    if (fs.c != cfg_.channels) throw Error("level_forward: channel mismatch " + fs.str());
    if (fs.h < 2 || fs.w < 2 || out_h <= fs.h || out_w <= fs.w) {
      throw Error("level_forward: cannot upsample " + fs.str() + " to " + std::to_string(out_h) + "x" +
                  std::to_string(out_w));
    }
    const std::string lv = "level" + std::to_string(level);
    TransposedConvParams up{params_.tensor(lv + ".up.weight"), params_.tensor(lv + ".up.bias"),
                            level_stride(fs.h, out_h), level_stride(fs.w, out_w), 1};
    LevelOutput out;
    out.features = transposed_conv(feat, up);
    if (out.features.shape().h != out_h || out.features.shape().w != out_w) {
      throw Error("level_forward: upsampling produced " + out.features.shape().str());
    }
    for (std::size_t b = 0; b < cfg_.blocks_per_level; ++b) out.features = block_forward(out.features, level, b, mode);
    if (emit_residual) out.residual = reconstruct(out.features, level, mode);
    return out;
  }

  /// BN, then a 3x3 conv to one channel. The conv starts at zero, so an
  /// untrained network reproduces bicubic upscaling.
  Tensor reconstruct(const Tensor& feat, std::size_t level, Mode mode) const {
    check_level(level);
    const std::string lv = "level" + std::to_string(level);
    BatchNormParams bn = bn_params(lv + ".recon_bn");
    return conv2d(batch_norm(feat, bn, mode), conv(lv + ".recon"));
  }

  /// Training-mode pass: one prediction (residual + skip) per level.
  std::vector<Tensor> forward_train(const Tensor& lr, const std::vector<Tensor>& skips, Mode mode = Mode::train) const {
    if (skips.size() != cfg_.levels) {
      throw Error("forward_train: expected " + std::to_string(cfg_.levels) + " skip images, got " +
                  std::to_string(skips.size()));
    }
    const auto rh = level_resolutions(lr.shape().h, cfg_.scale, cfg_.levels);
    const auto rw = level_resolutions(lr.shape().w, cfg_.scale, cfg_.levels);
    std::vector<Tensor> preds;
    Tensor feat = stem(lr);
    for (std::size_t s = 1; s <= cfg_.levels; ++s) {
      const Shape want{lr.shape().n, 1, rh[s], rw[s]};
      if (skips[s - 1].shape() != want) {
        throw Error("forward_train: level " + std::to_string(s) + " skip is " + skips[s - 1].shape().str() +
                    ", expected " + want.str());
      }
      LevelOutput lo = level_forward(feat, s, rh[s], rw[s], mode, true);
      preds.push_back(add(lo.residual, skips[s - 1]));
      feat = lo.features;
    }
    return preds;
  }

  /// Inference on a luminance plane of any size >= 8x8. Intermediate
  /// reconstruction layers are skipped; only the final residual is added to
  /// the bicubic upsampling of the input.
  Plane forward_infer(const Plane& lr, bool clamp_output = true) const {
    if (lr.height < 8 || lr.width < 8) {
      throw Error("forward_infer: input " + std::to_string(lr.height) + "x" + std::to_string(lr.width) +
                  " is smaller than 8x8");
    }
    const auto rh = level_resolutions(lr.height, cfg_.scale, cfg_.levels);
    const auto rw = level_resolutions(lr.width, cfg_.scale, cfg_.levels);
    Tensor feat = stem(to_tensor(lr));
    Tensor residual;
    for (std::size_t s = 1; s <= cfg_.levels; ++s) {
      LevelOutput lo = level_forward(feat, s, rh[s], rw[s], Mode::eval, s == cfg_.levels);
      feat = lo.features;
      residual = lo.residual;
    }
    Plane out = bicubic_resize(lr, rh.back(), rw.back(), false);
    auto res = residual.data();
    for (std::size_t i = 0; i < out.px.size(); ++i) {
      out.px[i] += res[i];
      if (clamp_output) out.px[i] = std::clamp(out.px[i], 0.0, 1.0);
    }
    return out;
  }

 private:
  static std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    return h;
  }

  void add_conv(const std::string& name, std::size_t in_c, std::size_t out_c, std::size_t k, ParamKind kind,
                std::size_t level, bool zero = false) {
    const ParamKind bias_kind = kind == ParamKind::up_weight ? ParamKind::up_bias : ParamKind::conv_bias;
    // Initial weights are held at checkpoint (32-bit) precision so a saved
    // untrained network reloads bit-exactly.
    Tensor w = zero ? Tensor(Shape{out_c, in_c, k, k}, 0.0) : he_init(Shape{out_c, in_c, k, k}, in_c * k * k, seed_ ^ fnv1a(name));
    round_to_float(w.mutable_data());
    params_.add(name + ".weight", Param{w, kind, level});
    params_.add(name + ".bias", Param{Tensor(Shape{1, out_c, 1, 1}, 0.0), bias_kind, level});
  }

  void add_bn(const std::string& name, std::size_t c, std::size_t level) {
    params_.add(name + ".gamma", Param{Tensor(Shape{1, c, 1, 1}, 1.0), ParamKind::bn_gamma, level});
    params_.add(name + ".beta", Param{Tensor(Shape{1, c, 1, 1}, 0.0), ParamKind::bn_beta, level});
    params_.add(name + ".running_mean", Param{Tensor(Shape{1, c, 1, 1}, 0.0), ParamKind::bn_running_mean, level});
    params_.add(name + ".running_var", Param{Tensor(Shape{1, c, 1, 1}, 1.0), ParamKind::bn_running_var, level});
  }

  ConvParams conv(const std::string& name) const {
    return ConvParams::same(params_.tensor(name + ".weight"), params_.tensor(name + ".bias"));
  }

  BatchNormParams bn_params(const std::string& name) const {
    BatchNormParams p;
    p.gamma = params_.tensor(name + ".gamma");
    p.beta = params_.tensor(name + ".beta");
    p.running_mean = params_.tensor(name + ".running_mean");
    p.running_var = params_.tensor(name + ".running_var");
    return p;
  }

  void check_level(std::size_t level) const {
    if (level == 0 || level > cfg_.levels) throw Error("network: level " + std::to_string(level) + " out of range");
  }

  NetworkConfig cfg_;
  std::uint64_t seed_ = 0;
  ParamStore params_;
};

}  // namespace lapir
