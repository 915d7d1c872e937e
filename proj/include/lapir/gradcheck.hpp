#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lapir/pyramid.hpp"

namespace lapir {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool pass() const { return max_rel_error < tolerance; }
};

namespace detail {

/// Uniform values in [lo, hi) nudged at least `gap` away from zero.
inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, double gap = 0.05) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(s.numel());
  for (double& x : v) {
    x = u(rng);
    if (std::abs(x) < gap) x = x < 0 ? -gap : gap;
  }
  return Tensor(s, std::move(v));
}

}  // namespace detail

/// Analytic-vs-central-difference checks of every differentiable building
/// block, the inception-residual block, the losses and a small end-to-end net.
inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> out;
  auto check = [&](const std::string& name, Tensor x, const std::function<Tensor(const Tensor&)>& f, double tol = 1e-4) {
    out.push_back({name, grad_check(f, x), tol});
  };
  using detail::random_tensor;

  {
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor r = random_tensor({2, 3, 4, 4}, rng);
    check("relu", x, [&](const Tensor& t) { return sum(mul(relu(t), r)); });
    check("mul", x, [&](const Tensor& t) { return sum(mul(mul(t, t), r)); });
    Tensor y = random_tensor({2, 2, 4, 4}, rng);
    Tensor rc = random_tensor({2, 5, 4, 4}, rng);
    check("concat_channels", x, [&](const Tensor& t) { return sum(mul(concat_channels({t, y}), rc)); });
  }
  {
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({1, 3, 1, 1}, rng);
    Tensor r = random_tensor({1, 3, 5, 5}, rng);
    check("conv2d.input", x, [&](const Tensor& t) { return sum(mul(conv2d(t, ConvParams::same(w, b)), r)); });
    check("conv2d.weight", w, [&](const Tensor& t) { return sum(mul(conv2d(x, ConvParams::same(t, b)), r)); });
    check("conv2d.bias", b, [&](const Tensor& t) { return sum(mul(conv2d(x, ConvParams::same(w, t)), r)); });
    Tensor w1 = random_tensor({3, 2, 1, 1}, rng);
    check("conv2d_1x1.weight", w1, [&](const Tensor& t) { return sum(mul(conv2d(x, ConvParams::same(t, b)), r)); });
  }
  {
    Tensor x = random_tensor({1, 2, 4, 5}, rng);
    Tensor w = random_tensor({2, 2, 3, 3}, rng);
    Tensor b = random_tensor({1, 2, 1, 1}, rng);
    const Rational fh(3, 2), fw(5, 4);
    TransposedConvParams p{w, b, fh, fw, 1};
    Tensor probe = transposed_conv(x, p);
    Tensor r = random_tensor(probe.shape(), rng);
    Tensor rz = random_tensor(zero_insert(x, fh, fw).shape(), rng);
    check("zero_insert", x, [&](const Tensor& t) { return sum(mul(zero_insert(t, fh, fw), rz)); });
    check("transposed_conv.input", x, [&](const Tensor& t) {
      return sum(mul(transposed_conv(t, TransposedConvParams{w, b, fh, fw, 1}), r));
    });
    check("transposed_conv.weight", w, [&](const Tensor& t) {
      return sum(mul(transposed_conv(x, TransposedConvParams{t, b, fh, fw, 1}), r));
    });
  }
  {
    Tensor x = random_tensor({3, 2, 3, 3}, rng);
    Tensor gamma = random_tensor({1, 2, 1, 1}, rng, 0.5, 1.5);
    Tensor beta = random_tensor({1, 2, 1, 1}, rng);
    Tensor r = random_tensor({3, 2, 3, 3}, rng);
    auto bn = [&](const Tensor& in, const Tensor& g, const Tensor& bt) {
      BatchNormParams p;
      p.gamma = g;
      p.beta = bt;
      p.running_mean = Tensor({1, 2, 1, 1}, 0.0);
      p.running_var = Tensor({1, 2, 1, 1}, 1.0);
      return sum(mul(batch_norm(in, p, Mode::train), r));
    };
    check("batch_norm.input", x, [&](const Tensor& t) { return bn(t, gamma, beta); });
    check("batch_norm.gamma", gamma, [&](const Tensor& t) { return bn(x, t, beta); });
    check("batch_norm.beta", beta, [&](const Tensor& t) { return bn(x, gamma, t); });
  }
  {
    NetworkConfig cfg;
    cfg.levels = 1;
    cfg.channels = 8;
    cfg.input_patch = 5;
    Network net = Network::build(cfg, seed);
    Tensor x = random_tensor({2, 8, 5, 5}, rng);
    Tensor r = random_tensor({2, 8, 5, 5}, rng);
    check("inception_block.input", x, [&](const Tensor& t) { return sum(mul(net.block_forward(t, 1, 0, Mode::train), r)); });
    Tensor w = net.params().tensor("level1.block0.c.conv1.weight");
    check("inception_block.weight", w, [&](const Tensor&) { return sum(mul(net.block_forward(x, 1, 0, Mode::train), r)); });
  }
  {
    RankParams rp;
    // Low-contrast input keeps neighbour differences within a few tau of
    // delta, where the logistic has non-negligible slope.
    Tensor x = random_tensor({2, 1, 6, 6}, rng, 0.46, 0.54, 0.0);
    Tensor label = random_tensor({2, 1, 6, 6}, rng, 0.0, 1.0, 0.0);
    Tensor r = random_tensor({2, 1, 6, 6}, rng);
    check("lrt_soft", x, [&](const Tensor& t) { return sum(mul(lrt_soft(t, rp), r)); });
    LossWeights lw;
    lw.beta = 0.5;
    check("composite_loss", x, [&](const Tensor& t) { return composite_loss(t, label, rp, lw); });
  }
  {
    NetworkConfig cfg;
    cfg.levels = 2;
    cfg.blocks_per_level = 1;
    cfg.channels = 8;
    cfg.input_patch = 6;
    Network net = Network::build(cfg, seed ^ 0x5eedULL);
    for (auto& [name, p] : net.params().entries()) {
      const bool recon = name.find(".recon.") != std::string::npos;
      if (p.kind == ParamKind::conv_bias || p.kind == ParamKind::up_bias || recon) {
        auto v = p.tensor.mutable_data();
        const double r = recon ? 0.3 : 0.1;
        const Tensor fresh = random_tensor(p.tensor.shape(), rng, -r, r, 0.0);
        std::copy(fresh.data().begin(), fresh.data().end(), v.begin());
      }
    }
    Tensor lr = random_tensor({2, 1, 6, 6}, rng, 0.0, 1.0, 0.0);
    const auto res = level_resolutions(6, cfg.scale, cfg.levels);
    std::vector<Tensor> skips, labels;
    for (std::size_t s = 1; s <= cfg.levels; ++s) {
      skips.push_back(random_tensor({2, 1, res[s], res[s]}, rng, 0.0, 1.0, 0.0));
      labels.push_back(random_tensor({2, 1, res[s], res[s]}, rng, 0.0, 1.0, 0.0));
    }
    auto loss = [&]() { return pyramid_loss(net.forward_train(lr, skips, Mode::train), labels, cfg.rank, cfg.loss); };
    check("network.input", lr, [&](const Tensor&) { return loss(); }, 1e-3);
    for (const char* name : {"stem.conv.weight", "level1.up.weight", "level1.block0.b.conv1.weight",
                             "level2.block0.bn.gamma", "level2.block0.proj.weight", "level2.recon.weight"}) {
      check(std::string("network.") + name, net.params().tensor(name), [&](const Tensor&) { return loss(); }, 1e-3);
    }
  }
  return out;
}

}  // namespace lapir
