#pragma once

#include <cmath>
#include <vector>

#include "lapir/tensor.hpp"

namespace lapir {

/// Local rank transform parameters. Images are in [0, 1], so `delta` is in
/// the same units. Borders use replicate padding.
struct RankParams {
  std::size_t window = 3;
  double delta = 4.0 / 255.0;
  double tau = 0.02;

  std::size_t window_pixels() const { return window * window; }

  void validate() const {
    if (window < 3 || window % 2 == 0) throw Error("rank: window side must be odd and >= 3");
    if (delta < 0.0) throw Error("rank: delta must be non-negative");
    if (tau <= 0.0) throw Error("rank: tau must be positive");
  }
};

struct LossWeights {
  double beta = 0.05;
  std::vector<double> level_weights;  // empty means 1 for every level

  double level_weight(std::size_t s) const { return s < level_weights.size() ? level_weights[s] : 1.0; }
};

namespace detail {

inline void require_single_channel(const Tensor& t, const char* op) {
  if (t.shape().c != 1) throw Error(std::string(op) + ": expected a single-channel image, got " + t.shape().str());
}

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t len) {
  if (i < 0) return 0;
  if (i >= static_cast<std::ptrdiff_t>(len)) return len - 1;
  return static_cast<std::size_t>(i);
}

inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

/// Hard local rank transform: N_w minus the number of window pixels the
/// center exceeds by more than delta. Values lie in [1, N_w].
inline Tensor lrt_hard(const Tensor& img, const RankParams& p) {
  detail::require_single_channel(img, "lrt_hard");
  p.validate();
  const Shape& s = img.shape();
  const auto r = static_cast<std::ptrdiff_t>(p.window / 2);
  const auto nw = static_cast<double>(p.window_pixels());
  std::vector<double> out(s.numel());
  auto v = img.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* src = v.data() + n * s.plane();
    double* dst = out.data() + n * s.plane();
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        const double center = src[y * s.w + x];
        int count = 0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
          const std::size_t yy = detail::clamp_index(static_cast<std::ptrdiff_t>(y) + dy, s.h);
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            const std::size_t xx = detail::clamp_index(static_cast<std::ptrdiff_t>(x) + dx, s.w);
            if (center - src[yy * s.w + xx] > p.delta) ++count;
          }
        }
        dst[y * s.w + x] = nw - count;
      }
    }
  }
  return Tensor(s, std::move(out));
}

/// Differentiable rank transform: the step comparison is replaced by
/// logistic((u - delta) / tau).
inline Tensor lrt_soft(const Tensor& img, const RankParams& p) {
  detail::require_single_channel(img, "lrt_soft");
  p.validate();
  const Shape& s = img.shape();
  const auto r = static_cast<std::ptrdiff_t>(p.window / 2);
  const auto nw = static_cast<double>(p.window_pixels());
  std::vector<double> out(s.numel());
  auto v = img.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* src = v.data() + n * s.plane();
    double* dst = out.data() + n * s.plane();
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        const double center = src[y * s.w + x];
        double acc = 0.0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
          const std::size_t yy = detail::clamp_index(static_cast<std::ptrdiff_t>(y) + dy, s.h);
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            const std::size_t xx = detail::clamp_index(static_cast<std::ptrdiff_t>(x) + dx, s.w);
            acc += detail::logistic((center - src[yy * s.w + xx] - p.delta) / p.tau);
          }
        }
        dst[y * s.w + x] = nw - acc;
      }
    }
  }
  auto in = img.node();
  return detail::make_result(s, std::move(out), "lrt_soft", {&img}, [in, s, r, p](detail::Node& self) {
    auto* g = detail::grad_sink(in);
    if (!g) return;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* src = in->value.data() + n * s.plane();
      const double* dy_out = self.grad.data() + n * s.plane();
      double* gi = g->data() + n * s.plane();
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
          const std::size_t c = y * s.w + x;
          const double upstream = dy_out[c];
          if (upstream == 0.0) continue;
          for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
            const std::size_t yy = detail::clamp_index(static_cast<std::ptrdiff_t>(y) + dy, s.h);
            for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
              const std::size_t xx = detail::clamp_index(static_cast<std::ptrdiff_t>(x) + dx, s.w);
              const std::size_t nb = yy * s.w + xx;
              const double sg = detail::logistic((src[c] - src[nb] - p.delta) / p.tau);
              // out = N_w - sum(sigma); d sigma / d(center - nb) = sg (1 - sg) / tau
              const double d = upstream * sg * (1.0 - sg) / p.tau;
              gi[c] -= d;
              gi[nb] += d;
            }
          }
        }
      }
    }
  });
}

/// Mean squared error over all elements.
inline Tensor mse(const Tensor& pred, const Tensor& label) {
  detail::require_same_shape(pred, label, "mse");
  Tensor d = sub(pred, label);
  return mean(mul(d, d));
}

/// Image-space MSE plus beta times the MSE between rank maps normalized by N_w.
inline Tensor composite_loss(const Tensor& pred, const Tensor& label, const RankParams& p, const LossWeights& w) {
  detail::require_same_shape(pred, label, "composite_loss");
  detail::require_single_channel(pred, "composite_loss");
  if (w.beta < 0.0) throw Error("composite_loss: beta must be non-negative");
  Tensor image_term = mse(pred, label);
  if (w.beta == 0.0) return image_term;
  const double inv_nw = 1.0 / static_cast<double>(p.window_pixels());
  Tensor rank_pred = scale(lrt_soft(pred, p), inv_nw);
  Tensor rank_label = scale(lrt_soft(label, p), inv_nw);
  return add(image_term, scale(mse(rank_pred, rank_label), w.beta));
}

/// Weighted sum of per-level composite losses.
inline Tensor pyramid_loss(const std::vector<Tensor>& preds, const std::vector<Tensor>& labels, const RankParams& p,
                           const LossWeights& w) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw Error("pyramid_loss: " + std::to_string(preds.size()) + " predictions vs " +
                std::to_string(labels.size()) + " labels");
  }
  Tensor total;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const double k = w.level_weight(s);
    if (k <= 0.0) throw Error("pyramid_loss: level weights must be positive");
    Tensor term = scale(composite_loss(preds[s], labels[s], p, w), k);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

}  // namespace lapir
