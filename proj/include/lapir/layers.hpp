#pragma once

#include <cstdint>
#include <numeric>
#include <random>

#include "lapir/tensor.hpp"

namespace lapir {

namespace testing_hooks {
// Set by the gradient-check harness to prove it catches a broken backward.
inline bool corrupt_conv_weight_grad = false;
}  // namespace testing_hooks

/// Exact positive rational used for fractional strides.
class Rational {
 public:
  constexpr Rational() = default;
  Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
    if (den_ == 0) throw Error("rational: zero denominator");
    if (den_ < 0) {
      num_ = -num_;
      den_ = -den_;
    }
    const std::int64_t g = std::gcd(num_ < 0 ? -num_ : num_, den_);
    if (g > 1) {
      num_ /= g;
      den_ /= g;
    }
  }
  static Rational integer(std::int64_t v) { return Rational(v, 1); }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double value() const { return static_cast<double>(num_) / static_cast<double>(den_); }

  /// ceil(f * m) without floating point.
  std::int64_t ceil_mul(std::int64_t m) const {
    const std::int64_t p = num_ * m;
    return p >= 0 ? (p + den_ - 1) / den_ : -((-p) / den_);
  }
  /// round(f * i), ties rounded up.
  std::int64_t round_mul(std::int64_t i) const { return (2 * num_ * i + den_) / (2 * den_); }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend bool operator<(const Rational& a, const Rational& b) {
    return a.num_ * b.den_ < b.num_ * a.den_;
  }
  std::string str() const {
    return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
  }

 private:
  std::int64_t num_ = 1;
  std::int64_t den_ = 1;
};

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Stride-1 convolution parameters. Weight is (out_ch, in_ch, kH, kW), bias is
/// (1, out_ch, 1, 1).
struct ConvParams {
  Tensor weight;
  Tensor bias;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;

  /// "Same" padding for odd kernels.
  static ConvParams same(Tensor weight, Tensor bias) {
    const Shape& s = weight.shape();
    if (s.h % 2 == 0 || s.w % 2 == 0) throw Error("conv: kernel " + s.str() + " must be odd-sized");
    return ConvParams{std::move(weight), std::move(bias), (s.h - 1) / 2, (s.w - 1) / 2};
  }
};

namespace detail {

struct ConvGeometry {
  std::size_t in_c, in_h, in_w, kh, kw, pad_h, pad_w, out_h, out_w;
  std::size_t taps() const { return in_c * kh * kw; }
  std::size_t pixels() const { return out_h * out_w; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && pad_h == 0 && pad_w == 0; }
};

// Column matrix (taps x pixels) for one image.
inline void im2col(const double* x, const ConvGeometry& g, double* col) {
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill_n(dst, g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_w);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

// out[o][i] += sum_t w[o][t] * col[t][i]; four output rows share each column row.
inline void gemm_accumulate(const double* w, const double* col, double* out, std::size_t rows, std::size_t taps,
                            std::size_t pix) {
  std::size_t o = 0;
  for (; o + 4 <= rows; o += 4) {
    double* o0 = out + o * pix;
    double* o1 = o0 + pix;
    double* o2 = o1 + pix;
    double* o3 = o2 + pix;
    for (std::size_t t = 0; t < taps; ++t) {
      const double w0 = w[o * taps + t], w1 = w[(o + 1) * taps + t];
      const double w2 = w[(o + 2) * taps + t], w3 = w[(o + 3) * taps + t];
      const double* c = col + t * pix;
      for (std::size_t i = 0; i < pix; ++i) {
        const double v = c[i];
        o0[i] += w0 * v;
        o1[i] += w1 * v;
        o2[i] += w2 * v;
        o3[i] += w3 * v;
      }
    }
  }
  for (; o < rows; ++o) {
    double* orow = out + o * pix;
    for (std::size_t t = 0; t < taps; ++t) {
      const double wt = w[o * taps + t];
      const double* c = col + t * pix;
      for (std::size_t i = 0; i < pix; ++i) orow[i] += wt * c[i];
    }
  }
}

// col[t][i] += sum_o w[o][t] * dy[o][i].
inline void gemm_transposed_accumulate(const double* w, const double* dy, double* col, std::size_t rows,
                                       std::size_t taps, std::size_t pix) {
  for (std::size_t t = 0; t < taps; ++t) {
    double* c = col + t * pix;
    std::size_t o = 0;
    for (; o + 4 <= rows; o += 4) {
      const double w0 = w[o * taps + t], w1 = w[(o + 1) * taps + t];
      const double w2 = w[(o + 2) * taps + t], w3 = w[(o + 3) * taps + t];
      const double* d0 = dy + o * pix;
      const double* d1 = d0 + pix;
      const double* d2 = d1 + pix;
      const double* d3 = d2 + pix;
      for (std::size_t i = 0; i < pix; ++i) c[i] += (w0 * d0[i] + w1 * d1[i]) + (w2 * d2[i] + w3 * d3[i]);
    }
    for (; o < rows; ++o) {
      const double wt = w[o * taps + t];
      const double* d = dy + o * pix;
      for (std::size_t i = 0; i < pix; ++i) c[i] += wt * d[i];
    }
  }
}

// out[o][t] = sum_i dy[o][i] * col[t][i], two-lane partial sums per entry.
inline void gemm_nt(const double* dy, const double* col, double* out, std::size_t rows, std::size_t taps,
                    std::size_t pix) {
  const std::size_t even = pix & ~std::size_t{1};
  std::size_t o = 0;
  for (; o + 4 <= rows; o += 4) {
    const double* d0 = dy + o * pix;
    const double* d1 = d0 + pix;
    const double* d2 = d1 + pix;
    const double* d3 = d2 + pix;
    for (std::size_t t = 0; t < taps; ++t) {
      const double* c = col + t * pix;
      double a0[2] = {0, 0}, a1[2] = {0, 0}, a2[2] = {0, 0}, a3[2] = {0, 0};
      for (std::size_t i = 0; i < even; i += 2) {
        for (std::size_t k = 0; k < 2; ++k) {
          const double v = c[i + k];
          a0[k] += d0[i + k] * v;
          a1[k] += d1[i + k] * v;
          a2[k] += d2[i + k] * v;
          a3[k] += d3[i + k] * v;
        }
      }
      if (even < pix) {
        const double v = c[even];
        a0[0] += d0[even] * v;
        a1[0] += d1[even] * v;
        a2[0] += d2[even] * v;
        a3[0] += d3[even] * v;
      }
      out[o * taps + t] = a0[0] + a0[1];
      out[(o + 1) * taps + t] = a1[0] + a1[1];
      out[(o + 2) * taps + t] = a2[0] + a2[1];
      out[(o + 3) * taps + t] = a3[0] + a3[1];
    }
  }
  for (; o < rows; ++o) {
    const double* d = dy + o * pix;
    for (std::size_t t = 0; t < taps; ++t) {
      const double* c = col + t * pix;
      double a[2] = {0, 0};
      for (std::size_t i = 0; i < even; i += 2) {
        a[0] += d[i] * c[i];
        a[1] += d[i + 1] * c[i + 1];
      }
      if (even < pix) a[0] += d[even] * c[even];
      out[o * taps + t] = a[0] + a[1];
    }
  }
}

inline void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          double* dst = dx + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_w);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Zero-padded stride-1 2-D convolution with full backward for x, weight, bias.
inline Tensor conv2d(const Tensor& x, const ConvParams& p) {
  const Shape& xs = x.shape();
  const Shape& ws = p.weight.shape();
  if (ws.c != xs.c) {
    throw Error("conv2d: weight " + ws.str() + " expects " + std::to_string(ws.c) +
                " input channels, input is " + xs.str());
  }
  if (p.bias.defined() && p.bias.numel() != ws.n) {
    throw Error("conv2d: bias " + p.bias.shape().str() + " does not match " + std::to_string(ws.n) +
                " output channels");
  }
  if (xs.h + 2 * p.pad_h < ws.h || xs.w + 2 * p.pad_w < ws.w) {
    throw Error("conv2d: input " + xs.str() + " smaller than kernel " + ws.str());
  }
  detail::ConvGeometry g{xs.c, xs.h, xs.w, ws.h, ws.w, p.pad_h, p.pad_w,
                         xs.h + 2 * p.pad_h - ws.h + 1, xs.w + 2 * p.pad_w - ws.w + 1};
  const std::size_t out_c = ws.n;
  const std::size_t taps = g.taps();
  const std::size_t pix = g.pixels();
  const Shape os{xs.n, out_c, g.out_h, g.out_w};

  // Column buffers are kept for the backward pass only when needed.
  const bool tracked = x.requires_grad() || p.weight.requires_grad() ||
                       (p.bias.defined() && p.bias.requires_grad());
  // Left uninitialized; im2col writes every entry.
  std::shared_ptr<double[]> cols;
  std::unique_ptr<double[]> scratch;
  if (!g.is_pointwise()) {
    if (tracked) {
      cols.reset(new double[xs.n * taps * pix]);
    } else {
      scratch.reset(new double[taps * pix]);
    }
  }

  std::vector<double> out(os.numel(), 0.0);
  auto wv = p.weight.data();
  auto xv = x.data();
  for (std::size_t n = 0; n < xs.n; ++n) {
    const double* col;
    if (g.is_pointwise()) {
      col = xv.data() + n * xs.c * xs.plane();
    } else {
      double* buf = tracked ? cols.get() + n * taps * pix : scratch.get();
      detail::im2col(xv.data() + n * xs.c * xs.plane(), g, buf);
      col = buf;
    }
    double* on = out.data() + n * out_c * pix;
    if (p.bias.defined()) {
      for (std::size_t o = 0; o < out_c; ++o) std::fill_n(on + o * pix, pix, p.bias.data()[o]);
    }
    detail::gemm_accumulate(wv.data(), col, on, out_c, taps, pix);
  }

  auto xn = x.node();
  auto wn = p.weight.node();
  auto bn = p.bias.defined() ? p.bias.node() : nullptr;
  Tensor bias = p.bias;
  return detail::make_result(os, std::move(out), "conv2d", {&x, &p.weight, &bias},
      [xn, wn, bn, g, cols, out_c, taps, pix, xs](detail::Node& self) {
        const double* dy = self.grad.data();
        auto* gx = detail::grad_sink(xn);
        auto* gw = detail::grad_sink(wn);
        auto* gb = bn ? detail::grad_sink(bn) : nullptr;
        std::unique_ptr<double[]> dcol(gx && !g.is_pointwise() ? new double[taps * pix] : nullptr);
        for (std::size_t n = 0; n < xs.n; ++n) {
          const double* dyn = dy + n * out_c * pix;
          const double* col = g.is_pointwise() ? xn->value.data() + n * xs.c * xs.plane()
                                               : cols.get() + n * taps * pix;
          if (gb) {
            for (std::size_t o = 0; o < out_c; ++o) {
              double acc = 0.0;
              for (std::size_t i = 0; i < pix; ++i) acc += dyn[o * pix + i];
              (*gb)[o] += acc;
            }
          }
          if (gw) {
            std::vector<double> acc(out_c * taps, 0.0);
            detail::gemm_nt(dyn, col, acc.data(), out_c, taps, pix);
            for (std::size_t k = 0; k < acc.size(); ++k) {
              (*gw)[k] += testing_hooks::corrupt_conv_weight_grad ? 1.01 * acc[k] : acc[k];
            }
          }
          if (gx) {
            double* target = g.is_pointwise() ? gx->data() + n * xs.c * xs.plane() : dcol.get();
            if (!g.is_pointwise()) std::fill_n(target, taps * pix, 0.0);
            detail::gemm_transposed_accumulate(wn->value.data(), dyn, target, out_c, taps, pix);
            if (!g.is_pointwise()) detail::col2im_add(dcol.get(), g, gx->data() + n * xs.c * xs.plane());
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Fractional-stride zero insertion and the improved transposed convolution
// ---------------------------------------------------------------------------

/// Grid length after inserting zeros: ceil(f * (m - 1)) + 1.
inline std::size_t upsampled_length(std::size_t m, const Rational& f) {
  if (m == 0) return 0;
  return static_cast<std::size_t>(f.ceil_mul(static_cast<std::int64_t>(m) - 1)) + 1;
}

/// Index where input sample i lands: round(i * f), ties up.
inline std::size_t insert_position(std::size_t i, const Rational& f) {
  return static_cast<std::size_t>(f.round_mul(static_cast<std::int64_t>(i)));
}

/// Scatters each input sample to round(i*f) along H and W; other cells are 0.
inline Tensor zero_insert(const Tensor& x, const Rational& fh, const Rational& fw) {
  if (fh < Rational::integer(1) || fw < Rational::integer(1)) {
    throw Error("zero_insert: stride " + fh.str() + " x " + fw.str() + " is below 1");
  }
  const Shape& xs = x.shape();
  const Shape os{xs.n, xs.c, upsampled_length(xs.h, fh), upsampled_length(xs.w, fw)};
  std::vector<std::size_t> rows(xs.h), colsi(xs.w);
  for (std::size_t i = 0; i < xs.h; ++i) rows[i] = insert_position(i, fh);
  for (std::size_t j = 0; j < xs.w; ++j) colsi[j] = insert_position(j, fw);

  std::vector<double> out(os.numel(), 0.0);
  auto xv = x.data();
  const std::size_t planes = xs.n * xs.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = xv.data() + pl * xs.plane();
    double* dst = out.data() + pl * os.plane();
    for (std::size_t i = 0; i < xs.h; ++i) {
      for (std::size_t j = 0; j < xs.w; ++j) dst[rows[i] * os.w + colsi[j]] = src[i * xs.w + j];
    }
  }
  auto xn = x.node();
  return detail::make_result(os, std::move(out), "zero_insert", {&x},
      [xn, rows, colsi, xs, os, planes](detail::Node& self) {
        if (auto* g = detail::grad_sink(xn)) {
          for (std::size_t pl = 0; pl < planes; ++pl) {
            const double* src = self.grad.data() + pl * os.plane();
            double* dst = g->data() + pl * xs.plane();
            for (std::size_t i = 0; i < xs.h; ++i) {
              for (std::size_t j = 0; j < xs.w; ++j) dst[i * xs.w + j] += src[rows[i] * os.w + colsi[j]];
            }
          }
        }
      });
}

inline Tensor zero_insert(const Tensor& x, const Rational& f) { return zero_insert(x, f, f); }

struct TransposedConvParams {
  Tensor weight;
  Tensor bias;
  Rational stride_h = Rational::integer(1);
  Rational stride_w = Rational::integer(1);
  std::size_t pad = 1;
};

/// Output length of the improved transposed convolution along one axis.
inline std::size_t transposed_output_length(std::size_t m, const Rational& f, std::size_t k, std::size_t pad) {
  return upsampled_length(m, f) + (k - 1) - 2 * pad;
}

/// Zero insertion at the fractional stride followed by an ordinary convolution.
inline Tensor transposed_conv(const Tensor& x, const TransposedConvParams& p) {
  return conv2d(zero_insert(x, p.stride_h, p.stride_w), ConvParams{p.weight, p.bias, p.pad, p.pad});
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

enum class Mode { train, eval };

/// Per-channel parameters; all tensors are (1, C, 1, 1). Running statistics
/// follow running = momentum * running + (1 - momentum) * batch.
struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double eps = 1e-5;
};

inline Tensor batch_norm(const Tensor& x, BatchNormParams& p, Mode mode) {
  const Shape& xs = x.shape();
  const std::size_t C = xs.c;
  if (p.gamma.numel() != C || p.beta.numel() != C || p.running_mean.numel() != C ||
      p.running_var.numel() != C) {
    throw Error("batch_norm: parameters for " + std::to_string(p.gamma.numel()) +
                " channels, input is " + xs.str());
  }
  if (p.eps <= 0.0) throw Error("batch_norm: epsilon must be positive");
  const std::size_t hw = xs.plane();
  const double count = static_cast<double>(xs.n * hw);
  auto xv = x.data();

  std::vector<double> mu(C), inv_std(C);
  if (mode == Mode::train) {
    if (xs.n * hw < 1) throw Error("batch_norm: empty batch");
    auto rm = p.running_mean.mutable_data();
    auto rv = p.running_var.mutable_data();
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const double* src = xv.data() + (n * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += src[i];
      }
      const double m = s / count;
      double v = 0.0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const double* src = xv.data() + (n * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) v += (src[i] - m) * (src[i] - m);
      }
      v /= count;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + p.eps);
      rm[c] = p.momentum * rm[c] + (1.0 - p.momentum) * m;
      rv[c] = p.momentum * rv[c] + (1.0 - p.momentum) * v;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = p.running_mean.data()[c];
      inv_std[c] = 1.0 / std::sqrt(std::max(p.running_var.data()[c], 0.0) + p.eps);
    }
  }

  std::vector<double> xhat(xs.numel()), out(xs.numel());
  auto gv = p.gamma.data(), bv = p.beta.data();
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[base + i] = (xv[base + i] - mu[c]) * inv_std[c];
        out[base + i] = gv[c] * xhat[base + i] + bv[c];
      }
    }
  }

  auto xn = x.node(), gn = p.gamma.node(), bnode = p.beta.node();
  return detail::make_result(xs, std::move(out), "batch_norm", {&x, &p.gamma, &p.beta},
      [xn, gn, bnode, xhat = std::move(xhat), inv_std, xs, hw, count, mode](detail::Node& self) {
        const std::size_t C = xs.c;
        const double* dy = self.grad.data();
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (std::size_t n = 0; n < xs.n; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy[c] += dy[base + i];
              sum_dy_xhat[c] += dy[base + i] * xhat[base + i];
            }
          }
        }
        if (auto* g = detail::grad_sink(gn)) {
          for (std::size_t c = 0; c < C; ++c) (*g)[c] += sum_dy_xhat[c];
        }
        if (auto* g = detail::grad_sink(bnode)) {
          for (std::size_t c = 0; c < C; ++c) (*g)[c] += sum_dy[c];
        }
        if (auto* g = detail::grad_sink(xn)) {
          for (std::size_t n = 0; n < xs.n; ++n) {
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t base = (n * C + c) * hw;
              const double k = gn->value[c] * inv_std[c];
              for (std::size_t i = 0; i < hw; ++i) {
                if (mode == Mode::train) {
                  (*g)[base + i] += k * (dy[base + i] - sum_dy[c] / count -
                                         xhat[base + i] * sum_dy_xhat[c] / count);
                } else {
                  (*g)[base + i] += k * dy[base + i];
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

inline double he_stddev(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

/// Zero-mean normal samples with standard deviation sqrt(2 / fan_in).
inline Tensor he_init(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw Error("he_init: fan_in must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, he_stddev(fan_in));
  std::vector<double> values(shape.numel());
  for (double& v : values) v = dist(rng);
  return Tensor(shape, std::move(values));
}

}  // namespace lapir
