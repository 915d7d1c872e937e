#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace lapir {

/// Base error type for every rejected operation in the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A broken internal guarantee (clip bound, frozen parameters), as opposed to bad input.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
    return os.str();
  }
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense (N, C, H, W) array of doubles with optional gradient tracking.
///
/// A Tensor is a cheap shared handle: copies alias the same storage. Results
/// of differentiable operations remember their inputs, so the graph reachable
/// from a scalar loss forms the tape replayed by backward().
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : node_(std::make_shared<detail::Node>()) {
    node_->shape = shape;
    node_->value.assign(shape.numel(), fill);
  }

  Tensor(Shape shape, std::vector<double> values)
      : node_(std::make_shared<detail::Node>()) {
    if (values.size() != shape.numel()) {
      throw Error("tensor: " + std::to_string(values.size()) +
                  " values do not fill shape " + shape.str());
    }
    node_->shape = shape;
    node_->value = std::move(values);
  }

  static Tensor scalar(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  bool is_scalar() const { return defined() && numel() == 1; }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }

  double item() const {
    if (!is_scalar()) throw Error("item(): tensor " + shape().str() + " is not scalar");
    return node_->value[0];
  }

  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = shape();
    return node_->value[((n * s.c + c) * s.h + h) * s.w + w];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool is_leaf() const { return !node_->backward; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
  const char* op_name() const { return node_->op; }

  /// Value copy with no graph history.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  bool all_finite() const {
    return std::all_of(node_->value.begin(), node_->value.end(),
                       [](double v) { return std::isfinite(v); });
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ins) {
  return std::any_of(ins.begin(), ins.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

// Wraps freshly computed values as an op result. The backward rule is only
// attached when some input tracks gradients.
inline Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                          std::initializer_list<const Tensor*> ins,
                          std::function<void(Node&)> backward) {
  Tensor out(shape, std::move(values));
  if (any_requires_grad(ins)) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.op = op;
    for (const Tensor* t : ins) {
      if (t->defined()) node.inputs.push_back(t->node());
    }
    node.backward = std::move(backward);
  }
  return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                b.shape().str());
  }
}

// Grad buffer of an input if it participates in backward, else nullptr.
inline std::vector<double>* grad_sink(const std::shared_ptr<Node>& n) {
  return n->requires_grad ? &n->ensure_grad() : nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), "add", {&a, &b}, [an, bn](detail::Node& self) {
    for (const auto& in : {an, bn}) {
      if (auto* g = detail::grad_sink(in)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), "sub", {&a, &b}, [an, bn](detail::Node& self) {
    if (auto* g = detail::grad_sink(an)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = detail::grad_sink(bn)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), "mul", {&a, &b}, [an, bn](detail::Node& self) {
    if (auto* g = detail::grad_sink(an)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bn->value[i];
    }
    if (auto* g = detail::grad_sink(bn)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * an->value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(out), "scale", {&a}, [an, s](detail::Node& self) {
    if (auto* g = detail::grad_sink(an)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * s;
    }
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(out), "add_scalar", {&a}, [an](detail::Node& self) {
    if (auto* g = detail::grad_sink(an)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

/// ReLU with subgradient 0 at exactly 0.
inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(out), "relu", {&a}, [an](detail::Node& self) {
    if (auto* g = detail::grad_sink(an)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (an->value[i] > 0.0) (*g)[i] += self.grad[i];
      }
    }
  });
}

/// Concatenates along the channel axis; batch and spatial dims must agree.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("concat_channels: no inputs");
  Shape s = parts.front().shape();
  s.c = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w) {
      throw Error("concat_channels: incompatible shape " + ps.str() + " vs " +
                  parts.front().shape().str());
    }
    s.c += ps.c;
  }
  std::vector<double> out(s.numel());
  const std::size_t hw = s.plane();
  std::size_t c_off = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.shape().c;
    auto pv = p.data();
    for (std::size_t n = 0; n < s.n; ++n) {
      std::copy_n(pv.begin() + n * pc * hw, pc * hw, out.begin() + (n * s.c + c_off) * hw);
    }
    c_off += pc;
  }
  Tensor result(s, std::move(out));
  bool tracked = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!tracked) return result;
  auto& node = *result.node();
  node.requires_grad = true;
  node.op = "concat_channels";
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    node.inputs.push_back(p.node());
    widths.push_back(p.shape().c);
  }
  node.backward = [widths, s, hw](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (auto* g = detail::grad_sink(self.inputs[k])) {
        for (std::size_t n = 0; n < s.n; ++n) {
          const double* src = self.grad.data() + (n * s.c + off) * hw;
          double* dst = g->data() + n * widths[k] * hw;
          for (std::size_t i = 0; i < widths[k] * hw; ++i) dst[i] += src[i];
        }
      }
      off += widths[k];
    }
  };
  return result;
}

// ---------------------------------------------------------------------------
// Reductions (row-major sequential order, so results are bit-reproducible)
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  if (a.numel() == 0) throw Error("sum: empty tensor");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  auto an = a.node();
  return detail::make_result(Shape{1, 1, 1, 1}, {acc}, "sum", {&a}, [an](detail::Node& self) {
    if (auto* g = detail::grad_sink(an)) {
      for (double& v : *g) v += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw Error("mean: empty tensor");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const double count = static_cast<double>(a.numel());
  auto an = a.node();
  return detail::make_result(Shape{1, 1, 1, 1}, {acc / count}, "mean", {&a}, [an, count](detail::Node& self) {
    if (auto* g = detail::grad_sink(an)) {
      const double d = self.grad[0] / count;
      for (double& v : *g) v += d;
    }
  });
}

/// Rounds every value to the nearest 32-bit float (the checkpoint precision).
inline void round_to_float(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Tape and backward
// ---------------------------------------------------------------------------

/// Operations reachable from a root, in topological order (inputs first).
class Tape {
 public:
  static Tape record(const Tensor& root) {
    Tape tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    std::unordered_set<const detail::Node*> seen;
    // Iterative post-order DFS keeps deep graphs off the call stack.
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        detail::Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        tape.nodes_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  bool contains(const Tensor& t) const {
    return std::find(nodes_.begin(), nodes_.end(), t.node().get()) != nodes_.end();
  }
  /// Operation names in recorded order (leaves included as "leaf").
  std::vector<std::string> op_names() const {
    std::vector<std::string> names;
    for (const auto* n : nodes_) names.emplace_back(n->op);
    return names;
  }

  /// Replays backward rules in reverse order, seeding d(root)/d(root) = 1.
  /// Leaf gradients accumulate; intermediate gradients are reset first so a
  /// graph may be replayed more than once.
  void backward(const Tensor& root) const {
    if (!root.defined() || !root.is_scalar()) {
      throw Error("backward: root must be a scalar tensor, got " +
                  (root.defined() ? root.shape().str() : std::string("undefined")));
    }
    if (!root.requires_grad() || nodes_.empty() || nodes_.back() != root.node().get()) {
      throw Error("backward: root is not on the tape (no gradient-tracked history)");
    }
    for (auto* n : nodes_) {
      if (!n->backward) continue;
      auto& g = n->ensure_grad();
      std::fill(g.begin(), g.end(), 0.0);
    }
    root.node()->ensure_grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if ((*it)->backward) (*it)->backward(**it);
    }
  }

 private:
  std::vector<detail::Node*> nodes_;
};

inline void backward(const Tensor& root) {
  if (!root.defined() || !root.is_scalar()) {
    throw Error("backward: root must be a scalar tensor");
  }
  Tape::record(root).backward(root);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker
// ---------------------------------------------------------------------------

/// Max over elements of |analytic - central difference| / max(|analytic|, |cd|, 1e-8).
///
/// `x` is used as the differentiation leaf: its values are perturbed in place
/// and restored afterwards.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps = 1e-5) {
  if (eps <= 0.0) throw Error("grad_check: eps must be positive");
  const bool was_tracked = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor y = f(x);
  if (!y.is_scalar()) throw Error("grad_check: function returned non-scalar " + y.shape().str());
  std::vector<double> analytic(x.numel(), 0.0);
  if (y.requires_grad()) {
    backward(y);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  }
  x.zero_grad();
  x.set_requires_grad(false);

  auto values = x.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + eps;
    const double plus = f(x).item();
    values[i] = orig - eps;
    const double minus = f(x).item();
    values[i] = orig;
    const double cd = (plus - minus) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(cd), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - cd) / denom);
  }
  x.set_requires_grad(was_tracked);
  return worst;
}

}  // namespace lapir
