#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lapir/pyramid.hpp"
#include "lapir/schedule.hpp"

namespace lapir {

/// v <- momentum v + (g + wd p); p <- p - lr v.
inline void sgd_momentum_step(std::span<double> param, std::span<const double> grad, std::vector<double>& velocity,
                              double lr, double momentum, double weight_decay) {
  if (grad.size() != param.size()) throw Error("sgd_momentum_step: missing or mismatched gradient");
  velocity.resize(param.size(), 0.0);
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grad[i] + weight_decay * param[i]);
    param[i] -= lr * velocity[i];
  }
}

/// ms <- decay ms + (1 - decay) g^2; p <- p - lr g / sqrt(ms + eps), with g = grad + wd p.
inline void rmsprop_step(std::span<double> param, std::span<const double> grad, std::vector<double>& mean_square,
                         double lr, double decay, double eps, double weight_decay) {
  if (grad.size() != param.size()) throw Error("rmsprop_step: missing or mismatched gradient");
  mean_square.resize(param.size(), 0.0);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + weight_decay * param[i];
    mean_square[i] = decay * mean_square[i] + (1.0 - decay) * g * g;
    param[i] -= lr * g / std::sqrt(mean_square[i] + eps);
  }
}

/// Clamps every element to [-clip, clip].
inline void clip_gradients(std::span<double> grad, double clip) {
  if (!(clip > 0.0)) throw Error("clip_gradients: clip value must be positive");
  for (double& g : grad) g = std::clamp(g, -clip, clip);
}

/// Per-parameter optimizer state keyed by parameter name.
class Optimizer {
 public:
  enum class Kind { sgd_momentum, rmsprop };

  static constexpr const char* kVelocityPrefix = "optim.velocity/";
  static constexpr const char* kMeanSquarePrefix = "optim.mean_square/";

  Optimizer() = default;
  explicit Optimizer(const TrainSchedule& sched)
      : kind_(sched.stage == 1 ? Kind::sgd_momentum : Kind::rmsprop), sched_(sched) {}
  Optimizer(Kind kind, const TrainSchedule& sched) : kind_(kind), sched_(sched) {}

  Kind kind() const { return kind_; }

  /// Clips and applies one update to every parameter currently tracking
  /// gradients. Raw gradients are clipped before weight decay is added.
  void step(Network& net, const ScheduledRates& rates) {
    for (auto& [name, p] : net.params().entries()) {
      if (!p.tensor.requires_grad()) continue;
      if (!p.tensor.has_grad()) throw Error("optimizer: parameter " + name + " has no gradient");
      std::vector<double> g(p.tensor.grad().begin(), p.tensor.grad().end());
      clip_gradients(g, rates.clip);
      for (double v : g) {
        if (!(std::abs(v) <= rates.clip)) {
          throw InvariantError("optimizer: gradient of " + name + " exceeds the clip bound after clipping");
        }
      }
      const double lr = p.upsampling() ? rates.lr_transposed : rates.lr_conv;
      const double wd = p.weight_decayed() ? sched_.weight_decay : 0.0;
      if (kind_ == Kind::sgd_momentum) {
        sgd_momentum_step(p.tensor.mutable_data(), g, state_[name], lr, sched_.momentum, wd);
      } else {
        rmsprop_step(p.tensor.mutable_data(), g, state_[name], lr, sched_.rmsprop_decay, sched_.rmsprop_eps, wd);
      }
    }
  }

  /// Holds optimizer buffers at checkpoint precision.
  void round_state() {
    for (auto& [name, v] : state_) round_to_float(v);
  }

  const char* prefix() const { return kind_ == Kind::sgd_momentum ? kVelocityPrefix : kMeanSquarePrefix; }

  /// Buffers as named tensors shaped like their parameters.
  std::map<std::string, Tensor> state_tensors(const Network& net) const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, buf] : state_) {
      out.emplace(prefix() + name, Tensor(net.params().at(name).tensor.shape(), buf));
    }
    return out;
  }

  /// Restores buffers written by state_tensors(); other tensors are ignored.
  void load_state(const std::map<std::string, Tensor>& tensors, const Network& net) {
    state_.clear();
    const std::string pre = prefix();
    for (const auto& [key, t] : tensors) {
      if (key.rfind(pre, 0) != 0) continue;
      const std::string name = key.substr(pre.size());
      if (!net.params().contains(name)) throw Error("optimizer: state for unknown parameter " + name);
      if (t.numel() != net.params().at(name).tensor.numel()) throw Error("optimizer: state shape mismatch for " + name);
      state_[name].assign(t.data().begin(), t.data().end());
    }
  }

  const std::map<std::string, std::vector<double>>& state() const { return state_; }

 private:
  Kind kind_ = Kind::sgd_momentum;
  TrainSchedule sched_;
  std::map<std::string, std::vector<double>> state_;
};

}  // namespace lapir
