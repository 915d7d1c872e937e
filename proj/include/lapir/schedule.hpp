#pragma once

#include <cmath>
#include <cstddef>

#include "lapir/tensor.hpp"

namespace lapir {

/// Optimization hyperparameters for one training stage.
struct TrainSchedule {
  int stage = 1;
  double lr_conv = 0.1;
  double lr_transposed = 0.01;
  double lr_decay = 0.94;
  std::size_t lr_decay_period = 2;
  double clip = 1.0;
  double clip_decay = 0.1;
  std::size_t clip_decay_period = 2;
  double momentum = 0.9;
  double rmsprop_decay = 0.9;
  double rmsprop_eps = 1.0;
  std::size_t batch_size = 8;
  double weight_decay = 1e-4;
  std::size_t epochs = 4;

  /// Level-wise pre-training: SGD with momentum and a decaying clip bound.
  static TrainSchedule stage1() { return TrainSchedule{}; }

  /// Joint fine-tuning: RMSProp at one low rate for every layer.
  static TrainSchedule stage2() {
    TrainSchedule s;
    s.stage = 2;
    s.lr_conv = 0.00045;
    s.lr_transposed = 0.00045;
    s.clip_decay = 1.0;
    s.epochs = 2;
    return s;
  }

  void validate() const {
    if (stage != 1 && stage != 2) throw Error("schedule: stage must be 1 or 2");
    if (!(lr_conv > 0.0) || !(lr_transposed > 0.0)) throw Error("schedule: learning rates must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0) || !(clip_decay > 0.0 && clip_decay <= 1.0)) {
      throw Error("schedule: decay factors must lie in (0, 1]");
    }
    if (lr_decay_period == 0 || clip_decay_period == 0) throw Error("schedule: decay periods must be positive");
    if (!(clip > 0.0)) throw Error("schedule: clip value must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw Error("schedule: momentum must lie in [0, 1)");
    if (!(rmsprop_decay > 0.0 && rmsprop_decay < 1.0) || !(rmsprop_eps > 0.0)) {
      throw Error("schedule: invalid RMSProp parameters");
    }
    if (batch_size == 0) throw Error("schedule: batch size must be positive");
    if (weight_decay < 0.0) throw Error("schedule: weight decay must be non-negative");
  }
};

struct ScheduledRates {
  double lr_conv;
  double lr_transposed;
  double clip;
};

/// Step-decayed rates for an epoch: base * decay^floor(epoch / period).
inline ScheduledRates schedule_at(const TrainSchedule& s, std::size_t epoch) {
  const double lr_factor = std::pow(s.lr_decay, static_cast<double>(epoch / s.lr_decay_period));
  const double clip_factor = std::pow(s.clip_decay, static_cast<double>(epoch / s.clip_decay_period));
  return {s.lr_conv * lr_factor, s.lr_transposed * lr_factor, s.clip * clip_factor};
}

}  // namespace lapir
