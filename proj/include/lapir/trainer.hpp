#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lapir/checkpoint.hpp"
#include "lapir/data.hpp"
#include "lapir/optim.hpp"

namespace lapir {

/// One optimizer step. `iter` counts steps from the start of the whole run.
struct LogRow {
  int stage = 1;
  std::size_t level = 0;  // 0 when every level trains jointly
  std::size_t epoch = 0;
  std::size_t iter = 0;
  double loss = 0.0;
  double lr = 0.0;
  double clip = 0.0;
};

struct EpochSummary {
  int stage = 1;
  std::size_t level = 0;
  std::size_t epoch = 0;
  double mean_loss = 0.0;
};

struct TrainLog {
  std::vector<LogRow> rows;
  std::vector<EpochSummary> epochs;

  static constexpr const char* kHeader = "stage,level,epoch,iter,loss,lr,clip";

  static std::string format(const LogRow& r) {
    std::ostringstream os;
    os.precision(9);
    os << r.stage << ',' << r.level << ',' << r.epoch << ',' << r.iter << ',' << r.loss << ',' << r.lr << ','
       << r.clip;
    return os.str();
  }

  std::string csv() const {
    std::string out = std::string(kHeader) + "\n";
    for (const auto& r : rows) out += format(r) + "\n";
    return out;
  }

  /// Epoch means for one (stage, level) phase, in epoch order.
  std::vector<double> epoch_means(int stage, std::size_t level) const {
    std::vector<double> out;
    for (const auto& e : epochs) {
      if (e.stage == stage && e.level == level) out.push_back(e.mean_loss);
    }
    return out;
  }
};

/// Stage tags stored in checkpoints and logs.
enum TrainStage : int { kUntrained = 0, kLevelWise = 1, kFineTune = 2, kJoint = 3 };

struct TrainHooks {
  std::function<void(const LogRow&)> on_step;
  std::function<void(const EpochSummary&)> on_epoch;
  /// Called with the resumable state after every epoch.
  std::function<void(const Checkpoint&)> on_checkpoint;
  /// Stop after this many epochs of the current phase have run (for interruption tests).
  std::size_t stop_after_epochs = std::numeric_limits<std::size_t>::max();
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Shuffle seed of one epoch; independent of resumption.
inline std::uint64_t epoch_seed(std::uint64_t data_seed, int stage, std::size_t level, std::size_t epoch) {
  std::uint64_t h = detail::splitmix64(data_seed);
  h = detail::splitmix64(h ^ static_cast<std::uint64_t>(stage));
  h = detail::splitmix64(h ^ level);
  return detail::splitmix64(h ^ epoch);
}

/// Drives level-wise pre-training, joint fine-tuning and the joint
/// random-initialization arm over a fixed training set.
class Trainer {
 public:
  Trainer(RunConfig cfg, const TrainingSet& data) : cfg_(std::move(cfg)), data_(data) {
    cfg_.validate();
    if (data_.size() == 0) throw Error("trainer: empty training set");
    if (data_.scale() != cfg_.network.scale) {
      throw Error("trainer: training data is x" + std::to_string(data_.scale()) + " but the network is x" +
                  std::to_string(cfg_.network.scale));
    }
    if (data_.levels() != cfg_.network.levels) throw Error("trainer: training data pyramid depth differs from the network");
    if (data_.pairs().front().lr.height != cfg_.network.input_patch) {
      throw Error("trainer: patch size " + std::to_string(data_.pairs().front().lr.height) +
                  " differs from network.input_patch");
    }
  }

  const RunConfig& config() const { return cfg_; }

  std::size_t batches_per_epoch(const TrainSchedule& s) const { return (data_.size() + s.batch_size - 1) / s.batch_size; }

  /// Stage-1 loss for level s: composite loss of the level-s prediction with
  /// earlier levels run in inference mode and their reconstruction skipped.
  Tensor level_loss(const Network& net, const PatchBatch& b, std::size_t level) const {
    Tensor feat = net.stem(b.lr);
    const auto& r = data_.resolutions();
    for (std::size_t t = 1; t < level; ++t) feat = net.level_forward(feat, t, r[t], r[t], Mode::eval, false).features;
    LevelOutput lo = net.level_forward(feat, level, r[level], r[level], Mode::train, true);
    Tensor pred = add(lo.residual, b.skips[level - 1]);
    return composite_loss(pred, b.labels[level - 1], cfg_.network.rank, cfg_.network.loss);
  }

  Tensor joint_loss(const Network& net, const PatchBatch& b) const {
    return pyramid_loss(net.forward_train(b.lr, b.skips, Mode::train), b.labels, cfg_.network.rank, cfg_.network.loss);
  }

  /// Trains one level; earlier levels stay frozen and the stem trains with level 1.
  /// `resume` continues a partially trained level from its checkpoint.
  Checkpoint train_stage1_level(Network& net, std::size_t level, TrainLog& log, const Checkpoint* resume = nullptr,
                                const TrainHooks& hooks = {}) const {
    if (level == 0 || level > cfg_.network.levels) throw Error("train_stage1: level out of range");
    return run_phase(net, kLevelWise, level, cfg_.stage1, Optimizer::Kind::sgd_momentum, log, resume, hooks);
  }

  /// All levels in order; one checkpoint per level.
  std::vector<Checkpoint> train_stage1(Network& net, TrainLog& log, const TrainHooks& hooks = {}) const {
    std::vector<Checkpoint> out;
    for (std::size_t s = 1; s <= cfg_.network.levels; ++s) out.push_back(train_stage1_level(net, s, log, nullptr, hooks));
    return out;
  }

  /// Joint fine-tuning with RMSProp. Requires a finished stage-1 (or, with
  /// `allow_any_init`, joint-arm) initialization unless resuming stage 2.
  Checkpoint train_stage2(Network& net, const Checkpoint& init, TrainLog& log, bool allow_any_init = false,
                          const TrainHooks& hooks = {}) const {
    const bool resuming = init.meta.stage == kFineTune;
    const bool stage1_done = init.meta.stage == kLevelWise && init.meta.complete && init.meta.level == cfg_.network.levels;
    if (!resuming && !stage1_done && !allow_any_init) {
      throw Error("train_stage2: initialization is not a completed stage-1 checkpoint (stage " +
                  std::to_string(init.meta.stage) + ", level " + std::to_string(init.meta.level) + ")");
    }
    init.apply_to(net);
    return run_phase(net, kFineTune, 0, cfg_.stage2, Optimizer::Kind::rmsprop, log, resuming ? &init : nullptr, hooks);
  }

  /// Random-initialization arm: every level trained jointly on the pyramid
  /// loss with the stage-1 optimizer for levels x stage-1 epochs.
  Checkpoint train_joint(Network& net, TrainLog& log, const Checkpoint* resume = nullptr, const TrainHooks& hooks = {}) const {
    TrainSchedule sched = cfg_.stage1;
    sched.epochs = cfg_.stage1.epochs * cfg_.network.levels;
    return run_phase(net, kJoint, 0, sched, Optimizer::Kind::sgd_momentum, log, resume, hooks);
  }

  /// Global step index of the first step of a phase, so logs of consecutive
  /// phases share one iteration axis.
  std::size_t iteration_offset(int stage, std::size_t level) const {
    const std::size_t b1 = batches_per_epoch(cfg_.stage1);
    const std::size_t per_level = cfg_.stage1.epochs * b1;
    switch (stage) {
      case kLevelWise: return (level - 1) * per_level;
      case kJoint: return 0;
      default: return cfg_.network.levels * per_level;
    }
  }

 private:
  static bool in_phase(const Param& p, std::size_t level) {
    return level == 0 || p.level == level || (level == 1 && p.level == 0);
  }

  Checkpoint run_phase(Network& net, int stage, std::size_t level, const TrainSchedule& sched,
                       Optimizer::Kind kind, TrainLog& log, const Checkpoint* resume, const TrainHooks& hooks) const {
    net.set_trainable([level](const std::string&, const Param& p) { return in_phase(p, level); });
    Optimizer opt(kind, sched);
    std::size_t start = 0;
    if (resume) {
      if (resume->meta.stage != stage || resume->meta.level != level) {
        throw Error("trainer: resume checkpoint is for stage " + std::to_string(resume->meta.stage) + " level " +
                    std::to_string(resume->meta.level));
      }
      resume->apply_to(net);
      opt.load_state(resume->tensors, net);
      start = resume->meta.epochs_done;
    }

    std::vector<std::pair<std::string, std::vector<double>>> frozen;
    for (const auto& [name, p] : net.params().entries()) {
      if (!in_phase(p, level)) frozen.emplace_back(name, std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()));
    }

    const std::size_t per_epoch = batches_per_epoch(sched);
    const std::size_t offset = iteration_offset(stage, level);
    std::size_t epochs_run = 0;
    std::size_t epoch = start;
    for (; epoch < sched.epochs && epochs_run < hooks.stop_after_epochs; ++epoch, ++epochs_run) {
      const ScheduledRates rates = schedule_at(sched, epoch);
      const auto order = batch_order(data_.size(), sched.batch_size, epoch_seed(cfg_.data.seed, stage, level, epoch));
      double total = 0.0;
      for (std::size_t bi = 0; bi < order.size(); ++bi) {
        const PatchBatch batch = data_.batch(order[bi]);
        const Tensor loss = level == 0 ? joint_loss(net, batch) : level_loss(net, batch, level);
        if (!std::isfinite(loss.item())) {
          throw Error("trainer: non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi));
        }
        net.zero_grad();
        backward(loss);
        opt.step(net, rates);
        total += loss.item();
        LogRow row{stage, level, epoch, offset + epoch * per_epoch + bi, loss.item(), rates.lr_conv, rates.clip};
        log.rows.push_back(row);
        if (hooks.on_step) hooks.on_step(row);
      }
      for (auto& [name, p] : net.params().entries()) round_to_float(p.tensor.mutable_data());
      opt.round_state();
      for (const auto& [name, bytes] : frozen) {
        const auto now = net.params().at(name).tensor.data();
        if (!std::equal(now.begin(), now.end(), bytes.begin(), bytes.end())) {
          throw InvariantError("trainer: frozen parameter " + name + " changed during stage " +
                                 std::to_string(stage) + " level " + std::to_string(level));
        }
      }
      EpochSummary sum{stage, level, epoch, total / static_cast<double>(order.size())};
      log.epochs.push_back(sum);
      if (hooks.on_epoch) hooks.on_epoch(sum);
      if (hooks.on_checkpoint) {
        hooks.on_checkpoint(snapshot(net, opt, stage, level, epoch + 1, epoch + 1 >= sched.epochs));
      }
    }
    net.set_trainable([](const std::string&, const Param&) { return false; });
    return snapshot(net, opt, stage, level, epoch, epoch >= sched.epochs);
  }

  Checkpoint snapshot(const Network& net, const Optimizer& opt, int stage, std::size_t level, std::size_t epochs_done,
                      bool complete) const {
    Checkpoint c = Checkpoint::of(net, cfg_, CheckpointMeta{stage, level, epochs_done, complete});
    for (auto& [name, t] : opt.state_tensors(net)) c.tensors.emplace(name, t);
    return c;
  }

  RunConfig cfg_;
  const TrainingSet& data_;
};

}  // namespace lapir
