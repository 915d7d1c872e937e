#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "lapir/pyramid.hpp"
#include "lapir/schedule.hpp"

namespace lapir {

struct DataConfig {
  std::size_t stride = 14;
  bool augment = true;
  std::uint64_t seed = 1;
};

struct EvalConfig {
  double psnr_tolerance = 0.15;
  double ssim_tolerance = 0.01;
};

/// Every tunable of a run. Serialized as sectioned key=value text.
struct RunConfig {
  NetworkConfig network;
  std::uint64_t init_seed = 1;
  TrainSchedule stage1 = desk_stage1();
  TrainSchedule stage2 = TrainSchedule::stage2();
  DataConfig data;
  EvalConfig eval;

  /// Gradients here are means over batch and pixels, so the per-element
  /// clip bound must be tiny to bite at all; 1e-4 keeps the first epochs of
  /// lr 0.1 stable.
  static TrainSchedule desk_stage1() {
    TrainSchedule s = TrainSchedule::stage1();
    s.clip = 1e-4;
    return s;
  }

  /// Desk-scale preset (the defaults).
  static RunConfig desk() { return RunConfig{}; }

  /// Full-size model for a given scale (pyramid depth 2/4/6 for x2/x3/x4).
  static RunConfig paper(int scale) {
    RunConfig c;
    c.network.scale = scale;
    c.network.levels = scale == 2 ? 2 : scale == 3 ? 4 : 6;
    c.network.blocks_per_level = 3;
    c.network.channels = 64;
    c.stage1 = TrainSchedule::stage1();
    c.stage1.batch_size = 128;
    c.stage2.batch_size = 128;
    return c;
  }

  void validate() const {
    network.validate();
    stage1.validate();
    stage2.validate();
    if (stage1.stage != 1 || stage2.stage != 2) throw Error("config: stage schedules are mislabeled");
    if (data.stride == 0) throw Error("config: data.stride must be positive");
  }

  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  /// Applies one "section.key=value" override; unknown keys are errors.
  void set(const std::string& dotted_key, const std::string& value);
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error("config: " + key + ": bad number '" + s + "'");
  return v;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& s) {
  Int v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error("config: " + key + ": bad integer '" + s + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw Error("config: " + key + ": bad boolean '" + s + "'");
}

struct ConfigField {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::vector<ConfigField> config_fields() {
  std::vector<ConfigField> f;
  auto num = [&f](std::string sec, std::string key, auto accessor) {
    using Ref = decltype(accessor(std::declval<RunConfig&>()));
    using T = std::remove_reference_t<Ref>;
    std::string full = sec + "." + key;
    f.push_back(ConfigField{
        sec, key,
        [accessor](const RunConfig& c) {
          const T& v = accessor(const_cast<RunConfig&>(c));
          if constexpr (std::is_same_v<T, double>) {
            return format_double(v);
          } else if constexpr (std::is_same_v<T, bool>) {
            return std::string(v ? "true" : "false");
          } else {
            return std::to_string(v);
          }
        },
        [accessor, full](RunConfig& c, const std::string& s) {
          T& v = accessor(c);
          if constexpr (std::is_same_v<T, double>) {
            v = parse_double(full, s);
          } else if constexpr (std::is_same_v<T, bool>) {
            v = parse_bool(full, s);
          } else {
            v = parse_int<T>(full, s);
          }
        }});
  };
  num("network", "scale", [](RunConfig& c) -> int& { return c.network.scale; });
  num("network", "levels", [](RunConfig& c) -> std::size_t& { return c.network.levels; });
  num("network", "blocks_per_level", [](RunConfig& c) -> std::size_t& { return c.network.blocks_per_level; });
  num("network", "channels", [](RunConfig& c) -> std::size_t& { return c.network.channels; });
  num("network", "branch_width", [](RunConfig& c) -> std::size_t& { return c.network.branch_width; });
  num("network", "input_patch", [](RunConfig& c) -> std::size_t& { return c.network.input_patch; });
  num("network", "init_seed", [](RunConfig& c) -> std::uint64_t& { return c.init_seed; });

  num("loss", "beta", [](RunConfig& c) -> double& { return c.network.loss.beta; });
  num("loss", "delta", [](RunConfig& c) -> double& { return c.network.rank.delta; });
  num("loss", "tau", [](RunConfig& c) -> double& { return c.network.rank.tau; });
  num("loss", "window", [](RunConfig& c) -> std::size_t& { return c.network.rank.window; });
  f.push_back(ConfigField{
      "loss", "level_weights",
      [](const RunConfig& c) {
        std::string out;
        for (std::size_t i = 0; i < c.network.loss.level_weights.size(); ++i) {
          if (i) out += ",";
          out += format_double(c.network.loss.level_weights[i]);
        }
        return out;
      },
      [](RunConfig& c, const std::string& s) {
        c.network.loss.level_weights.clear();
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) {
          if (!item.empty()) c.network.loss.level_weights.push_back(parse_double("loss.level_weights", item));
        }
      }});

  for (int stage : {1, 2}) {
    const std::string sec = "train.stage" + std::to_string(stage);
    auto sched = [stage](RunConfig& c) -> TrainSchedule& { return stage == 1 ? c.stage1 : c.stage2; };
    num(sec, "lr_conv", [sched](RunConfig& c) -> double& { return sched(c).lr_conv; });
    num(sec, "lr_transposed", [sched](RunConfig& c) -> double& { return sched(c).lr_transposed; });
    num(sec, "lr_decay", [sched](RunConfig& c) -> double& { return sched(c).lr_decay; });
    num(sec, "lr_decay_period", [sched](RunConfig& c) -> std::size_t& { return sched(c).lr_decay_period; });
    num(sec, "clip", [sched](RunConfig& c) -> double& { return sched(c).clip; });
    num(sec, "clip_decay", [sched](RunConfig& c) -> double& { return sched(c).clip_decay; });
    num(sec, "clip_decay_period", [sched](RunConfig& c) -> std::size_t& { return sched(c).clip_decay_period; });
    num(sec, "momentum", [sched](RunConfig& c) -> double& { return sched(c).momentum; });
    num(sec, "rmsprop_decay", [sched](RunConfig& c) -> double& { return sched(c).rmsprop_decay; });
    num(sec, "rmsprop_eps", [sched](RunConfig& c) -> double& { return sched(c).rmsprop_eps; });
    num(sec, "batch_size", [sched](RunConfig& c) -> std::size_t& { return sched(c).batch_size; });
    num(sec, "weight_decay", [sched](RunConfig& c) -> double& { return sched(c).weight_decay; });
    num(sec, "epochs", [sched](RunConfig& c) -> std::size_t& { return sched(c).epochs; });
  }

  num("data", "stride", [](RunConfig& c) -> std::size_t& { return c.data.stride; });
  num("data", "augment", [](RunConfig& c) -> bool& { return c.data.augment; });
  num("data", "seed", [](RunConfig& c) -> std::uint64_t& { return c.data.seed; });

  num("eval", "psnr_tolerance", [](RunConfig& c) -> double& { return c.eval.psnr_tolerance; });
  num("eval", "ssim_tolerance", [](RunConfig& c) -> double& { return c.eval.ssim_tolerance; });
  return f;
}

}  // namespace detail

inline std::string RunConfig::to_text() const {
  std::ostringstream os;
  std::string current;
  for (const auto& fld : detail::config_fields()) {
    if (fld.section != current) {
      if (!current.empty()) os << "\n";
      os << "[" << fld.section << "]\n";
      current = fld.section;
    }
    os << fld.key << "=" << fld.get(*this) << "\n";
  }
  return os.str();
}

inline void RunConfig::set(const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.rfind('.');
  if (dot == std::string::npos) throw Error("config: key '" + dotted_key + "' needs a section prefix");
  const std::string sec = dotted_key.substr(0, dot), key = dotted_key.substr(dot + 1);
  for (const auto& fld : detail::config_fields()) {
    if (fld.section == sec && fld.key == key) {
      fld.set(*this, value);
      return;
    }
  }
  throw Error("config: unknown key '" + dotted_key + "'");
}

/// Parses sectioned key=value text on top of the desk defaults. Sections
/// other than the known ones (and [meta], which checkpoints append) are errors.
inline RunConfig RunConfig::from_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (section == "meta") continue;
    if (body.empty() && !body.data().empty()) throw Error("config: key '" + section + "' outside any section");
    for (const auto& [key, value] : body) cfg.set(section + "." + key, value.data());
  }
  return cfg;
}

}  // namespace lapir
