// lapir: data preparation, training, super-resolution, evaluation and
// verification for the pyramid super-resolution network.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or input error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lapir/checkpoint.hpp"
#include "lapir/data.hpp"
#include "lapir/evaluate.hpp"
#include "lapir/gradcheck.hpp"
#include "lapir/plot.hpp"
#include "lapir/trainer.hpp"

namespace fs = std::filesystem;
using namespace lapir;

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kInputError = 2;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Run configuration file (key=value sections)");
  cmd->add_option("--set", o.overrides, "Override one setting, e.g. --set train.stage1.epochs=2");
  cmd->add_option("--seed", o.seed, "Seed for initialization and data order");
}

RunConfig load_config(const CommonOptions& o) {
  RunConfig cfg = RunConfig::desk();
  if (!o.config_path.empty()) cfg = RunConfig::from_text(read_file(o.config_path));
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects section.key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) {
    cfg.init_seed = *o.seed;
    cfg.data.seed = *o.seed;
  }
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

struct PrepareArgs {
  CommonOptions common;
  std::string hr_dir, out;
  int scale = 0;
  bool no_augment = false;
};

std::string manifest_text(const PreparedData& d, std::size_t stride, bool augmented) {
  std::ostringstream os;
  os << "scale=" << d.scale << "\n"
     << "source_images=" << d.source_images << "\n"
     << "augmented=" << (augmented ? "true" : "false") << "\n"
     << "augmented_images=" << d.augmented_images << "\n"
     << "patch_size=" << d.patch_size << "\n"
     << "stride=" << stride << "\n"
     << "pairs=" << d.pairs.size() << "\n"
     << "seed=" << d.seed << "\n"
     << "provenance:\n";
  for (const auto& p : d.provenance) os << p << "\n";
  return os.str();
}

int run_prepare(const PrepareArgs& a) {
  RunConfig cfg = load_config(a.common);
  const int scale = a.scale != 0 ? a.scale : cfg.network.scale;
  if (scale < 2 || scale > 4) throw Error("--scale must be 2, 3 or 4");
  const bool augment = cfg.data.augment && !a.no_augment;
  const auto images = load_image_records(a.hr_dir);
  if (images.empty()) throw Error("no PNG/BMP images in " + a.hr_dir);
  PreparedData d = prepare_patches(images, scale, augment, cfg.network.input_patch, cfg.data.stride, cfg.data.seed);
  if (d.pairs.empty()) throw Error("no patch fits in the supplied images");
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_archive(to_archive(d), out);
  write_text(fs::path(a.out + ".manifest"), manifest_text(d, cfg.data.stride, augment));
  std::cout << "prepared " << d.pairs.size() << " patch pairs from " << d.augmented_images << " images ("
            << d.source_images << " sources, x" << scale << ") -> " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  CommonOptions common;
  std::string cache, out, stage = "all", init;
  bool random_init = false;
  bool resume = false;
  std::size_t stop_after = 0;
};

fs::path level_path(const fs::path& dir, std::size_t s) { return dir / ("stage1_level" + std::to_string(s) + ".lirs"); }

/// Keeps log rows that precede `first_iter` when resuming.
std::vector<std::string> existing_log(const fs::path& path, std::size_t first_iter) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    const auto f = detail::split_fields(line);
    if (f.size() >= 4 && std::stoull(f[3]) < first_iter) rows.push_back(line);
  }
  return rows;
}

class TrainRun {
 public:
  TrainRun(const TrainArgs& a, RunConfig cfg, const TrainingSet& data)
      : args_(a), dir_(a.out), cfg_(std::move(cfg)), trainer_(cfg_, data) {
    fs::create_directories(dir_);
  }

  int run() {
    const bool do1 = args_.stage == "1" || args_.stage == "all";
    const bool do2 = args_.stage == "2" || args_.stage == "all";
    std::optional<Checkpoint> last;
    if (args_.resume && fs::exists(dir_ / "last.lirs")) last = load_checkpoint(dir_ / "last.lirs");
    open_log(last);

    Network net = Network::build(cfg_.network, cfg_.init_seed);
    Checkpoint init;
    if (args_.random_init) {
      init = run_joint(net, last);
    } else if (do1) {
      init = run_stage1(net, last);
    } else {
      const fs::path p = args_.init.empty() ? level_path(dir_, cfg_.network.levels) : fs::path(args_.init);
      if (!fs::exists(p)) throw Error("stage 2 needs a stage-1 checkpoint (" + p.string() + ") or --random-init");
      init = load_checkpoint(p);
    }
    if (stopped_) return finish();
    if (do2) {
      if (last && last->meta.stage == kFineTune) init = *last;
      TrainLog log;
      TrainHooks hooks = make_hooks();
      Checkpoint fin = trainer_.train_stage2(net, init, log, args_.random_init, hooks);
      if (!stopped_) {
        save_checkpoint(fin, dir_ / "stage2.lirs");
        summary("stage 2", log);
      }
    }
    return finish();
  }

 private:
  Checkpoint run_stage1(Network& net, const std::optional<Checkpoint>& last) {
    Checkpoint ck;
    for (std::size_t s = 1; s <= cfg_.network.levels && !stopped_; ++s) {
      const fs::path p = level_path(dir_, s);
      if (args_.resume && fs::exists(p)) {
        ck = load_checkpoint(p);
        ck.apply_to(net);
        continue;
      }
      const Checkpoint* resume = last && last->meta.stage == kLevelWise && last->meta.level == s ? &*last : nullptr;
      TrainLog log;
      TrainHooks hooks = make_hooks();
      ck = trainer_.train_stage1_level(net, s, log, resume, hooks);
      if (stopped_) break;
      save_checkpoint(ck, p);
      summary("stage 1 level " + std::to_string(s), log);
    }
    return ck;
  }

  Checkpoint run_joint(Network& net, const std::optional<Checkpoint>& last) {
    const fs::path p = dir_ / "joint.lirs";
    if (args_.resume && fs::exists(p)) {
      Checkpoint ck = load_checkpoint(p);
      ck.apply_to(net);
      return ck;
    }
    const Checkpoint* resume = last && last->meta.stage == kJoint ? &*last : nullptr;
    TrainLog log;
    TrainHooks hooks = make_hooks();
    Checkpoint ck = trainer_.train_joint(net, log, resume, hooks);
    if (!stopped_) {
      save_checkpoint(ck, p);
      summary("joint (random init)", log);
    }
    return ck;
  }

  TrainHooks make_hooks() {
    TrainHooks h;
    h.on_step = [this](const LogRow& r) { log_ << TrainLog::format(r) << "\n"; };
    h.on_checkpoint = [this](const Checkpoint& c) {
      save_checkpoint(c, dir_ / "last.lirs");
      log_.flush();
      ++epochs_run_;
      if (args_.stop_after != 0 && epochs_run_ >= args_.stop_after) stopped_ = true;
    };
    if (args_.stop_after != 0) h.stop_after_epochs = args_.stop_after - std::min(args_.stop_after, epochs_run_);
    return h;
  }

  void open_log(const std::optional<Checkpoint>& last) {
    const fs::path path = dir_ / "train_log.csv";
    std::vector<std::string> keep;
    if (args_.resume && fs::exists(path)) {
      std::size_t first = 0;
      if (last) {
        const TrainSchedule& s = last->meta.stage == kFineTune ? cfg_.stage2 : cfg_.stage1;
        first = trainer_.iteration_offset(last->meta.stage, last->meta.level) +
                last->meta.epochs_done * trainer_.batches_per_epoch(s);
      }
      keep = existing_log(path, first);
    }
    log_.open(path, std::ios::binary | std::ios::trunc);
    if (!log_) throw Error("cannot write " + path.string());
    log_ << TrainLog::kHeader << "\n";
    for (const auto& r : keep) log_ << r << "\n";
  }

  void summary(const std::string& what, const TrainLog& log) {
    std::cout << what << ": " << log.epochs.size() << " epochs";
    if (!log.epochs.empty()) std::cout << ", final epoch loss " << log.epochs.back().mean_loss;
    std::cout << "\n";
  }

  int finish() {
    log_.close();
    if (stopped_) std::cout << "stopped after " << epochs_run_ << " epochs; resume with --resume\n";
    return kOk;
  }

  const TrainArgs& args_;
  fs::path dir_;
  RunConfig cfg_;
  Trainer trainer_;
  std::ofstream log_;
  std::size_t epochs_run_ = 0;
  bool stopped_ = false;
};

int run_train(const TrainArgs& a) {
  if (a.stage != "1" && a.stage != "2" && a.stage != "all") throw Error("--stage must be 1, 2 or all");
  RunConfig cfg = load_config(a.common);
  PreparedData d = from_archive(load_archive(a.cache));
  if (d.scale != cfg.network.scale) {
    throw Error("cache " + a.cache + " holds x" + std::to_string(d.scale) + " patches but the config is x" +
                std::to_string(cfg.network.scale));
  }
  if (d.patch_size != cfg.network.input_patch) {
    throw Error("cache patch size " + std::to_string(d.patch_size) + " differs from network.input_patch " +
                std::to_string(cfg.network.input_patch));
  }
  TrainingSet data(std::move(d.pairs), cfg.network.scale, cfg.network.levels);
  TrainRun run(a, cfg, data);
  return run.run();
}

// ---------------------------------------------------------------------------
// sr / eval
// ---------------------------------------------------------------------------

struct SrArgs {
  CommonOptions common;
  std::string checkpoint, in, out, method = "checkpoint";
  int scale = 0;
  bool no_clamp = false;
};

int run_sr(const SrArgs& a) {
  load_config(a.common);
  const Method method = parse_method(a.method);
  if (method == Method::identity) throw Error("sr: identity needs ground truth; use bicubic or checkpoint");
  std::optional<Network> net;
  int scale = a.scale;
  if (method == Method::checkpoint) {
    if (a.checkpoint.empty()) throw Error("sr: --checkpoint is required for the checkpoint method");
    net = load_checkpoint(a.checkpoint).network();
    if (scale == 0) scale = net->config().scale;
    if (net->config().scale != scale) {
      throw Error("checkpoint is x" + std::to_string(net->config().scale) + ", requested x" + std::to_string(scale));
    }
  }
  if (scale < 2 || scale > 4) throw Error("--scale must be 2, 3 or 4");
  const ColorImage lr = read_image(a.in);
  const ColorImage sr = super_resolve_color(lr, method, scale, net ? &*net : nullptr, !a.no_clamp);
  write_image(a.out, sr);
  std::cout << a.in << " (" << lr.height() << "x" << lr.width() << ") -> " << a.out << " (" << sr.height() << "x"
            << sr.width() << ")\n";
  return kOk;
}

struct EvalArgs {
  CommonOptions common;
  std::vector<std::string> hr_dirs;
  std::string method = "bicubic", checkpoint, out, reference, reference_method;
  int scale = 0;
  std::optional<double> psnr_tol, ssim_tol;
};

int run_eval(const EvalArgs& a) {
  RunConfig cfg = load_config(a.common);
  const Method method = parse_method(a.method);
  std::optional<Network> net;
  int scale = a.scale;
  if (method == Method::checkpoint) {
    if (a.checkpoint.empty()) throw Error("eval: --checkpoint is required for the checkpoint method");
    net = load_checkpoint(a.checkpoint).network();
    if (scale == 0) scale = net->config().scale;
    if (net->config().scale != scale) {
      throw Error("checkpoint is x" + std::to_string(net->config().scale) + ", requested x" + std::to_string(scale));
    }
  }
  if (scale == 0) scale = cfg.network.scale;
  if (scale < 2 || scale > 4) throw Error("--scale must be 2, 3 or 4");
  MetricsReport report;
  for (const auto& dir : a.hr_dirs) {
    if (!fs::is_directory(dir)) throw Error("not a directory: " + dir);
    MetricsReport r = evaluate(dir, method, scale, net ? &*net : nullptr);
    report.rows.insert(report.rows.end(), r.rows.begin(), r.rows.end());
  }
  report.aggregate();
  if (!a.out.empty()) write_text(a.out, report.csv());
  for (const auto& r : report.aggregates) {
    std::cout << r.dataset << " x" << r.scale << " " << r.method << ": PSNR " << MetricsReport::format_number(r.psnr_db)
              << " dB, SSIM " << MetricsReport::format_number(r.ssim) << "\n";
  }
  if (report.skipped() > 0) std::cout << report.skipped() << " image(s) skipped\n";
  if (a.reference.empty()) return kOk;
  const Comparison cmp = compare_reference(report, read_reference(a.reference), a.psnr_tol.value_or(cfg.eval.psnr_tolerance),
                                           a.ssim_tol.value_or(cfg.eval.ssim_tolerance), a.reference_method);
  std::cout << cmp.table();
  return cmp.all_pass() ? kOk : kVerifyFailed;
}

// ---------------------------------------------------------------------------
// gradcheck / plot / config
// ---------------------------------------------------------------------------

int run_gradcheck(std::uint64_t seed, const std::string& fault) {
  if (!fault.empty() && fault != "conv") throw Error("--inject-fault supports only 'conv'");
  testing_hooks::corrupt_conv_weight_grad = fault == "conv";
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(seed)) {
    std::printf("%-44s max_rel_err %.3e  tol %.0e  %s\n", r.name.c_str(), r.max_rel_error, r.tolerance,
                r.pass() ? "ok" : "FAIL");
    ok = ok && r.pass();
  }
  testing_hooks::corrupt_conv_weight_grad = false;
  std::printf("%s\n", ok ? "gradcheck: all passed" : "gradcheck: FAILED");
  return ok ? kOk : kVerifyFailed;
}

int run_plot(const std::vector<std::string>& logs, const std::vector<std::string>& labels, const std::string& out,
             const std::string& title) {
  std::vector<Series> all;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const std::string label = i < labels.size() ? labels[i] : fs::path(logs[i]).stem().string();
    for (auto& s : read_training_log(logs[i], label)) all.push_back(std::move(s));
  }
  if (all.empty()) throw Error("plot: the log contains no data rows");
  write_text(out, render_svg(all, title));
  std::cout << "wrote " << all.size() << " series to " << out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pyramid super-resolution: prepare, train, sr, eval, gradcheck, plot, config"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* c_prep = app.add_subcommand("prepare", "Augment, degrade and cut HR images into a patch cache");
  add_common(c_prep, prep.common);
  c_prep->add_option("--hr-dir", prep.hr_dir, "Directory of HR PNG/BMP images")->required();
  c_prep->add_option("--out", prep.out, "Patch cache path (a .manifest file is written beside it)")->required();
  c_prep->add_option("--scale", prep.scale, "Upscaling factor n (default: network.scale)");
  c_prep->add_flag("--no-augment", prep.no_augment, "Skip the 60-fold scale/rotation/flip augmentation");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Two-stage training from a patch cache");
  add_common(c_train, tr.common);
  c_train->add_option("--cache", tr.cache, "Patch cache from prepare")->required();
  c_train->add_option("--out", tr.out, "Output directory for checkpoints and train_log.csv")->required();
  c_train->add_option("--stage", tr.stage, "1, 2 or all")->default_val("all");
  c_train->add_option("--init", tr.init, "Stage-1 checkpoint to fine-tune (stage 2 only)");
  c_train->add_flag("--random-init", tr.random_init, "Skip level-wise pre-training; train all levels jointly from scratch");
  c_train->add_flag("--resume", tr.resume, "Continue from checkpoints already in --out");
  c_train->add_option("--stop-after-epochs", tr.stop_after, "Stop after this many epochs (interruption testing)")
      ->group("");

  SrArgs sr;
  auto* c_sr = app.add_subcommand("sr", "Super-resolve one image");
  add_common(c_sr, sr.common);
  c_sr->add_option("--checkpoint", sr.checkpoint, "Trained checkpoint");
  c_sr->add_option("--in", sr.in, "Input image (PNG/BMP)")->required();
  c_sr->add_option("--out", sr.out, "Output image (PNG/BMP)")->required();
  c_sr->add_option("--scale", sr.scale, "Upscaling factor (must match the checkpoint)");
  c_sr->add_option("--method", sr.method, "checkpoint or bicubic")->default_val("checkpoint");
  c_sr->add_flag("--no-clamp", sr.no_clamp, "Keep values outside [0, 1] until 8-bit conversion")->group("");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "PSNR/SSIM benchmark on HR image directories");
  add_common(c_eval, ev.common);
  c_eval->add_option("--hr-dir", ev.hr_dirs, "Ground-truth directory (repeatable; dataset = directory name)")->required();
  c_eval->add_option("--method", ev.method, "bicubic, checkpoint or identity")->default_val("bicubic");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint for --method checkpoint");
  c_eval->add_option("--scale", ev.scale, "Upscaling factor n");
  c_eval->add_option("--out", ev.out, "Per-image CSV report");
  c_eval->add_option("--reference", ev.reference, "Reference CSV; exit 1 if any matched row is out of tolerance");
  c_eval->add_option("--reference-method", ev.reference_method, "Compare against this method's reference rows");
  c_eval->add_option("--psnr-tol", ev.psnr_tol, "PSNR tolerance in dB (default eval.psnr_tolerance)");
  c_eval->add_option("--ssim-tol", ev.ssim_tol, "SSIM tolerance (default eval.ssim_tolerance)");

  std::uint64_t gc_seed = 1;
  std::string gc_fault;
  auto* c_gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  c_gc->add_option("--seed", gc_seed, "Seed for the random probes")->default_val(1);
  c_gc->add_option("--inject-fault", gc_fault, "Corrupt a backward pass (test hook)")->group("");

  std::vector<std::string> plot_logs, plot_labels;
  std::string plot_out, plot_title = "training loss";
  std::optional<std::uint64_t> plot_seed;
  auto* c_plot = app.add_subcommand("plot", "Render training logs as an SVG convergence plot");
  c_plot->add_option("--log", plot_logs, "Training log CSV (repeatable; one arm each unless an arm column is present)")
      ->required();
  c_plot->add_option("--label", plot_labels, "Arm label per --log");
  c_plot->add_option("--out", plot_out, "SVG path")->required();
  c_plot->add_option("--title", plot_title, "Plot title");
  c_plot->add_option("--seed", plot_seed, "Accepted for uniformity; plotting is deterministic");

  CommonOptions cfg_common;
  bool dump_defaults = false;
  int paper_scale = 0;
  auto* c_cfg = app.add_subcommand("config", "Print configuration");
  add_common(c_cfg, cfg_common);
  c_cfg->add_flag("--dump-defaults", dump_defaults, "Print the default desk-scale configuration");
  c_cfg->add_option("--full-size", paper_scale, "Print the full-size configuration for scale 2, 3 or 4");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*c_prep) return run_prepare(prep);
    if (*c_train) return run_train(tr);
    if (*c_sr) return run_sr(sr);
    if (*c_eval) return run_eval(ev);
    if (*c_gc) return run_gradcheck(gc_seed, gc_fault);
    if (*c_plot) return run_plot(plot_logs, plot_labels, plot_out, plot_title);
    if (*c_cfg) {
      RunConfig cfg;
      if (dump_defaults) {
        cfg = RunConfig::desk();
      } else if (paper_scale != 0) {
        cfg = RunConfig::paper(paper_scale);
      } else {
        cfg = load_config(cfg_common);
      }
      cfg.validate();
      std::cout << cfg.to_text();
      return kOk;
    }
  } catch (const InvariantError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kVerifyFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}
