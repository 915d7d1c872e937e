#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lapir/color.hpp"
#include "lapir/data.hpp"
#include "lapir/metrics.hpp"
#include "lapir/pyramid.hpp"

namespace lapir {

enum class Method { bicubic, checkpoint, identity };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::bicubic: return "bicubic";
    case Method::checkpoint: return "checkpoint";
    default: return "identity";
  }
}

inline Method parse_method(const std::string& s) {
  if (s == "bicubic") return Method::bicubic;
  if (s == "checkpoint") return Method::checkpoint;
  if (s == "identity") return Method::identity;
  throw Error("unknown method '" + s + "' (expected bicubic, checkpoint or identity)");
}

struct MetricsRow {
  std::string dataset;
  std::string image;
  int scale = 2;
  std::string method;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double runtime_s = 0.0;
  bool skipped = false;  // unreadable input; metrics are NaN
};

struct MetricsReport {
  std::vector<MetricsRow> rows;        // per image, dataset order then file order
  std::vector<MetricsRow> aggregates;  // per (dataset, scale, method) means, image = "mean"

  static constexpr const char* kHeader = "dataset,image,scale,method,psnr_db,ssim,runtime_s";

  std::size_t skipped() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const MetricsRow& r) { return r.skipped; }));
  }

  static std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
  }

  static std::string format(const MetricsRow& r) {
    return r.dataset + "," + r.image + "," + std::to_string(r.scale) + "," + r.method + "," +
           format_number(r.psnr_db) + "," + format_number(r.ssim) + "," + format_number(r.runtime_s);
  }

  std::string csv() const {
    std::string out = std::string(kHeader) + "\n";
    for (const auto& r : rows) out += format(r) + "\n";
    for (const auto& r : aggregates) out += format(r) + "\n";
    return out;
  }

  /// Appends per-(dataset, scale, method) means over non-skipped rows.
  void aggregate() {
    aggregates.clear();
    for (const auto& r : rows) {
      auto it = std::find_if(aggregates.begin(), aggregates.end(), [&](const MetricsRow& a) {
        return a.dataset == r.dataset && a.scale == r.scale && a.method == r.method;
      });
      if (it == aggregates.end()) {
        MetricsRow a{r.dataset, "mean", r.scale, r.method, 0.0, 0.0, 0.0, false};
        aggregates.push_back(a);
        it = aggregates.end() - 1;
      }
    }
    for (auto& a : aggregates) {
      std::size_t count = 0;
      for (const auto& r : rows) {
        if (r.skipped || r.dataset != a.dataset || r.scale != a.scale || r.method != a.method) continue;
        a.psnr_db += r.psnr_db;
        a.ssim += r.ssim;
        a.runtime_s += r.runtime_s;
        ++count;
      }
      if (count == 0) {
        a.psnr_db = a.ssim = a.runtime_s = std::numeric_limits<double>::quiet_NaN();
        a.skipped = true;
      } else {
        const double c = static_cast<double>(count);
        a.psnr_db /= c;
        a.ssim /= c;
        a.runtime_s /= c;
      }
    }
  }
};

/// Worker count from LAPIR_THREADS; unset or 0 means single-threaded.
inline std::size_t worker_threads() {
  const char* env = std::getenv("LAPIR_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 0) throw Error("LAPIR_THREADS must be a non-negative integer, got '" + std::string(env) + "'");
  return v == 0 ? 1 : static_cast<std::size_t>(v);
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mu;
  for (std::size_t t = 0; t < std::min(threads, count); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// Super-resolves a luminance plane by `scale`; output is clamped to [0, 1].
inline Plane super_resolve_luma(const Plane& lr, Method method, int scale, const Network* net) {
  const auto n = static_cast<std::size_t>(scale);
  if (method == Method::checkpoint) {
    if (!net) throw Error("super_resolve: checkpoint method needs a network");
    return net->forward_infer(lr);
  }
  Plane up = bicubic_resize(lr, lr.height * n, lr.width * n, false);
  for (double& v : up.px) v = std::clamp(v, 0.0, 1.0);
  return up;
}

/// Full-color super-resolution: luminance through `method`, chrominance bicubic.
inline ColorImage super_resolve_color(const ColorImage& lr_rgb, Method method, int scale, const Network* net,
                                      bool clamp_output = true) {
  const auto n = static_cast<std::size_t>(scale);
  const ColorImage ycc = rgb_to_ycbcr(lr_rgb);
  ColorImage up;
  if (method == Method::checkpoint) {
    if (!net) throw Error("super_resolve: checkpoint method needs a network");
    up.ch[0] = net->forward_infer(ycc.ch[0], clamp_output);
  } else {
    up.ch[0] = bicubic_resize(ycc.ch[0], ycc.height() * n, ycc.width() * n, false);
  }
  for (std::size_t c = 1; c < 3; ++c) up.ch[c] = bicubic_resize(ycc.ch[c], ycc.height() * n, ycc.width() * n, false);
  ColorImage rgb = ycbcr_to_rgb(up);
  if (clamp_output) {
    for (auto& p : rgb.ch) {
      for (double& v : p.px) v = std::clamp(v, 0.0, 1.0);
    }
  }
  return rgb;
}

/// One benchmark image through the evaluation protocol.
inline MetricsRow evaluate_image(const std::filesystem::path& file, const std::string& dataset, Method method,
                                 int scale, const Network* net) {
  MetricsRow row;
  row.dataset = dataset;
  row.image = file.stem().string();
  row.scale = scale;
  row.method = method_name(method);
  const auto n = static_cast<std::size_t>(scale);
  const Plane hr = crop_to_multiple(luminance(read_image(file)), n);
  const Plane lr = degrade(hr, scale);
  const auto t0 = std::chrono::steady_clock::now();
  const Plane sr = method == Method::identity ? hr : super_resolve_luma(lr, method, scale, net);
  row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const Plane a = crop_border(sr, n), b = crop_border(hr, n);
  row.psnr_db = psnr(a, b);
  row.ssim = ssim(a, b);
  return row;
}

/// Evaluates every image of a directory; unreadable images are skipped with
/// a warning and flagged.
inline MetricsReport evaluate(const std::filesystem::path& dir, Method method, int scale, const Network* net = nullptr,
                              std::size_t threads = worker_threads()) {
  if (method == Method::checkpoint && net && net->config().scale != scale) {
    throw Error("evaluate: checkpoint is x" + std::to_string(net->config().scale) + ", requested x" +
                std::to_string(scale));
  }
  const auto files = list_images(dir);
  std::string dataset = std::filesystem::path(dir).lexically_normal().filename().string();
  if (dataset.empty()) dataset = std::filesystem::path(dir).lexically_normal().parent_path().filename().string();
  MetricsReport report;
  report.rows.resize(files.size());
  parallel_for(files.size(), threads, [&](std::size_t i) {
    try {
      report.rows[i] = evaluate_image(files[i], dataset, method, scale, net);
    } catch (const Error& e) {
      MetricsRow r;
      r.dataset = dataset;
      r.image = files[i].stem().string();
      r.scale = scale;
      r.method = method_name(method);
      r.psnr_db = r.ssim = r.runtime_s = std::numeric_limits<double>::quiet_NaN();
      r.skipped = true;
      report.rows[i] = r;
      std::cerr << "warning: skipping " << files[i].string() << ": " << e.what() << "\n";
    }
  });
  report.aggregate();
  return report;
}

// ---------------------------------------------------------------------------
// Reference comparison
// ---------------------------------------------------------------------------

struct ReferenceRow {
  std::string dataset;
  int scale = 2;
  std::string method;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::string source;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Reads `dataset,scale,method,psnr_db,ssim,source` rows (header required).
inline std::vector<ReferenceRow> read_reference(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read reference " + path.string());
  std::vector<ReferenceRow> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (lineno == 1 && !cells.empty() && cells[0] == "dataset") continue;
    if (cells.size() < 5) throw Error(path.string() + ":" + std::to_string(lineno) + ": expected at least 5 fields");
    try {
      ReferenceRow r{cells[0], std::stoi(cells[1]), cells[2], std::stod(cells[3]), std::stod(cells[4]),
                     cells.size() > 5 ? cells[5] : ""};
      out.push_back(r);
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

struct ComparisonRow {
  std::string dataset;
  int scale = 2;
  std::string method;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::optional<ReferenceRow> reference;
  bool pass = false;

  std::string status() const { return !reference ? "missing" : pass ? "pass" : "fail"; }
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  bool all_pass() const {
    return std::all_of(rows.begin(), rows.end(), [](const ComparisonRow& r) { return r.pass || !r.reference; });
  }
  std::string table() const {
    std::ostringstream os;
    os << "dataset,scale,method,psnr_db,ref_psnr_db,delta_psnr,ssim,ref_ssim,delta_ssim,status\n";
    for (const auto& r : rows) {
      os << r.dataset << ',' << r.scale << ',' << r.method << ',' << MetricsReport::format_number(r.psnr_db) << ',';
      if (r.reference) {
        os << r.reference->psnr_db << ',' << MetricsReport::format_number(r.psnr_db - r.reference->psnr_db) << ','
           << MetricsReport::format_number(r.ssim) << ',' << r.reference->ssim << ','
           << MetricsReport::format_number(r.ssim - r.reference->ssim);
      } else {
        os << ",," << MetricsReport::format_number(r.ssim) << ",,";
      }
      os << ',' << r.status() << '\n';
    }
    return os.str();
  }
};

namespace detail {

inline bool iequals(const std::string& a, const std::string& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace detail

/// Checks report means against reference rows (dataset names match
/// case-insensitively). `reference_method`, when set,
/// selects the reference rows regardless of the evaluated method.
inline Comparison compare_reference(const MetricsReport& report, const std::vector<ReferenceRow>& reference,
                                    double psnr_tol, double ssim_tol, const std::string& reference_method = "") {
  Comparison out;
  for (const auto& a : report.aggregates) {
    ComparisonRow c{a.dataset, a.scale, a.method, a.psnr_db, a.ssim, std::nullopt, false};
    const std::string want = reference_method.empty() ? a.method : reference_method;
    for (const auto& r : reference) {
      if (detail::iequals(r.dataset, a.dataset) && r.scale == a.scale && r.method == want) c.reference = r;
    }
    if (c.reference) {
      c.pass = std::abs(a.psnr_db - c.reference->psnr_db) <= psnr_tol && std::abs(a.ssim - c.reference->ssim) <= ssim_tol;
    }
    out.rows.push_back(c);
  }
  return out;
}

}  // namespace lapir
