#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lapir/tensor.hpp"

namespace lapir {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (iteration, loss)
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_field(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(where + ": '" + s + "' is not a number");
  }
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// Parses training logs (`stage,level,epoch,iter,loss,lr,clip[,arm]`).
/// Rows group by the optional arm column, falling back to `default_label`.
inline std::vector<Series> read_training_log(std::istream& in, const std::string& source, const std::string& default_label) {
  std::vector<Series> series;
  std::string line;
  std::size_t lineno = 0;
  bool has_arm = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = source + ":" + std::to_string(lineno);
    if (lineno == 1) {
      if (line == "stage,level,epoch,iter,loss,lr,clip") continue;
      if (line == "stage,level,epoch,iter,loss,lr,clip,arm") {
        has_arm = true;
        continue;
      }
      throw Error(where + ": unexpected header '" + line + "'");
    }
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != (has_arm ? 8u : 7u)) {
      throw Error(where + ": expected " + std::to_string(has_arm ? 8 : 7) + " fields, got " + std::to_string(f.size()));
    }
    const double iter = detail::parse_field(f[3], where);
    const double loss = detail::parse_field(f[4], where);
    const std::string label = has_arm ? f[7] : default_label;
    auto it = std::find_if(series.begin(), series.end(), [&](const Series& s) { return s.label == label; });
    if (it == series.end()) {
      series.push_back({label, {}});
      it = series.end() - 1;
    }
    it->points.emplace_back(iter, loss);
  }
  return series;
}

inline std::vector<Series> read_training_log(const std::filesystem::path& path, const std::string& default_label) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read log " + path.string());
  return read_training_log(in, path.string(), default_label);
}

/// Self-contained SVG line chart: one polyline per series, axes with min/max
/// labels and a legend.
inline std::string render_svg(const std::vector<Series>& series, const std::string& title = "training loss") {
  std::size_t total = 0;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      ++total;
    }
  }
  if (total == 0) throw Error("plot: no data points");
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;

  constexpr double W = 800, H = 500, L = 80, R = 180, T = 40, B = 60;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ostringstream os;
  os.precision(8);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" data-x-min=\"" << x0
     << "\" data-x-max=\"" << x1 << "\" data-y-min=\"" << y0 << "\" data-y-max=\"" << y1 << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" << detail::xml_escape(title)
     << "</text>\n";
  os << "<line class=\"axis\" x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line class=\"axis\" x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  auto label = [&](const char* cls, double x, double y, const char* anchor, double value) {
    os << "<text class=\"" << cls << "\" x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"" << anchor
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << value << "</text>\n";
  };
  label("x-min", L, H - B + 18, "middle", x0);
  label("x-max", W - R, H - B + 18, "middle", x1);
  label("y-min", L - 6, H - B + 4, "end", y0);
  label("y-max", L - 6, T + 4, "end", y1);
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">iteration</text>\n";
  os << "<text x=\"20\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
     << "transform=\"rotate(-90 20 " << (T + H - B) / 2 << ")\">loss</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (auto [x, y] : series[i].points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      os << (first ? "" : " ") << px(x) << ',' << py(y);
      first = false;
    }
    os << "\"/>\n";
    const double ly = T + 10 + 20.0 * static_cast<double>(i);
    os << "<line x1=\"" << W - R + 15 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 40 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text class=\"legend\" x=\"" << W - R + 46 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << detail::xml_escape(series[i].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace lapir
