#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dptrav/errors.hpp"
#include "dptrav/harness/sweep.hpp"

namespace dptrav::harness {

inline constexpr const char* kCsvHeader = "t0,distortion_mean,distortion_stderr,w2,w2_stderr,n_trials";

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt17(*v) : "NA"; }

/// Whole-field decimal parse; subnormal values are accepted.
inline double parse_double(const std::string& s) {
  if (s.empty()) throw std::invalid_argument("empty field");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw std::invalid_argument("trailing characters");
  if (errno == ERANGE && std::isinf(v)) throw std::out_of_range("overflow");
  return v;
}

inline std::optional<double> parse_opt(const std::string& s) {
  if (s == "NA") return std::nullopt;
  return parse_double(s);
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << text;
  if (!f) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace detail

inline std::string csv_text(const std::vector<DpCurvePoint>& points) {
  dptrav::detail::require(!points.empty(), "emit_csv: empty result");
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& p : points) {
    out += detail::fmt17(p.t0) + "," + detail::fmt17(p.distortion_mean) + "," + detail::fmt_opt(p.distortion_stderr) +
           "," + detail::fmt17(p.w2) + "," + detail::fmt_opt(p.w2_stderr) + "," + std::to_string(p.n_trials) + "\n";
  }
  return out;
}

inline void emit_csv(const SweepResult& r, const std::string& path) { detail::write_file(path, csv_text(r.points)); }

inline std::vector<DpCurvePoint> parse_csv_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw IoError("csv: missing or unexpected header");
  std::vector<DpCurvePoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw IoError("csv: expected 6 fields, got " + std::to_string(f.size()));
    try {
      DpCurvePoint p;
      p.t0 = detail::parse_double(f[0]);
      p.distortion_mean = detail::parse_double(f[1]);
      p.distortion_stderr = detail::parse_opt(f[2]);
      p.w2 = detail::parse_double(f[3]);
      p.w2_stderr = detail::parse_opt(f[4]);
      p.n_trials = static_cast<std::size_t>(std::stoull(f[5]));
      out.push_back(p);
    } catch (const std::logic_error&) {
      throw IoError("csv: malformed number in line: " + line);
    }
  }
  return out;
}

inline std::vector<DpCurvePoint> parse_csv(const std::string& path) { return parse_csv_text(detail::read_file(path)); }

/// Scatter of (W2, sqrt(distortion)) with the ideal curve sqrt(D(P)) overlaid.
inline std::string svg_text(const std::vector<DpCurvePoint>& points,
                            const std::vector<std::pair<double, double>>& ideal) {
  dptrav::detail::require(!points.empty(), "emit_svg: empty result");
  constexpr double kW = 640, kH = 480, kL = 70, kR = 20, kT = 20, kB = 60;
  double xmax = 0.0, ymin = std::numeric_limits<double>::infinity(), ymax = 0.0;
  for (const auto& p : points) {
    xmax = std::max(xmax, p.w2);
    ymin = std::min(ymin, std::sqrt(p.distortion_mean));
    ymax = std::max(ymax, std::sqrt(p.distortion_mean));
  }
  for (const auto& [pp, d] : ideal) {
    xmax = std::max(xmax, pp);
    ymin = std::min(ymin, std::sqrt(d));
    ymax = std::max(ymax, std::sqrt(d));
  }
  xmax = xmax > 0.0 ? 1.05 * xmax : 1.0;
  ymin = std::max(0.0, 0.95 * ymin);
  ymax = ymax > ymin ? 1.05 * ymax : ymin + 1.0;
  const auto sx = [&](double v) { return kL + (kW - kL - kR) * v / xmax; };
  const auto sy = [&](double v) { return kH - kB - (kH - kT - kB) * (v - ymin) / (ymax - ymin); };
  const auto f = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  const auto g = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return std::string(buf);
  };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 "
    << kW << " " << kH << "\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  s << "<line class=\"axis\" x1=\"" << f(kL) << "\" y1=\"" << f(kH - kB) << "\" x2=\"" << f(kW - kR) << "\" y2=\""
    << f(kH - kB) << "\" stroke=\"black\"/>\n";
  s << "<line class=\"axis\" x1=\"" << f(kL) << "\" y1=\"" << f(kT) << "\" x2=\"" << f(kL) << "\" y2=\"" << f(kH - kB)
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmax * i / 4.0, yv = ymin + (ymax - ymin) * i / 4.0;
    s << "<text class=\"tick\" x=\"" << f(sx(xv)) << "\" y=\"" << f(kH - kB + 18) << "\" font-size=\"11\" "
      << "text-anchor=\"middle\">" << g(xv) << "</text>\n";
    s << "<text class=\"tick\" x=\"" << f(kL - 6) << "\" y=\"" << f(sy(yv) + 4) << "\" font-size=\"11\" "
      << "text-anchor=\"end\">" << g(yv) << "</text>\n";
  }
  s << "<text class=\"label\" x=\"" << f((kL + kW - kR) / 2) << "\" y=\"" << f(kH - 15)
    << "\" text-anchor=\"middle\" font-size=\"14\">perception W2</text>\n";
  s << "<text class=\"label\" x=\"18\" y=\"" << f((kT + kH - kB) / 2) << "\" text-anchor=\"middle\" font-size=\"14\" "
    << "transform=\"rotate(-90 18 " << f((kT + kH - kB) / 2) << ")\">sqrt distortion (RMSE)</text>\n";
  if (!ideal.empty()) {
    s << "<path class=\"ideal\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" d=\"";
    for (std::size_t i = 0; i < ideal.size(); ++i) {
      s << (i == 0 ? "M" : " L") << f(sx(ideal[i].first)) << "," << f(sy(std::sqrt(ideal[i].second)));
    }
    s << "\"/>\n";
  }
  for (const auto& p : points) {
    s << "<circle class=\"point\" cx=\"" << f(sx(p.w2)) << "\" cy=\"" << f(sy(std::sqrt(p.distortion_mean)))
      << "\" r=\"4\" fill=\"firebrick\"><title>t0=" << g(p.t0) << "</title></circle>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline void emit_svg(const SweepResult& r, const std::string& path) {
  detail::write_file(path, svg_text(r.points, r.ideal_curve));
}

inline json summary_json(const SweepResult& r) {
  json j;
  j["version"] = r.provenance.version;
  j["seed"] = r.provenance.seed;
  char hex[20];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(r.provenance.config_hash));
  j["config_hash"] = hex;
  j["failed_trials"] = r.failed_trials;
  if (r.endpoints) {
    j["endpoints"] = {{"d_star", r.endpoints->d_star}, {"p_star", r.endpoints->p_star}};
  } else {
    j["endpoints"] = nullptr;
  }
  return j;
}

inline void emit_summary(const SweepResult& r, const std::string& path) {
  detail::write_file(path, summary_json(r).dump(2) + "\n");
}

}  // namespace dptrav::harness
