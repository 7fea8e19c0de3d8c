#ifndef REFSR_METRICS_HPP_
#define REFSR_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "refsr/error.hpp"
#include "refsr/image.hpp"

namespace refsr {

// 10 log10(1 / MSE) for [0,1] planes; +inf when identical.
inline double psnr(const ImagePlane& a, const ImagePlane& b) {
  require_same_size(a, b, "psnr");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.samples()[i]) - b.samples()[i];
    s += d * d;
  }
  const double mse = s / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

// Valid-region separable filtering with an 11-tap Gaussian, sigma 1.5.
inline std::vector<double> ssim_filter(const std::vector<double>& img, int w, int h, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size()) / 2;
  const int ow = w - 2 * r, oh = h - 2 * r;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h), out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < static_cast<int>(k.size()); ++i) s += k[i] * img[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < static_cast<int>(k.size()); ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

inline std::vector<double> ssim_window() {
  std::vector<double> k(11);
  double s = 0.0;
  for (int i = 0; i < 11; ++i) s += k[i] = std::exp(-((i - 5) * (i - 5)) / (2.0 * 1.5 * 1.5));
  for (double& v : k) v /= s;
  return k;
}

}  // namespace detail

// Mean local SSIM over every fully contained 11x11 window.
inline double ssim(const ImagePlane& a, const ImagePlane& b) {
  require_same_size(a, b, "ssim");
  if (a.width() < 11 || a.height() < 11) throw DimensionError("ssim: images must be at least 11x11");
  const int w = a.width(), h = a.height();
  const std::size_t n = a.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a.samples()[i];
    y[i] = b.samples()[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto k = detail::ssim_window();
  const auto mx = detail::ssim_filter(x, w, h, k), my = detail::ssim_filter(y, w, h, k);
  const auto sxx = detail::ssim_filter(xx, w, h, k), syy = detail::ssim_filter(yy, w, h, k);
  const auto sxy = detail::ssim_filter(xy, w, h, k);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

// ---------------------------------------------------------------------------
// Reports

struct EvalRecord {
  std::string image;
  int scale = 0;
  std::string method;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

inline std::string format_db(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string format_ssim(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// image,scale,method,psnr_db,ssim
inline void write_csv(std::ostream& os, const std::vector<EvalRecord>& records) {
  os << "image,scale,method,psnr_db,ssim\n";
  char buf[64];
  for (const auto& r : records) {
    os << r.image << ',' << r.scale << ',' << r.method << ',';
    if (std::isinf(r.psnr_db))
      os << (r.psnr_db > 0 ? "inf" : "-inf");
    else {
      std::snprintf(buf, sizeof buf, "%.6f", r.psnr_db);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.6f\n", r.ssim);
    os << buf;
  }
}

struct ReportColumn {
  std::string method;
  int scale;
  auto operator<=>(const ReportColumn&) const = default;
};

struct ReportAverages {
  double psnr_db = 0.0;
  double ssim = 0.0;
  int count = 0;
};

inline std::map<ReportColumn, ReportAverages> column_averages(const std::vector<EvalRecord>& records) {
  std::map<ReportColumn, ReportAverages> avg;
  for (const auto& r : records) {
    auto& a = avg[{r.method, r.scale}];
    a.psnr_db += r.psnr_db;
    a.ssim += r.ssim;
    ++a.count;
  }
  for (auto& [c, a] : avg) {
    a.psnr_db /= a.count;
    a.ssim /= a.count;
  }
  return avg;
}

// One row per image, one PSNR/SSIM column pair per (method, scale), then the
// averages and one gain row per method against `proposed`.
inline void write_table(std::ostream& os, const std::vector<EvalRecord>& records,
                        const std::string& proposed = "proposed") {
  std::set<ReportColumn> cols;
  std::vector<std::string> images;
  std::map<std::pair<std::string, ReportColumn>, const EvalRecord*> cell;
  for (const auto& r : records) {
    cols.insert({r.method, r.scale});
    if (std::find(images.begin(), images.end(), r.image) == images.end()) images.push_back(r.image);
    cell[{r.image, {r.method, r.scale}}] = &r;
  }
  const auto avg = column_averages(records);
  std::size_t label_w = 8;
  for (const auto& im : images) label_w = std::max(label_w, im.size());
  for (const auto& c : cols) label_w = std::max(label_w, c.method.size() + 5);
  char buf[64];
  auto pad = [&](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };

  os << pad("image", label_w);
  for (const auto& c : cols) {
    std::snprintf(buf, sizeof buf, "  %s x%d", c.method.c_str(), c.scale);
    os << pad(buf, 18);
  }
  os << '\n';
  auto row = [&](const std::string& label, auto&& value) {
    os << pad(label, label_w);
    for (const auto& c : cols) os << pad("  " + value(c), 18);
    os << '\n';
  };
  for (const auto& im : images)
    row(im, [&](const ReportColumn& c) {
      auto it = cell.find({im, c});
      return it == cell.end() ? std::string("-") : format_db(it->second->psnr_db) + "/" + format_ssim(it->second->ssim);
    });
  row("average", [&](const ReportColumn& c) {
    const auto& a = avg.at(c);
    return format_db(a.psnr_db) + "/" + format_ssim(a.ssim);
  });
  std::set<std::string> methods;
  for (const auto& c : cols) methods.insert(c.method);
  if (!methods.count(proposed)) return;
  for (const auto& m : methods) {
    if (m == proposed) continue;
    row("gain vs " + m, [&](const ReportColumn& c) {
      if (c.method != proposed) return std::string("-");
      auto it = avg.find({m, c.scale});
      if (it == avg.end()) return std::string("-");
      const auto& p = avg.at(c);
      return format_db(p.psnr_db - it->second.psnr_db) + "/" + format_ssim(p.ssim - it->second.ssim);
    });
  }
}

}  // namespace refsr

#endif  // REFSR_METRICS_HPP_
