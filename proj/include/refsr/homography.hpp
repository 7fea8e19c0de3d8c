#ifndef REFSR_HOMOGRAPHY_HPP_
#define REFSR_HOMOGRAPHY_HPP_

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "refsr/error.hpp"
#include "refsr/features.hpp"
#include "refsr/image.hpp"
#include "refsr/parallel.hpp"
#include "refsr/seed.hpp"

namespace refsr {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// src lies in the reference, dst in the intermediate SR image.
struct Correspondence {
  Point2 src;
  Point2 dst;
  double match_score = 0.0;
};

// 3x3 projective transform, row-major, normalized so h[8] == 1.
class Homography {
 public:
  Homography() : h_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}
  explicit Homography(const std::array<double, 9>& h) : h_(h) { normalize(); }

  static Homography identity() { return {}; }
  static Homography translation(double tx, double ty) {
    return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1});
  }

  double operator()(int r, int c) const { return h_[r * 3 + c]; }
  const std::array<double, 9>& values() const { return h_; }

  Point2 apply(Point2 p) const {
    const double w = h_[6] * p.x + h_[7] * p.y + h_[8];
    return {(h_[0] * p.x + h_[1] * p.y + h_[2]) / w, (h_[3] * p.x + h_[4] * p.y + h_[5]) / w};
  }

  double determinant() const {
    return h_[0] * (h_[4] * h_[8] - h_[5] * h_[7]) - h_[1] * (h_[3] * h_[8] - h_[5] * h_[6]) +
           h_[2] * (h_[3] * h_[7] - h_[4] * h_[6]);
  }

  bool invertible() const { return std::abs(determinant()) > 1e-12; }

  // Adjugate over the determinant.
  Homography inverse() const {
    const double det = determinant();
    if (!(std::abs(det) > 1e-12)) throw EstimationError("homography is not invertible");
    const auto& a = h_;
    std::array<double, 9> inv{
        (a[4] * a[8] - a[5] * a[7]) / det, (a[2] * a[7] - a[1] * a[8]) / det,
        (a[1] * a[5] - a[2] * a[4]) / det, (a[5] * a[6] - a[3] * a[8]) / det,
        (a[0] * a[8] - a[2] * a[6]) / det, (a[2] * a[3] - a[0] * a[5]) / det,
        (a[3] * a[7] - a[4] * a[6]) / det, (a[1] * a[6] - a[0] * a[7]) / det,
        (a[0] * a[4] - a[1] * a[3]) / det};
    return Homography(inv);
  }

  Homography operator*(const Homography& o) const {
    std::array<double, 9> r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r[i * 3 + j] += h_[i * 3 + k] * o.h_[k * 3 + j];
    return Homography(r);
  }

  // Nine decimal reals, row-major.
  std::string to_string() const {
    std::ostringstream os;
    os.precision(17);
    for (int i = 0; i < 9; ++i) os << (i ? " " : "") << h_[i];
    return os.str();
  }

 private:
  void normalize() {
    if (h_[8] == 0.0 || !std::isfinite(h_[8]))
      throw EstimationError("homography with zero or non-finite h22");
    if (h_[8] != 1.0) {
      const double s = h_[8];
      for (double& v : h_) v /= s;
    }
  }

  std::array<double, 9> h_;
};

inline double reprojection_error(const Homography& h, const Correspondence& c) {
  const Point2 p = h.apply(c.src);
  return std::hypot(p.x - c.dst.x, p.y - c.dst.y);
}

namespace detail {

inline bool collinear(Point2 a, Point2 b, Point2 c, double scale) {
  const double area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  return std::abs(area) <= 1e-9 * scale * scale;
}

// Similarity mapping the centroid to the origin and the mean distance to sqrt(2).
inline Eigen::Matrix3d hartley_normalizer(std::span<const Point2> pts) {
  double mx = 0, my = 0;
  for (const auto& p : pts) {
    mx += p.x;
    my += p.y;
  }
  mx /= pts.size();
  my /= pts.size();
  double md = 0;
  for (const auto& p : pts) md += std::hypot(p.x - mx, p.y - my);
  md /= pts.size();
  if (!(md > 0)) throw EstimationError("DLT: all points coincide");
  const double s = std::sqrt(2.0) / md;
  Eigen::Matrix3d t;
  t << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;
  return t;
}

}  // namespace detail

// Normalized DLT least squares via SVD.
inline Homography dlt_homography(std::span<const Correspondence> corrs) {
  const std::size_t n = corrs.size();
  if (n < 4) throw EstimationError("DLT needs at least 4 correspondences");
  std::vector<Point2> src(n), dst(n);
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = corrs[i].src;
    dst[i] = corrs[i].dst;
  }
  if (n == 4) {
    double extent = 1.0;
    for (const auto& p : src) extent = std::max({extent, std::abs(p.x), std::abs(p.y)});
    for (const auto& p : dst) extent = std::max({extent, std::abs(p.x), std::abs(p.y)});
    for (int skip = 0; skip < 4; ++skip) {
      Point2 s3[3], d3[3];
      for (int i = 0, k = 0; i < 4; ++i)
        if (i != skip) {
          s3[k] = src[i];
          d3[k++] = dst[i];
        }
      if (detail::collinear(s3[0], s3[1], s3[2], extent) || detail::collinear(d3[0], d3[1], d3[2], extent))
        throw EstimationError("DLT: degenerate (collinear) minimal set");
    }
  }
  const Eigen::Matrix3d ts = detail::hartley_normalizer(src);
  const Eigen::Matrix3d td = detail::hartley_normalizer(dst);
  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d s = ts * Eigen::Vector3d(src[i].x, src[i].y, 1.0);
    const Eigen::Vector3d d = td * Eigen::Vector3d(dst[i].x, dst[i].y, 1.0);
    const double x = s(0), y = s(1), u = d(0), v = d(1);
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A well-posed problem has a one-dimensional null space.
  if (sv.size() >= 8 && sv(7) <= 1e-10 * sv(0)) throw EstimationError("DLT: degenerate configuration");
  const Eigen::VectorXd hv = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  const Eigen::Matrix3d hm = td.inverse() * hn * ts;
  if (std::abs(hm(2, 2)) < 1e-15 * hm.norm()) throw EstimationError("DLT: h22 vanishes");
  std::array<double, 9> h;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) h[r * 3 + c] = hm(r, c);
  Homography out(h);
  if (!out.invertible()) throw EstimationError("DLT: singular homography");
  return out;
}

struct RansacParams {
  double inlier_px = 3.0;
  int iterations = 2000;
  std::uint64_t seed = 0;
};

struct RansacResult {
  Homography h;
  std::vector<bool> inliers;
  int inlier_count = 0;
};

namespace detail {

inline int count_inliers(const Homography& h, std::span<const Correspondence> corrs, double px,
                         std::vector<bool>* mask) {
  int n = 0;
  if (mask) mask->assign(corrs.size(), false);
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const double e = reprojection_error(h, corrs[i]);
    if (e < px) {
      ++n;
      if (mask) (*mask)[i] = true;
    }
  }
  return n;
}

// Four distinct correspondences drawn from the iteration's own stream.
inline std::array<Correspondence, 4> minimal_sample(std::span<const Correspondence> corrs,
                                                    std::uint64_t seed, std::size_t iteration) {
  std::mt19937_64 rng(derive_seed(seed, iteration));
  std::uniform_int_distribution<std::size_t> pick(0, corrs.size() - 1);
  std::array<std::size_t, 4> idx{};
  for (int k = 0; k < 4; ++k) {
    bool fresh = false;
    while (!fresh) {
      idx[k] = pick(rng);
      fresh = true;
      for (int j = 0; j < k; ++j) fresh = fresh && idx[j] != idx[k];
    }
  }
  return {corrs[idx[0]], corrs[idx[1]], corrs[idx[2]], corrs[idx[3]]};
}

}  // namespace detail

// Each iteration draws its minimal sample from its own seeded stream, so a
// parallel scan selects the same model as a serial one: the winner is the
// highest inlier count, earliest iteration on ties.
inline RansacResult ransac_homography(std::span<const Correspondence> corrs, const RansacParams& params) {
  if (corrs.size() < 4) throw EstimationError("RANSAC needs at least 4 correspondences");
  const int iters = std::max(1, params.iterations);
  std::vector<int> counts(static_cast<std::size_t>(iters), -1);
  parallel_for(static_cast<std::size_t>(iters), [&](std::size_t it) {
    const auto sample = detail::minimal_sample(corrs, params.seed, it);
    try {
      const Homography h = dlt_homography(sample);
      counts[it] = detail::count_inliers(h, corrs, params.inlier_px, nullptr);
    } catch (const EstimationError&) {
      counts[it] = -1;
    }
  });
  int best_it = -1;
  for (int it = 0; it < iters; ++it)
    if (counts[it] > (best_it < 0 ? 3 : counts[best_it])) best_it = it;
  if (best_it < 0) throw EstimationError("RANSAC: no model with at least 4 inliers");

  // Re-derive the winning model from its stream, then refit on its inliers.
  RansacResult result;
  result.h = dlt_homography(detail::minimal_sample(corrs, params.seed, static_cast<std::size_t>(best_it)));
  result.inlier_count = detail::count_inliers(result.h, corrs, params.inlier_px, &result.inliers);

  for (int round = 0; round < 2; ++round) {
    std::vector<Correspondence> in;
    for (std::size_t i = 0; i < corrs.size(); ++i)
      if (result.inliers[i]) in.push_back(corrs[i]);
    Homography refit;
    try {
      refit = dlt_homography(in);
    } catch (const EstimationError&) {
      break;
    }
    std::vector<bool> mask;
    const int n = detail::count_inliers(refit, corrs, params.inlier_px, &mask);
    if (n < result.inlier_count) break;
    result.h = refit;
    result.inliers = std::move(mask);
    result.inlier_count = n;
  }
  return result;
}

// Builds src (reference) -> dst (target) pairs from descriptor matches, where
// `a` indexes the reference features and `b` the target features.
inline std::vector<Correspondence> to_correspondences(std::span<const Feature> reference,
                                                      std::span<const Feature> target,
                                                      std::span<const DescriptorMatch> matches) {
  std::vector<Correspondence> out;
  out.reserve(matches.size());
  for (const auto& m : matches) {
    const auto& r = reference[static_cast<std::size_t>(m.a)].keypoint;
    const auto& t = target[static_cast<std::size_t>(m.b)].keypoint;
    out.push_back({{r.x, r.y}, {t.x, t.y}, m.distance});
  }
  return out;
}

struct WarpResult {
  ImagePlane image;
  std::vector<bool> valid;  // row-major, true where the source falls inside ref
};

// Inverse warp with bicubic sampling: out(p) = ref(H^-1 p). Pixels whose
// source lies outside the reference are filled from the replicated border
// and flagged invalid.
inline WarpResult warp_to(const ImagePlane& ref, const Homography& h, int out_w, int out_h) {
  const Homography inv = h.inverse();
  WarpResult r{ImagePlane(out_w, out_h), std::vector<bool>(static_cast<std::size_t>(out_w) * out_h)};
  std::vector<char> valid(r.valid.size(), 0);
  const double eps = 1e-9;
  parallel_for(static_cast<std::size_t>(out_h), [&](std::size_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < out_w; ++x) {
      const Point2 s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      const bool inside = std::isfinite(s.x) && std::isfinite(s.y) && s.x >= -eps && s.y >= -eps &&
                          s.x <= ref.width() - 1 + eps && s.y <= ref.height() - 1 + eps;
      valid[yy * out_w + x] = inside ? 1 : 0;
      const double u = std::isfinite(s.x) ? std::clamp(s.x, -2.0, ref.width() + 1.0) : 0.0;
      const double v = std::isfinite(s.y) ? std::clamp(s.y, -2.0, ref.height() + 1.0) : 0.0;
      r.image(x, y) = static_cast<float>(sample_bicubic(ref, u, v));
    }
  });
  for (std::size_t i = 0; i < valid.size(); ++i) r.valid[i] = valid[i] != 0;
  return r;
}

}  // namespace refsr

#endif  // REFSR_HOMOGRAPHY_HPP_
