#ifndef REFSR_FEATURES_HPP_
#define REFSR_FEATURES_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "refsr/error.hpp"
#include "refsr/image.hpp"
#include "refsr/parallel.hpp"

namespace refsr {

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double scale = 1.0;        // derivative scale of the detecting level, pixels
  double orientation = 0.0;  // radians, [0, 2pi)
  double response = 0.0;
  int level = 0;
};

inline constexpr int kDescriptorCells = 4;
inline constexpr int kDescriptorBins = 9;
inline constexpr int kDescriptorSize = kDescriptorCells * kDescriptorCells * kDescriptorBins;
static_assert(kDescriptorSize == 144);

struct Descriptor144 {
  std::array<float, kDescriptorSize> v{};

  friend bool operator==(const Descriptor144&, const Descriptor144&) = default;
};

inline double squared_distance(const Descriptor144& a, const Descriptor144& b) {
  double s = 0.0;
  for (int i = 0; i < kDescriptorSize; ++i) {
    const double d = static_cast<double>(a.v[i]) - b.v[i];
    s += d * d;
  }
  return s;
}

inline double norm(const Descriptor144& a) {
  double s = 0.0;
  for (float v : a.v) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

struct Feature {
  Keypoint keypoint;
  Descriptor144 descriptor;
};

struct DetectorParams {
  int levels = 3;
  double base_sigma = 1.0;          // derivative scale of level 0
  double integration_ratio = 1.5;   // integration sigma / derivative sigma
  double harris_k = 0.04;
  double response_threshold = 1e-7;
  int border = 4;
};

// Half-octave Gaussian scale space computed at full resolution: level l is
// smoothed with sigma = base_sigma * 2^(l/2), so keypoint coordinates and
// descriptor sampling share one pixel grid.
class ScaleSpace {
 public:
  struct Level {
    double sigma;
    ImagePlane smoothed;
    Gradient grad;
  };

  ScaleSpace(const ImagePlane& img, const DetectorParams& params) {
    for (int l = 0; l < params.levels; ++l) {
      const double sigma = params.base_sigma * std::pow(2.0, 0.5 * l);
      ImagePlane smoothed = gaussian_blur(img, sigma);
      Gradient grad = gradient(smoothed);
      levels_.push_back({sigma, std::move(smoothed), std::move(grad)});
    }
  }

  const Level& level(int l) const { return levels_.at(static_cast<std::size_t>(l)); }
  int size() const { return static_cast<int>(levels_.size()); }

  int nearest_level(double scale) const {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int l = 0; l < size(); ++l) {
      const double d = std::abs(std::log(levels_[l].sigma / scale));
      if (d < bd) {
        bd = d;
        best = l;
      }
    }
    return best;
  }

 private:
  std::vector<Level> levels_;
};

namespace detail {

inline ImagePlane harris_response(const ScaleSpace::Level& lvl, const DetectorParams& p) {
  const int w = lvl.grad.gx.width(), h = lvl.grad.gx.height();
  ImagePlane xx(w, h), yy(w, h), xy(w, h);
  auto gx = lvl.grad.gx.samples(), gy = lvl.grad.gy.samples();
  for (std::size_t i = 0; i < gx.size(); ++i) {
    xx.samples()[i] = gx[i] * gx[i];
    yy.samples()[i] = gy[i] * gy[i];
    xy.samples()[i] = gx[i] * gy[i];
  }
  const double si = p.integration_ratio * lvl.sigma;
  xx = gaussian_blur(xx, si);
  yy = gaussian_blur(yy, si);
  xy = gaussian_blur(xy, si);
  // Scale normalization: each derivative carries a factor sigma.
  const double norm = std::pow(lvl.sigma, 4);
  ImagePlane r(w, h);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double a = xx.samples()[i], b = yy.samples()[i], c = xy.samples()[i];
    const double det = a * b - c * c, tr = a + b;
    r.samples()[i] = static_cast<float>(norm * (det - p.harris_k * tr * tr));
  }
  return r;
}

inline double parabolic_offset(double left, double centre, double right) {
  const double denom = left - 2.0 * centre + right;
  if (std::abs(denom) < 1e-20) return 0.0;
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0) a += two_pi;
  if (a >= two_pi) a -= two_pi;
  return a;
}

// Peak of a 36-bin magnitude-weighted orientation histogram.
inline double dominant_orientation(const ScaleSpace::Level& lvl, double x, double y) {
  constexpr int bins = 36;
  std::array<double, bins> hist{};
  const double sigma = 1.5 * lvl.sigma;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  const int cx = static_cast<int>(std::lround(x)), cy = static_cast<int>(std::lround(y));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy > radius * radius) continue;
      const double gx = lvl.grad.gx.clamped(cx + dx, cy + dy);
      const double gy = lvl.grad.gy.clamped(cx + dx, cy + dy);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      const double wgt = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      const double a = wrap_angle(std::atan2(gy, gx));
      const int b = static_cast<int>(a / (2.0 * std::numbers::pi) * bins) % bins;
      hist[b] += wgt * mag;
    }
  std::array<double, bins> smooth{};
  for (int b = 0; b < bins; ++b)
    smooth[b] = 0.25 * hist[(b + bins - 1) % bins] + 0.5 * hist[b] + 0.25 * hist[(b + 1) % bins];
  int best = 0;
  for (int b = 1; b < bins; ++b)
    if (smooth[b] > smooth[best]) best = b;
  if (smooth[best] == 0.0) return 0.0;
  const double off = parabolic_offset(smooth[(best + bins - 1) % bins], smooth[best],
                                      smooth[(best + 1) % bins]);
  return wrap_angle((best + 0.5 + off) * 2.0 * std::numbers::pi / bins);
}

inline std::vector<Keypoint> detect_in(const ScaleSpace& space, const DetectorParams& params,
                                       int max_count) {
  std::vector<Keypoint> all;
  for (int l = 0; l < space.size(); ++l) {
    const auto& lvl = space.level(l);
    const ImagePlane r = harris_response(lvl, params);
    const int w = r.width(), h = r.height();
    const int b = std::max(1, params.border);
    for (int y = b; y < h - b; ++y)
      for (int x = b; x < w - b; ++x) {
        const float v = r(x, y);
        if (!(v >= params.response_threshold) || v <= 0.0f) continue;
        bool is_max = true;
        for (int dy = -1; dy <= 1 && is_max; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const float n = r(x + dx, y + dy);
            // Plateaus keep only their first pixel in raster order.
            if (n > v || (n == v && (dy < 0 || (dy == 0 && dx < 0)))) {
              is_max = false;
              break;
            }
          }
        if (!is_max) continue;
        Keypoint kp;
        kp.x = x + parabolic_offset(r(x - 1, y), v, r(x + 1, y));
        kp.y = y + parabolic_offset(r(x, y - 1), v, r(x, y + 1));
        kp.scale = lvl.sigma;
        kp.level = l;
        kp.response = v;
        all.push_back(kp);
      }
  }
  std::sort(all.begin(), all.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.response != b.response) return a.response > b.response;
    if (a.level != b.level) return a.level < b.level;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  if (max_count >= 0 && all.size() > static_cast<std::size_t>(max_count))
    all.resize(static_cast<std::size_t>(max_count));
  for (auto& kp : all) kp.orientation = dominant_orientation(space.level(kp.level), kp.x, kp.y);
  return all;
}

// 16x16 samples at spacing `scale`, rotated into the keypoint frame, each
// sample's gradient binned bilinearly into 4x4 cells and linearly into 9
// orientation bins.
inline std::optional<Descriptor144> describe_in(const ScaleSpace::Level& lvl, const Keypoint& kp) {
  constexpr int samples = 16;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double c = std::cos(kp.orientation), s = std::sin(kp.orientation);
  const double sigma_w = 0.5 * samples * kp.scale;
  std::array<double, kDescriptorSize> hist{};
  for (int i = 0; i < samples; ++i)
    for (int j = 0; j < samples; ++j) {
      const double u = (j - 7.5) * kp.scale, v = (i - 7.5) * kp.scale;
      const double x = kp.x + c * u - s * v;
      const double y = kp.y + s * u + c * v;
      const double gx = sample_bilinear(lvl.grad.gx, x, y);
      const double gy = sample_bilinear(lvl.grad.gy, x, y);
      const double gu = c * gx + s * gy;
      const double gv = -s * gx + c * gy;
      const double mag = std::hypot(gu, gv);
      if (mag == 0.0) continue;
      const double wgt = mag * std::exp(-(u * u + v * v) / (2.0 * sigma_w * sigma_w));
      const double ob = wrap_angle(std::atan2(gv, gu)) / two_pi * kDescriptorBins;
      const int ob0 = static_cast<int>(std::floor(ob)) % kDescriptorBins;
      const double obf = ob - std::floor(ob);
      const double cx = (j + 0.5) / 4.0 - 0.5;
      const double cy = (i + 0.5) / 4.0 - 0.5;
      const int cx0 = static_cast<int>(std::floor(cx)), cy0 = static_cast<int>(std::floor(cy));
      const double fx = cx - cx0, fy = cy - cy0;
      for (int dy = 0; dy <= 1; ++dy) {
        const int yc = cy0 + dy;
        if (yc < 0 || yc >= kDescriptorCells) continue;
        const double wy = dy ? fy : 1.0 - fy;
        for (int dx = 0; dx <= 1; ++dx) {
          const int xc = cx0 + dx;
          if (xc < 0 || xc >= kDescriptorCells) continue;
          const double wx = dx ? fx : 1.0 - fx;
          const int base = (yc * kDescriptorCells + xc) * kDescriptorBins;
          hist[base + ob0] += wgt * wy * wx * (1.0 - obf);
          hist[base + (ob0 + 1) % kDescriptorBins] += wgt * wy * wx * obf;
        }
      }
    }
  auto normalize = [&hist]() {
    double n = 0.0;
    for (double v : hist) n += v * v;
    n = std::sqrt(n);
    if (n < 1e-12) return false;
    for (double& v : hist) v /= n;
    return true;
  };
  if (!normalize()) return std::nullopt;
  for (double& v : hist) v = std::min(v, 0.2);
  if (!normalize()) return std::nullopt;
  Descriptor144 d;
  for (int k = 0; k < kDescriptorSize; ++k) d.v[k] = static_cast<float>(hist[k]);
  return d;
}

inline void require_detectable(const ImagePlane& img) {
  if (img.width() < 32 || img.height() < 32)
    throw DimensionError("feature detection needs at least a 32x32 image");
}

}  // namespace detail

// Multi-scale Harris corners sorted by descending response.
inline std::vector<Keypoint> detect_keypoints(const ImagePlane& img, int max_count,
                                              const DetectorParams& params = {}) {
  detail::require_detectable(img);
  const ScaleSpace space(img, params);
  return detail::detect_in(space, params, max_count);
}

// Empty when the sampled window has no gradient energy.
inline std::optional<Descriptor144> describe(const ImagePlane& img, const Keypoint& kp,
                                             const DetectorParams& params = {}) {
  const double l = std::clamp(2.0 * std::log2(kp.scale / params.base_sigma), 0.0,
                              static_cast<double>(params.levels - 1));
  const double sigma = params.base_sigma * std::pow(2.0, 0.5 * std::round(l));
  ImagePlane smoothed = gaussian_blur(img, sigma);
  Gradient grad = gradient(smoothed);
  const ScaleSpace::Level lvl{sigma, std::move(smoothed), std::move(grad)};
  return detail::describe_in(lvl, kp);
}

// detect + describe sharing one scale space; keypoints with degenerate
// descriptors are dropped, order is preserved.
inline std::vector<Feature> extract_features(const ImagePlane& img, int max_count,
                                             const DetectorParams& params = {}) {
  detail::require_detectable(img);
  const ScaleSpace space(img, params);
  const auto kps = detail::detect_in(space, params, max_count);
  std::vector<std::optional<Descriptor144>> descs(kps.size());
  parallel_for(kps.size(), [&](std::size_t i) {
    descs[i] = detail::describe_in(space.level(kps[i].level), kps[i]);
  });
  std::vector<Feature> out;
  out.reserve(kps.size());
  for (std::size_t i = 0; i < kps.size(); ++i)
    if (descs[i]) out.push_back({kps[i], *descs[i]});
  return out;
}

struct DescriptorMatch {
  int a = 0;  // index into the first list
  int b = 0;  // index into the second list
  double distance = 0.0;
};

// Lowe ratio test on L2 distance, then one-to-one by keeping the closest
// a-descriptor for each b-index. Sorted by a.
inline std::vector<DescriptorMatch> match_descriptors(std::span<const Descriptor144> a,
                                                      std::span<const Descriptor144> b,
                                                      double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("match_descriptors: ratio must be in (0,1)");
  if (b.size() < 2) return {};
  std::vector<std::optional<DescriptorMatch>> best(a.size());
  parallel_for(a.size(), [&](std::size_t i) {
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    int j1 = -1;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double d = squared_distance(a[i], b[j]);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        j1 = static_cast<int>(j);
      } else if (d < d2) {
        d2 = d;
      }
    }
    d1 = std::sqrt(d1);
    d2 = std::sqrt(d2);
    if (j1 >= 0 && d1 < ratio * d2) best[i] = DescriptorMatch{static_cast<int>(i), j1, d1};
  });
  std::vector<int> owner(b.size(), -1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!best[i]) continue;
    int& o = owner[static_cast<std::size_t>(best[i]->b)];
    if (o < 0 || best[i]->distance < best[static_cast<std::size_t>(o)]->distance) o = static_cast<int>(i);
  }
  std::vector<DescriptorMatch> out;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (best[i] && owner[static_cast<std::size_t>(best[i]->b)] == static_cast<int>(i)) out.push_back(*best[i]);
  return out;
}

inline std::vector<Descriptor144> descriptors_of(std::span<const Feature> feats) {
  std::vector<Descriptor144> d;
  d.reserve(feats.size());
  for (const auto& f : feats) d.push_back(f.descriptor);
  return d;
}

}  // namespace refsr

#endif  // REFSR_FEATURES_HPP_
