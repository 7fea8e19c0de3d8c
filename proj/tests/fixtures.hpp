// Synthetic images shared by the unit and acceptance tests.
#ifndef REFSR_TESTS_FIXTURES_HPP_
#define REFSR_TESTS_FIXTURES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "refsr/homography.hpp"
#include "refsr/image.hpp"

namespace fixtures {

using refsr::ImagePlane;

// Band-limited random texture in [0,1]: a sum of random sinusoids.
inline ImagePlane smooth_texture(int w, int h, std::uint64_t seed, int waves = 12, double max_freq = 0.25) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImagePlane img(w, h);
  std::vector<double> v(static_cast<std::size_t>(w) * h, 0.0);
  for (int k = 0; k < waves; ++k) {
    const double f = max_freq * (0.2 + 0.8 * u(rng));
    const double th = 2 * M_PI * u(rng), ph = 2 * M_PI * u(rng), a = 0.5 + u(rng);
    const double fx = f * std::cos(th), fy = f * std::sin(th);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) v[static_cast<std::size_t>(y) * w + x] += a * std::sin(2 * M_PI * (fx * x + fy * y) + ph);
  }
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  for (std::size_t i = 0; i < v.size(); ++i)
    img.samples()[i] = static_cast<float>(0.1 + 0.8 * (v[i] - *lo) / (*hi - *lo + 1e-12));
  return img;
}

// Piecewise-constant shapes over a shaded background with mild texture:
// corners for the detector, edges for the networks.
inline ImagePlane scene(int w, int h, std::uint64_t seed, int shapes = 14) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImagePlane img = smooth_texture(w, h, seed ^ 0x5eedULL, 8, 0.08);
  const double gx = u(rng) - 0.5, gy = u(rng) - 0.5;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img(x, y) = static_cast<float>(0.25 + 0.3 * img(x, y) + 0.2 * (gx * x / w + gy * y / h));
  for (int s = 0; s < shapes; ++s) {
    const double cx = u(rng) * w, cy = u(rng) * h;
    const double rx = (0.04 + 0.12 * u(rng)) * w, ry = (0.04 + 0.12 * u(rng)) * h;
    const float val = static_cast<float>(u(rng));
    const bool ellipse = u(rng) < 0.35;
    const double rot = u(rng) * M_PI;
    const double c = std::cos(rot), sn = std::sin(rot);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double lx = c * dx + sn * dy, ly = -sn * dx + c * dy;
        const bool in = ellipse ? (lx * lx) / (rx * rx) + (ly * ly) / (ry * ry) <= 1.0
                                : std::abs(lx) <= rx && std::abs(ly) <= ry;
        if (in) img(x, y) = val;
      }
  }
  for (float& v : img.samples()) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

inline ImagePlane uniform_noise(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImagePlane img(w, h);
  for (float& v : img.samples()) v = u(rng);
  return img;
}

inline ImagePlane add_noise(const ImagePlane& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  ImagePlane out = img;
  for (float& v : out.samples()) v = static_cast<float>(v + n(rng));
  return out;
}

// out(x, y) = img(x - dx, y - dy), replicate borders.
inline ImagePlane shift(const ImagePlane& img, int dx, int dy) {
  ImagePlane out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out(x, y) = img.clamped(x - dx, y - dy);
  return out;
}

struct RansacSet {
  refsr::Homography truth;
  std::vector<refsr::Correspondence> corrs;
  std::vector<bool> inlier;
};

// Points in [0,200]^2 mapped through a mild random homography plus
// Gaussian noise; a fraction is replaced by uniformly random targets.
inline RansacSet ransac_set(std::uint64_t seed, int n = 200, double outlier_frac = 0.3, double noise_px = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double th = (u(rng) - 0.5) * 0.35, sc = 0.9 + 0.2 * u(rng);
  const double tx = (u(rng) - 0.5) * 40, ty = (u(rng) - 0.5) * 40;
  const double px = (u(rng) - 0.5) * 2e-4, py = (u(rng) - 0.5) * 2e-4;
  RansacSet r;
  r.truth = refsr::Homography({sc * std::cos(th), -sc * std::sin(th), tx, sc * std::sin(th), sc * std::cos(th), ty,
                               px, py, 1.0});
  std::normal_distribution<double> noise(0.0, noise_px);
  const int outliers = static_cast<int>(std::lround(outlier_frac * n));
  for (int i = 0; i < n; ++i) {
    const refsr::Point2 src{200 * u(rng), 200 * u(rng)};
    refsr::Point2 dst = r.truth.apply(src);
    const bool in = i >= outliers;
    if (in) {
      dst.x += noise(rng);
      dst.y += noise(rng);
    } else {
      dst = {200 * u(rng), 200 * u(rng)};
    }
    r.corrs.push_back({src, dst, 0.0});
    r.inlier.push_back(in);
  }
  // interleave so outliers are not a prefix
  std::vector<std::size_t> perm(r.corrs.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  RansacSet out{r.truth, {}, {}};
  for (auto i : perm) {
    out.corrs.push_back(r.corrs[i]);
    out.inlier.push_back(r.inlier[i]);
  }
  return out;
}

// Mean distance between estimated and true mappings over the true inliers.
inline double inlier_reprojection(const RansacSet& set, const refsr::Homography& h) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < set.corrs.size(); ++i) {
    if (!set.inlier[i]) continue;
    const auto a = h.apply(set.corrs[i].src), b = set.truth.apply(set.corrs[i].src);
    s += std::hypot(a.x - b.x, a.y - b.y);
    ++n;
  }
  return s / n;
}

}  // namespace fixtures

#endif  // REFSR_TESTS_FIXTURES_HPP_
