#ifndef REFSR_IMAGE_HPP_
#define REFSR_IMAGE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "refsr/error.hpp"
#include "refsr/parallel.hpp"

namespace refsr {

// Single-channel row-major raster. Luma lives in [0,1]; HF residual maps are
// unbounded.
class ImagePlane {
 public:
  ImagePlane() = default;

  ImagePlane(int width, int height, float fill = 0.0f)
      : width_(width), height_(height) {
    if (width < 1 || height < 1)
      throw DimensionError("ImagePlane: dimensions must be positive, got " +
                           std::to_string(width) + "x" + std::to_string(height));
    samples_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  ImagePlane(int width, int height, std::vector<float> samples)
      : width_(width), height_(height), samples_(std::move(samples)) {
    if (width < 1 || height < 1)
      throw DimensionError("ImagePlane: dimensions must be positive");
    if (samples_.size() != static_cast<std::size_t>(width) * height)
      throw DimensionError("ImagePlane: sample count does not match dimensions");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  float& operator()(int x, int y) noexcept {
    return samples_[static_cast<std::size_t>(y) * width_ + x];
  }
  float operator()(int x, int y) const noexcept {
    return samples_[static_cast<std::size_t>(y) * width_ + x];
  }

  // Replicate-padded access.
  float clamped(int x, int y) const noexcept {
    x = std::clamp(x, 0, width_ - 1);
    y = std::clamp(y, 0, height_ - 1);
    return (*this)(x, y);
  }

  std::span<float> samples() noexcept { return samples_; }
  std::span<const float> samples() const noexcept { return samples_; }

  std::span<float> row(int y) noexcept {
    return {samples_.data() + static_cast<std::size_t>(y) * width_,
            static_cast<std::size_t>(width_)};
  }
  std::span<const float> row(int y) const noexcept {
    return {samples_.data() + static_cast<std::size_t>(y) * width_,
            static_cast<std::size_t>(width_)};
  }

  bool same_size(const ImagePlane& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_;
  }

  bool all_finite() const noexcept {
    return std::all_of(samples_.begin(), samples_.end(),
                       [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const ImagePlane&, const ImagePlane&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> samples_;
};

// Integer upsampling factor, restricted to 2, 3 or 4.
class ScaleFactor {
 public:
  explicit ScaleFactor(int s) : s_(s) {
    if (s < 2 || s > 4)
      throw InvalidArgument("scale factor must be 2, 3 or 4, got " + std::to_string(s));
  }
  int value() const noexcept { return s_; }
  operator int() const noexcept { return s_; }

 private:
  int s_;
};

inline void require_same_size(const ImagePlane& a, const ImagePlane& b, const char* what) {
  if (!a.same_size(b))
    throw DimensionError(std::string(what) + ": dimension mismatch (" +
                         std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                         " vs " + std::to_string(b.width()) + "x" +
                         std::to_string(b.height()) + ")");
}

// ---------------------------------------------------------------------------
// Color

enum class ColorSpace { rgb, ycbcr };

struct ColorImage {
  std::array<ImagePlane, 3> planes;
  ColorSpace space = ColorSpace::rgb;

  int width() const { return planes[0].width(); }
  int height() const { return planes[0].height(); }
};

// Full-range BT.601, chroma offset by 0.5.
inline ColorImage to_luma_chroma(const ColorImage& rgb) {
  if (rgb.space != ColorSpace::rgb) throw InvalidArgument("to_luma_chroma: input is not RGB");
  require_same_size(rgb.planes[0], rgb.planes[1], "to_luma_chroma");
  require_same_size(rgb.planes[0], rgb.planes[2], "to_luma_chroma");
  const int w = rgb.width(), h = rgb.height();
  ColorImage out{{ImagePlane(w, h), ImagePlane(w, h), ImagePlane(w, h)}, ColorSpace::ycbcr};
  for (std::size_t i = 0; i < rgb.planes[0].size(); ++i) {
    const double r = rgb.planes[0].samples()[i];
    const double g = rgb.planes[1].samples()[i];
    const double b = rgb.planes[2].samples()[i];
    out.planes[0].samples()[i] = static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
    out.planes[1].samples()[i] =
        static_cast<float>(0.5 - 0.168736 * r - 0.331264 * g + 0.5 * b);
    out.planes[2].samples()[i] =
        static_cast<float>(0.5 + 0.5 * r - 0.418688 * g - 0.081312 * b);
  }
  return out;
}

inline ColorImage to_rgb(const ColorImage& ycc) {
  if (ycc.space != ColorSpace::ycbcr) throw InvalidArgument("to_rgb: input is not YCbCr");
  require_same_size(ycc.planes[0], ycc.planes[1], "to_rgb");
  require_same_size(ycc.planes[0], ycc.planes[2], "to_rgb");
  const int w = ycc.width(), h = ycc.height();
  ColorImage out{{ImagePlane(w, h), ImagePlane(w, h), ImagePlane(w, h)}, ColorSpace::rgb};
  for (std::size_t i = 0; i < ycc.planes[0].size(); ++i) {
    const double y = ycc.planes[0].samples()[i];
    const double cb = ycc.planes[1].samples()[i] - 0.5;
    const double cr = ycc.planes[2].samples()[i] - 0.5;
    out.planes[0].samples()[i] = static_cast<float>(y + 1.402 * cr);
    out.planes[1].samples()[i] = static_cast<float>(y - 0.344136 * cb - 0.714136 * cr);
    out.planes[2].samples()[i] = static_cast<float>(y + 1.772 * cb);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Element-wise composition

inline ImagePlane add_maps(const ImagePlane& base, const ImagePlane& residual) {
  require_same_size(base, residual, "add_maps");
  ImagePlane out = base;
  auto o = out.samples();
  auto r = residual.samples();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += r[i];
  return out;
}

inline ImagePlane subtract_maps(const ImagePlane& a, const ImagePlane& b) {
  require_same_size(a, b, "subtract_maps");
  ImagePlane out = a;
  auto o = out.samples();
  auto s = b.samples();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= s[i];
  return out;
}

inline ImagePlane negate(const ImagePlane& a) {
  ImagePlane out = a;
  for (float& v : out.samples()) v = -v;
  return out;
}

inline ImagePlane add_constant(const ImagePlane& a, float c) {
  ImagePlane out = a;
  for (float& v : out.samples()) v += c;
  return out;
}

inline ImagePlane clamp01(const ImagePlane& a) {
  ImagePlane out = a;
  for (float& v : out.samples()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

inline double mean(const ImagePlane& a) {
  double s = 0.0;
  for (float v : a.samples()) s += v;
  return s / static_cast<double>(a.size());
}

// Population standard deviation.
inline double stddev(const ImagePlane& a) {
  const double m = mean(a);
  double s = 0.0;
  for (float v : a.samples()) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(a.size()));
}

inline ImagePlane crop(const ImagePlane& a, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w < 1 || h < 1 || x0 + w > a.width() || y0 + h > a.height())
    throw DimensionError("crop: rectangle outside image");
  ImagePlane out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(x, y) = a(x0 + x, y0 + y);
  return out;
}

// Largest top-left crop whose sides are multiples of s.
inline ImagePlane crop_to_multiple(const ImagePlane& a, ScaleFactor s) {
  const int w = a.width() / s * s, h = a.height() / s * s;
  if (w < 1 || h < 1) throw DimensionError("crop_to_multiple: image smaller than scale");
  if (w == a.width() && h == a.height()) return a;
  return crop(a, 0, 0, w, h);
}

// ---------------------------------------------------------------------------
// Filtering

// Normalized sampled Gaussian, radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian with replicate borders. sigma <= 0 is the identity.
inline ImagePlane gaussian_blur(const ImagePlane& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int w = img.width(), h = img.height();
  ImagePlane tmp(w, h), out(w, h);
  parallel_for(static_cast<std::size_t>(h), [&](std::size_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * img.clamped(x + i, y);
      tmp(x, y) = static_cast<float>(acc);
    }
  });
  parallel_for(static_cast<std::size_t>(h), [&](std::size_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.clamped(x, y + i);
      out(x, y) = static_cast<float>(acc);
    }
  });
  return out;
}

inline double default_blur_sigma(ScaleFactor s) { return 0.4 * s.value(); }

// Gaussian blur followed by s-fold block averaging.
inline ImagePlane degrade(const ImagePlane& hr, ScaleFactor s, double blur_sigma) {
  if (hr.width() % s != 0 || hr.height() % s != 0)
    throw DimensionError("degrade: image dimensions must be divisible by the scale");
  const ImagePlane blurred = gaussian_blur(hr, blur_sigma);
  const int w = hr.width() / s, h = hr.height() / s;
  ImagePlane out(w, h);
  const double norm = 1.0 / (s * s);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx) acc += blurred(x * s + dx, y * s + dy);
      out(x, y) = static_cast<float>(acc * norm);
    }
  return out;
}

inline ImagePlane degrade(const ImagePlane& hr, ScaleFactor s) {
  return degrade(hr, s, default_blur_sigma(s));
}

// Pixel replication: out(x, y) = lr(x / s, y / s).
inline ImagePlane upsample_replicate(const ImagePlane& lr, ScaleFactor s) {
  const int w = lr.width() * s, h = lr.height() * s;
  ImagePlane out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(x, y) = lr(x / s, y / s);
  return out;
}

// Keys cubic convolution kernel, a = -0.5.
inline double cubic_kernel(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

// Bicubic sample at continuous coordinates, replicate borders.
inline double sample_bicubic(const ImagePlane& img, double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  const int iu = static_cast<int>(fu), iv = static_cast<int>(fv);
  const double tu = u - fu, tv = v - fv;
  double wu[4], wv[4];
  for (int i = 0; i < 4; ++i) {
    wu[i] = cubic_kernel(tu - (i - 1));
    wv[i] = cubic_kernel(tv - (i - 1));
  }
  double acc = 0.0;
  for (int j = 0; j < 4; ++j) {
    double row = 0.0;
    for (int i = 0; i < 4; ++i) row += wu[i] * img.clamped(iu - 1 + i, iv - 1 + j);
    acc += wv[j] * row;
  }
  return acc;
}

inline double sample_bilinear(const ImagePlane& img, double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  const int iu = static_cast<int>(fu), iv = static_cast<int>(fv);
  const double tu = u - fu, tv = v - fv;
  const double a = img.clamped(iu, iv), b = img.clamped(iu + 1, iv);
  const double c = img.clamped(iu, iv + 1), d = img.clamped(iu + 1, iv + 1);
  return (1 - tv) * ((1 - tu) * a + tu * b) + tv * ((1 - tu) * c + tu * d);
}

// Separable bicubic resampling by an integer factor with pixel-centre
// alignment: output x samples input coordinate (x + 0.5) / s - 0.5.
inline ImagePlane upsample_bicubic(const ImagePlane& plane, ScaleFactor s) {
  const int w = plane.width() * s, h = plane.height() * s;
  // Weights depend only on the phase x mod s.
  std::vector<std::array<double, 4>> phase(s);
  std::vector<int> offset(s);
  for (int p = 0; p < s; ++p) {
    const double u = (p + 0.5) / s - 0.5;
    const double fu = std::floor(u);
    offset[p] = static_cast<int>(fu);
    for (int i = 0; i < 4; ++i) phase[p][i] = cubic_kernel(u - fu - (i - 1));
  }
  ImagePlane tmp(w, plane.height());
  for (int y = 0; y < plane.height(); ++y)
    for (int x = 0; x < w; ++x) {
      const int base = x / s + offset[x % s] - 1;
      const auto& k = phase[x % s];
      double acc = 0.0;
      for (int i = 0; i < 4; ++i) acc += k[i] * plane.clamped(base + i, y);
      tmp(x, y) = static_cast<float>(acc);
    }
  ImagePlane out(w, h);
  for (int y = 0; y < h; ++y) {
    const int base = y / s + offset[y % s] - 1;
    const auto& k = phase[y % s];
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = 0; i < 4; ++i) acc += k[i] * tmp.clamped(x, base + i);
      out(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Derivatives

struct Gradient {
  ImagePlane gx;
  ImagePlane gy;
};

// Central differences; replicate borders make the border stencils one-sided
// with half weight.
inline Gradient gradient(const ImagePlane& img) {
  const int w = img.width(), h = img.height();
  Gradient g{ImagePlane(w, h), ImagePlane(w, h)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      g.gx(x, y) = 0.5f * (img.clamped(x + 1, y) - img.clamped(x - 1, y));
      g.gy(x, y) = 0.5f * (img.clamped(x, y + 1) - img.clamped(x, y - 1));
    }
  return g;
}

// Sobel gradient magnitude.
inline ImagePlane edge_map(const ImagePlane& img) {
  const int w = img.width(), h = img.height();
  ImagePlane out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto p = [&](int dx, int dy) { return static_cast<double>(img.clamped(x + dx, y + dy)); };
      const double gx = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
      const double gy = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
      out(x, y) = static_cast<float>(std::sqrt(gx * gx + gy * gy));
    }
  return out;
}

}  // namespace refsr

#endif  // REFSR_IMAGE_HPP_
