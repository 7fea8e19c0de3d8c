// Slow reference implementations the library is checked against. None of
// these call the code under test except for plain data types.
#ifndef REFSR_TESTS_ORACLES_HPP_
#define REFSR_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "refsr/image.hpp"
#include "refsr/network.hpp"

namespace oracles {

// ---------------------------------------------------------------------------
// Dense tf-idf cosine ranking over explicit word lists.

struct Ranked {
  std::uint32_t id;
  double score;
};

inline std::vector<Ranked> tfidf_rank(const std::vector<std::vector<std::uint32_t>>& docs, int k,
                                      const std::vector<std::uint32_t>& query) {
  const std::size_t n = docs.size();
  std::vector<std::vector<double>> tf(n, std::vector<double>(k, 0.0));
  std::vector<double> df(k, 0.0);
  for (std::size_t d = 0; d < n; ++d) {
    for (auto w : docs[d]) tf[d][w] += 1.0;
    for (int w = 0; w < k; ++w) {
      if (tf[d][w] > 0) df[w] += 1.0;
      if (!docs[d].empty()) tf[d][w] /= static_cast<double>(docs[d].size());
    }
  }
  std::vector<double> idf(k, 0.0);
  for (int w = 0; w < k; ++w) idf[w] = df[w] > 0 ? std::log(1.0 + n / df[w]) : 0.0;
  std::vector<double> q(k, 0.0);
  for (auto w : query) q[w] += 1.0;
  for (double& v : q) v = query.empty() ? 0.0 : v / query.size();
  auto cosine = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (int w = 0; w < k; ++w) {
      const double x = a[w] * idf[w], y = b[w] * idf[w];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    return (na > 0 && nb > 0) ? dot / std::sqrt(na * nb) : 0.0;
  };
  std::vector<Ranked> out;
  for (std::size_t d = 0; d < n; ++d) out.push_back({static_cast<std::uint32_t>(d), cosine(q, tf[d])});
  std::stable_sort(out.begin(), out.end(), [](const Ranked& a, const Ranked& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Same-padded convolution by nested loops.

template <typename T>
refsr::Tensor<T> naive_conv(const refsr::ConvLayer<T>& l, const refsr::Tensor<T>& x) {
  refsr::Tensor<T> out(l.out_ch, x.height, x.width);
  const int ry = l.kh / 2, rx = l.kw / 2;
  for (int o = 0; o < l.out_ch; ++o)
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx) {
        double acc = l.bias[o];
        for (int i = 0; i < l.in_ch; ++i)
          for (int ky = 0; ky < l.kh; ++ky)
            for (int kx = 0; kx < l.kw; ++kx) {
              const int sy = y + ky - ry, sx = xx + kx - rx;
              if (sy < 0 || sy >= x.height || sx < 0 || sx >= x.width) continue;
              acc += static_cast<double>(l.w(o, i, ky, kx)) * x.at(i, sy, sx);
            }
        if (l.activation == refsr::Activation::relu) acc = std::max(acc, 0.0);
        out.at(o, y, xx) = static_cast<T>(acc);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Patch distance by explicit patch extraction and element-wise sums.

inline double gmse_distance(const refsr::ImagePlane& a, int ax, int ay, const refsr::ImagePlane& b, int bx, int by,
                            int n, double rho) {
  std::vector<double> p(n * n), q(n * n);
  double mp = 0, mq = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      p[y * n + x] = 255.0 * a(ax + x, ay + y);
      q[y * n + x] = 255.0 * b(bx + x, by + y);
      mp += p[y * n + x];
      mq += q[y * n + x];
    }
  mp /= n * n;
  mq /= n * n;
  auto at = [n](const std::vector<double>& v, int x, int y) {
    return v[std::clamp(y, 0, n - 1) * n + std::clamp(x, 0, n - 1)];
  };
  double d = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double e = (p[y * n + x] - mp) - (q[y * n + x] - mq);
      const double gpx = 0.5 * (at(p, x + 1, y) - at(p, x - 1, y)), gqx = 0.5 * (at(q, x + 1, y) - at(q, x - 1, y));
      const double gpy = 0.5 * (at(p, x, y + 1) - at(p, x, y - 1)), gqy = 0.5 * (at(q, x, y + 1) - at(q, x, y - 1));
      d += e * e + rho * ((gpx - gqx) * (gpx - gqx) + (gpy - gqy) * (gpy - gqy));
    }
  return d;
}

struct Best {
  int x, y;
  double gmse;
};

// Every centre within +-size of the query whose patch fits in the
// reference, stride 1. Ties go to the smallest (y, x). `dist` receives the
// two top-left corners and the side.
template <typename Dist>
std::optional<Best> exhaustive_match(const refsr::ImagePlane& ref, int qx, int qy, int size, Dist&& dist) {
  const int h = size / 2;
  std::optional<Best> best;
  for (int cy = qy - size; cy <= qy + size; ++cy)
    for (int cx = qx - size; cx <= qx + size; ++cx) {
      if (cx - h < 0 || cy - h < 0 || cx + h >= ref.width() || cy + h >= ref.height()) continue;
      const double g = dist(qx - h, qy - h, cx - h, cy - h, size) / (size * size);
      if (!best || g < best->gmse) best = Best{cx, cy, g};
    }
  return best;
}

inline std::optional<Best> exhaustive_match(const refsr::ImagePlane& target, const refsr::ImagePlane& ref, int qx,
                                            int qy, int size, double rho) {
  return exhaustive_match(ref, qx, qy, size, [&](int ax, int ay, int bx, int by, int n) {
    return gmse_distance(target, ax, ay, ref, bx, by, n, rho);
  });
}

}  // namespace oracles

#endif  // REFSR_TESTS_ORACLES_HPP_
