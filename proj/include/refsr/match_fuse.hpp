#ifndef REFSR_MATCH_FUSE_HPP_
#define REFSR_MATCH_FUSE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "refsr/error.hpp"
#include "refsr/image.hpp"
#include "refsr/parallel.hpp"

namespace refsr {

using RefId = std::uint32_t;

struct MatchParams {
  double rho = 10.0;
  std::array<int, 4> size_ladder{21, 17, 13, 9};
  std::array<double, 3> thresholds{200.0, 500.0, 800.0};
  int query_stride = 4;
  double weight_scale = 100.0;
  double reject_gmse = 1500.0;

  int initial_size() const { return size_ladder.front(); }
};

inline void validate(const MatchParams& p) {
  for (std::size_t i = 1; i < p.size_ladder.size(); ++i)
    if (p.size_ladder[i] >= p.size_ladder[i - 1]) throw InvalidArgument("patch sizes must be strictly decreasing");
  for (std::size_t i = 1; i < p.thresholds.size(); ++i)
    if (!(p.thresholds[i] > p.thresholds[i - 1])) throw InvalidArgument("size thresholds must be strictly increasing");
  for (int s : p.size_ladder)
    if (s < 3 || s % 2 == 0) throw InvalidArgument("patch sizes must be odd and at least 3");
  if (!(p.thresholds.front() > 0.0) || !(p.rho >= 0.0) || !(p.weight_scale > 0.0) || p.query_stride < 1 ||
      !(p.reject_gmse > 0.0))
    throw InvalidArgument("match parameters must be positive");
}

// ---------------------------------------------------------------------------
// Photometric transfer

// Global mean/std normalization of `ref` onto the statistics of `target`.
// Statistics are taken over the pixels flagged in the optional masks; the
// mapping is applied everywhere. No clamping.
inline ImagePlane photometric_transfer(const ImagePlane& ref, const ImagePlane& target,
                                       const std::vector<bool>* ref_mask = nullptr) {
  auto stats = [](const ImagePlane& p, const std::vector<bool>* m) {
    double s = 0.0, n = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (!m || (*m)[i]) {
        s += p.samples()[i];
        n += 1.0;
      }
    if (n == 0.0) throw EstimationError("photometric transfer: no valid reference pixels");
    const double mu = s / n;
    double v = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (!m || (*m)[i]) v += (p.samples()[i] - mu) * (p.samples()[i] - mu);
    return std::pair{mu, std::sqrt(v / n)};
  };
  if (ref_mask && ref_mask->size() != ref.size()) throw DimensionError("photometric transfer: mask size mismatch");
  const auto [mr, sr] = stats(ref, ref_mask);
  const auto [mt, st] = stats(target, nullptr);
  if (!(sr > 1e-8)) throw EstimationError("photometric transfer: reference has no contrast");
  const double gain = st / sr;
  ImagePlane out = ref;
  for (float& v : out.samples()) v = static_cast<float>((v - mr) * gain + mt);
  return out;
}

// ---------------------------------------------------------------------------
// Patch distance

namespace detail {

// Distance between the n x n patches at (ax, ay) in `a` and (bx, by)
// in `b`, on the 0..255 scale. Patch gradients use patch-local replicate
// borders.
inline double patch_distance_at(const ImagePlane& a, int ax, int ay, const ImagePlane& b, int bx, int by, int n,
                                double rho) {
  // mean of the difference, so identical patches give exactly 0
  double dm = 0.0;
  for (int y = 0; y < n; ++y) {
    const float* ra = a.row(ay + y).data() + ax;
    const float* rb = b.row(by + y).data() + bx;
    for (int x = 0; x < n; ++x) dm += static_cast<double>(ra[x]) - rb[x];
  }
  dm /= static_cast<double>(n) * n;
  double dp = 0.0, dg = 0.0;
  for (int y = 0; y < n; ++y) {
    const int yu = std::max(y - 1, 0), yd = std::min(y + 1, n - 1);
    const float* ra = a.row(ay + y).data() + ax;
    const float* rb = b.row(by + y).data() + bx;
    const float* ua = a.row(ay + yu).data() + ax;
    const float* ub = b.row(by + yu).data() + bx;
    const float* da = a.row(ay + yd).data() + ax;
    const float* db = b.row(by + yd).data() + bx;
    for (int x = 0; x < n; ++x) {
      const int xl = std::max(x - 1, 0), xr = std::min(x + 1, n - 1);
      const double e = (static_cast<double>(ra[x]) - rb[x]) - dm;
      dp += e * e;
      const double gx = 0.5 * ((static_cast<double>(ra[xr]) - ra[xl]) - (static_cast<double>(rb[xr]) - rb[xl]));
      const double gy = 0.5 * ((static_cast<double>(da[x]) - ua[x]) - (static_cast<double>(db[x]) - ub[x]));
      dg += gx * gx + gy * gy;
    }
  }
  return 255.0 * 255.0 * (dp + rho * dg);
}

}  // namespace detail

// d = |P^ - Q^|^2 + rho |grad P - grad Q|^2 with DC removed, on the 0..255
// scale.
inline double patch_distance(const ImagePlane& p, const ImagePlane& q, double rho) {
  require_same_size(p, q, "patch_distance");
  if (p.width() != p.height()) throw DimensionError("patch_distance: patches must be square");
  return detail::patch_distance_at(p, 0, 0, q, 0, 0, p.width(), rho);
}

// ---------------------------------------------------------------------------
// Matching

struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

// Per-pixel validity with O(1) rectangle queries.
class ValidityMask {
 public:
  ValidityMask() = default;
  ValidityMask(int width, int height, const std::vector<bool>& valid) : w_(width), h_(height) {
    if (valid.size() != static_cast<std::size_t>(width) * height) throw DimensionError("ValidityMask: size mismatch");
    sat_.assign(static_cast<std::size_t>(width + 1) * (height + 1), 0);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        sat_[idx(x + 1, y + 1)] = sat_[idx(x, y + 1)] + sat_[idx(x + 1, y)] - sat_[idx(x, y)] +
                                  (valid[static_cast<std::size_t>(y) * width + x] ? 0 : 1);
  }

  bool empty() const { return sat_.empty(); }

  // True if every pixel of the n x n block at (x0, y0) is valid.
  bool block_valid(int x0, int y0, int n) const {
    if (sat_.empty()) return true;
    return sat_[idx(x0 + n, y0 + n)] - sat_[idx(x0, y0 + n)] - sat_[idx(x0 + n, y0)] + sat_[idx(x0, y0)] == 0;
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * (w_ + 1) + x; }
  int w_ = 0, h_ = 0;
  std::vector<int> sat_;
};

struct PatchMatch {
  Pixel query;               // centre in the target
  RefId ref_id = 0;
  Pixel match;               // centre in the reference
  int size = 0;              // patch side
  double gmse = 0.0;         // distance / size^2
  double gmse_initial = 0.0; // at the initial size; drives adapt_size
  bool accepted = true;
  std::size_t grid_index = 0;
};

inline int coarse_stride(int size) { return std::max(1, size / 3); }

struct SearchResult {
  Pixel centre;
  double distance;
};

namespace detail {

inline bool better(double d, int y, int x, const std::optional<SearchResult>& best) {
  if (!best) return true;
  if (d != best->distance) return d < best->distance;
  if (y != best->centre.y) return y < best->centre.y;
  return x < best->centre.x;
}

}  // namespace detail

// Coarse scan at stride floor(size/3) over the 3*size window centred at the
// query, then a stride-1 scan of the (2*stride-1)^2 neighbourhood of the
// coarse winner. Ties go to the smallest (y, x). Returns nullopt when no
// candidate patch fits.
inline std::optional<PatchMatch> match_one(Pixel query, int size, const ImagePlane& target, const ImagePlane& ref,
                                           const MatchParams& params, const ValidityMask* mask = nullptr) {
  const int half = size / 2;
  if (size < 1 || size % 2 == 0) throw InvalidArgument("match_one: patch size must be odd");
  if (query.x - half < 0 || query.y - half < 0 || query.x + half >= target.width() ||
      query.y + half >= target.height())
    throw DimensionError("match_one: query patch exits the target");
  // candidate centres: within +-size of the query and fully inside ref
  const int lo_x = std::max(query.x - size, half), hi_x = std::min(query.x + size, ref.width() - 1 - half);
  const int lo_y = std::max(query.y - size, half), hi_y = std::min(query.y + size, ref.height() - 1 - half);
  if (lo_x > hi_x || lo_y > hi_y) return std::nullopt;

  const int qx0 = query.x - half, qy0 = query.y - half;
  auto eval = [&](int cx, int cy, std::optional<SearchResult>& best) {
    if (mask && !mask->block_valid(cx - half, cy - half, size)) return;
    const double d = detail::patch_distance_at(target, qx0, qy0, ref, cx - half, cy - half, size, params.rho);
    if (detail::better(d, cy, cx, best)) best = SearchResult{{cx, cy}, d};
  };

  const int stride = coarse_stride(size);
  std::optional<SearchResult> coarse;
  for (int oy = -(size / stride) * stride; oy <= size; oy += stride) {
    const int cy = query.y + oy;
    if (cy < lo_y || cy > hi_y) continue;
    for (int ox = -(size / stride) * stride; ox <= size; ox += stride) {
      const int cx = query.x + ox;
      if (cx >= lo_x && cx <= hi_x) eval(cx, cy, coarse);
    }
  }
  if (!coarse) return std::nullopt;

  std::optional<SearchResult> fine;
  const int r = stride - 1;
  for (int cy = std::max(lo_y, coarse->centre.y - r); cy <= std::min(hi_y, coarse->centre.y + r); ++cy)
    for (int cx = std::max(lo_x, coarse->centre.x - r); cx <= std::min(hi_x, coarse->centre.x + r); ++cx)
      eval(cx, cy, fine);

  PatchMatch m;
  m.query = query;
  m.match = fine->centre;
  m.size = size;
  m.gmse = fine->distance / (static_cast<double>(size) * size);
  m.gmse_initial = m.gmse;
  return m;
}

// Patch side from the initial-size GMSE: <=200 -> 21, <=500 -> 17,
// <=800 -> 13, otherwise 9 (for the default ladder).
inline int adapt_size(double g_min, const MatchParams& params) {
  if (!(g_min >= 0.0)) throw InvalidArgument("adapt_size: GMSE must be non-negative");
  for (std::size_t i = 0; i < params.thresholds.size(); ++i)
    if (g_min <= params.thresholds[i]) return params.size_ladder[i];
  return params.size_ladder.back();
}

// Query centres along one axis: top-left origins 0, stride, 2*stride, ...
// plus a final origin flush with the far border, offset by half the size.
inline std::vector<int> query_axis(int extent, int size, int stride) {
  std::vector<int> c;
  if (extent < size) return c;
  for (int o = 0; o + size <= extent; o += stride) c.push_back(o + size / 2);
  if (c.back() != extent - size + size / 2) c.push_back(extent - size + size / 2);
  return c;
}

inline std::vector<Pixel> query_grid(int width, int height, const MatchParams& params) {
  const auto xs = query_axis(width, params.initial_size(), params.query_stride);
  const auto ys = query_axis(height, params.initial_size(), params.query_stride);
  std::vector<Pixel> g;
  g.reserve(xs.size() * ys.size());
  for (int y : ys)
    for (int x : xs) g.push_back({x, y});
  return g;
}

struct MatchReference {
  RefId id = 0;
  const ImagePlane* image = nullptr;       // transferred reference intermediate
  const ValidityMask* mask = nullptr;      // optional
};

struct MatchSet {
  int width = 0;
  int height = 0;
  std::size_t grid_size = 0;
  std::size_t no_match = 0;
  std::vector<PatchMatch> matches;  // by reference id, then grid order

  std::size_t accepted() const {
    return static_cast<std::size_t>(std::count_if(matches.begin(), matches.end(), [](const auto& m) { return m.accepted; }));
  }
  std::size_t rejected() const { return matches.size() - accepted(); }
};

// Match every grid query against every reference: initial size first, then
// once more at the adapted size if it is smaller. Matches whose final or
// initial-size GMSE exceeds reject_gmse are kept but flagged.
inline MatchSet match_image(const ImagePlane& target, std::span<const MatchReference> refs, const MatchParams& params) {
  validate(params);
  std::vector<MatchReference> sorted(refs.begin(), refs.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].id == sorted[i - 1].id) throw InvalidArgument("match_image: duplicate reference id");
  const auto grid = query_grid(target.width(), target.height(), params);
  std::vector<std::optional<PatchMatch>> slots(grid.size() * sorted.size());
  parallel_for(slots.size(), [&](std::size_t k) {
    const auto& ref = sorted[k / grid.size()];
    const Pixel q = grid[k % grid.size()];
    auto m = match_one(q, params.initial_size(), target, *ref.image, params, ref.mask);
    if (!m) return;
    const double g0 = m->gmse;
    const int adapted = adapt_size(g0, params);
    if (adapted < params.initial_size()) {
      auto m2 = match_one(q, adapted, target, *ref.image, params, ref.mask);
      if (!m2) return;
      m = m2;
    }
    m->gmse_initial = g0;
    m->ref_id = ref.id;
    m->grid_index = k % grid.size();
    // Small patches match noise too well, so the initial-size
    // distance has to pass as well.
    m->accepted = m->gmse <= params.reject_gmse && g0 <= params.reject_gmse;
    slots[k] = *m;
  });
  MatchSet out{target.width(), target.height(), grid.size(), 0, {}};
  for (auto& s : slots) {
    if (s)
      out.matches.push_back(*s);
    else
      ++out.no_match;
  }
  return out;
}

// One line per match: ref id, query x y, match x y, size, gmse, accepted.
inline void dump_matches(std::ostream& os, const MatchSet& set) {
  os << "# ref_id query_x query_y match_x match_y size gmse accepted\n";
  char buf[160];
  for (const auto& m : set.matches) {
    std::snprintf(buf, sizeof buf, "%u %d %d %d %d %d %.6f %d\n", m.ref_id, m.query.x, m.query.y, m.match.x,
                  m.match.y, m.size, m.gmse, m.accepted ? 1 : 0);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Fusion

struct FuseSource {
  RefId id = 0;
  const ImagePlane* hf = nullptr;  // external HF map on the reference grid
};

struct FuseResult {
  ImagePlane fused;
  std::vector<int> coverage;         // |Omega_p|
  std::vector<double> weight_total;  // sum of normalized weights, 1 where covered
  std::vector<double> lo, hi;        // contributing value range

  double empty_fraction() const {
    if (coverage.empty()) return 0.0;
    return static_cast<double>(std::count(coverage.begin(), coverage.end(), 0)) / static_cast<double>(coverage.size());
  }
};

// Weighted mean of (value, gmse) pairs with weights exp(-d / scale).
inline double fuse_values(std::span<const std::pair<double, double>> contributions, double weight_scale = 100.0) {
  if (contributions.empty()) return 0.0;
  double dmin = std::numeric_limits<double>::infinity();
  for (const auto& c : contributions) dmin = std::min(dmin, c.second);
  double num = 0.0, den = 0.0;
  for (const auto& [v, d] : contributions) {
    const double w = std::exp(-(d - dmin) / weight_scale);
    num += w * v;
    den += w;
  }
  return num / den;
}

// Every accepted match spreads its reference HF patch onto the target patch
// it covers; each pixel averages its contributions with weights
// exp(-gmse / weight_scale). Contributions are visited in (reference id,
// grid index) order so the result does not depend on input order. The
// smallest d per pixel is factored out before exponentiating.
inline FuseResult fuse_detailed(const MatchSet& set, std::span<const FuseSource> sources, int width, int height,
                                double weight_scale = 100.0) {
  if (width < 1 || height < 1) throw DimensionError("fuse: invalid output size");
  if (!(weight_scale > 0.0)) throw InvalidArgument("fuse: weight scale must be positive");
  std::vector<const PatchMatch*> order;
  for (const auto& m : set.matches)
    if (m.accepted) order.push_back(&m);
  std::stable_sort(order.begin(), order.end(), [](const PatchMatch* a, const PatchMatch* b) {
    return a->ref_id != b->ref_id ? a->ref_id < b->ref_id : a->grid_index < b->grid_index;
  });
  auto hf_of = [&](RefId id) -> const ImagePlane& {
    for (const auto& s : sources)
      if (s.id == id) return *s.hf;
    throw InvalidArgument("fuse: no HF map for reference " + std::to_string(id));
  };

  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<double> dmin(n, std::numeric_limits<double>::infinity());
  auto visit = [&](auto&& fn) {
    for (const PatchMatch* m : order) {
      const ImagePlane& hf = hf_of(m->ref_id);
      const int half = m->size / 2;
      for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
          const int px = m->query.x + dx, py = m->query.y + dy;
          const int qx = m->match.x + dx, qy = m->match.y + dy;
          if (px < 0 || py < 0 || px >= width || py >= height) continue;
          if (qx < 0 || qy < 0 || qx >= hf.width() || qy >= hf.height()) continue;
          fn(static_cast<std::size_t>(py) * width + px, static_cast<double>(hf(qx, qy)), m->gmse);
        }
    }
  };
  visit([&](std::size_t p, double, double d) { dmin[p] = std::min(dmin[p], d); });

  FuseResult r{ImagePlane(width, height), std::vector<int>(n, 0), std::vector<double>(n, 0.0),
               std::vector<double>(n, std::numeric_limits<double>::infinity()),
               std::vector<double>(n, -std::numeric_limits<double>::infinity())};
  std::vector<double> num(n, 0.0), den(n, 0.0);
  visit([&](std::size_t p, double v, double d) {
    const double w = std::exp(-(d - dmin[p]) / weight_scale);
    num[p] += w * v;
    den[p] += w;
    ++r.coverage[p];
    r.lo[p] = std::min(r.lo[p], v);
    r.hi[p] = std::max(r.hi[p], v);
  });
  visit([&](std::size_t p, double, double d) { r.weight_total[p] += std::exp(-(d - dmin[p]) / weight_scale) / den[p]; });
  for (std::size_t p = 0; p < n; ++p) {
    if (r.coverage[p] == 0) {
      r.lo[p] = r.hi[p] = 0.0;
      continue;
    }
    r.fused.samples()[p] = static_cast<float>(num[p] / den[p]);
  }
  return r;
}

inline ImagePlane fuse(const MatchSet& set, std::span<const FuseSource> sources, int width, int height,
                       double weight_scale = 100.0) {
  return fuse_detailed(set, sources, width, height, weight_scale).fused;
}

// I^h = clamp(I_t + I_m, 0, 1)
inline ImagePlane compensate(const ImagePlane& intermediate, const ImagePlane& fused) {
  require_same_size(intermediate, fused, "compensate");
  return clamp01(add_maps(intermediate, fused));
}

}  // namespace refsr

#endif  // REFSR_MATCH_FUSE_HPP_
