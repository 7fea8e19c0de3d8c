#ifndef REFSR_RETRIEVAL_HPP_
#define REFSR_RETRIEVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "refsr/binary_io.hpp"
#include "refsr/error.hpp"
#include "refsr/features.hpp"
#include "refsr/image.hpp"
#include "refsr/parallel.hpp"

namespace refsr {

using WordId = std::uint32_t;
using ImageId = std::uint32_t;

struct Vocabulary {
  std::vector<Descriptor144> centroids;

  int k() const { return static_cast<int>(centroids.size()); }
};

struct KMeansResult {
  Vocabulary vocabulary;
  std::vector<double> sse;  // within-cluster SSE after each assignment step
  int iterations = 0;
};

namespace detail {

using DenseVec = std::array<double, kDescriptorSize>;

inline double sq_dist(const DenseVec& a, const Descriptor144& b) {
  double s = 0.0;
  for (int i = 0; i < kDescriptorSize; ++i) {
    const double d = a[i] - b.v[i];
    s += d * d;
  }
  return s;
}

inline int nearest(const std::vector<DenseVec>& centres, const Descriptor144& v, double* dist) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centres.size(); ++c) {
    const double d = sq_dist(centres[c], v);
    if (d < bd) {
      bd = d;
      best = static_cast<int>(c);
    }
  }
  if (dist) *dist = bd;
  return best;
}

}  // namespace detail

// k-means++ seeding then Lloyd iterations until the largest centroid
// movement drops below 1e-6 or `iters` steps have run.
inline KMeansResult kmeans(std::span<const Descriptor144> descs, int k, int iters, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("vocabulary needs k >= 2");
  if (descs.size() < static_cast<std::size_t>(k))
    throw InvalidArgument("vocabulary: fewer descriptors (" + std::to_string(descs.size()) +
                          ") than words (" + std::to_string(k) + ")");
  using detail::DenseVec;
  const std::size_t n = descs.size();
  std::mt19937_64 rng(seed);
  std::vector<DenseVec> centres;
  centres.reserve(static_cast<std::size_t>(k));
  std::vector<bool> chosen(n, false);
  auto take = [&](std::size_t i) {
    DenseVec c;
    for (int d = 0; d < kDescriptorSize; ++d) c[d] = descs[i].v[d];
    centres.push_back(c);
    chosen[i] = true;
  };
  take(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = detail::sq_dist(centres[0], descs[i]);
  while (centres.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : d2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i] || d2[i] == 0.0) continue;
        pick = i;
        r -= d2[i];
        if (r < 0.0) break;
      }
    }
    if (pick == n)  // only duplicates remain
      for (std::size_t i = 0; i < n && pick == n; ++i)
        if (!chosen[i]) pick = i;
    take(pick);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], detail::sq_dist(centres.back(), descs[i]));
  }

  KMeansResult result;
  std::vector<int> assign(n, 0);
  std::vector<double> dist(n, 0.0);
  for (int it = 0; it < std::max(1, iters); ++it) {
    parallel_for(n, [&](std::size_t i) { assign[i] = detail::nearest(centres, descs[i], &dist[i]); });
    double sse = 0.0;
    for (double d : dist) sse += d;
    result.sse.push_back(sse);
    result.iterations = it + 1;

    std::vector<DenseVec> sums(static_cast<std::size_t>(k), DenseVec{});
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = sums[static_cast<std::size_t>(assign[i])];
      for (int d = 0; d < kDescriptorSize; ++d) s[d] += descs[i].v[d];
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    double moved = 0.0;
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (counts[c] == 0) continue;  // empty clusters keep their centre
      double m = 0.0;
      for (int d = 0; d < kDescriptorSize; ++d) {
        const double v = sums[c][d] / static_cast<double>(counts[c]);
        m += (v - centres[c][d]) * (v - centres[c][d]);
        centres[c][d] = v;
      }
      moved = std::max(moved, std::sqrt(m));
    }
    if (moved < 1e-6) break;
  }
  result.vocabulary.centroids.resize(static_cast<std::size_t>(k));
  for (std::size_t c = 0; c < centres.size(); ++c)
    for (int d = 0; d < kDescriptorSize; ++d)
      result.vocabulary.centroids[c].v[d] = static_cast<float>(centres[c][d]);
  return result;
}

inline Vocabulary build_vocabulary(std::span<const Descriptor144> descs, int k, int iters, std::uint64_t seed) {
  return kmeans(descs, k, iters, seed).vocabulary;
}

// Nearest centroid; ties go to the lowest word id.
inline WordId quantize(const Descriptor144& v, const Vocabulary& vocab) {
  WordId best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < vocab.centroids.size(); ++c) {
    const double d = squared_distance(v, vocab.centroids[c]);
    if (d < bd) {
      bd = d;
      best = static_cast<WordId>(c);
    }
  }
  return best;
}

struct IndexParams {
  int max_keypoints = 500;
  DetectorParams detector{};
};

struct ScoredImage {
  ImageId id = 0;
  double score = 0.0;
};

// Sparse term frequencies (word ascending) of a bag of words.
inline std::vector<std::pair<WordId, float>> term_frequencies(std::span<const WordId> words) {
  std::map<WordId, std::size_t> counts;
  for (WordId w : words) ++counts[w];
  std::vector<std::pair<WordId, float>> tf;
  tf.reserve(counts.size());
  for (const auto& [w, c] : counts)
    tf.emplace_back(w, static_cast<float>(static_cast<double>(c) / static_cast<double>(words.size())));
  return tf;
}

inline std::vector<WordId> image_words(const ImagePlane& img, const Vocabulary& vocab, const IndexParams& params) {
  const auto feats = extract_features(img, params.max_keypoints, params.detector);
  std::vector<WordId> words(feats.size());
  parallel_for(feats.size(), [&](std::size_t i) { words[i] = quantize(feats[i].descriptor, vocab); });
  return words;
}

// tf-idf bag-of-words index scored by cosine similarity. idf is
// ln(1 + N / df) so a single-image corpus still scores itself at 1.
class InvertedIndex {
 public:
  struct Posting {
    ImageId image;
    float tf;
  };
  struct Entry {
    std::string path;
    std::vector<std::pair<WordId, float>> tf;
  };

  InvertedIndex() = default;
  explicit InvertedIndex(Vocabulary vocab) : vocab_(std::move(vocab)) {
    if (vocab_.k() < 2) throw InvalidArgument("InvertedIndex: vocabulary needs k >= 2");
    idf_.assign(static_cast<std::size_t>(vocab_.k()), 0.0f);
    rebuild();
  }

  const Vocabulary& vocabulary() const { return vocab_; }
  std::size_t size() const { return images_.size(); }
  bool contains(ImageId id) const { return images_.count(id) != 0; }
  bool committed() const { return committed_; }
  const std::map<ImageId, Entry>& images() const { return images_; }
  const std::vector<float>& idf() const { return idf_; }
  const std::string& path_of(ImageId id) const { return images_.at(id).path; }

  double doc_norm(ImageId id) const {
    auto it = doc_norms_.find(id);
    return it == doc_norms_.end() ? 0.0 : it->second;
  }

  void add_words(ImageId id, std::string path, std::span<const WordId> words) {
    add_tf(id, std::move(path), term_frequencies(words));
  }

  void add_tf(ImageId id, std::string path, std::vector<std::pair<WordId, float>> tf) {
    if (images_.count(id)) throw InvalidArgument("index: image id " + std::to_string(id) + " already indexed");
    for (const auto& [w, f] : tf)
      if (w >= static_cast<WordId>(vocab_.k())) throw InvalidArgument("index: word id out of range");
    images_.emplace(id, Entry{std::move(path), std::move(tf)});
    committed_ = false;
  }

  void index_image(ImageId id, const ImagePlane& img, std::string path, const IndexParams& params = {}) {
    const auto words = image_words(img, vocab_, params);
    if (words.empty()) std::cerr << "warning: image " << id << " has no keypoints; indexed with empty signature\n";
    add_words(id, std::move(path), words);
  }

  // Recomputes postings, idf and document norms.
  void commit() {
    const std::size_t k = static_cast<std::size_t>(vocab_.k());
    std::vector<std::size_t> df(k, 0);
    for (const auto& [id, e] : images_)
      for (const auto& [w, f] : e.tf) ++df[w];
    const double n = static_cast<double>(images_.size());
    for (std::size_t w = 0; w < k; ++w)
      idf_[w] = df[w] ? static_cast<float>(std::log(1.0 + n / static_cast<double>(df[w]))) : 0.0f;
    rebuild();
  }

  std::vector<ScoredImage> score_all(std::span<const WordId> words) const {
    if (!committed_) throw InvalidArgument("index: query before commit");
    const auto qtf = term_frequencies(words);
    std::map<ImageId, double> dot;
    for (const auto& [id, e] : images_) dot[id] = 0.0;
    double qn = 0.0;
    for (const auto& [w, f] : qtf) {
      const double qw = static_cast<double>(f) * idf_[w];
      qn += qw * qw;
      for (const auto& p : postings_[w]) dot[p.image] += qw * (static_cast<double>(p.tf) * idf_[w]);
    }
    qn = std::sqrt(qn);
    std::vector<ScoredImage> out;
    out.reserve(images_.size());
    for (const auto& [id, d] : dot) {
      const double dn = doc_norm(id);
      out.push_back({id, (qn > 0.0 && dn > 0.0) ? d / (qn * dn) : 0.0});
    }
    std::stable_sort(out.begin(), out.end(), [](const ScoredImage& a, const ScoredImage& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.id < b.id;
    });
    return out;
  }

  std::vector<ScoredImage> query_words(std::span<const WordId> words, int k) const {
    if (images_.empty()) return {};
    auto all = score_all(words);
    if (k >= 0 && all.size() > static_cast<std::size_t>(k)) all.resize(static_cast<std::size_t>(k));
    return all;
  }

  std::vector<ScoredImage> query_topk(const ImagePlane& img, int k, const IndexParams& params = {}) const {
    if (images_.empty()) return {};
    return query_words(image_words(img, vocab_, params), k);
  }

  // "BVW1" format; see README.
  void save(std::ostream& os) const {
    if (!committed_) throw InvalidArgument("index: save before commit");
    binary::write_magic(os, "BVW1");
    binary::write_u32(os, kVersion);
    binary::write_u32(os, static_cast<std::uint32_t>(vocab_.k()));
    for (const auto& c : vocab_.centroids)
      for (float v : c.v) binary::write_f32(os, v);
    binary::write_u32(os, static_cast<std::uint32_t>(images_.size()));
    for (const auto& [id, e] : images_) {
      if (e.path.size() > 0xffff) throw InvalidArgument("index: path too long");
      binary::write_u32(os, id);
      binary::write_u16(os, static_cast<std::uint16_t>(e.path.size()));
      os.write(e.path.data(), static_cast<std::streamsize>(e.path.size()));
      binary::write_u32(os, static_cast<std::uint32_t>(e.tf.size()));
      for (const auto& [w, f] : e.tf) {
        binary::write_u32(os, w);
        binary::write_f32(os, f);
      }
    }
    for (float v : idf_) binary::write_f32(os, v);
    if (!os) throw IoError("index: write failed");
  }

  static InvertedIndex load(std::istream& is) {
    constexpr const char* what = "index";
    binary::expect_magic(is, "BVW1", what);
    const auto version = binary::read_u32(is, what);
    if (version != kVersion) throw FormatError("index: unsupported version " + std::to_string(version));
    const auto k = binary::read_u32(is, what);
    if (k < 2 || k > (1u << 24)) throw FormatError("index: invalid vocabulary size");
    Vocabulary vocab;
    vocab.centroids.resize(k);
    for (auto& c : vocab.centroids)
      for (float& v : c.v) v = binary::read_f32(is, what);
    InvertedIndex idx(std::move(vocab));
    const auto count = binary::read_u32(is, what);
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto id = binary::read_u32(is, what);
      const auto len = binary::read_u16(is, what);
      std::string path = binary::read_string(is, len, what);
      const auto nnz = binary::read_u32(is, what);
      if (nnz > k) throw FormatError("index: signature larger than vocabulary");
      std::vector<std::pair<WordId, float>> tf(nnz);
      for (auto& [w, f] : tf) {
        w = binary::read_u32(is, what);
        f = binary::read_f32(is, what);
        if (w >= k) throw FormatError("index: word id out of range");
      }
      if (idx.images_.count(id)) throw FormatError("index: duplicate image id");
      idx.images_.emplace(id, Entry{std::move(path), std::move(tf)});
    }
    for (float& v : idx.idf_) v = binary::read_f32(is, what);
    idx.rebuild();
    return idx;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    save(os);
  }

  static InvertedIndex load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return load(is);
  }

 private:
  static constexpr std::uint32_t kVersion = 1;

  void rebuild() {
    postings_.assign(static_cast<std::size_t>(vocab_.k()), {});
    doc_norms_.clear();
    for (const auto& [id, e] : images_) {
      double n = 0.0;
      for (const auto& [w, f] : e.tf) {
        postings_[w].push_back({id, f});
        const double v = static_cast<double>(f) * idf_[w];
        n += v * v;
      }
      doc_norms_[id] = std::sqrt(n);
    }
    committed_ = true;
  }

  Vocabulary vocab_;
  std::map<ImageId, Entry> images_;
  std::vector<float> idf_;
  std::vector<std::vector<Posting>> postings_;
  std::map<ImageId, double> doc_norms_;
  bool committed_ = true;
};

}  // namespace refsr

#endif  // REFSR_RETRIEVAL_HPP_
