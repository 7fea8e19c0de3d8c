#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "refsr/retrieval.hpp"

using namespace refsr;

namespace {

std::vector<Descriptor144> clustered(int per_cluster, int clusters, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 0.01f);
  std::vector<Descriptor144> out;
  for (int c = 0; c < clusters; ++c)
    for (int i = 0; i < per_cluster; ++i) {
      Descriptor144 d;
      for (int k = 0; k < kDescriptorSize; ++k) d.v[k] = n(rng);
      d.v[c] += 1.0f;
      out.push_back(d);
    }
  return out;
}

std::vector<std::vector<WordId>> random_bags(int docs, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<WordId>> out(docs);
  for (auto& d : out) {
    const int len = 5 + static_cast<int>(rng() % 40);
    // skewed word frequencies so df varies
    for (int i = 0; i < len; ++i) d.push_back(static_cast<WordId>((rng() % k) * (rng() % k) / k));
  }
  return out;
}

}  // namespace

TEST(KMeans, SeparatesClustersAndSseDecreases) {
  const auto d = clustered(30, 5, 1);
  const auto r = kmeans(d, 5, 30, 7);
  ASSERT_EQ(r.vocabulary.k(), 5);
  for (std::size_t i = 1; i < r.sse.size(); ++i) EXPECT_LE(r.sse[i], r.sse[i - 1] * (1 + 1e-9));
  // members of one cluster share a word, different clusters do not
  std::vector<WordId> word(5);
  for (int c = 0; c < 5; ++c) {
    word[c] = quantize(d[c * 30], r.vocabulary);
    for (int i = 1; i < 30; ++i) EXPECT_EQ(quantize(d[c * 30 + i], r.vocabulary), word[c]);
  }
  std::sort(word.begin(), word.end());
  EXPECT_EQ(std::unique(word.begin(), word.end()), word.end());
}

TEST(KMeans, DeterministicAndValidatesArguments) {
  const auto d = clustered(10, 4, 2);
  EXPECT_EQ(kmeans(d, 4, 10, 3).vocabulary.centroids.size(), 4u);
  const auto a = kmeans(d, 4, 10, 3), b = kmeans(d, 4, 10, 3);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(a.vocabulary.centroids[c].v, b.vocabulary.centroids[c].v);
  EXPECT_THROW(kmeans(d, 1, 10, 3), InvalidArgument);
  EXPECT_THROW(kmeans(std::span(d).first(3), 4, 10, 3), InvalidArgument);
}

TEST(Quantize, TiesGoToLowestId) {
  Vocabulary v;
  v.centroids.resize(3);
  v.centroids[1].v[0] = 1.0f;
  v.centroids[2].v[0] = 1.0f;
  Descriptor144 q;
  q.v[0] = 1.0f;
  EXPECT_EQ(quantize(q, v), 1u);
}

TEST(TermFrequencies, CountsOverLength) {
  const std::vector<WordId> w{3, 1, 3, 3};
  const auto tf = term_frequencies(w);
  ASSERT_EQ(tf.size(), 2u);
  EXPECT_EQ(tf[0].first, 1u);
  EXPECT_FLOAT_EQ(tf[0].second, 0.25f);
  EXPECT_FLOAT_EQ(tf[1].second, 0.75f);
}

namespace {

InvertedIndex index_of(const std::vector<std::vector<WordId>>& bags, int k) {
  Vocabulary v;
  v.centroids.resize(k);
  InvertedIndex idx(v);
  for (std::size_t i = 0; i < bags.size(); ++i) idx.add_words(static_cast<ImageId>(i), "img" + std::to_string(i), bags[i]);
  idx.commit();
  return idx;
}

}  // namespace

TEST(InvertedIndex, RankingEqualsDenseOracle) {
  const int k = 64;
  const auto bags = random_bags(25, k, 9);
  const auto idx = index_of(bags, k);
  for (std::size_t q = 0; q < bags.size(); ++q) {
    const auto got = idx.query_words(bags[q], -1);
    const auto want = oracles::tfidf_rank(bags, k, bags[q]);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].id, want[i].id) << "query " << q << " rank " << i;
      EXPECT_NEAR(got[i].score, want[i].score, 1e-5);
    }
    EXPECT_EQ(got[0].id, q);
    EXPECT_NEAR(got[0].score, 1.0, 1e-6);
  }
}

TEST(InvertedIndex, SingleImageCorpusScoresItselfAtOne) {
  const std::vector<std::vector<WordId>> bags{{1, 2, 2, 5}};
  const auto idx = index_of(bags, 8);
  const auto r = idx.query_words(bags[0], 4);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_NEAR(r[0].score, 1.0, 1e-6);
}

TEST(InvertedIndex, ContractErrors) {
  Vocabulary v;
  v.centroids.resize(4);
  InvertedIndex idx(v);
  idx.add_words(0, "a", std::vector<WordId>{1});
  EXPECT_THROW(idx.add_words(0, "b", std::vector<WordId>{1}), InvalidArgument);
  EXPECT_THROW(idx.add_words(1, "b", std::vector<WordId>{9}), InvalidArgument);
  EXPECT_THROW(idx.query_words(std::vector<WordId>{1}, 1), InvalidArgument);  // not committed
  EXPECT_TRUE(InvertedIndex(v).query_words(std::vector<WordId>{1}, 3).empty());
  Vocabulary tiny;
  tiny.centroids.resize(1);
  EXPECT_THROW(InvertedIndex{tiny}, InvalidArgument);
}

TEST(InvertedIndex, SaveLoadRoundTrip) {
  const int k = 32;
  const auto bags = random_bags(8, k, 4);
  const auto idx = index_of(bags, k);
  std::stringstream ss;
  idx.save(ss);
  const auto back = InvertedIndex::load(ss);
  EXPECT_EQ(back.size(), idx.size());
  EXPECT_EQ(back.path_of(3), "img3");
  for (const auto& q : bags) {
    const auto a = idx.query_words(q, -1), b = back.query_words(q, -1);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].id, b[i].id);
      EXPECT_EQ(a[i].score, b[i].score);
    }
  }
  std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(InvertedIndex::load(cut), FormatError);
  bytes[0] = 'X';
  std::stringstream bad(bytes);
  EXPECT_THROW(InvertedIndex::load(bad), FormatError);
}

TEST(InvertedIndex, ImagesRetrieveThemselves) {
  std::vector<ImagePlane> imgs;
  std::vector<Descriptor144> all;
  for (int i = 0; i < 5; ++i) {
    imgs.push_back(fixtures::scene(80, 80, 40 + i));
    for (const auto& f : extract_features(imgs.back(), 200)) all.push_back(f.descriptor);
  }
  InvertedIndex idx(build_vocabulary(all, 40, 10, 1));
  for (int i = 0; i < 5; ++i) idx.index_image(i, imgs[i], "s" + std::to_string(i));
  idx.commit();
  for (int i = 0; i < 5; ++i) EXPECT_EQ(idx.query_topk(imgs[i], 1)[0].id, static_cast<ImageId>(i));
}
