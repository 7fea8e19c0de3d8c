#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "refsr/features.hpp"
#include "refsr/homography.hpp"
#include "refsr/parallel.hpp"

using namespace refsr;

namespace {

ImagePlane rotate90(const ImagePlane& img) {  // (x, y) -> (h - 1 - y, x)
  ImagePlane out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out(img.height() - 1 - y, x) = img(x, y);
  return out;
}

}  // namespace

TEST(Detector, FindsSortedCornersAwayFromBorder) {
  const auto img = fixtures::scene(96, 96, 3);
  const DetectorParams p;
  const auto kps = detect_keypoints(img, 200, p);
  ASSERT_GT(kps.size(), 20u);
  EXPECT_LE(kps.size(), 200u);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    EXPECT_GE(kps[i].x, p.border - 1);
    EXPECT_LE(kps[i].x, 96 - p.border);
    EXPECT_GE(kps[i].orientation, 0.0);
    EXPECT_LT(kps[i].orientation, 2 * M_PI);
    if (i) EXPECT_GE(kps[i - 1].response, kps[i].response);
  }
}

TEST(Detector, CornerOfSquareIsLocalizedToAPixel) {
  ImagePlane img(64, 64, 0.2f);
  for (int y = 20; y < 64; ++y)
    for (int x = 20; x < 64; ++x) img(x, y) = 0.8f;
  const auto kps = detect_keypoints(img, 5);
  ASSERT_FALSE(kps.empty());
  // coarser levels drift inwards along the diagonal by about their sigma
  bool fine_found = false;
  for (const auto& k : kps) {
    EXPECT_NEAR(k.x, 19.5, 1.0 + 2.0 * k.scale);
    EXPECT_NEAR(k.y, 19.5, 1.0 + 2.0 * k.scale);
    if (k.level == 0) {
      fine_found = true;
      EXPECT_NEAR(k.x, 19.5, 1.5);
      EXPECT_NEAR(k.y, 19.5, 1.5);
    }
  }
  EXPECT_TRUE(fine_found);
}

TEST(Detector, RejectsTinyImagesAndFlatImagesGiveNothing) {
  EXPECT_THROW(detect_keypoints(ImagePlane(31, 64), 10), DimensionError);
  EXPECT_TRUE(detect_keypoints(ImagePlane(40, 40, 0.5f), 10).empty());
}

TEST(Descriptor, UnitNormAndDeterministic) {
  const auto img = fixtures::scene(80, 80, 5);
  const auto a = extract_features(img, 100);
  const auto b = extract_features(img, 100);
  ASSERT_EQ(a.size(), b.size());
  ASSERT_FALSE(a.empty());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(norm(a[i].descriptor), 1.0, 1e-5);
    EXPECT_EQ(a[i].descriptor, b[i].descriptor);
  }
}

TEST(Descriptor, IndependentOfThreadCount) {
  const auto img = fixtures::scene(80, 80, 6);
  set_thread_count(1);
  const auto a = extract_features(img, 100);
  set_thread_count(4);
  const auto b = extract_features(img, 100);
  set_thread_count(0);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].descriptor, b[i].descriptor);
}

TEST(Descriptor, MatchesSurviveNinetyDegreeRotation) {
  const auto img = fixtures::scene(96, 96, 8);
  const auto rot = rotate90(img);
  const auto fa = extract_features(img, 150), fb = extract_features(rot, 150);
  const auto m = match_descriptors(descriptors_of(fa), descriptors_of(fb), 0.8);
  ASSERT_GE(m.size(), 10u);
  int good = 0;
  for (const auto& mm : m) {
    const auto& p = fa[mm.a].keypoint;
    const auto& q = fb[mm.b].keypoint;
    if (std::hypot(95 - p.y - q.x, p.x - q.y) < 2.0) ++good;
  }
  EXPECT_GE(good, static_cast<int>(0.7 * m.size()));
}

TEST(Matching, RatioTestAndOneToOne) {
  Descriptor144 a, b, c;
  a.v[0] = 1;
  b.v[1] = 1;
  c.v[0] = 0.9f;
  c.v[2] = 0.1f;
  std::vector<Descriptor144> left{a, c}, right{a, b};
  const auto m = match_descriptors(left, right, 0.8);
  // both left entries prefer right[0]; the closer one keeps it
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].a, 0);
  EXPECT_EQ(m[0].b, 0);
  EXPECT_TRUE(match_descriptors(left, std::vector<Descriptor144>{a}, 0.8).empty());
  EXPECT_THROW(match_descriptors(left, right, 1.0), InvalidArgument);
}

TEST(Registration, TranslatedSceneRecoversShift) {
  const auto img = fixtures::scene(96, 96, 12);
  const auto moved = fixtures::shift(img, 5, -3);
  const auto fr = extract_features(img, 200), ft = extract_features(moved, 200);
  const auto m = match_descriptors(descriptors_of(fr), descriptors_of(ft), 0.8);
  const auto corrs = to_correspondences(fr, ft, m);
  const auto fit = ransac_homography(corrs, {});
  ASSERT_GE(fit.inlier_count, 10);
  const auto p = fit.h.apply({48, 48});
  EXPECT_NEAR(p.x, 53, 0.3);
  EXPECT_NEAR(p.y, 45, 0.3);
}
