#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "refsr/metrics.hpp"

using namespace refsr;

TEST(Psnr, KnownValues) {
  const auto a = fixtures::smooth_texture(8, 8, 1);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_NEAR(psnr(ImagePlane(4, 4, 0.0f), ImagePlane(4, 4, 1.0f)), 0.0, 1e-12);
  // MSE 0.01 -> 20 dB
  const ImagePlane x(2, 2, std::vector<float>{0.5f, 0.5f, 0.5f, 0.5f});
  const ImagePlane y(2, 2, std::vector<float>{0.6f, 0.4f, 0.6f, 0.4f});
  EXPECT_NEAR(psnr(x, y), 20.0, 1e-5);
  EXPECT_THROW(psnr(a, ImagePlane(8, 7)), DimensionError);
}

TEST(Ssim, IdentityInversionAndSymmetry) {
  const auto a = fixtures::scene(40, 32, 2);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_LT(ssim(a, negate(add_constant(a, -1.0f))), 0.3);
  const auto b = fixtures::add_noise(a, 0.05, 3);
  EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
  EXPECT_THROW(ssim(ImagePlane(10, 20), ImagePlane(10, 20)), DimensionError);
  EXPECT_NO_THROW(ssim(ImagePlane(11, 11), ImagePlane(11, 11)));
}

TEST(Ssim, ConstantWindowsUseStabilizers) {
  // constant images: mean term only, (2ab + c1) / (a^2 + b^2 + c1)
  const double c1 = 1e-4;
  EXPECT_NEAR(ssim(ImagePlane(12, 12, 0.2f), ImagePlane(12, 12, 0.4f)),
              (2 * 0.2 * 0.4 + c1) / (0.04 + 0.16 + c1), 1e-6);
}

TEST(Metrics, DecreaseWithNoise) {
  const auto a = fixtures::scene(48, 48, 5);
  double last_p = INFINITY, last_s = 1.0 + 1e-9;
  for (double sigma : {0.01, 0.03, 0.1, 0.2}) {
    const auto b = fixtures::add_noise(a, sigma, 7);
    const double p = psnr(a, b), s = ssim(a, b);
    EXPECT_LT(p, last_p);
    EXPECT_LT(s, last_s);
    last_p = p;
    last_s = s;
  }
}

TEST(Report, CsvFormat) {
  std::ostringstream os;
  write_csv(os, {{"a.png", 3, "bicubic", 28.125, 0.8}, {"a.png", 3, "proposed", INFINITY, 1.0}});
  EXPECT_EQ(os.str(),
            "image,scale,method,psnr_db,ssim\n"
            "a.png,3,bicubic,28.125000,0.800000\n"
            "a.png,3,proposed,inf,1.000000\n");
}

TEST(Report, AveragesAndGainRows) {
  const std::vector<EvalRecord> r = {{"a", 3, "bicubic", 28.0, 0.80}, {"b", 3, "bicubic", 30.0, 0.90},
                                     {"a", 3, "proposed", 29.0, 0.82}, {"b", 3, "proposed", 31.5, 0.93}};
  const auto avg = column_averages(r);
  EXPECT_DOUBLE_EQ(avg.at({"bicubic", 3}).psnr_db, 29.0);
  EXPECT_DOUBLE_EQ(avg.at({"proposed", 3}).psnr_db, 30.25);
  EXPECT_EQ(avg.at({"proposed", 3}).count, 2);
  std::ostringstream os;
  write_table(os, r);
  const auto t = os.str();
  EXPECT_NE(t.find("29.00/0.8200"), std::string::npos);
  EXPECT_NE(t.find("average"), std::string::npos);
  EXPECT_NE(t.find("30.25/0.8750"), std::string::npos);
  EXPECT_NE(t.find("gain vs bicubic"), std::string::npos);
  EXPECT_NE(t.find("1.25/0.0250"), std::string::npos);
  std::ostringstream none;
  write_table(none, {r[0], r[1]});
  EXPECT_EQ(none.str().find("gain vs"), std::string::npos);
}
