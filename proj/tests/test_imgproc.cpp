#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "ssdesc/filters.hpp"
#include "ssdesc/homography.hpp"
#include "ssdesc/image_io.hpp"
#include "ssdesc/warp.hpp"
#include "test_support.hpp"

using namespace ssdesc;
using testing_support::random_image;
using testing_support::scratch_dir;
using testing_support::smooth_texture;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

float max_abs_diff(const GrayImage& a, const GrayImage& b) {
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels()[i] - b.pixels()[i]));
  return m;
}

}  // namespace

TEST(GrayImage, ClampsOnConstruction) {
  GrayImage img(2, 1, std::vector<float>{-0.5f, 1.5f});
  EXPECT_EQ(img(0, 0), 0.0f);
  EXPECT_EQ(img(1, 0), 1.0f);
  EXPECT_THROW(GrayImage(2, 2, std::vector<float>(3)), ShapeError);
  EXPECT_THROW(GrayImage(0, 2), ShapeError);
}

TEST(GrayImage, QuantizeRoundsHalfUp) {
  EXPECT_EQ(quantize_u8(0.0f), 0);
  EXPECT_EQ(quantize_u8(1.0f), 255);
  EXPECT_EQ(quantize_u8(0.5f), 128);  // 127.5 rounds up
  EXPECT_EQ(quantize_u8(2.0f), 255);
}

TEST(ImageIo, PgmEndpoints) {
  const auto dir = scratch_dir("pgm");
  write_bytes(dir / "a.pgm", std::string("P5\n2 1\n255\n") + char(0) + char(255));
  const GrayImage img = load_image((dir / "a.pgm").string());
  ASSERT_EQ(img.width(), 2);
  ASSERT_EQ(img.height(), 1);
  EXPECT_EQ(img(0, 0), 0.0f);
  EXPECT_EQ(img(1, 0), 1.0f);
}

TEST(ImageIo, LumaWeights) {
  EXPECT_NEAR(detail::luma(200, 200, 200), 200.0 / 255.0, 1e-6);
  EXPECT_NEAR(detail::luma(255, 0, 0), 0.299, 1e-6);
  EXPECT_NEAR(detail::luma(255, 255, 255), 1.0, 1e-6);
}

TEST(ImageIo, PngRoundTripIsQuantized) {
  const auto dir = scratch_dir("png");
  testing_support::Rng rng(3);
  const GrayImage img = random_image(13, 7, rng);
  save_image(img, (dir / "x.png").string());
  save_image(img, (dir / "x.pgm").string());
  const GrayImage a = load_image((dir / "x.png").string());
  const GrayImage b = load_image((dir / "x.pgm").string());
  EXPECT_EQ(a, b);
  EXPECT_LE(max_abs_diff(a, img), 0.5f / 255.0f + 1e-6f);
}

TEST(ImageIo, RejectsUnknownFormat) {
  const auto dir = scratch_dir("badimg");
  write_bytes(dir / "x.bin", "hello world");
  EXPECT_THROW(load_image((dir / "x.bin").string()), FormatError);
  EXPECT_THROW(load_image((dir / "missing.png").string()), IoError);
}

TEST(Clahe, ConstantImageUnchanged) {
  const GrayImage img(64, 48, 0.3f);
  EXPECT_EQ(clahe(img), img);
}

TEST(Clahe, TwoLevelsSpreadLikeEqualization) {
  // 8x8, half 0.25 and half 0.75, one tile, clip never binding.
  std::vector<float> px(64);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = i < 32 ? 0.25f : 0.75f;
  const GrayImage img(8, 8, px);
  const GrayImage out = clahe(img, {1000.0, 1, 1});
  // bins 64 and 191; CDF 32/64 and 64/64 scaled to 255 -> 127.5 and 255.
  const double lo = 0.25 + (127.5 - 64.0) / 255.0;
  const double hi = std::min(1.0, 0.75 + (255.0 - 191.0) / 255.0);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) EXPECT_NEAR(out(x, y), y < 4 ? lo : hi, 1e-6);
  }
  EXPECT_NEAR(lo, 0.5, 0.01);
  EXPECT_NEAR(hi, 1.0, 0.01);
}

TEST(Clahe, OutputInRange) {
  testing_support::Rng rng(11);
  const GrayImage out = clahe(random_image(100, 77, rng), {4.0, 8, 8});
  for (float v : out.pixels()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Clahe, RejectsBadParameters) {
  const GrayImage img(16, 16, 0.5f);
  EXPECT_THROW(clahe(img, {0.5, 8, 8}), ParameterError);
  EXPECT_THROW(clahe(img, {2.0, 0, 8}), ParameterError);
  EXPECT_THROW(clahe(img, {2.0, 32, 8}), ParameterError);
}

TEST(BoxBlur, ConstantStaysConstant) {
  const GrayImage img(20, 20, 0.7f);
  const GrayImage out = box_blur(img, 5);
  for (float v : out.pixels()) EXPECT_NEAR(v, 0.7f, 1e-6);
}

TEST(BoxBlur, ImpulseGivesUniformBlock) {
  GrayImage img(9, 9);
  img.set(4, 4, 1.0f);
  const GrayImage out = box_blur(img, 3);
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 9; ++x) {
      const bool inside = std::abs(x - 4) <= 1 && std::abs(y - 4) <= 1;
      EXPECT_NEAR(out(x, y), inside ? 1.0f / 9.0f : 0.0f, 1e-6);
    }
  }
}

TEST(BoxBlur, MatchesNaiveConvolution) {
  testing_support::Rng rng(5);
  const GrayImage img = random_image(16, 16, rng);
  for (int k : {3, 5, 10, 15}) {
    const GrayImage out = box_blur(img, k);
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        double s = 0.0;
        for (int dy = 0; dy < k; ++dy) {
          for (int dx = 0; dx < k; ++dx) s += img.clamped(x - k / 2 + dx, y - k / 2 + dy);
        }
        EXPECT_NEAR(out(x, y), s / (k * k), 1e-5) << "k=" << k << " at " << x << "," << y;
      }
    }
  }
}

TEST(BoxBlur, RejectsBadKernel) {
  const GrayImage img(8, 8);
  EXPECT_THROW(box_blur(img, 0), ParameterError);
  EXPECT_THROW(box_blur(img, 9), ParameterError);
}

TEST(Homography, PointMapping) {
  const Point2 p = apply_homography(Homography::identity(), {17.5, 3.0});
  EXPECT_DOUBLE_EQ(p.x, 17.5);
  EXPECT_DOUBLE_EQ(p.y, 3.0);
  const Point2 t = apply_homography(Homography::translation(8, 0), {0, 0});
  EXPECT_DOUBLE_EQ(t.x, 8.0);
  EXPECT_DOUBLE_EQ(t.y, 0.0);
  const Point2 r = apply_homography(Homography::rotation(M_PI / 2), {1, 0});
  EXPECT_NEAR(r.x, 0.0, 1e-12);
  EXPECT_NEAR(r.y, 1.0, 1e-12);
}

TEST(Homography, CanonicalScaleAndSingular) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity() * 4.0;
  m(0, 2) = 8.0;
  const Homography h(m);
  EXPECT_DOUBLE_EQ(h.matrix()(2, 2), 1.0);
  EXPECT_DOUBLE_EQ(h.matrix()(0, 2), 2.0);
  EXPECT_THROW(Homography(Eigen::Matrix3d::Zero()), NumericalError);
}

TEST(Homography, TextRoundTrip) {
  testing_support::Rng rng(2);
  const Homography h = random_homography(rng, {});
  const Homography back = parse_homography(format_homography(h));
  EXPECT_EQ(h.row_major(), back.row_major());
  EXPECT_THROW(parse_homography("1 2 3"), ParseError);
}

TEST(RandomHomography, DisabledFactorsGiveIdentity) {
  testing_support::Rng rng(1);
  TransformRanges r;
  r.rotation = r.scale = r.translation = false;
  EXPECT_EQ(random_homography(rng, r).row_major(), Homography::identity().row_major());
}

TEST(RandomHomography, RotationOnly) {
  testing_support::Rng rng(9);
  TransformRanges r;
  r.scale = r.translation = false;
  r.angles_deg = {5.0};
  const Eigen::Matrix3d m = random_homography(rng, r).matrix();
  const double c = std::cos(5.0 * M_PI / 180.0), s = std::sin(5.0 * M_PI / 180.0);
  EXPECT_NEAR(m(0, 0), c, 1e-12);
  EXPECT_NEAR(m(1, 1), c, 1e-12);
  EXPECT_NEAR(std::abs(m(0, 1)), s, 1e-12);
  EXPECT_NEAR(m(0, 1), -m(1, 0), 1e-12);
}

TEST(RandomHomography, SeedDeterminism) {
  testing_support::Rng a(42), b(42);
  EXPECT_EQ(random_homography(a, {}).row_major(), random_homography(b, {}).row_major());
}

TEST(Warp, IdentityIsBitExact) {
  testing_support::Rng rng(4);
  const GrayImage img = random_image(31, 17, rng);
  const WarpResult w = warp(img, Homography::identity(), 31, 17);
  EXPECT_EQ(w.image, img);
  EXPECT_TRUE(w.mask.all_valid());
}

TEST(Warp, IntegerShift) {
  testing_support::Rng rng(6);
  const GrayImage img = random_image(12, 5, rng);
  const WarpResult w = warp(img, Homography::translation(1, 0), 12, 5);
  for (int y = 0; y < 5; ++y) {
    EXPECT_EQ(w.image(0, y), 0.0f);
    EXPECT_FALSE(w.mask(0, y));
    for (int x = 1; x < 12; ++x) EXPECT_EQ(w.image(x, y), img(x - 1, y));
  }
}

TEST(Warp, ForwardThenInverseOnSmoothTexture) {
  testing_support::Rng rng(8);
  const GrayImage img = smooth_texture(128, 128, rng);
  const Homography h = Homography::translation(3.3, -2.7) * Homography::rotation(0.15, {64, 64}) *
                       Homography::scaling(1.07, {64, 64});
  const GrayImage fwd = warp(img, h, 128, 128).image;
  const GrayImage back = warp(fwd, h.inverse(), 128, 128).image;
  float worst = 0.0f;
  for (int y = 32; y < 96; ++y) {
    for (int x = 32; x < 96; ++x) worst = std::max(worst, std::abs(back(x, y) - img(x, y)));
  }
  EXPECT_LE(worst, 0.02f);
}
