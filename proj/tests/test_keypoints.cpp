#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "ssdesc/keypoints.hpp"
#include "ssdesc/synth.hpp"
#include "test_support.hpp"

using namespace ssdesc;
using testing_support::scratch_dir;

namespace {

GrayImage checkerboard(int size, int square) {
  GrayImage img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) img.set(x, y, ((x / square + y / square) % 2) ? 0.9f : 0.1f);
  }
  return img;
}

}  // namespace

TEST(Harris, ConstantImageHasNoCorners) {
  EXPECT_TRUE(detect_harris(GrayImage(64, 64, 0.4f)).empty());
}

TEST(Harris, CheckerboardCornersOnGrid) {
  // Corners sit between pixels 8k-1 and 8k, i.e. at 8k - 0.5 for k = 1..7.
  HarrisParams p;
  p.nms_radius = 4;
  const auto kps = detect_harris(checkerboard(64, 8), p);
  ASSERT_FALSE(kps.empty());
  std::vector<int> hit(49, 0);
  for (const auto& k : kps) {
    const double gx = std::round((k.x + 0.5) / 8.0), gy = std::round((k.y + 0.5) / 8.0);
    EXPECT_LE(std::abs(k.x - (8 * gx - 0.5)), 1.5) << k.x << "," << k.y;
    EXPECT_LE(std::abs(k.y - (8 * gy - 0.5)), 1.5) << k.x << "," << k.y;
    if (gx >= 1 && gx <= 7 && gy >= 1 && gy <= 7) ++hit[static_cast<int>((gy - 1) * 7 + (gx - 1))];
  }
  for (int i = 0; i < 49; ++i) EXPECT_EQ(hit[i], 1) << "grid corner " << i;
}

TEST(Harris, MaxNAndOrdering) {
  const auto frames = synth_frames(1, {.width = 200, .height = 160}, 3);
  HarrisParams p;
  p.max_n = 5;
  const auto kps = detect_harris(frames[0], p);
  EXPECT_LE(kps.size(), 5u);
  for (std::size_t i = 1; i < kps.size(); ++i) EXPECT_GE(kps[i - 1].response, kps[i].response);
  for (const auto& k : kps) {
    EXPECT_GE(k.x, 0);
    EXPECT_LT(k.x, 200);
    EXPECT_GE(k.y, 0);
    EXPECT_LT(k.y, 160);
  }
}

TEST(Harris, SuppressionRadius) {
  const auto frames = synth_frames(1, {.width = 240, .height = 200}, 5);
  const auto kps = detect_harris(frames[0], {});
  for (std::size_t i = 0; i < kps.size(); ++i) {
    for (std::size_t j = i + 1; j < kps.size(); ++j) {
      EXPECT_GT(std::max(std::abs(kps[i].x - kps[j].x), std::abs(kps[i].y - kps[j].y)), 8.0);
    }
  }
}

TEST(Harris, RejectsTinyImage) {
  EXPECT_THROW(detect_harris(GrayImage(16, 16)), ParameterError);
}

TEST(FilterBorder, Cases) {
  const std::vector<KeyPoint> kps = {{10, 10, 1, 1}, {128, 128, 1, 1}};
  const auto kept = filter_border(kps, 256, 256, 64);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].x, 128);
  EXPECT_EQ(filter_border(kps, 256, 256, 0), kps);
  EXPECT_THROW(filter_border(kps, 256, 256, -1), ParameterError);
}

TEST(FilterBorder, HalfOpenBounds) {
  const std::vector<KeyPoint> kps = {{64, 64, 1, 1}, {191, 191, 1, 1}, {192, 100, 1, 1}};
  EXPECT_EQ(filter_border(kps, 256, 256, 64).size(), 2u);
}

TEST(KeypointCsv, RoundTrip) {
  const auto dir = scratch_dir("kpcsv");
  testing_support::Rng rng(12);
  std::vector<KeyPoint> kps;
  for (int i = 0; i < 100; ++i) {
    kps.push_back({uniform(rng, 0, 720), uniform(rng, 0, 576), uniform(rng, 0, 5), uniform(rng, 0.5, 2)});
  }
  const std::string path = (dir / "k.csv").string();
  write_keypoints(path, kps);
  const auto back = read_keypoints(path);
  ASSERT_EQ(back.size(), kps.size());
  for (std::size_t i = 0; i < kps.size(); ++i) {
    EXPECT_NEAR(back[i].x, kps[i].x, 1e-6);
    EXPECT_NEAR(back[i].y, kps[i].y, 1e-6);
    EXPECT_NEAR(back[i].response, kps[i].response, 1e-6);
    EXPECT_NEAR(back[i].scale, kps[i].scale, 1e-6);
  }
}

TEST(KeypointCsv, HeaderOnlyIsEmpty) {
  const auto dir = scratch_dir("kpempty");
  const std::string path = (dir / "k.csv").string();
  std::ofstream(path) << "x,y,response,scale\n";
  EXPECT_TRUE(read_keypoints(path).empty());
}

TEST(KeypointCsv, BadRowNamesLine) {
  const auto dir = scratch_dir("kpbad");
  const std::string path = (dir / "k.csv").string();
  std::ofstream(path) << "x,y,response,scale\nabc,1,2,3\n";
  try {
    read_keypoints(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}
