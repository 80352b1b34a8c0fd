#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace oodbench;
using oodbench::testing::TempDir;

namespace {

double at(const std::array<double, 5>& a, AttributeKind k) { return a[static_cast<std::size_t>(k)]; }

// Direct per-pixel evaluation of the attribute definitions.
std::array<double, 5> pixel_loop(const RgbImage& img) {
  const std::size_t n = img.pixel_count();
  double y_sum = 0.0, y2_sum = 0.0, s_sum = 0.0, t_sum = 0.0, cx = 0.0, cy = 0.0;
  std::size_t chroma = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.pixels[3 * i] / 255.0, g = img.pixels[3 * i + 1] / 255.0, b = img.pixels[3 * i + 2] / 255.0;
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    y_sum += y;
    y2_sum += y * y;
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    s_sum += mx > 0 ? (mx - mn) / mx : 0.0;
    t_sum += r - b;
    if (mx > mn) {
      double deg;
      if (mx == r) deg = 60.0 * std::fmod((g - b) / (mx - mn) + 6.0, 6.0);
      else if (mx == g) deg = 60.0 * ((b - r) / (mx - mn) + 2.0);
      else deg = 60.0 * ((r - g) / (mx - mn) + 4.0);
      cx += std::cos(deg * std::numbers::pi / 180.0);
      cy += std::sin(deg * std::numbers::pi / 180.0);
      ++chroma;
    }
  }
  const double mean_y = y_sum / n;
  double hue = 0.0;
  if (chroma > 0) {
    hue = std::atan2(cy, cx) / (2.0 * std::numbers::pi);
    if (hue < 0) hue += 1.0;
  }
  std::array<double, 5> out{};
  out[0] = hue;
  out[1] = s_sum / n;
  out[2] = mean_y;
  out[3] = t_sum / n;
  out[4] = std::sqrt(std::max(0.0, y2_sum / n - mean_y * mean_y));
  return out;
}

RgbImage smooth_raster(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double fx = 3 * u(rng), fy = 3 * u(rng), phase = 6 * u(rng);
  RgbImage img{w, h, 3, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = static_cast<double>(x) / w, sy = static_cast<double>(y) / h;
      const double base[3] = {0.5 + 0.4 * std::sin(fx * sx * 6 + phase), 0.4 + 0.3 * std::cos(fy * sy * 6),
                              0.3 + 0.3 * std::sin((sx + sy) * 5)};
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(base[c] + 0.08 * (u(rng) - 0.5), 0.0, 1.0);
        img.pixels[3 * (y * w + x) + c] = static_cast<std::uint8_t>(std::lround(v * 255));
      }
    }
  }
  return img;
}

}  // namespace

TEST(Attributes, MidGrayHasZeroSaturation) {
  const auto a = compute_attributes(RgbImage::filled(4, 4, 128, 128, 128));
  EXPECT_EQ(at(a, AttributeKind::Saturation), 0.0);
  EXPECT_NEAR(at(a, AttributeKind::Intensity), 0.5, 1.0 / 255.0);
  EXPECT_EQ(at(a, AttributeKind::Hue), 0.0);
}

TEST(Attributes, UniformHasZeroContrast) {
  EXPECT_EQ(compute_attribute(RgbImage::filled(5, 3, 10, 200, 90), AttributeKind::Contrast), 0.0);
}

TEST(Attributes, PureRedTemperatureIsOne) {
  const auto a = compute_attributes(RgbImage::filled(2, 2, 255, 0, 0));
  EXPECT_EQ(at(a, AttributeKind::Temperature), 1.0);
  EXPECT_EQ(at(a, AttributeKind::Saturation), 1.0);
  EXPECT_EQ(at(a, AttributeKind::Hue), 0.0);
  EXPECT_EQ(compute_attribute(RgbImage::filled(2, 2, 0, 0, 255), AttributeKind::Temperature), -1.0);
}

TEST(Attributes, HueCircularMeanAcrossWrap) {
  // Two reds either side of hue 0: the circular mean sits at 0, not at 0.5.
  RgbImage img{2, 1, 3, {255, 0, 20, 255, 20, 0}};
  const double hue = compute_attribute(img, AttributeKind::Hue);
  EXPECT_LT(std::min(hue, 1.0 - hue), 1e-9);
}

TEST(Attributes, BlackWhiteCheckerContrastIsHalf) {
  RgbImage img{2, 2, 3, {0, 0, 0, 255, 255, 255, 255, 255, 255, 0, 0, 0}};
  EXPECT_NEAR(compute_attribute(img, AttributeKind::Contrast), 0.5, 1e-12);
}

TEST(Attributes, MatchesPixelLoopOracle) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const RgbImage img = smooth_raster(64, 48, seed);
    const auto got = compute_attributes(img);
    const auto want = pixel_loop(img);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(got[k], want[k], 1e-9) << "attribute " << k;
  }
}

TEST(Attributes, PixelShuffleInvariant) {
  RgbImage img = smooth_raster(40, 30, 7);
  const auto before = compute_attributes(img);
  std::vector<std::array<std::uint8_t, 3>> px(img.pixel_count());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = {img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]};
  Rng rng(3);
  std::shuffle(px.begin(), px.end(), rng);
  for (std::size_t i = 0; i < px.size(); ++i) std::copy(px[i].begin(), px[i].end(), img.pixels.begin() + 3 * i);
  EXPECT_EQ(compute_attributes(img), before);
}

TEST(Attributes, RangesHold) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> byte(0, 255);
    RgbImage img{7, 5, 3, std::vector<std::uint8_t>(105)};
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(byte(rng));
    const auto a = compute_attributes(img);
    EXPECT_GE(at(a, AttributeKind::Hue), 0.0);
    EXPECT_LT(at(a, AttributeKind::Hue), 1.0);
    for (auto k : {AttributeKind::Saturation, AttributeKind::Intensity}) {
      EXPECT_GE(at(a, k), 0.0);
      EXPECT_LE(at(a, k), 1.0);
    }
    EXPECT_GE(at(a, AttributeKind::Temperature), -1.0);
    EXPECT_LE(at(a, AttributeKind::Temperature), 1.0);
    EXPECT_GE(at(a, AttributeKind::Contrast), 0.0);
    EXPECT_LE(at(a, AttributeKind::Contrast), 0.5);
  }
}

TEST(Attributes, IntensityMonotoneUnderBrightening) {
  RgbImage img = smooth_raster(16, 16, 11);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(p / 2);
  double last = compute_attribute(img, AttributeKind::Intensity);
  for (int step = 0; step < 5; ++step) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::min(255, p + 20));
    const double now = compute_attribute(img, AttributeKind::Intensity);
    EXPECT_GT(now, last);
    last = now;
  }
}

TEST(Attributes, RejectsEmptyOrNonRgb) {
  EXPECT_THROW(compute_attributes(RgbImage{0, 0, 3, {}}), ValidationError);
  EXPECT_THROW(compute_attributes(RgbImage{1, 1, 4, {1, 2, 3, 4}}), ValidationError);
}

TEST(ComputeAll, UniformBlackGrayWhite) {
  TempDir dir;
  SessionDataset s;
  s.session_id = "bgw";
  s.features.emplace("f", FeatureMatrix{RowMatrixF::Random(3, 2), "f"});
  s.responses = ResponseTensor(1, {1, 1, 1}, {1, 2, 3});
  const std::uint8_t levels[] = {0, 128, 255};
  for (int i = 0; i < 3; ++i) {
    const auto p = dir.path() / ("img" + std::to_string(i) + ".png");
    write_image(p, RgbImage::filled(8, 8, levels[i], levels[i], levels[i]));
    s.image_paths.push_back(p.string());
  }
  compute_all(s);
  ASSERT_TRUE(s.attributes.has_value());
  const auto& intensity = s.attributes->column(AttributeKind::Intensity);
  EXPECT_EQ(intensity[0], 0.0);
  EXPECT_NEAR(intensity[1], 0.5, 1.0 / 255.0);
  EXPECT_DOUBLE_EQ(intensity[2], 1.0);
}

TEST(ComputeAll, CorruptFileGivesNoTable) {
  TempDir dir;
  SessionDataset s;
  s.session_id = "bad";
  s.features.emplace("f", FeatureMatrix{RowMatrixF::Random(2, 2), "f"});
  s.responses = ResponseTensor(1, {1, 1}, {1, 2});
  write_image(dir.path() / "ok.png", RgbImage::filled(4, 4, 1, 2, 3));
  {
    std::ofstream out(dir.path() / "broken.png", std::ios::binary);
    out << "not a png";
  }
  s.image_paths = {(dir.path() / "ok.png").string(), (dir.path() / "broken.png").string()};
  try {
    compute_all(s);
    FAIL() << "expected a decode error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.png"), std::string::npos);
  }
  EXPECT_FALSE(s.attributes.has_value());
}

TEST(ImageIo, PngRoundTripIsLossless) {
  TempDir dir;
  const RgbImage img = smooth_raster(20, 10, 5);
  write_image(dir.path() / "x.png", img);
  const RgbImage back = decode_image(dir.path() / "x.png");
  EXPECT_EQ(back.width, img.width);
  EXPECT_EQ(back.height, img.height);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(ImageIo, JpegDecodesThroughSamePath) {
  TempDir dir;
  const RgbImage img = smooth_raster(32, 32, 6);
  write_image(dir.path() / "x.jpg", img);
  const RgbImage back = decode_image(dir.path() / "x.jpg");
  const auto got = compute_attributes(back);
  const auto want = pixel_loop(back);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(got[k], want[k], 1e-9);
  // Lossy, but close to the source.
  EXPECT_NEAR(at(got, AttributeKind::Intensity), at(compute_attributes(img), AttributeKind::Intensity), 0.02);
}
