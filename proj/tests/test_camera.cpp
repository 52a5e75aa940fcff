#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "aemeter/camera.hpp"
#include "aemeter/datasets.hpp"
#include "aemeter/image_io.hpp"

using namespace aemeter;

namespace {

constexpr double kGammaRoundTrip = 1e-6;
constexpr double kEvRoundTrip = 1e-9;
constexpr double kShiftTol = 1e-9;

ImagePlane random_image(int w, int h, Rng& rng, double lo = 0.0, double hi = 1.0) {
  ImagePlane img(w, h, ColorSpace::Encoded);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : img.values) v = u(rng);
  return img;
}

double lin(double v) { return std::pow(v, kDefaultGamma); }

}  // namespace

TEST(EvFromSettings, Values) {
  EXPECT_DOUBLE_EQ(ev_from_settings(1.0, 1.0), 0.0);
  EXPECT_NEAR(ev_from_settings(1.0 / 50.0, 100.0), 1.0, 1e-12);
  EXPECT_NEAR(ev_from_settings(1.0 / 100.0, 100.0), 0.0, 1e-12);
  EXPECT_THROW(ev_from_settings(0.0, 100.0), std::invalid_argument);
  EXPECT_THROW(ev_from_settings(0.01, -1.0), std::invalid_argument);
}

TEST(DecomposeEv, HandWorkedCases) {
  const HardwareLimits lim;
  auto a = decompose_ev(0.0, lim);
  EXPECT_NEAR(a.shutter_s, 0.01, 1e-15);
  EXPECT_EQ(a.iso, 100.0);
  EXPECT_FALSE(a.saturated);
  auto b = decompose_ev(3.0, lim);
  EXPECT_NEAR(b.shutter_s, 0.08, 1e-15);
  EXPECT_EQ(b.iso, 100.0);
  EXPECT_FALSE(b.saturated);
  auto c = decompose_ev(12.0, lim);
  EXPECT_EQ(c.shutter_s, 0.5);
  EXPECT_EQ(c.iso, 3200.0);
  EXPECT_TRUE(c.saturated);
}

TEST(DecomposeEv, ShortShutterClampSaturates) {
  const auto s = decompose_ev(-20.0, HardwareLimits{});
  EXPECT_EQ(s.iso, 100.0);
  EXPECT_EQ(s.shutter_s, 1.0 / 8000.0);
  EXPECT_TRUE(s.saturated);
}

TEST(DecomposeEv, Rejections) {
  HardwareLimits empty;
  empty.iso_levels.clear();
  EXPECT_THROW(decompose_ev(0.0, empty), std::invalid_argument);
  HardwareLimits unordered;
  unordered.iso_levels = {400, 100};
  EXPECT_THROW(decompose_ev(0.0, unordered), std::invalid_argument);
}

TEST(DecomposeEv, RoundTripAndMinimalIsoProperty) {
  const HardwareLimits lim;
  Rng rng(1);
  std::uniform_real_distribution<double> u(-12.0, 12.0);
  for (int i = 0; i < 1000; ++i) {
    const double ev = u(rng);
    const auto s = decompose_ev(ev, lim);
    EXPECT_TRUE(std::find(lim.iso_levels.begin(), lim.iso_levels.end(), s.iso) != lim.iso_levels.end());
    if (!s.saturated) {
      EXPECT_NEAR(ev_from_settings(s.shutter_s, s.iso), ev, kEvRoundTrip);
      EXPECT_GE(s.shutter_s, lim.shutter_min_s);
      EXPECT_LE(s.shutter_s, lim.shutter_max_s);
      const auto it = std::find(lim.iso_levels.begin(), lim.iso_levels.end(), s.iso);
      if (it != lim.iso_levels.begin()) EXPECT_GT(std::exp2(ev) / *(it - 1), lim.shutter_max_s);
    }
  }
}

TEST(Gamma, FixedPointsAndHalf) {
  ImagePlane img(1, 1, ColorSpace::Encoded);
  img.values = {0.0, 1.0, 0.5};
  const ImagePlane l = linearize(img);
  EXPECT_EQ(l.space, ColorSpace::Linear);
  EXPECT_EQ(l.values[0], 0.0);
  EXPECT_EQ(l.values[1], 1.0);
  EXPECT_NEAR(l.values[2], 0.217637640824031, 1e-12);
  const ImagePlane e = delinearize(l);
  EXPECT_EQ(e.space, ColorSpace::Encoded);
  EXPECT_NEAR(e.values[2], 0.5, 1e-15);
}

TEST(Gamma, SpaceTagChecked) {
  ImagePlane img(2, 2, ColorSpace::Encoded, 0.3);
  EXPECT_THROW(delinearize(img), std::invalid_argument);
  EXPECT_THROW(linearize(linearize(img)), std::invalid_argument);
  EXPECT_THROW(apply_exposure_shift(linearize(img), 0.5), std::invalid_argument);
}

TEST(Gamma, RoundTripProperty) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const ImagePlane img = random_image(3, 2, rng);
    const ImagePlane back = delinearize(linearize(img));
    for (std::size_t k = 0; k < img.values.size(); ++k) ASSERT_NEAR(back.values[k], img.values[k], kGammaRoundTrip);
  }
}

TEST(ExposureShift, ZeroIsIdentityAndRangeChecked) {
  Rng rng(3);
  const ImagePlane img = random_image(4, 4, rng);
  const ImagePlane s = apply_exposure_shift(img, 0.0);
  for (std::size_t k = 0; k < img.values.size(); ++k) EXPECT_NEAR(s.values[k], img.values[k], 1e-12);
  EXPECT_THROW(apply_exposure_shift(img, 4.5), std::invalid_argument);
  EXPECT_THROW(apply_exposure_shift(img, std::nan("")), std::invalid_argument);
}

TEST(ExposureShift, HandEvaluation) {
  ImagePlane img(1, 1, ColorSpace::Encoded);
  img.values = {0.5, std::pow(0.25, 1.0 / kDefaultGamma), 1.0};
  const ImagePlane s = apply_exposure_shift(img, 1.0);
  EXPECT_NEAR(s.values[0], 0.685175, 1e-6);  // 0.5 * 2^(1/2.2)
  EXPECT_NEAR(lin(s.values[1]), 0.5, 1e-12);
  EXPECT_EQ(s.values[2], 1.0);  // clipped
}

TEST(ExposureShift, CompositionOnUnclippedPixels) {
  Rng rng(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const ImagePlane img = random_image(3, 3, rng, 0.0, 0.8);
    const double a = u(rng), b = u(rng);
    const ImagePlane ab = apply_exposure_shift(apply_exposure_shift(img, a), b);
    const ImagePlane direct = apply_exposure_shift(img, a + b);
    for (std::size_t k = 0; k < img.values.size(); ++k) {
      const double l = lin(img.values[k]);
      if (l * std::exp2(a) >= 1.0 || l * std::exp2(a + b) >= 1.0) continue;
      ASSERT_NEAR(ab.values[k], direct.values[k], kShiftTol);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(Render, MonotoneAndLimits) {
  const SceneModel scene = generate_scene(5);
  ImagePlane prev = render(scene, scene.optimal_ev - 3.0);
  for (double d = -2.5; d <= 3.0; d += 0.5) {
    const ImagePlane cur = render(scene, scene.optimal_ev + d);
    for (std::size_t k = 0; k < cur.values.size(); ++k) ASSERT_GE(cur.values[k], prev.values[k]);
    prev = cur;
  }
  for (double v : render(scene, scene.optimal_ev - 200.0).values) EXPECT_LT(v, 1e-20);
  for (double v : render(scene, scene.optimal_ev + 200.0).values) EXPECT_EQ(v, 1.0);
}

TEST(Render, CommutesWithShift) {
  Rng rng(6);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 50; ++i) {
    const SceneModel scene = generate_scene(100 + i);
    const double e = scene.optimal_ev + u(rng);
    const double d = u(rng);
    const ImagePlane a = render(scene, e + d);
    const ImagePlane b = apply_exposure_shift(render(scene, e), d);
    const ImagePlane base = render(scene, e);
    for (std::size_t k = 0; k < a.values.size(); ++k) {
      if (base.values[k] >= 1.0 || a.values[k] >= 1.0) continue;
      ASSERT_NEAR(a.values[k], b.values[k], kShiftTol);
    }
  }
}

TEST(LatencyQueue, Depth0PassThrough) {
  LatencyQueue q(0, 5.0);
  EXPECT_EQ(q.step(1.5), 1.5);
  EXPECT_EQ(q.step(-2.0), -2.0);
}

TEST(LatencyQueue, Depth3Fifo) {
  LatencyQueue q(3, 7.0);
  EXPECT_EQ(q.step(1.0), 7.0);
  EXPECT_EQ(q.step(2.0), 7.0);
  EXPECT_EQ(q.step(3.0), 7.0);
  EXPECT_EQ(q.step(4.0), 1.0);
  EXPECT_EQ(q.step(4.0), 2.0);
}

TEST(LatencyQueue, ConstantStreamSettles) {
  for (int depth = 0; depth <= 5; ++depth) {
    LatencyQueue q(depth, 0.0);
    for (int i = 0; i < depth; ++i) q.step(2.0);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(q.step(2.0), 2.0);
  }
  EXPECT_THROW(LatencyQueue(-1, 0.0), std::invalid_argument);
}

TEST(WeightedLuminance, UniformGrayAndWeights) {
  ImagePlane img(2, 1, ColorSpace::Encoded);
  img.values = {0.5, 1.0, 0.5, 1.0, 0.5, 1.0};
  EXPECT_NEAR(weighted_linear_luminance(img, {1.0, 0.0}), lin(0.5), 1e-12);
  EXPECT_NEAR(weighted_linear_luminance(img, {1.0, 1.0}), 0.5 * (lin(0.5) + 1.0), 1e-12);
  EXPECT_THROW(weighted_linear_luminance(img, {0.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(weighted_linear_luminance(img, {1.0}), std::invalid_argument);
}

TEST(Resize, SameSizeIsIdentityAndConstantPreserved) {
  Rng rng(7);
  const ImagePlane img = random_image(8, 8, rng);
  const ImagePlane r = resize_bilinear(img, 8, 8);
  for (std::size_t k = 0; k < img.values.size(); ++k) EXPECT_NEAR(r.values[k], img.values[k], 1e-15);
  const ImagePlane c = resize_bilinear(ImagePlane(5, 7, ColorSpace::Encoded, 0.4), 16, 16);
  for (double v : c.values) EXPECT_NEAR(v, 0.4, 1e-15);
}

TEST(ImageIo, PngAndPpmRoundTripQuantized) {
  Rng rng(8);
  const ImagePlane img = quantize8(random_image(9, 5, rng));
  EXPECT_EQ(decode_png(encode_png(img)), img);
  EXPECT_EQ(decode_ppm(encode_ppm(img)), img);
  const ImagePlane q = quantize8(img);
  EXPECT_EQ(q, img);
  for (double v : q.values) EXPECT_DOUBLE_EQ(std::round(v * 255.0), v * 255.0);
}

TEST(ImageIo, AtomicWriteLeavesNoTempFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "aemeter_io_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  Rng rng(9);
  const ImagePlane img = quantize8(random_image(4, 4, rng));
  write_png(img, dir / "a.png");
  write_ppm(img, dir / "a.ppm");
  EXPECT_EQ(read_image(dir / "a.png"), img);
  EXPECT_EQ(read_image(dir / "a.ppm"), img);
  int files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 2);
  EXPECT_THROW(read_image(dir / "missing.png"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
