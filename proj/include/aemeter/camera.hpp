#pragma once

#include <deque>
#include <vector>

#include "aemeter/scene.hpp"
#include "aemeter/tensor.hpp"

namespace aemeter {

inline constexpr double kDefaultGamma = 2.2;

enum class ColorSpace { Encoded, Linear };

// RGB image, planar [3,H,W], values in [0,1].
struct ImagePlane {
  int width = 0;
  int height = 0;
  ColorSpace space = ColorSpace::Encoded;
  std::vector<double> values;

  ImagePlane() = default;
  ImagePlane(int w, int h, ColorSpace s, double fill = 0.0);

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  double& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  // [3,H,W] tensor view of the values (copy).
  Tensor to_tensor() const;

  friend bool operator==(const ImagePlane&, const ImagePlane&) = default;
};

struct HardwareLimits {
  std::vector<double> iso_levels{100, 200, 400, 800, 1600, 3200};
  double shutter_min_s = 1.0 / 8000.0;
  double shutter_max_s = 0.5;
};

struct ExposureState {
  double ev = 0.0;
  double shutter_s = 0.0;
  double iso = 0.0;
  bool saturated = false;
};

// EV = log2(t * S)
double ev_from_settings(double shutter_s, double iso);

// Smallest ISO whose shutter time 2^ev / iso fits under shutter_max_s; when
// none does, max ISO with the shutter clamped. Shutter is also clamped below
// at shutter_min_s. Either clamp sets `saturated`.
ExposureState decompose_ev(double ev, const HardwareLimits& limits);

ImagePlane linearize(const ImagePlane& img, double gamma = kDefaultGamma);
ImagePlane delinearize(const ImagePlane& img, double gamma = kDefaultGamma);

// Encoded -> linear -> x 2^delta_ev -> clamp [0,1] -> encoded. |delta_ev| <= 4.
ImagePlane apply_exposure_shift(const ImagePlane& img, double delta_ev, double gamma = kDefaultGamma);

// delinearize(clamp(radiance * 2^(ev - ev_ref)))
ImagePlane render(const SceneModel& scene, double ev, double gamma = kDefaultGamma);

// Mean of Rec.709 luminance of the linearized image, weighted per pixel.
double weighted_linear_luminance(const ImagePlane& img, const std::vector<double>& weights,
                                 double gamma = kDefaultGamma);

// Bilinear resample of an image to a square size (used to feed arbitrary
// files to the fixed-size network input).
ImagePlane resize_bilinear(const ImagePlane& img, int width, int height);

// Fixed-depth FIFO of EV commands modelling firmware lag: a command issued
// at step i takes effect at step i + depth.
class LatencyQueue {
 public:
  LatencyQueue(int depth, double initial_ev);

  double step(double command);
  int depth() const { return depth_; }

 private:
  int depth_;
  std::deque<double> pending_;
};

}  // namespace aemeter
