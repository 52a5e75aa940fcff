#include "aemeter/camera.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aemeter {

ImagePlane::ImagePlane(int w, int h, ColorSpace s, double fill)
    : width(w), height(h), space(s), values(static_cast<std::size_t>(3) * w * h, fill) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("image: non-positive size");
}

Tensor ImagePlane::to_tensor() const {
  return Tensor({3, static_cast<std::size_t>(height), static_cast<std::size_t>(width)}, values);
}

double ev_from_settings(double shutter_s, double iso) {
  if (!(shutter_s > 0.0) || !(iso > 0.0)) {
    throw std::invalid_argument("ev_from_settings: shutter and iso must be positive");
  }
  return std::log2(shutter_s * iso);
}

ExposureState decompose_ev(double ev, const HardwareLimits& limits) {
  if (limits.iso_levels.empty()) throw std::invalid_argument("decompose_ev: empty iso_levels");
  if (!std::is_sorted(limits.iso_levels.begin(), limits.iso_levels.end()) || limits.iso_levels.front() <= 0.0) {
    throw std::invalid_argument("decompose_ev: iso_levels must be positive and ascending");
  }
  if (!(limits.shutter_min_s > 0.0) || limits.shutter_min_s > limits.shutter_max_s) {
    throw std::invalid_argument("decompose_ev: invalid shutter range");
  }
  const double product = std::exp2(ev);
  ExposureState st;
  st.iso = limits.iso_levels.back();
  st.saturated = true;
  for (double iso : limits.iso_levels) {
    if (product / iso <= limits.shutter_max_s) {
      st.iso = iso;
      st.saturated = false;
      break;
    }
  }
  st.shutter_s = product / st.iso;
  if (st.shutter_s > limits.shutter_max_s) st.shutter_s = limits.shutter_max_s;
  if (st.shutter_s < limits.shutter_min_s) {
    st.shutter_s = limits.shutter_min_s;
    st.saturated = true;
  }
  st.ev = std::log2(st.shutter_s * st.iso);
  return st;
}

namespace {

void require_space(const ImagePlane& img, ColorSpace want, const char* op) {
  if (img.space != want) {
    throw std::invalid_argument(std::string(op) + ": expected " +
                                (want == ColorSpace::Encoded ? "encoded" : "linear") + " image");
  }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

ImagePlane linearize(const ImagePlane& img, double gamma) {
  require_space(img, ColorSpace::Encoded, "linearize");
  ImagePlane out = img;
  out.space = ColorSpace::Linear;
  for (double& v : out.values) v = std::pow(clamp01(v), gamma);
  return out;
}

ImagePlane delinearize(const ImagePlane& img, double gamma) {
  require_space(img, ColorSpace::Linear, "delinearize");
  ImagePlane out = img;
  out.space = ColorSpace::Encoded;
  const double inv = 1.0 / gamma;
  for (double& v : out.values) v = std::pow(clamp01(v), inv);
  return out;
}

ImagePlane apply_exposure_shift(const ImagePlane& img, double delta_ev, double gamma) {
  require_space(img, ColorSpace::Encoded, "apply_exposure_shift");
  if (!(std::abs(delta_ev) <= 4.0)) throw std::invalid_argument("apply_exposure_shift: |delta_ev| must be <= 4");
  // (v^g * 2^d)^(1/g) == v * 2^(d/g); clipping at 1 commutes with the
  // monotone re-encode, so the linear-space pipeline collapses to one scale.
  const double k = std::exp2(delta_ev / gamma);
  ImagePlane out = img;
  for (double& v : out.values) v = std::min(1.0, clamp01(v) * k);
  return out;
}

ImagePlane render(const SceneModel& scene, double ev, double gamma) {
  ImagePlane lin(scene.width, scene.height, ColorSpace::Linear);
  const double k = std::exp2(ev - scene.ev_ref);
  for (std::size_t i = 0; i < lin.values.size(); ++i) lin.values[i] = clamp01(scene.radiance[i] * k);
  return delinearize(lin, gamma);
}

double weighted_linear_luminance(const ImagePlane& img, const std::vector<double>& weights, double gamma) {
  const std::size_t n = img.pixels();
  if (weights.size() != n) throw std::invalid_argument("weighted_linear_luminance: weight map size mismatch");
  const bool encoded = img.space == ColorSpace::Encoded;
  auto lin = [&](double v) { return encoded ? std::pow(clamp01(v), gamma) : v; };
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = 0.2126 * lin(img.values[i]) + 0.7152 * lin(img.values[n + i]) + 0.0722 * lin(img.values[2 * n + i]);
    num += weights[i] * y;
    den += weights[i];
  }
  if (!(den > 0.0)) throw std::invalid_argument("weighted_linear_luminance: weights sum to zero");
  return num / den;
}

ImagePlane resize_bilinear(const ImagePlane& img, int width, int height) {
  if (img.width == width && img.height == height) return img;
  ImagePlane out(width, height, img.space);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < height; ++y) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, img.height - 1);
      const double ty = fy - y0;
      for (int x = 0; x < width; ++x) {
        const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, img.width - 1);
        const double tx = fx - x0;
        const double top = img.at(c, y0, x0) * (1 - tx) + img.at(c, y0, x1) * tx;
        const double bot = img.at(c, y1, x0) * (1 - tx) + img.at(c, y1, x1) * tx;
        out.at(c, y, x) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

LatencyQueue::LatencyQueue(int depth, double initial_ev) : depth_(depth) {
  if (depth < 0) throw std::invalid_argument("latency: depth must be >= 0");
  pending_.assign(static_cast<std::size_t>(depth), initial_ev);
}

double LatencyQueue::step(double command) {
  if (depth_ == 0) return command;
  pending_.push_back(command);
  const double effective = pending_.front();
  pending_.pop_front();
  return effective;
}

}  // namespace aemeter
