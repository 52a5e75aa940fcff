#pragma once

#include <cstdint>
#include <vector>

namespace aemeter {

// Parameters of the procedural scene generator.
struct SceneSpec {
  int size = 64;
  int min_shapes = 1;
  int max_shapes = 3;
  // Background mean luminance drawn log-uniformly from [lo, hi] (relative units).
  double background_lo = 0.05;
  double background_hi = 2.0;
  // Foreground luminance = background * 2^u, u ~ U[-contrast_stops, +contrast_stops].
  double contrast_stops = 3.0;
  // Importance outside foreground shapes (foreground is 1).
  double importance_base = 0.1;
  double target_luminance = 0.18;

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

// A synthetic scene: unbounded linear RGB radiance plus the latent
// importance the oracle experts meter on.
struct SceneModel {
  int width = 0;
  int height = 0;
  std::vector<double> radiance;    // planar [3,H,W], strictly positive
  std::vector<double> importance;  // [H,W], in [0,1]
  double ev_ref = 0.0;             // render(ev_ref) maps radiance 1.0 to white
  double optimal_ev = 0.0;
  std::uint64_t seed = 0;
  SceneSpec spec;
};

}  // namespace aemeter
