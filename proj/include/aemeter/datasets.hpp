#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aemeter/camera.hpp"
#include "aemeter/graph.hpp"
#include "aemeter/scene.hpp"

namespace aemeter {

enum class CoarseLabel { Under, Well, Over };

const char* label_name(CoarseLabel label);
std::optional<CoarseLabel> parse_label(std::string_view text);

// well if |gt| < tolerance, under if gt >= tolerance, over if gt <= -tolerance.
CoarseLabel label_from_gt(double gt_ev, double tolerance = 0.1);

struct ManifestRecord {
  std::string image_path;
  std::optional<double> ground_truth_delta_ev;
  std::optional<CoarseLabel> coarse_label;
  std::optional<std::string> expert_id;
  std::optional<std::string> scene_id;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

// One record per line, tab-separated key=value pairs. Blank lines and lines
// starting with '#' are skipped. Unknown keys are reported to `warnings`.
std::vector<ManifestRecord> parse_manifest(std::istream& in, std::ostream* warnings = nullptr);
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path, std::ostream* warnings = nullptr);
std::string format_manifest(const std::vector<ManifestRecord>& records);
void save_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path);

struct BracketItem {
  ImagePlane image;
  double target_action = 0.0;  // EV that restores the original exposure
  int index = 0;
};

// Number of ladder rungs in [lo, hi] at `step`; throws unless integral.
int bracket_size(double lo, double hi, double step);
double bracket_action(double lo, double step, int index);

// Item t is apply_exposure_shift(image, -Y*_t) with Y*_t = lo + t*step.
std::vector<BracketItem> synth_bracket(const ImagePlane& image, double lo = -2.0, double hi = 2.0, double step = 0.2,
                                       double gamma = kDefaultGamma);

SceneModel generate_scene(std::uint64_t seed, const SceneSpec& spec = {});
// Scene i uses derive_seed(seed, i).
std::vector<SceneModel> generate_scenes(std::size_t count, std::uint64_t seed, const SceneSpec& spec = {});
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::string scene_id(std::size_t index);

// Importance-weighted mean linear luminance of render(scene, ev).
double scene_statistic(const SceneModel& scene, double ev);

struct ExpertOracle {
  std::string expert_id = "C";
  double bias_ev = 0.0;
  double target_luminance = 0.18;
  double tolerance = 0.1;
};

// A..E with biases -0.4, -0.2, 0, +0.2, +0.4 EV.
std::vector<ExpertOracle> default_experts();
ExpertOracle expert_by_id(const std::string& id);

struct ExpertJudgement {
  CoarseLabel label = CoarseLabel::Well;
  double ground_truth_delta_ev = 0.0;
  bool bracketed = true;
};

// Bisects the EV correction that brings the weighted mean linear luminance of
// the image to the oracle target, then adds the oracle bias.
ExpertJudgement expert_label(const ImagePlane& image, const std::vector<double>& importance, const ExpertOracle& oracle,
                             double gamma = kDefaultGamma);
// Uniform importance.
ExpertJudgement expert_label(const ImagePlane& image, const ExpertOracle& oracle, double gamma = kDefaultGamma);

template <typename T>
struct Split {
  std::vector<T> train;
  std::vector<T> test;
};

template <typename T>
Split<T> split_train_test(const std::vector<T>& records, double test_fraction, std::uint64_t seed);

// Image plus ground-truth correction in EV. `group` keeps bracket siblings together.
struct LabeledImage {
  ImagePlane image;
  double delta_ev = 0.0;
  std::string group;
};

struct FeedbackItem {
  ImagePlane image;
  CoarseLabel label = CoarseLabel::Well;
  std::optional<double> gt_ev;
  std::string group;
};

// quantize8(render(scene, optimal_ev)): the well-exposed stand-in for a
// camera's native capture.
ImagePlane native_render(const SceneModel& scene);

// Native captures with zero correction.
std::vector<LabeledImage> native_set(const std::vector<SceneModel>& scenes);

// One capture per scene at optimal_ev + U[-offset_range, offset_range],
// labeled by the oracle.
std::vector<LabeledImage> expert_test_set(const std::vector<SceneModel>& scenes, const ExpertOracle& oracle,
                                          std::uint64_t seed, double offset_range = 1.5);

// Feedback pool: one capture per scene near the expert's own taste, at
// optimal_ev + bias_ev + U[-offset_range, offset_range].
std::vector<FeedbackItem> expert_pool(const std::vector<SceneModel>& scenes, const ExpertOracle& oracle,
                                      std::uint64_t seed, double offset_range = 0.2);

// Scene archive: <dir>/scenes/<id>.meta (key=value lines, enough to regenerate
// the scene) plus <id>.png rendered at ev_ref for viewing.
std::string scene_meta(const SceneModel& scene, const std::string& id);
SceneModel parse_scene_meta(const std::string& text);
void write_scene_archive(const std::filesystem::path& dir, const std::vector<SceneModel>& scenes);
// Keyed by scene id; throws if a regenerated scene disagrees with its sidecar.
std::map<std::string, SceneModel> load_scene_archive(const std::filesystem::path& dir);

}  // namespace aemeter

#include "aemeter/detail/split.hpp"
