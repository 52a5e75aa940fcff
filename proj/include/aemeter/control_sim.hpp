#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aemeter/camera.hpp"
#include "aemeter/datasets.hpp"
#include "aemeter/metering_net.hpp"
#include "aemeter/reinforce.hpp"

namespace aemeter {

// Maps the current frame (and the EV it was captured at) to an EV correction.
using ExposurePolicy = std::function<double(const ImagePlane& frame, double effective_ev)>;

ExposurePolicy model_policy(Model model);
// Returns scene.optimal_ev - effective_ev.
ExposurePolicy oracle_policy(const SceneModel& scene);
ExposurePolicy zero_policy();

struct EpisodeOptions {
  int max_steps = 20;
  int latency_depth = 3;
  double eps = 0.05;
  int k = 3;
  bool stop_on_convergence = true;
  // Realize every command through decompose_ev when set.
  std::optional<HardwareLimits> limits;
  double gamma = kDefaultGamma;
};

struct SimStep {
  int step = 0;
  double commanded_ev = 0.0;  // latest command in force when the step starts
  double effective_ev = 0.0;  // EV the frame was captured at
  double predicted_delta_ev = 0.0;
  double frame_mean_luminance = 0.0;
};

struct SimTrace {
  std::vector<SimStep> steps;
  std::optional<int> converged_at;
  int latency_depth = 0;
  int max_steps = 0;
};

// Each step: capture at the effective EV, predict, command effective + prediction.
// A command issued at step i is in force from step i+1 and reaches the sensor
// latency_depth steps later.
SimTrace run_episode(const SceneModel& scene, const ExposurePolicy& policy, double start_ev,
                     const EpisodeOptions& options = {});

// First step s >= 1 with |predicted_delta_ev| < eps at steps s .. s+k-1.
std::optional<int> find_convergence(const SimTrace& trace, double eps, int k);

struct ConvergenceReport {
  bool converged = false;
  int steps_to_converge = 0;  // max_steps when unconverged
  double overshoot_ev = 0.0;
  int oscillation_count = 0;  // after convergence
  int oscillations_before = 0;
  double oscillation_amplitude_ev = 0.0;  // peak-to-peak effective EV after convergence
  double residual_ev = 0.0;
  double final_ev = 0.0;
};

ConvergenceReport convergence_metrics(const SimTrace& trace, double oracle_ev, double eps = 0.05, int k = 3);

// Strict sign alternations in a sequence (zeros skipped).
int count_sign_alternations(const std::vector<double>& values);

std::string trace_tsv(const SimTrace& trace);

// (1/N) sum |pred_i - label_i|
double mae(const std::vector<double>& preds, const std::vector<double>& labels);

std::vector<double> predict_all(const Model& model, const std::vector<LabeledImage>& data);
std::vector<double> labels_of(const std::vector<LabeledImage>& data);
double evaluate_mae(const Model& model, const std::vector<LabeledImage>& data);

struct MetricMatrix {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<std::vector<double>> values;

  double at(std::size_t r, std::size_t c) const { return values.at(r).at(c); }
  std::string tsv() const;
};

// Entry (m, t) = MAE of model m against the ground truth of test set t.
MetricMatrix cross_eval(const std::map<std::string, Model>& models,
                        const std::map<std::string, std::vector<LabeledImage>>& testsets);
MetricMatrix cross_eval(const std::map<std::string, std::vector<double>>& predictions,
                        const std::map<std::string, std::vector<double>>& gts);

// Entry (m, e) = percentage of images whose prediction by m is nearest to the
// ground truth of e; ties split equally.
MetricMatrix nearest_expert_accuracy(const std::map<std::string, std::vector<double>>& predictions,
                                     const std::map<std::string, std::vector<double>>& gts);

bool strictly_diagonally_dominant_rows(const MetricMatrix& m, bool smaller_is_better);

using Ratings = std::vector<std::vector<double>>;  // raters x items

// Mid-ranks within one rater (1-based).
std::vector<double> mid_ranks(const std::vector<double>& scores);

// W = 12 S / (m^2 (n^3 - n) - m sum T), T the per-rater tie correction.
double kendalls_w(const Ratings& ratings);
// Mean of W over several rating matrices.
double mean_kendalls_w(const std::vector<Ratings>& per_item);
// W of the item-wise concatenation of the matrices.
double pooled_kendalls_w(const std::vector<Ratings>& per_item);

struct DatasizeRow {
  std::size_t size = 0;
  double median_mae = 0.0;
  std::vector<double> maes;  // one per seed
};

// Fine-tunes `base` on seeded subsamples of the pool and reports test MAE.
std::vector<DatasizeRow> datasize_curve(const Model& base, const std::vector<FeedbackItem>& pool,
                                        const std::vector<std::size_t>& sizes, const std::vector<std::uint64_t>& seeds,
                                        const std::vector<LabeledImage>& eval_set, const FinetuneSpec& spec);

double median(std::vector<double> v);

}  // namespace aemeter
