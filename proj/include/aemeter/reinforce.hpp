#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "aemeter/datasets.hpp"
#include "aemeter/graph.hpp"
#include "aemeter/metering_net.hpp"
#include "aemeter/params.hpp"

namespace aemeter {

// N(mu, sigma_sq); sigma_sq is the variance.
struct GaussianPolicy {
  double sigma_sq = 0.1;
};

enum class RewardOutcome { Positive, Negative, Excluded };

const char* outcome_name(RewardOutcome r);

// well: Positive iff |A - Y*| <= delta. under: Negative iff A <= Y*.
// over: Negative iff A >= Y*. Everything else is Excluded.
RewardOutcome reward_for(CoarseLabel label, double target_action, double sampled_action, double delta = 0.1);
// +1 / -1; throws for Excluded.
double reward_value(RewardOutcome r);

struct ActionSample {
  double action = 0.0;
  double raw = 0.0;  // before clamping
  bool clamped = false;
};

// mu + sqrt(sigma_sq) * z, clamped to [-1, 1].
ActionSample sample_action(double mu, const GaussianPolicy& policy, Rng& rng);

// -(a - mu)^2 / (2 sigma_sq) - 0.5 ln(2 pi sigma_sq)
double log_prob(double mu, double a, const GaussianPolicy& policy);
// d log_prob / d mu = (a - mu) / sigma_sq
double log_prob_grad_mu(double mu, double a, const GaussianPolicy& policy);

enum class Provenance { Human, Oracle };

struct RewardSample {
  ImagePlane state;
  double action = 0.0;  // normalized units
  double reward = 0.0;  // +1 or -1
  Provenance provenance = Provenance::Oracle;
};

// mu = F_theta(state) recorded on `graph` (scalar node).
using PolicyForward = std::function<Var(Graph&, const ParamSet&, const RewardSample&)>;

// L = (1/N) sum r_i (mu_i - a_i)^2 / (2 sigma_sq); its gradient is minus the REINFORCE estimate.
Var surrogate_loss(const std::vector<Var>& mu, const std::vector<RewardSample>& batch, const GaussianPolicy& policy);

// Gradient of L with respect to every parameter.
GradMap policy_gradient(const ParamSet& params, const PolicyForward& forward, const std::vector<RewardSample>& batch,
                        const GaussianPolicy& policy);

void policy_gradient_step(ParamSet& params, const PolicyForward& forward, const std::vector<RewardSample>& batch,
                          const GaussianPolicy& policy, const OptimizerSpec& optimizer);
// Metering network, eval-mode forward.
void policy_gradient_step(Model& model, const std::vector<RewardSample>& batch, const GaussianPolicy& policy,
                          const OptimizerSpec& optimizer);

struct FinetuneSpec {
  int epochs = 35;
  int batch_size = 128;
  double adam_lr = 1e-4;
  int lr_halving_period = 15;
  GaussianPolicy policy;
  double bracket_lo = -1.0;
  double bracket_hi = 1.0;
  double bracket_step = 0.25;
  double delta = 0.1;
  std::uint64_t seed = 1;
  // Stop after this many optimizer steps (0 = no cap).
  std::size_t max_steps = 0;
};

struct FinetuneEpoch {
  int epoch = 0;
  double mean_reward = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_excluded = 0;
  double clamp_rate = 0.0;
  std::optional<double> mae;  // EV, when every pool item carries gt_ev
};

struct FinetuneResult {
  Model model;
  std::vector<FinetuneEpoch> history;
  std::size_t steps = 0;
};

// REINFORCE with Adam over the bracket expansion of the feedback pool.
FinetuneResult finetune(Model model, const std::vector<FeedbackItem>& pool, const FinetuneSpec& spec,
                        std::ostream* log = nullptr);

std::string finetune_history_tsv(const std::vector<FinetuneEpoch>& history);

}  // namespace aemeter
