#include "aemeter/reinforce.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "aemeter/supervised.hpp"

namespace aemeter {

const char* outcome_name(RewardOutcome r) {
  switch (r) {
    case RewardOutcome::Positive: return "positive";
    case RewardOutcome::Negative: return "negative";
    case RewardOutcome::Excluded: return "excluded";
  }
  return "?";
}

RewardOutcome reward_for(CoarseLabel label, double target_action, double sampled_action, double delta) {
  switch (label) {
    case CoarseLabel::Well:
      return std::abs(sampled_action - target_action) <= delta ? RewardOutcome::Positive : RewardOutcome::Negative;
    case CoarseLabel::Under:
      return sampled_action <= target_action ? RewardOutcome::Negative : RewardOutcome::Excluded;
    case CoarseLabel::Over:
      return sampled_action >= target_action ? RewardOutcome::Negative : RewardOutcome::Excluded;
  }
  return RewardOutcome::Excluded;
}

double reward_value(RewardOutcome r) {
  if (r == RewardOutcome::Excluded) throw std::invalid_argument("reward_value: excluded samples carry no reward");
  return r == RewardOutcome::Positive ? 1.0 : -1.0;
}

ActionSample sample_action(double mu, const GaussianPolicy& policy, Rng& rng) {
  if (!std::isfinite(mu)) throw std::invalid_argument("sample_action: non-finite mean");
  if (!(policy.sigma_sq >= 0.0)) throw std::invalid_argument("sample_action: negative variance");
  std::normal_distribution<double> z(0.0, 1.0);
  ActionSample s;
  s.raw = mu + std::sqrt(policy.sigma_sq) * z(rng);
  s.action = std::clamp(s.raw, -1.0, 1.0);
  s.clamped = s.action != s.raw;
  return s;
}

double log_prob(double mu, double a, const GaussianPolicy& policy) {
  if (!(policy.sigma_sq > 0.0)) throw std::invalid_argument("log_prob: variance must be positive");
  return -(a - mu) * (a - mu) / (2.0 * policy.sigma_sq) - 0.5 * std::log(2.0 * std::numbers::pi * policy.sigma_sq);
}

double log_prob_grad_mu(double mu, double a, const GaussianPolicy& policy) {
  if (!(policy.sigma_sq > 0.0)) throw std::invalid_argument("log_prob: variance must be positive");
  return (a - mu) / policy.sigma_sq;
}

Var surrogate_loss(const std::vector<Var>& mu, const std::vector<RewardSample>& batch, const GaussianPolicy& policy) {
  if (batch.empty()) throw std::invalid_argument("surrogate_loss: empty batch");
  if (mu.size() != batch.size()) throw std::invalid_argument("surrogate_loss: one mean per sample required");
  if (!(policy.sigma_sq > 0.0)) throw std::invalid_argument("surrogate_loss: variance must be positive");
  Graph& g = mu.front().graph();
  Var total;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    Var d = add(mu[i], g.input(Tensor(mu[i].shape(), -batch[i].action)));
    Var term = scale(sum(square(d)), batch[i].reward / (2.0 * policy.sigma_sq));
    total = i == 0 ? term : add(total, term);
  }
  return scale(total, 1.0 / static_cast<double>(batch.size()));
}

GradMap policy_gradient(const ParamSet& params, const PolicyForward& forward, const std::vector<RewardSample>& batch,
                        const GaussianPolicy& policy) {
  if (batch.empty()) throw std::invalid_argument("policy_gradient_step: empty batch");
  Graph g;
  std::vector<Var> mu;
  mu.reserve(batch.size());
  for (const auto& s : batch) mu.push_back(forward(g, params, s));
  return g.backward(surrogate_loss(mu, batch, policy), params);
}

void policy_gradient_step(ParamSet& params, const PolicyForward& forward, const std::vector<RewardSample>& batch,
                          const GaussianPolicy& policy, const OptimizerSpec& optimizer) {
  optimizer_step(params, policy_gradient(params, forward, batch, policy), optimizer);
}

void policy_gradient_step(Model& model, const std::vector<RewardSample>& batch, const GaussianPolicy& policy,
                          const OptimizerSpec& optimizer) {
  const NetConfig& cfg = model.config;
  Rng unused(0);
  PolicyForward fwd = [&](Graph& g, const ParamSet& ps, const RewardSample& s) {
    Model view{cfg, ps};
    return forward_graph(g, view, prepare_input(cfg, s.state).to_tensor(), Mode::Eval, unused).delta_ev_norm;
  };
  policy_gradient_step(model.params, fwd, batch, policy, optimizer);
}

FinetuneResult finetune(Model model, const std::vector<FeedbackItem>& pool, const FinetuneSpec& spec, std::ostream* log) {
  if (pool.empty()) throw std::invalid_argument("finetune: empty feedback pool");
  if (spec.epochs < 0 || spec.batch_size < 1) throw std::invalid_argument("finetune: epochs >= 0 and batch_size >= 1 required");
  if (!(spec.policy.sigma_sq > 0.0)) throw std::invalid_argument("finetune: variance must be positive");
  const int rungs = bracket_size(spec.bracket_lo, spec.bracket_hi, spec.bracket_step);
  const double scale_ev = model.config.scale_ev;

  std::vector<ImagePlane> images;
  images.reserve(pool.size());
  bool have_gt = true;
  for (const auto& p : pool) {
    images.push_back(prepare_input(model.config, p.image));
    have_gt = have_gt && p.gt_ev.has_value();
  }

  std::vector<std::pair<std::size_t, int>> order;
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (int t = 0; t < rungs; ++t) order.emplace_back(i, t);

  FinetuneResult result;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    if (spec.max_steps && result.steps >= spec.max_steps) break;
    const OptimizerSpec opt = AdamSpec{lr_schedule(epoch, spec.adam_lr, spec.lr_halving_period)};
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    FinetuneEpoch rec;
    rec.epoch = epoch + 1;
    std::size_t clamped = 0, drawn = 0, in_batch = 0;
    double reward_sum = 0.0;
    GradMap grads = zero_grads(model.params);

    auto flush = [&] {
      if (in_batch == 0) return;
      scale_grads(grads, 1.0 / static_cast<double>(in_batch));
      optimizer_step(model.params, grads, opt);
      ++result.steps;
      grads = zero_grads(model.params);
      in_batch = 0;
    };

    for (const auto& [idx, rung] : order) {
      if (spec.max_steps && result.steps >= spec.max_steps) break;
      const double y_ev = bracket_action(spec.bracket_lo, spec.bracket_step, rung);
      const double y_star = y_ev / scale_ev;
      Graph g;
      const ImagePlane state = apply_exposure_shift(images[idx], -y_ev);
      ForwardVars fv = forward_graph(g, model, state.to_tensor(), Mode::Train, rng);
      const double mu = fv.delta_ev_norm.value().item();
      const ActionSample a = sample_action(mu, spec.policy, rng);
      ++drawn;
      clamped += a.clamped ? 1 : 0;
      const RewardOutcome outcome = reward_for(pool[idx].label, y_star, a.action, spec.delta);
      if (outcome == RewardOutcome::Excluded) {
        ++rec.n_excluded;
        continue;
      }
      const double r = reward_value(outcome);
      reward_sum += r;
      ++rec.n_samples;
      // dL_i/dmu = r (mu - a) / sigma_sq
      accumulate(grads, g.backward(fv.delta_ev_norm), r * (mu - a.action) / spec.policy.sigma_sq);
      if (++in_batch == static_cast<std::size_t>(spec.batch_size)) flush();
    }
    flush();

    if (rec.n_samples == 0) {
      if (log) *log << "finetune: epoch " << rec.epoch << " produced no usable samples; skipped\n";
      continue;
    }
    rec.mean_reward = reward_sum / static_cast<double>(rec.n_samples);
    rec.clamp_rate = drawn ? static_cast<double>(clamped) / static_cast<double>(drawn) : 0.0;
    if (have_gt) {
      double err = 0.0;
      for (std::size_t i = 0; i < pool.size(); ++i) err += std::abs(predict_delta_ev(model, images[i]) - *pool[i].gt_ev);
      rec.mae = err / static_cast<double>(pool.size());
    }
    result.history.push_back(rec);
    if (log) {
      *log << "epoch " << rec.epoch << "\tmean_reward " << rec.mean_reward << "\tn " << rec.n_samples << "\texcluded "
           << rec.n_excluded << "\tclamp " << rec.clamp_rate;
      if (rec.mae) *log << "\tmae " << *rec.mae;
      *log << '\n';
    }
  }
  result.model = std::move(model);
  return result;
}

std::string finetune_history_tsv(const std::vector<FinetuneEpoch>& history) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch\tmean_reward\tn_samples\tn_excluded\tclamp_rate\tmae_if_oracle\n";
  for (const auto& r : history) {
    os << r.epoch << '\t' << r.mean_reward << '\t' << r.n_samples << '\t' << r.n_excluded << '\t' << r.clamp_rate << '\t';
    if (r.mae) {
      os << *r.mae;
    } else {
      os << "NA";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace aemeter
