#include "aemeter/supervised.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace aemeter {

namespace {

struct SampleRef {
  std::size_t source;
  int rung;
};

void shuffle(std::vector<SampleRef>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

double target_norm(double delta_ev, double y_star, double scale_ev) {
  return std::clamp((delta_ev + y_star) / scale_ev, -1.0, 1.0);
}

}  // namespace

double mse_loss(const std::vector<double>& pred, const std::vector<double>& label) {
  if (pred.size() != label.size()) throw std::invalid_argument("mse_loss: length mismatch");
  if (pred.empty()) throw std::invalid_argument("mse_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - label[i]) * (pred[i] - label[i]);
  return s / static_cast<double>(pred.size());
}

Var mse_loss(const std::vector<Var>& pred, const std::vector<double>& label) {
  if (pred.size() != label.size()) throw std::invalid_argument("mse_loss: length mismatch");
  if (pred.empty()) throw std::invalid_argument("mse_loss: empty input");
  Graph& g = pred.front().graph();
  Var total;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    Var d = add(pred[i], g.input(Tensor(pred[i].shape(), -label[i])));
    Var term = sum(square(d));
    total = i == 0 ? term : add(total, term);
  }
  return scale(total, 1.0 / static_cast<double>(pred.size()));
}

double lr_schedule(int epoch, double base_lr, int period) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: negative epoch");
  if (period < 1) throw std::invalid_argument("lr_schedule: period must be >= 1");
  return base_lr * std::pow(0.5, epoch / period);
}

double lr_schedule(int epoch, const TrainSpec& spec) {
  return lr_schedule(epoch, spec.use_adam ? spec.adam_lr : spec.base_lr, spec.lr_halving_period);
}

double bracket_mse(const Model& model, const std::vector<LabeledImage>& data, double lo, double hi, double step) {
  const int rungs = bracket_size(lo, hi, step);
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& item : data) {
    const ImagePlane src = prepare_input(model.config, item.image);
    for (int t = 0; t < rungs; ++t) {
      const double y = bracket_action(lo, step, t);
      const double pred = forward_eval(model, apply_exposure_shift(src, -y)).delta_ev_norm;
      const double d = pred - target_norm(item.delta_ev, y, model.config.scale_ev);
      s += d * d;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("bracket_mse: empty data");
  return s / static_cast<double>(n);
}

PretrainResult pretrain(Model model, const std::vector<LabeledImage>& data, const TrainSpec& spec, std::ostream* log) {
  if (data.empty()) throw std::invalid_argument("pretrain: empty dataset");
  if (spec.epochs < 0 || spec.batch_size < 1) throw std::invalid_argument("pretrain: epochs >= 0 and batch_size >= 1 required");
  const int rungs = bracket_size(spec.bracket_lo, spec.bracket_hi, spec.bracket_step);

  std::vector<LabeledImage> train, val;
  {
    std::vector<std::string> groups;
    std::set<std::string> seen;
    for (const auto& d : data) {
      if (seen.insert(d.group).second) groups.push_back(d.group);
    }
    std::set<std::string> held;
    if (spec.validation_fraction > 0.0 && groups.size() >= 2) {
      const auto split = split_train_test(groups, spec.validation_fraction, derive_seed(spec.seed, 0x7A11));
      held.insert(split.test.begin(), split.test.end());
    }
    for (const auto& d : data) {
      LabeledImage p{prepare_input(model.config, d.image), d.delta_ev, d.group};
      (held.count(d.group) ? val : train).push_back(std::move(p));
    }
    if (train.empty()) throw std::invalid_argument("pretrain: validation split left no training data");
  }

  std::vector<SampleRef> order;
  order.reserve(train.size() * static_cast<std::size_t>(rungs));
  for (std::size_t i = 0; i < train.size(); ++i)
    for (int t = 0; t < rungs; ++t) order.push_back({i, t});

  PretrainResult result;
  result.model = model;
  double best_val = std::numeric_limits<double>::infinity();
  const double scale_ev = model.config.scale_ev;

  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, spec);
    OptimizerSpec opt = spec.use_adam ? OptimizerSpec(AdamSpec{lr}) : OptimizerSpec(SgdSpec{lr, spec.momentum, spec.weight_decay});
    Rng shuffle_rng(derive_seed(spec.seed, 2 * static_cast<std::uint64_t>(epoch) + 1));
    Rng dropout_rng(derive_seed(spec.seed, 2 * static_cast<std::uint64_t>(epoch) + 2));
    shuffle(order, shuffle_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(spec.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(spec.batch_size));
      const double inv_b = 1.0 / static_cast<double>(end - start);
      GradMap grads = zero_grads(model.params);
      for (std::size_t s = start; s < end; ++s) {
        const auto& src = train[order[s].source];
        const double y_star = bracket_action(spec.bracket_lo, spec.bracket_step, order[s].rung);
        const double target = target_norm(src.delta_ev, y_star, scale_ev);
        Graph g;
        const ImagePlane img = apply_exposure_shift(src.image, -y_star);
        ForwardVars fv = forward_graph(g, model, img.to_tensor(), Mode::Train, dropout_rng);
        const double pred = fv.delta_ev_norm.value().item();
        const double err = pred - target;
        if (!std::isfinite(err)) {
          throw std::runtime_error("pretrain: non-finite prediction at epoch " + std::to_string(epoch) + ", sample " +
                                   std::to_string(s) + " (diverged; lower the learning rate)");
        }
        epoch_loss += err * err;
        accumulate(grads, g.backward(fv.delta_ev_norm), 2.0 * err * inv_b);
      }
      optimizer_step(model.params, grads, opt);
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_mse = epoch_loss / static_cast<double>(order.size());
    rec.val_mse = val.empty() ? std::numeric_limits<double>::quiet_NaN()
                              : bracket_mse(model, val, spec.bracket_lo, spec.bracket_hi, spec.bracket_step);
    if (!std::isfinite(rec.train_mse)) {
      throw std::runtime_error("pretrain: non-finite loss at epoch " + std::to_string(rec.epoch));
    }
    result.history.push_back(rec);
    if (log) *log << "epoch " << rec.epoch << "\tlr " << rec.lr << "\ttrain_mse " << rec.train_mse << "\tval_mse " << rec.val_mse << '\n';

    if (val.empty() || rec.val_mse < best_val) {
      best_val = rec.val_mse;
      result.model = model;
      result.best_epoch = rec.epoch;
    }
  }
  return result;
}

std::string history_tsv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch\tlr\ttrain_mse\tval_mse\n";
  for (const auto& r : history) os << r.epoch << '\t' << r.lr << '\t' << r.train_mse << '\t' << r.val_mse << '\n';
  return os.str();
}

}  // namespace aemeter
