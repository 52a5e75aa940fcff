#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "aemeter/datasets.hpp"
#include "aemeter/graph.hpp"
#include "aemeter/metering_net.hpp"

namespace aemeter {

struct TrainSpec {
  int epochs = 35;
  int batch_size = 128;
  double base_lr = 0.003;
  double momentum = 0.9;
  double weight_decay = 0.0002;
  int lr_halving_period = 15;
  std::uint64_t seed = 1;
  // Fraction of groups held out for best-snapshot selection; 0 disables it.
  double validation_fraction = 0.1;
  // Each source image is expanded into this EV ladder.
  double bracket_lo = -2.0;
  double bracket_hi = 2.0;
  double bracket_step = 0.2;
  // Adam instead of SGD (used for the fully supervised baseline).
  bool use_adam = false;
  double adam_lr = 1e-4;
};

// (1/N) sum (pred_i - label_i)^2
double mse_loss(const std::vector<double>& pred, const std::vector<double>& label);
Var mse_loss(const std::vector<Var>& pred, const std::vector<double>& label);

// base_lr * 0.5^floor(epoch / period)
double lr_schedule(int epoch, const TrainSpec& spec);
double lr_schedule(int epoch, double base_lr, int period);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_mse = 0.0;
  double val_mse = 0.0;  // NaN when there is no validation split
};

struct PretrainResult {
  Model model;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
};

// SGD (or Adam) on the bracket MSE. Labels are EV corrections of the source
// images; bracket item t of image i gets target (delta_ev_i + Y*_t) / scale_ev.
PretrainResult pretrain(Model model, const std::vector<LabeledImage>& data, const TrainSpec& spec,
                        std::ostream* log = nullptr);

// Mean squared error (normalized units) over the bracket expansion of `data`.
double bracket_mse(const Model& model, const std::vector<LabeledImage>& data, double lo, double hi, double step);

std::string history_tsv(const std::vector<EpochRecord>& history);

}  // namespace aemeter
