#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "aemeter/tensor.hpp"

namespace aemeter {

// One trainable tensor plus the optimizer buffers that travel with it.
struct ParamSlot {
  Tensor value;
  Tensor momentum;  // SGD velocity; empty until first SGD step
  Tensor adam_m;    // Adam first moment; empty until first Adam step
  Tensor adam_v;
  std::uint64_t adam_step = 0;

  friend bool operator==(const ParamSlot&, const ParamSlot&) = default;
};

// Named parameters, iterated in sorted path order.
class ParamSet {
 public:
  using Map = std::map<std::string, ParamSlot>;

  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return slots_.count(name) != 0; }

  const Tensor& value(const std::string& name) const;
  Tensor& value(const std::string& name);
  ParamSlot& slot(const std::string& name);
  const ParamSlot& slot(const std::string& name) const;

  std::vector<std::string> names() const;
  std::size_t size() const { return slots_.size(); }
  std::size_t numel() const;

  Map::iterator begin() { return slots_.begin(); }
  Map::iterator end() { return slots_.end(); }
  Map::const_iterator begin() const { return slots_.begin(); }
  Map::const_iterator end() const { return slots_.end(); }

  // Drops momentum / Adam buffers, keeping values.
  void reset_optimizer_state();

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  Map slots_;
};

using GradMap = std::map<std::string, Tensor>;

GradMap zero_grads(const ParamSet& params);
// dst += scale * src, key by key.
void accumulate(GradMap& dst, const GradMap& src, double scale = 1.0);
void scale_grads(GradMap& grads, double factor);

struct SgdSpec {
  double lr = 0.003;
  double momentum = 0.9;
  double weight_decay = 0.0002;
};

struct AdamSpec {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using OptimizerSpec = std::variant<SgdSpec, AdamSpec>;

// SGD: v <- momentum*v + grad + wd*param; param <- param - lr*v.
// Adam: bias-corrected moments, per-parameter step counter.
void optimizer_step(ParamSet& params, const GradMap& grads, const OptimizerSpec& spec);

}  // namespace aemeter
