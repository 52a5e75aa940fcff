#include "aemeter/params.hpp"

#include <cmath>
#include <stdexcept>

namespace aemeter {

void ParamSet::add(const std::string& name, Tensor value) {
  if (!slots_.emplace(name, ParamSlot{std::move(value), {}, {}, {}, 0}).second) {
    throw std::invalid_argument("params: duplicate parameter '" + name + "'");
  }
}

ParamSlot& ParamSet::slot(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::out_of_range("params: no parameter '" + name + "'");
  return it->second;
}

const ParamSlot& ParamSet::slot(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::out_of_range("params: no parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamSet::value(const std::string& name) const { return slot(name).value; }
Tensor& ParamSet::value(const std::string& name) { return slot(name).value; }

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(slots_.size());
  for (const auto& [name, _] : slots_) out.push_back(name);
  return out;
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& [_, s] : slots_) n += s.value.size();
  return n;
}

void ParamSet::reset_optimizer_state() {
  for (auto& [_, s] : slots_) {
    s.momentum = {};
    s.adam_m = {};
    s.adam_v = {};
    s.adam_step = 0;
  }
}

GradMap zero_grads(const ParamSet& params) {
  GradMap out;
  for (const auto& [name, s] : params) out.emplace(name, Tensor(s.value.shape()));
  return out;
}

void accumulate(GradMap& dst, const GradMap& src, double scale) {
  for (const auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      Tensor t(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) t[i] = scale * g[i];
      dst.emplace(name, std::move(t));
      continue;
    }
    if (it->second.shape() != g.shape()) {
      throw std::invalid_argument("grads: shape mismatch for '" + name + "'");
    }
    auto d = it->second.data();
    auto s = g.data();
    for (std::size_t i = 0; i < s.size(); ++i) d[i] += scale * s[i];
  }
}

void scale_grads(GradMap& grads, double factor) {
  for (auto& [_, g] : grads)
    for (auto& v : g.data()) v *= factor;
}

namespace {

const Tensor& grad_for(const GradMap& grads, const std::string& name, const Tensor& value) {
  auto it = grads.find(name);
  if (it == grads.end()) throw std::invalid_argument("optimizer: missing gradient for '" + name + "'");
  if (it->second.shape() != value.shape()) {
    throw std::invalid_argument("optimizer: gradient shape " + shape_str(it->second.shape()) + " for '" + name +
                                "' does not match parameter " + shape_str(value.shape()));
  }
  return it->second;
}

void sgd_step(ParamSet& params, const GradMap& grads, const SgdSpec& spec) {
  for (auto& [name, slot] : params) {
    const Tensor& g = grad_for(grads, name, slot.value);
    if (slot.momentum.shape() != slot.value.shape()) slot.momentum = Tensor(slot.value.shape());
    auto p = slot.value.data();
    auto v = slot.momentum.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = spec.momentum * v[i] + g[i] + spec.weight_decay * p[i];
      p[i] -= spec.lr * v[i];
    }
  }
}

void adam_step(ParamSet& params, const GradMap& grads, const AdamSpec& spec) {
  for (auto& [name, slot] : params) {
    const Tensor& g = grad_for(grads, name, slot.value);
    if (slot.adam_m.shape() != slot.value.shape()) {
      slot.adam_m = Tensor(slot.value.shape());
      slot.adam_v = Tensor(slot.value.shape());
      slot.adam_step = 0;
    }
    ++slot.adam_step;
    const double t = static_cast<double>(slot.adam_step);
    const double c1 = 1.0 - std::pow(spec.beta1, t);
    const double c2 = 1.0 - std::pow(spec.beta2, t);
    auto p = slot.value.data();
    auto m = slot.adam_m.data();
    auto v = slot.adam_v.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = spec.beta1 * m[i] + (1.0 - spec.beta1) * g[i];
      v[i] = spec.beta2 * v[i] + (1.0 - spec.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= spec.lr * mhat / (std::sqrt(vhat) + spec.eps);
    }
  }
}

}  // namespace

void optimizer_step(ParamSet& params, const GradMap& grads, const OptimizerSpec& spec) {
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, SgdSpec>) {
          sgd_step(params, grads, s);
        } else {
          adam_step(params, grads, s);
        }
      },
      spec);
}

}  // namespace aemeter
