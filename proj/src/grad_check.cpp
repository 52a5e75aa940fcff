#include "aemeter/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aemeter {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

struct Probe {
  double value;
  std::uint64_t kinks;
};

Probe evaluate(const GradSubject& subject, const ParamSet& params) {
  Graph g;
  const double v = subject(g, params).value().item();
  return {v, g.kink_signature()};
}

}  // namespace

GradCheckReport grad_check(const GradSubject& subject, const ParamSet& params, const GradCheckOptions& options) {
  GradMap analytic;
  double f0 = 0.0;
  std::uint64_t sig0 = 0;
  {
    Graph g;
    Var out = subject(g, params);
    f0 = out.value().item();
    sig0 = g.kink_signature();
    analytic = g.backward(out, params);
  }
  if (evaluate(subject, params).value != f0) {
    throw std::invalid_argument("grad_check: subject is not deterministic (two forward passes disagree)");
  }

  GradCheckReport report;
  ParamSet probe = params;
  for (const auto& [name, slot] : params) {
    ParamCheck pc;
    const std::size_t n = slot.value.size();
    std::size_t stride = 1;
    if (options.max_elements_per_param > 0 && n > options.max_elements_per_param) {
      stride = (n + options.max_elements_per_param - 1) / options.max_elements_per_param;
    }
    Tensor& v = probe.value(name);
    const Tensor& a = analytic.at(name);
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = v[i];
      v[i] = orig + options.step;
      const Probe fp = evaluate(subject, probe);
      v[i] = orig - options.step;
      const Probe fm = evaluate(subject, probe);
      v[i] = orig;
      if (fp.kinks != sig0 || fm.kinks != sig0) {
        ++pc.skipped;
        continue;
      }
      const double numeric = (fp.value - fm.value) / (2.0 * options.step);
      const double err = relative_error(a[i], numeric);
      pc.max_rel_error = std::max(pc.max_rel_error, err);
      ++pc.checked;
    }
    pc.pass = pc.max_rel_error <= options.tolerance;
    report.checked += pc.checked;
    report.skipped += pc.skipped;
    if (pc.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = pc.max_rel_error;
      report.worst_param = name;
    }
    report.pass = report.pass && pc.pass;
    report.per_param.emplace(name, pc);
  }
  const std::size_t probed = report.checked + report.skipped;
  if (probed > 0 && static_cast<double>(report.skipped) > options.max_skipped_fraction * static_cast<double>(probed)) {
    report.pass = false;
  }
  return report;
}

}  // namespace aemeter
