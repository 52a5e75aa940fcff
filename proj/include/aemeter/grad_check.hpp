#pragma once

#include <functional>
#include <map>
#include <string>

#include "aemeter/graph.hpp"
#include "aemeter/params.hpp"

namespace aemeter {

// Builds a scalar-valued graph from the parameters. Must be deterministic.
using GradSubject = std::function<Var(Graph&, const ParamSet&)>;

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-4;
  // 0 checks every element; otherwise at most this many (evenly strided) per parameter.
  std::size_t max_elements_per_param = 0;
  // Elements whose +-step probes cross a relu / maxpool kink have no valid
  // central difference and are skipped; the check fails if more than this
  // fraction of the probed elements had to be skipped.
  double max_skipped_fraction = 0.05;
};

struct ParamCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // straddled a kink
  bool pass = true;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::map<std::string, ParamCheck> per_param;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool pass = true;
};

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

// Central finite differences against Graph::backward. Throws if two forward
// evaluations of the subject disagree.
GradCheckReport grad_check(const GradSubject& subject, const ParamSet& params, const GradCheckOptions& options = {});

}  // namespace aemeter
