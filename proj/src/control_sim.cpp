#include "aemeter/control_sim.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace aemeter {

ExposurePolicy model_policy(Model model) {
  auto m = std::make_shared<const Model>(std::move(model));
  return [m](const ImagePlane& frame, double) { return predict_delta_ev(*m, prepare_input(m->config, frame)); };
}

ExposurePolicy oracle_policy(const SceneModel& scene) {
  const double target = scene.optimal_ev;
  return [target](const ImagePlane&, double ev) { return target - ev; };
}

ExposurePolicy zero_policy() {
  return [](const ImagePlane&, double) { return 0.0; };
}

namespace {

double mean_linear_luminance(const ImagePlane& img, double gamma) {
  const std::size_t n = img.pixels();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s += 0.2126 * std::pow(img.values[i], gamma) + 0.7152 * std::pow(img.values[n + i], gamma) +
         0.0722 * std::pow(img.values[2 * n + i], gamma);
  }
  return s / static_cast<double>(n);
}

}  // namespace

SimTrace run_episode(const SceneModel& scene, const ExposurePolicy& policy, double start_ev, const EpisodeOptions& options) {
  if (options.max_steps < 1) throw std::invalid_argument("run_episode: max_steps must be >= 1");
  if (options.k < 1) throw std::invalid_argument("run_episode: k must be >= 1");
  auto realize = [&](double ev) { return options.limits ? decompose_ev(ev, *options.limits).ev : ev; };

  SimTrace trace;
  trace.latency_depth = options.latency_depth;
  trace.max_steps = options.max_steps;
  const double start = realize(start_ev);
  LatencyQueue queue(options.latency_depth, start);
  double commanded = start;
  for (int i = 0; i < options.max_steps; ++i) {
    SimStep st;
    st.step = i;
    st.commanded_ev = commanded;
    st.effective_ev = queue.step(commanded);
    const ImagePlane frame = render(scene, st.effective_ev, options.gamma);
    st.frame_mean_luminance = mean_linear_luminance(frame, options.gamma);
    st.predicted_delta_ev = policy(frame, st.effective_ev);
    if (!std::isfinite(st.predicted_delta_ev)) throw std::runtime_error("run_episode: policy returned a non-finite EV");
    commanded = realize(st.effective_ev + st.predicted_delta_ev);
    trace.steps.push_back(st);
    if (!trace.converged_at) {
      trace.converged_at = find_convergence(trace, options.eps, options.k);
      if (trace.converged_at && options.stop_on_convergence) break;
    }
  }
  return trace;
}

std::optional<int> find_convergence(const SimTrace& trace, double eps, int k) {
  int run = 0;
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    run = std::abs(trace.steps[i].predicted_delta_ev) < eps ? run + 1 : 0;
    if (run >= k) return std::max(1, static_cast<int>(i) - k + 1);
  }
  return std::nullopt;
}

int count_sign_alternations(const std::vector<double>& values) {
  int count = 0;
  int last = 0;
  for (double v : values) {
    const int s = (v > 0.0) - (v < 0.0);
    if (s == 0) continue;
    if (last != 0 && s != last) ++count;
    last = s;
  }
  return count;
}

ConvergenceReport convergence_metrics(const SimTrace& trace, double oracle_ev, double eps, int k) {
  if (trace.steps.empty()) throw std::invalid_argument("convergence_metrics: empty trace");
  ConvergenceReport r;
  const auto conv = find_convergence(trace, eps, k);
  r.converged = conv.has_value();
  r.steps_to_converge = conv ? *conv : std::max(trace.max_steps, static_cast<int>(trace.steps.size()));
  r.final_ev = trace.steps.back().effective_ev;
  r.residual_ev = std::abs(r.final_ev - oracle_ev);

  const double d0 = trace.steps.front().effective_ev - r.final_ev;
  std::size_t cross = trace.steps.size();
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const double d = trace.steps[i].effective_ev - r.final_ev;
    if (d == 0.0 || (d > 0.0) != (d0 > 0.0)) {
      cross = i;
      break;
    }
  }
  for (std::size_t i = cross; i < trace.steps.size(); ++i) {
    r.overshoot_ev = std::max(r.overshoot_ev, std::abs(trace.steps[i].effective_ev - r.final_ev));
  }

  const std::size_t split = conv ? static_cast<std::size_t>(*conv) : trace.steps.size();
  std::vector<double> before, after;
  for (std::size_t i = 0; i < trace.steps.size(); ++i) (i < split ? before : after).push_back(trace.steps[i].predicted_delta_ev);
  r.oscillations_before = count_sign_alternations(before);
  r.oscillation_count = count_sign_alternations(after);
  if (conv) {
    double lo = trace.steps[split].effective_ev, hi = lo;
    for (std::size_t i = split; i < trace.steps.size(); ++i) {
      lo = std::min(lo, trace.steps[i].effective_ev);
      hi = std::max(hi, trace.steps[i].effective_ev);
    }
    r.oscillation_amplitude_ev = hi - lo;
  }
  return r;
}

std::string trace_tsv(const SimTrace& trace) {
  std::ostringstream os;
  os.precision(10);
  os << "step\tcommanded_ev\teffective_ev\tpredicted_delta_ev\tframe_mean_luminance\n";
  for (const auto& s : trace.steps) {
    os << s.step << '\t' << s.commanded_ev << '\t' << s.effective_ev << '\t' << s.predicted_delta_ev << '\t'
       << s.frame_mean_luminance << '\n';
  }
  return os.str();
}

double mae(const std::vector<double>& preds, const std::vector<double>& labels) {
  if (preds.size() != labels.size()) throw std::invalid_argument("mae: length mismatch");
  if (preds.empty()) throw std::invalid_argument("mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - labels[i]);
  return s / static_cast<double>(preds.size());
}

std::vector<double> predict_all(const Model& model, const std::vector<LabeledImage>& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& d : data) out.push_back(predict_delta_ev(model, prepare_input(model.config, d.image)));
  return out;
}

std::vector<double> labels_of(const std::vector<LabeledImage>& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& d : data) out.push_back(d.delta_ev);
  return out;
}

double evaluate_mae(const Model& model, const std::vector<LabeledImage>& data) {
  return mae(predict_all(model, data), labels_of(data));
}

std::string MetricMatrix::tsv() const {
  std::ostringstream os;
  os.precision(6);
  os << "model";
  for (const auto& c : cols) os << '\t' << c;
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << rows[r];
    for (double v : values[r]) os << '\t' << v;
    os << '\n';
  }
  return os.str();
}

MetricMatrix cross_eval(const std::map<std::string, std::vector<double>>& predictions,
                        const std::map<std::string, std::vector<double>>& gts) {
  MetricMatrix m;
  for (const auto& [id, _] : gts) m.cols.push_back(id);
  for (const auto& [id, pred] : predictions) {
    m.rows.push_back(id);
    std::vector<double> row;
    for (const auto& [gid, gt] : gts) {
      if (gt.empty()) throw std::invalid_argument("cross_eval: empty test set '" + gid + "'");
      row.push_back(mae(pred, gt));
    }
    m.values.push_back(std::move(row));
  }
  return m;
}

MetricMatrix cross_eval(const std::map<std::string, Model>& models,
                        const std::map<std::string, std::vector<LabeledImage>>& testsets) {
  if (testsets.empty()) throw std::invalid_argument("cross_eval: no test sets");
  const auto& images = testsets.begin()->second;
  std::map<std::string, std::vector<double>> gts;
  for (const auto& [id, set] : testsets) {
    if (set.empty()) throw std::invalid_argument("cross_eval: empty test set '" + id + "'");
    if (set.size() != images.size()) throw std::invalid_argument("cross_eval: test sets must share their images");
    gts[id] = labels_of(set);
  }
  std::map<std::string, std::vector<double>> preds;
  for (const auto& [id, model] : models) preds[id] = predict_all(model, images);
  return cross_eval(preds, gts);
}

MetricMatrix nearest_expert_accuracy(const std::map<std::string, std::vector<double>>& predictions,
                                     const std::map<std::string, std::vector<double>>& gts) {
  MetricMatrix m;
  if (gts.empty()) throw std::invalid_argument("nearest_expert_accuracy: no ground truths");
  const std::size_t n = gts.begin()->second.size();
  for (const auto& [id, gt] : gts) {
    if (gt.size() != n) throw std::invalid_argument("nearest_expert_accuracy: ground truths not aligned");
    m.cols.push_back(id);
  }
  for (const auto& [id, pred] : predictions) {
    if (pred.size() != n) throw std::invalid_argument("nearest_expert_accuracy: predictions not aligned");
    m.rows.push_back(id);
    std::vector<double> row(gts.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> dist;
      for (const auto& [_, gt] : gts) dist.push_back(std::abs(pred[i] - gt[i]));
      const double best = *std::min_element(dist.begin(), dist.end());
      const auto ties = static_cast<double>(std::count(dist.begin(), dist.end(), best));
      for (std::size_t e = 0; e < dist.size(); ++e) {
        if (dist[e] == best) row[e] += 1.0 / ties;
      }
    }
    if (n > 0) {
      for (double& v : row) v = 100.0 * v / static_cast<double>(n);
    }
    m.values.push_back(std::move(row));
  }
  return m;
}

bool strictly_diagonally_dominant_rows(const MetricMatrix& m, bool smaller_is_better) {
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    const auto it = std::find(m.cols.begin(), m.cols.end(), m.rows[r]);
    if (it == m.cols.end()) return false;
    const auto d = static_cast<std::size_t>(it - m.cols.begin());
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      if (c == d) continue;
      const bool ok = smaller_is_better ? m.at(r, d) < m.at(r, c) : m.at(r, d) > m.at(r, c);
      if (!ok) return false;
    }
  }
  return true;
}

std::vector<double> mid_ranks(const std::vector<double>& scores) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double kendalls_w(const Ratings& ratings) {
  const std::size_t m = ratings.size();
  if (m < 2) throw std::invalid_argument("kendalls_w: need at least 2 raters");
  const std::size_t n = ratings.front().size();
  if (n < 2) throw std::invalid_argument("kendalls_w: need at least 2 items");
  std::vector<double> rank_sum(n, 0.0);
  double tie_correction = 0.0;
  for (const auto& row : ratings) {
    if (row.size() != n) throw std::invalid_argument("kendalls_w: ragged rating matrix");
    for (double v : row) {
      if (!std::isfinite(v)) throw std::invalid_argument("kendalls_w: non-finite rating");
    }
    const auto r = mid_ranks(row);
    for (std::size_t j = 0; j < n; ++j) rank_sum[j] += r[j];
    std::vector<double> sorted = row;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_correction += t * t * t - t;
      i = j + 1;
    }
  }
  const double md = static_cast<double>(m);
  const double nd = static_cast<double>(n);
  const double mean = md * (nd + 1.0) / 2.0;
  double s = 0.0;
  for (double r : rank_sum) s += (r - mean) * (r - mean);
  const double denom = md * md * (nd * nd * nd - nd) - md * tie_correction;
  if (!(denom > 0.0)) throw std::invalid_argument("kendalls_w: every rater ties all items");
  return 12.0 * s / denom;
}

double mean_kendalls_w(const std::vector<Ratings>& per_item) {
  if (per_item.empty()) throw std::invalid_argument("mean_kendalls_w: no rating matrices");
  double s = 0.0;
  for (const auto& r : per_item) s += kendalls_w(r);
  return s / static_cast<double>(per_item.size());
}

double pooled_kendalls_w(const std::vector<Ratings>& per_item) {
  if (per_item.empty()) throw std::invalid_argument("pooled_kendalls_w: no rating matrices");
  Ratings pooled(per_item.front().size());
  for (const auto& r : per_item) {
    if (r.size() != pooled.size()) throw std::invalid_argument("pooled_kendalls_w: rater count differs");
    for (std::size_t i = 0; i < r.size(); ++i) pooled[i].insert(pooled[i].end(), r[i].begin(), r[i].end());
  }
  return kendalls_w(pooled);
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<DatasizeRow> datasize_curve(const Model& base, const std::vector<FeedbackItem>& pool,
                                        const std::vector<std::size_t>& sizes, const std::vector<std::uint64_t>& seeds,
                                        const std::vector<LabeledImage>& eval_set, const FinetuneSpec& spec) {
  if (seeds.empty()) throw std::invalid_argument("datasize_curve: no seeds");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0 || sizes[i] > pool.size()) throw std::invalid_argument("datasize_curve: sizes must lie in [1, pool size]");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw std::invalid_argument("datasize_curve: sizes must be ascending");
  }
  std::vector<DatasizeRow> rows;
  for (std::size_t size : sizes) {
    DatasizeRow row;
    row.size = size;
    for (std::uint64_t seed : seeds) {
      std::vector<std::size_t> idx(pool.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      Rng rng(derive_seed(seed, 0x51CE));
      for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
      std::vector<FeedbackItem> sub;
      for (std::size_t i = 0; i < size; ++i) sub.push_back(pool[idx[i]]);
      FinetuneSpec s = spec;
      s.seed = seed;
      row.maes.push_back(evaluate_mae(finetune(base, sub, s).model, eval_set));
    }
    row.median_mae = median(row.maes);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace aemeter
