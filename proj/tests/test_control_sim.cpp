#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aemeter/control_sim.hpp"

using namespace aemeter;

namespace {

constexpr double kWTol = 1e-12;

SceneModel small_scene(std::uint64_t seed) {
  SceneSpec s;
  s.size = 24;
  return generate_scene(seed, s);
}

SimTrace trace_of(const std::vector<double>& preds, const std::vector<double>& evs) {
  SimTrace t;
  t.max_steps = static_cast<int>(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    SimStep s;
    s.step = static_cast<int>(i);
    s.effective_ev = evs[i];
    s.commanded_ev = evs[i];
    s.predicted_delta_ev = preds[i];
    t.steps.push_back(s);
  }
  return t;
}

// Straight from the definition: ranks by counting, S about the mean rank sum.
double brute_w(const Ratings& x) {
  const std::size_t m = x.size(), n = x[0].size();
  std::vector<double> rank_sum(n, 0.0);
  double ties = 0.0;
  for (const auto& row : x) {
    for (std::size_t j = 0; j < n; ++j) {
      double less = 0, equal = 0;
      for (std::size_t l = 0; l < n; ++l) {
        less += row[l] < row[j];
        equal += row[l] == row[j];
      }
      rank_sum[j] += 1.0 + less + (equal - 1.0) / 2.0;
      ties += equal * equal - 1.0;  // t members of a tie group add up to t^3 - t
    }
  }
  double mean = 0.0;
  for (double r : rank_sum) mean += r;
  mean /= n;
  double s = 0.0;
  for (double r : rank_sum) s += (r - mean) * (r - mean);
  const double md = static_cast<double>(m), nd = static_cast<double>(n);
  return 12.0 * s / (md * md * (nd * nd * nd - nd) - md * ties);
}

}  // namespace

TEST(Episode, OracleWithoutLatencyConvergesAtOne) {
  const SceneModel sc = small_scene(1);
  EpisodeOptions o;
  o.latency_depth = 0;
  const auto t = run_episode(sc, oracle_policy(sc), sc.optimal_ev + 1.3, o);
  ASSERT_TRUE(t.converged_at.has_value());
  EXPECT_EQ(*t.converged_at, 1);
  EXPECT_NEAR(t.steps[1].effective_ev, sc.optimal_ev, 1e-12);
  const auto r = convergence_metrics(t, sc.optimal_ev);
  EXPECT_EQ(r.overshoot_ev, 0.0);
  EXPECT_EQ(r.oscillation_count, 0);
  EXPECT_NEAR(r.residual_ev, 0.0, 1e-12);
}

TEST(Episode, ZeroPolicyHoldsCommand) {
  const SceneModel sc = small_scene(2);
  const double start = sc.optimal_ev - 0.7;
  const auto t = run_episode(sc, zero_policy(), start);
  ASSERT_TRUE(t.converged_at.has_value());
  EXPECT_EQ(*t.converged_at, 1);
  for (const auto& s : t.steps) {
    EXPECT_EQ(s.commanded_ev, start);
    EXPECT_EQ(s.effective_ev, start);
  }
  EXPECT_NEAR(convergence_metrics(t, sc.optimal_ev).residual_ev, 0.7, 1e-12);
}

TEST(Episode, LatencyThreeDelaysFirstChange) {
  const SceneModel sc = small_scene(3);
  const double start = sc.optimal_ev + 1.0;
  EpisodeOptions o;
  o.latency_depth = 3;
  o.stop_on_convergence = false;
  o.max_steps = 12;
  const auto t = run_episode(sc, oracle_policy(sc), start, o);
  ASSERT_EQ(t.steps.size(), 12u);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(t.steps[i].effective_ev, start) << i;
  EXPECT_NEAR(t.steps[4].effective_ev, sc.optimal_ev, 1e-12);
  // oracle never overshoots, so the trace settles with no oscillation
  const auto r = convergence_metrics(t, sc.optimal_ev);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.steps_to_converge, 4);
  EXPECT_EQ(r.oscillation_amplitude_ev, 0.0);
}

TEST(Episode, LatencyInvariantHolds) {
  // effective EV at step i is the command in force at step i - depth
  const SceneModel sc = small_scene(4);
  int calls = 0;
  ExposurePolicy jitter = [&](const ImagePlane&, double) { return 0.1 * std::sin(1.7 * ++calls); };
  for (int depth : {0, 1, 2, 3, 5}) {
    EpisodeOptions o;
    o.latency_depth = depth;
    o.stop_on_convergence = false;
    o.max_steps = 15;
    const auto t = run_episode(sc, jitter, sc.optimal_ev, o);
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      const double want = i >= static_cast<std::size_t>(depth) ? t.steps[i - depth].commanded_ev : sc.optimal_ev;
      EXPECT_EQ(t.steps[i].effective_ev, want) << depth << " " << i;
    }
  }
}

TEST(Episode, HardwareLimitsRealizeCommands) {
  const SceneModel sc = small_scene(5);
  EpisodeOptions o;
  o.latency_depth = 0;
  o.limits = HardwareLimits{};
  o.stop_on_convergence = false;
  o.max_steps = 4;
  ExposurePolicy huge = [](const ImagePlane&, double) { return 100.0; };
  const auto t = run_episode(sc, huge, 5.0, o);
  const double max_ev = decompose_ev(1000.0, HardwareLimits{}).ev;
  EXPECT_EQ(t.steps.back().effective_ev, max_ev);
}

TEST(Episode, Rejections) {
  const SceneModel sc = small_scene(6);
  EpisodeOptions o;
  o.max_steps = 0;
  EXPECT_THROW(run_episode(sc, zero_policy(), 0.0, o), std::invalid_argument);
  ExposurePolicy bad = [](const ImagePlane&, double) { return std::nan(""); };
  EXPECT_THROW(run_episode(sc, bad, 0.0), std::runtime_error);
}

TEST(Episode, TraceTsvHeader) {
  const SceneModel sc = small_scene(7);
  const std::string tsv = trace_tsv(run_episode(sc, zero_policy(), 1.0));
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "step\tcommanded_ev\teffective_ev\tpredicted_delta_ev\tframe_mean_luminance");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 4);
}

TEST(Convergence, ConstantTraceHasNoOscillation) {
  const auto r = convergence_metrics(trace_of({0, 0, 0, 0}, {1, 1, 1, 1}), 1.0);
  EXPECT_EQ(r.oscillation_count, 0);
  EXPECT_EQ(r.oscillations_before, 0);
  EXPECT_EQ(r.overshoot_ev, 0.0);
}

TEST(Convergence, HandCountedAlternations) {
  const auto t = trace_of({0.3, -0.2, 0.2, 0, 0, 0}, {0.0, 0.3, 0.1, 0.3, 0.3, 0.3});
  EXPECT_EQ(find_convergence(t, 0.05, 3), 3);
  const auto r = convergence_metrics(t, 0.3);
  EXPECT_EQ(r.oscillations_before, 2);
  EXPECT_EQ(r.oscillation_count, 0);
  EXPECT_EQ(r.steps_to_converge, 3);
}

TEST(Convergence, UnconvergedReportsMaxSteps) {
  const auto r = convergence_metrics(trace_of({0.5, -0.5, 0.5, -0.5}, {0, 0.5, 0, 0.5}), 0.25);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.steps_to_converge, 4);
  EXPECT_EQ(r.oscillations_before, 3);
  EXPECT_NEAR(r.overshoot_ev, 0.5, 1e-15);
}

TEST(Convergence, SignAlternations) {
  EXPECT_EQ(count_sign_alternations({}), 0);
  EXPECT_EQ(count_sign_alternations({1, 0, -1, 0, 1}), 2);
  EXPECT_EQ(count_sign_alternations({1, 2, 3}), 0);
}

TEST(Mae, Values) {
  EXPECT_EQ(mae({0.1, 0.2}, {0.1, 0.2}), 0.0);
  EXPECT_NEAR(mae({0.2, -0.4}, {0.0, 0.0}), 0.3, 1e-15);
  EXPECT_THROW(mae({0.1}, {0.1, 0.2}), std::invalid_argument);
  EXPECT_THROW(mae({}, {}), std::invalid_argument);
}

TEST(CrossEval, ConstantWhenIdentical) {
  const std::vector<double> p{0.1, 0.5, -0.2};
  const auto m = cross_eval({{"A", p}, {"B", p}}, {{"A", {0, 0, 0}}, {"B", {0, 0, 0}}});
  ASSERT_EQ(m.rows.size(), 2u);
  ASSERT_EQ(m.cols.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(m.at(r, c), m.at(0, 0));
  EXPECT_EQ(m.tsv().substr(0, 10), "model\tA\tB\n");
  EXPECT_THROW(cross_eval({{"A", p}}, {{"A", {}}}), std::invalid_argument);
}

TEST(CrossEval, DiagonalDominanceCheck) {
  const auto m = cross_eval({{"A", {-0.4, -0.4}}, {"C", {0.0, 0.1}}, {"E", {0.4, 0.3}}},
                            {{"A", {-0.4, -0.4}}, {"C", {0.0, 0.0}}, {"E", {0.4, 0.4}}});
  EXPECT_TRUE(strictly_diagonally_dominant_rows(m, true));
  EXPECT_FALSE(strictly_diagonally_dominant_rows(m, false));
}

TEST(CrossEval, ModelsOnTestSets) {
  Rng rng(9);
  Model m = build_network(NetConfig::desk(32), rng);
  SceneSpec s;
  s.size = 24;
  const auto scenes = generate_scenes(4, 10, s);
  const auto a = expert_test_set(scenes, expert_by_id("A"), 1);
  const auto e = expert_test_set(scenes, expert_by_id("E"), 1);
  const auto mat = cross_eval(std::map<std::string, Model>{{"m", m}}, {{"A", a}, {"E", e}});
  EXPECT_NEAR(mat.at(0, 0), evaluate_mae(m, a), 1e-15);
  EXPECT_NEAR(mat.at(0, 1), evaluate_mae(m, e), 1e-15);
}

TEST(Nearest, ExactPredictionsOwnTheirRow) {
  const std::map<std::string, std::vector<double>> gts{{"A", {-0.4, -0.3}}, {"C", {0.0, 0.1}}, {"E", {0.4, 0.5}}};
  const auto m = nearest_expert_accuracy(gts, gts);
  for (std::size_t r = 0; r < 3; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < 3; ++c) row += m.at(r, c);
    EXPECT_NEAR(row, 100.0, 1e-12);
    EXPECT_EQ(m.at(r, r), 100.0);
  }
}

TEST(Nearest, TiesSplit) {
  const auto m = nearest_expert_accuracy({{"x", {0.0}}}, {{"A", {-0.2}}, {"B", {0.2}}});
  EXPECT_EQ(m.at(0, 0), 50.0);
  EXPECT_EQ(m.at(0, 1), 50.0);
}

TEST(KendallW, IdenticalRankingsGiveOne) {
  EXPECT_NEAR(kendalls_w({{1, 2, 3, 4}, {10, 20, 30, 40}, {0.1, 0.2, 0.3, 0.4}}), 1.0, kWTol);
}

TEST(KendallW, OppositeRankingsGiveZero) { EXPECT_NEAR(kendalls_w({{1, 2}, {2, 1}}), 0.0, kWTol); }

TEST(KendallW, Rejections) {
  EXPECT_THROW(kendalls_w({{1, 2, 3}}), std::invalid_argument);
  EXPECT_THROW(kendalls_w({{1}, {2}}), std::invalid_argument);
  EXPECT_THROW(kendalls_w({{1, 1}, {1, 1}}), std::invalid_argument);
}

TEST(KendallW, MidRanks) {
  EXPECT_EQ(mid_ranks({3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
}

TEST(KendallW, MatchesBruteForce) {
  Rng rng(11);
  std::uniform_int_distribution<int> score(1, 5);
  for (int trial = 0; trial < 100; ++trial) {
    Ratings x(5, std::vector<double>(10));
    for (auto& row : x)
      for (auto& v : row) v = score(rng);
    EXPECT_NEAR(kendalls_w(x), brute_w(x), kWTol);
  }
}

TEST(KendallW, InvariantUnderRelabelling) {
  Rng rng(12);
  std::uniform_real_distribution<double> u(0, 1);
  Ratings x(4, std::vector<double>(7));
  for (auto& row : x)
    for (auto& v : row) v = u(rng);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Ratings y = x;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 7; ++j) y[r][j] = x[r][perm[j]];
  std::reverse(y.begin(), y.end());
  EXPECT_NEAR(kendalls_w(x), kendalls_w(y), kWTol);
  const double w = kendalls_w(x);
  EXPECT_GE(w, 0.0);
  EXPECT_LE(w, 1.0);
}

TEST(KendallW, MeanAndPooled) {
  const Ratings a{{1, 2, 3}, {1, 2, 3}}, b{{1, 2, 3}, {3, 2, 1}};
  EXPECT_NEAR(mean_kendalls_w({a, b}), (kendalls_w(a) + kendalls_w(b)) / 2.0, kWTol);
  EXPECT_NEAR(pooled_kendalls_w({a, b}), kendalls_w({{1, 2, 3, 1, 2, 3}, {1, 2, 3, 3, 2, 1}}), kWTol);
}

TEST(Median, Values) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), std::invalid_argument);
}

TEST(Datasize, OneRowPerSize) {
  Rng rng(13);
  const Model base = build_network(NetConfig::desk(32), rng);
  SceneSpec s;
  s.size = 24;
  const auto scenes = generate_scenes(8, 14, s);
  const auto pool = expert_pool(scenes, expert_by_id("C"), 1);
  const auto eval = expert_test_set(generate_scenes(3, 15, s), expert_by_id("C"), 2);
  FinetuneSpec spec;
  spec.epochs = 1;
  spec.batch_size = 8;
  const auto rows = datasize_curve(base, pool, {2, 4}, {1, 2, 3}, eval, spec);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.maes.size(), 3u);
    EXPECT_EQ(r.median_mae, median(r.maes));
  }
  EXPECT_THROW(datasize_curve(base, pool, {100}, {1}, eval, spec), std::invalid_argument);
}
