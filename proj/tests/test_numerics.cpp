#include <gtest/gtest.h>

#include <cmath>

#include "aemeter/grad_check.hpp"
#include "aemeter/graph.hpp"
#include "aemeter/metering_net.hpp"
#include "aemeter/params.hpp"
#include "test_util.hpp"

using namespace aemeter;
using aemeter::testing::contract;
using aemeter::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;
constexpr int kSeeds = 5;

ParamSet one_param(const std::string& name, Tensor t) {
  ParamSet ps;
  ps.add(name, std::move(t));
  return ps;
}

void expect_pass(const GradCheckReport& r) {
  EXPECT_TRUE(r.pass) << "worst " << r.worst_param << " rel err " << r.max_rel_error;
  EXPECT_LE(r.max_rel_error, kGradTol);
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5, 0.0)), std::invalid_argument);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(shape_numel(t.shape()), t.size());
}

TEST(Conv2d, IdentityKernelReturnsInput) {
  Rng rng(1);
  Graph g;
  Tensor x = random_tensor({1, 5, 6}, rng);
  Var y = conv2d(g.input(x), g.input(Tensor({1, 1, 1, 1}, 1.0)), g.input(Tensor({1}, 0.0)), 1, 0);
  EXPECT_EQ(y.value(), x);
}

TEST(Conv2d, ConstantInputAllOnesKernel) {
  Graph g;
  const double v = 0.37;
  Var y = conv2d(g.input(Tensor({1, 6, 6}, v)), g.input(Tensor({1, 1, 3, 3}, 1.0)), g.input(Tensor({1}, 0.0)), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 4}));
  for (double o : y.value().vec()) EXPECT_NEAR(o, 9 * v, 1e-12);
}

TEST(Conv2d, OutputExtentFormula) {
  for (int h : {5, 8, 13}) {
    for (int k : {1, 3}) {
      for (int s : {1, 2}) {
        for (int p : {0, 1}) {
          Graph g;
          Var y = conv2d(g.input(Tensor({2, static_cast<std::size_t>(h), 7})), g.input(Tensor({3, 2, static_cast<std::size_t>(k), static_cast<std::size_t>(k)})),
                         g.input(Tensor({3})), s, p);
          EXPECT_EQ(y.shape()[1], static_cast<std::size_t>((h + 2 * p - k) / s + 1));
          EXPECT_EQ(y.shape()[2], static_cast<std::size_t>((7 + 2 * p - k) / s + 1));
        }
      }
    }
  }
}

TEST(Conv2d, ShapeMismatchNamesDimension) {
  Graph g;
  try {
    conv2d(g.input(Tensor({2, 5, 5})), g.input(Tensor({1, 3, 3, 3})), g.input(Tensor({1})), 1, 0);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
  EXPECT_THROW(conv2d(g.input(Tensor({1, 2, 2})), g.input(Tensor({1, 1, 3, 3})), g.input(Tensor({1})), 1, 0),
               std::invalid_argument);
  EXPECT_THROW(conv2d(g.input(Tensor({1, 5, 5})), g.input(Tensor({1, 1, 3, 3})), g.input(Tensor({1})), 0, 0),
               std::invalid_argument);
}

TEST(Conv2d, FullScaleBackboneReachesSevenBySeven) {
  EXPECT_EQ(NetConfig::full_scale(128).map_size(), (std::pair<int, int>{7, 7}));
}

TEST(Activation, ReferenceValues) {
  Graph g;
  Var x = g.input(Tensor({3}, std::vector<double>{0.0, 1.0, -2.0}));
  const Tensor t = activation(x, Activation::Tanh).value();
  const Tensor s = activation(x, Activation::Sigmoid).value();
  const Tensor r = activation(x, Activation::Relu).value();
  EXPECT_EQ(t[0], 0.0);
  EXPECT_NEAR(t[1], 0.7615941559557649, 1e-15);
  EXPECT_EQ(s[0], 0.5);
  EXPECT_EQ(r[2], 0.0);
  EXPECT_EQ(r[1], 1.0);
}

TEST(Activation, RangesOnLargeInputs) {
  Rng rng(3);
  Graph g;
  Var x = g.input(random_tensor({200}, rng, -50.0, 50.0));
  for (double v : activation(x, Activation::Tanh).value().vec()) EXPECT_TRUE(v >= -1.0 && v <= 1.0);
  for (double v : activation(x, Activation::Sigmoid).value().vec()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  for (double v : activation(x, Activation::Relu).value().vec()) EXPECT_GE(v, 0.0);
}

TEST(MaxPool, SmallCases) {
  Graph g;
  Var y = maxpool2d(g.input(Tensor({1, 2, 2}, std::vector<double>{1, 2, 3, 4})), 2, 2);
  ASSERT_EQ(y.value().size(), 1u);
  EXPECT_EQ(y.value()[0], 4.0);
  Var c = maxpool2d(g.input(Tensor({2, 5, 5}, 0.3)), 3, 2);
  for (double v : c.value().vec()) EXPECT_EQ(v, 0.3);
  EXPECT_THROW(maxpool2d(g.input(Tensor({1, 2, 2})), 3, 1), std::invalid_argument);
}

TEST(MaxPool, TieSendsGradientToFirstOccurrence) {
  const ParamSet ps = one_param("x", Tensor({1, 2, 2}, 5.0));
  Graph g;
  const GradMap gm = g.backward(sum(maxpool2d(g.param(ps, "x"), 2, 2)));
  const Tensor& d = gm.at("x");
  EXPECT_EQ(d.vec(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Concat, ShapesAndEmptyOperand) {
  Graph g;
  Var a = g.input(Tensor({2, 4, 4}, 1.0));
  EXPECT_EQ(concat_channels(a, g.input(Tensor({3, 4, 4}))).shape(), (Shape{5, 4, 4}));
  const Tensor joined = concat_channels(a, g.input(Tensor({0, 4, 4}))).value();
  EXPECT_EQ(joined, a.value());
  EXPECT_THROW(concat_channels(a, g.input(Tensor({1, 3, 4}))), std::invalid_argument);
}

TEST(Concat, BackwardOfSumRoutesOnes) {
  ParamSet ps;
  ps.add("a", Tensor({2, 3, 3}, 0.1));
  ps.add("b", Tensor({1, 3, 3}, -0.4));
  Graph g;
  const GradMap gm = g.backward(sum(concat_channels(g.param(ps, "a"), g.param(ps, "b"))));
  for (double v : gm.at("a").vec()) EXPECT_EQ(v, 1.0);
  for (double v : gm.at("b").vec()) EXPECT_EQ(v, 1.0);
}

TEST(Mul, IdentityAndAnnihilator) {
  Rng rng(5);
  Graph g;
  Tensor a = random_tensor({2, 3, 3}, rng);
  Var va = g.input(a);
  EXPECT_EQ(elementwise_mul(va, g.input(Tensor(a.shape(), 1.0))).value(), a);
  for (double v : elementwise_mul(va, g.input(Tensor(a.shape(), 0.0))).value().vec()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(elementwise_mul(va, g.input(Tensor({3, 3}))), std::invalid_argument);
}

TEST(Mul, GradientBothBranches) {
  Rng rng(6);
  ParamSet ps;
  ps.add("a", random_tensor({3, 3}, rng));
  ps.add("b", random_tensor({3, 3}, rng));
  const auto r = grad_check(
      [](Graph& g, const ParamSet& p) { return contract(elementwise_mul(g.param(p, "a"), g.param(p, "b")), 9); }, ps);
  EXPECT_LE(r.max_rel_error, 1e-6);
}

TEST(GlobalAvgPool, Values) {
  Graph g;
  EXPECT_EQ(global_avg_pool(g.input(Tensor({1, 2, 2}, std::vector<double>{1, 3, 5, 7}))).value()[0], 4.0);
  EXPECT_EQ(global_avg_pool(g.input(Tensor({1, 3, 5}, 2.5))).value()[0], 2.5);
  const ParamSet ps = one_param("x", Tensor({1, 4, 5}, 0.2));
  Graph h;
  const GradMap gm = h.backward(sum(global_avg_pool(h.param(ps, "x"))));
  for (double v : gm.at("x").vec()) EXPECT_DOUBLE_EQ(v, 1.0 / 20.0);
}

TEST(Dropout, EvalAndZeroRatioAreIdentity) {
  Rng rng(7);
  Graph g;
  Tensor x = random_tensor({4, 4}, rng);
  EXPECT_EQ(dropout(g.input(x), 0.5, Mode::Eval, rng).value(), x);
  EXPECT_EQ(dropout(g.input(x), 0.0, Mode::Train, rng).value(), x);
  EXPECT_THROW(dropout(g.input(x), 1.0, Mode::Train, rng), std::invalid_argument);
}

TEST(Dropout, InvertedScalingPreservesMean) {
  Rng rng(8);
  Graph g;
  const Tensor y = dropout(g.input(Tensor({100000}, 1.0)), 0.5, Mode::Train, rng).value();
  double s = 0.0;
  for (double v : y.vec()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    s += v;
  }
  const double mean = s / 100000.0;
  EXPECT_GE(mean, 0.98);
  EXPECT_LE(mean, 1.02);
}

TEST(Dropout, MaskReusedInBackward) {
  const ParamSet ps = one_param("x", Tensor({50}, 1.0));
  Rng rng(9);
  Graph g;
  Var y = dropout(g.param(ps, "x"), 0.5, Mode::Train, rng);
  const GradMap gm = g.backward(sum(y));
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(gm.at("x")[i], y.value()[i]);
}

TEST(Backward, IdentityAndTanhAtZero) {
  const ParamSet ps = one_param("x", Tensor({1}, 0.0));
  Graph g;
  EXPECT_EQ(g.backward(sum(g.param(ps, "x"))).at("x")[0], 1.0);
  Graph h;
  EXPECT_EQ(h.backward(sum(activation(h.param(ps, "x"), Activation::Tanh))).at("x")[0], 1.0);
}

TEST(Backward, NonScalarSeedRejected) {
  const ParamSet ps = one_param("x", Tensor({3}, 0.0));
  Graph g;
  EXPECT_THROW(g.backward(g.param(ps, "x")), std::invalid_argument);
}

TEST(Backward, UnreachableParamsGetZeros) {
  ParamSet ps;
  ps.add("used", Tensor({2}, 1.0));
  ps.add("unused", Tensor({3}, 1.0));
  Graph g;
  const GradMap gm = g.backward(sum(g.param(ps, "used")), ps);
  ASSERT_TRUE(gm.count("unused"));
  for (double v : gm.at("unused").vec()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, VisitsEveryNodeOnce) {
  Rng rng(10);
  ParamSet ps;
  ps.add("a", random_tensor({2, 3, 3}, rng));
  Graph g;
  Var a = g.param(ps, "a");
  Var s = sum(activation(add(a, scale(a, 0.5)), Activation::Tanh));
  g.backward(s);
  EXPECT_EQ(g.last_backward_visits(), g.size());
}

TEST(Backward, SharedParameterAccumulates) {
  Rng rng(11);
  ParamSet ps;
  ps.add("w", random_tensor({2, 2, 3, 3}, rng));
  ps.add("b", random_tensor({2}, rng));
  const Tensor x = random_tensor({2, 6, 6}, rng);
  const auto r = grad_check(
      [&](Graph& g, const ParamSet& p) {
        Var w = g.param(p, "w");
        Var b = g.param(p, "b");
        Var h = activation(conv2d(g.input(x), w, b, 1, 1), Activation::Tanh);
        return contract(conv2d(h, w, b, 1, 0), 12);
      },
      ps);
  expect_pass(r);
}

// Finite-difference sweep over every op, inputs in [-1, 1], five seeds.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed);
  ParamSet ps;
  ps.add("x", random_tensor({2, 7, 7}, rng));
  ps.add("y", random_tensor({2, 7, 7}, rng));
  ps.add("w", random_tensor({3, 2, 3, 3}, rng));
  ps.add("b", random_tensor({3}, rng));
  Rng drop_seed(seed + 100);
  const auto drop_state = drop_seed;

  const std::vector<std::pair<std::string, GradSubject>> subjects = {
      {"conv2d", [&](Graph& g, const ParamSet& p) {
         return contract(conv2d(g.param(p, "x"), g.param(p, "w"), g.param(p, "b"), 2, 1), seed);
       }},
      {"tanh", [&](Graph& g, const ParamSet& p) { return contract(activation(g.param(p, "x"), Activation::Tanh), seed); }},
      {"sigmoid", [&](Graph& g, const ParamSet& p) { return contract(activation(g.param(p, "x"), Activation::Sigmoid), seed); }},
      {"relu", [&](Graph& g, const ParamSet& p) { return contract(activation(g.param(p, "x"), Activation::Relu), seed); }},
      {"maxpool2d", [&](Graph& g, const ParamSet& p) { return contract(maxpool2d(g.param(p, "x"), 3, 2), seed); }},
      {"concat", [&](Graph& g, const ParamSet& p) {
         return contract(concat_channels(g.param(p, "x"), g.param(p, "y")), seed);
       }},
      {"mul", [&](Graph& g, const ParamSet& p) { return contract(elementwise_mul(g.param(p, "x"), g.param(p, "y")), seed); }},
      {"add", [&](Graph& g, const ParamSet& p) { return contract(add(g.param(p, "x"), g.param(p, "y")), seed); }},
      {"gap", [&](Graph& g, const ParamSet& p) { return contract(global_avg_pool(g.param(p, "x")), seed); }},
      {"dropout", [&](Graph& g, const ParamSet& p) {
         Rng r = drop_state;
         return contract(dropout(g.param(p, "x"), 0.5, Mode::Train, r), seed);
       }},
      {"scale", [&](Graph& g, const ParamSet& p) { return contract(scale(g.param(p, "x"), -1.7), seed); }},
      {"square", [&](Graph& g, const ParamSet& p) { return contract(square(g.param(p, "x")), seed); }},
      {"reshape", [&](Graph& g, const ParamSet& p) { return contract(reshape(g.param(p, "x"), {14, 7}), seed); }},
  };
  for (const auto& [name, subject] : subjects) {
    SCOPED_TRACE(name);
    expect_pass(grad_check(subject, ps));
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Range(1, kSeeds + 1));

TEST(GradCheck, LinearFunctionExact) {
  Rng rng(12);
  ParamSet ps = one_param("theta", random_tensor({6}, rng));
  const Tensor x = random_tensor({6}, rng);
  const auto r = grad_check([&](Graph& g, const ParamSet& p) { return sum(elementwise_mul(g.param(p, "theta"), g.input(x))); }, ps);
  EXPECT_LE(r.max_rel_error, 1e-9);
}

TEST(GradCheck, TanhAtZero) {
  ParamSet ps = one_param("x", Tensor({1}, 0.0));
  const auto r = grad_check([](Graph& g, const ParamSet& p) { return sum(activation(g.param(p, "x"), Activation::Tanh)); }, ps);
  EXPECT_LE(r.max_rel_error, 1e-6);
}

TEST(GradCheck, HeadOnRandomMaps) {
  Rng rng(13);
  ParamSet ps;
  ps.add("em", random_tensor({1, 5, 5}, rng, -3, 3));
  ps.add("im", random_tensor({1, 5, 5}, rng, -3, 3));
  const auto r = grad_check(
      [](Graph& g, const ParamSet& p) {
        Var em = activation(g.param(p, "em"), Activation::Tanh);
        Var im = activation(g.param(p, "im"), Activation::Sigmoid);
        return sum(global_avg_pool(elementwise_mul(em, im)));
      },
      ps);
  expect_pass(r);
}

TEST(GradCheck, RejectsNondeterministicSubject) {
  ParamSet ps = one_param("x", Tensor({4}, 1.0));
  Rng rng(14);
  EXPECT_THROW(grad_check([&](Graph& g, const ParamSet& p) { return sum(dropout(g.param(p, "x"), 0.5, Mode::Train, rng)); }, ps),
               std::invalid_argument);
}

TEST(GradCheck, RelativeErrorDefinition) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1.0, 3.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-9 / 1e-8);
}

TEST(Optimizer, ZeroGradientIsNoOp) {
  Rng rng(15);
  ParamSet ps = one_param("p", random_tensor({5}, rng));
  const Tensor before = ps.value("p");
  optimizer_step(ps, zero_grads(ps), SgdSpec{0.1, 0.9, 0.0});
  EXPECT_EQ(ps.value("p"), before);
}

TEST(Optimizer, SgdDefinitional) {
  ParamSet ps = one_param("p", Tensor({1}, 1.0));
  GradMap g{{"p", Tensor({1}, 0.5)}};
  optimizer_step(ps, g, SgdSpec{0.1, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(ps.value("p")[0], 0.95);
}

TEST(Optimizer, SgdMomentumAndDecay) {
  ParamSet ps = one_param("p", Tensor({1}, 1.0));
  GradMap g{{"p", Tensor({1}, 0.5)}};
  const SgdSpec s{0.1, 0.9, 0.01};
  optimizer_step(ps, g, s);
  // v1 = 0.5 + 0.01, p1 = 1 - 0.051
  EXPECT_DOUBLE_EQ(ps.value("p")[0], 1.0 - 0.1 * 0.51);
  optimizer_step(ps, g, s);
  const double v2 = 0.9 * 0.51 + 0.5 + 0.01 * (1.0 - 0.051);
  EXPECT_NEAR(ps.value("p")[0], 1.0 - 0.051 - 0.1 * v2, 1e-15);
}

TEST(Optimizer, AdamFirstStepMagnitudeIsLr) {
  for (double gval : {1e-3, 0.7, -25.0}) {
    ParamSet ps = one_param("p", Tensor({1}, 0.3));
    GradMap g{{"p", Tensor({1}, gval)}};
    optimizer_step(ps, g, AdamSpec{1e-3});
    const double step = std::abs(ps.value("p")[0] - 0.3);
    EXPECT_NEAR(step, 1e-3, 1e-5) << gval;
    EXPECT_EQ(ps.slot("p").adam_step, 1u);
  }
}

TEST(Optimizer, ZeroLrIsIdentity) {
  Rng rng(16);
  ParamSet ps = one_param("p", random_tensor({8}, rng));
  const Tensor before = ps.value("p");
  GradMap g{{"p", random_tensor({8}, rng)}};
  optimizer_step(ps, g, SgdSpec{0.0, 0.9, 0.0002});
  EXPECT_EQ(ps.value("p"), before);
  optimizer_step(ps, g, AdamSpec{0.0});
  EXPECT_EQ(ps.value("p"), before);
}

TEST(Optimizer, MissingGradientRejected) {
  ParamSet ps = one_param("p", Tensor({1}, 1.0));
  EXPECT_THROW(optimizer_step(ps, GradMap{}, SgdSpec{}), std::invalid_argument);
}

TEST(ParamSetOrder, SortedByPath) {
  ParamSet ps;
  ps.add("z.w", Tensor({1}));
  ps.add("a.w", Tensor({1}));
  ps.add("m.b", Tensor({1}));
  EXPECT_EQ(ps.names(), (std::vector<std::string>{"a.w", "m.b", "z.w"}));
  EXPECT_THROW(ps.add("a.w", Tensor({1})), std::invalid_argument);
}

TEST(Determinism, ForwardIsBitIdentical) {
  Rng init(17);
  const Model m = build_network(NetConfig::desk(32), init);
  Rng rng(18);
  const Tensor img = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  Rng d1(19), d2(19);
  Graph g1, g2;
  const auto a = forward_graph(g1, m, img, Mode::Train, d1);
  const auto b = forward_graph(g2, m, img, Mode::Train, d2);
  EXPECT_EQ(a.delta_ev_norm.value(), b.delta_ev_norm.value());
  EXPECT_EQ(g1.backward(a.delta_ev_norm), g2.backward(b.delta_ev_norm));
}

TEST(Finiteness, OpsOnFiniteInputsStayFinite) {
  Rng rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    Var x = g.input(random_tensor({2, 6, 6}, rng, -40, 40));
    Var w = g.input(random_tensor({2, 2, 3, 3}, rng, -40, 40));
    Var b = g.input(random_tensor({2}, rng));
    Var y = activation(conv2d(x, w, b, 1, 1), Activation::Sigmoid);
    Var z = global_avg_pool(maxpool2d(elementwise_mul(y, activation(x, Activation::Tanh)), 2, 2));
    EXPECT_TRUE(z.value().all_finite());
  }
}
