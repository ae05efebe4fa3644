// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "stpp/nn.hpp"
#include "test_util.hpp"

using namespace stpp;
namespace st = stpp::testing;

TEST(Activation, SoftplusAtZeroIsLogTwo) {
  Tensor out = activation_eval(Activation::kSoftplus, Tensor({1}, {0.0}));
  EXPECT_NEAR(out[0], std::log(2.0), 1e-15);
}

TEST(Activation, EluPlusOneAtZeroIsOne) {
  Tensor out = activation_eval(Activation::kEluPlusOne, Tensor({1}, {0.0}));
  EXPECT_DOUBLE_EQ(out[0], 1.0);
}

TEST(Activation, SoftplusIsAsymptoticallyLinear) {
  Tensor out = activation_eval(Activation::kSoftplus, Tensor({1}, {40.0}));
  EXPECT_NEAR(out[0], 40.0, 1e-12);
}

TEST(Activation, PositivityOverWideRange) {
  Rng rng(17);
  for (int i = 0; i < 2000; ++i) {
    double x = rng.uniform(-100.0, 100.0);
    Tensor t({1}, {x});
    EXPECT_GT(activation_eval(Activation::kSoftplus, t)[0], 0.0);
    EXPECT_GT(activation_eval(Activation::kEluPlusOne, t)[0], 0.0);
    EXPECT_GE(activation_eval(Activation::kBiasedRelu, t, 1e-3)[0], 1e-3);
  }
}

TEST(Activation, NamesRoundTrip) {
  for (Activation a : {Activation::kSigmoid, Activation::kBiasedRelu,
                       Activation::kEluPlusOne, Activation::kSoftplus})
    EXPECT_EQ(activation_from_name(activation_name(a)), a);
  EXPECT_THROW(activation_from_name("relu6"), ConfigError);
}

TEST(ConvLstm, ZeroNetworkGivesZeroMaps) {
  ConvLstmCell cell(3, 2, 3);  // all parameters start at zero
  Graph g;
  Binding bind(g);
  auto s0 = cell.initial_state(g, 5, 5);
  Rng rng(1);
  NodeId x = g.constant(st::random_tensor({2, 5, 5}, rng));
  auto s1 = cell.step(g, bind, s0, x);
  for (double v : g.value(s1.h).vec()) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : g.value(s1.c).vec()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(ConvLstm, SaturatedForgetGatePreservesCellState) {
  ConvLstmCell cell(2, 1, 3);
  std::fill(cell.bias[ConvLstmCell::kForget].vec().begin(),
            cell.bias[ConvLstmCell::kForget].vec().end(), 50.0);
  Graph g;
  Binding bind(g);
  Rng rng(2);
  Tensor c_prev = st::random_tensor({2, 4, 4}, rng);
  ConvLstmCell::State s0;
  s0.h = g.constant(Tensor({2, 4, 4}));
  s0.c = g.constant(c_prev);
  NodeId x = g.constant(st::random_tensor({1, 4, 4}, rng));
  auto s1 = cell.step(g, bind, s0, x);
  const Tensor& c1 = g.value(s1.c);
  for (std::size_t i = 0; i < c1.size(); ++i) EXPECT_NEAR(c1[i], c_prev[i], 1e-10);
}

TEST(ConvLstm, GradientsPassFiniteDifferences) {
  Rng rng(3);
  ConvLstmCell cell(2, 1, 3);
  cell.init(rng);
  Tensor x = st::random_tensor({1, 3, 3}, rng, -0.5, 0.5);
  Tensor h0 = st::random_tensor({2, 3, 3}, rng, -0.5, 0.5);
  Tensor c0 = st::random_tensor({2, 3, 3}, rng, -0.5, 0.5);

  auto objective = [&] {
    Graph g;
    Binding bind(g);
    ConvLstmCell::State s0{g.constant(h0), g.constant(c0)};
    auto s1 = cell.step(g, bind, s0, g.constant(x));
    return g.value(g.sum(s1.h))[0];
  };

  Graph g;
  Binding bind(g);
  ConvLstmCell::State s0{g.constant(h0), g.constant(c0)};
  auto s1 = cell.step(g, bind, s0, g.constant(x));
  g.backward(g.sum(s1.h));

  std::vector<NamedParam> params;
  cell.collect("cell", params);
  const double eps = 1e-5;
  double max_err = 0.0;
  for (auto& p : params) {
    std::vector<double> analytic = bind.grad_of(*p.tensor);
    for (std::size_t i = 0; i < p.tensor->size(); ++i) {
      double saved = (*p.tensor)[i];
      (*p.tensor)[i] = saved + eps;
      double fp = objective();
      (*p.tensor)[i] = saved - eps;
      double fm = objective();
      (*p.tensor)[i] = saved;
      double numeric = (fp - fm) / (2 * eps);
      double a = analytic[i];
      double err = (std::abs(a) < 1e-6 && std::abs(numeric) < 1e-6)
                       ? std::abs(a - numeric)
                       : std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  EXPECT_LT(max_err, 1e-4);
}

TEST(ConvLstm, ConstantInputsGiveConstantMaps) {
  // 1x1 kernels keep the step free of border effects, so a spatially
  // constant input and state must produce spatially constant outputs.
  Rng rng(4);
  ConvLstmCell cell(2, 1, 1);
  cell.init(rng);
  Graph g;
  Binding bind(g);
  auto s0 = cell.initial_state(g, 6, 6);
  NodeId x = g.constant(Tensor::full({1, 6, 6}, 0.7));
  auto s1 = cell.step(g, bind, s0, x);
  const Tensor& h = g.value(s1.h);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 36; ++i)
      EXPECT_DOUBLE_EQ(h[c * 36 + i], h[c * 36]);
}

TEST(ConvLstm, DeterministicStep) {
  auto run = [] {
    Rng rng(9);
    ConvLstmCell cell(2, 2, 3);
    cell.init(rng);
    Graph g;
    Binding bind(g);
    auto s0 = cell.initial_state(g, 4, 4);
    NodeId x = g.constant(st::random_tensor({2, 4, 4}, rng));
    return g.value(cell.step(g, bind, s0, x).h).vec();
  };
  EXPECT_EQ(run(), run());
}

TEST(Mlp, ZeroWeightsGiveConstantBias) {
  Mlp m({3, 4, 2});
  m.biases.back()[0] = 1.5;
  m.biases.back()[1] = -2.0;
  Tensor out = m.forward(Tensor({3}, {5, 6, 7}));
  EXPECT_DOUBLE_EQ(out[0], 1.5);
  EXPECT_DOUBLE_EQ(out[1], -2.0);
}

TEST(Mlp, SingleLayerIdentity) {
  Mlp m({3, 3});
  for (std::size_t i = 0; i < 3; ++i) m.weights[0].at2(i, i) = 1.0;
  Tensor x({3}, {0.3, -1.2, 4.0});
  EXPECT_EQ(m.forward(x).vec(), x.vec());
}

TEST(Mlp, MatchesExplicitLoopOracle) {
  Rng rng(12);
  Mlp m({3, 5, 4, 2});
  m.init(rng);
  Tensor x = st::random_tensor({3}, rng);
  Tensor got = m.forward(x);

  std::vector<double> cur(x.vec());
  for (std::size_t layer = 0; layer < m.weights.size(); ++layer) {
    std::size_t in_w = m.weights[layer].extent(0), out_w = m.weights[layer].extent(1);
    std::vector<double> next(out_w, 0.0);
    for (std::size_t o = 0; o < out_w; ++o) {
      double acc = m.biases[layer][o];
      for (std::size_t i = 0; i < in_w; ++i) acc += cur[i] * m.weights[layer].at2(i, o);
      next[o] = layer + 1 < m.weights.size() ? std::tanh(acc) : acc;
    }
    cur = next;
  }
  ASSERT_EQ(got.size(), cur.size());
  for (std::size_t i = 0; i < cur.size(); ++i) EXPECT_NEAR(got[i], cur[i], 1e-12);
}

TEST(Mlp, InputWidthMismatchRejected) {
  Mlp m({3, 2});
  EXPECT_THROW(m.forward(Tensor({4}, {1, 2, 3, 4})), std::invalid_argument);
}

TEST(Checkpoint, RoundTripRestoresParameters) {
  Rng rng(8);
  ConvStack stack(2, 3, 3, 3);
  stack.init(rng);
  Mlp mlp({4, 3});
  mlp.init(rng);
  std::vector<NamedParam> params;
  stack.collect("psi", params);
  mlp.collect("mlp", params);

  std::stringstream ss;
  save_checkpoint(ss, params, {{"note", "test"}});

  ConvStack stack2(2, 3, 3, 3);
  Mlp mlp2({4, 3});
  std::vector<NamedParam> params2;
  stack2.collect("psi", params2);
  mlp2.collect("mlp", params2);
  nlohmann::json extra = load_checkpoint(ss, params2);
  EXPECT_EQ(extra.at("note"), "test");
  for (std::size_t i = 0; i < params.size(); ++i)
    EXPECT_EQ(params2[i].tensor->vec(), params[i].tensor->vec()) << params[i].name;
}

TEST(Checkpoint, NameMismatchRejected) {
  Mlp a({2, 2});
  std::vector<NamedParam> pa;
  a.collect("x", pa);
  std::stringstream ss;
  save_checkpoint(ss, pa);
  Mlp b({2, 2});
  std::vector<NamedParam> pb;
  b.collect("y", pb);
  EXPECT_THROW(load_checkpoint(ss, pb), DataError);
}

TEST(Binding, UnusedParameterGetsZeroGradient) {
  Graph g;
  Binding bind(g);
  Tensor used({2}, {1.0, 2.0});
  Tensor unused({3}, {1, 1, 1});
  NodeId u = bind.param(used);
  g.backward(g.sum(g.mul(u, u)));
  auto gz = bind.grad_of(unused);
  EXPECT_EQ(gz, std::vector<double>(3, 0.0));
  auto gu = bind.grad_of(used);
  EXPECT_DOUBLE_EQ(gu[0], 2.0);
  EXPECT_DOUBLE_EQ(gu[1], 4.0);
}
