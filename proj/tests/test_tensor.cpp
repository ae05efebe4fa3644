// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "stpp/autodiff.hpp"
#include "stpp/tensor.hpp"
#include "test_util.hpp"

using stpp::Graph;
using stpp::NodeId;
using stpp::Padding;
using stpp::Rng;
using stpp::Tensor;
namespace st = stpp::testing;

namespace {

// Library-free exponential via a Horner-evaluated Taylor series; reference
// for the tanh table below.
double exp_series(double x) {
  double acc = 1.0;
  for (int k = 40; k >= 1; --k) acc = 1.0 + acc * x / k;
  return acc;
}

double tanh_ref(double x) {
  double e = exp_series(2.0 * x);
  return (e - 1.0) / (e + 1.0);
}

}  // namespace

TEST(Elementwise, AddSubMul) {
  Graph g;
  NodeId a = g.leaf(Tensor({2}, {1, 2}));
  NodeId b = g.leaf(Tensor({2}, {3, 4}));
  EXPECT_EQ(g.value(g.add(a, b)).vec(), (std::vector<double>{4, 6}));
  EXPECT_EQ(g.value(g.sub(a, b)).vec(), (std::vector<double>{-2, -2}));
  EXPECT_EQ(g.value(g.mul(a, b)).vec(), (std::vector<double>{3, 8}));
}

TEST(Elementwise, ShapeMismatchRejected) {
  Graph g;
  NodeId a = g.leaf(Tensor({2}, {1, 2}));
  NodeId b = g.leaf(Tensor({3}, {1, 2, 3}));
  EXPECT_THROW(g.add(a, b), std::invalid_argument);
}

TEST(Elementwise, SigmoidAtZeroIsHalf) {
  Graph g;
  NodeId x = g.leaf(Tensor({1}, {0.0}));
  EXPECT_DOUBLE_EQ(g.value(g.sigmoid(x))[0], 0.5);
}

TEST(Elementwise, TanhMatchesSeriesTable) {
  // 8-digit values frozen from the Horner series evaluation.
  EXPECT_NEAR(tanh_ref(1.0), 0.76159416, 5e-9);
  EXPECT_NEAR(tanh_ref(-1.0), -0.76159416, 5e-9);
  Graph g;
  for (double x : {-1.0, 0.0, 1.0}) {
    NodeId n = g.tanh_(g.leaf(Tensor({1}, {x})));
    EXPECT_NEAR(g.value(n)[0], tanh_ref(x), 1e-12) << "x=" << x;
  }
}

TEST(Matmul, IdentityAndDot) {
  Graph g;
  NodeId eye = g.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
  NodeId m = g.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(g.value(g.matmul(eye, m)).vec(), (std::vector<double>{1, 2, 3, 4}));
  NodeId r = g.leaf(Tensor({1, 2}, {1, 2}));
  NodeId c = g.leaf(Tensor({2, 1}, {3, 4}));
  EXPECT_EQ(g.value(g.matmul(r, c)).vec(), (std::vector<double>{11}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(7);
  Tensor a = st::random_tensor({3, 4}, rng);
  Tensor b = st::random_tensor({4, 2}, rng);
  Graph g;
  const Tensor& got = g.value(g.matmul(g.leaf(a), g.leaf(b)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at2(i, k) * b.at2(k, j);
      EXPECT_NEAR(got.at2(i, j), acc, 1e-14);
    }
}

TEST(Matmul, InnerDimensionMismatchRejected) {
  Graph g;
  NodeId a = g.leaf(Tensor({2, 3}));
  NodeId b = g.leaf(Tensor({2, 2}));
  EXPECT_THROW(g.matmul(a, b), std::invalid_argument);
}

TEST(Conv2d, OneByOneIdentityKernel) {
  Rng rng(3);
  Tensor in = st::random_tensor({1, 4, 4}, rng);
  Graph g;
  NodeId out = g.conv2d(g.leaf(in), g.leaf(Tensor({1, 1, 1, 1}, {1.0})),
                        g.leaf(Tensor({1}, {0.0})), Padding::kSame);
  EXPECT_EQ(g.value(out).vec(), in.vec());
}

TEST(Conv2d, AllOnesKernelCountsSupport) {
  Graph g;
  Tensor in = Tensor::full({1, 4, 4}, 1.0);
  Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
  NodeId out = g.conv2d(g.leaf(in), g.leaf(k), g.leaf(Tensor({1}, {0.0})),
                        Padding::kSame);
  const Tensor& o = g.value(out);
  EXPECT_DOUBLE_EQ(o.at3(0, 0, 0), 4.0);  // corner
  EXPECT_DOUBLE_EQ(o.at3(0, 0, 1), 6.0);  // edge
  EXPECT_DOUBLE_EQ(o.at3(0, 1, 1), 9.0);  // interior
  EXPECT_DOUBLE_EQ(o.at3(0, 3, 3), 4.0);
  EXPECT_DOUBLE_EQ(o.at3(0, 3, 2), 6.0);
}

TEST(Conv2d, ZeroKernelGivesConstantBias) {
  Rng rng(11);
  Graph g;
  NodeId out = g.conv2d(g.leaf(st::random_tensor({2, 3, 3}, rng)),
                        g.leaf(Tensor({1, 2, 3, 3})), g.leaf(Tensor({1}, {2.5})),
                        Padding::kSame);
  for (std::size_t i = 0; i < g.value(out).size(); ++i)
    EXPECT_DOUBLE_EQ(g.value(out)[i], 2.5);
}

TEST(Conv2d, ChannelMismatchRejected) {
  Graph g;
  NodeId in = g.leaf(Tensor({2, 4, 4}));
  NodeId k = g.leaf(Tensor({1, 3, 3, 3}));
  NodeId b = g.leaf(Tensor({1}));
  EXPECT_THROW(g.conv2d(in, k, b, Padding::kSame), std::invalid_argument);
}

TEST(Conv2d, ValidModeShrinksOutput) {
  Graph g;
  NodeId out = g.conv2d(g.leaf(Tensor::full({1, 5, 6}, 1.0)),
                        g.leaf(Tensor::full({2, 1, 3, 3}, 1.0)),
                        g.leaf(Tensor({2})), Padding::kValid);
  EXPECT_EQ(g.value(out).shape(), (std::vector<std::size_t>{2, 3, 4}));
  EXPECT_DOUBLE_EQ(g.value(out).at3(0, 0, 0), 9.0);
}

TEST(Backward, SquareGradient) {
  Graph g;
  NodeId x = g.leaf(Tensor({1}, {3.0}));
  NodeId root = g.sum(g.mul(x, x));
  g.backward(root);
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 6.0);
}

TEST(Backward, NonScalarRootRejected) {
  Graph g;
  NodeId x = g.leaf(Tensor({2}, {1, 2}));
  NodeId y = g.mul(x, x);
  EXPECT_THROW(g.backward(y), std::invalid_argument);
}

TEST(Backward, UnreachableLeafHasZeroGradient) {
  Graph g;
  NodeId x = g.leaf(Tensor({2}, {1, 2}));
  NodeId unused = g.leaf(Tensor({3}, {5, 6, 7}));
  g.backward(g.sum(g.mul(x, x)));
  for (double v : g.grad(unused)) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Backward, RecordIsSingleUse) {
  Graph g;
  NodeId x = g.leaf(Tensor({1}, {2.0}));
  NodeId root = g.sum(x);
  g.backward(root);
  EXPECT_THROW(g.backward(root), std::logic_error);
  EXPECT_THROW(g.sum(x), std::logic_error);
  g.reset();
  EXPECT_EQ(g.node_count(), 0u);
}

TEST(Backward, CompositeGraphPassesFiniteDifferences) {
  Rng rng(21);
  auto fn = [](Graph& g, const std::vector<NodeId>& in) {
    NodeId h = g.tanh_(g.add(g.mul(in[0], in[1]), in[2]));
    NodeId s = g.sigmoid(g.sub(h, in[0]));
    return g.sum(g.mul(s, h));
  };
  std::vector<Tensor> inputs = {st::random_tensor({3, 3}, rng),
                                st::random_tensor({3, 3}, rng),
                                st::random_tensor({3, 3}, rng)};
  auto rep = st::check_gradients(fn, inputs);
  EXPECT_LT(rep.max_error, 1e-4) << "analytic " << rep.worst_analytic << " vs fd "
                                 << rep.worst_numeric;
}

TEST(Backward, EveryOpPassesFiniteDifferences) {
  Rng rng(42);
  struct Case {
    const char* name;
    st::ScalarFn fn;
    std::vector<Tensor> inputs;
  };
  std::vector<Case> cases;
  cases.push_back({"add", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.add(in[0], in[1]));
                   },
                   {st::random_tensor({4}, rng), st::random_tensor({4}, rng)}});
  cases.push_back({"sub", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.mul(g.sub(in[0], in[1]), in[0]));
                   },
                   {st::random_tensor({4}, rng), st::random_tensor({4}, rng)}});
  cases.push_back({"mul", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.mul(in[0], in[1]));
                   },
                   {st::random_tensor({5}, rng), st::random_tensor({5}, rng)}});
  cases.push_back({"sigmoid", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.sigmoid(in[0]));
                   },
                   {st::random_tensor({6}, rng, -2, 2)}});
  cases.push_back({"tanh", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.tanh_(in[0]));
                   },
                   {st::random_tensor({6}, rng, -2, 2)}});
  cases.push_back({"softplus", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.softplus(in[0]));
                   },
                   {st::random_tensor({6}, rng, -3, 3)}});
  cases.push_back({"elu_plus_one", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.elu_plus_one(in[0]));
                   },
                   {st::random_tensor({6}, rng, -3, 3)}});
  cases.push_back({"biased_relu", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.biased_relu(in[0], 1e-3));
                   },
                   // keep entries away from the kink at 0
                   {st::random_tensor({6}, rng, 0.2, 2.0)}});
  cases.push_back({"log", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.log_(in[0]));
                   },
                   {st::random_tensor({6}, rng, 0.5, 3.0)}});
  cases.push_back({"scale", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.scale(in[0], -1.7));
                   },
                   {st::random_tensor({6}, rng)}});
  cases.push_back({"matmul", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.matmul(in[0], in[1]));
                   },
                   {st::random_tensor({3, 4}, rng), st::random_tensor({4, 2}, rng)}});
  cases.push_back({"bias_add_rows", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.tanh_(g.bias_add_rows(in[0], in[1])));
                   },
                   {st::random_tensor({3, 4}, rng), st::random_tensor({4}, rng)}});
  cases.push_back({"conv2d_same", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.conv2d(in[0], in[1], in[2], Padding::kSame));
                   },
                   {st::random_tensor({2, 4, 4}, rng), st::random_tensor({3, 2, 3, 3}, rng),
                    st::random_tensor({3}, rng)}});
  cases.push_back({"conv2d_valid", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.conv2d(in[0], in[1], in[2], Padding::kValid));
                   },
                   {st::random_tensor({2, 5, 5}, rng), st::random_tensor({2, 2, 3, 3}, rng),
                    st::random_tensor({2}, rng)}});
  cases.push_back({"concat_channels", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.tanh_(g.concat_channels(in[0], in[1])));
                   },
                   {st::random_tensor({2, 3, 3}, rng), st::random_tensor({1, 3, 3}, rng)}});
  cases.push_back({"rows_from_channels", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.mul(g.rows_from_channels(in[0]),
                                        g.rows_from_channels(in[0])));
                   },
                   {st::random_tensor({2, 3, 4}, rng)}});
  cases.push_back({"channels_from_rows", [](Graph& g, const std::vector<NodeId>& in) {
                     NodeId rows = g.rows_from_channels(in[0]);
                     return g.sum(g.tanh_(g.channels_from_rows(rows, 3, 4)));
                   },
                   {st::random_tensor({2, 3, 4}, rng)}});
  cases.push_back({"append_const_col", [](Graph& g, const std::vector<NodeId>& in) {
                     return g.sum(g.tanh_(g.append_const_col(in[0], 0.7)));
                   },
                   {st::random_tensor({3, 2}, rng)}});
  for (auto& c : cases) {
    auto rep = st::check_gradients(c.fn, c.inputs);
    EXPECT_LT(rep.max_error, 1e-4) << c.name;
  }
}

TEST(Backward, LinearityOfGradients) {
  Rng rng(5);
  Tensor x = st::random_tensor({4}, rng);
  const double alpha = 1.3, beta = -0.4;
  auto grad_of = [&](auto builder) {
    Graph g;
    NodeId xi = g.leaf(x);
    g.backward(builder(g, xi));
    return g.grad(xi);
  };
  auto f = [](Graph& g, NodeId xi) { return g.sum(g.sigmoid(xi)); };
  auto h = [](Graph& g, NodeId xi) { return g.sum(g.mul(xi, xi)); };
  auto combined = [&](Graph& g, NodeId xi) {
    return g.add(g.scale(f(g, xi), alpha), g.scale(h(g, xi), beta));
  };
  auto gf = grad_of(f), gh = grad_of(h), gc = grad_of(combined);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(gc[i], alpha * gf[i] + beta * gh[i], 1e-12);
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Graph g;
    NodeId a = g.leaf(st::random_tensor({2, 5, 5}, rng));
    NodeId k = g.leaf(st::random_tensor({3, 2, 3, 3}, rng));
    NodeId b = g.leaf(st::random_tensor({3}, rng));
    NodeId root = g.sum(g.tanh_(g.conv2d(a, k, b, Padding::kSame)));
    g.backward(root);
    std::pair<std::vector<double>, std::vector<double>> out{g.value(root).vec(),
                                                            g.grad(k)};
    return out;
  };
  auto r1 = run(99), r2 = run(99);
  EXPECT_EQ(r1.first, r2.first);
  EXPECT_EQ(r1.second, r2.second);
}

TEST(Graph, ReplayReproducesForwardBitExactly) {
  Rng rng(13);
  Graph g;
  NodeId a = g.leaf(st::random_tensor({2, 4, 4}, rng));
  NodeId k = g.leaf(st::random_tensor({2, 2, 3, 3}, rng));
  NodeId b = g.leaf(st::random_tensor({2}, rng));
  NodeId conv = g.conv2d(a, k, b, Padding::kSame);
  NodeId rows = g.rows_from_channels(g.tanh_(conv));
  g.sum(g.mul(rows, rows));
  EXPECT_TRUE(g.replay_matches());
}

TEST(Graph, NonFiniteResultRaisesNumericError) {
  Graph g;
  NodeId x = g.leaf(Tensor({1}, {-1.0}));
  EXPECT_THROW(g.log_(x), stpp::NumericError);
}

TEST(TensorSerialization, RoundTripIsExact) {
  Rng rng(31);
  Tensor t = st::random_tensor({3, 2, 5}, rng, -100, 100);
  std::stringstream ss;
  t.write(ss);
  Tensor u = Tensor::read(ss);
  EXPECT_EQ(u.shape(), t.shape());
  EXPECT_EQ(u.vec(), t.vec());
}

TEST(TensorSerialization, LayoutIsLittleEndianWithU32Header) {
  Tensor t({1, 2}, {1.0, -2.0});
  std::stringstream ss;
  t.write(ss);
  std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 2 * 4u + 2 * 8u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 2);  // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // extent 0
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);  // extent 1
  // 1.0 in IEEE-754 little-endian: 00 00 00 00 00 00 f0 3f
  EXPECT_EQ(static_cast<unsigned char>(bytes[12 + 6]), 0xf0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12 + 7]), 0x3f);
}

TEST(Tensor, InvariantViolationsRejected) {
  EXPECT_THROW(Tensor({2, 3}, {1, 2}), std::invalid_argument);
  EXPECT_THROW(Tensor({0, 3}), std::invalid_argument);
}
