// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "stpp/autodiff.hpp"
#include "stpp/tensor.hpp"

namespace stpp {

/// Head nonlinearities for the intensity map. Softplus and elu-plus-one are
/// strictly positive; biased-relu is bounded below by its epsilon.
enum class Activation : std::uint8_t { kSigmoid, kBiasedRelu, kEluPlusOne, kSoftplus };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kBiasedRelu: return "biasedrelu";
    case Activation::kEluPlusOne: return "eluplusone";
    case Activation::kSoftplus: return "softplus";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "biasedrelu") return Activation::kBiasedRelu;
  if (s == "eluplusone") return Activation::kEluPlusOne;
  if (s == "softplus") return Activation::kSoftplus;
  throw ConfigError("unknown activation: " + s);
}

inline NodeId apply_activation(Graph& g, Activation a, NodeId x, double eps = 1e-3) {
  switch (a) {
    case Activation::kSigmoid: return g.sigmoid(x);
    case Activation::kBiasedRelu: return g.biased_relu(x, eps);
    case Activation::kEluPlusOne: return g.elu_plus_one(x);
    case Activation::kSoftplus: return g.softplus(x);
  }
  throw std::logic_error("apply_activation: unhandled kind");
}

/// Value-side evaluation through a throwaway graph so both paths share one
/// definition.
inline Tensor activation_eval(Activation a, const Tensor& x, double eps = 1e-3) {
  Graph g;
  return g.value(apply_activation(g, a, g.constant(x), eps));
}

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

/// Maps parameter tensors to their leaf ids within one graph, creating the
/// leaf on first use. One binding per graph per forward pass.
class Binding {
 public:
  explicit Binding(Graph& g) : g_(&g) {}

  NodeId param(Tensor& t) {
    auto it = ids_.find(&t);
    if (it != ids_.end()) return it->second;
    NodeId id = g_->leaf(t, true);
    ids_.emplace(&t, id);
    return id;
  }

  /// Gradient of the bound leaf after backward; zeros if the parameter was
  /// never used in this graph.
  std::vector<double> grad_of(Tensor& t) const {
    auto it = ids_.find(&t);
    if (it == ids_.end()) return std::vector<double>(t.size(), 0.0);
    return g_->grad(it->second);
  }

 private:
  Graph* g_;
  std::unordered_map<Tensor*, NodeId> ids_;
};

struct Conv2dLayer {
  Tensor kernel;  // [out_ch, in_ch, kh, kw]
  Tensor bias;    // [out_ch]
  Padding padding = Padding::kSame;

  Conv2dLayer() = default;
  Conv2dLayer(std::size_t out_ch, std::size_t in_ch, std::size_t k,
              Padding pad = Padding::kSame)
      : kernel({out_ch, in_ch, k, k}), bias({out_ch}), padding(pad) {}

  void init(Rng& rng) {
    double fan_in = static_cast<double>(kernel.extent(1) * kernel.extent(2) *
                                        kernel.extent(3));
    fill_uniform(kernel, rng, 1.0 / std::sqrt(fan_in));
    std::fill(bias.vec().begin(), bias.vec().end(), 0.0);
  }

  NodeId forward(Graph& g, Binding& bind, NodeId x) {
    return g.conv2d(x, bind.param(kernel), bind.param(bias), padding);
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".kernel", &kernel});
    out.push_back({prefix + ".bias", &bias});
  }
};

/// Two-layer feature extractor (conv, tanh, conv) used for both input
/// streams.
struct ConvStack {
  Conv2dLayer first;
  Conv2dLayer second;

  ConvStack() = default;
  ConvStack(std::size_t in_ch, std::size_t mid_ch, std::size_t out_ch, std::size_t k)
      : first(mid_ch, in_ch, k), second(out_ch, mid_ch, k) {}

  void init(Rng& rng) {
    first.init(rng);
    second.init(rng);
  }

  NodeId forward(Graph& g, Binding& bind, NodeId x) {
    return second.forward(g, bind, g.tanh_(first.forward(g, bind, x)));
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    first.collect(prefix + ".conv1", out);
    second.collect(prefix + ".conv2", out);
  }
};

/// Convolutional LSTM cell: gates computed by same-padded convolutions over
/// both the input and the previous hidden map. Gate order is input, forget,
/// candidate, output. The forget-gate bias starts at +1 so early training
/// does not wash out the cell state.
struct ConvLstmCell {
  static constexpr std::size_t kInput = 0, kForget = 1, kCandidate = 2, kOutput = 3;

  std::array<Tensor, 4> w_in;     // [hidden, in_ch, k, k]
  std::array<Tensor, 4> w_state;  // [hidden, hidden, k, k]
  std::array<Tensor, 4> bias;     // [hidden]
  std::size_t hidden_channels = 0;

  ConvLstmCell() = default;
  ConvLstmCell(std::size_t hidden, std::size_t in_ch, std::size_t k)
      : hidden_channels(hidden) {
    for (std::size_t i = 0; i < 4; ++i) {
      w_in[i] = Tensor({hidden, in_ch, k, k});
      w_state[i] = Tensor({hidden, hidden, k, k});
      bias[i] = Tensor({hidden});
    }
  }

  void init(Rng& rng) {
    for (std::size_t i = 0; i < 4; ++i) {
      double fi = static_cast<double>(w_in[i].extent(1) * w_in[i].extent(2) *
                                      w_in[i].extent(3));
      double fs = static_cast<double>(w_state[i].extent(1) * w_state[i].extent(2) *
                                      w_state[i].extent(3));
      fill_uniform(w_in[i], rng, 1.0 / std::sqrt(fi));
      fill_uniform(w_state[i], rng, 1.0 / std::sqrt(fs));
      std::fill(bias[i].vec().begin(), bias[i].vec().end(),
                i == kForget ? 1.0 : 0.0);
    }
  }

  struct State {
    NodeId h = -1;
    NodeId c = -1;
  };

  /// Zero maps for the cold start of a sequence.
  State initial_state(Graph& g, std::size_t h, std::size_t w) const {
    State s;
    s.h = g.constant(Tensor({hidden_channels, h, w}));
    s.c = g.constant(Tensor({hidden_channels, h, w}));
    return s;
  }

  State step(Graph& g, Binding& bind, State prev, NodeId x) {
    NodeId zero_bias = g.constant(Tensor({hidden_channels}));
    auto gate_pre = [&](std::size_t k) {
      NodeId from_x = g.conv2d(x, bind.param(w_in[k]), bind.param(bias[k]),
                               Padding::kSame);
      NodeId from_h = g.conv2d(prev.h, bind.param(w_state[k]), zero_bias,
                               Padding::kSame);
      return g.add(from_x, from_h);
    };
    NodeId i = g.sigmoid(gate_pre(kInput));
    NodeId f = g.sigmoid(gate_pre(kForget));
    NodeId cand = g.tanh_(gate_pre(kCandidate));
    NodeId o = g.sigmoid(gate_pre(kOutput));
    State next;
    next.c = g.add(g.mul(f, prev.c), g.mul(i, cand));
    next.h = g.mul(o, g.tanh_(next.c));
    return next;
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    static const char* gate[4] = {"i", "f", "g", "o"};
    for (std::size_t k = 0; k < 4; ++k) {
      out.push_back({prefix + ".w_in." + gate[k], &w_in[k]});
      out.push_back({prefix + ".w_state." + gate[k], &w_state[k]});
      out.push_back({prefix + ".bias." + gate[k], &bias[k]});
    }
  }
};

/// Affine layers with tanh between them and a linear last layer.
struct Mlp {
  std::vector<Tensor> weights;  // [in, out] per layer
  std::vector<Tensor> biases;   // [out] per layer

  Mlp() = default;
  explicit Mlp(const std::vector<std::size_t>& widths) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least one layer");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      weights.emplace_back(std::vector<std::size_t>{widths[i], widths[i + 1]});
      biases.emplace_back(std::vector<std::size_t>{widths[i + 1]});
    }
  }

  std::size_t input_width() const { return weights.front().extent(0); }
  std::size_t output_width() const { return weights.back().extent(1); }

  void init(Rng& rng) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      fill_uniform(weights[i], rng, 1.0 / std::sqrt(static_cast<double>(
                                        weights[i].extent(0))));
      std::fill(biases[i].vec().begin(), biases[i].vec().end(), 0.0);
    }
  }

  /// [N, input_width] -> [N, output_width] on the graph.
  NodeId forward_rows(Graph& g, Binding& bind, NodeId rows) {
    NodeId cur = rows;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      cur = g.bias_add_rows(g.matmul(cur, bind.param(weights[i])),
                            bind.param(biases[i]));
      if (i + 1 < weights.size()) cur = g.tanh_(cur);
    }
    return cur;
  }

  /// Value-side evaluation of a single rank-1 input.
  Tensor forward(const Tensor& x) const {
    if (x.rank() != 1 || x.extent(0) != input_width())
      throw std::invalid_argument("Mlp: input width mismatch");
    Graph g;
    NodeId rows = g.constant(Tensor({1, x.extent(0)}, x.vec()));
    NodeId cur = rows;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      cur = g.bias_add_rows(g.matmul(cur, g.constant(weights[i])),
                            g.constant(biases[i]));
      if (i + 1 < weights.size()) cur = g.tanh_(cur);
    }
    return Tensor({output_width()}, g.value(cur).vec());
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      out.push_back({prefix + ".w" + std::to_string(i), &weights[i]});
      out.push_back({prefix + ".b" + std::to_string(i), &biases[i]});
    }
  }
};

// ---------------------------------------------------------------------------
// Checkpoints: a length-prefixed JSON manifest naming the parameters in
// order, followed by their tensor records.

inline void save_checkpoint(std::ostream& os, const std::vector<NamedParam>& params,
                            const nlohmann::json& extra = {}) {
  nlohmann::json manifest;
  manifest["format"] = "stppmot-checkpoint";
  manifest["version"] = 1;
  auto names = nlohmann::json::array();
  for (const auto& p : params) names.push_back(p.name);
  manifest["params"] = names;
  if (!extra.is_null()) manifest["extra"] = extra;
  std::string m = manifest.dump();
  detail::write_u32_le(os, static_cast<std::uint32_t>(m.size()));
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& p : params) p.tensor->write(os);
}

inline nlohmann::json load_checkpoint(std::istream& is,
                                      const std::vector<NamedParam>& params) {
  std::uint32_t len = detail::read_u32_le(is);
  std::string m(len, '\0');
  is.read(m.data(), static_cast<std::streamsize>(len));
  if (!is) throw DataError("checkpoint: truncated manifest");
  nlohmann::json manifest = nlohmann::json::parse(m, nullptr, false);
  if (manifest.is_discarded() || manifest.value("format", "") != "stppmot-checkpoint")
    throw DataError("checkpoint: bad manifest");
  const auto& names = manifest.at("params");
  if (names.size() != params.size())
    throw DataError("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (names[i].get<std::string>() != params[i].name)
      throw DataError("checkpoint: parameter name mismatch at index " +
                      std::to_string(i) + " (" + names[i].get<std::string>() +
                      " vs " + params[i].name + ")");
    Tensor t = Tensor::read(is);
    if (t.shape() != params[i].tensor->shape())
      throw DataError("checkpoint: shape mismatch for " + params[i].name);
    if (!t.all_finite())
      throw DataError("checkpoint: non-finite values in " + params[i].name);
    *params[i].tensor = std::move(t);
  }
  return manifest.contains("extra") ? manifest["extra"] : nlohmann::json();
}

}  // namespace stpp
