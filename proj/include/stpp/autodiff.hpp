// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "stpp/tensor.hpp"

namespace stpp {

using NodeId = std::int32_t;

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kSigmoid,
  kTanh,
  kSoftplus,
  kEluPlusOne,
  kBiasedRelu,
  kLog,
  kScale,
  kSum,
  kMatmul,
  kBiasAddRows,
  kConv2d,
  kConcatChannels,
  kRowsFromChannels,
  kChannelsFromRows,
  kAppendConstCol,
};

enum class Padding : std::uint8_t { kValid, kSame };

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kSoftplus: return "softplus";
    case Op::kEluPlusOne: return "elu_plus_one";
    case Op::kBiasedRelu: return "biased_relu";
    case Op::kLog: return "log";
    case Op::kScale: return "scale";
    case Op::kSum: return "sum";
    case Op::kMatmul: return "matmul";
    case Op::kBiasAddRows: return "bias_add_rows";
    case Op::kConv2d: return "conv2d";
    case Op::kConcatChannels: return "concat_channels";
    case Op::kRowsFromChannels: return "rows_from_channels";
    case Op::kChannelsFromRows: return "channels_from_rows";
    case Op::kAppendConstCol: return "append_const_col";
  }
  return "?";
}

/// Reverse-mode differentiation tape. Appending an operation records a node
/// holding the op kind, input ids and the computed output, so the whole
/// forward pass can be replayed bit-exactly and differentiated once.
///
/// The record is single-use: after backward() it refuses further appends
/// until reset(). Training loops rebuild the graph every step.
class Graph {
 public:
  struct Node {
    Op op = Op::kLeaf;
    std::array<NodeId, 3> in{-1, -1, -1};
    int n_in = 0;
    Tensor value;
    std::vector<double> grad;  // allocated during backward
    bool needs_grad = false;
    double scalar = 0.0;  // scale factor / appended value / biased-relu eps
    Padding pad = Padding::kValid;
    std::size_t h = 0, w = 0;  // channels_from_rows target extents
  };

  NodeId leaf(Tensor t, bool needs_grad = true) {
    check_open();
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(t);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId constant(Tensor t) { return leaf(std::move(t), false); }

  NodeId add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b); }

  NodeId sigmoid(NodeId a) { return unary(Op::kSigmoid, a); }
  NodeId tanh_(NodeId a) { return unary(Op::kTanh, a); }
  NodeId softplus(NodeId a) { return unary(Op::kSoftplus, a); }
  NodeId elu_plus_one(NodeId a) { return unary(Op::kEluPlusOne, a); }
  NodeId log_(NodeId a) { return unary(Op::kLog, a); }

  NodeId biased_relu(NodeId a, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("biased_relu: eps must be > 0");
    Node n = make(Op::kBiasedRelu, {a});
    n.scalar = eps;
    return commit(std::move(n));
  }

  NodeId scale(NodeId a, double factor) {
    Node n = make(Op::kScale, {a});
    n.scalar = factor;
    return commit(std::move(n));
  }

  NodeId sum(NodeId a) { return commit(make(Op::kSum, {a})); }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& ta = at(a).value;
    const Tensor& tb = at(b).value;
    if (ta.rank() != 2 || tb.rank() != 2)
      throw std::invalid_argument("matmul: both operands must be rank-2");
    if (ta.extent(1) != tb.extent(0))
      throw std::invalid_argument("matmul: inner dimensions disagree");
    return commit(make(Op::kMatmul, {a, b}));
  }

  /// [N,C] plus a length-C bias broadcast over rows. The only broadcast in
  /// the op set besides the conv bias.
  NodeId bias_add_rows(NodeId m, NodeId bias) {
    const Tensor& tm = at(m).value;
    const Tensor& tb = at(bias).value;
    if (tm.rank() != 2 || tb.rank() != 1 || tb.extent(0) != tm.extent(1))
      throw std::invalid_argument("bias_add_rows: need [N,C] and [C]");
    return commit(make(Op::kBiasAddRows, {m, bias}));
  }

  /// Cross-correlation (no kernel flip): input [C,H,W], kernel [F,C,kh,kw],
  /// bias [F]. Same-padding keeps H,W with a zero border and requires odd
  /// kernel extents.
  NodeId conv2d(NodeId input, NodeId kernel, NodeId bias, Padding pad) {
    const Tensor& ti = at(input).value;
    const Tensor& tk = at(kernel).value;
    const Tensor& tb = at(bias).value;
    if (ti.rank() != 3 || tk.rank() != 4)
      throw std::invalid_argument("conv2d: need input [C,H,W], kernel [F,C,kh,kw]");
    if (tk.extent(1) != ti.extent(0))
      throw std::invalid_argument("conv2d: kernel channels do not match input");
    if (tb.rank() != 1 || tb.extent(0) != tk.extent(0))
      throw std::invalid_argument("conv2d: bias length must equal filter count");
    if (pad == Padding::kSame && (tk.extent(2) % 2 == 0 || tk.extent(3) % 2 == 0))
      throw std::invalid_argument("conv2d: same-padding requires odd kernel extents");
    if (pad == Padding::kValid &&
        (tk.extent(2) > ti.extent(1) || tk.extent(3) > ti.extent(2)))
      throw std::invalid_argument("conv2d: kernel larger than input in valid mode");
    Node n = make(Op::kConv2d, {input, kernel, bias});
    n.pad = pad;
    return commit(std::move(n));
  }

  NodeId concat_channels(NodeId a, NodeId b) {
    const Tensor& ta = at(a).value;
    const Tensor& tb = at(b).value;
    if (ta.rank() != 3 || tb.rank() != 3 || ta.extent(1) != tb.extent(1) ||
        ta.extent(2) != tb.extent(2))
      throw std::invalid_argument("concat_channels: spatial extents disagree");
    return commit(make(Op::kConcatChannels, {a, b}));
  }

  /// [C,H,W] -> [H*W, C]; pixel-major rows so a per-pixel MLP is a matmul.
  NodeId rows_from_channels(NodeId a) {
    if (at(a).value.rank() != 3)
      throw std::invalid_argument("rows_from_channels: need rank-3 input");
    return commit(make(Op::kRowsFromChannels, {a}));
  }

  NodeId channels_from_rows(NodeId a, std::size_t h, std::size_t w) {
    const Tensor& ta = at(a).value;
    if (ta.rank() != 2 || ta.extent(0) != h * w)
      throw std::invalid_argument("channels_from_rows: rows must equal h*w");
    Node n = make(Op::kChannelsFromRows, {a});
    n.h = h;
    n.w = w;
    return commit(std::move(n));
  }

  NodeId append_const_col(NodeId a, double v) {
    if (at(a).value.rank() != 2)
      throw std::invalid_argument("append_const_col: need rank-2 input");
    Node n = make(Op::kAppendConstCol, {a});
    n.scalar = v;
    return commit(std::move(n));
  }

  const Tensor& value(NodeId id) const { return at(id).value; }

  const std::vector<double>& grad(NodeId id) const {
    const Node& n = at(id);
    if (!n.needs_grad) throw std::logic_error("grad: node does not track gradients");
    if (n.grad.empty()) throw std::logic_error("grad: backward has not run");
    return n.grad;
  }

  std::size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  /// Populates gradients of the scalar root on every grad-tracking node.
  /// Consumes the record.
  void backward(NodeId root) {
    const Node& r = at(root);
    if (r.value.size() != 1)
      throw std::invalid_argument("backward: root must be a scalar tensor");
    if (consumed_) throw std::logic_error("backward: record already consumed");
    consumed_ = true;
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad.assign(n.value.size(), 0.0);
    if (!nodes_[static_cast<std::size_t>(root)].needs_grad) return;
    nodes_[static_cast<std::size_t>(root)].grad[0] = 1.0;
    for (NodeId id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.needs_grad && n.op != Op::kLeaf) backprop(n);
    }
  }

  /// Recomputes every non-leaf node from its stored inputs and checks the
  /// results are bit-identical to the recorded values.
  bool replay_matches() const {
    for (const Node& n : nodes_) {
      if (n.op == Op::kLeaf) continue;
      Tensor recomputed = compute(n);
      if (recomputed.size() != n.value.size()) return false;
      if (std::memcmp(recomputed.data(), n.value.data(),
                      n.value.size() * sizeof(double)) != 0)
        return false;
    }
    return true;
  }

 private:
  Node& at(NodeId id) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw std::invalid_argument("graph: node id out of range");
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& at(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw std::invalid_argument("graph: node id out of range");
    return nodes_[static_cast<std::size_t>(id)];
  }

  void check_open() const {
    if (consumed_) throw std::logic_error("graph: record consumed; reset() before reuse");
  }

  Node make(Op op, std::initializer_list<NodeId> ins) {
    check_open();
    Node n;
    n.op = op;
    for (NodeId i : ins) {
      at(i);  // range check
      n.in[static_cast<std::size_t>(n.n_in++)] = i;
      if (nodes_[static_cast<std::size_t>(i)].needs_grad) n.needs_grad = true;
    }
    return n;
  }

  NodeId unary(Op op, NodeId a) { return commit(make(op, {a})); }

  NodeId binary(Op op, NodeId a, NodeId b) {
    if (!at(a).value.same_shape(at(b).value))
      throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch");
    return commit(make(op, {a, b}));
  }

  NodeId commit(Node n) {
    n.value = compute(n);
    if (!n.value.all_finite())
      throw NumericError(std::string(op_name(n.op)) + " produced a non-finite value");
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  static double sigmoid_val(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  }
  static double softplus_val(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }

  Tensor compute(const Node& n) const {
    auto in = [&](int k) -> const Tensor& {
      return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])].value;
    };
    switch (n.op) {
      case Op::kLeaf:
        return n.value;
      case Op::kAdd: {
        Tensor out = in(0);
        const Tensor& b = in(1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
        return out;
      }
      case Op::kSub: {
        Tensor out = in(0);
        const Tensor& b = in(1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
        return out;
      }
      case Op::kMul: {
        Tensor out = in(0);
        const Tensor& b = in(1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
        return out;
      }
      case Op::kSigmoid: {
        Tensor out = in(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_val(out[i]);
        return out;
      }
      case Op::kTanh: {
        Tensor out = in(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
        return out;
      }
      case Op::kSoftplus: {
        Tensor out = in(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_val(out[i]);
        return out;
      }
      case Op::kEluPlusOne: {
        Tensor out = in(0);
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = out[i] >= 0.0 ? out[i] + 1.0 : std::exp(out[i]);
        return out;
      }
      case Op::kBiasedRelu: {
        Tensor out = in(0);
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = n.scalar + (out[i] > 0.0 ? out[i] : 0.0);
        return out;
      }
      case Op::kLog: {
        Tensor out = in(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
        return out;
      }
      case Op::kScale: {
        Tensor out = in(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= n.scalar;
        return out;
      }
      case Op::kSum: {
        const Tensor& a = in(0);
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
        return Tensor::scalar(acc);
      }
      case Op::kMatmul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        std::size_t N = a.extent(0), K = a.extent(1), M = b.extent(1);
        Tensor out({N, M});
        for (std::size_t i = 0; i < N; ++i) {
          double* orow = out.data() + i * M;
          for (std::size_t k = 0; k < K; ++k) {
            double aik = a[i * K + k];
            const double* brow = b.data() + k * M;
            for (std::size_t j = 0; j < M; ++j) orow[j] += aik * brow[j];
          }
        }
        return out;
      }
      case Op::kBiasAddRows: {
        Tensor out = in(0);
        const Tensor& b = in(1);
        std::size_t N = out.extent(0), C = out.extent(1);
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t c = 0; c < C; ++c) out[i * C + c] += b[c];
        return out;
      }
      case Op::kConv2d:
        return conv_forward(in(0), in(1), in(2), n.pad);
      case Op::kConcatChannels: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        std::size_t H = a.extent(1), W = a.extent(2);
        Tensor out({a.extent(0) + b.extent(0), H, W});
        std::memcpy(out.data(), a.data(), a.size() * sizeof(double));
        std::memcpy(out.data() + a.size(), b.data(), b.size() * sizeof(double));
        return out;
      }
      case Op::kRowsFromChannels: {
        const Tensor& a = in(0);
        std::size_t C = a.extent(0), H = a.extent(1), W = a.extent(2);
        Tensor out({H * W, C});
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t p = 0; p < H * W; ++p) out[p * C + c] = a[c * H * W + p];
        return out;
      }
      case Op::kChannelsFromRows: {
        const Tensor& a = in(0);
        std::size_t C = a.extent(1), HW = a.extent(0);
        Tensor out({C, n.h, n.w});
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t p = 0; p < HW; ++p) out[c * HW + p] = a[p * C + c];
        return out;
      }
      case Op::kAppendConstCol: {
        const Tensor& a = in(0);
        std::size_t N = a.extent(0), C = a.extent(1);
        Tensor out({N, C + 1});
        for (std::size_t i = 0; i < N; ++i) {
          std::memcpy(out.data() + i * (C + 1), a.data() + i * C, C * sizeof(double));
          out[i * (C + 1) + C] = n.scalar;
        }
        return out;
      }
    }
    throw std::logic_error("compute: unhandled op");
  }

  // adds k (+) in shifted by the same-padding offsets into acc; fast paths
  // for the dominant 3-tap and 1-tap rows
  static void corr_row_same(double* acc, const double* in, const double* k,
                            std::size_t KW, std::size_t W) {
    if (KW == 3) {
      double k0 = k[0], k1 = k[1], k2 = k[2];
      acc[0] += k1 * in[0] + k2 * in[1];
      for (std::size_t x = 1; x + 1 < W; ++x)
        acc[x] += k0 * in[x - 1] + k1 * in[x] + k2 * in[x + 1];
      acc[W - 1] += k0 * in[W - 2] + k1 * in[W - 1];
      return;
    }
    if (KW == 1) {
      double k0 = k[0];
      for (std::size_t x = 0; x < W; ++x) acc[x] += k0 * in[x];
      return;
    }
    std::size_t pw = KW / 2;
    for (std::size_t v = 0; v < KW; ++v) {
      double wk = k[v];
      std::size_t x0 = pw > v ? pw - v : 0;
      std::size_t x1 = std::min(W, W + pw - v);
      const double* ir = in + (x0 + v - pw);
      for (std::size_t x = x0; x < x1; ++x) acc[x] += wk * ir[x - x0];
    }
  }

  // row-accumulator form: each output row is built once in a local buffer
  static Tensor conv_forward(const Tensor& in, const Tensor& ker, const Tensor& bias,
                             Padding pad) {
    std::size_t C = in.extent(0), H = in.extent(1), W = in.extent(2);
    std::size_t F = ker.extent(0), KH = ker.extent(2), KW = ker.extent(3);
    std::size_t ph = pad == Padding::kSame ? KH / 2 : 0;
    std::size_t pw = pad == Padding::kSame ? KW / 2 : 0;
    std::size_t OH = H + 2 * ph - KH + 1, OW = W + 2 * pw - KW + 1;
    Tensor out({F, OH, OW});
    bool fast = pad == Padding::kSame && W >= 2;
    std::vector<double> acc(OW);
    for (std::size_t f = 0; f < F; ++f) {
      double* oplane = out.data() + f * OH * OW;
      for (std::size_t y = 0; y < OH; ++y) {
        std::fill(acc.begin(), acc.end(), bias[f]);
        for (std::size_t c = 0; c < C; ++c) {
          const double* iplane = in.data() + c * H * W;
          const double* kplane = ker.data() + (f * C + c) * KH * KW;
          for (std::size_t u = 0; u < KH; ++u) {
            std::size_t iy = y + u;
            if (iy < ph || iy >= H + ph) continue;
            const double* irow = iplane + (iy - ph) * W;
            const double* krow = kplane + u * KW;
            if (fast) {
              corr_row_same(acc.data(), irow, krow, KW, W);
              continue;
            }
            for (std::size_t v = 0; v < KW; ++v) {
              double wk = krow[v];
              std::size_t x0 = pw > v ? pw - v : 0;
              std::size_t x1 = std::min(OW, W + pw - v);
              const double* ir = irow + (x0 + v - pw);
              double* ar = acc.data() + x0;
              for (std::size_t x = 0; x < x1 - x0; ++x) ar[x] += wk * ir[x];
            }
          }
        }
        std::memcpy(oplane + y * OW, acc.data(), OW * sizeof(double));
      }
    }
    return out;
  }

  void backprop(Node& n) {
    auto needs = [&](int k) {
      return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])].needs_grad;
    };
    auto g = [&](int k) -> std::vector<double>& {
      return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])].grad;
    };
    auto v = [&](int k) -> const Tensor& {
      return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])].value;
    };
    const std::vector<double>& go = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        return;
      case Op::kAdd:
        if (needs(0)) {
          auto& ga = g(0);
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (needs(1)) {
          auto& gb = g(1);
          for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
        }
        return;
      case Op::kSub:
        if (needs(0)) {
          auto& ga = g(0);
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (needs(1)) {
          auto& gb = g(1);
          for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
        }
        return;
      case Op::kMul:
        if (needs(0)) {
          auto& ga = g(0);
          const Tensor& b = v(1);
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b[i];
        }
        if (needs(1)) {
          auto& gb = g(1);
          const Tensor& a = v(0);
          for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a[i];
        }
        return;
      case Op::kSigmoid:
        if (needs(0)) {
          auto& ga = g(0);
          for (std::size_t i = 0; i < go.size(); ++i) {
            double s = n.value[i];
            ga[i] += go[i] * s * (1.0 - s);
          }
        }
        return;
      case Op::kTanh:
        if (needs(0)) {
          auto& ga = g(0);
          for (std::size_t i = 0; i < go.size(); ++i) {
            double t = n.value[i];
            ga[i] += go[i] * (1.0 - t * t);
          }
        }
        return;
      case Op::kSoftplus:
        if (needs(0)) {
          auto& ga = g(0);
          const Tensor& a = v(0);
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * sigmoid_val(a[i]);
        }
        return;
      case Op::kEluPlusOne:
        if (needs(0)) {
          auto& ga = g(0);
          const Tensor& a = v(0);
          for (std::size_t i = 0; i < go.size(); ++i)
            ga[i] += go[i] * (a[i] >= 0.0 ? 1.0 : n.value[i]);
        }
        return;
      case Op::kBiasedRelu:
        if (needs(0)) {
          auto& ga = g(0);
          const Tensor& a = v(0);
          for (std::size_t i = 0; i < go.size(); ++i)
            if (a[i] > 0.0) ga[i] += go[i];
        }
        return;
      case Op::kLog:
        if (needs(0)) {
          auto& ga = g(0);
          const Tensor& a = v(0);
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / a[i];
        }
        return;
      case Op::kScale:
        if (needs(0)) {
          auto& ga = g(0);
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * n.scalar;
        }
        return;
      case Op::kSum:
        if (needs(0)) {
          auto& ga = g(0);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[0];
        }
        return;
      case Op::kMatmul: {
        const Tensor& a = v(0);
        const Tensor& b = v(1);
        std::size_t N = a.extent(0), K = a.extent(1), M = b.extent(1);
        if (needs(0)) {  // dA = dC * B^T
          auto& ga = g(0);
          for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = 0; k < K; ++k) {
              const double* brow = b.data() + k * M;
              const double* grow = go.data() + i * M;
              double acc = 0.0;
              for (std::size_t j = 0; j < M; ++j) acc += grow[j] * brow[j];
              ga[i * K + k] += acc;
            }
        }
        if (needs(1)) {  // dB = A^T * dC
          auto& gb = g(1);
          for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = 0; k < K; ++k) {
              double aik = a[i * K + k];
              const double* grow = go.data() + i * M;
              double* gbrow = gb.data() + k * M;
              for (std::size_t j = 0; j < M; ++j) gbrow[j] += aik * grow[j];
            }
        }
        return;
      }
      case Op::kBiasAddRows: {
        std::size_t N = n.value.extent(0), C = n.value.extent(1);
        if (needs(0)) {
          auto& ga = g(0);
          for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (needs(1)) {
          auto& gb = g(1);
          for (std::size_t i = 0; i < N; ++i)
            for (std::size_t c = 0; c < C; ++c) gb[c] += go[i * C + c];
        }
        return;
      }
      case Op::kConv2d:
        conv_backward(n, v(0), v(1), needs(0) ? &g(0) : nullptr,
                      needs(1) ? &g(1) : nullptr, needs(2) ? &g(2) : nullptr);
        return;
      case Op::kConcatChannels: {
        std::size_t na = v(0).size();
        if (needs(0)) {
          auto& ga = g(0);
          for (std::size_t i = 0; i < na; ++i) ga[i] += go[i];
        }
        if (needs(1)) {
          auto& gb = g(1);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[na + i];
        }
        return;
      }
      case Op::kRowsFromChannels: {
        if (needs(0)) {
          auto& ga = g(0);
          std::size_t C = v(0).extent(0), HW = v(0).extent(1) * v(0).extent(2);
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < HW; ++p) ga[c * HW + p] += go[p * C + c];
        }
        return;
      }
      case Op::kChannelsFromRows: {
        if (needs(0)) {
          auto& ga = g(0);
          std::size_t C = n.value.extent(0), HW = n.h * n.w;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < HW; ++p) ga[p * C + c] += go[c * HW + p];
        }
        return;
      }
      case Op::kAppendConstCol: {
        if (needs(0)) {
          auto& ga = g(0);
          std::size_t N = v(0).extent(0), C = v(0).extent(1);
          for (std::size_t i = 0; i < N; ++i)
            for (std::size_t c = 0; c < C; ++c) ga[i * C + c] += go[i * (C + 1) + c];
        }
        return;
      }
    }
  }

  void conv_backward(const Node& n, const Tensor& in, const Tensor& ker,
                     std::vector<double>* gin, std::vector<double>* gker,
                     std::vector<double>* gbias) {
    std::size_t C = in.extent(0), H = in.extent(1), W = in.extent(2);
    std::size_t F = ker.extent(0), KH = ker.extent(2), KW = ker.extent(3);
    std::size_t ph = n.pad == Padding::kSame ? KH / 2 : 0;
    std::size_t pw = n.pad == Padding::kSame ? KW / 2 : 0;
    std::size_t OH = n.value.extent(1), OW = n.value.extent(2);
    const std::vector<double>& go = n.grad;
    if (gbias) {
      for (std::size_t f = 0; f < F; ++f) {
        const double* gplane = go.data() + f * OH * OW;
        double acc = 0.0;
        for (std::size_t i = 0; i < OH * OW; ++i) acc += gplane[i];
        (*gbias)[f] += acc;
      }
    }
    bool fast = n.pad == Padding::kSame && KW == 3 && W >= 2;
    for (std::size_t f = 0; f < F; ++f) {
      const double* gplane = go.data() + f * OH * OW;
      for (std::size_t c = 0; c < C; ++c) {
        const double* iplane = in.data() + c * H * W;
        double* giplane = gin ? gin->data() + c * H * W : nullptr;
        const double* kbase = ker.data() + (f * C + c) * KH * KW;
        double* gkbase = gker ? gker->data() + (f * C + c) * KH * KW : nullptr;
        for (std::size_t u = 0; u < KH; ++u) {
          std::size_t y0 = ph > u ? ph - u : 0;
          std::size_t y1 = std::min(OH, H + ph - u);
          if (fast) {
            // fused 3-tap sweep: kernel-gradient reduction and input-gradient
            // scatter share one pass over each gradient row
            double k0 = kbase[u * 3], k1 = kbase[u * 3 + 1], k2 = kbase[u * 3 + 2];
            double a0 = 0, a1 = 0, a2 = 0;
            for (std::size_t y = y0; y < y1; ++y) {
              const double* grow = gplane + y * OW;
              const double* irow = iplane + (y + u - ph) * W;
              double* girow = giplane ? giplane + (y + u - ph) * W : nullptr;
              double dg = grow[0];
              a1 += dg * irow[0];
              a2 += dg * irow[1];
              if (girow) {
                girow[0] += k1 * dg;
                girow[1] += k2 * dg;
              }
              if (girow) {
                for (std::size_t x = 1; x + 1 < W; ++x) {
                  dg = grow[x];
                  a0 += dg * irow[x - 1];
                  a1 += dg * irow[x];
                  a2 += dg * irow[x + 1];
                  girow[x - 1] += k0 * dg;
                  girow[x] += k1 * dg;
                  girow[x + 1] += k2 * dg;
                }
              } else {
                for (std::size_t x = 1; x + 1 < W; ++x) {
                  dg = grow[x];
                  a0 += dg * irow[x - 1];
                  a1 += dg * irow[x];
                  a2 += dg * irow[x + 1];
                }
              }
              dg = grow[W - 1];
              a0 += dg * irow[W - 2];
              a1 += dg * irow[W - 1];
              if (girow) {
                girow[W - 2] += k0 * dg;
                girow[W - 1] += k1 * dg;
              }
            }
            if (gkbase) {
              gkbase[u * 3] += a0;
              gkbase[u * 3 + 1] += a1;
              gkbase[u * 3 + 2] += a2;
            }
            continue;
          }
          for (std::size_t v = 0; v < KW; ++v) {
            std::size_t x0 = pw > v ? pw - v : 0;
            std::size_t x1 = std::min(OW, W + pw - v);
            double wk = kbase[u * KW + v];
            double kacc = 0.0;
            for (std::size_t y = y0; y < y1; ++y) {
              const double* grow = gplane + y * OW + x0;
              const double* irow = iplane + (y + u - ph) * W + (x0 + v - pw);
              std::size_t len = x1 - x0;
              if (gkbase)
                for (std::size_t x = 0; x < len; ++x) kacc += grow[x] * irow[x];
              if (giplane) {
                double* girow = giplane + (y + u - ph) * W + (x0 + v - pw);
                for (std::size_t x = 0; x < len; ++x) girow[x] += wk * grow[x];
              }
            }
            if (gkbase) gkbase[u * KW + v] += kacc;
          }
        }
      }
    }
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace stpp
