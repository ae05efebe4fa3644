// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stpp/nn.hpp"
#include "stpp/pointprocess.hpp"

namespace stpp {

/// Ablation family: the memoryless map, the synchronous stream alone, and
/// the full two-stream model.
enum class Variant : std::uint8_t { kTimeIndependent, kSyncOnly, kSyncAsync };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kTimeIndependent: return "timeindep";
    case Variant::kSyncOnly: return "sync";
    case Variant::kSyncAsync: return "syncasync";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "timeindep") return Variant::kTimeIndependent;
  if (s == "sync") return Variant::kSyncOnly;
  if (s == "syncasync") return Variant::kSyncAsync;
  throw ConfigError("unknown variant: " + s + " (want timeindep|sync|syncasync)");
}

struct ModelConfig {
  std::size_t grid_h = 32;
  std::size_t grid_w = 32;
  std::size_t conv_channels = 8;
  std::size_t hidden_channels = 8;
  std::size_t kernel = 3;
  std::size_t mlp_hidden = 16;
  Activation activation = Activation::kSoftplus;
  double biased_relu_eps = 1e-3;
  // events are rare; the head starts in the low-intensity regime
  double head_bias_init = -3.5;
  Variant variant = Variant::kSyncAsync;

  nlohmann::json to_json() const {
    return {{"grid_h", grid_h},
            {"grid_w", grid_w},
            {"conv_channels", conv_channels},
            {"hidden_channels", hidden_channels},
            {"kernel", kernel},
            {"mlp_hidden", mlp_hidden},
            {"activation", activation_name(activation)},
            {"biased_relu_eps", biased_relu_eps},
            {"head_bias_init", head_bias_init},
            {"variant", variant_name(variant)}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.grid_h = j.at("grid_h").get<std::size_t>();
    c.grid_w = j.at("grid_w").get<std::size_t>();
    c.conv_channels = j.at("conv_channels").get<std::size_t>();
    c.hidden_channels = j.at("hidden_channels").get<std::size_t>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    c.activation = activation_from_name(j.at("activation").get<std::string>());
    c.biased_relu_eps = j.at("biased_relu_eps").get<double>();
    c.head_bias_init = j.at("head_bias_init").get<double>();
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    return c;
  }
};

/// Constant map used to hand the scalar inter-event gap to the feature
/// extractor of the asynchronous stream.
inline NodeId broadcast_map(Graph& g, double v, std::size_t h, std::size_t w) {
  return g.constant(Tensor::full({1, h, w}, v));
}

namespace detail {

inline Tensor as_plane(const Tensor& t) {
  if (t.rank() == 2) return Tensor({1, t.extent(0), t.extent(1)}, t.vec());
  if (t.rank() == 3 && t.extent(0) == 1) return t;
  throw std::invalid_argument("expected an [H,W] or [1,H,W] tensor");
}

inline void require_binary(const Tensor& t, const char* what) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] != 0.0 && t[i] != 1.0)
      throw std::invalid_argument(std::string(what) + ": mask entries must be 0 or 1");
}

inline Tensor grid_plane(const EventGrid& grid) {
  Tensor t({1, grid.h, grid.w});
  for (std::size_t i = 0; i < grid.cells.size(); ++i) t[i] = grid.cells[i];
  return t;
}

}  // namespace detail

/// The two-stream conditional-intensity model. A synchronous stream encodes
/// the frame and detection mask every step; an asynchronous stream encodes
/// event masks with their inter-event gaps only on frames that held events;
/// a learned per-pixel evolving function aligns the event feature to the
/// current frame before a pair of 1x1 heads merge both streams into an
/// intensity map.
class IntensityModel {
 public:
  IntensityModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    psi1_ = ConvStack(2, cfg.conv_channels, cfg.conv_channels, cfg.kernel);
    psi1_.init(rng);
    std::size_t head_in = cfg.variant == Variant::kTimeIndependent
                              ? cfg.conv_channels
                              : cfg.hidden_channels;
    head_sync_ = Conv2dLayer(1, head_in, 1);
    head_sync_.init(rng);
    head_sync_.bias[0] = cfg.head_bias_init;
    if (cfg.variant != Variant::kTimeIndependent) {
      sync_cell_ = ConvLstmCell(cfg.hidden_channels, cfg.conv_channels, cfg.kernel);
      sync_cell_.init(rng);
    }
    if (cfg.variant == Variant::kSyncAsync) {
      psi2_ = ConvStack(2, cfg.conv_channels, cfg.conv_channels, cfg.kernel);
      psi2_.init(rng);
      async_cell_ = ConvLstmCell(cfg.hidden_channels, cfg.conv_channels, cfg.kernel);
      async_cell_.init(rng);
      psi3_ = Mlp({cfg.hidden_channels + 1, cfg.mlp_hidden, cfg.mlp_hidden,
                   cfg.hidden_channels});
      psi3_.init(rng);
      head_event_ = Conv2dLayer(1, cfg.hidden_channels, 1);
      head_event_.init(rng);
    }
  }

  const ModelConfig& config() const { return cfg_; }

  std::vector<NamedParam> parameters() {
    std::vector<NamedParam> out;
    psi1_.collect("psi1", out);
    if (cfg_.variant != Variant::kTimeIndependent) sync_cell_.collect("sync_cell", out);
    if (cfg_.variant == Variant::kSyncAsync) {
      psi2_.collect("psi2", out);
      async_cell_.collect("async_cell", out);
      psi3_.collect("psi3", out);
    }
    head_sync_.collect("head_sync", out);
    if (cfg_.variant == Variant::kSyncAsync) head_event_.collect("head_event", out);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor->size();
    return n;
  }

  /// psi1 features over the concatenated frame and detection mask.
  NodeId features_sync(Graph& g, Binding& bind, const Tensor& frame,
                       const Tensor& det_mask) {
    Tensor f = detail::as_plane(frame);
    Tensor m = detail::as_plane(det_mask);
    if (f.shape() != m.shape())
      throw std::invalid_argument("features_sync: frame and mask shapes differ");
    detail::require_binary(m, "features_sync");
    NodeId x = g.concat_channels(g.constant(std::move(f)), g.constant(std::move(m)));
    return psi1_.forward(g, bind, x);
  }

  /// Advances the synchronous stream and returns the new hidden map.
  NodeId sync_step(Graph& g, Binding& bind, ConvLstmCell::State& state,
                   const Tensor& frame, const Tensor& det_mask) {
    require_recurrent("sync_step");
    NodeId feats = features_sync(g, bind, frame, det_mask);
    state = sync_cell_.step(g, bind, state, feats);
    return state.h;
  }

  /// Advances the asynchronous stream with an event mask and the inter-event
  /// frame gap. The stream is event-driven: an empty mask is rejected.
  NodeId async_step(Graph& g, Binding& bind, ConvLstmCell::State& state,
                    const EventGrid& events, int gap) {
    require_async("async_step");
    if (!events.any())
      throw std::invalid_argument("async_step: event mask must be nonempty");
    if (gap < 1) throw std::invalid_argument("async_step: gap must be >= 1");
    NodeId x = g.concat_channels(g.constant(detail::grid_plane(events)),
                                 broadcast_map(g, static_cast<double>(gap),
                                               events.h, events.w));
    NodeId feats = psi2_.forward(g, bind, x);
    state = async_cell_.step(g, bind, state, feats);
    return state.h;
  }

  /// Applies the evolving function per pixel: each channel vector is
  /// concatenated with the elapsed frame count and mapped back to a channel
  /// vector of the same width.
  NodeId align(Graph& g, Binding& bind, NodeId h_event, double elapsed) {
    require_async("align");
    if (elapsed < 0) throw std::invalid_argument("align: elapsed must be >= 0");
    const Tensor& v = g.value(h_event);
    std::size_t h = v.extent(1), w = v.extent(2);
    NodeId rows = g.append_const_col(g.rows_from_channels(h_event), elapsed);
    NodeId mapped = psi3_.forward_rows(g, bind, rows);
    return g.channels_from_rows(mapped, h, w);
  }

  /// sigma(w_s * h_sync + w_e * aligned_event), both heads 1x1 convolutions.
  NodeId intensity(Graph& g, Binding& bind, NodeId h_sync, NodeId aligned_event) {
    require_async("intensity");
    NodeId pre = g.add(head_sync_.forward(g, bind, h_sync),
                       head_event_.forward(g, bind, aligned_event));
    return apply_activation(g, cfg_.activation, pre, cfg_.biased_relu_eps);
  }

  NodeId intensity_single_stream(Graph& g, Binding& bind, NodeId features) {
    return apply_activation(g, cfg_.activation, head_sync_.forward(g, bind, features),
                            cfg_.biased_relu_eps);
  }

  ConvLstmCell::State initial_sync_state(Graph& g) {
    require_recurrent("initial_sync_state");
    return sync_cell_.initial_state(g, cfg_.grid_h, cfg_.grid_w);
  }
  ConvLstmCell::State initial_async_state(Graph& g) {
    require_async("initial_async_state");
    return async_cell_.initial_state(g, cfg_.grid_h, cfg_.grid_w);
  }

  Mlp& evolving_function() {
    require_async("evolving_function");
    return psi3_;
  }
  Conv2dLayer& sync_head() { return head_sync_; }
  Conv2dLayer& event_head() {
    require_async("event_head");
    return head_event_;
  }

 private:
  void require_recurrent(const char* what) const {
    if (cfg_.variant == Variant::kTimeIndependent)
      throw std::logic_error(std::string(what) + ": variant has no recurrent state");
  }
  void require_async(const char* what) const {
    if (cfg_.variant != Variant::kSyncAsync)
      throw std::logic_error(std::string(what) + ": variant has no event stream");
  }

  ModelConfig cfg_;
  ConvStack psi1_;
  ConvStack psi2_;
  ConvLstmCell sync_cell_;
  ConvLstmCell async_cell_;
  Mlp psi3_;
  Conv2dLayer head_sync_;
  Conv2dLayer head_event_;

  friend class SequenceRun;
};

/// Drives one sequence through the model on one graph. Events observed at
/// frame t-1 are consumed before the intensity at frame t is emitted, so the
/// map for frame t depends only on strictly earlier events. The caller
/// chooses what to feed back: ground-truth grids (teacher forcing) or its
/// own predictions (inference).
class SequenceRun {
 public:
  SequenceRun(IntensityModel& model, Graph& g)
      : model_(&model), g_(&g), bind_(g) {}

  /// events_prev: the event grid of frame t-1, or nullptr on the first frame
  /// and whenever the previous frame held no events.
  /// State maps take their spatial extents from the first frame, so one
  /// model can run sequences of different grid sizes.
  NodeId step(const Tensor& frame, const Tensor& det_mask, const EventGrid* events_prev) {
    IntensityModel& m = *model_;
    int t = t_++;
    if (t == 0) {
      Tensor plane = detail::as_plane(frame);
      std::size_t h = plane.extent(1), w = plane.extent(2);
      if (m.cfg_.variant != Variant::kTimeIndependent)
        sync_state_ = m.sync_cell_.initial_state(*g_, h, w);
      if (m.cfg_.variant == Variant::kSyncAsync)
        async_state_ = m.async_cell_.initial_state(*g_, h, w);
    }
    if (t > 0 && events_prev != nullptr && events_prev->any() &&
        m.cfg_.variant == Variant::kSyncAsync) {
      int gap = (t - 1) - prev_event_frame_;
      m.async_step(*g_, bind_, async_state_, *events_prev, gap);
      prev_event_frame_ = t - 1;
      last_event_frame_ = t - 1;
    }
    switch (m.cfg_.variant) {
      case Variant::kTimeIndependent: {
        NodeId feats = m.features_sync(*g_, bind_, frame, det_mask);
        return m.intensity_single_stream(*g_, bind_, feats);
      }
      case Variant::kSyncOnly: {
        NodeId h = m.sync_step(*g_, bind_, sync_state_, frame, det_mask);
        return m.intensity_single_stream(*g_, bind_, h);
      }
      case Variant::kSyncAsync: {
        NodeId h = m.sync_step(*g_, bind_, sync_state_, frame, det_mask);
        NodeId aligned = m.align(*g_, bind_, async_state_.h,
                                 static_cast<double>(t - last_event_frame_));
        return m.intensity(*g_, bind_, h, aligned);
      }
    }
    throw std::logic_error("SequenceRun: unhandled variant");
  }

  Binding& binding() { return bind_; }
  int frames_seen() const { return t_; }

 private:
  IntensityModel* model_;
  Graph* g_;
  Binding bind_;
  ConvLstmCell::State sync_state_;
  ConvLstmCell::State async_state_;
  int t_ = 0;
  int prev_event_frame_ = -1;  // last event frame consumed, for gaps
  int last_event_frame_ = 0;   // reference point for align elapsed
};

/// Negative discretized log-likelihood of the label grids under the emitted
/// intensity nodes. The event cells enter through log(lambda*mask + (1-mask))
/// so cells outside the mask contribute exactly zero to the first sum.
inline NodeId sequence_nll(Graph& g, std::span<const NodeId> lambdas,
                           std::span<const EventGrid> labels) {
  if (lambdas.size() != labels.size())
    throw std::invalid_argument("sequence_nll: frame counts differ");
  if (lambdas.empty()) throw std::invalid_argument("sequence_nll: empty sequence");
  NodeId total = -1;
  for (std::size_t f = 0; f < lambdas.size(); ++f) {
    const Tensor& lam = g.value(lambdas[f]);
    const EventGrid& ev = labels[f];
    if (lam.size() != ev.cells.size())
      throw std::invalid_argument("sequence_nll: grid shapes differ");
    Tensor mask({1, ev.h, ev.w});
    Tensor inv({1, ev.h, ev.w});
    for (std::size_t i = 0; i < ev.cells.size(); ++i) {
      mask[i] = ev.cells[i];
      inv[i] = 1.0 - mask[i];
    }
    NodeId mask_id = g.constant(std::move(mask));
    NodeId inv_id = g.constant(std::move(inv));
    NodeId event_term;
    try {
      event_term = g.sum(g.log_(g.add(g.mul(lambdas[f], mask_id), inv_id)));
    } catch (const NumericError&) {
      for (std::size_t i = 0; i < ev.cells.size(); ++i)
        if (ev.cells[i] && !(lam[i] > 0.0))
          throw NumericError("sequence_nll: non-positive intensity " +
                             format_double(lam[i]) + " at frame " +
                             std::to_string(f) + ", cell (" +
                             std::to_string(i / ev.w) + "," +
                             std::to_string(i % ev.w) + ")");
      throw;
    }
    NodeId integral_term = g.sum(g.mul(lambdas[f], inv_id));
    NodeId nll_f = g.sub(integral_term, event_term);
    total = f == 0 ? nll_f : g.add(total, nll_f);
  }
  return total;
}

/// Teacher-forced pass over a whole sequence; returns the per-frame
/// intensity node ids.
inline std::vector<NodeId> forward_teacher_forced(IntensityModel& model, Graph& g,
                                                  SequenceRun& run,
                                                  const Tensor& frames,
                                                  std::span<const Tensor> det_masks,
                                                  std::span<const EventGrid> labels) {
  (void)model;
  if (frames.rank() != 3 || frames.extent(0) == 0)
    throw std::invalid_argument("forward_teacher_forced: need nonempty [T,H,W] frames");
  std::size_t T = frames.extent(0);
  if (det_masks.size() != T || labels.size() != T)
    throw std::invalid_argument("forward_teacher_forced: per-frame inputs disagree");
  std::size_t H = frames.extent(1), W = frames.extent(2);
  std::vector<NodeId> out;
  out.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor frame({H, W},
                 std::vector<double>(frames.data() + t * H * W,
                                     frames.data() + (t + 1) * H * W));
    const EventGrid* prev = t > 0 ? &labels[t - 1] : nullptr;
    out.push_back(run.step(frame, det_masks[t], prev));
  }
  (void)g;
  return out;
}

/// Teacher-forced intensity maps for a sequence whose observed events are
/// given as an event history (frames holding at least one event). History
/// frames must lie within the sequence.
inline std::vector<IntensityMap> forward_sequence(IntensityModel& model,
                                                  const Tensor& frames,
                                                  std::span<const Tensor> det_masks,
                                                  const EventHistory& history) {
  if (frames.rank() != 3 || frames.extent(0) == 0)
    throw std::invalid_argument("forward_sequence: need nonempty [T,H,W] frames");
  std::size_t T = frames.extent(0);
  std::size_t H = frames.extent(1), W = frames.extent(2);
  if (!history.empty() &&
      (history.frame(0) < 0 || history.last_frame() >= static_cast<int>(T)))
    throw std::invalid_argument("forward_sequence: history frames outside sequence");
  std::vector<EventGrid> grids;
  for (std::size_t t = 0; t < T; ++t) grids.emplace_back(static_cast<int>(t), H, W);
  for (std::size_t i = 0; i < history.size(); ++i)
    grids[static_cast<std::size_t>(history.frame(i))] = history.grid(i);
  Graph g;
  SequenceRun run(model, g);
  std::vector<NodeId> ids =
      forward_teacher_forced(model, g, run, frames, det_masks, grids);
  std::vector<IntensityMap> out;
  for (std::size_t t = 0; t < T; ++t) {
    IntensityMap m(static_cast<int>(t), H, W);
    m.values = g.value(ids[t]).vec();
    out.push_back(std::move(m));
  }
  return out;
}

struct InferenceResult {
  std::vector<IntensityMap> intensity;
  std::vector<EventGrid> predicted;
};

/// Inference pass: the model's own thresholded predictions are fed back into
/// the event stream frame by frame.
inline InferenceResult infer_sequence(IntensityModel& model, const Tensor& frames,
                                      std::span<const Tensor> det_masks,
                                      const PredictConfig& predict) {
  if (frames.rank() != 3 || frames.extent(0) == 0)
    throw std::invalid_argument("infer_sequence: need nonempty [T,H,W] frames");
  std::size_t T = frames.extent(0);
  if (det_masks.size() != T)
    throw std::invalid_argument("infer_sequence: det mask count mismatch");
  std::size_t H = frames.extent(1), W = frames.extent(2);
  Graph g;
  SequenceRun run(model, g);
  InferenceResult res;
  res.intensity.reserve(T);
  res.predicted.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor frame({H, W},
                 std::vector<double>(frames.data() + t * H * W,
                                     frames.data() + (t + 1) * H * W));
    const EventGrid* prev = t > 0 ? &res.predicted[t - 1] : nullptr;
    NodeId lam = run.step(frame, det_masks[t], prev);
    IntensityMap map(static_cast<int>(t), H, W);
    map.values = g.value(lam).vec();
    PredictConfig pc = predict;
    pc.seed = derive_seed(predict.seed, t);
    res.predicted.push_back(predict_events(map, pc));
    res.intensity.push_back(std::move(map));
  }
  return res;
}

}  // namespace stpp
