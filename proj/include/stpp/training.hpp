// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "stpp/model.hpp"

namespace stpp {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 4;    // sequences per step
  std::size_t iterations = 2000;
  double decay_factor = 0.1;
  std::size_t decay_interval = 800;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;  // global gradient norm; <= 0 disables clipping
  std::size_t threads = 0;  // 0 = hardware concurrency
  std::size_t checkpoint_every = 0;
  std::string checkpoint_prefix;
};

/// One teacher-forced sequence: frames, per-frame detection masks and the
/// ground-truth event grids that both drive the event stream and act as the
/// likelihood labels.
struct TrainSample {
  Tensor frames;                  // [T,H,W]
  std::vector<Tensor> det_masks;  // T entries, each [H,W]
  std::vector<EventGrid> labels;  // T entries
};

struct LossTrace {
  std::vector<double> nll;  // one entry per executed iteration

  /// Mean over the trailing window ending at iteration i.
  double smoothed(std::size_t i, std::size_t window) const {
    std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
    double acc = 0.0;
    for (std::size_t k = lo; k <= i; ++k) acc += nll.at(k);
    return acc / static_cast<double>(i - lo + 1);
  }

  void write_csv(std::ostream& os) const {
    os << "iteration,nll\n";
    for (std::size_t i = 0; i < nll.size(); ++i)
      os << i << ',' << format_double(nll[i]) << '\n';
  }
};

/// First/second-moment stochastic gradient rule:
///   m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
///   theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
/// with b1 = 0.9, b2 = 0.999, eps = 1e-8.
class MomentOptimizer {
 public:
  explicit MomentOptimizer(std::size_t n_params)
      : m_(n_params), v_(n_params) {}

  void step(const std::vector<NamedParam>& params,
            const std::vector<std::vector<double>>& grads, double lr) {
    ++t_;
    double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& theta = *params[p].tensor;
      auto& m = m_[p];
      auto& v = v_[p];
      if (m.empty()) {
        m.assign(theta.size(), 0.0);
        v.assign(theta.size(), 0.0);
      }
      const auto& g = grads[p];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

namespace detail {

struct ElementResult {
  double nll = 0.0;
  std::vector<std::vector<double>> grads;
};

inline ElementResult run_element(IntensityModel& model, const TrainSample& sample,
                                 const std::vector<NamedParam>& params) {
  Graph g;
  SequenceRun run(model, g);
  std::vector<NodeId> lambdas =
      forward_teacher_forced(model, g, run, sample.frames, sample.det_masks,
                             sample.labels);
  NodeId nll = sequence_nll(g, lambdas, sample.labels);
  ElementResult res;
  res.nll = g.value(nll)[0];
  if (!std::isfinite(res.nll))
    throw NumericError("train: non-finite loss (value " + format_double(res.nll) + ")");
  g.backward(nll);
  res.grads.reserve(params.size());
  for (const auto& p : params) res.grads.push_back(run.binding().grad_of(*p.tensor));
  return res;
}

}  // namespace detail

/// Maximum-likelihood training by stochastic gradient on the negative
/// discretized log-likelihood. Deterministic under the config seed; batch
/// elements may run on separate threads but gradients are reduced in a fixed
/// element order.
inline LossTrace train(IntensityModel& model, const std::vector<TrainSample>& dataset,
                       const TrainConfig& cfg) {
  if (cfg.learning_rate <= 0.0) throw ConfigError("train: learning rate must be > 0");
  if (cfg.batch_size == 0) throw ConfigError("train: batch size must be > 0");
  if (cfg.decay_interval == 0) throw ConfigError("train: decay interval must be > 0");
  if (dataset.empty()) throw std::invalid_argument("train: dataset must be nonempty");
  for (const auto& s : dataset) {
    if (s.frames.rank() != 3)
      throw std::invalid_argument("train: samples need [T,H,W] frames");
    if (s.det_masks.size() != s.frames.extent(0) ||
        s.labels.size() != s.frames.extent(0))
      throw std::invalid_argument("train: per-frame inputs disagree");
  }

  std::vector<NamedParam> params = model.parameters();
  MomentOptimizer opt(params.size());
  Rng rng(cfg.seed);
  LossTrace trace;
  std::size_t n_threads = cfg.threads ? cfg.threads
                                      : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min(n_threads, cfg.batch_size);

  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<std::size_t> picks(cfg.batch_size);
    for (auto& p : picks) p = rng.index(dataset.size());

    std::vector<detail::ElementResult> results(cfg.batch_size);
    std::vector<std::exception_ptr> errors(n_threads);
    {
      std::vector<std::thread> pool;
      for (std::size_t tid = 0; tid < n_threads; ++tid)
        pool.emplace_back([&, tid] {
          try {
            for (std::size_t e = tid; e < cfg.batch_size; e += n_threads)
              results[e] = detail::run_element(model, dataset[picks[e]], params);
          } catch (...) {
            errors[tid] = std::current_exception();
          }
        });
      for (auto& th : pool) th.join();
    }
    for (auto& err : errors)
      if (err) {
        try {
          std::rethrow_exception(err);
        } catch (const NumericError& e) {
          throw NumericError("iteration " + std::to_string(iter) + ": " + e.what());
        }
      }

    // fixed-order reduction keeps runs bit-stable regardless of threading
    std::vector<std::vector<double>> grads(params.size());
    for (std::size_t p = 0; p < params.size(); ++p)
      grads[p].assign(params[p].tensor->size(), 0.0);
    double nll_mean = 0.0;
    double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::size_t e = 0; e < cfg.batch_size; ++e) {
      nll_mean += results[e].nll * inv_batch;
      for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& src = results[e].grads[p];
        auto& dst = grads[p];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] * inv_batch;
      }
    }

    if (cfg.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& gp : grads)
        for (double v : gp) sq += v * v;
      double norm = std::sqrt(sq);
      if (norm > cfg.clip_norm) {
        double s = cfg.clip_norm / norm;
        for (auto& gp : grads)
          for (double& v : gp) v *= s;
      }
    }

    double lr = cfg.learning_rate *
                std::pow(cfg.decay_factor,
                         static_cast<double>(iter / cfg.decay_interval));
    opt.step(params, grads, lr);
    trace.nll.push_back(nll_mean);

    if (cfg.checkpoint_every && !cfg.checkpoint_prefix.empty() &&
        (iter + 1) % cfg.checkpoint_every == 0) {
      std::ofstream os(cfg.checkpoint_prefix + "_iter" + std::to_string(iter + 1) +
                           ".ckpt",
                       std::ios::binary);
      save_checkpoint(os, params, model.config().to_json());
    }
  }
  return trace;
}

/// Value of the training objective for one sample; forward pass only.
inline double nll_value(IntensityModel& model, const TrainSample& sample) {
  Graph g;
  SequenceRun run(model, g);
  std::vector<NodeId> lambdas = forward_teacher_forced(
      model, g, run, sample.frames, sample.det_masks, sample.labels);
  return g.value(sequence_nll(g, lambdas, sample.labels))[0];
}

/// Compares the analytic gradient of the objective against central finite
/// differences for every parameter entry. Returns the maximum relative error
/// (entries below 1e-6 in magnitude on both sides compare absolutely).
/// The default step is sized for objective-scale values, where smaller steps
/// drown in subtraction cancellation.
inline double gradient_check(IntensityModel& model, const TrainSample& sample,
                             double eps = 1e-4) {
  std::vector<NamedParam> params = model.parameters();
  std::size_t count = 0;
  for (const auto& p : params) count += p.tensor->size();
  if (count > 10000)
    throw std::invalid_argument("gradient_check: model too large (" +
                                std::to_string(count) + " parameters)");

  detail::ElementResult analytic = detail::run_element(model, sample, params);

  double max_err = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p].tensor;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double saved = theta[i];
      theta[i] = saved + eps;
      double fp = nll_value(model, sample);
      theta[i] = saved - eps;
      double fm = nll_value(model, sample);
      theta[i] = saved;
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic.grads[p][i];
      double err = (std::abs(a) < 1e-6 && std::abs(numeric) < 1e-6)
                       ? std::abs(a - numeric)
                       : std::abs(a - numeric) /
                             std::max(std::abs(a), std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace stpp
