// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stpp/filter.hpp"
#include "stpp/io.hpp"
#include "stpp/metrics.hpp"
#include "stpp/model.hpp"
#include "stpp/simulate.hpp"
#include "stpp/tracker.hpp"
#include "stpp/training.hpp"

namespace stpp {

namespace fs = std::filesystem;

constexpr int kReportSchemaVersion = 1;

/// Everything a run needs: thresholds, suite shape, model and training
/// settings. Field defaults are the documented defaults; a key-value config
/// file can override any of them.
struct RunConfig {
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  Variant variant = Variant::kSyncAsync;

  double tau_e = 0.5;    // event-prediction threshold
  double tau_r = 0.5;    // filter removal threshold
  double s_c = 0.5;      // cluster threshold
  double theta_a = 0.8;  // tracklet appearance gate
  double theta_m = 0.3;  // tracklet motion gate

  ScenarioConfig scenario;          // evaluation scenario shape
  std::size_t eval_scenarios = 20;  // seeds 0 .. n-1
  std::size_t train_scenarios = 12;
  std::size_t train_frames = 24;
  std::uint64_t train_seed_base = 1000;

  ModelConfig model;  // grid extents follow the scenario
  std::size_t iterations = 800;
  std::size_t batch_size = 4;
  double learning_rate = 1e-3;
  double decay_factor = 0.1;
  std::size_t decay_interval = 800;
  double clip_norm = 5.0;
  std::size_t threads = 0;
  std::size_t checkpoint_every = 0;

  TrackerConfig tracker_config() const {
    TrackerConfig t;
    t.theta_a = theta_a;
    t.theta_m = theta_m;
    t.s_c = s_c;
    return t;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.learning_rate = learning_rate;
    t.batch_size = batch_size;
    t.iterations = iterations;
    t.decay_factor = decay_factor;
    t.decay_interval = decay_interval;
    t.clip_norm = clip_norm;
    t.threads = threads;
    t.checkpoint_every = checkpoint_every;
    return t;
  }

  void validate() const {
    if (tau_e < 0) throw ConfigError("tau_e must be >= 0");
    if (tau_r < 0 || tau_r > 1) throw ConfigError("tau_r must lie in [0,1]");
    if (s_c <= 0 || s_c >= 1) throw ConfigError("s_c must lie in (0,1)");
    if (theta_a < 0 || theta_a > 1) throw ConfigError("theta_a must lie in [0,1]");
    if (theta_m < 0 || theta_m > 1) throw ConfigError("theta_m must lie in [0,1]");
    if (eval_scenarios == 0) throw ConfigError("eval_scenarios must be > 0");
    if (train_scenarios == 0) throw ConfigError("train_scenarios must be > 0");
  }

  nlohmann::json to_json() const {
    return {{"out_dir", out_dir},
            {"seed", seed},
            {"variant", variant_name(variant)},
            {"tau_e", tau_e},
            {"tau_r", tau_r},
            {"s_c", s_c},
            {"theta_a", theta_a},
            {"theta_m", theta_m},
            {"scenario", scenario.to_json()},
            {"eval_scenarios", eval_scenarios},
            {"train_scenarios", train_scenarios},
            {"train_frames", train_frames},
            {"train_seed_base", train_seed_base},
            {"model", model.to_json()},
            {"iterations", iterations},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"decay_factor", decay_factor},
            {"decay_interval", decay_interval},
            {"clip_norm", clip_norm}};
  }
};

/// Applies `key = value` overrides to a RunConfig. Unknown keys are rejected.
inline void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
  auto as_double = [](const std::string& k, const std::string& v) {
    try {
      std::size_t used;
      double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + k + "': not a number: '" + v + "'");
    }
  };
  auto as_size = [&](const std::string& k, const std::string& v) {
    double d = as_double(k, v);
    if (d < 0 || d != std::floor(d))
      throw ConfigError("config key '" + k + "': not a nonnegative integer: '" + v + "'");
    return static_cast<std::size_t>(d);
  };
  for (const auto& [k, v] : kv) {
    if (k == "out_dir") cfg.out_dir = v;
    else if (k == "seed") cfg.seed = static_cast<std::uint64_t>(as_size(k, v));
    else if (k == "variant") cfg.variant = variant_from_name(v);
    else if (k == "tau_e") cfg.tau_e = as_double(k, v);
    else if (k == "tau_r") cfg.tau_r = as_double(k, v);
    else if (k == "s_c") cfg.s_c = as_double(k, v);
    else if (k == "theta_a") cfg.theta_a = as_double(k, v);
    else if (k == "theta_m") cfg.theta_m = as_double(k, v);
    else if (k == "agents") cfg.scenario.num_agents = as_size(k, v);
    else if (k == "frames") cfg.scenario.frames = as_size(k, v);
    else if (k == "grid") {
      cfg.scenario.grid_h = cfg.scenario.grid_w = as_size(k, v);
      cfg.model.grid_h = cfg.model.grid_w = as_size(k, v);
    } else if (k == "noise_rate") cfg.scenario.noise_rate = as_double(k, v);
    else if (k == "confusion_rate") cfg.scenario.confusion_rate = as_double(k, v);
    else if (k == "jitter_sigma") cfg.scenario.jitter_sigma = as_double(k, v);
    else if (k == "noise_sources") cfg.scenario.noise_sources = as_size(k, v);
    else if (k == "eval_scenarios") cfg.eval_scenarios = as_size(k, v);
    else if (k == "train_scenarios") cfg.train_scenarios = as_size(k, v);
    else if (k == "train_frames") cfg.train_frames = as_size(k, v);
    else if (k == "train_seed_base") cfg.train_seed_base = as_size(k, v);
    else if (k == "iterations") cfg.iterations = as_size(k, v);
    else if (k == "batch_size") cfg.batch_size = as_size(k, v);
    else if (k == "learning_rate") cfg.learning_rate = as_double(k, v);
    else if (k == "decay_factor") cfg.decay_factor = as_double(k, v);
    else if (k == "decay_interval") cfg.decay_interval = as_size(k, v);
    else if (k == "clip_norm") cfg.clip_norm = as_double(k, v);
    else if (k == "checkpoint_every") cfg.checkpoint_every = as_size(k, v);
    else if (k == "threads") cfg.threads = as_size(k, v);
    else if (k == "hidden_channels") cfg.model.hidden_channels = as_size(k, v);
    else if (k == "conv_channels") cfg.model.conv_channels = as_size(k, v);
    else if (k == "kernel") cfg.model.kernel = as_size(k, v);
    else if (k == "mlp_hidden") cfg.model.mlp_hidden = as_size(k, v);
    else if (k == "activation") cfg.model.activation = activation_from_name(v);
    else throw ConfigError("unknown config key: '" + k + "'");
  }
  cfg.model.grid_h = cfg.scenario.grid_h;
  cfg.model.grid_w = cfg.scenario.grid_w;
  cfg.validate();
}

// --- directory layout helpers ----------------------------------------------

inline fs::path eval_scenario_dir(const RunConfig& c, std::size_t i) {
  return fs::path(c.out_dir) / "scenarios" / ("eval_" + std::to_string(i));
}
inline fs::path train_scenario_dir(const RunConfig& c, std::size_t i) {
  return fs::path(c.out_dir) / "scenarios" /
         ("train_" + std::to_string(c.train_seed_base + i));
}
inline fs::path checkpoint_path(const RunConfig& c, Variant v) {
  return fs::path(c.out_dir) / "models" / (std::string(variant_name(v)) + ".ckpt");
}
inline fs::path trace_path(const RunConfig& c, Variant v) {
  return fs::path(c.out_dir) / "models" /
         (std::string(variant_name(v)) + "_trace.csv");
}
inline fs::path infer_dir(const RunConfig& c, Variant v) {
  return fs::path(c.out_dir) / "infer" / variant_name(v);
}
inline fs::path track_dir(const RunConfig& c, const std::string& tag) {
  return fs::path(c.out_dir) / "track" / tag;
}

namespace detail {

inline void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p))
    throw DataError(what + " missing: " + p.string() +
                    " (run the producing stage first)");
}

inline TrainSample sample_from_scenario(const Scenario& sc) {
  TrainSample s;
  s.frames = sc.frames;
  s.det_masks = sc.det_masks();
  s.labels = events_from_labels(sc);
  return s;
}

}  // namespace detail

// --- subcommands ------------------------------------------------------------

/// Generates the train and eval scenario suites. Confusing labels come from
/// running the plain tracker on the unfiltered detections; those baseline
/// trajectories are saved as the no-filter tracking output.
inline void cmd_simulate(const RunConfig& cfg) {
  cfg.validate();
  auto build = [&](const fs::path& dir, const ScenarioConfig& scfg, std::uint64_t seed) {
    Scenario sc = generate_scenario(scfg, seed);
    std::vector<Trajectory> baseline = track(sc.dets, cfg.tracker_config());
    label_confusing(sc, baseline);
    save_scenario(dir, sc);
    fs::create_directories(track_dir(cfg, "baseline"));
    std::ofstream os(track_dir(cfg, "baseline") / (dir.filename().string() + ".csv"));
    write_mot_trajectories(os, baseline);
  };
  for (std::size_t i = 0; i < cfg.eval_scenarios; ++i)
    build(eval_scenario_dir(cfg, i), cfg.scenario, i);
  ScenarioConfig tcfg = cfg.scenario;
  tcfg.frames = cfg.train_frames;
  for (std::size_t i = 0; i < cfg.train_scenarios; ++i)
    build(train_scenario_dir(cfg, i), tcfg, cfg.train_seed_base + i);
}

/// Teacher-forced maximum-likelihood training on the train suite; writes the
/// checkpoint and the loss trace.
inline LossTrace cmd_train(const RunConfig& cfg) {
  cfg.validate();
  std::vector<TrainSample> dataset;
  for (std::size_t i = 0; i < cfg.train_scenarios; ++i) {
    fs::path dir = train_scenario_dir(cfg, i);
    detail::require_exists(dir / "manifest.json", "train scenario");
    dataset.push_back(detail::sample_from_scenario(load_scenario(dir)));
  }
  ModelConfig mc = cfg.model;
  mc.variant = cfg.variant;
  IntensityModel model(mc, derive_seed(cfg.seed, 10 + static_cast<int>(cfg.variant)));
  TrainConfig tc = cfg.train_config();
  tc.seed = derive_seed(cfg.seed, 100 + static_cast<int>(cfg.variant));
  fs::create_directories(fs::path(cfg.out_dir) / "models");
  if (tc.checkpoint_every)
    tc.checkpoint_prefix =
        (fs::path(cfg.out_dir) / "models" / variant_name(cfg.variant)).string();
  LossTrace trace = train(model, dataset, tc);
  std::ofstream ck(checkpoint_path(cfg, cfg.variant), std::ios::binary);
  save_checkpoint(ck, model.parameters(), mc.to_json());
  std::ofstream tr(trace_path(cfg, cfg.variant));
  trace.write_csv(tr);
  return trace;
}

/// Self-predicted inference over the eval suite: writes per-scenario
/// intensity tensors and predicted event grids.
inline void cmd_infer(const RunConfig& cfg) {
  cfg.validate();
  fs::path ck = checkpoint_path(cfg, cfg.variant);
  detail::require_exists(ck, "model checkpoint");
  std::ifstream is(ck, std::ios::binary);
  // manifest first to recover the architecture, then the weights
  ModelConfig mc = cfg.model;
  mc.variant = cfg.variant;
  IntensityModel model(mc, 0);
  load_checkpoint(is, model.parameters());
  fs::create_directories(infer_dir(cfg, cfg.variant));
  PredictConfig pc;
  pc.tau_e = cfg.tau_e;
  for (std::size_t i = 0; i < cfg.eval_scenarios; ++i) {
    fs::path dir = eval_scenario_dir(cfg, i);
    detail::require_exists(dir / "manifest.json", "eval scenario");
    Scenario sc = load_scenario(dir);
    auto masks = sc.det_masks();
    InferenceResult res = infer_sequence(model, sc.frames, masks, pc);
    fs::path base = infer_dir(cfg, cfg.variant) / dir.filename();
    Tensor lam({sc.cfg.frames, sc.cfg.grid_h, sc.cfg.grid_w});
    for (std::size_t t = 0; t < res.intensity.size(); ++t)
      std::copy(res.intensity[t].values.begin(), res.intensity[t].values.end(),
                lam.data() + t * sc.cfg.grid_h * sc.cfg.grid_w);
    std::ofstream lb(base.string() + ".intensity", std::ios::binary);
    lam.write(lb);
    std::ofstream eb(base.string() + ".events");
    write_event_grids(eb, res.predicted);
  }
}

/// File-level filter: reads detections and predicted event grids, writes the
/// kept detections and the audit report.
inline void cmd_filter(const std::string& dets_path, const std::string& events_path,
                       const std::string& out_path, double tau_r) {
  std::vector<Detection> dets = parse_mot_csv(dets_path);
  std::ifstream es(events_path);
  if (!es) throw DataError(events_path + ": cannot open");
  std::vector<EventGrid> grids = read_event_grids(es);
  FilterResult res = filter_detections(dets, grids, tau_r);
  std::ofstream os(out_path);
  if (!os) throw DataError(out_path + ": cannot write");
  write_mot_detections(os, res.kept, true);
  std::ofstream rs(out_path + ".report.csv");
  res.report.write_csv(rs);
}

/// File-level tracker: detections CSV in, trajectories CSV out.
inline void cmd_track(const std::string& dets_path, const std::string& out_path,
                      const TrackerConfig& tc) {
  std::vector<Detection> dets = parse_mot_csv(dets_path);
  std::vector<Trajectory> trajectories = track(dets, tc);
  std::ofstream os(out_path);
  if (!os) throw DataError(out_path + ": cannot write");
  write_mot_trajectories(os, trajectories);
}

/// File-level CLEAR-MOT evaluation; writes a JSON report and appends one
/// line to the results ledger next to it.
inline MotReport cmd_eval(const std::string& gt_path, const std::string& pred_path,
                          const std::string& out_path) {
  TrajectorySet gt = trajectories_from_rows(parse_mot_csv(gt_path));
  TrajectorySet pred = trajectories_from_rows(parse_mot_csv(pred_path));
  MotReport rep = clear_mot(gt, pred);
  nlohmann::json j = rep.to_json();
  j["schema_version"] = kReportSchemaVersion;
  j["gt"] = gt_path;
  j["pred"] = pred_path;
  std::ofstream os(out_path);
  if (!os) throw DataError(out_path + ": cannot write");
  os << j.dump(2) << '\n';
  fs::path ledger = fs::path(out_path).parent_path() / "results.csv";
  bool fresh = !fs::exists(ledger);
  std::ofstream ls(ledger, std::ios::app);
  if (fresh) ls << "gt,pred,mota,motp,mt,ml,fp,fn,ids\n";
  ls << gt_path << ',' << pred_path << ',' << format_double(rep.mota) << ','
     << format_double(rep.motp) << ',' << format_double(rep.mt) << ','
     << format_double(rep.ml) << ',' << rep.fp << ',' << rep.fn << ',' << rep.ids
     << '\n';
  return rep;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Full chain: simulate, then per variant train/infer/filter/track/eval,
/// plus the unfiltered baseline; one consolidated JSON report.
inline nlohmann::json cmd_pipeline(RunConfig cfg) {
  cfg.validate();
  cmd_simulate(cfg);

  nlohmann::json report;
  report["schema_version"] = kReportSchemaVersion;
  report["seed"] = cfg.seed;
  report["config"] = cfg.to_json();

  // ground truth + baseline (tracking the unfiltered detections)
  std::vector<Scenario> eval_scenarios;
  for (std::size_t i = 0; i < cfg.eval_scenarios; ++i)
    eval_scenarios.push_back(load_scenario(eval_scenario_dir(cfg, i)));

  fs::create_directories(fs::path(cfg.out_dir) / "eval");
  std::ofstream ledger(fs::path(cfg.out_dir) / "eval" / "results.csv");
  ledger << "tag,scenario,mota,motp,mt,ml,fp,fn,ids\n";

  auto eval_tag = [&](const std::string& tag) {
    std::vector<double> motas;
    auto per_scenario = nlohmann::json::array();
    for (std::size_t i = 0; i < cfg.eval_scenarios; ++i) {
      fs::path p = track_dir(cfg, tag) /
                   (eval_scenario_dir(cfg, i).filename().string() + ".csv");
      detail::require_exists(p, "trajectories");
      TrajectorySet pred = trajectories_from_rows(parse_mot_csv(p.string()));
      MotReport rep = clear_mot(eval_scenarios[i].gt_trajectories(), pred);
      motas.push_back(rep.mota);
      per_scenario.push_back(rep.to_json());
      ledger << tag << ',' << i << ',' << format_double(rep.mota) << ','
             << format_double(rep.motp) << ',' << format_double(rep.mt) << ','
             << format_double(rep.ml) << ',' << rep.fp << ',' << rep.fn << ','
             << rep.ids << '\n';
    }
    nlohmann::json out;
    out["median_mota"] = median(motas);
    out["scenarios"] = per_scenario;
    return out;
  };

  report["baseline"] = eval_tag("baseline");

  // constant-intensity prior AP over the suite
  {
    std::vector<IntensityMap> lams;
    std::vector<EventGrid> gts;
    for (const Scenario& sc : eval_scenarios) {
      auto grids = events_from_labels(sc);
      for (std::size_t t = 0; t < sc.cfg.frames; ++t) {
        IntensityMap m(static_cast<int>(t), sc.cfg.grid_h, sc.cfg.grid_w);
        std::fill(m.values.begin(), m.values.end(), 0.5);
        lams.push_back(std::move(m));
        gts.push_back(grids[t]);
      }
    }
    report["prior_ap"] = event_ap(lams, gts);
  }

  for (Variant v :
       {Variant::kTimeIndependent, Variant::kSyncOnly, Variant::kSyncAsync}) {
    RunConfig vcfg = cfg;
    vcfg.variant = v;
    LossTrace trace = cmd_train(vcfg);
    cmd_infer(vcfg);

    std::vector<IntensityMap> all_lams;
    std::vector<EventGrid> all_gts;
    for (std::size_t i = 0; i < cfg.eval_scenarios; ++i) {
      const Scenario& sc = eval_scenarios[i];
      fs::path base = infer_dir(cfg, v) / eval_scenario_dir(cfg, i).filename();
      std::ifstream eb(base.string() + ".events");
      std::vector<EventGrid> predicted = read_event_grids(eb);
      std::ifstream lb(base.string() + ".intensity", std::ios::binary);
      Tensor lam = Tensor::read(lb);
      auto gt_events = events_from_labels(sc);
      for (std::size_t t = 0; t < sc.cfg.frames; ++t) {
        IntensityMap m(static_cast<int>(t), sc.cfg.grid_h, sc.cfg.grid_w);
        std::copy(lam.data() + t * m.values.size(),
                  lam.data() + (t + 1) * m.values.size(), m.values.begin());
        all_lams.push_back(std::move(m));
        all_gts.push_back(gt_events[t]);
      }
      FilterResult kept = filter_detections(sc.dets, predicted, cfg.tau_r);
      fs::create_directories(fs::path(cfg.out_dir) / "filter" / variant_name(v));
      std::ofstream fr((fs::path(cfg.out_dir) / "filter" / variant_name(v) /
                        (eval_scenario_dir(cfg, i).filename().string() +
                         "_report.csv")));
      kept.report.write_csv(fr);
      std::vector<Trajectory> trajectories = track(kept.kept, cfg.tracker_config());
      fs::create_directories(track_dir(cfg, variant_name(v)));
      std::ofstream ts(track_dir(cfg, variant_name(v)) /
                       (eval_scenario_dir(cfg, i).filename().string() + ".csv"));
      write_mot_trajectories(ts, trajectories);
    }

    nlohmann::json vj = eval_tag(variant_name(v));
    vj["event_ap"] = event_ap(all_lams, all_gts);
    vj["final_nll"] = trace.nll.empty() ? 0.0 : trace.nll.back();
    vj["smoothed_nll_start"] =
        trace.nll.empty() ? 0.0 : trace.smoothed(0, 50);
    vj["smoothed_nll_end"] =
        trace.nll.empty() ? 0.0 : trace.smoothed(trace.nll.size() - 1, 50);
    report["variants"][variant_name(v)] = vj;
  }

  fs::create_directories(fs::path(cfg.out_dir) / "eval");
  std::ofstream os(fs::path(cfg.out_dir) / "eval" / "report.json");
  os << report.dump(2) << '\n';
  return report;
}

/// CSV series for external plotting: loss traces, the precision-recall curve
/// of the full model, and the per-variant median-MOTA bars.
inline void cmd_plot_data(const RunConfig& cfg) {
  fs::path report_path = fs::path(cfg.out_dir) / "eval" / "report.json";
  detail::require_exists(report_path, "pipeline report");
  std::ifstream rs(report_path);
  nlohmann::json report = nlohmann::json::parse(rs);
  fs::path plot = fs::path(cfg.out_dir) / "plot";
  fs::create_directories(plot);

  for (const char* v : {"timeindep", "sync", "syncasync"}) {
    fs::path tr = trace_path(cfg, variant_from_name(v));
    if (fs::exists(tr)) fs::copy_file(tr, plot / ("loss_" + std::string(v) + ".csv"),
                                      fs::copy_options::overwrite_existing);
  }

  {
    std::ofstream os(plot / "mota_bars.csv");
    os << "variant,median_mota\n";
    os << "baseline," << format_double(report["baseline"]["median_mota"].get<double>())
       << '\n';
    for (const char* v : {"timeindep", "sync", "syncasync"})
      os << v << ','
         << format_double(report["variants"][v]["median_mota"].get<double>()) << '\n';
  }

  // PR curve of the full model over the eval suite
  {
    std::vector<std::pair<double, bool>> cells;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < cfg.eval_scenarios; ++i) {
      Scenario sc = load_scenario(eval_scenario_dir(cfg, i));
      fs::path base = infer_dir(cfg, Variant::kSyncAsync) /
                      eval_scenario_dir(cfg, i).filename();
      detail::require_exists(base.string() + ".intensity", "intensity maps");
      std::ifstream lb(base.string() + ".intensity", std::ios::binary);
      Tensor lam = Tensor::read(lb);
      auto gts = events_from_labels(sc);
      for (std::size_t t = 0; t < sc.cfg.frames; ++t)
        for (std::size_t p = 0; p < gts[t].cells.size(); ++p) {
          bool pos = gts[t].cells[p] != 0;
          positives += pos;
          cells.push_back({lam[t * gts[t].cells.size() + p], pos});
        }
    }
    std::stable_sort(cells.begin(), cells.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::ofstream os(plot / "pr_syncasync.csv");
    os << "recall,precision\n";
    std::size_t tp = 0;
    for (std::size_t rank = 0; rank < cells.size(); ++rank)
      if (cells[rank].second) {
        ++tp;
        os << format_double(static_cast<double>(tp) / static_cast<double>(positives))
           << ','
           << format_double(static_cast<double>(tp) / static_cast<double>(rank + 1))
           << '\n';
      }
  }
}

}  // namespace stpp
