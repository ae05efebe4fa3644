// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "stpp/io.hpp"
#include "stpp/pointprocess.hpp"
#include "stpp/tensor.hpp"
#include "stpp/tracker.hpp"

namespace stpp {

struct ScenarioConfig {
  std::size_t num_agents = 6;
  std::size_t frames = 60;
  std::size_t grid_h = 32;
  std::size_t grid_w = 32;
  double noise_rate = 0.15;       // per-source per-frame emission probability
  double confusion_rate = 0.1;    // confusing pairs ~= rate * num_agents
  double jitter_sigma = 0.5;      // corner jitter of good detections
  std::size_t noise_sources = 3;
  double noise_scatter = 3.0;     // max offset of a noisy box center from its source
  std::size_t appearance_dim = 8;
  double appearance_noise = 0.05;
  double min_box = 4.0;
  double max_box = 7.0;
  double max_speed = 0.8;  // per-axis pixels per frame

  nlohmann::json to_json() const {
    return {{"num_agents", num_agents},       {"frames", frames},
            {"grid_h", grid_h},               {"grid_w", grid_w},
            {"noise_rate", noise_rate},       {"confusion_rate", confusion_rate},
            {"jitter_sigma", jitter_sigma},   {"noise_sources", noise_sources},
            {"noise_scatter", noise_scatter}, {"appearance_dim", appearance_dim},
            {"appearance_noise", appearance_noise},
            {"min_box", min_box},             {"max_box", max_box},
            {"max_speed", max_speed}};
  }

  static ScenarioConfig from_json(const nlohmann::json& j) {
    ScenarioConfig c;
    c.num_agents = j.at("num_agents").get<std::size_t>();
    c.frames = j.at("frames").get<std::size_t>();
    c.grid_h = j.at("grid_h").get<std::size_t>();
    c.grid_w = j.at("grid_w").get<std::size_t>();
    c.noise_rate = j.at("noise_rate").get<double>();
    c.confusion_rate = j.at("confusion_rate").get<double>();
    c.jitter_sigma = j.at("jitter_sigma").get<double>();
    c.noise_sources = j.at("noise_sources").get<std::size_t>();
    c.noise_scatter = j.at("noise_scatter").get<double>();
    c.appearance_dim = j.at("appearance_dim").get<std::size_t>();
    c.appearance_noise = j.at("appearance_noise").get<double>();
    c.min_box = j.at("min_box").get<double>();
    c.max_box = j.at("max_box").get<double>();
    c.max_speed = j.at("max_speed").get<double>();
    return c;
  }
};

/// Constant-velocity walker; positions clamp so the box stays on the grid
/// for the whole lifespan.
struct Agent {
  double x0 = 0, y0 = 0;  // top-left corner at frame 0
  double vx = 0, vy = 0;
  double w = 4, h = 4;
  std::vector<double> appearance;  // unit norm
  int born = 0;
  int dies = 0;  // exclusive

  bool alive(int t) const { return t >= born && t < dies; }

  Box box_at(int t, std::size_t grid_h, std::size_t grid_w) const {
    double x = std::clamp(x0 + vx * t, 0.0, static_cast<double>(grid_w) - w);
    double y = std::clamp(y0 + vy * t, 0.0, static_cast<double>(grid_h) - h);
    return {x, y, w, h};
  }
};

struct NoiseSource {
  double cx = 0, cy = 0;
  double w = 4, h = 4;
  std::vector<double> appearance;
};

struct Scenario {
  ScenarioConfig cfg;
  std::uint64_t seed = 0;
  std::vector<Agent> agents;
  std::vector<NoiseSource> sources;
  Tensor frames;                // [T,H,W] occupancy rasters
  std::vector<Detection> dets;  // sorted by frame; labels attached

  Box gt_box(std::size_t agent, int t) const {
    return agents[agent].box_at(t, cfg.grid_h, cfg.grid_w);
  }

  /// gt trajectories keyed by 1-based agent id.
  TrajectorySet gt_trajectories() const {
    TrajectorySet out;
    for (std::size_t a = 0; a < agents.size(); ++a)
      for (int t = agents[a].born; t < agents[a].dies; ++t)
        out[static_cast<int>(a) + 1][t] = gt_box(a, t);
    return out;
  }

  /// Binary detection-mask planes, one per frame.
  std::vector<Tensor> det_masks() const {
    std::vector<Tensor> out;
    for (std::size_t t = 0; t < cfg.frames; ++t)
      out.emplace_back(std::vector<std::size_t>{cfg.grid_h, cfg.grid_w});
    for (const Detection& d : dets) {
      Tensor& m = out[static_cast<std::size_t>(d.frame)];
      PixelSpan s = box_pixels(d.box, cfg.grid_h, cfg.grid_w);
      for (std::size_t r = s.row0; r < s.row1; ++r)
        for (std::size_t c = s.col0; c < s.col1; ++c) m[r * cfg.grid_w + c] = 1.0;
    }
    return out;
  }
};

namespace detail {

inline std::vector<double> random_unit_vector(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double norm = 0;
  do {
    norm = 0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

inline std::vector<double> noisy_copy(const std::vector<double>& a, double sigma,
                                      Rng& rng) {
  std::vector<double> v = a;
  for (auto& x : v) x += sigma * rng.normal();
  return v;
}

}  // namespace detail

/// Builds a synthetic multi-agent scenario: constant-velocity agents rendered
/// as filled boxes, jittered good detections, spatially clustered noisy
/// detections from persistent sources, and near-identical appearance vectors
/// for agents constructed to cross paths. Deterministic under the seed.
inline Scenario generate_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
  if (cfg.max_box >= static_cast<double>(std::min(cfg.grid_h, cfg.grid_w)) ||
      cfg.min_box <= 0 || cfg.min_box > cfg.max_box)
    throw ConfigError("generate_scenario: boxes do not fit the grid");
  if (cfg.frames == 0 || cfg.num_agents == 0)
    throw ConfigError("generate_scenario: need at least one frame and agent");
  if (cfg.noise_rate < 0 || cfg.noise_rate > 1 || cfg.confusion_rate < 0 ||
      cfg.confusion_rate > 1)
    throw ConfigError("generate_scenario: rates must lie in [0, 1]");

  Rng rng(seed);
  Scenario sc;
  sc.cfg = cfg;
  sc.seed = seed;
  double W = static_cast<double>(cfg.grid_w), H = static_cast<double>(cfg.grid_h);

  for (std::size_t a = 0; a < cfg.num_agents; ++a) {
    Agent ag;
    ag.w = rng.uniform(cfg.min_box, cfg.max_box);
    ag.h = rng.uniform(cfg.min_box, cfg.max_box);
    ag.x0 = rng.uniform(0.0, W - ag.w);
    ag.y0 = rng.uniform(0.0, H - ag.h);
    ag.vx = rng.uniform(-cfg.max_speed, cfg.max_speed);
    ag.vy = rng.uniform(-cfg.max_speed, cfg.max_speed);
    ag.appearance = detail::random_unit_vector(cfg.appearance_dim, rng);
    ag.born = 0;
    ag.dies = static_cast<int>(cfg.frames);
    sc.agents.push_back(std::move(ag));
  }

  // confusing pairs: crossing paths plus near-identical appearances
  std::size_t pairs = static_cast<std::size_t>(
      std::llround(cfg.confusion_rate * static_cast<double>(cfg.num_agents)));
  pairs = std::min(pairs, cfg.num_agents / 2);
  for (std::size_t p = 0; p < pairs; ++p) {
    Agent& a = sc.agents[2 * p];
    Agent& b = sc.agents[2 * p + 1];
    double tc = rng.uniform(0.35, 0.65) * static_cast<double>(cfg.frames);
    double cx = rng.uniform(0.3 * W, 0.7 * W);
    double cy = rng.uniform(0.3 * H, 0.7 * H);
    a.x0 = cx - a.vx * tc;
    a.y0 = cy - a.vy * tc;
    // give b a clearly different heading through the same point
    for (int tries = 0; tries < 20; ++tries) {
      b.vx = rng.uniform(-cfg.max_speed, cfg.max_speed);
      b.vy = rng.uniform(-cfg.max_speed, cfg.max_speed);
      double dvx = b.vx - a.vx, dvy = b.vy - a.vy;
      if (dvx * dvx + dvy * dvy >= 0.25 * cfg.max_speed * cfg.max_speed) break;
    }
    b.x0 = cx - b.vx * tc;
    b.y0 = cy - b.vy * tc;
    for (int tries = 0; tries < 20; ++tries) {
      b.appearance = detail::noisy_copy(a.appearance, 0.06, rng);
      double n = std::sqrt(std::inner_product(b.appearance.begin(),
                                              b.appearance.end(),
                                              b.appearance.begin(), 0.0));
      for (auto& x : b.appearance) x /= n;
      if (cosine_similarity(a.appearance, b.appearance) >= 0.98) break;
      if (tries == 19) b.appearance = a.appearance;
    }
  }

  // persistent noise sources; most are anchored near an agent trajectory so
  // their emissions overlap traffic and a single frame cannot separate them
  std::size_t n_sources = cfg.noise_rate > 0 ? cfg.noise_sources : 0;
  for (std::size_t s = 0; s < n_sources; ++s) {
    NoiseSource src;
    src.w = rng.uniform(cfg.min_box, cfg.max_box);
    src.h = rng.uniform(cfg.min_box, cfg.max_box);
    if (rng.uniform() < 0.75) {
      const Agent& ag = sc.agents[rng.index(sc.agents.size())];
      Box at = ag.box_at(static_cast<int>(rng.index(cfg.frames)), cfg.grid_h,
                         cfg.grid_w);
      src.cx = std::clamp(at.cx() + rng.uniform(-2.0, 2.0), src.w / 2, W - src.w / 2);
      src.cy = std::clamp(at.cy() + rng.uniform(-2.0, 2.0), src.h / 2, H - src.h / 2);
    } else {
      src.cx = rng.uniform(src.w / 2, W - src.w / 2);
      src.cy = rng.uniform(src.h / 2, H - src.h / 2);
    }
    src.appearance = detail::random_unit_vector(cfg.appearance_dim, rng);
    sc.sources.push_back(std::move(src));
  }

  // render occupancy rasters
  sc.frames = Tensor({cfg.frames, cfg.grid_h, cfg.grid_w});
  for (std::size_t t = 0; t < cfg.frames; ++t)
    for (const Agent& ag : sc.agents) {
      if (!ag.alive(static_cast<int>(t))) continue;
      double shade = 0.2 + 0.8 * (ag.appearance[0] + 1.0) / 2.0;
      PixelSpan span = box_pixels(ag.box_at(static_cast<int>(t), cfg.grid_h, cfg.grid_w),
                                  cfg.grid_h, cfg.grid_w);
      for (std::size_t r = span.row0; r < span.row1; ++r)
        for (std::size_t c = span.col0; c < span.col1; ++c) {
          double& px = sc.frames[(t * cfg.grid_h + r) * cfg.grid_w + c];
          px = std::max(px, shade);
        }
    }

  // detections
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    int ti = static_cast<int>(t);
    std::vector<Box> gt_boxes;
    for (const Agent& ag : sc.agents)
      if (ag.alive(ti)) gt_boxes.push_back(ag.box_at(ti, cfg.grid_h, cfg.grid_w));

    for (const Agent& ag : sc.agents) {
      if (!ag.alive(ti)) continue;
      Box gt = ag.box_at(ti, cfg.grid_h, cfg.grid_w);
      Detection d;
      d.frame = ti;
      d.label = DetLabel::kGood;
      d.conf = rng.uniform(0.6, 1.0);
      d.box = gt;
      for (int tries = 0; tries < 10; ++tries) {
        double l = gt.left + cfg.jitter_sigma * rng.normal();
        double tp = gt.top + cfg.jitter_sigma * rng.normal();
        double r = gt.right() + cfg.jitter_sigma * rng.normal();
        double b = gt.bottom() + cfg.jitter_sigma * rng.normal();
        Box jb{l, tp, std::max(1.0, r - l), std::max(1.0, b - tp)};
        if (iou(jb, gt) >= 0.5) {
          d.box = jb;
          break;
        }
      }
      d.appearance = detail::noisy_copy(ag.appearance, cfg.appearance_noise, rng);
      sc.dets.push_back(std::move(d));
    }

    for (const NoiseSource& src : sc.sources) {
      if (rng.uniform() >= cfg.noise_rate) continue;
      for (int tries = 0; tries < 10; ++tries) {
        double r = cfg.noise_scatter * std::sqrt(rng.uniform());
        double phi = rng.uniform(0.0, 6.28318530717958647692);
        double cx = src.cx + r * std::cos(phi);
        double cy = src.cy + r * std::sin(phi);
        Box nb{std::clamp(cx - src.w / 2, 0.0, W - src.w),
               std::clamp(cy - src.h / 2, 0.0, H - src.h), src.w, src.h};
        bool clean = true;
        for (const Box& g : gt_boxes)
          if (iou(nb, g) >= 0.5) {
            clean = false;
            break;
          }
        if (!clean) continue;
        Detection d;
        d.frame = ti;
        d.label = DetLabel::kNoisy;
        d.conf = rng.uniform(0.4, 0.9);
        d.box = nb;
        d.appearance = detail::noisy_copy(src.appearance, cfg.appearance_noise, rng);
        sc.dets.push_back(std::move(d));
        break;
      }
    }
  }
  return sc;
}

/// Relabels detections whose trajectory disagrees with their IoU-max ground
/// truth agent as confusing. Trajectories vote by majority over their member
/// detections; noisy labels take precedence and are never rewritten.
inline void label_confusing(Scenario& sc, std::span<const Trajectory> trajectories) {
  std::vector<int> det_agent(sc.dets.size(), -1);
  for (std::size_t i = 0; i < sc.dets.size(); ++i) {
    double best = 0.5;  // matching threshold
    for (std::size_t a = 0; a < sc.agents.size(); ++a) {
      if (!sc.agents[a].alive(sc.dets[i].frame)) continue;
      double ov = iou(sc.dets[i].box, sc.gt_box(a, sc.dets[i].frame));
      if (ov >= best) {
        best = ov;
        det_agent[i] = static_cast<int>(a);
      }
    }
  }
  std::vector<int> det_traj(sc.dets.size(), -1);
  for (std::size_t ti = 0; ti < trajectories.size(); ++ti)
    for (std::size_t src : trajectories[ti].src) {
      if (src >= sc.dets.size())
        throw std::invalid_argument("label_confusing: trajectory references unknown detection");
      det_traj[src] = static_cast<int>(ti);
    }
  // majority agent per trajectory
  std::vector<std::map<int, int>> votes(trajectories.size());
  for (std::size_t i = 0; i < sc.dets.size(); ++i)
    if (det_traj[i] >= 0 && det_agent[i] >= 0)
      votes[static_cast<std::size_t>(det_traj[i])][det_agent[i]]++;
  std::vector<int> traj_agent(trajectories.size(), -1);
  for (std::size_t ti = 0; ti < trajectories.size(); ++ti) {
    int best_count = 0;
    for (const auto& [agent, count] : votes[ti])
      if (count > best_count) {
        best_count = count;
        traj_agent[ti] = agent;
      }
  }
  for (std::size_t i = 0; i < sc.dets.size(); ++i) {
    if (sc.dets[i].label == DetLabel::kNoisy) continue;  // precedence
    if (det_agent[i] < 0 || det_traj[i] < 0) continue;
    if (traj_agent[static_cast<std::size_t>(det_traj[i])] != det_agent[i])
      sc.dets[i].label = DetLabel::kConfusing;
  }
}

/// Per-frame union of the pixels inside noisy and confusing boxes.
inline std::vector<EventGrid> events_from_labels(const Scenario& sc) {
  std::vector<EventGrid> out;
  for (std::size_t t = 0; t < sc.cfg.frames; ++t)
    out.emplace_back(static_cast<int>(t), sc.cfg.grid_h, sc.cfg.grid_w);
  for (const Detection& d : sc.dets) {
    if (d.label == DetLabel::kGood) continue;
    EventGrid& g = out[static_cast<std::size_t>(d.frame)];
    PixelSpan s = box_pixels(d.box, sc.cfg.grid_h, sc.cfg.grid_w);
    for (std::size_t r = s.row0; r < s.row1; ++r)
      for (std::size_t c = s.col0; c < s.col1; ++c) g.set(r, c, true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario directory layout:
//   manifest.json  config + seed + agents + noise sources (schema_version 1)
//   frames.bin     [T,H,W] tensor record
//   dets.csv       MOT rows + label + appearance columns
//   gt.csv         MOT rows of ground-truth agent boxes (1-based ids)

inline void save_scenario(const std::filesystem::path& dir, const Scenario& sc) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  manifest["seed"] = sc.seed;
  manifest["config"] = sc.cfg.to_json();
  auto agents = nlohmann::json::array();
  for (const Agent& a : sc.agents)
    agents.push_back({{"x0", a.x0},
                      {"y0", a.y0},
                      {"vx", a.vx},
                      {"vy", a.vy},
                      {"w", a.w},
                      {"h", a.h},
                      {"born", a.born},
                      {"dies", a.dies},
                      {"appearance", a.appearance}});
  manifest["agents"] = agents;
  auto sources = nlohmann::json::array();
  for (const NoiseSource& s : sc.sources)
    sources.push_back({{"cx", s.cx},
                       {"cy", s.cy},
                       {"w", s.w},
                       {"h", s.h},
                       {"appearance", s.appearance}});
  manifest["noise_sources"] = sources;
  std::ofstream mj(dir / "manifest.json");
  mj << manifest.dump(2) << '\n';

  std::ofstream fb(dir / "frames.bin", std::ios::binary);
  sc.frames.write(fb);

  std::ofstream dc(dir / "dets.csv");
  write_mot_detections(dc, sc.dets, true);

  std::ofstream gc(dir / "gt.csv");
  std::vector<Detection> gt_rows;
  for (std::size_t a = 0; a < sc.agents.size(); ++a)
    for (int t = sc.agents[a].born; t < sc.agents[a].dies; ++t) {
      Detection d;
      d.frame = t;
      d.id = static_cast<int>(a) + 1;
      d.box = sc.gt_box(a, t);
      d.conf = 1.0;
      gt_rows.push_back(d);
    }
  write_mot_detections(gc, gt_rows, false);
}

inline Scenario load_scenario(const std::filesystem::path& dir) {
  std::ifstream mj(dir / "manifest.json");
  if (!mj) throw DataError((dir / "manifest.json").string() + ": cannot open");
  nlohmann::json manifest = nlohmann::json::parse(mj, nullptr, false);
  if (manifest.is_discarded())
    throw DataError((dir / "manifest.json").string() + ": invalid JSON");
  Scenario sc;
  sc.cfg = ScenarioConfig::from_json(manifest.at("config"));
  sc.seed = manifest.at("seed").get<std::uint64_t>();
  for (const auto& a : manifest.at("agents")) {
    Agent ag;
    ag.x0 = a.at("x0").get<double>();
    ag.y0 = a.at("y0").get<double>();
    ag.vx = a.at("vx").get<double>();
    ag.vy = a.at("vy").get<double>();
    ag.w = a.at("w").get<double>();
    ag.h = a.at("h").get<double>();
    ag.born = a.at("born").get<int>();
    ag.dies = a.at("dies").get<int>();
    ag.appearance = a.at("appearance").get<std::vector<double>>();
    sc.agents.push_back(std::move(ag));
  }
  for (const auto& s : manifest.at("noise_sources")) {
    NoiseSource src;
    src.cx = s.at("cx").get<double>();
    src.cy = s.at("cy").get<double>();
    src.w = s.at("w").get<double>();
    src.h = s.at("h").get<double>();
    src.appearance = s.at("appearance").get<std::vector<double>>();
    sc.sources.push_back(std::move(src));
  }
  std::ifstream fb(dir / "frames.bin", std::ios::binary);
  if (!fb) throw DataError((dir / "frames.bin").string() + ": cannot open");
  sc.frames = Tensor::read(fb);
  sc.dets = parse_mot_csv((dir / "dets.csv").string());
  return sc;
}

}  // namespace stpp
