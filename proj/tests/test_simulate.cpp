// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "stpp/simulate.hpp"

using namespace stpp;

namespace {

ScenarioConfig small_cfg() {
  ScenarioConfig cfg;
  cfg.num_agents = 4;
  cfg.frames = 30;
  cfg.grid_h = cfg.grid_w = 24;
  cfg.noise_rate = 0.3;
  cfg.confusion_rate = 0.25;  // one pair
  cfg.noise_sources = 2;
  return cfg;
}

}  // namespace

TEST(Generate, CleanConfigYieldsOnlyGoodLabels) {
  ScenarioConfig cfg = small_cfg();
  cfg.noise_rate = 0.0;
  cfg.confusion_rate = 0.0;
  Scenario sc = generate_scenario(cfg, 3);
  EXPECT_FALSE(sc.dets.empty());
  for (const Detection& d : sc.dets) EXPECT_EQ(d.label, DetLabel::kGood);
}

TEST(Generate, SeededRunsAreBitIdentical) {
  Scenario a = generate_scenario(small_cfg(), 17);
  Scenario b = generate_scenario(small_cfg(), 17);
  EXPECT_EQ(a.frames.vec(), b.frames.vec());
  ASSERT_EQ(a.dets.size(), b.dets.size());
  for (std::size_t i = 0; i < a.dets.size(); ++i) {
    EXPECT_EQ(a.dets[i].box, b.dets[i].box);
    EXPECT_EQ(a.dets[i].appearance, b.dets[i].appearance);
    EXPECT_EQ(a.dets[i].label, b.dets[i].label);
  }
  Scenario c = generate_scenario(small_cfg(), 18);
  EXPECT_NE(a.frames.vec(), c.frames.vec());
}

TEST(Generate, NoisyBoxesStayNearTheirSources) {
  ScenarioConfig cfg = small_cfg();
  cfg.frames = 100;
  cfg.noise_rate = 0.5;
  cfg.noise_sources = 2;
  Scenario sc = generate_scenario(cfg, 5);
  std::size_t noisy = 0;
  for (const Detection& d : sc.dets) {
    if (d.label != DetLabel::kNoisy) continue;
    ++noisy;
    double best = 1e18;
    for (const NoiseSource& s : sc.sources) {
      double dx = d.box.cx() - s.cx, dy = d.box.cy() - s.cy;
      best = std::min(best, std::sqrt(dx * dx + dy * dy));
    }
    EXPECT_LE(best, cfg.noise_scatter + 1e-9);
  }
  EXPECT_GT(noisy, 50u);  // 2 sources x 100 frames x 0.5, minus crowded skips
}

TEST(Generate, LabelSoundness) {
  Scenario sc = generate_scenario(small_cfg(), 11);
  for (const Detection& d : sc.dets) {
    double best = 0.0;
    for (std::size_t a = 0; a < sc.agents.size(); ++a)
      if (sc.agents[a].alive(d.frame))
        best = std::max(best, iou(d.box, sc.gt_box(a, d.frame)));
    if (d.label == DetLabel::kNoisy)
      EXPECT_LT(best, 0.5);
    else
      EXPECT_GE(best, 0.5);
  }
}

TEST(Generate, ConfusingPairSharesAppearance) {
  ScenarioConfig cfg = small_cfg();
  Scenario sc = generate_scenario(cfg, 23);
  double cs = cosine_similarity(sc.agents[0].appearance, sc.agents[1].appearance);
  EXPECT_GE(cs, 0.98);
  // paths genuinely cross: boxes overlap at some frame
  bool crossed = false;
  for (std::size_t t = 0; t < cfg.frames; ++t)
    if (iou(sc.gt_box(0, static_cast<int>(t)), sc.gt_box(1, static_cast<int>(t))) > 0)
      crossed = true;
  EXPECT_TRUE(crossed);
}

TEST(Generate, InfeasibleConfigRejected) {
  ScenarioConfig cfg = small_cfg();
  cfg.max_box = 50;  // larger than the grid
  EXPECT_THROW(generate_scenario(cfg, 1), ConfigError);
}

TEST(EventsFromLabels, CleanScenarioHasEmptyGrids) {
  ScenarioConfig cfg = small_cfg();
  cfg.noise_rate = 0;
  cfg.confusion_rate = 0;
  Scenario sc = generate_scenario(cfg, 3);
  for (const EventGrid& g : events_from_labels(sc)) EXPECT_FALSE(g.any());
}

TEST(EventsFromLabels, CountsBoxPixelsOnce) {
  Scenario sc;
  sc.cfg = small_cfg();
  sc.cfg.frames = 1;
  Detection d;
  d.frame = 0;
  d.box = {2, 3, 2, 2};
  d.label = DetLabel::kNoisy;
  sc.dets.push_back(d);
  auto grids = events_from_labels(sc);
  EXPECT_EQ(grids[0].count(), 4u);

  Detection d2 = d;  // overlapping second bad box, shifted one pixel
  d2.box = {3, 3, 2, 2};
  d2.label = DetLabel::kConfusing;
  sc.dets.push_back(d2);
  grids = events_from_labels(sc);
  EXPECT_EQ(grids[0].count(), 6u);  // union of 4 + 4 with 2 shared
}

TEST(LabelConfusing, PerfectTrackerLeavesLabelsAlone) {
  ScenarioConfig cfg = small_cfg();
  cfg.noise_rate = 0;
  Scenario sc = generate_scenario(cfg, 31);
  // one trajectory per agent with exactly its own detections
  std::vector<Trajectory> perfect(sc.agents.size());
  for (std::size_t i = 0; i < sc.dets.size(); ++i) {
    std::size_t owner = 0;
    double best = 0;
    for (std::size_t a = 0; a < sc.agents.size(); ++a) {
      double ov = iou(sc.dets[i].box, sc.gt_box(a, sc.dets[i].frame));
      if (ov > best) {
        best = ov;
        owner = a;
      }
    }
    perfect[owner].src.push_back(i);
  }
  label_confusing(sc, perfect);
  for (const Detection& d : sc.dets) EXPECT_NE(d.label, DetLabel::kConfusing);
}

TEST(LabelConfusing, ForcedSwapMarksSwappedDetections) {
  // two agents moving on parallel lanes; hand-built detections and an
  // id-swapping tracker output
  Scenario sc;
  sc.cfg = small_cfg();
  sc.cfg.num_agents = 2;
  sc.cfg.frames = 10;
  sc.cfg.noise_rate = 0;
  Agent a;
  a.x0 = 1;
  a.y0 = 2;
  a.vx = 1.2;
  a.vy = 0;
  a.w = a.h = 4;
  a.born = 0;
  a.dies = 10;
  a.appearance = {1, 0};
  Agent b = a;
  b.y0 = 14;
  b.appearance = {0, 1};
  sc.agents = {a, b};
  for (int f = 0; f < 10; ++f)
    for (std::size_t ag = 0; ag < 2; ++ag) {
      Detection d;
      d.frame = f;
      d.box = sc.gt_box(ag, f);
      d.appearance = sc.agents[ag].appearance;
      sc.dets.push_back(d);
    }
  // det index: frame f, agent ag -> 2*f + ag
  Trajectory t0, t1;
  for (int f = 0; f < 10; ++f) {
    bool swap = f >= 6;
    t0.src.push_back(static_cast<std::size_t>(2 * f + (swap ? 1 : 0)));
    t1.src.push_back(static_cast<std::size_t>(2 * f + (swap ? 0 : 1)));
  }
  std::vector<Trajectory> out = {t0, t1};
  label_confusing(sc, out);
  for (int f = 0; f < 10; ++f)
    for (int ag = 0; ag < 2; ++ag) {
      DetLabel got = sc.dets[static_cast<std::size_t>(2 * f + ag)].label;
      if (f >= 6)
        EXPECT_EQ(got, DetLabel::kConfusing) << "frame " << f << " agent " << ag;
      else
        EXPECT_EQ(got, DetLabel::kGood) << "frame " << f << " agent " << ag;
    }
}

TEST(LabelConfusing, NoisyLabelsTakePrecedence) {
  Scenario sc;
  sc.cfg = small_cfg();
  sc.cfg.frames = 1;
  Agent a;
  a.x0 = a.y0 = 2;
  a.w = a.h = 4;
  a.born = 0;
  a.dies = 1;
  a.appearance = {1, 0};
  sc.agents = {a};
  Detection d;
  d.frame = 0;
  d.box = {15, 15, 4, 4};  // far from the agent
  d.label = DetLabel::kNoisy;
  d.appearance = {1, 0};
  sc.dets.push_back(d);
  Trajectory t;
  t.src = {0};
  std::vector<Trajectory> out = {t};
  label_confusing(sc, out);
  EXPECT_EQ(sc.dets[0].label, DetLabel::kNoisy);
}

TEST(ScenarioIo, DirectoryRoundTrip) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "stppmot_scenario_test";
  fs::remove_all(dir);
  Scenario sc = generate_scenario(small_cfg(), 77);
  // attach some non-good labels to exercise the label column
  sc.dets[0].label = DetLabel::kConfusing;
  save_scenario(dir, sc);
  Scenario back = load_scenario(dir);
  EXPECT_EQ(back.seed, sc.seed);
  EXPECT_EQ(back.frames.vec(), sc.frames.vec());
  ASSERT_EQ(back.agents.size(), sc.agents.size());
  for (std::size_t i = 0; i < sc.agents.size(); ++i) {
    EXPECT_EQ(back.agents[i].x0, sc.agents[i].x0);
    EXPECT_EQ(back.agents[i].appearance, sc.agents[i].appearance);
  }
  ASSERT_EQ(back.dets.size(), sc.dets.size());
  for (std::size_t i = 0; i < sc.dets.size(); ++i) {
    EXPECT_EQ(back.dets[i].box, sc.dets[i].box);
    EXPECT_EQ(back.dets[i].label, sc.dets[i].label);
    EXPECT_EQ(back.dets[i].appearance, sc.dets[i].appearance);
  }
  fs::remove_all(dir);
}

TEST(ScenarioHelpers, MasksAndGtAreConsistent) {
  Scenario sc = generate_scenario(small_cfg(), 41);
  auto masks = sc.det_masks();
  ASSERT_EQ(masks.size(), sc.cfg.frames);
  for (const Tensor& m : masks)
    for (double v : m.vec()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  TrajectorySet gt = sc.gt_trajectories();
  EXPECT_EQ(gt.size(), sc.agents.size());
  for (const auto& [id, frames] : gt) EXPECT_EQ(frames.size(), sc.cfg.frames);
}
