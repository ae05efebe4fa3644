// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "stpp/detections.hpp"

namespace stpp {

struct TrackerConfig {
  double theta_a = 0.8;  // appearance gate for frame-to-frame links
  double theta_m = 0.3;  // IoU gate for frame-to-frame links
  double s_c = 0.5;      // density / center threshold
  std::size_t similarity_pairs = 3;  // terminal pairs per side
};

/// Chain of detections over strictly consecutive frames.
struct Tracklet {
  std::vector<Detection> dets;
  std::vector<std::size_t> src;  // indices into the detection span given to track()

  int start_frame() const { return dets.front().frame; }
  int end_frame() const { return dets.back().frame; }
  std::size_t length() const { return dets.size(); }

  bool overlaps(const Tracklet& o) const {
    return start_frame() <= o.end_frame() && o.start_frame() <= end_frame();
  }

  /// Mean per-frame center displacement; zero for single detections.
  void velocity(double& vx, double& vy) const {
    if (dets.size() < 2) {
      vx = vy = 0.0;
      return;
    }
    double span = static_cast<double>(dets.back().frame - dets.front().frame);
    vx = (dets.back().box.cx() - dets.front().box.cx()) / span;
    vy = (dets.back().box.cy() - dets.front().box.cy()) / span;
  }
};

/// Greedy frame-to-frame linking: a detection at frame t links to one at
/// frame t+1 iff appearance cosine >= theta_a and IoU >= theta_m, candidates
/// taken in descending cosine*IoU score, one-to-one. Everything unlinked
/// starts a new tracklet.
inline std::vector<Tracklet> build_tracklets(std::span<const Detection> dets,
                                             double theta_a, double theta_m) {
  for (const Detection& d : dets)
    if (d.appearance.empty())
      throw std::invalid_argument("build_tracklets: detections need appearance features");

  std::map<int, std::vector<std::size_t>> by_frame;
  for (std::size_t i = 0; i < dets.size(); ++i) by_frame[dets[i].frame].push_back(i);

  std::vector<Tracklet> tracklets;
  std::map<std::size_t, std::size_t> owner;  // det index -> tracklet index
  auto start_new = [&](std::size_t di) {
    owner[di] = tracklets.size();
    Tracklet t;
    t.dets.push_back(dets[di]);
    t.src.push_back(di);
    tracklets.push_back(std::move(t));
  };

  int prev_frame = 0;
  bool have_prev = false;
  std::vector<std::size_t> prev_dets;
  for (const auto& [frame, cur] : by_frame) {
    if (!have_prev || frame != prev_frame + 1) {
      for (std::size_t di : cur) start_new(di);
    } else {
      struct Cand {
        double score;
        std::size_t pi, ci;
      };
      std::vector<Cand> cands;
      for (std::size_t pi : prev_dets)
        for (std::size_t ci : cur) {
          double ca = cosine_similarity(dets[pi].appearance, dets[ci].appearance);
          double mi = iou(dets[pi].box, dets[ci].box);
          if (ca >= theta_a && mi >= theta_m) cands.push_back({ca * mi, pi, ci});
        }
      std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.pi != b.pi) return a.pi < b.pi;
        return a.ci < b.ci;
      });
      std::map<std::size_t, bool> used_prev, used_cur;
      for (const Cand& c : cands) {
        if (used_prev[c.pi] || used_cur[c.ci]) continue;
        used_prev[c.pi] = used_cur[c.ci] = true;
        std::size_t ti = owner[c.pi];
        tracklets[ti].dets.push_back(dets[c.ci]);
        tracklets[ti].src.push_back(c.ci);
        owner[c.ci] = ti;
      }
      for (std::size_t ci : cur)
        if (!used_cur[ci]) start_new(ci);
    }
    prev_frame = frame;
    have_prev = true;
    prev_dets = cur;
  }
  return tracklets;
}

/// Appearance-and-motion similarity in [0, 1]: the mean over the k
/// nearest-in-time detection pairs of clipped appearance cosine times the
/// IoU of the constant-velocity extrapolated box. Temporally overlapping
/// tracklets pair detections on their shared frames instead.
inline double tracklet_similarity(const Tracklet& a, const Tracklet& b,
                                  std::size_t k = 3) {
  const Tracklet& first = a.start_frame() <= b.start_frame() ? a : b;
  const Tracklet& second = a.start_frame() <= b.start_frame() ? b : a;

  struct Pair {
    const Detection* p;
    const Detection* q;
  };
  std::vector<Pair> pairs;
  if (first.end_frame() < second.start_frame()) {
    std::size_t n = std::min({k, first.length(), second.length()});
    for (std::size_t i = 0; i < n; ++i)
      pairs.push_back({&first.dets[first.length() - 1 - i], &second.dets[i]});
  } else {
    int lo = std::max(first.start_frame(), second.start_frame());
    int hi = std::min(first.end_frame(), second.end_frame());
    for (int f = lo; f <= hi && pairs.size() < k; ++f)
      pairs.push_back({&first.dets[static_cast<std::size_t>(f - first.start_frame())],
                       &second.dets[static_cast<std::size_t>(f - second.start_frame())]});
  }
  if (pairs.empty()) return 0.0;

  double vx, vy;
  first.velocity(vx, vy);
  double acc = 0.0;
  for (const Pair& pr : pairs) {
    double ca = std::clamp(cosine_similarity(pr.p->appearance, pr.q->appearance), 0.0, 1.0);
    double dt = static_cast<double>(pr.q->frame - pr.p->frame);
    Box moved = pr.p->box;
    moved.left += vx * dt;
    moved.top += vy * dt;
    double gate = std::clamp(iou(moved, pr.q->box), 0.0, 1.0);
    acc += ca * gate;
  }
  return acc / static_cast<double>(pairs.size());
}

struct SimilarityMatrix {
  std::size_t n = 0;
  std::vector<double> s;              // row-major n x n, diagonal 1
  std::vector<std::uint8_t> overlap;  // 1 iff frame ranges intersect

  double sim(std::size_t i, std::size_t j) const { return s[i * n + j]; }
  bool overlapping(std::size_t i, std::size_t j) const { return overlap[i * n + j] != 0; }
};

inline SimilarityMatrix similarity_matrix(std::span<const Tracklet> tracklets,
                                          std::size_t k = 3) {
  SimilarityMatrix m;
  m.n = tracklets.size();
  m.s.assign(m.n * m.n, 0.0);
  m.overlap.assign(m.n * m.n, 0);
  for (std::size_t i = 0; i < m.n; ++i) {
    m.s[i * m.n + i] = 1.0;
    m.overlap[i * m.n + i] = 1;
    for (std::size_t j = i + 1; j < m.n; ++j) {
      double sij = tracklet_similarity(tracklets[i], tracklets[j], k);
      m.s[i * m.n + j] = m.s[j * m.n + i] = sij;
      std::uint8_t ov = tracklets[i].overlaps(tracklets[j]) ? 1 : 0;
      m.overlap[i * m.n + j] = m.overlap[j * m.n + i] = ov;
    }
  }
  return m;
}

/// Number of non-overlapping tracklets with similarity strictly above s_c
/// (Heaviside with H(0) = 0).
inline int local_density(const SimilarityMatrix& m, std::size_t i, double s_c) {
  if (s_c <= 0.0 || s_c >= 1.0)
    throw ConfigError("local_density: s_c must lie in (0, 1)");
  int rho = 0;
  for (std::size_t j = 0; j < m.n; ++j)
    if (j != i && !m.overlapping(i, j) && m.sim(i, j) > s_c) ++rho;
  return rho;
}

inline std::vector<int> local_densities(const SimilarityMatrix& m, double s_c) {
  std::vector<int> rho(m.n);
  for (std::size_t i = 0; i < m.n; ++i) rho[i] = local_density(m, i, s_c);
  return rho;
}

/// Density ties are broken by index so "denser than" is a strict total
/// order: j outranks i iff rho_j > rho_i, or rho_j == rho_i and j < i.
inline bool outranks(std::span<const int> rho, std::size_t j, std::size_t i) {
  return rho[j] > rho[i] || (rho[j] == rho[i] && j < i);
}

/// Maximum similarity toward any outranking non-overlapping tracklet; zero
/// when no such tracklet exists (which forces center status).
inline double max_similarity(const SimilarityMatrix& m, std::span<const int> rho,
                             std::size_t i) {
  double best = 0.0;
  for (std::size_t j = 0; j < m.n; ++j)
    if (j != i && !m.overlapping(i, j) && outranks(rho, j, i))
      best = std::max(best, m.sim(i, j));
  return best;
}

/// Density-peak assignment: tracklets whose maximum similarity stays below
/// s_c become centers; the rest, processed in rank order, join the cluster
/// of their most similar outranking non-overlapping tracklet (smallest index
/// on ties). Returns a cluster id per tracklet.
inline std::vector<int> cluster_tracklets(const SimilarityMatrix& m, double s_c) {
  std::vector<int> rho = local_densities(m, s_c);
  std::vector<int> cluster(m.n, -1);
  int next_id = 0;
  for (std::size_t i = 0; i < m.n; ++i)
    if (max_similarity(m, rho, i) < s_c) cluster[i] = next_id++;

  std::vector<std::size_t> order(m.n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rho[a] != rho[b]) return rho[a] > rho[b];
    return a < b;
  });
  for (std::size_t i : order) {
    if (cluster[i] >= 0) continue;
    std::size_t best_j = m.n;
    double best_s = -1.0;
    for (std::size_t j = 0; j < m.n; ++j)
      if (j != i && !m.overlapping(i, j) && outranks(rho, j, i) &&
          m.sim(i, j) > best_s) {
        best_s = m.sim(i, j);
        best_j = j;
      }
    cluster[i] = cluster[best_j];  // best_j outranks i, so it is assigned
  }
  return cluster;
}

struct TrajectoryBox {
  int frame = 0;
  Box box;
  double conf = 1.0;
  bool interpolated = false;
};

/// Cluster of tracklets merged into one contiguous per-frame box sequence.
struct Trajectory {
  int id = 0;
  std::vector<TrajectoryBox> boxes;
  std::vector<std::size_t> src;  // original indices of the real detections
};

/// Concatenates non-overlapping tracklets in time order and fills frame gaps
/// by per-coordinate linear interpolation of the box corners (and the
/// confidence). Original detections pass through unchanged.
inline Trajectory interpolate(std::span<const Tracklet> cluster) {
  if (cluster.empty()) throw std::invalid_argument("interpolate: empty cluster");
  std::vector<const Tracklet*> order;
  for (const Tracklet& t : cluster) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](const Tracklet* a, const Tracklet* b) {
    return a->start_frame() < b->start_frame();
  });
  for (std::size_t i = 0; i + 1 < order.size(); ++i)
    if (order[i]->end_frame() >= order[i + 1]->start_frame())
      throw std::invalid_argument("interpolate: tracklets overlap in time");

  Trajectory out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0) {
      const Detection& a = order[i - 1]->dets.back();
      const Detection& b = order[i]->dets.front();
      int span = b.frame - a.frame;
      for (int f = a.frame + 1; f < b.frame; ++f) {
        double u = static_cast<double>(f - a.frame) / span;
        Box bx;
        bx.left = a.box.left + u * (b.box.left - a.box.left);
        bx.top = a.box.top + u * (b.box.top - a.box.top);
        double right = a.box.right() + u * (b.box.right() - a.box.right());
        double bottom = a.box.bottom() + u * (b.box.bottom() - a.box.bottom());
        bx.width = right - bx.left;
        bx.height = bottom - bx.top;
        out.boxes.push_back({f, bx, a.conf + u * (b.conf - a.conf), true});
      }
    }
    for (std::size_t d = 0; d < order[i]->dets.size(); ++d) {
      const Detection& det = order[i]->dets[d];
      out.boxes.push_back({det.frame, det.box, det.conf, false});
      out.src.push_back(order[i]->src[d]);
    }
  }
  return out;
}

/// Full tracker: link, score, cluster, interpolate. Trajectory ids are
/// assigned in order of first frame (ties by first detection index).
inline std::vector<Trajectory> track(std::span<const Detection> dets,
                                     const TrackerConfig& cfg = {}) {
  std::vector<Trajectory> out;
  if (dets.empty()) return out;
  std::vector<Tracklet> tracklets = build_tracklets(dets, cfg.theta_a, cfg.theta_m);
  SimilarityMatrix m = similarity_matrix(tracklets, cfg.similarity_pairs);
  std::vector<int> cluster = cluster_tracklets(m, cfg.s_c);
  int n_clusters = 0;
  for (int c : cluster) n_clusters = std::max(n_clusters, c + 1);
  for (int c = 0; c < n_clusters; ++c) {
    std::vector<Tracklet> members;
    for (std::size_t i = 0; i < tracklets.size(); ++i)
      if (cluster[i] == c) members.push_back(tracklets[i]);
    out.push_back(interpolate(members));
  }
  std::sort(out.begin(), out.end(), [](const Trajectory& a, const Trajectory& b) {
    if (a.boxes.front().frame != b.boxes.front().frame)
      return a.boxes.front().frame < b.boxes.front().frame;
    return a.src.front() < b.src.front();
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<int>(i + 1);
  return out;
}

/// MOTChallenge text format: frame,id,left,top,width,height,conf,-1,-1,-1
inline void write_mot_trajectories(std::ostream& os,
                                   std::span<const Trajectory> trajectories) {
  for (const Trajectory& t : trajectories)
    for (const TrajectoryBox& b : t.boxes)
      os << b.frame << ',' << t.id << ',' << format_double(b.box.left) << ','
         << format_double(b.box.top) << ',' << format_double(b.box.width) << ','
         << format_double(b.box.height) << ',' << format_double(b.conf)
         << ",-1,-1,-1\n";
}

}  // namespace stpp
