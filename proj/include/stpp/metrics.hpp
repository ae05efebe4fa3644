// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "stpp/detections.hpp"
#include "stpp/pointprocess.hpp"

namespace stpp {

namespace detail {

/// Minimum-cost perfect assignment on a square cost matrix (Kuhn-Munkres
/// with potentials, O(n^3)). Returns the column assigned to each row.
inline std::vector<int> assign_min_cost(const std::vector<std::vector<double>>& cost) {
  int n = static_cast<int>(cost.size());
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, INF);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], j1 = -1;
      double delta = INF;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

constexpr double kMatchIouThreshold = 0.5;

struct FrameMatching {
  struct Match {
    int gt_id;
    int pred_id;
    double iou;
  };
  std::vector<Match> matches;
  std::vector<int> unmatched_gt;
  std::vector<int> unmatched_pred;
};

using IdBoxes = std::vector<std::pair<int, Box>>;

/// CLEAR matching for one frame: matches persisting from the previous frame
/// are kept first when they still overlap enough, then the remaining boxes
/// get an optimal one-to-one assignment maximizing total IoU among pairs at
/// or above the 0.5 threshold.
inline FrameMatching match_frame(const IdBoxes& gt, const IdBoxes& pred,
                                 const std::map<int, int>& prev_matches) {
  FrameMatching out;
  std::vector<bool> gt_used(gt.size(), false), pred_used(pred.size(), false);

  for (std::size_t gi = 0; gi < gt.size(); ++gi) {
    auto it = prev_matches.find(gt[gi].first);
    if (it == prev_matches.end()) continue;
    for (std::size_t pi = 0; pi < pred.size(); ++pi) {
      if (pred_used[pi] || pred[pi].first != it->second) continue;
      double ov = iou(gt[gi].second, pred[pi].second);
      if (ov >= kMatchIouThreshold) {
        out.matches.push_back({gt[gi].first, pred[pi].first, ov});
        gt_used[gi] = pred_used[pi] = true;
      }
      break;
    }
  }

  std::vector<std::size_t> free_gt, free_pred;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (!gt_used[i]) free_gt.push_back(i);
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (!pred_used[i]) free_pred.push_back(i);

  if (!free_gt.empty() && !free_pred.empty()) {
    std::size_t n = std::max(free_gt.size(), free_pred.size());
    std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
    for (std::size_t a = 0; a < free_gt.size(); ++a)
      for (std::size_t b = 0; b < free_pred.size(); ++b) {
        double ov = iou(gt[free_gt[a]].second, pred[free_pred[b]].second);
        if (ov >= kMatchIouThreshold) cost[a][b] = -ov;
      }
    std::vector<int> row_to_col = detail::assign_min_cost(cost);
    for (std::size_t a = 0; a < free_gt.size(); ++a) {
      int b = row_to_col[a];
      if (b >= 0 && static_cast<std::size_t>(b) < free_pred.size() &&
          cost[a][static_cast<std::size_t>(b)] < 0.0) {
        double ov = -cost[a][static_cast<std::size_t>(b)];
        out.matches.push_back(
            {gt[free_gt[a]].first, pred[free_pred[static_cast<std::size_t>(b)]].first, ov});
        gt_used[free_gt[a]] = true;
        pred_used[free_pred[static_cast<std::size_t>(b)]] = true;
      }
    }
  }

  for (std::size_t i = 0; i < gt.size(); ++i)
    if (!gt_used[i]) out.unmatched_gt.push_back(gt[i].first);
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (!pred_used[i]) out.unmatched_pred.push_back(pred[i].first);
  return out;
}

struct MotReport {
  double mota = 0.0;  // fraction, 1 is perfect
  double motp = 0.0;  // mean matched IoU x 100
  double mt = 0.0;    // fraction of gt tracks matched in >= 80% of their frames
  double ml = 0.0;    // fraction matched in <= 20%
  long long fp = 0;
  long long fn = 0;
  long long ids = 0;
  long long gt_total = 0;

  nlohmann::json to_json() const {
    return {{"mota", mota}, {"motp", motp}, {"mt", mt},       {"ml", ml},
            {"fp", fp},     {"fn", fn},     {"ids", ids},     {"gt_total", gt_total}};
  }
};

/// id -> (frame -> box)
using TrajectorySet = std::map<int, std::map<int, Box>>;

inline MotReport clear_mot(const TrajectorySet& gt, const TrajectorySet& pred) {
  long long gt_total = 0;
  for (const auto& [id, frames] : gt) gt_total += static_cast<long long>(frames.size());
  if (gt_total == 0) throw std::invalid_argument("clear_mot: no ground-truth boxes");

  std::map<int, IdBoxes> gt_by_frame, pred_by_frame;
  for (const auto& [id, frames] : gt)
    for (const auto& [f, box] : frames) gt_by_frame[f].push_back({id, box});
  for (const auto& [id, frames] : pred)
    for (const auto& [f, box] : frames) pred_by_frame[f].push_back({id, box});

  std::map<int, int> prev_matches;   // gt id -> pred id in the previous frame
  std::map<int, int> last_pred;      // most recent pred id ever matched to a gt
  std::map<int, long long> matched_frames;
  MotReport rep;
  rep.gt_total = gt_total;
  double iou_sum = 0.0;
  long long match_count = 0;

  std::map<int, char> all_frames;
  for (const auto& [f, v] : gt_by_frame) all_frames[f] = 1;
  for (const auto& [f, v] : pred_by_frame) all_frames[f] = 1;

  for (const auto& [f, unused] : all_frames) {
    static const IdBoxes empty;
    const IdBoxes& g = gt_by_frame.count(f) ? gt_by_frame[f] : empty;
    const IdBoxes& p = pred_by_frame.count(f) ? pred_by_frame[f] : empty;
    FrameMatching fm = match_frame(g, p, prev_matches);
    rep.fn += static_cast<long long>(fm.unmatched_gt.size());
    rep.fp += static_cast<long long>(fm.unmatched_pred.size());
    prev_matches.clear();
    for (const auto& m : fm.matches) {
      prev_matches[m.gt_id] = m.pred_id;
      iou_sum += m.iou;
      ++match_count;
      ++matched_frames[m.gt_id];
      auto it = last_pred.find(m.gt_id);
      if (it != last_pred.end() && it->second != m.pred_id) ++rep.ids;
      last_pred[m.gt_id] = m.pred_id;
    }
  }

  rep.mota = 1.0 - static_cast<double>(rep.fn + rep.fp + rep.ids) /
                       static_cast<double>(gt_total);
  rep.motp = match_count ? 100.0 * iou_sum / static_cast<double>(match_count) : 0.0;
  long long mt = 0, ml = 0;
  for (const auto& [id, frames] : gt) {
    double covered = static_cast<double>(matched_frames[id]) /
                     static_cast<double>(frames.size());
    if (covered >= 0.8) ++mt;
    if (covered <= 0.2) ++ml;
  }
  rep.mt = static_cast<double>(mt) / static_cast<double>(gt.size());
  rep.ml = static_cast<double>(ml) / static_cast<double>(gt.size());
  return rep;
}

/// Average precision of ranking all cells by intensity with event cells as
/// positives; all-point interpolation, ties broken by (frame, row, col).
inline double event_ap(std::span<const IntensityMap> lams,
                       std::span<const EventGrid> gts) {
  if (lams.size() != gts.size())
    throw std::invalid_argument("event_ap: frame counts differ");
  std::vector<std::pair<double, bool>> cells;
  std::size_t positives = 0;
  for (std::size_t f = 0; f < lams.size(); ++f) {
    if (lams[f].h != gts[f].h || lams[f].w != gts[f].w)
      throw std::invalid_argument("event_ap: grid shapes differ");
    for (std::size_t i = 0; i < lams[f].values.size(); ++i) {
      bool pos = gts[f].cells[i] != 0;
      positives += pos;
      cells.push_back({lams[f].values[i], pos});
    }
  }
  if (positives == 0) throw std::invalid_argument("event_ap: no positive cells");
  std::stable_sort(cells.begin(), cells.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < cells.size(); ++rank)
    if (cells[rank].second) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
  return ap / static_cast<double>(positives);
}

}  // namespace stpp
