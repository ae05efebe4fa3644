// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "stpp/detections.hpp"
#include "stpp/pointprocess.hpp"

namespace stpp {

/// Fraction of the detection's pixels that hold a predicted event. The
/// denominator is the box's pixel count under center containment, so the
/// ratio is always in [0, 1]; an event pixel shared by two boxes counts
/// toward both.
inline double event_ratio(const Detection& det, const EventGrid& grid) {
  if (det.frame != grid.frame)
    throw std::invalid_argument("event_ratio: detection and grid frames differ");
  if (det.box.width <= 0 || det.box.height <= 0)
    throw std::invalid_argument("event_ratio: box has no area");
  PixelSpan span = box_pixels(det.box, grid.h, grid.w);
  if (span.count() == 0)
    throw std::invalid_argument("event_ratio: box covers no grid pixels");
  std::size_t events = 0;
  for (std::size_t r = span.row0; r < span.row1; ++r)
    for (std::size_t c = span.col0; c < span.col1; ++c) events += grid.at(r, c);
  return static_cast<double>(events) / static_cast<double>(span.count());
}

struct FilterRow {
  int frame = 0;
  Box box;
  double ratio = 0.0;
  bool kept = true;
};

struct FilterReport {
  double threshold = 0.5;
  std::vector<FilterRow> rows;  // one per input detection, input order

  void write_csv(std::ostream& os) const {
    os << "frame,left,top,width,height,ratio,kept\n";
    for (const auto& r : rows)
      os << r.frame << ',' << format_double(r.box.left) << ','
         << format_double(r.box.top) << ',' << format_double(r.box.width) << ','
         << format_double(r.box.height) << ',' << format_double(r.ratio) << ','
         << (r.kept ? 1 : 0) << '\n';
  }
};

struct FilterResult {
  std::vector<Detection> kept;  // input order preserved
  FilterReport report;
};

/// Removes detections whose event ratio strictly exceeds tau_r. Frames with
/// no grid in `grids` contribute no events (ratio 0).
inline FilterResult filter_detections(std::span<const Detection> dets,
                                      std::span<const EventGrid> grids, double tau_r) {
  if (tau_r < 0.0 || tau_r > 1.0)
    throw ConfigError("filter_detections: tau_r must lie in [0, 1]");
  std::map<int, const EventGrid*> by_frame;
  for (const EventGrid& g : grids) by_frame[g.frame] = &g;
  FilterResult out;
  out.report.threshold = tau_r;
  for (const Detection& d : dets) {
    double r = 0.0;
    auto it = by_frame.find(d.frame);
    if (it != by_frame.end()) r = event_ratio(d, *it->second);
    bool keep = !(r > tau_r);
    out.report.rows.push_back({d.frame, d.box, r, keep});
    if (keep) out.kept.push_back(d);
  }
  return out;
}

}  // namespace stpp
