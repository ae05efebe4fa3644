// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stpp/common.hpp"
#include "stpp/tensor.hpp"

namespace stpp {

/// One "bad"-detection pixel occurrence. x is the column, y the row.
struct Event {
  int t = 0;
  int x = 0;
  int y = 0;
  friend bool operator==(const Event&, const Event&) = default;
};

/// Binary occupancy of events for one frame.
struct EventGrid {
  int frame = 0;
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> cells;  // row-major, entries in {0,1}

  EventGrid() = default;
  EventGrid(int frame_, std::size_t h_, std::size_t w_)
      : frame(frame_), h(h_), w(w_), cells(h_ * w_, 0) {}

  std::uint8_t at(std::size_t row, std::size_t col) const { return cells[row * w + col]; }
  void set(std::size_t row, std::size_t col, bool v) {
    cells[row * w + col] = v ? 1 : 0;
  }

  bool any() const {
    for (auto c : cells)
      if (c) return true;
    return false;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto c : cells) n += c;
    return n;
  }

  std::vector<Event> to_events() const {
    std::vector<Event> out;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        if (at(r, c)) out.push_back({frame, static_cast<int>(c), static_cast<int>(r)});
    return out;
  }

  static EventGrid from_events(std::span<const Event> events, int frame,
                               std::size_t h, std::size_t w) {
    EventGrid g(frame, h, w);
    for (const Event& e : events) {
      if (e.t != frame) continue;
      if (e.x < 0 || e.y < 0 || static_cast<std::size_t>(e.x) >= w ||
          static_cast<std::size_t>(e.y) >= h)
        throw std::invalid_argument("EventGrid: event outside grid bounds");
      g.set(static_cast<std::size_t>(e.y), static_cast<std::size_t>(e.x), true);
    }
    return g;
  }

  friend bool operator==(const EventGrid&, const EventGrid&) = default;
};

/// Nonnegative per-frame intensity grid.
struct IntensityMap {
  int frame = 0;
  std::size_t h = 0, w = 0;
  std::vector<double> values;

  IntensityMap() = default;
  IntensityMap(int frame_, std::size_t h_, std::size_t w_)
      : frame(frame_), h(h_), w(w_), values(h_ * w_, 0.0) {}

  double at(std::size_t row, std::size_t col) const { return values[row * w + col]; }
  double& at(std::size_t row, std::size_t col) { return values[row * w + col]; }
};

/// Ordered record of the frames that contained at least one event, with the
/// inter-event frame gaps the asynchronous stream consumes.
class EventHistory {
 public:
  void push(int frame, EventGrid grid) {
    if (!grid.any())
      throw std::invalid_argument("EventHistory: every grid must be nonempty");
    if (!frames_.empty() && frame <= frames_.back())
      throw std::invalid_argument("EventHistory: frames must be strictly increasing");
    frames_.push_back(frame);
    grids_.push_back(std::move(grid));
  }

  bool empty() const { return frames_.empty(); }
  std::size_t size() const { return frames_.size(); }
  int frame(std::size_t i) const { return frames_.at(i); }
  const EventGrid& grid(std::size_t i) const { return grids_.at(i); }
  int last_frame() const { return frames_.back(); }

  /// gaps()[i] = F[i] - F[i-1]; the first entry measures from frame -1 so a
  /// first event at frame 0 has gap 1.
  std::vector<int> gaps() const {
    std::vector<int> out;
    int prev = -1;
    for (int f : frames_) {
      out.push_back(f - prev);
      prev = f;
    }
    return out;
  }

 private:
  std::vector<int> frames_;
  std::vector<EventGrid> grids_;
};

/// Number of events with frame <= t, column <= x and row <= y.
inline std::size_t counting_function(std::span<const Event> events, int t, int x, int y) {
  std::size_t n = 0;
  for (const Event& e : events)
    if (e.t <= t && e.x <= x && e.y <= y) ++n;
  return n;
}

/// Discretized log-likelihood at unit spatio-temporal resolution: the sum of
/// log-intensity over event cells minus the summed intensity over all
/// non-event cells.
inline double log_likelihood(std::span<const IntensityMap> intensities,
                             std::span<const EventGrid> events) {
  if (intensities.size() != events.size())
    throw std::invalid_argument("log_likelihood: frame counts differ");
  double acc = 0.0;
  for (std::size_t f = 0; f < intensities.size(); ++f) {
    const IntensityMap& lam = intensities[f];
    const EventGrid& ev = events[f];
    if (lam.h != ev.h || lam.w != ev.w)
      throw std::invalid_argument("log_likelihood: grid shapes differ");
    for (std::size_t i = 0; i < lam.values.size(); ++i) {
      if (ev.cells[i]) {
        if (!(lam.values[i] > 0.0))
          throw NumericError("log_likelihood: non-positive intensity " +
                             format_double(lam.values[i]) + " at event cell (frame " +
                             std::to_string(lam.frame) + ", row " +
                             std::to_string(i / lam.w) + ", col " +
                             std::to_string(i % lam.w) + ")");
        acc += std::log(lam.values[i]);
      } else {
        acc -= lam.values[i];
      }
    }
  }
  return acc;
}

struct PredictConfig {
  enum class Mode : std::uint8_t { kThreshold, kBernoulli };
  Mode mode = Mode::kThreshold;
  double tau_e = 0.5;
  std::uint64_t seed = 0;
};

/// Threshold mode marks cells with intensity >= tau_e (inclusive); bernoulli
/// mode draws each cell independently with probability min(intensity, 1).
inline EventGrid predict_events(const IntensityMap& lam, const PredictConfig& cfg) {
  EventGrid out(lam.frame, lam.h, lam.w);
  if (cfg.mode == PredictConfig::Mode::kThreshold) {
    if (cfg.tau_e < 0.0)
      throw ConfigError("predict_events: tau_e must be nonnegative");
    for (std::size_t i = 0; i < lam.values.size(); ++i)
      out.cells[i] = lam.values[i] >= cfg.tau_e ? 1 : 0;
  } else {
    Rng rng(cfg.seed);
    for (std::size_t i = 0; i < lam.values.size(); ++i) {
      double p = std::min(lam.values[i], 1.0);
      out.cells[i] = rng.uniform() < p ? 1 : 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Event-grid file format (text, bit-exact):
//   one section per grid; section = header line "frame <t> <h> <w>" followed
//   by h data lines. Each data line encodes one row as run lengths of
//   alternating cell values starting with zeros, separated by single spaces,
//   summing to w. A row that starts with ones begins with the run length 0.
//   Lines end with '\n'; there is no trailing blank line.

inline void write_event_grids(std::ostream& os, std::span<const EventGrid> grids) {
  for (const EventGrid& g : grids) {
    os << "frame " << g.frame << ' ' << g.h << ' ' << g.w << '\n';
    for (std::size_t r = 0; r < g.h; ++r) {
      std::uint8_t cur = 0;
      std::size_t run = 0;
      bool first = true;
      for (std::size_t c = 0; c < g.w; ++c) {
        if (g.at(r, c) == cur) {
          ++run;
        } else {
          os << (first ? "" : " ") << run;
          first = false;
          cur = g.at(r, c);
          run = 1;
        }
      }
      os << (first ? "" : " ") << run << '\n';
    }
  }
}

inline std::vector<EventGrid> read_event_grids(std::istream& is) {
  std::vector<EventGrid> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream hs(line);
    std::string tag;
    int frame;
    std::size_t h, w;
    if (!(hs >> tag >> frame >> h >> w) || tag != "frame")
      throw DataError("event grids: bad header at line " + std::to_string(lineno));
    EventGrid g(frame, h, w);
    for (std::size_t r = 0; r < h; ++r) {
      if (!std::getline(is, line))
        throw DataError("event grids: truncated grid at line " + std::to_string(lineno));
      ++lineno;
      std::istringstream rs(line);
      std::size_t run, col = 0;
      std::uint8_t val = 0;
      while (rs >> run) {
        if (col + run > w)
          throw DataError("event grids: row overflow at line " + std::to_string(lineno));
        for (std::size_t i = 0; i < run; ++i) g.cells[r * w + col++] = val;
        val = val ? 0 : 1;
      }
      if (col != w)
        throw DataError("event grids: row underflow at line " + std::to_string(lineno));
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace stpp
