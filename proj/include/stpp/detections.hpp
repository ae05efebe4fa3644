// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stpp/common.hpp"

namespace stpp {

/// Axis-aligned box in pixel coordinates, corner + size form.
struct Box {
  double left = 0, top = 0, width = 0, height = 0;

  double right() const { return left + width; }
  double bottom() const { return top + height; }
  double area() const { return width * height; }
  double cx() const { return left + width / 2; }
  double cy() const { return top + height / 2; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
  double ix = std::min(a.right(), b.right()) - std::max(a.left, b.left);
  double iy = std::min(a.bottom(), b.bottom()) - std::max(a.top, b.top);
  if (ix <= 0 || iy <= 0) return 0.0;
  double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

enum class DetLabel : std::uint8_t { kGood, kNoisy, kConfusing };

inline const char* label_name(DetLabel l) {
  switch (l) {
    case DetLabel::kGood: return "good";
    case DetLabel::kNoisy: return "noisy";
    case DetLabel::kConfusing: return "confusing";
  }
  return "?";
}

inline DetLabel label_from_name(const std::string& s) {
  if (s == "good") return DetLabel::kGood;
  if (s == "noisy") return DetLabel::kNoisy;
  if (s == "confusing") return DetLabel::kConfusing;
  throw DataError("unknown detection label: " + s);
}

struct Detection {
  int frame = 0;
  Box box;
  double conf = 1.0;
  int id = -1;  // -1 for raw detector output
  DetLabel label = DetLabel::kGood;
  std::vector<double> appearance;
};

/// Pixel membership by pixel-center containment against the half-open box
/// [left, left+width) x [top, top+height). Pixel (col, row) covers the unit
/// square with center (col + 0.5, row + 0.5).
inline bool pixel_in_box(const Box& b, std::size_t col, std::size_t row) {
  double cx = static_cast<double>(col) + 0.5;
  double cy = static_cast<double>(row) + 0.5;
  return cx >= b.left && cx < b.right() && cy >= b.top && cy < b.bottom();
}

/// Inclusive-exclusive pixel index ranges covered by the box, clipped to an
/// h x w grid.
struct PixelSpan {
  std::size_t col0 = 0, col1 = 0, row0 = 0, row1 = 0;  // [col0,col1) x [row0,row1)
  std::size_t count() const { return (col1 - col0) * (row1 - row0); }
};

inline PixelSpan box_pixels(const Box& b, std::size_t h, std::size_t w) {
  PixelSpan s;
  double c0 = std::ceil(b.left - 0.5), c1 = std::ceil(b.right() - 0.5);
  double r0 = std::ceil(b.top - 0.5), r1 = std::ceil(b.bottom() - 0.5);
  s.col0 = static_cast<std::size_t>(std::clamp(c0, 0.0, static_cast<double>(w)));
  s.col1 = static_cast<std::size_t>(std::clamp(c1, 0.0, static_cast<double>(w)));
  s.row0 = static_cast<std::size_t>(std::clamp(r0, 0.0, static_cast<double>(h)));
  s.row1 = static_cast<std::size_t>(std::clamp(r1, 0.0, static_cast<double>(h)));
  if (s.col1 < s.col0) s.col1 = s.col0;
  if (s.row1 < s.row0) s.row1 = s.row0;
  return s;
}

inline double cosine_similarity(const std::vector<double>& a,
                                const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) return 0.0;
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace stpp
