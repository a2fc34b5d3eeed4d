#pragma once

#include <algorithm>

#include "certainnet/grid.hpp"

namespace certainnet {

// Intersection-over-union of axis-aligned boxes; 0 when either is degenerate.
inline double iou(const Box& a, const Box& b) {
  const double ax2 = a.x2(), ay2 = a.y2(), bx2 = b.x2(), by2 = b.y2();
  const double iw = std::min(ax2, bx2) - std::max(a.x, b.x);
  const double ih = std::min(ay2, by2) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace certainnet
