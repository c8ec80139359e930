#pragma once

#include <cstdint>
#include <vector>

#include "oseg/tensor.hpp"

namespace oseg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Vertices in normalized [0,1]^2 image coordinates, y down.
using Polygon = std::vector<Vec2>;

struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
};

/// Intersection over union of axis-aligned boxes; 0 when the union is empty.
double box_iou(const Box& a, const Box& b);

double polygon_area(const Polygon& p);  // shoelace, absolute
Box polygon_bbox(const Polygon& p);
bool polygon_is_simple(const Polygon& p);
/// Sutherland-Hodgman clip against [0,1]^2; may return fewer than 3 vertices.
Polygon clip_polygon_unit(const Polygon& p);

struct Bitmask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  Bitmask() = default;
  Bitmask(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}
  uint8_t get(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
  void set(int r, int c, uint8_t b) { v[static_cast<size_t>(r) * w + c] = b; }
  int64_t count() const;
  bool empty_mask() const { return count() == 0; }
};

/// Even-odd fill; a pixel is inside iff its center lies inside the polygon.
Bitmask rasterize(const Polygon& poly, int h, int w);

/// |a AND b| / |a OR b|; 0 when both are empty. Dimensions must match.
double mask_iou(const Bitmask& a, const Bitmask& b);

}  // namespace oseg
