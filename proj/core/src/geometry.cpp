#include "oseg/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace oseg {

double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double polygon_area(const Polygon& p) {
  double acc = 0.0;
  const size_t n = p.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& a = p[i];
    const Vec2& b = p[(i + 1) % n];
    acc += a.x * b.y - b.x * a.y;
  }
  return std::fabs(acc) * 0.5;
}

Box polygon_bbox(const Polygon& p) {
  require(!p.empty(), "polygon_bbox: empty polygon");
  Box b{p[0].x, p[0].y, p[0].x, p[0].y};
  for (const Vec2& v : p) {
    b.x1 = std::min(b.x1, v.x);
    b.y1 = std::min(b.y1, v.y);
    b.x2 = std::max(b.x2, v.x);
    b.y2 = std::max(b.y2, v.y);
  }
  return b;
}

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(const Vec2& a, const Vec2& b, const Vec2& p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

// Proper or improper intersection of closed segments.
bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const double d1 = cross(c, d, a);
  const double d2 = cross(c, d, b);
  const double d3 = cross(a, b, c);
  const double d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  if (d1 == 0 && on_segment(c, d, a)) return true;
  if (d2 == 0 && on_segment(c, d, b)) return true;
  if (d3 == 0 && on_segment(a, b, c)) return true;
  if (d4 == 0 && on_segment(a, b, d)) return true;
  return false;
}

}  // namespace

bool polygon_is_simple(const Polygon& p) {
  const size_t n = p.size();
  if (n < 3) return false;
  for (size_t i = 0; i < n; ++i) {
    const Vec2& a = p[i];
    const Vec2& b = p[(i + 1) % n];
    if (a.x == b.x && a.y == b.y) return false;  // degenerate edge
    for (size_t j = i + 1; j < n; ++j) {
      // skip adjacent edges (they legitimately share an endpoint)
      if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
      const Vec2& c = p[j];
      const Vec2& d = p[(j + 1) % n];
      if (segments_intersect(a, b, c, d)) return false;
    }
  }
  return true;
}

Polygon clip_polygon_unit(const Polygon& poly) {
  // Half-planes of the unit square, inward normals.
  struct Edge {
    double a, b, c;  // ax + by >= c is "inside"
  };
  static const Edge edges[4] = {{1, 0, 0}, {-1, 0, -1}, {0, 1, 0}, {0, -1, -1}};
  Polygon cur = poly;
  for (const Edge& e : edges) {
    if (cur.empty()) break;
    Polygon next;
    const size_t n = cur.size();
    for (size_t i = 0; i < n; ++i) {
      const Vec2& p = cur[i];
      const Vec2& q = cur[(i + 1) % n];
      const double dp = e.a * p.x + e.b * p.y - e.c;
      const double dq = e.a * q.x + e.b * q.y - e.c;
      if (dp >= 0) next.push_back(p);
      if ((dp < 0) != (dq < 0)) {
        const double t = dp / (dp - dq);
        next.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    cur = std::move(next);
  }
  // Snap rounding residue back onto the square, then drop consecutive
  // duplicates introduced by clipping at corners.
  for (Vec2& v : cur) {
    v.x = std::clamp(v.x, 0.0, 1.0);
    v.y = std::clamp(v.y, 0.0, 1.0);
  }
  Polygon out;
  for (const Vec2& v : cur) {
    if (out.empty() || out.back().x != v.x || out.back().y != v.y) out.push_back(v);
  }
  if (out.size() >= 2 && out.front().x == out.back().x && out.front().y == out.back().y)
    out.pop_back();
  return out;
}

int64_t Bitmask::count() const {
  int64_t n = 0;
  for (uint8_t b : v) n += b != 0;
  return n;
}

Bitmask rasterize(const Polygon& poly, int h, int w) {
  require(h >= 1 && w >= 1, "rasterize: mask extents must be positive");
  Bitmask m(h, w);
  if (poly.size() < 3 || polygon_area(poly) == 0.0) return m;  // degenerate -> empty
  const size_t n = poly.size();
  std::vector<double> xs;
  for (int r = 0; r < h; ++r) {
    const double y = (r + 0.5) / h;
    xs.clear();
    for (size_t i = 0; i < n; ++i) {
      const Vec2& a = poly[i];
      const Vec2& b = poly[(i + 1) % n];
      // half-open rule: count [min(y), max(y)) so vertices are not double-counted
      if ((a.y <= y && y < b.y) || (b.y <= y && y < a.y)) {
        xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (size_t i = 0; i + 1 < xs.size(); i += 2) {
      int c0 = static_cast<int>(std::ceil(xs[i] * w - 0.5));
      int c1 = static_cast<int>(std::ceil(xs[i + 1] * w - 0.5)) - 1;
      c0 = std::max(c0, 0);
      c1 = std::min(c1, w - 1);
      for (int c = c0; c <= c1; ++c) m.set(r, c, 1);
    }
  }
  return m;
}

double mask_iou(const Bitmask& a, const Bitmask& b) {
  require(a.h == b.h && a.w == b.w, "mask_iou: dimension mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const bool av = a.v[i] != 0, bv = b.v[i] != 0;
    inter += av && bv;
    uni += av || bv;
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace oseg
