#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mobiseg/common.hpp"

namespace mobiseg {

// Planar point in a projected metric frame (meters).
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
};

inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double squared_distance(Point a, Point b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}
inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

using Ring = std::vector<Point>;

// One outer ring (counterclockwise) and zero or more holes (clockwise).
// Rings are stored open: the first vertex is not repeated at the end.
struct Polygon {
  Ring outer;
  std::vector<Ring> holes;
};

struct Box {
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = std::numeric_limits<double>::infinity();
  double max_x = -std::numeric_limits<double>::infinity();
  double max_y = -std::numeric_limits<double>::infinity();

  void extend(Point p) {
    min_x = std::min(min_x, p.x);
    min_y = std::min(min_y, p.y);
    max_x = std::max(max_x, p.x);
    max_y = std::max(max_y, p.y);
  }
  bool empty() const { return !(min_x <= max_x && min_y <= max_y); }
  bool intersects(const Box& o) const {
    return !(o.min_x > max_x || o.max_x < min_x || o.min_y > max_y || o.max_y < min_y);
  }
  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
};

inline double signed_area(std::span<const Point> ring) {
  const std::size_t n = ring.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    twice += cross(ring[j], ring[i]);
  }
  return 0.5 * twice;
}

// Signed sum over rings; positive for a valid polygon.
inline double area(const Polygon& poly) {
  double a = signed_area(poly.outer);
  for (const auto& h : poly.holes) a += signed_area(h);
  return a;
}

inline Box bounding_box(std::span<const Point> ring) {
  Box b;
  for (const auto& p : ring) b.extend(p);
  return b;
}

inline Box bounding_box(const Polygon& poly) { return bounding_box(poly.outer); }

inline Polygon rectangle(double min_x, double min_y, double max_x, double max_y) {
  return Polygon{{{min_x, min_y}, {max_x, min_y}, {max_x, max_y}, {min_x, max_y}}, {}};
}

inline Polygon rectangle(const Box& b) { return rectangle(b.min_x, b.min_y, b.max_x, b.max_y); }

namespace detail {

inline void drop_repeated(Ring& ring) {
  ring.erase(std::unique(ring.begin(), ring.end()), ring.end());
  while (ring.size() > 1 && ring.front() == ring.back()) ring.pop_back();
}

inline int orientation_sign(Point a, Point b, Point c) {
  const double v = cross(b - a, c - a);
  return (v > 0) - (v < 0);
}

inline bool on_segment(Point a, Point b, Point p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

inline bool segments_intersect(Point a, Point b, Point c, Point d) {
  const int o1 = orientation_sign(a, b, c), o2 = orientation_sign(a, b, d);
  const int o3 = orientation_sign(c, d, a), o4 = orientation_sign(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

inline bool finite(Point p) { return std::isfinite(p.x) && std::isfinite(p.y); }

// Cheap ring checks: vertex count, finiteness, nonzero area.
inline void check_ring_basic(std::span<const Point> ring, const char* what) {
  if (ring.size() < 3) {
    throw GeometryError(std::string(what) + ": ring has fewer than 3 distinct vertices");
  }
  for (const auto& p : ring) {
    if (!finite(p)) throw GeometryError(std::string(what) + ": non-finite vertex");
  }
  if (signed_area(ring) == 0.0) throw GeometryError(std::string(what) + ": ring has zero area");
}

inline void check_simple(std::span<const Point> ring, const char* what) {
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = ring[i], b = ring[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      // skip edges that share a vertex with edge i
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      const Point c = ring[j], d = ring[(j + 1) % n];
      if (segments_intersect(a, b, c, d)) {
        throw GeometryError(std::string(what) + ": ring is self-intersecting");
      }
    }
  }
}

inline bool is_convex(std::span<const Point> ring) {
  const std::size_t n = ring.size();
  if (n < 3) return false;
  const double s = signed_area(ring);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = cross(ring[(i + 1) % n] - ring[i], ring[(i + 2) % n] - ring[(i + 1) % n]);
    if (c * s < 0) return false;
  }
  return true;
}

// Sutherland-Hodgman step: keep the part of `ring` where dot(normal, p) <= offset.
// For a non-convex ring the output may contain zero-width bridges along the
// clip line, but its signed area is exact.
inline Ring clip_half_plane(const Ring& ring, Point normal, double offset) {
  Ring out;
  const std::size_t n = ring.size();
  if (n == 0) return out;
  out.reserve(n + 2);
  Point prev = ring[n - 1];
  double dp = dot(normal, prev) - offset;
  for (std::size_t i = 0; i < n; ++i) {
    const Point cur = ring[i];
    const double dc = dot(normal, cur) - offset;
    if (dc <= 0) {
      if (dp > 0) out.push_back(prev + (dp / (dp - dc)) * (cur - prev));
      out.push_back(cur);
    } else if (dp < 0) {
      out.push_back(prev + (dp / (dp - dc)) * (cur - prev));
    }
    prev = cur;
    dp = dc;
  }
  drop_repeated(out);
  if (out.size() < 3) out.clear();
  return out;
}

// Clip against a convex counterclockwise ring.
inline Ring clip_convex(Ring subject, std::span<const Point> convex_ccw) {
  const std::size_t n = convex_ccw.size();
  for (std::size_t i = 0; i < n && !subject.empty(); ++i) {
    const Point a = convex_ccw[i], b = convex_ccw[(i + 1) % n];
    const Point normal{b.y - a.y, a.x - b.x};
    subject = clip_half_plane(subject, normal, dot(normal, a));
  }
  return subject;
}

// Signed area of `subject` restricted to the convex region (winding-weighted).
inline double clipped_signed_area(const Ring& subject, std::span<const Point> convex_ccw) {
  return signed_area(clip_convex(subject, convex_ccw));
}

inline double intersection_area_with_convex(const Polygon& poly, std::span<const Point> convex_ccw) {
  double a = clipped_signed_area(poly.outer, convex_ccw);
  for (const auto& h : poly.holes) a += clipped_signed_area(h, convex_ccw);
  return a;
}

}  // namespace detail

// Normalizes orientation (outer CCW, holes CW), drops a repeated closing
// vertex, and validates ring topology. Throws GeometryError.
inline Polygon make_polygon(Ring outer, std::vector<Ring> holes = {}) {
  detail::drop_repeated(outer);
  detail::check_ring_basic(outer, "outer ring");
  detail::check_simple(outer, "outer ring");
  if (signed_area(outer) < 0) std::reverse(outer.begin(), outer.end());
  for (auto& h : holes) {
    detail::drop_repeated(h);
    detail::check_ring_basic(h, "hole");
    detail::check_simple(h, "hole");
    if (signed_area(h) > 0) std::reverse(h.begin(), h.end());
  }
  Polygon poly{std::move(outer), std::move(holes)};
  if (!(area(poly) > 0)) throw GeometryError("polygon: holes cover the outer ring");
  return poly;
}

// Point-in-polygon by crossing number; boundary points count as inside.
inline bool contains(const Polygon& poly, Point p) {
  bool inside = false;
  auto scan = [&](const Ring& ring) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point a = ring[j], b = ring[i];
      if (detail::orientation_sign(a, b, p) == 0 && detail::on_segment(a, b, p)) return true;
      if ((a.y > p.y) != (b.y > p.y)) {
        const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
        if (p.x < x) inside = !inside;
      }
    }
    return false;
  };
  if (scan(poly.outer)) return true;
  for (const auto& h : poly.holes) {
    if (scan(h)) return true;
  }
  return inside;
}

// area(a ∩ b) for arbitrary simple polygons with holes.
//
// Every ring's interior indicator equals the signed sum of its fan triangles'
// indicators, so area(a ∩ ring_b) = Σ sign(t) · area(a ∩ t) over the fan
// triangles t of each ring of b. Each term clips a against a convex triangle.
// When either side is a single convex ring (Voronoi cells) it is used directly.
inline double polygon_intersection_area(const Polygon& a, const Polygon& b) {
  detail::check_ring_basic(a.outer, "polygon a");
  detail::check_ring_basic(b.outer, "polygon b");
  for (const auto& h : a.holes) detail::check_ring_basic(h, "polygon a hole");
  for (const auto& h : b.holes) detail::check_ring_basic(h, "polygon b hole");
  if (signed_area(a.outer) < 0 || signed_area(b.outer) < 0) {
    throw GeometryError("polygon_intersection_area: outer ring must be counterclockwise");
  }
  if (!bounding_box(a).intersects(bounding_box(b))) return 0.0;

  const bool b_convex = b.holes.empty() && detail::is_convex(b.outer);
  const bool a_convex = a.holes.empty() && detail::is_convex(a.outer);
  double total = 0.0;
  if (b_convex) {
    total = detail::intersection_area_with_convex(a, b.outer);
  } else if (a_convex) {
    total = detail::intersection_area_with_convex(b, a.outer);
  } else {
    const Box abox = bounding_box(a);
    auto fan = [&](const Ring& ring) {
      double sum = 0.0;
      for (std::size_t i = 1; i + 1 < ring.size(); ++i) {
        Ring tri{ring[0], ring[i], ring[i + 1]};
        const double s = signed_area(tri);
        if (s == 0.0) continue;
        if (!bounding_box(tri).intersects(abox)) continue;
        if (s < 0) std::swap(tri[1], tri[2]);
        const double part = detail::intersection_area_with_convex(a, tri);
        sum += s > 0 ? part : -part;
      }
      return sum;
    };
    total = fan(b.outer);
    for (const auto& h : b.holes) total += fan(h);
  }
  return std::max(0.0, total);
}

enum class SelGroup { S1 = 0, S2, S3, S4, S5 };

inline constexpr std::size_t sel_group_count = 5;

inline SelGroup parse_sel_group(std::string_view s) {
  if (s.size() == 2 && (s[0] == 'S' || s[0] == 's') && s[1] >= '1' && s[1] <= '5') {
    return static_cast<SelGroup>(s[1] - '1');
  }
  throw DataError("invalid SEL label '" + std::string(s) + "' (expected S1..S5)");
}

inline std::string to_string(SelGroup g) { return "S" + std::to_string(static_cast<int>(g) + 1); }

// Fractions of S1..S5; sums to 1.
using SelProfile = std::array<double, sel_group_count>;

struct Tower {
  TowerId id;
  Point site;
};

struct TowerCell {
  TowerId tower_id;
  Point site;
  Polygon cell;
  double urban_overlap = 0.0;
  std::optional<SelProfile> sel;
};

struct CensusBlock {
  Polygon shape;
  SelGroup sel = SelGroup::S1;
};

// Tessellation bounds: bounding box of `region` padded on each side by
// `fraction / 2` of its extent (so each dimension grows by `fraction`).
inline Polygon padded_bounds(const Polygon& region, double fraction = 0.10) {
  const Box b = bounding_box(region);
  const double px = 0.5 * fraction * b.width(), py = 0.5 * fraction * b.height();
  return rectangle(b.min_x - px, b.min_y - py, b.max_x + px, b.max_y + py);
}

// Voronoi cells of `towers` clipped to the convex `bounds`.
//
// Each cell is built by clipping the bounds against the bisector half-plane of
// every other site, visiting sites in order of distance and stopping once the
// bisector lies beyond the current cell's radius.
inline std::vector<TowerCell> compute_voronoi(std::span<const Tower> towers, const Polygon& bounds) {
  if (towers.empty()) throw GeometryError("compute_voronoi: no sites");
  if (!bounds.holes.empty() || !detail::is_convex(bounds.outer) || signed_area(bounds.outer) <= 0) {
    throw GeometryError("compute_voronoi: bounds must be a convex counterclockwise ring without holes");
  }
  {
    std::vector<std::size_t> order(towers.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const Point pa = towers[a].site, pb = towers[b].site;
      return pa.x != pb.x ? pa.x < pb.x : pa.y < pb.y;
    });
    for (std::size_t i = 1; i < order.size(); ++i) {
      if (towers[order[i]].site == towers[order[i - 1]].site) {
        throw GeometryError("compute_voronoi: duplicate sites for towers '" + towers[order[i - 1]].id +
                            "' and '" + towers[order[i]].id + "'");
      }
    }
  }
  for (const auto& t : towers) {
    if (!detail::finite(t.site)) throw GeometryError("compute_voronoi: non-finite site for tower '" + t.id + "'");
    if (!contains(bounds, t.site)) {
      throw GeometryError("compute_voronoi: site of tower '" + t.id + "' lies outside the bounds");
    }
  }

  std::vector<TowerCell> cells;
  cells.reserve(towers.size());
  std::vector<std::pair<double, std::size_t>> others;
  for (std::size_t i = 0; i < towers.size(); ++i) {
    const Point s = towers[i].site;
    others.clear();
    for (std::size_t j = 0; j < towers.size(); ++j) {
      if (j != i) others.emplace_back(squared_distance(s, towers[j].site), j);
    }
    std::sort(others.begin(), others.end());

    Ring cell = bounds.outer;
    double radius2 = 0.0;
    for (const auto& v : cell) radius2 = std::max(radius2, squared_distance(s, v));
    for (const auto& [d2, j] : others) {
      // bisector distance is d/2; nothing beyond the cell radius can clip
      if (0.25 * d2 > radius2) break;
      const Point o = towers[j].site;
      const Point normal = o - s;
      const Point mid = 0.5 * (s + o);
      cell = detail::clip_half_plane(cell, normal, dot(normal, mid));
      if (cell.empty()) break;
      radius2 = 0.0;
      for (const auto& v : cell) radius2 = std::max(radius2, squared_distance(s, v));
    }
    if (cell.empty()) throw GeometryError("compute_voronoi: empty cell for tower '" + towers[i].id + "'");
    cells.push_back(TowerCell{towers[i].id, s, Polygon{std::move(cell), {}}, 0.0, std::nullopt});
  }
  return cells;
}

// Sets urban_overlap on every cell and keeps those with overlap >= threshold.
// The comparison allows 1e-9 of slack for areas that are exact in theory but
// not in floating point. Input order is preserved.
inline std::vector<TowerCell> urban_overlap_filter(std::span<const TowerCell> cells, const Polygon& urban,
                                                   double threshold = 0.70) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("urban_overlap_filter: threshold must lie in [0, 1]");
  }
  std::vector<TowerCell> kept;
  for (const auto& c : cells) {
    const double cell_area = area(c.cell);
    const double overlap = cell_area > 0 ? polygon_intersection_area(c.cell, urban) / cell_area : 0.0;
    if (overlap >= threshold - 1e-9) {
      TowerCell k = c;
      k.urban_overlap = std::min(1.0, overlap);
      kept.push_back(std::move(k));
    }
  }
  return kept;
}

// SEL profile of each cell from the census blocks it intersects, weighted by
// intersection area. A cell touching no block gets no profile.
inline std::vector<TowerCell> assign_sel(std::span<const TowerCell> cells, std::span<const CensusBlock> blocks) {
  std::vector<Box> block_boxes;
  block_boxes.reserve(blocks.size());
  for (const auto& b : blocks) block_boxes.push_back(bounding_box(b.shape));

  std::vector<TowerCell> out(cells.begin(), cells.end());
  for (auto& c : out) {
    const Box cbox = bounding_box(c.cell);
    SelProfile acc{};
    double total = 0.0;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      if (!cbox.intersects(block_boxes[k])) continue;
      const double a = polygon_intersection_area(blocks[k].shape, c.cell);
      acc[static_cast<std::size_t>(blocks[k].sel)] += a;
      total += a;
    }
    if (total > 0) {
      for (auto& f : acc) f /= total;
      c.sel = acc;
    } else {
      c.sel.reset();
    }
  }
  return out;
}

// Nearest tower site by linear scan; ties go to the lowest tower_id.
inline const TowerCell& nearest_cell(Point p, std::span<const TowerCell> cells) {
  if (cells.empty()) throw std::invalid_argument("locate_tower: no cells");
  const TowerCell* best = &cells[0];
  double best_d2 = squared_distance(p, best->site);
  for (const auto& c : cells.subspan(1)) {
    const double d2 = squared_distance(p, c.site);
    if (d2 < best_d2 || (d2 == best_d2 && c.tower_id < best->tower_id)) {
      best = &c;
      best_d2 = d2;
    }
  }
  return *best;
}

inline TowerId locate_tower(Point p, std::span<const TowerCell> cells) { return nearest_cell(p, cells).tower_id; }

// Uniform-grid index for exact nearest-site queries with the same tie rule as
// locate_tower. Queries outside the indexed extent are supported.
class TowerLocator {
 public:
  TowerLocator() = default;

  explicit TowerLocator(std::vector<Tower> towers) : towers_(std::move(towers)) {
    if (towers_.empty()) throw std::invalid_argument("TowerLocator: no towers");
    for (const auto& t : towers_) extent_.extend(t.site);
    const double w = std::max(extent_.width(), 1e-9), h = std::max(extent_.height(), 1e-9);
    const double target = std::max(1.0, std::sqrt(static_cast<double>(towers_.size()) / 2.0));
    cell_ = std::max(w, h) / target;
    nx_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(w / cell_)));
    ny_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(h / cell_)));
    buckets_.assign(nx_ * ny_, {});
    for (std::size_t i = 0; i < towers_.size(); ++i) {
      const auto [gx, gy] = grid_of(towers_[i].site);
      buckets_[gy * nx_ + gx].push_back(i);
    }
  }

  static TowerLocator from_cells(std::span<const TowerCell> cells) {
    std::vector<Tower> towers;
    towers.reserve(cells.size());
    for (const auto& c : cells) towers.push_back({c.tower_id, c.site});
    return TowerLocator(std::move(towers));
  }

  bool empty() const { return towers_.empty(); }
  const std::vector<Tower>& towers() const { return towers_; }

  const Tower& nearest(Point p) const {
    if (towers_.empty()) throw std::invalid_argument("TowerLocator: empty");
    const auto [cx, cy] = grid_of(p);
    const Tower* best = nullptr;
    double best_d2 = std::numeric_limits<double>::infinity();
    const std::size_t max_ring = std::max(nx_, ny_);
    for (std::size_t r = 0; r <= max_ring; ++r) {
      // sites in ring r are at least (r - 1) * cell_ away, also for clamped queries
      if (best && r >= 1 && static_cast<double>(r - 1) * cell_ > std::sqrt(best_d2) * (1 + 1e-12) + 1e-12) break;
      visit_ring(cx, cy, r, [&](std::size_t idx) {
        const Tower& t = towers_[idx];
        const double d2 = squared_distance(p, t.site);
        if (!best || d2 < best_d2 || (d2 == best_d2 && t.id < best->id)) {
          best = &t;
          best_d2 = d2;
        }
      });
    }
    return *best;
  }

 private:
  std::pair<std::size_t, std::size_t> grid_of(Point p) const {
    auto clampi = [](double v, std::size_t n) {
      if (!(v > 0)) return std::size_t{0};
      const auto i = static_cast<std::size_t>(v);
      return std::min(i, n - 1);
    };
    return {clampi((p.x - extent_.min_x) / cell_, nx_), clampi((p.y - extent_.min_y) / cell_, ny_)};
  }

  template <typename F>
  void visit_ring(std::size_t cx, std::size_t cy, std::size_t r, F&& f) const {
    const long x0 = static_cast<long>(cx) - static_cast<long>(r), x1 = static_cast<long>(cx) + static_cast<long>(r);
    const long y0 = static_cast<long>(cy) - static_cast<long>(r), y1 = static_cast<long>(cy) + static_cast<long>(r);
    for (long y = y0; y <= y1; ++y) {
      if (y < 0 || y >= static_cast<long>(ny_)) continue;
      const bool edge_row = (y == y0 || y == y1);
      for (long x = x0; x <= x1; ++x) {
        if (x < 0 || x >= static_cast<long>(nx_)) continue;
        if (!edge_row && x != x0 && x != x1) continue;
        for (std::size_t idx : buckets_[static_cast<std::size_t>(y) * nx_ + static_cast<std::size_t>(x)]) f(idx);
      }
    }
  }

  std::vector<Tower> towers_;
  Box extent_;
  double cell_ = 1.0;
  std::size_t nx_ = 1, ny_ = 1;
  std::vector<std::vector<std::size_t>> buckets_;
};

// Equirectangular projection about (lon0, lat0). Approximate; adequate at
// city scale where the planar error stays well under a percent.
inline Point project_equirectangular(double lon, double lat, double lon0, double lat0) {
  constexpr double earth_radius = 6371008.8;
  constexpr double deg = std::numbers::pi / 180.0;
  return {earth_radius * (lon - lon0) * deg * std::cos(lat0 * deg), earth_radius * (lat - lat0) * deg};
}

}  // namespace mobiseg
