#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "step/dynamics.hpp"
#include "step/gridmap.hpp"

namespace step {

using Box2 = Eigen::AlignedBox2d;

inline double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

/// Convex polygon with counter-clockwise vertices.
class ConvexPolygon {
 public:
  static constexpr double kCollinearTol = 1e-9;

  ConvexPolygon() = default;
  explicit ConvexPolygon(std::vector<Eigen::Vector2d> vertices) : vertices_(std::move(vertices)) {
    validate();
    for (const auto& v : vertices_) bounds_.extend(v);
  }

  static ConvexPolygon rectangle(const Box2& box) {
    return ConvexPolygon({box.min(), {box.max().x(), box.min().y()}, box.max(), {box.min().x(), box.max().y()}});
  }

  const std::vector<Eigen::Vector2d>& vertices() const { return vertices_; }
  const Box2& bounds() const { return bounds_; }

  Eigen::Vector2d support(const Eigen::Vector2d& d) const {
    std::size_t best = 0;
    double best_dot = vertices_[0].dot(d);
    for (std::size_t i = 1; i < vertices_.size(); ++i) {
      const double v = vertices_[i].dot(d);
      if (v > best_dot) {
        best_dot = v;
        best = i;
      }
    }
    return vertices_[best];
  }

  double area() const {
    double a = 0.0;
    for (std::size_t i = 0; i < vertices_.size(); ++i)
      a += cross2(vertices_[i], vertices_[(i + 1) % vertices_.size()]);
    return 0.5 * a;
  }

  Eigen::Vector2d centroid() const {
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto& v : vertices_) c += v;
    return c / double(vertices_.size());
  }

  bool contains(const Eigen::Vector2d& p) const {
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
      const auto& a = vertices_[i];
      const auto& b = vertices_[(i + 1) % vertices_.size()];
      if (cross2(b - a, p - a) < 0.0) return false;
    }
    return true;
  }

  ConvexPolygon translated(const Eigen::Vector2d& t) const {
    auto v = vertices_;
    for (auto& p : v) p += t;
    return ConvexPolygon(std::move(v));
  }

 private:
  void validate() const {
    const std::size_t n = vertices_.size();
    if (n < 3) throw std::invalid_argument("convex polygon needs at least 3 vertices");
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = vertices_[i];
      const auto& b = vertices_[(i + 1) % n];
      const auto& c = vertices_[(i + 2) % n];
      if ((b - a).norm() <= kCollinearTol) throw std::invalid_argument("convex polygon has repeated vertices");
      if (cross2(b - a, c - b) < -kCollinearTol) throw std::invalid_argument("polygon is not convex and CCW");
    }
    double a2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) a2 += cross2(vertices_[i], vertices_[(i + 1) % n]);
    if (a2 <= kCollinearTol) throw std::invalid_argument("polygon is degenerate or clockwise");
  }

  std::vector<Eigen::Vector2d> vertices_;
  Box2 bounds_;
};

struct FootprintSpec {
  double half_length = 0.4;
  double half_width = 0.3;
};

/// Robot rectangle centered at the pose, rotated by its heading.
inline ConvexPolygon footprint_at(const FootprintSpec& spec, const Pose2& s) {
  const double c = std::cos(s.theta), sn = std::sin(s.theta);
  const Eigen::Vector2d center(s.x, s.y);
  const Eigen::Vector2d ax(c * spec.half_length, sn * spec.half_length);
  const Eigen::Vector2d ay(-sn * spec.half_width, c * spec.half_width);
  return ConvexPolygon({center - ax - ay, center + ax - ay, center + ax + ay, center - ax + ay});
}

// ─── Signed distance ────────────────────────────────────────────────────────

namespace detail {

struct MinkowskiDifference {
  const ConvexPolygon& a;
  const ConvexPolygon& b;
  Eigen::Vector2d support(const Eigen::Vector2d& d) const { return a.support(d) - b.support(-d); }
};

/// Closest point to the origin on segment [p, q]; t is the segment parameter.
inline Eigen::Vector2d closest_on_segment(const Eigen::Vector2d& p, const Eigen::Vector2d& q, double& t) {
  const Eigen::Vector2d e = q - p;
  const double ee = e.squaredNorm();
  t = ee > 0.0 ? std::clamp(-p.dot(e) / ee, 0.0, 1.0) : 0.0;
  return p + t * e;
}

constexpr double kSdTol = 1e-9;
constexpr int kMaxIterations = 64;

/// Penetration depth when the origin lies in the closed triangle `simplex`.
inline double expanding_polytope_depth(const MinkowskiDifference& md, std::vector<Eigen::Vector2d> poly) {
  if (cross2(poly[1] - poly[0], poly[2] - poly[0]) < 0.0) std::swap(poly[1], poly[2]);
  double best = 0.0;
  for (int it = 0; it < kMaxIterations; ++it) {
    std::size_t edge = 0;
    double edge_dist = std::numeric_limits<double>::infinity();
    Eigen::Vector2d edge_normal = Eigen::Vector2d::UnitX();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Eigen::Vector2d e = poly[(i + 1) % poly.size()] - poly[i];
      const double len = e.norm();
      if (len <= 0.0) continue;
      const Eigen::Vector2d n(e.y() / len, -e.x() / len);
      const double d = n.dot(poly[i]);
      if (d < edge_dist) {
        edge_dist = d;
        edge = i;
        edge_normal = n;
      }
    }
    best = std::max(0.0, edge_dist);
    const Eigen::Vector2d w = md.support(edge_normal);
    if (w.dot(edge_normal) - edge_dist <= kSdTol) return best;
    poly.insert(poly.begin() + std::ptrdiff_t(edge + 1), w);
  }
  return best;
}

/// Builds a non-degenerate triangle containing the origin from a simplex that
/// already touches it, then measures the depth.
inline double depth_from_simplex(const MinkowskiDifference& md, std::vector<Eigen::Vector2d> simplex) {
  if (simplex.size() == 1) {
    // origin coincides with a support vertex of the difference: boundary contact
    return 0.0;
  }
  if (simplex.size() == 2) {
    const Eigen::Vector2d e = simplex[1] - simplex[0];
    Eigen::Vector2d n(-e.y(), e.x());
    Eigen::Vector2d c = md.support(n);
    if (c.dot(n) <= kSdTol * n.norm()) {
      n = -n;
      c = md.support(n);
      if (c.dot(n) <= kSdTol * n.norm()) return 0.0;  // flat difference
    }
    simplex.push_back(c);
  }
  return expanding_polytope_depth(md, std::move(simplex));
}

}  // namespace detail

/// Signed distance between convex polygons: separation distance when
/// disjoint, minus the penetration depth when overlapping. Support-mapping
/// distance iteration with an expanding-polytope depth fallback.
inline double signed_distance(const ConvexPolygon& a, const ConvexPolygon& b) {
  const detail::MinkowskiDifference md{a, b};
  Eigen::Vector2d dir = a.centroid() - b.centroid();
  if (dir.squaredNorm() < 1e-24) dir = Eigen::Vector2d::UnitX();

  std::vector<Eigen::Vector2d> simplex{md.support(-dir)};
  Eigen::Vector2d v = simplex[0];

  for (int it = 0; it < detail::kMaxIterations; ++it) {
    const double vnorm = v.norm();
    if (vnorm <= detail::kSdTol) return -detail::depth_from_simplex(md, simplex);

    const Eigen::Vector2d w = md.support(-v);
    // no further progress toward the origin: v is the closest point
    if (v.dot(v) - v.dot(w) <= detail::kSdTol * vnorm) return vnorm;
    simplex.push_back(w);

    if (simplex.size() == 2) {
      double t;
      v = detail::closest_on_segment(simplex[0], simplex[1], t);
      if (t <= 0.0)
        simplex = {simplex[0]};
      else if (t >= 1.0)
        simplex = {simplex[1]};
    } else {
      const auto& p0 = simplex[0];
      const auto& p1 = simplex[1];
      const auto& p2 = simplex[2];
      const double area = cross2(p1 - p0, p2 - p0);
      if (std::abs(area) > 1e-18) {
        const double s = area > 0.0 ? 1.0 : -1.0;
        const bool inside = s * cross2(p1 - p0, -p0) >= 0.0 && s * cross2(p2 - p1, -p1) >= 0.0 &&
                            s * cross2(p0 - p2, -p2) >= 0.0;
        if (inside) return -detail::expanding_polytope_depth(md, simplex);
      }
      // reduce to the closest feature among the three edges
      double best = std::numeric_limits<double>::infinity();
      std::vector<Eigen::Vector2d> next;
      const std::array<std::pair<int, int>, 3> edges{{{0, 1}, {1, 2}, {0, 2}}};
      for (auto [i, j] : edges) {
        double t;
        const Eigen::Vector2d c = detail::closest_on_segment(simplex[i], simplex[j], t);
        if (c.norm() < best) {
          best = c.norm();
          v = c;
          if (t <= 0.0)
            next = {simplex[i]};
          else if (t >= 1.0)
            next = {simplex[j]};
          else
            next = {simplex[i], simplex[j]};
        }
      }
      simplex = std::move(next);
    }
  }
  return v.norm();
}

/// Central-difference gradient of sd(footprint(s), obstacle) with respect to
/// (p_x, p_y, p_theta).
inline Eigen::Vector3d signed_distance_gradient(const FootprintSpec& spec, const Pose2& s, const ConvexPolygon& obstacle,
                                                double h_pos = 1e-4, double h_theta = 1e-4) {
  Eigen::Vector3d g;
  const std::array<double, 3> h{h_pos, h_pos, h_theta};
  for (int i = 0; i < 3; ++i) {
    Pose2 plus = s, minus = s;
    (i == 0 ? plus.x : i == 1 ? plus.y : plus.theta) += h[i];
    (i == 0 ? minus.x : i == 1 ? minus.y : minus.theta) -= h[i];
    g[i] = (signed_distance(footprint_at(spec, plus), obstacle) - signed_distance(footprint_at(spec, minus), obstacle)) /
           (2 * h[i]);
  }
  return g;
}

// ─── Obstacle extraction ────────────────────────────────────────────────────

/// Axis-aligned rectangles exactly covering the cells (centers inside `roi`)
/// whose risk is >= rho_max; missing risk counts as lethal. Row runs are
/// merged first, then identical runs in consecutive rows stack vertically.
inline std::vector<ConvexPolygon> decompose_lethal_cells(const GridMap& map, std::span<const double> risk,
                                                         double rho_max, const Box2& roi) {
  const double res = map.resolution();
  const Eigen::Vector2d lo = (roi.min() - map.origin()) / res;
  const Eigen::Vector2d hi = (roi.max() - map.origin()) / res;
  if (hi.x() < 0.0 || hi.y() < 0.0 || lo.x() > double(map.width() - 1) || lo.y() > double(map.height() - 1))
    return {};
  const auto c0 = std::size_t(std::max(0.0, std::ceil(lo.x())));
  const auto r0 = std::size_t(std::max(0.0, std::ceil(lo.y())));
  const auto c1 = std::size_t(std::min(double(map.width() - 1), std::floor(hi.x())));
  const auto r1 = std::size_t(std::min(double(map.height() - 1), std::floor(hi.y())));
  if (c0 > c1 || r0 > r1) return {};

  struct Run {
    std::size_t col_begin, col_end, row_begin, row_end;  // inclusive
  };
  std::vector<Run> open_runs, done;
  for (std::size_t r = r0; r <= r1; ++r) {
    std::vector<Run> row_runs;
    std::size_t c = c0;
    while (c <= c1) {
      const double v = risk[r * map.width() + c];
      if (!(v < rho_max)) {
        std::size_t e = c;
        while (e + 1 <= c1 && !(risk[r * map.width() + e + 1] < rho_max)) ++e;
        row_runs.push_back({c, e, r, r});
        c = e + 1;
      } else {
        ++c;
      }
    }
    std::vector<Run> next_open;
    for (auto& run : row_runs) {
      auto it = std::find_if(open_runs.begin(), open_runs.end(), [&](const Run& o) {
        return o.col_begin == run.col_begin && o.col_end == run.col_end && o.row_end + 1 == r;
      });
      if (it != open_runs.end()) {
        Run merged = *it;
        merged.row_end = r;
        open_runs.erase(it);
        next_open.push_back(merged);
      } else {
        next_open.push_back(run);
      }
    }
    for (auto& o : open_runs) done.push_back(o);
    open_runs = std::move(next_open);
  }
  for (auto& o : open_runs) done.push_back(o);

  std::sort(done.begin(), done.end(), [](const Run& x, const Run& y) {
    return std::tie(x.row_begin, x.col_begin) < std::tie(y.row_begin, y.col_begin);
  });
  std::vector<ConvexPolygon> out;
  out.reserve(done.size());
  for (const auto& run : done) {
    const Eigen::Vector2d mn = map.origin() + res * Eigen::Vector2d(double(run.col_begin) - 0.5, double(run.row_begin) - 0.5);
    const Eigen::Vector2d mx = map.origin() + res * Eigen::Vector2d(double(run.col_end) + 0.5, double(run.row_end) + 0.5);
    out.push_back(ConvexPolygon::rectangle(Box2(mn, mx)));
  }
  return out;
}

/// Obstacles from the map's cvar layer.
inline std::vector<ConvexPolygon> decompose_risk_obstacles(const GridMap& map, double rho_max, const Box2& roi) {
  return decompose_lethal_cells(map, map.layer(layer::cvar), rho_max, roi);
}

}  // namespace step
