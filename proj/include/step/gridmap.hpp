#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "step/errors.hpp"

namespace step {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

// ─── Reserved layer names ───────────────────────────────────────────────────

namespace layer {
inline constexpr auto elevation = "elevation";
inline constexpr auto normal_x = "normal_x";
inline constexpr auto normal_y = "normal_y";
inline constexpr auto normal_z = "normal_z";
inline constexpr auto risk_mu = "risk_mu";
inline constexpr auto risk_sigma = "risk_sigma";
inline constexpr auto cvar = "cvar";
}  // namespace layer

struct CellIndex {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

/// Multi-layer 2.5D raster. Cell (row, col) has its center at
/// origin + resolution * (col, row); rows run along +y, columns along +x.
/// Layers are stored row-major and may hold kMissing.
class GridMap {
 public:
  GridMap(std::size_t width, std::size_t height, double resolution, Eigen::Vector2d origin)
      : width_(width), height_(height), resolution_(resolution), origin_(origin) {
    if (width == 0 || height == 0) throw std::invalid_argument("grid map dimensions must be >= 1");
    if (!(resolution > 0.0) || !std::isfinite(resolution))
      throw std::invalid_argument("grid map resolution must be > 0");
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t cell_count() const { return width_ * height_; }
  double resolution() const { return resolution_; }
  const Eigen::Vector2d& origin() const { return origin_; }

  std::size_t linear(CellIndex c) const { return c.row * width_ + c.col; }
  CellIndex cell_at(std::size_t linear_index) const {
    return {linear_index / width_, linear_index % width_};
  }
  bool valid(CellIndex c) const { return c.row < height_ && c.col < width_; }

  Eigen::Vector2d world_of(CellIndex c) const {
    return origin_ + resolution_ * Eigen::Vector2d(double(c.col), double(c.row));
  }

  /// True when p lies inside the union of cell footprints.
  bool contains(const Eigen::Vector2d& p) const {
    const Eigen::Vector2d g = (p - origin_) / resolution_;
    return g.x() >= -0.5 && g.y() >= -0.5 && g.x() <= double(width_) - 0.5 &&
           g.y() <= double(height_) - 0.5;
  }

  std::optional<CellIndex> cell_of(const Eigen::Vector2d& p) const {
    if (!contains(p)) return std::nullopt;
    const Eigen::Vector2d g = (p - origin_) / resolution_;
    const auto col = std::min<std::size_t>(std::size_t(std::max(0.0, std::floor(g.x() + 0.5))), width_ - 1);
    const auto row = std::min<std::size_t>(std::size_t(std::max(0.0, std::floor(g.y() + 0.5))), height_ - 1);
    return CellIndex{row, col};
  }

  /// Nearest cell, clamping points outside the extent onto the border.
  CellIndex clamped_cell_of(const Eigen::Vector2d& p) const {
    const Eigen::Vector2d g = (p - origin_) / resolution_;
    const double cx = std::clamp(std::floor(g.x() + 0.5), 0.0, double(width_ - 1));
    const double cy = std::clamp(std::floor(g.y() + 0.5), 0.0, double(height_ - 1));
    return {std::size_t(cy), std::size_t(cx)};
  }

  // ─── Layers ───────────────────────────────────────────────────────────────

  bool has_layer(std::string_view name) const { return layers_.find(name) != layers_.end(); }

  std::vector<double>& add_layer(const std::string& name, double fill = 0.0) {
    auto [it, inserted] = layers_.try_emplace(name);
    it->second.assign(cell_count(), fill);
    return it->second;
  }

  void set_layer(const std::string& name, std::vector<double> data) {
    if (data.size() != cell_count())
      throw std::invalid_argument("layer '" + name + "' has " + std::to_string(data.size()) +
                                  " values, map has " + std::to_string(cell_count()) + " cells");
    layers_[name] = std::move(data);
  }

  void remove_layer(std::string_view name) {
    if (auto it = layers_.find(name); it != layers_.end()) layers_.erase(it);
  }

  const std::vector<double>& layer(std::string_view name) const {
    auto it = layers_.find(name);
    if (it == layers_.end()) throw ConfigError("missing layer '" + std::string(name) + "'");
    return it->second;
  }
  std::vector<double>& layer(std::string_view name) {
    auto it = layers_.find(name);
    if (it == layers_.end()) throw ConfigError("missing layer '" + std::string(name) + "'");
    return it->second;
  }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : layers_) names.push_back(name);
    return names;
  }

  double at(std::string_view name, CellIndex c) const { return layer(name)[linear(c)]; }
  double& at(std::string_view name, CellIndex c) { return layer(name)[linear(c)]; }

  // ─── Interpolation ────────────────────────────────────────────────────────

  /// Bilinear interpolation between the four surrounding cell centers.
  /// Missing corners fall back to the nearest non-missing corner.
  double sample_bilinear(std::span<const double> data, const Eigen::Vector2d& p) const {
    if (!contains(p)) throw std::out_of_range("sample point outside map extent");
    return sample_clamped(data, p);
  }
  double sample_bilinear(std::string_view name, const Eigen::Vector2d& p) const {
    return sample_bilinear(layer(name), p);
  }

  /// Same as sample_bilinear but points outside the extent are clamped to the
  /// border instead of raising.
  double sample_clamped(std::span<const double> data, const Eigen::Vector2d& p) const {
    const Eigen::Vector2d g = (p - origin_) / resolution_;
    const double gx = std::clamp(g.x(), 0.0, double(width_ - 1));
    const double gy = std::clamp(g.y(), 0.0, double(height_ - 1));
    const auto c0 = std::min<std::size_t>(std::size_t(gx), width_ > 1 ? width_ - 2 : 0);
    const auto r0 = std::min<std::size_t>(std::size_t(gy), height_ > 1 ? height_ - 2 : 0);
    const std::size_t c1 = std::min(c0 + 1, width_ - 1);
    const std::size_t r1 = std::min(r0 + 1, height_ - 1);
    const double tx = gx - double(c0);
    const double ty = gy - double(r0);

    const std::array<double, 4> v{data[r0 * width_ + c0], data[r0 * width_ + c1],
                                  data[r1 * width_ + c0], data[r1 * width_ + c1]};
    const std::array<double, 4> w{(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};

    if (std::none_of(v.begin(), v.end(), is_missing)) {
      return w[0] * v[0] + w[1] * v[1] + w[2] * v[2] + w[3] * v[3];
    }
    // nearest non-missing corner; corner distance order follows the weights
    const std::array<double, 4> dx{tx, 1 - tx, tx, 1 - tx};
    const std::array<double, 4> dy{ty, ty, 1 - ty, 1 - ty};
    double best = kMissing;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 4; ++i) {
      if (is_missing(v[i])) continue;
      const double d = dx[i] * dx[i] + dy[i] * dy[i];
      if (d < best_d) {
        best_d = d;
        best = v[i];
      }
    }
    return best;
  }

  /// Interpolated (unnormalized) surface normal at p; requires normal layers.
  Eigen::Vector3d sample_normal(const Eigen::Vector2d& p) const {
    return {sample_clamped(layer(layer::normal_x), p), sample_clamped(layer(layer::normal_y), p),
            sample_clamped(layer(layer::normal_z), p)};
  }

  friend bool operator==(const GridMap& a, const GridMap& b) {
    if (a.width_ != b.width_ || a.height_ != b.height_ || a.resolution_ != b.resolution_ ||
        a.origin_ != b.origin_ || a.layers_.size() != b.layers_.size())
      return false;
    for (const auto& [name, data] : a.layers_) {
      auto it = b.layers_.find(name);
      if (it == b.layers_.end()) return false;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double x = data[i], y = it->second[i];
        if (is_missing(x) != is_missing(y)) return false;
        if (!is_missing(x) && x != y) return false;
      }
    }
    return true;
  }

 private:
  std::size_t width_;
  std::size_t height_;
  double resolution_;
  Eigen::Vector2d origin_;
  std::map<std::string, std::vector<double>, std::less<>> layers_;
};

/// Fills normal_x/normal_y/normal_z from central-difference elevation
/// gradients, n ∝ (-dh/dx, -dh/dy, 1). Borders use one-sided differences;
/// missing neighbours take the center value; missing centers get (0, 0, 1).
inline void compute_surface_normals(GridMap& map, std::string_view elevation_layer = layer::elevation) {
  const auto& h = map.layer(elevation_layer);
  const std::size_t w = map.width(), hgt = map.height();
  const double res = map.resolution();
  std::vector<double> nx(map.cell_count()), ny(map.cell_count()), nz(map.cell_count());

  auto value = [&](std::size_t r, std::size_t c, double center) {
    const double v = h[r * w + c];
    return is_missing(v) ? center : v;
  };

  for (std::size_t r = 0; r < hgt; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      const double hc = h[i];
      if (is_missing(hc)) {
        nx[i] = 0.0;
        ny[i] = 0.0;
        nz[i] = 1.0;
        continue;
      }
      double gx = 0.0, gy = 0.0;
      if (w > 1) {
        if (c == 0)
          gx = (value(r, 1, hc) - hc) / res;
        else if (c == w - 1)
          gx = (hc - value(r, c - 1, hc)) / res;
        else
          gx = (value(r, c + 1, hc) - value(r, c - 1, hc)) / (2 * res);
      }
      if (hgt > 1) {
        if (r == 0)
          gy = (value(1, c, hc) - hc) / res;
        else if (r == hgt - 1)
          gy = (hc - value(r - 1, c, hc)) / res;
        else
          gy = (value(r + 1, c, hc) - value(r - 1, c, hc)) / (2 * res);
      }
      const Eigen::Vector3d n = Eigen::Vector3d(-gx, -gy, 1.0).normalized();
      nx[i] = n.x();
      ny[i] = n.y();
      nz[i] = n.z();
    }
  }
  map.set_layer(layer::normal_x, std::move(nx));
  map.set_layer(layer::normal_y, std::move(ny));
  map.set_layer(layer::normal_z, std::move(nz));
}

/// ∂n^w/∂p as a 3x2 matrix (columns: d/dx, d/dy), by central differences of
/// the interpolated normal field with step resolution/2.
inline Eigen::Matrix<double, 3, 2> elevation_normal_jacobian(const GridMap& map, const Eigen::Vector2d& p) {
  if (!map.contains(p)) throw std::out_of_range("normal jacobian point outside map extent");
  const double h = map.resolution() / 2.0;
  Eigen::Matrix<double, 3, 2> jac;
  for (int axis = 0; axis < 2; ++axis) {
    Eigen::Vector2d step = Eigen::Vector2d::Zero();
    step[axis] = h;
    jac.col(axis) = (map.sample_normal(p + step) - map.sample_normal(p - step)) / (2 * h);
  }
  return jac;
}

}  // namespace step
