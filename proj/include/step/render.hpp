#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "step/errors.hpp"
#include "step/gridmap.hpp"
#include "step/polygeom.hpp"
#include "step/risk.hpp"

namespace step {

using Rgb = std::array<std::uint8_t, 3>;

/// Risk classes: safe (r <= safe_max), moderate (safe_max, risky_min],
/// risky (r > risky_min). Moderate cells blend from moderate_low to
/// moderate_high.
struct RenderStyle {
  double safe_max = 0.05;
  double risky_min = 0.5;
  int pixels_per_cell = 4;
  Rgb safe{255, 255, 255};
  Rgb moderate_low{255, 255, 0};
  Rgb moderate_high{255, 0, 0};
  Rgb risky{0, 0, 0};
  Rgb missing{128, 128, 128};
  Rgb path{0, 90, 255};
  Rgb polygon{200, 0, 200};
  Rgb footprint{0, 160, 0};

  void validate() const {
    if (!(safe_max < risky_min)) throw ConfigError("render thresholds must be strictly increasing");
    if (pixels_per_cell < 1) throw ConfigError("render pixels_per_cell must be >= 1");
  }
};

struct RenderOverlays {
  std::vector<std::vector<Eigen::Vector2d>> paths;
  std::vector<ConvexPolygon> polygons;
  std::vector<ConvexPolygon> footprints;
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, top row first

  Rgb at(int x, int y) const {
    const auto i = 3 * (std::size_t(y) * std::size_t(width) + std::size_t(x));
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  void set(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const auto i = 3 * (std::size_t(y) * std::size_t(width) + std::size_t(x));
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
  }
};

inline Rgb risk_color(double r, const RenderStyle& style) {
  if (is_missing(r)) return style.missing;
  if (r <= style.safe_max) return style.safe;
  if (r > style.risky_min) return style.risky;
  const double t = (r - style.safe_max) / (style.risky_min - style.safe_max);
  Rgb c;
  for (int k = 0; k < 3; ++k)
    c[k] = std::uint8_t(std::lround((1.0 - t) * style.moderate_low[k] + t * style.moderate_high[k]));
  return c;
}

namespace detail {

inline void draw_line(Image& img, double x0, double y0, double x1, double y1, const Rgb& c) {
  int ax = int(std::floor(x0)), ay = int(std::floor(y0));
  const int bx = int(std::floor(x1)), by = int(std::floor(y1));
  const int dx = std::abs(bx - ax), dy = -std::abs(by - ay);
  const int sx = ax < bx ? 1 : -1, sy = ay < by ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    img.set(ax, ay, c);
    if (ax == bx && ay == by) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      ax += sx;
    }
    if (e2 <= dx) {
      err += dx;
      ay += sy;
    }
  }
}

}  // namespace detail

/// Colors every cell by its risk class, then draws overlays on top. Risk is
/// evaluated at `level` from risk_mu/risk_sigma when present, otherwise read
/// from the cvar layer.
inline Image render_map(const GridMap& map, const RiskLevel& level, const RenderOverlays& overlays = {},
                        const RenderStyle& style = {}) {
  style.validate();
  std::vector<double> risk;
  if (map.has_layer(layer::risk_mu) && map.has_layer(layer::risk_sigma))
    risk = cvar_values(map, level);
  else if (map.has_layer(layer::cvar))
    risk.assign(map.layer(layer::cvar).begin(), map.layer(layer::cvar).end());
  else
    throw ConfigError("render: map has no cvar layer");

  const int ppc = style.pixels_per_cell;
  Image img;
  img.width = int(map.width()) * ppc;
  img.height = int(map.height()) * ppc;
  img.rgb.assign(std::size_t(img.width) * std::size_t(img.height) * 3, 0);
  for (std::size_t row = 0; row < map.height(); ++row)
    for (std::size_t col = 0; col < map.width(); ++col) {
      const Rgb c = risk_color(risk[map.linear({row, col})], style);
      const int top = int(map.height() - 1 - row) * ppc;
      for (int dy = 0; dy < ppc; ++dy)
        for (int dx = 0; dx < ppc; ++dx) img.set(int(col) * ppc + dx, top + dy, c);
    }

  const double res = map.resolution();
  const Eigen::Vector2d origin = map.origin();
  auto to_px = [&](const Eigen::Vector2d& p) {
    return Eigen::Vector2d(((p.x() - origin.x()) / res + 0.5) * ppc,
                           img.height - ((p.y() - origin.y()) / res + 0.5) * ppc);
  };
  auto polyline = [&](std::span<const Eigen::Vector2d> pts, bool closed, const Rgb& c) {
    if (pts.empty()) return;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      const auto a = to_px(pts[i]), b = to_px(pts[i + 1]);
      detail::draw_line(img, a.x(), a.y(), b.x(), b.y(), c);
    }
    const auto a = to_px(pts.back()), b = to_px(pts.front());
    if (closed && pts.size() > 2) detail::draw_line(img, a.x(), a.y(), b.x(), b.y(), c);
    if (pts.size() == 1) img.set(int(std::floor(a.x())), int(std::floor(a.y())), c);
  };
  for (const auto& poly : overlays.polygons) polyline(poly.vertices(), true, style.polygon);
  for (const auto& path : overlays.paths) polyline(path, false, style.path);
  for (const auto& fp : overlays.footprints) polyline(fp.vertices(), true, style.footprint);
  return img;
}

inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return out;
}

inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  const auto bytes = encode_ppm(img);
  f.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace step
