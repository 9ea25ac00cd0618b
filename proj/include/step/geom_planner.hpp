#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Core>

#include "step/gridmap.hpp"
#include "step/risk.hpp"

namespace step {

struct GeometricPath {
  std::vector<Eigen::Vector2d> poses;
  double total_risk = 0.0;    // J_pos along the path
  double total_length = 0.0;  // meters
  double cost = 0.0;          // search objective: sum of entered-cell risk + lambda * length
};

struct GeomPlanConfig {
  double lambda = 0.05;  // distance weight [cost / m]
  double alpha = 0.9;
  double lethal_threshold = 0.5;
};

enum class NoPathReason { none, lethal_start, lethal_goal, unreachable, out_of_bounds };

inline std::string to_string(NoPathReason r) {
  switch (r) {
    case NoPathReason::none: return "none";
    case NoPathReason::lethal_start: return "lethal_start";
    case NoPathReason::lethal_goal: return "lethal_goal";
    case NoPathReason::unreachable: return "unreachable";
    case NoPathReason::out_of_bounds: return "out_of_bounds";
  }
  return "unknown";
}

struct GeomPlanResult {
  std::optional<GeometricPath> path;
  NoPathReason reason = NoPathReason::none;
  explicit operator bool() const { return path.has_value(); }
};

/// Position-only dynamic risk metric: mu_0 + sum_{k>=1} CVaR(R_k), with
/// risk read from the cell under each pose.
inline double path_risk(const GridMap& map, std::span<const Eigen::Vector2d> poses, const RiskLevel& level) {
  if (poses.empty()) return 0.0;
  const auto& mu = map.layer(layer::risk_mu);
  const auto& sigma = map.layer(layer::risk_sigma);
  const double k = level.tail_factor();
  double total = 0.0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto cell = map.cell_of(poses[i]);
    if (!cell) throw std::out_of_range("path pose outside map extent");
    const std::size_t idx = map.linear(*cell);
    total += i == 0 ? mu[idx] : cvar_gaussian(mu[idx], sigma[idx], k);
  }
  return total;
}

/// Per-cell step risk used by the planner; missing cells are lethal.
inline std::vector<double> planner_cell_risk(const GridMap& map, const RiskLevel& level) {
  auto rho = cvar_values(map, level);
  for (double& v : rho)
    if (is_missing(v)) v = std::numeric_limits<double>::infinity();
  return rho;
}

namespace detail {

inline constexpr std::array<std::pair<int, int>, 8> kNeighbours{
    {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}}};

/// Calls fn(neighbour_linear_index, step_length) for each admissible
/// 8-connected move. Diagonal moves may not cut a lethal corner.
template <class Fn>
void for_each_move(const GridMap& map, std::size_t idx, const std::vector<char>& lethal, Fn&& fn) {
  const auto w = std::ptrdiff_t(map.width()), h = std::ptrdiff_t(map.height());
  const auto r = std::ptrdiff_t(idx) / w, c = std::ptrdiff_t(idx) % w;
  const double res = map.resolution();
  for (auto [dr, dc] : kNeighbours) {
    const auto rr = r + dr, cc = c + dc;
    if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
    const auto n = std::size_t(rr * w + cc);
    if (lethal[n]) continue;
    if (dr != 0 && dc != 0 && (lethal[std::size_t(r * w + cc)] || lethal[std::size_t(rr * w + c)])) continue;
    fn(n, (dr != 0 && dc != 0) ? std::sqrt(2.0) * res : res);
  }
}

}  // namespace detail

/// A* over the 8-connected grid. Edge cost is the CVaR of the entered cell
/// plus lambda times the step length; cells with CVaR >= lethal_threshold are
/// excluded. Start and goal snap to their containing cells.
inline GeomPlanResult plan_geometric(const GridMap& map, const Eigen::Vector2d& start, const Eigen::Vector2d& goal,
                                     const GeomPlanConfig& cfg) {
  if (cfg.lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  if (!(cfg.lethal_threshold > 0.0)) throw std::invalid_argument("lethal_threshold must be > 0");
  const auto s_cell = map.cell_of(start);
  const auto g_cell = map.cell_of(goal);
  if (!s_cell || !g_cell) return {std::nullopt, NoPathReason::out_of_bounds};

  const RiskLevel level(cfg.alpha);
  const auto rho = planner_cell_risk(map, level);
  std::vector<char> lethal(rho.size());
  for (std::size_t i = 0; i < rho.size(); ++i) lethal[i] = !(rho[i] < cfg.lethal_threshold);

  const std::size_t s = map.linear(*s_cell), g = map.linear(*g_cell);
  if (lethal[s]) return {std::nullopt, NoPathReason::lethal_start};
  if (lethal[g]) return {std::nullopt, NoPathReason::lethal_goal};

  const Eigen::Vector2d goal_w = map.world_of(*g_cell);
  auto heuristic = [&](std::size_t i) { return cfg.lambda * (map.world_of(map.cell_at(i)) - goal_w).norm(); };

  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr auto kNone = std::numeric_limits<std::size_t>::max();
  std::vector<double> g_cost(rho.size(), kInf);
  std::vector<std::size_t> parent(rho.size(), kNone);
  std::vector<char> closed(rho.size(), 0);

  // (f, h, index): smaller f, then smaller h, then row-major order
  using Entry = std::tuple<double, double, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  g_cost[s] = 0.0;
  open.emplace(heuristic(s), heuristic(s), s);

  while (!open.empty()) {
    const auto [f, h, cur] = open.top();
    open.pop();
    if (closed[cur]) continue;
    closed[cur] = 1;
    if (cur == g) break;
    detail::for_each_move(map, cur, lethal, [&](std::size_t n, double len) {
      const double cand = g_cost[cur] + rho[n] + cfg.lambda * len;
      if (cand < g_cost[n]) {
        g_cost[n] = cand;
        parent[n] = cur;
        closed[n] = 0;
        const double hn = heuristic(n);
        open.emplace(cand + hn, hn, n);
      }
    });
  }
  if (!std::isfinite(g_cost[g])) return {std::nullopt, NoPathReason::unreachable};

  GeometricPath path;
  for (std::size_t i = g; i != kNone; i = parent[i]) path.poses.push_back(map.world_of(map.cell_at(i)));
  std::reverse(path.poses.begin(), path.poses.end());
  for (std::size_t i = 1; i < path.poses.size(); ++i) path.total_length += (path.poses[i] - path.poses[i - 1]).norm();
  path.total_risk = path_risk(map, path.poses, level);
  path.cost = g_cost[g];
  return {std::move(path), NoPathReason::none};
}

}  // namespace step
