#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "step/dynamics.hpp"
#include "step/geom_planner.hpp"
#include "step/gridmap.hpp"
#include "step/mpc.hpp"
#include "step/risk.hpp"

namespace step {

struct WorldSpec {
  std::uint64_t seed = 1;
  std::size_t width = 80;
  std::size_t height = 80;
  double resolution = 0.25;

  // elevation: value noise
  int elevation_octaves = 3;
  double elevation_scale = 4.0;  // lattice spacing of the coarsest octave [m]
  double elevation_amplitude = 0.3;

  // lethal blobs
  int blob_count = 8;
  double blob_radius_min = 0.5;
  double blob_radius_max = 1.2;
  double blob_mu = 0.95;

  // traversability: low-risk background texture plus moderate hazard patches
  double risk_scale = 2.0;
  double risk_amplitude = 0.1;
  int risk_octaves = 2;
  double patch_scale = 3.0;
  double patch_threshold = 0.4;  // value-noise level where a patch starts
  double patch_ramp = 0.15;       // noise range over which a patch reaches full strength
  double patch_mu = 0.25;

  // perception: sigma = sigma_percep * (1 + sigma_hazard_gain * mu)
  double sigma_percep = 0.01;
  double sigma_hazard_gain = 25.0;

  double start_clear_radius = 1.0;  // blob-free disc around the map center

  void validate() const {
    if (width < 8 || height < 8) throw std::invalid_argument("world must be at least 8 x 8 cells");
    if (!(resolution > 0.0)) throw std::invalid_argument("world resolution must be > 0");
    if (sigma_percep < 0.0 || sigma_hazard_gain < 0.0) throw std::invalid_argument("perception noise must be >= 0");
    if (blob_radius_min > blob_radius_max) throw std::invalid_argument("blob radius range is empty");
  }
};

/// Ground truth plus the perception model that produces noisy observations.
struct World {
  GridMap truth;                   // elevation, normals, risk_mu (truth), risk_sigma = 0
  std::vector<double> obs_sigma;   // per-cell perception std
  Eigen::Vector2d start = Eigen::Vector2d::Zero();
};

namespace detail {

/// Multi-octave value noise in [0, 1] sampled on the map grid.
inline std::vector<double> value_noise(const GridMap& map, std::mt19937_64& rng, double scale, int octaves) {
  std::vector<double> out(map.cell_count(), 0.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double amp = 1.0, total = 0.0;
  for (int o = 0; o < octaves; ++o) {
    const double s = scale / double(1 << o);
    const Eigen::Vector2d extent = map.resolution() * Eigen::Vector2d(double(map.width()), double(map.height()));
    const auto nx = std::size_t(std::ceil(extent.x() / s)) + 2, ny = std::size_t(std::ceil(extent.y() / s)) + 2;
    std::vector<double> lattice(nx * ny);
    for (double& v : lattice) v = uni(rng);
    for (std::size_t i = 0; i < map.cell_count(); ++i) {
      const Eigen::Vector2d g = (map.world_of(map.cell_at(i)) - map.origin()) / s;
      const auto x0 = std::size_t(g.x()), y0 = std::size_t(g.y());
      auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
      const double tx = smooth(g.x() - double(x0)), ty = smooth(g.y() - double(y0));
      const double a = lattice[y0 * nx + x0], b = lattice[y0 * nx + x0 + 1];
      const double c = lattice[(y0 + 1) * nx + x0], d = lattice[(y0 + 1) * nx + x0 + 1];
      out[i] += amp * ((1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d));
    }
    total += amp;
    amp *= 0.5;
  }
  for (double& v : out) v /= total;
  return out;
}

inline Eigen::Vector2d map_center(const GridMap& map) {
  return map.world_of({map.height() / 2, map.width() / 2});
}

}  // namespace detail

inline World generate_world(const WorldSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  World w{GridMap(spec.width, spec.height, spec.resolution, Eigen::Vector2d::Zero()), {}, {}};
  GridMap& m = w.truth;
  w.start = detail::map_center(m);

  auto elev = detail::value_noise(m, rng, spec.elevation_scale, spec.elevation_octaves);
  for (double& v : elev) v = spec.elevation_amplitude * (v - 0.5);
  m.set_layer(layer::elevation, std::move(elev));
  compute_surface_normals(m);

  // stretch the texture so its range fills [0, risk_amplitude]
  auto mu = detail::value_noise(m, rng, spec.risk_scale, spec.risk_octaves);
  const auto [lo, hi] = std::minmax_element(mu.begin(), mu.end());
  const double mn = *lo, span = std::max(*hi - *lo, 1e-12);
  for (double& v : mu) v = spec.risk_amplitude * (v - mn) / span;
  const auto patches = detail::value_noise(m, rng, spec.patch_scale, 1);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    // patches fade out over one meter toward the start disc
    const double d = (m.world_of(m.cell_at(i)) - w.start).norm() - spec.start_clear_radius;
    mu[i] += spec.patch_mu * std::clamp(d, 0.0, 1.0) *
             std::clamp((patches[i] - spec.patch_threshold) / spec.patch_ramp, 0.0, 1.0);
  }

  std::uniform_real_distribution<double> ux(0.0, spec.resolution * double(spec.width));
  std::uniform_real_distribution<double> uy(0.0, spec.resolution * double(spec.height));
  std::uniform_real_distribution<double> ur(spec.blob_radius_min, spec.blob_radius_max);
  for (int b = 0; b < spec.blob_count; ++b) {
    Eigen::Vector2d c;
    double r;
    do {
      c = {ux(rng), uy(rng)};
      r = ur(rng);
    } while ((c - w.start).norm() < r + spec.start_clear_radius);
    for (std::size_t i = 0; i < m.cell_count(); ++i)
      if ((m.world_of(m.cell_at(i)) - c).norm() <= r) mu[i] = spec.blob_mu;
  }
  m.set_layer(layer::risk_mu, mu);
  m.add_layer(layer::risk_sigma, 0.0);

  w.obs_sigma.resize(m.cell_count());
  for (std::size_t i = 0; i < mu.size(); ++i) w.obs_sigma[i] = spec.sigma_percep * (1.0 + spec.sigma_hazard_gain * mu[i]);
  return w;
}

/// Noisy observation: mu_obs = clamp(mu + N(0, sigma_cell), 0, 1), sigma_obs = sigma_cell.
inline void observe_into(const World& world, GridMap& observed, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto& mu = world.truth.layer(layer::risk_mu);
  auto& out = observed.layer(layer::risk_mu);
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = std::clamp(mu[i] + world.obs_sigma[i] * noise(rng), 0.0, 1.0);
  observed.set_layer(layer::risk_sigma, world.obs_sigma);
}

inline GridMap observe(const World& world, std::uint64_t seed) {
  GridMap observed = world.truth;
  std::mt19937_64 rng(seed);
  observe_into(world, observed, rng);
  return observed;
}

// ─── Episodes ───────────────────────────────────────────────────────────────

inline MpcConfig default_sim_mpc() {
  MpcConfig cfg;
  cfg.qp_iterations = 2;
  cfg.activation_distance = 1.0;
  cfg.rho_max = 0.7;  // above the search's lethal threshold so noise flicker on the route is not an obstacle
  cfg.library.n_random = 4;
  cfg.qp.eps_abs = 1e-3;
  cfg.qp.eps_rel = 1e-3;
  cfg.qp.max_iter = 200;
  return cfg;
}

struct SimConfig {
  DiffDriveModel model;
  MpcConfig mpc = default_sim_mpc();
  GeomPlanConfig geom{.lambda = 0.5};
  double goal_distance = 8.0;
  double goal_tolerance = 0.5;
  int step_cap = 1000;
  double failure_mu = 0.9;
  double goal_max_mu = 0.15;  // goals are drawn from cells with true mu below this
  double path_hysteresis = 0.1;  // keep the previous route unless the new one is this much cheaper
  bool record_timing = true;

  void set_alpha(double a) {
    RiskLevel{a};
    mpc.alpha = a;
    geom.alpha = a;
  }
};

struct EpisodeResult {
  bool success = false;
  double path_length = 0.0;
  double max_risk = 0.0;
  double mean_cvar = 0.0;
  int steps = 0;
  double wall_time_ms = 0.0;
  std::string failure_reason;
  std::vector<Eigen::Vector2d> executed;  // visited positions, start first
};

inline double true_mu_at(const World& world, const Eigen::Vector2d& p) {
  const auto cell = world.truth.cell_of(p);
  return cell ? world.truth.layer(layer::risk_mu)[world.truth.linear(*cell)] : 1.0;
}

/// Search cost of the stored route from the pose nearest to p onward,
/// re-evaluated on the current map. Only cells above `blocked` (what the
/// local planner treats as obstacles) or off the map make it infinite, so a
/// route is not dropped because noise pushed one cell over the search's
/// lethal threshold. The route is trimmed to start at that pose.
inline double remaining_route_cost(const GridMap& map, GeometricPath& path, const Eigen::Vector2d& p,
                                   const GeomPlanConfig& cfg, double blocked) {
  const double k = RiskLevel(cfg.alpha).tail_factor();
  std::size_t nearest = 0;
  for (std::size_t i = 1; i < path.poses.size(); ++i)
    if ((path.poses[i] - p).squaredNorm() < (path.poses[nearest] - p).squaredNorm()) nearest = i;
  path.poses.erase(path.poses.begin(), path.poses.begin() + std::ptrdiff_t(nearest));
  const auto& mu = map.layer(layer::risk_mu);
  const auto& sigma = map.layer(layer::risk_sigma);
  double cost = cfg.lambda * (path.poses.front() - p).norm();
  for (std::size_t i = 1; i < path.poses.size(); ++i) {
    const auto cell = map.cell_of(path.poses[i]);
    if (!cell) return std::numeric_limits<double>::infinity();
    const std::size_t idx = map.linear(*cell);
    const double rho = cvar_gaussian(mu[idx], sigma[idx], k);
    if (!(rho <= blocked)) return std::numeric_limits<double>::infinity();
    cost += rho + cfg.lambda * (path.poses[i] - path.poses[i - 1]).norm();
  }
  return cost;
}

inline EpisodeResult run_episode(const World& world, const Eigen::Vector2d& start, const Eigen::Vector2d& goal,
                                 const SimConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  EpisodeResult res;
  std::mt19937_64 rng(seed);
  GridMap observed = world.truth;
  observe_into(world, observed, rng);

  const Eigen::Vector2d d = goal - start;
  auto x = DiffDriveModel::make_state(start.x(), start.y(), std::atan2(d.y(), d.x()), 0.0);
  res.executed.push_back(start);
  res.max_risk = true_mu_at(world, start);

  auto plan = plan_geometric(observed, start, goal, cfg.geom);
  if (!plan) {
    res.failure_reason = "no_geometric_path";
    return res;
  }
  GeometricPath path = *plan.path;
  std::optional<ReplanResult<DiffDriveModel>> prev;
  const RiskLevel level(cfg.mpc.alpha);
  double cvar_sum = 0.0;

  for (int step = 0;; ++step) {
    const Eigen::Vector2d p(x[0], x[1]);
    if ((p - goal).norm() <= cfg.goal_tolerance) {
      res.success = true;
      break;
    }
    if (step >= cfg.step_cap) {
      res.failure_reason = "step_cap";
      break;
    }
    if (step > 0) {
      observe_into(world, observed, rng);
      if (auto again = plan_geometric(observed, p, goal, cfg.geom)) {
        const double kept = remaining_route_cost(observed, path, p, cfg.geom, cfg.mpc.rho_max);
        if (again.path->cost < (1.0 - cfg.path_hysteresis) * kept) path = *again.path;
      }
    }
    auto out = replan(cfg.model, x, prev ? &*prev : nullptr, path, observed, cfg.mpc, seed ^ (std::uint64_t(step) << 20));
    const auto u = out.trajectory.controls.front();
    prev = std::move(out);

    x = cfg.model.step(x, u);
    const Eigen::Vector2d pn(x[0], x[1]);
    ++res.steps;
    res.path_length += (pn - p).norm();
    res.executed.push_back(pn);
    if (!world.truth.contains(pn)) {
      res.failure_reason = "left_map";
      res.max_risk = 1.0;
      break;
    }
    const double mu_obs = observed.sample_clamped(observed.layer(layer::risk_mu), pn);
    const double sg_obs = observed.sample_clamped(observed.layer(layer::risk_sigma), pn);
    cvar_sum += cvar_gaussian(mu_obs, sg_obs, level.tail_factor());
    const double mu_true = true_mu_at(world, pn);
    res.max_risk = std::max(res.max_risk, mu_true);
    if (mu_true >= cfg.failure_mu) {
      res.failure_reason = "lethal_entry";
      break;
    }
  }
  res.mean_cvar = res.steps > 0 ? cvar_sum / res.steps : 0.0;
  if (cfg.record_timing)
    res.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ─── Monte Carlo ────────────────────────────────────────────────────────────

/// Well-mixed 64-bit seed for run i of a batch.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct RunSetup {
  World world;
  Eigen::Vector2d goal;
};

/// World and goal of one run; the goal sits goal_distance from the start in a
/// random direction, on a cell whose true mu is below goal_max_mu and with
/// the robot footprint inside the map.
inline RunSetup make_run(const WorldSpec& base, const SimConfig& cfg, std::uint64_t run_seed) {
  WorldSpec spec = base;
  spec.seed = run_seed;
  RunSetup setup{generate_world(spec), {}};
  std::mt19937_64 rng(derive_seed(run_seed, 0xC0FFEE));
  std::uniform_real_distribution<double> angle(-M_PI, M_PI);
  const double margin = 1.0;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double a = angle(rng);
    const Eigen::Vector2d g = setup.world.start + cfg.goal_distance * Eigen::Vector2d(std::cos(a), std::sin(a));
    const auto& t = setup.world.truth;
    if (!t.contains(g + Eigen::Vector2d(margin, margin)) || !t.contains(g - Eigen::Vector2d(margin, margin))) continue;
    if (true_mu_at(setup.world, g) < cfg.goal_max_mu) {
      setup.goal = g;
      return setup;
    }
  }
  throw std::runtime_error("no admissible goal found for run seed " + std::to_string(run_seed));
}

struct RunRecord {
  int run_id = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  EpisodeResult result;
};

struct Quartiles {
  double q1 = 0.0, median = 0.0, q3 = 0.0;
};

/// Linear-interpolated quantiles; NaN for an empty sample.
inline Quartiles quartiles(std::vector<double> v) {
  if (v.empty()) return {kMissing, kMissing, kMissing};
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * double(v.size() - 1);
    const auto i = std::size_t(pos);
    const double t = pos - double(i);
    return i + 1 < v.size() ? v[i] + t * (v[i + 1] - v[i]) : v[i];
  };
  return {q(0.25), q(0.5), q(0.75)};
}

struct AlphaAggregate {
  double alpha = 0.0;
  int runs = 0;
  int successes = 0;
  Quartiles path_length;  // successful runs only
  Quartiles max_risk;     // all runs
  double mean_cvar = 0.0;

  double success_rate() const { return runs > 0 ? double(successes) / runs : 0.0; }
};

struct MonteCarloResult {
  std::vector<RunRecord> rows;  // alpha-major, then run id
  std::vector<AlphaAggregate> aggregates;
};

/// n_runs episodes per alpha. Run i uses the same world, goal, and noise
/// seed for every alpha, so the alpha comparison is paired.
inline MonteCarloResult monte_carlo(int n_runs, const std::vector<double>& alphas, const WorldSpec& spec,
                                    const SimConfig& cfg, std::uint64_t master_seed, int jobs = 1) {
  if (n_runs < 1) throw std::invalid_argument("n_runs must be >= 1");
  if (alphas.empty()) throw std::invalid_argument("alpha list is empty");
  for (double a : alphas) RiskLevel{a};

  MonteCarloResult out;
  out.rows.resize(alphas.size() * std::size_t(n_runs));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < out.rows.size(); i = next++) {
      const std::size_t ai = i / std::size_t(n_runs);
      const int run = int(i % std::size_t(n_runs));
      const std::uint64_t seed = derive_seed(master_seed, std::uint64_t(run));
      const RunSetup setup = make_run(spec, cfg, seed);
      SimConfig c = cfg;
      c.set_alpha(alphas[ai]);
      out.rows[i] = {run, alphas[ai], seed, run_episode(setup.world, setup.world.start, setup.goal, c, seed)};
      out.rows[i].result.executed.clear();
      out.rows[i].result.executed.shrink_to_fit();
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, int(out.rows.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
    AlphaAggregate agg;
    agg.alpha = alphas[ai];
    std::vector<double> lengths, risks;
    double cvar = 0.0;
    for (int r = 0; r < n_runs; ++r) {
      const auto& row = out.rows[ai * std::size_t(n_runs) + std::size_t(r)];
      ++agg.runs;
      if (row.result.success) {
        ++agg.successes;
        lengths.push_back(row.result.path_length);
      }
      risks.push_back(row.result.max_risk);
      cvar += row.result.mean_cvar;
    }
    agg.path_length = quartiles(lengths);
    agg.max_risk = quartiles(risks);
    agg.mean_cvar = cvar / agg.runs;
    out.aggregates.push_back(agg);
  }
  return out;
}

inline std::string format_number(double v) {
  if (is_missing(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string monte_carlo_csv(const MonteCarloResult& mc, char sep = ',') {
  std::string s;
  for (const char* col : {"run_id", "alpha", "seed", "success", "path_length_m", "max_risk", "mean_cvar", "steps"}) {
    s += col;
    s += sep;
  }
  s += "wall_time_ms\n";
  for (const auto& r : mc.rows) {
    s += std::to_string(r.run_id) + sep + format_number(r.alpha) + sep + std::to_string(r.seed) + sep +
         (r.result.success ? "1" : "0") + sep + format_number(r.result.path_length) + sep +
         format_number(r.result.max_risk) + sep + format_number(r.result.mean_cvar) + sep +
         std::to_string(r.result.steps) + sep + format_number(r.result.wall_time_ms) + "\n";
  }
  return s;
}

inline nlohmann::ordered_json monte_carlo_summary(const MonteCarloResult& mc) {
  auto num = [](double v) -> nlohmann::ordered_json {
    if (is_missing(v)) return nullptr;
    return v;
  };
  auto quart = [&](const Quartiles& q) {
    return nlohmann::ordered_json{{"q1", num(q.q1)}, {"median", num(q.median)}, {"q3", num(q.q3)}};
  };
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& a : mc.aggregates)
    arr.push_back({{"alpha", a.alpha},
                   {"runs", a.runs},
                   {"successes", a.successes},
                   {"success_rate", a.success_rate()},
                   {"path_length_m", quart(a.path_length)},
                   {"max_risk", quart(a.max_risk)},
                   {"mean_cvar", a.mean_cvar}});
  return {{"aggregates", arr}};
}

}  // namespace step
