// step_cli: world generation, risk mapping, planning, simulation, rendering.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "step/step.hpp"

namespace {

using namespace step;

struct Options {
  std::string config;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
  std::string format = "text";
  bool omit_timing = false;

  std::string map;
  std::vector<double> start;
  std::vector<double> goal;
  std::vector<std::string> paths;
  std::vector<std::string> trajectories;
  bool observed = false;
  bool draw_obstacles = false;
  int runs = 50;
  std::vector<double> alphas{0.05, 0.3, 0.5, 0.7, 0.95};
  std::string summary;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

PlannerConfig load(const Options& o) {
  PlannerConfig cfg = o.config.empty() ? PlannerConfig{} : load_config(o.config);
  if (o.alpha) cfg.set_alpha(*o.alpha);
  if (o.seed) cfg.world.seed = *o.seed;
  cfg.sim.model = cfg.dynamics;
  cfg.sim.record_timing = !o.omit_timing;
  cfg.validate();
  return cfg;
}

GridMap require_map(const Options& o) {
  if (o.map.empty()) throw UsageError("--map is required");
  return load_map(o.map);
}

Eigen::Vector2d xy(const std::vector<double>& v, const char* name) {
  if (v.size() < 2) throw UsageError(std::string("--") + name + " needs x y");
  return {v[0], v[1]};
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }
std::string dump_map(const GridMap& map) { return map_to_json(map).dump() + "\n"; }

/// Risk layers for planning: keep existing risk_mu/risk_sigma, otherwise
/// build them from elevation with the configured factors.
void ensure_risk(GridMap& map, const PlannerConfig& cfg, double alpha) {
  if (!map.has_layer(layer::risk_mu) || !map.has_layer(layer::risk_sigma)) {
    if (!map.has_layer(layer::elevation))
      throw ConfigError("map has neither risk_mu/risk_sigma nor an elevation layer");
    build_risk_map(map, cfg.factors, RiskLevel(alpha));
  } else {
    build_cvar_layer(map, RiskLevel(alpha));
  }
}

int cmd_gen_world(const Options& o) {
  const auto cfg = load(o);
  const World world = generate_world(cfg.world);
  GridMap map = o.observed ? observe(world, derive_seed(cfg.world.seed, 0x0B5E)) : world.truth;
  map.set_layer(layer::risk_sigma, world.obs_sigma);
  build_cvar_layer(map, RiskLevel(cfg.risk_alpha));
  spdlog::info("generated {}x{} world, seed {}", map.width(), map.height(), cfg.world.seed);
  write_output(o.out, dump_map(map));
  return 0;
}

int cmd_build_risk(const Options& o) {
  const auto cfg = load(o);
  GridMap map = require_map(o);
  build_risk_map(map, cfg.factors, RiskLevel(cfg.risk_alpha));
  write_output(o.out, dump_map(map));
  return 0;
}

int cmd_plan_geometric(const Options& o) {
  const auto cfg = load(o);
  GridMap map = require_map(o);
  ensure_risk(map, cfg, cfg.geom.alpha);
  const auto res = plan_geometric(map, xy(o.start, "start"), xy(o.goal, "goal"), cfg.geom);
  if (!res) throw std::runtime_error("no geometric path: " + to_string(res.reason));
  write_output(o.out, dump(path_to_json(*res.path)));
  return 0;
}

int cmd_plan_mpc(const Options& o) {
  const auto cfg = load(o);
  GridMap map = require_map(o);
  ensure_risk(map, cfg, cfg.mpc.alpha);
  const Eigen::Vector2d start = xy(o.start, "start"), goal = xy(o.goal, "goal");
  const auto geo = plan_geometric(map, start, goal, cfg.geom);
  if (!geo) throw std::runtime_error("no geometric path: " + to_string(geo.reason));
  const Eigen::Vector2d d = goal - start;
  const double theta = o.start.size() > 2 ? o.start[2] : std::atan2(d.y(), d.x());
  const double v = o.start.size() > 3 ? o.start[3] : 0.0;
  const auto x0 = DiffDriveModel::make_state(start.x(), start.y(), theta, v);
  const ReplanResult<DiffDriveModel>* no_previous = nullptr;
  const auto res = replan(cfg.dynamics, x0, no_previous, *geo.path, map, cfg.mpc, o.seed.value_or(1));
  spdlog::info("replan: feasible={} sqp={} qp_iters={} {:.2f} ms", res.feasible, res.stats.sqp_iterations,
               res.stats.qp_iterations, res.stats.wall_time_ms);
  nlohmann::ordered_json doc;
  doc["feasible"] = res.feasible;
  doc["fallback"] = res.stats.fallback;
  doc["alpha"] = res.alpha_used;
  doc["cost"] = res.score.cost;
  doc["collisions"] = res.score.collisions;
  doc["trajectory"] = trajectory_to_json(res.trajectory);
  doc["geometric_path"] = path_to_json(*geo.path);
  if (!o.omit_timing) doc["wall_time_ms"] = res.stats.wall_time_ms;
  write_output(o.out, dump(doc));
  return 0;
}

int cmd_simulate(const Options& o) {
  const auto cfg = load(o);
  const RunSetup setup = make_run(cfg.world, cfg.sim, cfg.world.seed);
  const Eigen::Vector2d goal = o.goal.empty() ? setup.goal : xy(o.goal, "goal");
  const auto r = run_episode(setup.world, setup.world.start, goal, cfg.sim, cfg.world.seed);
  nlohmann::ordered_json doc;
  doc["seed"] = cfg.world.seed;
  doc["alpha"] = cfg.sim.mpc.alpha;
  doc["start"] = {setup.world.start.x(), setup.world.start.y()};
  doc["goal"] = {goal.x(), goal.y()};
  doc["success"] = r.success;
  doc["failure_reason"] = r.failure_reason;
  doc["path_length_m"] = r.path_length;
  doc["max_risk"] = r.max_risk;
  doc["mean_cvar"] = r.mean_cvar;
  doc["steps"] = r.steps;
  if (!o.omit_timing) doc["wall_time_ms"] = r.wall_time_ms;
  auto exec = nlohmann::ordered_json::array();
  for (const auto& p : r.executed) exec.push_back({p.x(), p.y()});
  doc["executed"] = std::move(exec);
  write_output(o.out, dump(doc));
  return 0;
}

std::string monte_carlo_text(const MonteCarloResult& mc) {
  std::string s;
  char line[256];
  std::snprintf(line, sizeof line, "%6s %6s %20s %7s %13s %9s %9s %6s %12s\n", "run_id", "alpha", "seed", "success",
                "path_length_m", "max_risk", "mean_cvar", "steps", "wall_time_ms");
  s += line;
  for (const auto& r : mc.rows) {
    std::snprintf(line, sizeof line, "%6d %6.2f %20llu %7d %13.4f %9.4f %9.4f %6d %12.2f\n", r.run_id, r.alpha,
                  static_cast<unsigned long long>(r.seed), int(r.result.success), r.result.path_length,
                  r.result.max_risk, r.result.mean_cvar, r.result.steps, r.result.wall_time_ms);
    s += line;
  }
  return s;
}

int cmd_monte_carlo(const Options& o) {
  auto cfg = load(o);
  const std::uint64_t master = o.seed.value_or(1);
  const auto mc = monte_carlo(o.runs, o.alphas, cfg.world, cfg.sim, master, o.jobs);
  for (const auto& a : mc.aggregates)
    spdlog::info("alpha {:.2f}: {}/{} ok, median length {:.3f}, median max risk {:.3f}", a.alpha, a.successes,
                 a.runs, a.path_length.median, a.max_risk.median);
  if (o.format == "csv")
    write_output(o.out, monte_carlo_csv(mc));
  else
    write_output(o.out, monte_carlo_text(mc));
  if (!o.summary.empty()) write_output(o.summary, dump(monte_carlo_summary(mc)));
  return 0;
}

int cmd_render(const Options& o) {
  const auto cfg = load(o);
  GridMap map = require_map(o);
  if (o.out.empty() || o.out == "-") throw UsageError("render needs --out FILE.ppm");
  RenderOverlays overlays;
  for (const auto& path : o.paths) {
    const auto doc = read_json(path);
    std::vector<Eigen::Vector2d> poses;
    try {
      for (const auto& p : doc.at("poses")) poses.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("'" + path + "': " + e.what());
    }
    overlays.paths.push_back(std::move(poses));
  }
  for (const auto& path : o.trajectories) {
    auto doc = read_json(path);
    if (doc.contains("trajectory")) doc = doc["trajectory"];
    std::vector<Eigen::Vector2d> poses;
    try {
      for (const auto& s : doc.at("states")) {
        poses.emplace_back(s.at(0).get<double>(), s.at(1).get<double>());
        overlays.footprints.push_back(
            footprint_at(cfg.mpc.footprint, Pose2{s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()}));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("'" + path + "': " + e.what());
    }
    overlays.paths.push_back(std::move(poses));
  }
  const RiskLevel level(cfg.risk_alpha);
  if (o.draw_obstacles) {
    const auto risk = map.has_layer(layer::risk_mu) && map.has_layer(layer::risk_sigma)
                          ? cvar_values(map, level)
                          : std::vector<double>(map.layer(layer::cvar).begin(), map.layer(layer::cvar).end());
    Box2 roi;
    roi.extend(map.origin() - Eigen::Vector2d::Constant(map.resolution()));
    roi.extend(map.origin() + map.resolution() * Eigen::Vector2d(double(map.width()), double(map.height())));
    overlays.polygons = decompose_lethal_cells(map, risk, cfg.mpc.rho_max, roi);
  }
  write_ppm(render_map(map, level, overlays, cfg.render), o.out);
  return 0;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("step");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("STEP_LOG")) {
    const auto parsed = spdlog::level::from_str(lvl);
    if (parsed == spdlog::level::off && std::string(lvl) != "off")
      spdlog::warn("unknown STEP_LOG level '{}', keeping warn", lvl);
    else
      spdlog::set_level(parsed);
  }
}

int fail(const char* kind, const std::string& msg, int code) {
  std::fprintf(stderr, "error: %s: %s\n", kind, msg.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  Options o;
  CLI::App app{"risk-aware terrain planning toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config, "planner config file (JSON)");
  app.add_option("--alpha", o.alpha, "risk level alpha, overrides every alpha in the config")
      ->check(CLI::Range(0.0, 0.999));
  app.add_option("--seed", o.seed, "random seed");
  app.add_option("--out", o.out, "output file (default stdout)");
  app.add_option("--jobs", o.jobs, "parallel episodes for monte-carlo")->check(CLI::PositiveNumber);
  app.add_option("--format", o.format, "table format")->check(CLI::IsMember({"text", "csv"}));
  app.add_flag("--omit-timing", o.omit_timing, "leave wall-clock times out of outputs");

  auto* gen = app.add_subcommand("gen-world", "generate a synthetic terrain world");
  gen->add_flag("--observed", o.observed, "write a noisy observation instead of the true mean risk");

  auto* build = app.add_subcommand("build-risk", "compute risk layers from elevation");
  build->add_option("--map", o.map, "input map file")->required();

  auto* geo = app.add_subcommand("plan-geometric", "risk-aware A* path");
  geo->add_option("--map", o.map, "map file")->required();
  geo->add_option("--start", o.start, "x y")->expected(2)->required();
  geo->add_option("--goal", o.goal, "x y")->expected(2)->required();

  auto* mpc = app.add_subcommand("plan-mpc", "single kinodynamic replan along the A* path");
  mpc->add_option("--map", o.map, "map file")->required();
  mpc->add_option("--start", o.start, "x y [theta [v]]")->expected(2, 4)->required();
  mpc->add_option("--goal", o.goal, "x y")->expected(2)->required();

  auto* sim = app.add_subcommand("simulate", "one closed-loop episode");
  sim->add_option("--goal", o.goal, "x y (default: random goal at the configured distance)")->expected(2);

  auto* mc = app.add_subcommand("monte-carlo", "batch of episodes over several alphas");
  mc->add_option("--runs", o.runs, "episodes per alpha")->check(CLI::PositiveNumber);
  mc->add_option("--alphas", o.alphas, "alpha list")->delimiter(',');
  mc->add_option("--summary", o.summary, "aggregate JSON output file");

  auto* render = app.add_subcommand("render", "risk map image (PPM)");
  render->add_option("--map", o.map, "map file")->required();
  render->add_option("--path", o.paths, "path JSON overlay (repeatable)");
  render->add_option("--trajectory", o.trajectories, "trajectory JSON overlay with footprints (repeatable)");
  render->add_flag("--obstacles", o.draw_obstacles, "draw lethal-cell polygons");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*gen) return cmd_gen_world(o);
    if (*build) return cmd_build_risk(o);
    if (*geo) return cmd_plan_geometric(o);
    if (*mpc) return cmd_plan_mpc(o);
    if (*sim) return cmd_simulate(o);
    if (*mc) return cmd_monte_carlo(o);
    if (*render) return cmd_render(o);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const ParseError& e) {
    return fail("parse", e.what(), 3);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 4);
  } catch (const std::invalid_argument& e) {
    return fail("invalid_argument", e.what(), 5);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 1;
}
