#pragma once

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "step/dynamics.hpp"
#include "step/errors.hpp"
#include "step/geom_planner.hpp"
#include "step/mpc.hpp"
#include "step/render.hpp"
#include "step/risk.hpp"
#include "step/sim.hpp"

namespace step {

/// Step, tipover, and contact-loss factors. Weights are tuning values and
/// must sum to 1.
inline std::vector<RiskFactorSpec> default_risk_factors() {
  std::vector<RiskFactorSpec> f{default_factor_spec(RiskFactorKind::step), default_factor_spec(RiskFactorKind::tipover),
                                default_factor_spec(RiskFactorKind::contact_loss)};
  f[0].weight = 0.4;
  f[1].weight = 0.4;
  f[2].weight = 0.2;
  return f;
}

/// Everything the CLI can configure. Every field is optional in the file.
struct PlannerConfig {
  DiffDriveModel dynamics;
  MpcConfig mpc;
  GeomPlanConfig geom;
  double risk_alpha = 0.9;  // level used when building the cvar layer
  std::vector<RiskFactorSpec> factors = default_risk_factors();
  WorldSpec world;
  SimConfig sim;
  RenderStyle render;

  void set_alpha(double a) {
    RiskLevel{a};
    mpc.alpha = a;
    geom.alpha = a;
    risk_alpha = a;
    sim.set_alpha(a);
  }

  void validate() const {
    try {
      dynamics.validate();
      mpc.validate();
      sim.mpc.validate();
      world.validate();
      RiskLevel{risk_alpha};
      RiskLevel{geom.alpha};
      RiskLevel{sim.geom.alpha};
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    render.validate();
    if (factors.empty()) throw ConfigError("risk.factors must not be empty");
    double wsum = 0.0;
    for (const auto& f : factors) {
      if (!(f.weight >= 0.0)) throw ConfigError("risk factor weights must be >= 0");
      wsum += f.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("risk factor weights must sum to 1");
    if (!(geom.lambda >= 0.0) || !(sim.geom.lambda >= 0.0)) throw ConfigError("geom.lambda must be >= 0");
    if (sim.step_cap < 1) throw ConfigError("sim.step_cap must be >= 1");
    if (!(sim.goal_distance > 0.0) || !(sim.goal_tolerance > 0.0))
      throw ConfigError("sim goal distance and tolerance must be > 0");
  }
};

namespace detail {

/// One JSON object of the config document. Reads are optional; finish()
/// rejects any key that was never read.
class ConfigSection {
 public:
  ConfigSection(const nlohmann::json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError("'" + display() + "' must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return doc_.contains(key);
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = doc_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("field '" + field(key) + "' has the wrong type");
    }
  }

  template <int N>
  void read_vector(const std::string& key, Eigen::Matrix<double, N, 1>& out) {
    if (!has(key)) return;
    std::vector<double> v;
    read(key, v);
    if (v.size() != std::size_t(N))
      throw ConfigError("field '" + field(key) + "' needs " + std::to_string(N) + " values");
    for (int i = 0; i < N; ++i) out[i] = v[std::size_t(i)];
  }

  /// Returns the nested object, or an empty one when absent.
  ConfigSection child(const std::string& key) {
    static const nlohmann::json empty = nlohmann::json::object();
    return ConfigSection(has(key) ? doc_.at(key) : empty, field(key));
  }

  const nlohmann::json& at(const std::string& key) {
    seen_.insert(key);
    return doc_.at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : doc_.items())
      if (!seen_.count(key)) throw ConfigError("unknown field '" + field(key) + "'");
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const nlohmann::json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_dynamics(ConfigSection s, DiffDriveModel& m) {
  s.read("dt", m.dt);
  s.read("gamma_mix", m.gamma_mix);
  s.read("a_max", m.control_max[0]);
  s.read("yaw_rate_max", m.control_max[1]);
  s.read("v_max", m.v_max);
  s.finish();
}

inline void read_geom(ConfigSection s, GeomPlanConfig& g) {
  s.read("lambda", g.lambda);
  s.read("alpha", g.alpha);
  s.read("lethal_threshold", g.lethal_threshold);
  s.finish();
}

inline void read_qp(ConfigSection s, QpSettings& q) {
  s.read("eps_abs", q.eps_abs);
  s.read("eps_rel", q.eps_rel);
  s.read("max_iter", q.max_iter);
  s.read("rho", q.rho);
  s.read("sigma", q.sigma);
  s.read("relaxation", q.relaxation);
  s.read("adapt_interval", q.adapt_interval);
  s.read("check_interval", q.check_interval);
  s.read("scaling_passes", q.scaling_passes);
  s.read("infeasibility_check_after", q.infeasibility_check_after);
  s.read("eps_primal_inf", q.eps_primal_inf);
  s.finish();
  if (q.max_iter < 1 || q.check_interval < 1 || q.adapt_interval < 1)
    throw ConfigError("qp iteration counts must be >= 1");
}

inline void read_mpc(ConfigSection s, MpcConfig& c) {
  s.read("horizon", c.horizon);
  s.read("w_position", c.w_position);
  s.read("w_heading", c.w_heading);
  s.read("w_speed", c.w_speed);
  s.read("terminal_scale", c.terminal_scale);
  s.read("w_accel", c.w_accel);
  s.read("w_yaw", c.w_yaw);
  s.read("lambda", c.lambda);
  s.read("alpha", c.alpha);
  s.read("rho_max", c.rho_max);
  s.read("gamma_v", c.gamma_v);
  s.read("gamma_theta", c.gamma_theta);
  if (s.has("velocity_risk")) {
    std::string mode;
    s.read("velocity_risk", mode);
    if (mode == "monotone")
      c.velocity_risk = VelocityRiskMode::monotone;
    else if (mode == "literal")
      c.velocity_risk = VelocityRiskMode::literal;
    else
      throw ConfigError("field '" + s.field("velocity_risk") + "' must be monotone or literal");
  }
  s.read("pitch_max", c.pitch_max);
  s.read("roll_max", c.roll_max);
  s.read("eps_x", c.eps_x);
  s.read("eps_u", c.eps_u);
  s.read("lambda_eps", c.lambda_eps);
  s.read("qp_iterations", c.qp_iterations);
  s.read("v_ref", c.v_ref);
  s.read("accel_ref_fraction", c.accel_ref_fraction);
  s.read("sd_margin", c.sd_margin);
  s.read("activation_distance", c.activation_distance);
  s.read("slack_tol", c.slack_tol);
  {
    auto f = s.child("footprint");
    f.read("half_length", c.footprint.half_length);
    f.read("half_width", c.footprint.half_width);
    f.finish();
  }
  {
    auto l = s.child("library");
    l.read("n_random", c.library.n_random);
    l.read("perturb_std_linear", c.library.perturb_std_linear);
    l.read("perturb_std_angular", c.library.perturb_std_angular);
    l.read("arc_speed_fraction", c.library.arc_speed_fraction);
    l.read("arc_yaw_fractions", c.library.arc_yaw_fractions);
    l.read("vturn", c.library.vturn);
    l.read("uturn", c.library.uturn);
    l.read("lookahead", c.library.lookahead);
    l.finish();
  }
  {
    auto l = s.child("linesearch");
    l.read("gamma_init", c.linesearch.gamma_init);
    l.read("gamma_min", c.linesearch.gamma_min);
    l.read("gamma_max", c.linesearch.gamma_max);
    l.read("max_iterations", c.linesearch.max_iterations);
    l.finish();
  }
  read_qp(s.child("qp"), c.qp);
  s.finish();
}

inline RiskFactorSpec read_factor(ConfigSection s) {
  if (!s.has("kind")) throw ConfigError("field '" + s.field("kind") + "' is required");
  std::string kind;
  s.read("kind", kind);
  RiskFactorSpec f = default_factor_spec(risk_factor_kind_from_string(kind));
  s.read("weight", f.weight);
  s.read("benign", f.benign);
  s.read("lethal", f.lethal);
  s.read("risk_cap", f.risk_cap);
  s.read("sigma_floor", f.sigma_floor);
  s.read("localization_sigma", f.localization_sigma);
  s.read("obstacle_height", f.obstacle_height);
  s.read("search_radius", f.search_radius);
  s.read("window", f.window);
  s.read_vector("sensor_origin", f.sensor_origin);
  s.read("sigma_per_meter", f.sigma_per_meter);
  s.read("input_layer", f.input_layer);
  s.finish();
  return f;
}

inline void read_risk(ConfigSection s, PlannerConfig& cfg) {
  s.read("alpha", cfg.risk_alpha);
  if (s.has("factors")) {
    const auto& arr = s.at("factors");
    if (!arr.is_array()) throw ConfigError("field '" + s.field("factors") + "' must be an array");
    cfg.factors.clear();
    for (std::size_t i = 0; i < arr.size(); ++i)
      cfg.factors.push_back(read_factor(ConfigSection(arr[i], s.field("factors") + "[" + std::to_string(i) + "]")));
  }
  s.finish();
}

inline void read_world(ConfigSection s, WorldSpec& w) {
  s.read("seed", w.seed);
  s.read("width", w.width);
  s.read("height", w.height);
  s.read("resolution", w.resolution);
  s.read("elevation_octaves", w.elevation_octaves);
  s.read("elevation_scale", w.elevation_scale);
  s.read("elevation_amplitude", w.elevation_amplitude);
  s.read("blob_count", w.blob_count);
  s.read("blob_radius_min", w.blob_radius_min);
  s.read("blob_radius_max", w.blob_radius_max);
  s.read("blob_mu", w.blob_mu);
  s.read("risk_scale", w.risk_scale);
  s.read("risk_amplitude", w.risk_amplitude);
  s.read("risk_octaves", w.risk_octaves);
  s.read("patch_scale", w.patch_scale);
  s.read("patch_threshold", w.patch_threshold);
  s.read("patch_ramp", w.patch_ramp);
  s.read("patch_mu", w.patch_mu);
  s.read("sigma_percep", w.sigma_percep);
  s.read("sigma_hazard_gain", w.sigma_hazard_gain);
  s.read("start_clear_radius", w.start_clear_radius);
  s.finish();
}

inline void read_sim(ConfigSection s, PlannerConfig& cfg) {
  read_world(s.child("world"), cfg.world);
  read_mpc(s.child("mpc"), cfg.sim.mpc);
  read_geom(s.child("geom"), cfg.sim.geom);
  s.read("goal_distance", cfg.sim.goal_distance);
  s.read("goal_tolerance", cfg.sim.goal_tolerance);
  s.read("step_cap", cfg.sim.step_cap);
  s.read("failure_mu", cfg.sim.failure_mu);
  s.read("goal_max_mu", cfg.sim.goal_max_mu);
  s.read("path_hysteresis", cfg.sim.path_hysteresis);
  s.finish();
}

inline void read_color(ConfigSection& s, const std::string& key, Rgb& c) {
  if (!s.has(key)) return;
  std::vector<int> v;
  s.read(key, v);
  if (v.size() != 3) throw ConfigError("field '" + s.field(key) + "' needs 3 values");
  for (int k = 0; k < 3; ++k) {
    if (v[std::size_t(k)] < 0 || v[std::size_t(k)] > 255)
      throw ConfigError("field '" + s.field(key) + "' values must lie in [0, 255]");
    c[std::size_t(k)] = std::uint8_t(v[std::size_t(k)]);
  }
}

inline void read_render(ConfigSection s, RenderStyle& r) {
  s.read("safe_max", r.safe_max);
  s.read("risky_min", r.risky_min);
  s.read("pixels_per_cell", r.pixels_per_cell);
  read_color(s, "safe", r.safe);
  read_color(s, "moderate_low", r.moderate_low);
  read_color(s, "moderate_high", r.moderate_high);
  read_color(s, "risky", r.risky);
  read_color(s, "missing", r.missing);
  read_color(s, "path", r.path);
  read_color(s, "polygon", r.polygon);
  read_color(s, "footprint", r.footprint);
  s.finish();
}

}  // namespace detail

inline PlannerConfig config_from_json(const nlohmann::json& doc) {
  PlannerConfig cfg;
  detail::ConfigSection root(doc, "");
  detail::read_dynamics(root.child("dynamics"), cfg.dynamics);
  detail::read_mpc(root.child("mpc"), cfg.mpc);
  detail::read_geom(root.child("geom"), cfg.geom);
  detail::read_risk(root.child("risk"), cfg);
  detail::read_sim(root.child("sim"), cfg);
  detail::read_render(root.child("render"), cfg.render);
  root.finish();
  cfg.sim.model = cfg.dynamics;
  cfg.validate();
  return cfg;
}

inline PlannerConfig load_config_from_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  return config_from_json(doc);
}

inline PlannerConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return load_config_from_string(ss.str());
}

}  // namespace step
