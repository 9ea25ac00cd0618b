#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "step/dynamics.hpp"
#include "step/geom_planner.hpp"
#include "step/gridmap.hpp"
#include "step/polygeom.hpp"
#include "step/qp.hpp"
#include "step/risk.hpp"

namespace step {

struct LibrarySettings {
  int n_random = 6;
  double perturb_std_linear = 0.3;   // std of the first control component
  double perturb_std_angular = 0.3;  // std of the remaining components
  double arc_speed_fraction = 0.6;
  std::vector<double> arc_yaw_fractions{-1.0, -0.4, 0.4, 1.0};
  bool vturn = true;
  bool uturn = true;
  double lookahead = 1.0;  // pure-pursuit lookahead [m]
};

struct LinesearchSettings {
  double gamma_init = 1.0;
  double gamma_min = 1.0 / 32.0;
  double gamma_max = 1.0;
  int max_iterations = 6;
};

enum class VelocityRiskMode { monotone, literal };

struct MpcConfig {
  int horizon = 20;

  // tracking weights Q_k on position, heading, forward speed
  double w_position = 1.0;
  double w_heading = 0.1;
  double w_speed = 0.2;
  double terminal_scale = 2.0;
  // control effort
  double w_accel = 0.05;
  double w_yaw = 0.05;

  double lambda = 1.0;  // CVaR cost weight
  double alpha = 0.9;
  double rho_max = 0.5;

  double gamma_v = 0.3;
  double gamma_theta = 0.3;
  VelocityRiskMode velocity_risk = VelocityRiskMode::monotone;

  double pitch_max = 0.35;  // rad
  double roll_max = 0.35;   // rad

  double eps_x = 0.5;
  double eps_u = 1.0;
  double lambda_eps = 1e4;
  int qp_iterations = 3;

  double v_ref = 0.8;               // nominal cruise speed of the reference
  double accel_ref_fraction = 0.5;  // reference acceleration as a fraction of a_max
  double sd_margin = 0.05;
  double activation_distance = 3.0;
  double slack_tol = 1e-3;

  FootprintSpec footprint;
  LibrarySettings library;
  LinesearchSettings linesearch;
  QpSettings qp{.eps_abs = 1e-4, .eps_rel = 1e-4, .max_iter = 4000};

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("mpc horizon must be >= 1");
    if (qp_iterations < 1) throw std::invalid_argument("qp_iterations must be >= 1");
    if (!(eps_x > 0.0) || !(eps_u > 0.0)) throw std::invalid_argument("box radii must be > 0");
    for (double w : {w_position, w_heading, w_speed, terminal_scale, w_accel, w_yaw, lambda, lambda_eps, gamma_v,
                     gamma_theta})
      if (w < 0.0) throw std::invalid_argument("mpc weights must be >= 0");
    if (!(rho_max > 0.0)) throw std::invalid_argument("rho_max must be > 0");
    RiskLevel{alpha};
  }
};

struct ReferencePoint {
  Eigen::Vector2d position;
  double heading = 0.0;
  double speed = 0.0;
};

// ─── Path helpers ───────────────────────────────────────────────────────────

/// Arc-length parameterized polyline over a geometric path.
class PathPolyline {
 public:
  explicit PathPolyline(std::span<const Eigen::Vector2d> poses) : points_(poses.begin(), poses.end()) {
    if (points_.empty()) throw std::invalid_argument("reference path is empty");
    arc_.push_back(0.0);
    for (std::size_t i = 1; i < points_.size(); ++i) arc_.push_back(arc_.back() + (points_[i] - points_[i - 1]).norm());
  }

  double length() const { return arc_.back(); }

  /// Arc length of the closest point on the polyline.
  double project(const Eigen::Vector2d& p) const {
    if (points_.size() == 1) return 0.0;
    double best_d = std::numeric_limits<double>::infinity(), best_s = 0.0;
    for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
      const Eigen::Vector2d e = points_[i + 1] - points_[i];
      const double ee = e.squaredNorm();
      const double t = ee > 0.0 ? std::clamp((p - points_[i]).dot(e) / ee, 0.0, 1.0) : 0.0;
      const double d = (points_[i] + t * e - p).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best_s = arc_[i] + t * std::sqrt(ee);
      }
    }
    return best_s;
  }

  Eigen::Vector2d point_at(double s) const {
    if (points_.size() == 1 || s <= 0.0) return points_.front();
    if (s >= length()) return points_.back();
    const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    const std::size_t i = std::size_t(it - arc_.begin()) - 1;
    const double seg = arc_[i + 1] - arc_[i];
    const double t = seg > 0.0 ? (s - arc_[i]) / seg : 0.0;
    return points_[i] + t * (points_[i + 1] - points_[i]);
  }

  /// Direction of travel at arc length s; nullopt for a single-point path.
  std::optional<double> heading_at(double s) const {
    if (points_.size() == 1) return std::nullopt;
    const auto it = std::upper_bound(arc_.begin(), arc_.end(), std::clamp(s, 0.0, length()));
    std::size_t i = it == arc_.end() ? points_.size() - 2 : std::size_t(it - arc_.begin()) - 1;
    i = std::min(i, points_.size() - 2);
    const Eigen::Vector2d e = points_[i + 1] - points_[i];
    return std::atan2(e.y(), e.x());
  }

 private:
  std::vector<Eigen::Vector2d> points_;
  std::vector<double> arc_;
};

/// Time-parameterized reference over k = 0..T: the robot's projection onto the
/// path advanced by a speed profile that ramps from the current speed at a
/// feasible acceleration and brakes to rest at the path end.
inline std::vector<ReferencePoint> build_reference(const PathPolyline& path, const Pose2& pose, double speed,
                                                   int horizon, double dt, double v_ref, double accel) {
  std::vector<ReferencePoint> ref;
  ref.reserve(std::size_t(horizon) + 1);
  double s = path.project(pose.position());
  double v = std::max(0.0, speed);
  for (int k = 0; k <= horizon; ++k) {
    const double remaining = path.length() - s;
    const double v_stop = std::sqrt(2.0 * accel * std::max(0.0, remaining));
    ReferencePoint r;
    r.position = path.point_at(s);
    r.heading = path.heading_at(s).value_or(pose.theta);
    r.speed = std::min({v, v_ref, v_stop});
    ref.push_back(r);
    v = std::min({v + accel * dt, v_ref, v_stop});
    s = std::min(path.length(), s + v * dt);
  }
  return ref;
}

// ─── Risk derivatives ───────────────────────────────────────────────────────

inline double sample_risk(const GridMap& map, std::span<const double> risk, const Eigen::Vector2d& p,
                          double fallback = 1.0) {
  const double v = map.sample_clamped(risk, p);
  return is_missing(v) ? fallback : v;
}

struct CvarDerivatives {
  double value = 0.0;
  Eigen::Vector3d gradient = Eigen::Vector3d::Zero();  // over (p_x, p_y, p_theta)
  Eigen::Matrix3d hessian = Eigen::Matrix3d::Zero();   // symmetric PSD
};

/// Central differences of the interpolated CVaR field with step
/// resolution / 4; the Hessian is symmetrized and eigenvalue-floored at 0.
/// The field does not depend on yaw, so yaw rows/columns are zero.
inline CvarDerivatives cvar_cost_derivatives(const GridMap& map, std::span<const double> risk, const Pose2& s) {
  const Eigen::Vector2d p = s.position();
  if (!map.contains(p)) throw std::out_of_range("CVaR derivative point outside map extent");
  const double h = map.resolution() / 4.0;
  auto f = [&](double dx, double dy) { return sample_risk(map, risk, p + Eigen::Vector2d(dx, dy)); };

  CvarDerivatives d;
  const double f0 = f(0, 0);
  const double fxp = f(h, 0), fxm = f(-h, 0), fyp = f(0, h), fym = f(0, -h);
  d.value = f0;
  d.gradient << (fxp - fxm) / (2 * h), (fyp - fym) / (2 * h), 0.0;

  Eigen::Matrix2d hxy;
  hxy(0, 0) = (fxp - 2 * f0 + fxm) / (h * h);
  hxy(1, 1) = (fyp - 2 * f0 + fym) / (h * h);
  hxy(0, 1) = hxy(1, 0) = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h * h);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(hxy);
  const Eigen::Vector2d lam = eig.eigenvalues().cwiseMax(0.0);
  d.hessian.topLeftCorner<2, 2>() = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  d.hessian = 0.5 * (d.hessian + d.hessian.transpose()).eval();
  return d;
}

inline CvarDerivatives cvar_cost_derivatives(const GridMap& map, const Pose2& s) {
  return cvar_cost_derivatives(map, map.layer(layer::cvar), s);
}

// ─── Orientation ────────────────────────────────────────────────────────────

struct OrientationLinearization {
  Eigen::Vector2d omega = Eigen::Vector2d::Zero();                  // (pitch, roll)
  Eigen::Matrix<double, 2, 3> jacobian = Eigen::Matrix<double, 2, 3>::Zero();  // d omega / d (p_x, p_y, p_theta)
};

inline Eigen::Matrix3d yaw_rotation(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix3d r;
  r << c, s, 0, -s, c, 0, 0, 0, 1;
  return r;
}

/// Pitch and roll from the body-frame surface normal n^r = R_theta n^w.
inline Eigen::Vector2d pitch_roll(const Eigen::Vector3d& normal_world, double theta) {
  const Eigen::Vector3d nr = yaw_rotation(theta) * normal_world;
  return {std::atan2(nr.x(), nr.z()), -std::atan2(nr.y(), nr.z())};
}

inline Eigen::Vector2d orientation_angles(const GridMap& map, const Pose2& s) {
  return pitch_roll(map.sample_normal(s.position()), s.theta);
}

/// omega(s) and its Jacobian by the chain rule through the body-frame normal.
inline OrientationLinearization orientation_constraint_rows(const GridMap& map, const Pose2& s) {
  const Eigen::Vector3d nw = map.sample_normal(s.position());
  const double c = std::cos(s.theta), sn = std::sin(s.theta);
  const Eigen::Matrix3d r = yaw_rotation(s.theta);
  Eigen::Matrix3d dr;
  dr << -sn, c, 0, -c, -sn, 0, 0, 0, 0;
  const Eigen::Vector3d nr = r * nw;

  Eigen::Matrix<double, 2, 3> dg = Eigen::Matrix<double, 2, 3>::Zero();
  const double dxz = nr.x() * nr.x() + nr.z() * nr.z();
  const double dyz = nr.y() * nr.y() + nr.z() * nr.z();
  if (dxz > 0.0) {
    dg(0, 0) = nr.z() / dxz;
    dg(0, 2) = -nr.x() / dxz;
  }
  if (dyz > 0.0) {
    dg(1, 1) = -nr.z() / dyz;
    dg(1, 2) = nr.y() / dyz;
  }

  OrientationLinearization out;
  out.omega = {std::atan2(nr.x(), nr.z()), -std::atan2(nr.y(), nr.z())};
  out.jacobian.leftCols<2>() = dg * r * elevation_normal_jacobian(map, s.position());
  out.jacobian.col(2) = dg * dr * nw;
  return out;
}

// ─── Velocity-risk coupling ─────────────────────────────────────────────────

struct SpeedBound {
  double value = 0.0;
  double slope = 0.0;  // d value / d rho
};

/// Admissible magnitude of a velocity term in a cell of risk rho. The
/// monotone mode scales the limit down linearly to `floor_fraction` as rho
/// approaches rho_max; the literal mode is gain * rho.
inline SpeedBound velocity_bound(double limit, double gain, double rho, const MpcConfig& cfg) {
  if (cfg.velocity_risk == VelocityRiskMode::literal) return {gain * rho, gain};
  const double t = 1.0 - rho / cfg.rho_max;
  const double floor_fraction = std::clamp(gain, 0.0, 1.0);
  if (t >= 1.0) return {limit, 0.0};
  if (t <= floor_fraction) return {limit * floor_fraction, 0.0};
  return {limit * t, -limit / cfg.rho_max};
}

// ─── Planning problem ───────────────────────────────────────────────────────

/// Everything one replan cycle reads: the model, map, per-cell risk at the
/// configured level, nearby obstacles, and the time-indexed reference.
template <class Model>
struct PlanningProblem {
  const Model& model;
  const GridMap& map;
  const MpcConfig& cfg;
  std::vector<double> risk;
  std::vector<ConvexPolygon> obstacles;
  PathPolyline path;
  std::vector<ReferencePoint> reference;
  bool has_normals = false;

  PlanningProblem(const Model& m, const GridMap& gm, const MpcConfig& c, const GeometricPath& geometric,
                  const typename Model::State& x0)
      : model(m), map(gm), cfg(c), path(geometric.poses) {
    if (map.has_layer(layer::risk_mu) && map.has_layer(layer::risk_sigma))
      risk = cvar_values(map, RiskLevel(cfg.alpha));
    else
      risk = map.layer(layer::cvar);
    has_normals = map.has_layer(layer::normal_x) && map.has_layer(layer::normal_y) && map.has_layer(layer::normal_z);
    reference = build_reference(path, Model::pose(x0), Model::forward_speed(x0), cfg.horizon, model.dt, cfg.v_ref,
                                cfg.accel_ref_fraction * model.control_max[0]);

    double reach = cfg.activation_distance + std::hypot(cfg.footprint.half_length, cfg.footprint.half_width);
    for (const auto& [idx, vmax] : model.velocity_limits()) reach += vmax * model.dt * cfg.horizon / 2.0;
    reach += std::abs(Model::forward_speed(x0)) * model.dt * cfg.horizon;
    const Eigen::Vector2d c0(x0[0], x0[1]);
    obstacles = decompose_lethal_cells(map, risk, cfg.rho_max, Box2(c0 - Eigen::Vector2d::Constant(reach),
                                                                     c0 + Eigen::Vector2d::Constant(reach)));
    // an obstacle the robot already overlaps cannot be avoided by any
    // candidate; keeping it would only mark every rollout as colliding
    const auto fp0 = footprint_at(cfg.footprint, Model::pose(x0));
    std::erase_if(obstacles, [&](const ConvexPolygon& o) { return signed_distance(fp0, o) < 0.0; });
  }

  double tail_risk_cap() const { return 1.0; }
};

/// Obstacles whose bounds come within `distance` of the polygon's bounds.
inline std::vector<const ConvexPolygon*> nearby_obstacles(std::span<const ConvexPolygon> obstacles,
                                                          const ConvexPolygon& footprint, double distance) {
  Box2 grown = footprint.bounds();
  grown.min().array() -= distance;
  grown.max().array() += distance;
  std::vector<const ConvexPolygon*> out;
  for (const auto& o : obstacles)
    if (grown.intersects(o.bounds())) out.push_back(&o);
  return out;
}

// ─── Nonlinear cost ─────────────────────────────────────────────────────────

struct TrajectoryScore {
  double cost = 0.0;
  int collisions = 0;  // steps whose footprint penetrates an obstacle or leaves the map
};

struct ConstraintViolation {
  double state = 0.0;        // velocity limits and velocity-risk coupling
  double obstacle = 0.0;     // sd margin shortfall
  double orientation = 0.0;  // pitch/roll excess
};

template <class Model>
ConstraintViolation step_violation(const PlanningProblem<Model>& pb, const typename Model::State& x,
                                   const typename Model::Control& u, bool include_yaw, double rho, double* min_sd,
                                   bool* collided) {
  const auto& cfg = pb.cfg;
  ConstraintViolation v;
  for (const auto& [idx, vmax] : pb.model.velocity_limits()) v.state = std::max(v.state, std::abs(x[idx]) - vmax);

  double vmax_trans = std::numeric_limits<double>::infinity();
  for (const auto& [idx, vm] : pb.model.velocity_limits())
    if (idx == 3) vmax_trans = vm;
  const auto trans = pb.model.translational_term(x);
  v.state = std::max(v.state, std::abs(trans.value) - velocity_bound(vmax_trans, cfg.gamma_v, rho, cfg).value);
  if (include_yaw) {
    const auto yaw = pb.model.yaw_rate_term(x, u);
    v.state = std::max(v.state,
                       std::abs(yaw.value) - velocity_bound(pb.model.yaw_rate_max(), cfg.gamma_theta, rho, cfg).value);
  }

  const Pose2 pose = Model::pose(x);
  const auto fp = footprint_at(cfg.footprint, pose);
  for (const ConvexPolygon* o : nearby_obstacles(pb.obstacles, fp, std::max(cfg.sd_margin, 0.0))) {
    const double sd = signed_distance(fp, *o);
    if (min_sd) *min_sd = std::min(*min_sd, sd);
    if (sd < 0.0 && collided) *collided = true;
    v.obstacle = std::max(v.obstacle, cfg.sd_margin - sd);
  }

  if (pb.has_normals && pb.map.contains(pose.position())) {
    const Eigen::Vector2d w = orientation_angles(pb.map, pose);
    v.orientation = std::max({v.orientation, std::abs(w[0]) - cfg.pitch_max, std::abs(w[1]) - cfg.roll_max});
  }
  v.state = std::max(v.state, 0.0);
  return v;
}

/// Full nonlinear objective (tracking + lambda * CVaR + effort + quadratic
/// penalty on constraint violations) and collision count of a trajectory.
template <class Model>
TrajectoryScore evaluate_trajectory(const PlanningProblem<Model>& pb, const Trajectory<Model>& traj) {
  const auto& cfg = pb.cfg;
  TrajectoryScore score;
  const int horizon = int(traj.controls.size());
  for (int k = 0; k < horizon; ++k) {
    const auto& u = traj.controls[std::size_t(k)];
    for (int j = 0; j < Model::kControlDim; ++j)
      score.cost += (j + 1 < Model::kControlDim ? cfg.w_accel : cfg.w_yaw) * u[j] * u[j];
  }
  for (int k = 1; k <= horizon; ++k) {
    const auto& x = traj.states[std::size_t(k)];
    const Pose2 pose = Model::pose(x);
    const auto& r = pb.reference[std::size_t(std::min<int>(k, int(pb.reference.size()) - 1))];
    const double scale = k == horizon ? cfg.terminal_scale : 1.0;
    const double eh = wrap_angle(pose.theta - r.heading);
    const double ev = Model::forward_speed(x) - r.speed;
    score.cost += scale * (cfg.w_position * (pose.position() - r.position).squaredNorm() + cfg.w_heading * eh * eh +
                           cfg.w_speed * ev * ev);

    const bool on_map = pb.map.contains(pose.position());
    const double rho = on_map ? sample_risk(pb.map, pb.risk, pose.position()) : 1.0;
    score.cost += cfg.lambda * rho;

    bool collided = !on_map;
    const bool yaw_here = !Model::kYawRateUsesControl || k < horizon;
    const auto& u = traj.controls[std::size_t(std::min(k, horizon - 1))];
    const auto v = step_violation(pb, x, u, yaw_here, rho, nullptr, &collided);
    score.cost += cfg.lambda_eps * (v.state * v.state + v.obstacle * v.obstacle + v.orientation * v.orientation);
    if (collided) ++score.collisions;
  }
  if constexpr (Model::kYawRateUsesControl) {
    // commanded yaw rate at the current state
    if (horizon > 0) {
      const auto& x0 = traj.states.front();
      const double rho = pb.map.contains(Model::pose(x0).position())
                             ? sample_risk(pb.map, pb.risk, Model::pose(x0).position())
                             : 1.0;
      const auto yaw = pb.model.yaw_rate_term(x0, traj.controls.front());
      const double ex = std::max(
          0.0, std::abs(yaw.value) - velocity_bound(pb.model.yaw_rate_max(), cfg.gamma_theta, rho, cfg).value);
      score.cost += cfg.lambda_eps * ex * ex;
    }
  }
  return score;
}

// ─── Audit ──────────────────────────────────────────────────────────────────

struct AuditReport {
  bool controls_within_limits = true;
  bool on_map = true;
  double max_state_violation = 0.0;
  double max_orientation_violation = 0.0;
  double min_signed_distance = std::numeric_limits<double>::infinity();

  bool passes(double tol) const {
    return controls_within_limits && on_map && max_state_violation <= tol && max_orientation_violation <= tol &&
           min_signed_distance >= -tol;
  }
};

/// Checks a trajectory against the hard constraints of the nonlinear problem.
template <class Model>
AuditReport audit_trajectory(const PlanningProblem<Model>& pb, const Trajectory<Model>& traj) {
  AuditReport rep;
  const int horizon = int(traj.controls.size());
  for (const auto& u : traj.controls)
    if ((u.cwiseAbs() - pb.model.control_max).maxCoeff() > 0.0) rep.controls_within_limits = false;
  for (int k = 0; k <= horizon; ++k) {
    const auto& x = traj.states[std::size_t(k)];
    const Pose2 pose = Model::pose(x);
    if (!pb.map.contains(pose.position())) {
      rep.on_map = false;
      continue;
    }
    const double rho = sample_risk(pb.map, pb.risk, pose.position());
    const bool yaw_here = Model::kYawRateUsesControl ? k < horizon : k > 0;
    const auto& u = traj.controls[std::size_t(std::clamp(k, 0, std::max(0, horizon - 1)))];
    if (horizon == 0) break;
    bool collided = false;
    double min_sd = rep.min_signed_distance;
    const auto v = step_violation(pb, x, u, yaw_here, rho, &min_sd, &collided);
    if (k == 0) {
      // the current state is given; only the commanded yaw rate is checked there
      if constexpr (Model::kYawRateUsesControl) {
        const auto yaw = pb.model.yaw_rate_term(x, u);
        rep.max_state_violation = std::max(
            rep.max_state_violation,
            std::abs(yaw.value) - velocity_bound(pb.model.yaw_rate_max(), pb.cfg.gamma_theta, rho, pb.cfg).value);
      }
      continue;
    }
    rep.min_signed_distance = min_sd;
    rep.max_state_violation = std::max(rep.max_state_violation, v.state);
    rep.max_orientation_violation = std::max(rep.max_orientation_violation, v.orientation);
  }
  return rep;
}

}  // namespace step
