#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "step/mpc_problem.hpp"

namespace step {

// ─── SQP subproblem ─────────────────────────────────────────────────────────

enum SlackClass { kStateSlack = 0, kObstacleSlack = 1, kOrientationSlack = 2 };

/// Decision vector [dx_0..dx_T, du_0..du_{T-1}, slacks(k=1..T) x 3].
struct SqpLayout {
  int nx = 0;
  int nu = 0;
  int horizon = 0;

  int state(int k) const { return k * nx; }
  int control(int k) const { return nx * (horizon + 1) + k * nu; }
  int slack(int k, SlackClass c) const { return nx * (horizon + 1) + nu * horizon + 3 * (k - 1) + int(c); }
  int size() const { return nx * (horizon + 1) + nu * horizon + 3 * horizon; }
};

struct SqpSubproblem {
  QpProblem qp;
  SqpLayout layout;
  int dynamics_rows = 0;
  int velocity_risk_rows = 0;
  int obstacle_rows = 0;
  int orientation_rows = 0;
};

namespace detail {

struct RowSet {
  std::vector<Triplet> entries;
  std::vector<double> lo, hi;

  int add(double l, double u) {
    lo.push_back(l);
    hi.push_back(u);
    return int(lo.size()) - 1;
  }
  void set(int row, int col, double v) {
    if (v != 0.0) entries.emplace_back(row, col, v);
  }
};

}  // namespace detail

/// Linearizes dynamics and constraints around a candidate and builds the
/// quadratic model of the nonlinear cost over the correction (dx, du, slack).
/// Throws std::out_of_range when a candidate state leaves the map.
template <class Model>
SqpSubproblem build_sqp_qp(const PlanningProblem<Model>& pb, const Trajectory<Model>& cand) {
  constexpr int nx = Model::kStateDim, nu = Model::kControlDim;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const auto& cfg = pb.cfg;
  const auto& model = pb.model;
  const int horizon = int(cand.controls.size());
  if (horizon < 1 || int(cand.states.size()) != horizon + 1)
    throw std::invalid_argument("candidate trajectory has inconsistent length");

  SqpSubproblem out;
  out.layout = {nx, nu, horizon};
  const SqpLayout& L = out.layout;
  const int n = L.size();

  std::vector<Triplet> p_entries;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
  auto add_p = [&](int i, int j, double v) {
    if (v != 0.0) p_entries.emplace_back(i, j, v);
  };

  // risk derivatives at k = 0..T
  std::vector<CvarDerivatives> risk(std::size_t(horizon) + 1);
  for (int k = 0; k <= horizon; ++k)
    risk[std::size_t(k)] = cvar_cost_derivatives(pb.map, pb.risk, Model::pose(cand.states[std::size_t(k)]));

  // ── cost
  for (int k = 0; k < horizon; ++k) {
    const auto& u = cand.controls[std::size_t(k)];
    for (int j = 0; j < nu; ++j) {
      const double w = j + 1 < nu ? cfg.w_accel : cfg.w_yaw;
      add_p(L.control(k) + j, L.control(k) + j, 2.0 * w);
      q[L.control(k) + j] += 2.0 * w * u[j];
    }
  }
  for (int k = 1; k <= horizon; ++k) {
    const auto& x = cand.states[std::size_t(k)];
    const auto& r = pb.reference[std::size_t(std::min<int>(k, int(pb.reference.size()) - 1))];
    const double scale = k == horizon ? cfg.terminal_scale : 1.0;
    const std::array<double, 4> w{cfg.w_position * scale, cfg.w_position * scale, cfg.w_heading * scale,
                                  cfg.w_speed * scale};
    const std::array<double, 4> e{x[0] - r.position.x(), x[1] - r.position.y(), wrap_angle(x[2] - r.heading),
                                  x[3] - r.speed};
    for (int j = 0; j < 4; ++j) {
      add_p(L.state(k) + j, L.state(k) + j, 2.0 * w[std::size_t(j)]);
      q[L.state(k) + j] += 2.0 * w[std::size_t(j)] * e[std::size_t(j)];
    }
    const auto& d = risk[std::size_t(k)];
    for (int a = 0; a < 3; ++a) {
      q[L.state(k) + a] += cfg.lambda * d.gradient[a];
      for (int b = 0; b < 3; ++b) add_p(L.state(k) + a, L.state(k) + b, cfg.lambda * d.hessian(a, b));
    }
    for (int c = 0; c < 3; ++c) add_p(L.slack(k, SlackClass(c)), L.slack(k, SlackClass(c)), 2.0 * cfg.lambda_eps);
  }

  // ── constraints
  detail::RowSet rows;
  for (int j = 0; j < nx; ++j) rows.set(rows.add(0.0, 0.0), L.state(0) + j, 1.0);

  typename Model::StateMatrix a;
  typename Model::InputMatrix b;
  for (int k = 0; k < horizon; ++k) {
    const auto& x = cand.states[std::size_t(k)];
    const auto& u = cand.controls[std::size_t(k)];
    model.linearize(x, u, a, b);
    typename Model::State defect = model.step(x, u) - cand.states[std::size_t(k) + 1];
    defect[2] = wrap_angle(defect[2]);
    for (int i = 0; i < nx; ++i) {
      const int row = rows.add(defect[i], defect[i]);
      rows.set(row, L.state(k + 1) + i, 1.0);
      for (int j = 0; j < nx; ++j) rows.set(row, L.state(k) + j, -a(i, j));
      for (int j = 0; j < nu; ++j) rows.set(row, L.control(k) + j, -b(i, j));
      ++out.dynamics_rows;
    }
  }

  // control limits intersected with the du trust region
  for (int k = 0; k < horizon; ++k) {
    const auto& u = cand.controls[std::size_t(k)];
    for (int j = 0; j < nu; ++j) {
      const double lo = std::max(-model.control_max[j] - u[j], -cfg.eps_u);
      const double hi = std::min(model.control_max[j] - u[j], cfg.eps_u);
      rows.set(rows.add(std::min(lo, 0.0), std::max(hi, 0.0)), L.control(k) + j, 1.0);
    }
  }
  for (int k = 1; k <= horizon; ++k)
    for (int j = 0; j < nx; ++j) rows.set(rows.add(-cfg.eps_x, cfg.eps_x), L.state(k) + j, 1.0);

  // |t(x) + dt| <= b(rho(p) + drho), linearized, softened by the state slack
  auto add_abs_bound = [&](const auto& term, const SpeedBound& bound, const CvarDerivatives& d, int k_state,
                           int k_control, int slack_col) {
    const Eigen::Vector2d db = bound.slope * d.gradient.head<2>();
    const int r1 = rows.add(-kInf, bound.value - term.value);
    const int r2 = rows.add(-bound.value - term.value, kInf);
    for (int j = 0; j < nx; ++j) {
      rows.set(r1, L.state(k_state) + j, term.d_state[j]);
      rows.set(r2, L.state(k_state) + j, term.d_state[j]);
    }
    if (k_control >= 0)
      for (int j = 0; j < nu; ++j) {
        rows.set(r1, L.control(k_control) + j, term.d_control[j]);
        rows.set(r2, L.control(k_control) + j, term.d_control[j]);
      }
    for (int j = 0; j < 2; ++j) {
      rows.set(r1, L.state(k_state) + j, -db[j]);
      rows.set(r2, L.state(k_state) + j, db[j]);
    }
    rows.set(r1, slack_col, -1.0);
    rows.set(r2, slack_col, 1.0);
  };

  double vmax_trans = kInf;
  for (const auto& [idx, vm] : model.velocity_limits())
    if (idx == 3) vmax_trans = vm;

  for (int k = 1; k <= horizon; ++k) {
    const auto& x = cand.states[std::size_t(k)];
    const int s_state = L.slack(k, kStateSlack);
    for (const auto& [idx, vmax] : model.velocity_limits()) {
      const int r1 = rows.add(-kInf, vmax - x[idx]);
      const int r2 = rows.add(-vmax - x[idx], kInf);
      rows.set(r1, L.state(k) + idx, 1.0);
      rows.set(r1, s_state, -1.0);
      rows.set(r2, L.state(k) + idx, 1.0);
      rows.set(r2, s_state, 1.0);
    }
    const double rho = risk[std::size_t(k)].value;
    add_abs_bound(model.translational_term(x), velocity_bound(vmax_trans, cfg.gamma_v, rho, cfg),
                  risk[std::size_t(k)], k, -1, s_state);
    out.velocity_risk_rows += 2;
  }
  for (int k = Model::kYawRateUsesControl ? 0 : 1; k < horizon + (Model::kYawRateUsesControl ? 0 : 1); ++k) {
    const auto& x = cand.states[std::size_t(k)];
    const auto& u = cand.controls[std::size_t(std::min(k, horizon - 1))];
    const double rho = risk[std::size_t(k)].value;
    add_abs_bound(model.yaw_rate_term(x, u), velocity_bound(model.yaw_rate_max(), cfg.gamma_theta, rho, cfg),
                  risk[std::size_t(k)], k, Model::kYawRateUsesControl ? k : -1, L.slack(std::max(k, 1), kStateSlack));
    out.velocity_risk_rows += 2;
  }

  // obstacles: grad sd . ds + s >= margin - sd
  for (int k = 1; k <= horizon; ++k) {
    const Pose2 pose = Model::pose(cand.states[std::size_t(k)]);
    const auto fp = footprint_at(cfg.footprint, pose);
    for (const ConvexPolygon* o : nearby_obstacles(pb.obstacles, fp, cfg.activation_distance)) {
      const double sd = signed_distance(fp, *o);
      if (sd > cfg.activation_distance) continue;
      const Eigen::Vector3d g = signed_distance_gradient(cfg.footprint, pose, *o);
      const int row = rows.add(cfg.sd_margin - sd, kInf);
      for (int j = 0; j < 3; ++j) rows.set(row, L.state(k) + j, g[j]);
      rows.set(row, L.slack(k, kObstacleSlack), 1.0);
      ++out.obstacle_rows;
    }
  }

  // pitch / roll
  if (pb.has_normals) {
    const std::array<double, 2> limit{cfg.pitch_max, cfg.roll_max};
    for (int k = 1; k <= horizon; ++k) {
      const auto lin = orientation_constraint_rows(pb.map, Model::pose(cand.states[std::size_t(k)]));
      for (int c = 0; c < 2; ++c) {
        const int r1 = rows.add(-kInf, limit[std::size_t(c)] - lin.omega[c]);
        const int r2 = rows.add(-limit[std::size_t(c)] - lin.omega[c], kInf);
        for (int j = 0; j < 3; ++j) {
          rows.set(r1, L.state(k) + j, lin.jacobian(c, j));
          rows.set(r2, L.state(k) + j, lin.jacobian(c, j));
        }
        rows.set(r1, L.slack(k, kOrientationSlack), -1.0);
        rows.set(r2, L.slack(k, kOrientationSlack), 1.0);
        out.orientation_rows += 2;
      }
    }
  }

  for (int k = 1; k <= horizon; ++k)
    for (int c = 0; c < 3; ++c) rows.set(rows.add(0.0, kInf), L.slack(k, SlackClass(c)), 1.0);

  const int m = int(rows.lo.size());
  out.qp.P = SparseMatrix(n, n);
  out.qp.P.setFromTriplets(p_entries.begin(), p_entries.end());
  out.qp.P = (0.5 * (out.qp.P + SparseMatrix(out.qp.P.transpose()))).pruned();
  out.qp.q = q;
  out.qp.A = SparseMatrix(m, n);
  out.qp.A.setFromTriplets(rows.entries.begin(), rows.entries.end());
  out.qp.l = Eigen::Map<const Eigen::VectorXd>(rows.lo.data(), m);
  out.qp.u = Eigen::Map<const Eigen::VectorXd>(rows.hi.data(), m);
  return out;
}

template <class Model>
std::vector<typename Model::Control> extract_control_step(const SqpLayout& layout, const Eigen::VectorXd& x) {
  std::vector<typename Model::Control> du(std::size_t(layout.horizon));
  for (int k = 0; k < layout.horizon; ++k) du[std::size_t(k)] = x.segment<Model::kControlDim>(layout.control(k));
  return du;
}

// ─── Trajectory library ─────────────────────────────────────────────────────

template <class Model>
struct Candidate {
  std::string label;
  Trajectory<Model> trajectory;
  TrajectoryScore score;
};

template <class Model>
struct CandidateSet {
  std::vector<Candidate<Model>> candidates;  // ascending cost

  /// Lowest-cost collision-free candidate; if every candidate collides, the
  /// one with the fewest collisions (then lowest cost).
  const Candidate<Model>& choose() const {
    if (candidates.empty()) throw std::logic_error("empty candidate set");
    const Candidate<Model>* best = &candidates.front();
    for (const auto& c : candidates) {
      const auto key = [](const Candidate<Model>& x) { return std::make_pair(x.score.collisions, x.score.cost); };
      if (key(c) < key(*best)) best = &c;
    }
    return *best;
  }
};

template <class Model>
Trajectory<Model> stopping_trajectory(const Model& model, const typename Model::State& x0, int horizon) {
  Trajectory<Model> traj;
  traj.dt = model.dt;
  traj.states.push_back(x0);
  for (int k = 0; k < horizon; ++k) {
    const auto u = model.brake(traj.states.back());
    traj.controls.push_back(u);
    traj.states.push_back(model.step(traj.states.back(), u));
  }
  return traj;
}

/// Closed-loop pure-pursuit rollout along the geometric path at the reference speed.
template <class Model>
Trajectory<Model> follow_path(const PlanningProblem<Model>& pb, const typename Model::State& x0) {
  const auto& model = pb.model;
  const int horizon = pb.cfg.horizon;
  const double lookahead = pb.cfg.library.lookahead;
  Trajectory<Model> traj;
  traj.dt = model.dt;
  traj.states.push_back(x0);
  for (int k = 0; k < horizon; ++k) {
    const auto& x = traj.states.back();
    const Pose2 pose = Model::pose(x);
    const double s = pb.path.project(pose.position());
    const Eigen::Vector2d target = pb.path.point_at(s + lookahead);
    const Eigen::Vector2d d = target - pose.position();
    double v = pb.reference[std::size_t(std::min<int>(k + 1, int(pb.reference.size()) - 1))].speed;
    double w = 0.0;
    if (d.norm() > 1e-6) {
      const double err = wrap_angle(std::atan2(d.y(), d.x()) - pose.theta);
      if (std::abs(err) > M_PI / 3.0) {
        v = 0.0;
        w = std::copysign(model.yaw_rate_max(), err);
      } else {
        w = std::clamp(2.0 * std::max(v, 0.2) * std::sin(err) / std::max(d.norm(), 1e-3), -model.yaw_rate_max(),
                       model.yaw_rate_max());
      }
    } else {
      v = 0.0;
    }
    const auto u = model.command(x, v, w);
    traj.controls.push_back(u);
    traj.states.push_back(model.step(x, u));
  }
  return traj;
}

/// Constant speed / yaw-rate commands; `phases` lists (steps, v, w).
template <class Model>
Trajectory<Model> command_sequence(const Model& model, const typename Model::State& x0, int horizon,
                                   const std::vector<std::tuple<int, double, double>>& phases) {
  Trajectory<Model> traj;
  traj.dt = model.dt;
  traj.states.push_back(x0);
  std::size_t phase = 0;
  int left = phases.empty() ? horizon : std::get<0>(phases[0]);
  for (int k = 0; k < horizon; ++k) {
    while (left <= 0 && phase + 1 < phases.size()) left = std::get<0>(phases[++phase]);
    double v = 0.0, w = 0.0;
    if (!phases.empty()) std::tie(std::ignore, v, w) = phases[phase];
    --left;
    const auto u = model.command(traj.states.back(), v, w);
    traj.controls.push_back(u);
    traj.states.push_back(model.step(traj.states.back(), u));
  }
  return traj;
}

template <class Model>
std::vector<typename Model::Control> shift_controls(const std::vector<typename Model::Control>& prev, int horizon) {
  std::vector<typename Model::Control> out;
  for (std::size_t i = 1; i < prev.size() && int(out.size()) < horizon; ++i) out.push_back(prev[i]);
  const auto last = prev.empty() ? Model::Control::Zero().eval() : prev.back();
  while (int(out.size()) < horizon) out.push_back(last);
  return out;
}

/// Candidate rollouts: warm start, braking, path follower, arcs, v-turns,
/// u-turns, and random perturbations of the best deterministic candidate.
template <class Model>
CandidateSet<Model> generate_library(const PlanningProblem<Model>& pb, const typename Model::State& x0,
                                     const std::vector<typename Model::Control>* warm, std::uint64_t seed) {
  const auto& model = pb.model;
  const auto& lib = pb.cfg.library;
  const int horizon = pb.cfg.horizon;
  CandidateSet<Model> set;
  auto push = [&](std::string label, Trajectory<Model> traj) {
    Candidate<Model> c{std::move(label), std::move(traj), {}};
    c.score = evaluate_trajectory(pb, c.trajectory);
    set.candidates.push_back(std::move(c));
  };

  if (warm && !warm->empty()) {
    std::vector<typename Model::Control> u(warm->begin(), warm->end());
    u.resize(std::size_t(horizon), warm->back());
    for (auto& c : u) c = model.clamp(c);
    push("warm", rollout(model, x0, u));
  }
  push("brake", stopping_trajectory(model, x0, horizon));
  push("follow", follow_path(pb, x0));

  const double v_arc = lib.arc_speed_fraction * pb.cfg.v_ref;
  const double w_max = model.yaw_rate_max();
  for (double f : lib.arc_yaw_fractions) push("arc", command_sequence(model, x0, horizon, {{horizon, v_arc, f * w_max}}));
  if (lib.vturn) {
    const int half = horizon / 2;
    for (double sgn : {-1.0, 1.0})
      push("vturn", command_sequence(model, x0, horizon,
                                     {{half, -0.5 * v_arc, sgn * w_max}, {horizon - half, v_arc, sgn * 0.5 * w_max}}));
  }
  if (lib.uturn) {
    const int turn = std::min(horizon, int(std::ceil(M_PI / (w_max * model.dt))));
    for (double sgn : {-1.0, 1.0})
      push("uturn", command_sequence(model, x0, horizon, {{turn, 0.0, sgn * w_max}, {horizon - turn, v_arc, 0.0}}));
  }

  if (lib.n_random > 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto base = set.choose().trajectory.controls;
    for (int i = 0; i < lib.n_random; ++i) {
      auto u = base;
      for (auto& c : u) {
        for (int j = 0; j < Model::kControlDim; ++j)
          c[j] += noise(rng) * (j == 0 ? lib.perturb_std_linear : lib.perturb_std_angular);
        c = model.clamp(c);
      }
      push("random", rollout(model, x0, u));
    }
  }

  std::stable_sort(set.candidates.begin(), set.candidates.end(),
                   [](const auto& a, const auto& b) { return a.score.cost < b.score.cost; });
  return set;
}

// ─── Linesearch ─────────────────────────────────────────────────────────────

template <class Model>
struct LinesearchResult {
  bool accepted = false;
  double gamma = 0.0;       // step actually applied (0 when rejected)
  double gamma_next = 0.0;  // carried into the next iteration
  Trajectory<Model> trajectory;
  TrajectoryScore score;
  int trials = 0;
};

/// Tries u + gamma * du (clipped to control limits) starting at gamma_init.
/// The first trial that does not raise the cost or the collision count is
/// accepted; gamma doubles after success (capped) and halves after failure
/// (floored).
template <class Model>
LinesearchResult<Model> linesearch(const PlanningProblem<Model>& pb, const Trajectory<Model>& cand,
                                   const TrajectoryScore& cand_score,
                                   const std::vector<typename Model::Control>& du, double gamma_init) {
  if (du.size() != cand.controls.size()) throw std::invalid_argument("delta_u length does not match controls");
  const auto& ls = pb.cfg.linesearch;
  LinesearchResult<Model> out;
  out.trajectory = cand;
  out.score = cand_score;
  double gamma = std::clamp(gamma_init, ls.gamma_min, ls.gamma_max);
  const auto& x0 = cand.states.front();
  std::vector<typename Model::Control> u(cand.controls.size());
  for (int i = 0; i < ls.max_iterations; ++i) {
    ++out.trials;
    for (std::size_t k = 0; k < u.size(); ++k) u[k] = pb.model.clamp(cand.controls[k] + gamma * du[k]);
    auto trial = rollout(pb.model, x0, u);
    const auto score = evaluate_trajectory(pb, trial);
    if (score.cost <= cand_score.cost && score.collisions <= cand_score.collisions) {
      out.accepted = true;
      out.gamma = gamma;
      out.gamma_next = std::min(2.0 * gamma, ls.gamma_max);
      out.trajectory = std::move(trial);
      out.score = score;
      return out;
    }
    gamma = std::max(0.5 * gamma, ls.gamma_min);
  }
  out.gamma_next = gamma;
  return out;
}

// ─── Replan ─────────────────────────────────────────────────────────────────

struct ReplanStats {
  int sqp_iterations = 0;
  int qp_iterations = 0;  // summed ADMM iterations
  double gamma_ls = 0.0;
  double qp_primal_residual = 0.0;
  double qp_dual_residual = 0.0;
  double wall_time_ms = 0.0;
  std::string fallback;  // "", "library", or "emergency_stop"
  std::vector<double> cost_history;
};

template <class Model>
struct ReplanResult {
  Trajectory<Model> trajectory;
  bool feasible = false;
  double alpha_used = 0.0;
  double gamma_next = 1.0;
  TrajectoryScore score;
  ReplanStats stats;
};

template <class Model>
ReplanResult<Model> replan(const Model& model, const typename Model::State& x0, const ReplanResult<Model>* prev,
                           const GeometricPath& reference, const GridMap& map, const MpcConfig& cfg,
                           std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  model.validate();
  if (reference.poses.empty()) throw std::invalid_argument("empty reference path");
  if (!map.contains(Model::pose(x0).position())) throw std::out_of_range("initial state outside map extent");

  const PlanningProblem<Model> pb(model, map, cfg, reference, x0);
  ReplanResult<Model> out;
  out.alpha_used = cfg.alpha;

  std::optional<std::vector<typename Model::Control>> warm;
  if (prev && !prev->trajectory.controls.empty())
    warm = shift_controls<Model>(prev->trajectory.controls, cfg.horizon);
  double gamma = prev ? prev->gamma_next : cfg.linesearch.gamma_init;

  std::optional<Candidate<Model>> current;
  CandidateSet<Model> last_library;
  for (int it = 0; it < cfg.qp_iterations; ++it) {
    const auto* seed_controls = current ? &current->trajectory.controls : (warm ? &*warm : nullptr);
    last_library = generate_library(pb, x0, seed_controls, seed + std::uint64_t(it));
    Candidate<Model> cand = last_library.choose();
    ++out.stats.sqp_iterations;
    try {
      const auto sub = build_sqp_qp(pb, cand.trajectory);
      const auto sol = solve_qp(sub.qp, cfg.qp);
      out.stats.qp_iterations += sol.iterations;
      out.stats.qp_primal_residual = sol.primal_residual;
      out.stats.qp_dual_residual = sol.dual_residual;
      if (sol.status != QpStatus::primal_infeasible) {
        const auto du = extract_control_step<Model>(sub.layout, sol.x);
        auto ls = linesearch(pb, cand.trajectory, cand.score, du, gamma);
        gamma = ls.gamma_next;
        out.stats.gamma_ls = ls.gamma;
        if (ls.accepted) cand = {"sqp", std::move(ls.trajectory), ls.score};
      }
    } catch (const std::out_of_range&) {
      // candidate leaves the map: keep it as is, the audit rejects it
    }
    out.stats.cost_history.push_back(cand.score.cost);
    current = std::move(cand);
  }

  out.gamma_next = gamma;
  if (audit_trajectory(pb, current->trajectory).passes(cfg.slack_tol)) {
    out.trajectory = std::move(current->trajectory);
    out.score = current->score;
    out.feasible = true;
  } else {
    const Candidate<Model>* fallback = nullptr;
    for (const auto& c : last_library.candidates)
      if (c.label != "brake" && audit_trajectory(pb, c.trajectory).passes(cfg.slack_tol)) {
        fallback = &c;
        break;
      }
    if (fallback) {
      out.trajectory = fallback->trajectory;
      out.score = fallback->score;
      out.stats.fallback = "library";
    } else {
      out.trajectory = stopping_trajectory(model, x0, cfg.horizon);
      out.score = evaluate_trajectory(pb, out.trajectory);
      out.stats.fallback = "emergency_stop";
    }
    out.feasible = false;
  }
  out.stats.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ─── Risk-level adaptation ──────────────────────────────────────────────────

enum class PlanOutcome { feasible, infeasible, stuck };

struct AlphaPolicy {
  double alpha_mission = 0.9;
  double alpha_min = 0.1;
  double step = 0.1;
  int window = 5;  // consecutive feasible replans before one restoration step
};

/// One step of the risk-level schedule. Infeasible or stuck lowers alpha by
/// one step; a feasible outcome raises it by one step once `feasible_streak`
/// reaches the policy window. Always clamped to [alpha_min, alpha_mission].
inline double adjust_alpha(double current, PlanOutcome outcome, const AlphaPolicy& policy, int feasible_streak = 0) {
  if (!(policy.alpha_min <= policy.alpha_mission)) throw std::invalid_argument("alpha_min exceeds alpha_mission");
  double next = current;
  if (outcome != PlanOutcome::feasible)
    next = current - policy.step;
  else if (feasible_streak >= policy.window)
    next = current + policy.step;
  return std::clamp(next, policy.alpha_min, policy.alpha_mission);
}

class AlphaScheduler {
 public:
  explicit AlphaScheduler(AlphaPolicy policy) : policy_(policy), alpha_(policy.alpha_mission) {}

  double alpha() const { return alpha_; }

  /// Records one replan outcome and returns the level for the next cycle.
  double update(PlanOutcome outcome) {
    streak_ = outcome == PlanOutcome::feasible ? streak_ + 1 : 0;
    alpha_ = adjust_alpha(alpha_, outcome, policy_, streak_);
    if (streak_ >= policy_.window) streak_ = 0;
    return alpha_;
  }

 private:
  AlphaPolicy policy_;
  double alpha_;
  int streak_ = 0;
};

}  // namespace step
