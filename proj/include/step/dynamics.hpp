#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace step {

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  Eigen::Vector2d position() const { return {x, y}; }
};

/// A velocity-like quantity limited by the velocity-risk coupling, with its
/// gradient with respect to the current state and control.
template <int Nx, int Nu>
struct VelocityTerm {
  double value = 0.0;
  Eigen::Matrix<double, Nx, 1> d_state = Eigen::Matrix<double, Nx, 1>::Zero();
  Eigen::Matrix<double, Nu, 1> d_control = Eigen::Matrix<double, Nu, 1>::Zero();
};

// ─── Differential drive ─────────────────────────────────────────────────────
//
// x = [p_x, p_y, p_theta, v_x], u = [a_x, v_theta]
// x' = x + dt * [v_x cos(th), v_x sin(th), g v_x + (1 - g) v_theta, a_x]

struct DiffDriveModel {
  static constexpr int kStateDim = 4;
  static constexpr int kControlDim = 2;
  static constexpr bool kYawRateUsesControl = true;
  using State = Eigen::Matrix<double, 4, 1>;
  using Control = Eigen::Matrix<double, 2, 1>;
  using StateMatrix = Eigen::Matrix<double, 4, 4>;
  using InputMatrix = Eigen::Matrix<double, 4, 2>;

  double dt = 0.2;
  double gamma_mix = 0.0;  // turn-in-place mix; 0 gives theta' = v_theta
  Control control_max = Control(1.0, 1.0);  // |a_x| [m/s^2], |v_theta| [rad/s]
  double v_max = 1.0;                       // |v_x| [m/s]

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
    if (gamma_mix < 0.0 || gamma_mix > 1.0) throw std::invalid_argument("gamma_mix must lie in [0, 1]");
    if (!(control_max.minCoeff() > 0.0) || !(v_max > 0.0)) throw std::invalid_argument("limits must be > 0");
  }

  State step(const State& x, const Control& u) const {
    State n = x;
    n[0] += dt * x[3] * std::cos(x[2]);
    n[1] += dt * x[3] * std::sin(x[2]);
    n[2] = wrap_angle(x[2] + dt * (gamma_mix * x[3] + (1.0 - gamma_mix) * u[1]));
    n[3] += dt * u[0];
    return n;
  }

  void linearize(const State& x, const Control& /*u*/, StateMatrix& a, InputMatrix& b) const {
    const double c = std::cos(x[2]), s = std::sin(x[2]);
    a.setIdentity();
    a(0, 2) = -dt * x[3] * s;
    a(0, 3) = dt * c;
    a(1, 2) = dt * x[3] * c;
    a(1, 3) = dt * s;
    a(2, 3) = dt * gamma_mix;
    b.setZero();
    b(2, 1) = dt * (1.0 - gamma_mix);
    b(3, 0) = dt;
  }

  static Pose2 pose(const State& x) { return {x[0], x[1], x[2]}; }
  static double forward_speed(const State& x) { return x[3]; }

  /// Velocity state components and their limits.
  std::array<std::pair<int, double>, 1> velocity_limits() const { return {{{3, v_max}}}; }

  VelocityTerm<4, 2> translational_term(const State& x) const {
    VelocityTerm<4, 2> t;
    t.value = x[3];
    t.d_state[3] = 1.0;
    return t;
  }
  VelocityTerm<4, 2> yaw_rate_term(const State& x, const Control& u) const {
    VelocityTerm<4, 2> t;
    t.value = gamma_mix * x[3] + (1.0 - gamma_mix) * u[1];
    t.d_state[3] = gamma_mix;
    t.d_control[1] = 1.0 - gamma_mix;
    return t;
  }
  double yaw_rate_max() const { return control_max[1]; }

  Control clamp(const Control& u) const { return u.cwiseMax(-control_max).cwiseMin(control_max); }

  /// Control that drives toward forward speed v and yaw rate w in one step.
  Control command(const State& x, double v, double w) const {
    Control u;
    u[0] = (v - x[3]) / dt;
    u[1] = gamma_mix < 1.0 ? (w - gamma_mix * v) / (1.0 - gamma_mix) : 0.0;
    return clamp(u);
  }

  /// Maximum deceleration toward rest without reversing, no turning.
  Control brake(const State& x) const {
    Control u = Control::Zero();
    u[0] = std::clamp(-x[3] / dt, -control_max[0], control_max[0]);
    if (gamma_mix > 0.0 && gamma_mix < 1.0) u[1] = -gamma_mix * (x[3] + dt * u[0]) / (1.0 - gamma_mix);
    return clamp(u);
  }

  static State make_state(double px, double py, double theta, double v) { return State(px, py, theta, v); }
};

// ─── General 6-state model ──────────────────────────────────────────────────
//
// x = [p_x, p_y, p_theta, v_x, v_y, v_theta], u = [a_x, a_y, a_theta]
// dx = [v_x c - v_y s, v_x s + v_y c, k v_x + (1 - k) v_theta, a_x, a_y, a_theta]

struct General6Model {
  static constexpr int kStateDim = 6;
  static constexpr int kControlDim = 3;
  static constexpr bool kYawRateUsesControl = false;
  using State = Eigen::Matrix<double, 6, 1>;
  using Control = Eigen::Matrix<double, 3, 1>;
  using StateMatrix = Eigen::Matrix<double, 6, 6>;
  using InputMatrix = Eigen::Matrix<double, 6, 3>;

  double dt = 0.2;
  double kappa = 0.0;
  Control control_max = Control(1.0, 1.0, 1.0);
  Eigen::Vector3d v_max = Eigen::Vector3d(1.0, 0.5, 1.0);  // |v_x|, |v_y|, |v_theta|

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
    if (kappa < 0.0 || kappa > 1.0) throw std::invalid_argument("kappa must lie in [0, 1]");
    if (!(control_max.minCoeff() > 0.0) || !(v_max.minCoeff() > 0.0))
      throw std::invalid_argument("limits must be > 0");
  }

  State step(const State& x, const Control& u) const {
    const double c = std::cos(x[2]), s = std::sin(x[2]);
    State n = x;
    n[0] += dt * (x[3] * c - x[4] * s);
    n[1] += dt * (x[3] * s + x[4] * c);
    n[2] = wrap_angle(x[2] + dt * (kappa * x[3] + (1.0 - kappa) * x[5]));
    n[3] += dt * u[0];
    n[4] += dt * u[1];
    n[5] += dt * u[2];
    return n;
  }

  void linearize(const State& x, const Control& /*u*/, StateMatrix& a, InputMatrix& b) const {
    const double c = std::cos(x[2]), s = std::sin(x[2]);
    a.setIdentity();
    a(0, 2) = dt * (-x[3] * s - x[4] * c);
    a(0, 3) = dt * c;
    a(0, 4) = -dt * s;
    a(1, 2) = dt * (x[3] * c - x[4] * s);
    a(1, 3) = dt * s;
    a(1, 4) = dt * c;
    a(2, 3) = dt * kappa;
    a(2, 5) = dt * (1.0 - kappa);
    b.setZero();
    b(3, 0) = dt;
    b(4, 1) = dt;
    b(5, 2) = dt;
  }

  static Pose2 pose(const State& x) { return {x[0], x[1], x[2]}; }
  static double forward_speed(const State& x) { return x[3]; }

  std::array<std::pair<int, double>, 3> velocity_limits() const {
    return {{{3, v_max[0]}, {4, v_max[1]}, {5, v_max[2]}}};
  }

  VelocityTerm<6, 3> translational_term(const State& x) const {
    VelocityTerm<6, 3> t;
    t.value = std::hypot(x[3], x[4]);
    if (t.value > 1e-12) {
      t.d_state[3] = x[3] / t.value;
      t.d_state[4] = x[4] / t.value;
    }
    return t;
  }
  VelocityTerm<6, 3> yaw_rate_term(const State& x, const Control& /*u*/) const {
    VelocityTerm<6, 3> t;
    t.value = kappa * x[3] + (1.0 - kappa) * x[5];
    t.d_state[3] = kappa;
    t.d_state[5] = 1.0 - kappa;
    return t;
  }
  double yaw_rate_max() const { return v_max[2]; }

  Control clamp(const Control& u) const { return u.cwiseMax(-control_max).cwiseMin(control_max); }

  Control command(const State& x, double v, double w) const {
    Control u;
    u[0] = (v - x[3]) / dt;
    u[1] = -x[4] / dt;
    const double vtheta = kappa < 1.0 ? (w - kappa * v) / (1.0 - kappa) : 0.0;
    u[2] = (vtheta - x[5]) / dt;
    return clamp(u);
  }

  Control brake(const State& x) const {
    Control u;
    for (int i = 0; i < 3; ++i) u[i] = std::clamp(-x[3 + i] / dt, -control_max[i], control_max[i]);
    return u;
  }

  static State make_state(double px, double py, double theta, double v) {
    State x = State::Zero();
    x << px, py, theta, v, 0.0, 0.0;
    return x;
  }
};

template <class Model>
struct Trajectory {
  std::vector<typename Model::State> states;
  std::vector<typename Model::Control> controls;
  double dt = 0.0;

  std::size_t horizon() const { return controls.size(); }
};

template <class Model>
Trajectory<Model> rollout(const Model& model, const typename Model::State& x0,
                          std::span<const typename Model::Control> controls) {
  Trajectory<Model> traj;
  traj.dt = model.dt;
  traj.states.reserve(controls.size() + 1);
  traj.states.push_back(x0);
  traj.controls.assign(controls.begin(), controls.end());
  for (const auto& u : controls) traj.states.push_back(model.step(traj.states.back(), u));
  return traj;
}

template <class Model>
Trajectory<Model> rollout(const Model& model, const typename Model::State& x0,
                          const std::vector<typename Model::Control>& controls) {
  return rollout(model, x0, std::span<const typename Model::Control>(controls));
}

}  // namespace step
