#include <cmath>

#include <gtest/gtest.h>

#include "step/dynamics.hpp"
#include "test_util.hpp"

using namespace step;

namespace {

// difference of two states with the heading component taken on the circle
template <class State>
State state_diff(const State& a, const State& b) {
  State d = a - b;
  d[2] = wrap_angle(d[2]);
  return d;
}

template <class Model>
void finite_difference(const Model& m, const typename Model::State& x, const typename Model::Control& u,
                       typename Model::StateMatrix& a, typename Model::InputMatrix& b, double h) {
  for (int j = 0; j < Model::kStateDim; ++j) {
    typename Model::State e = Model::State::Zero();
    e[j] = h;
    a.col(j) = state_diff(m.step(x + e, u), m.step(x - e, u)) / (2 * h);
  }
  for (int j = 0; j < Model::kControlDim; ++j) {
    typename Model::Control e = Model::Control::Zero();
    e[j] = h;
    b.col(j) = state_diff(m.step(x, u + e), m.step(x, u - e)) / (2 * h);
  }
}

template <class Model>
typename Model::State random_state(test::Gen& g) {
  typename Model::State x;
  for (int i = 0; i < Model::kStateDim; ++i) x[i] = g.uniform(-2, 2);
  x[2] = g.uniform(-M_PI, M_PI);
  return x;
}

template <class Model>
typename Model::Control random_control(test::Gen& g) {
  typename Model::Control u;
  for (int i = 0; i < Model::kControlDim; ++i) u[i] = g.uniform(-1, 1);
  return u;
}

}  // namespace

TEST(DiffDrive, StraightCoast) {
  DiffDriveModel m{.dt = 0.1};
  const auto n = m.step({0, 0, 0, 1}, {0, 0});
  EXPECT_NEAR((n - DiffDriveModel::State(0.1, 0, 0, 1)).norm(), 0.0, 1e-15);
}

TEST(DiffDrive, HeadingAlignedTranslation) {
  DiffDriveModel m{.dt = 0.1};
  const auto n = m.step({0, 0, M_PI / 2, 1}, {0, 0});
  EXPECT_NEAR(n[0], 0.0, 1e-15);
  EXPECT_NEAR(n[1], 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(n[2], M_PI / 2);
  EXPECT_DOUBLE_EQ(n[3], 1.0);
}

TEST(General6, LateralVelocity) {
  General6Model m{.dt = 0.1};
  General6Model::State x;
  x << 0, 0, 0, 1, 1, 0;
  General6Model::State expected;
  expected << 0.1, 0.1, 0, 1, 1, 0;
  EXPECT_NEAR((m.step(x, General6Model::Control::Zero()) - expected).norm(), 0.0, 1e-15);
}

TEST(DiffDrive, JacobianEntries) {
  DiffDriveModel m{.dt = 0.1};
  DiffDriveModel::StateMatrix a;
  DiffDriveModel::InputMatrix b;
  m.linearize({0, 0, 0, 0.5}, {0, 0}, a, b);
  EXPECT_DOUBLE_EQ(a(0, 3), 0.1);
  General6Model g{.dt = 0.1, .kappa = 0.25};
  General6Model::StateMatrix ga;
  General6Model::InputMatrix gb;
  g.linearize(General6Model::State::Zero(), General6Model::Control::Zero(), ga, gb);
  EXPECT_DOUBLE_EQ(ga(2, 5), 0.1 * 0.75);
}

template <class Model>
void check_jacobians(const Model& m, std::uint64_t seed) {
  test::Gen g(seed);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_state<Model>(g);
    const auto u = random_control<Model>(g);
    typename Model::StateMatrix a, fa;
    typename Model::InputMatrix b, fb;
    m.linearize(x, u, a, b);
    finite_difference(m, x, u, fa, fb, 1e-5);
    EXPECT_LT((a - fa).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((b - fb).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Linearize, DiffDriveMatchesFiniteDifferences) {
  check_jacobians(DiffDriveModel{}, 81);
  check_jacobians(DiffDriveModel{.dt = 0.05, .gamma_mix = 0.3}, 82);
}

TEST(Linearize, General6MatchesFiniteDifferences) {
  check_jacobians(General6Model{}, 83);
  check_jacobians(General6Model{.dt = 0.1, .kappa = 0.6}, 84);
}

template <class Model>
void check_second_order(const Model& m, std::uint64_t seed) {
  test::Gen g(seed);
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const auto x = random_state<Model>(g);
    const auto u = random_control<Model>(g);
    typename Model::State d;
    typename Model::Control e;
    for (int k = 0; k < Model::kStateDim; ++k) d[k] = g.uniform(-0.1, 0.1);
    for (int k = 0; k < Model::kControlDim; ++k) e[k] = g.uniform(-0.1, 0.1);
    typename Model::StateMatrix a;
    typename Model::InputMatrix b;
    m.linearize(x, u, a, b);
    auto remainder = [&](double s) {
      return (state_diff(m.step(x + s * d, u + s * e), m.step(x, u)) - a * (s * d) - b * (s * e)).norm();
    };
    const double r1 = remainder(1.0), r2 = remainder(0.5);
    if (r1 < 1e-12) continue;  // remainder identically zero along this direction
    EXPECT_GE(r1 / r2, 3.5) << i;
    ++checked;
  }
  EXPECT_GT(checked, 80);
}

TEST(Linearize, SecondOrderRemainder) {
  check_second_order(DiffDriveModel{}, 85);
  check_second_order(General6Model{.kappa = 0.4}, 86);
}

TEST(Dynamics, FixedPointAtRest) {
  test::Gen g(87);
  DiffDriveModel dd{.gamma_mix = 0.5};
  General6Model g6{.kappa = 0.5};
  for (int i = 0; i < 50; ++i) {
    auto x = random_state<DiffDriveModel>(g);
    x[3] = 0;
    EXPECT_EQ(dd.step(x, DiffDriveModel::Control::Zero()), x);
    auto y = random_state<General6Model>(g);
    y.tail<3>().setZero();
    EXPECT_EQ(g6.step(y, General6Model::Control::Zero()), y);
  }
}

TEST(Dynamics, HeadingAlwaysWrapped) {
  test::Gen g(89);
  DiffDriveModel m{.dt = 0.5};
  for (int i = 0; i < 1000; ++i) {
    DiffDriveModel::State x(0, 0, g.uniform(-M_PI, M_PI), g.uniform(-1, 1));
    const auto n = m.step(x, {0, g.uniform(-20, 20)});
    EXPECT_GT(n[2], -M_PI);
    EXPECT_LE(n[2], M_PI);
  }
  EXPECT_DOUBLE_EQ(wrap_angle(-M_PI), M_PI);
  EXPECT_DOUBLE_EQ(wrap_angle(3 * M_PI), M_PI);
}

TEST(Dynamics, TranslationEquivariance) {
  test::Gen g(91);
  DiffDriveModel dd{.gamma_mix = 0.2};
  General6Model g6{.kappa = 0.3};
  for (int i = 0; i < 100; ++i) {
    const double dx = g.uniform(-50, 50), dy = g.uniform(-50, 50);
    const auto x = random_state<DiffDriveModel>(g);
    const auto u = random_control<DiffDriveModel>(g);
    auto shifted = x;
    shifted[0] += dx;
    shifted[1] += dy;
    auto expect = dd.step(x, u);
    expect[0] += dx;
    expect[1] += dy;
    EXPECT_LT((dd.step(shifted, u) - expect).cwiseAbs().maxCoeff(), 1e-12);

    const auto y = random_state<General6Model>(g);
    const auto v = random_control<General6Model>(g);
    auto ys = y;
    ys[0] += dx;
    ys[1] += dy;
    auto ye = g6.step(y, v);
    ye[0] += dx;
    ye[1] += dy;
    EXPECT_LT((g6.step(ys, v) - ye).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Rollout, EmptyControls) {
  const auto t = rollout(DiffDriveModel{}, DiffDriveModel::State(1, 2, 0.3, 0.4), std::vector<DiffDriveModel::Control>{});
  ASSERT_EQ(t.states.size(), 1u);
  EXPECT_TRUE(t.controls.empty());
}

TEST(Rollout, ConstantAccelerationClosedForm) {
  DiffDriveModel m{.dt = 0.1};
  const double a = 0.5;
  const int n = 25;
  const auto t = rollout(m, DiffDriveModel::State::Zero(), std::vector<DiffDriveModel::Control>(n, {a, 0}));
  ASSERT_EQ(t.states.size(), std::size_t(n + 1));
  for (int k = 0; k <= n; ++k) {
    // Euler: v_k = a k dt, p_k = dt * sum_{j<k} v_j = a dt^2 k(k-1)/2
    EXPECT_NEAR(t.states[std::size_t(k)][3], a * k * m.dt, 1e-12);
    EXPECT_NEAR(t.states[std::size_t(k)][0], a * m.dt * m.dt * k * (k - 1) / 2.0, 1e-12);
  }
}

TEST(Rollout, TransitionsMatchStep) {
  test::Gen g(93);
  General6Model m{.kappa = 0.2};
  std::vector<General6Model::Control> us;
  for (int i = 0; i < 30; ++i) us.push_back(random_control<General6Model>(g));
  const auto t = rollout(m, random_state<General6Model>(g), us);
  EXPECT_EQ(t.states.size(), t.controls.size() + 1);
  for (std::size_t k = 0; k < us.size(); ++k) EXPECT_EQ(t.states[k + 1], m.step(t.states[k], t.controls[k]));
}

TEST(Dynamics, ValidateRejectsBadParameters) {
  EXPECT_THROW(DiffDriveModel{.dt = 0}.validate(), std::invalid_argument);
  EXPECT_THROW(DiffDriveModel{.gamma_mix = 1.5}.validate(), std::invalid_argument);
  EXPECT_THROW(General6Model{.kappa = -0.1}.validate(), std::invalid_argument);
  EXPECT_NO_THROW(General6Model{}.validate());
}

TEST(Dynamics, BrakeNeverReverses) {
  test::Gen g(95);
  DiffDriveModel m;
  for (int i = 0; i < 100; ++i) {
    DiffDriveModel::State x(0, 0, 0, g.uniform(-1, 1));
    const auto n = m.step(x, m.brake(x));
    EXPECT_LE(std::abs(n[3]), std::abs(x[3]) + 1e-15);
    EXPECT_GE(n[3] * x[3], -1e-15);
  }
}
