#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "common/oracles.hpp"
#include "step/qp.hpp"
#include "test_util.hpp"

using namespace step;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

SparseMatrix sparse(const Eigen::MatrixXd& d) { return d.sparseView(); }

QpProblem make(const Eigen::MatrixXd& P, const Eigen::VectorXd& q, const Eigen::MatrixXd& A, const Eigen::VectorXd& l,
               const Eigen::VectorXd& u) {
  return {sparse(P), q, sparse(A), l, u};
}

QpSettings tight() {
  QpSettings s;
  s.eps_abs = s.eps_rel = 1e-8;
  s.max_iter = 20000;
  return s;
}

struct RandomQp {
  QpProblem problem;
  Eigen::VectorXd interior;  // a strictly feasible point
};

// PSD P = M M' of random rank; two-sided constraints around a known interior point
RandomQp random_qp(test::Gen& g, int n, int m) {
  const int rank = g.integer(1, n);
  Eigen::MatrixXd M(n, rank);
  for (int i = 0; i < M.size(); ++i) M.data()[i] = g.normal();
  Eigen::MatrixXd P = M * M.transpose();
  P = 0.5 * (P + P.transpose());
  Eigen::VectorXd q(n);
  for (auto& v : q) v = g.normal(0, 3);
  // a box on every variable keeps the problem bounded when P is singular
  Eigen::MatrixXd A(m + n, n);
  A.topRows(m).setZero();
  for (int i = 0; i < m * n; ++i) A.topRows(m)(i / n, i % n) = g.normal();
  A.bottomRows(n).setIdentity();
  Eigen::VectorXd x0(n);
  for (auto& v : x0) v = g.uniform(-1, 1);
  Eigen::VectorXd ax = A * x0, l(m + n), u(m + n);
  for (int i = 0; i < m + n; ++i) {
    l[i] = g.coin(0.2) ? -kInf : ax[i] - g.uniform(0.1, 1.0);
    u[i] = g.coin(0.2) && i < m ? kInf : ax[i] + g.uniform(0.1, 1.0);
  }
  return {make(P, q, A, l, u), x0};
}

bool feasible(const QpProblem& p, const Eigen::VectorXd& x, double tol = 0.0) {
  const Eigen::VectorXd ax = p.A * x;
  for (Eigen::Index i = 0; i < ax.size(); ++i)
    if (ax[i] < p.l[i] - tol || ax[i] > p.u[i] + tol) return false;
  return true;
}

// random direction from the interior point, shrunk until feasible
Eigen::VectorXd sample_feasible(test::Gen& g, const RandomQp& r) {
  Eigen::VectorXd d(r.interior.size());
  for (auto& v : d) v = g.normal(0, 2);
  double t = 1.0;
  while (!feasible(r.problem, r.interior + t * d)) t *= 0.5;
  return r.interior + t * g.uniform(0, 1) * d;
}

}  // namespace

TEST(Qp, ScalarClip) {
  const auto p = make(Eigen::MatrixXd::Constant(1, 1, 1), Eigen::VectorXd::Constant(1, 1), Eigen::MatrixXd::Identity(1, 1),
                      Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 2));
  const auto s = solve_qp(p, tight());
  EXPECT_EQ(s.status, QpStatus::solved);
  EXPECT_NEAR(s.x[0], 0.0, 1e-6);
}

TEST(Qp, HalfspaceExample) {
  Eigen::MatrixXd A(1, 2);
  A << 1, 1;
  const auto p = make(Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(-1, -1), A, Eigen::VectorXd::Constant(1, -kInf),
                      Eigen::VectorXd::Constant(1, 1));
  const auto s = solve_qp(p, tight());
  ASSERT_EQ(s.status, QpStatus::solved);
  EXPECT_NEAR(s.x[0], 0.5, 1e-6);
  EXPECT_NEAR(s.x[1], 0.5, 1e-6);
  EXPECT_NEAR(p.objective(s.x), -0.75, 1e-6);
  // dense grid oracle
  double best = kInf;
  for (double a = -1; a <= 2; a += 1e-2)
    for (double b = -1; b <= 1 - a + 1e-12; b += 1e-2) best = std::min(best, 0.5 * (a * a + b * b) - a - b);
  EXPECT_LE(p.objective(s.x), best + 1e-6);
}

TEST(Qp, EqualityConstrainedMatchesKkt) {
  test::Gen g(141);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = g.integer(2, 6), m = g.integer(1, n - 1);
    Eigen::MatrixXd M(n, n), A(m, n);
    for (int i = 0; i < M.size(); ++i) M.data()[i] = g.normal();
    for (int i = 0; i < A.size(); ++i) A.data()[i] = g.normal();
    const Eigen::MatrixXd P = M * M.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd q(n), b(m);
    for (auto& v : q) v = g.normal();
    for (auto& v : b) v = g.normal();
    const auto s = solve_qp(make(P, q, A, b, b), tight());
    ASSERT_EQ(s.status, QpStatus::solved);
    EXPECT_LT((s.x - oracle::kkt_solve(P, q, A, b)).lpNorm<Eigen::Infinity>(), 1e-4);
  }
}

TEST(Qp, InactiveBoundsGiveUnconstrainedMinimum) {
  Eigen::Matrix2d P;
  P << 4, 1, 1, 2;
  const Eigen::Vector2d q(1, 1);
  const auto s = solve_qp(make(P, q, Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(-10, -10), Eigen::Vector2d(10, 10)),
                          tight());
  ASSERT_EQ(s.status, QpStatus::solved);
  const Eigen::VectorXd expected = oracle::kkt_solve(P, q, Eigen::MatrixXd(0, 2), Eigen::VectorXd(0));
  EXPECT_LT((s.x - expected).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(Qp, LinearProgramOnBox) {
  // P = 0: optimum at the box corner opposite to q
  const auto s = solve_qp(make(Eigen::MatrixXd::Zero(3, 3), Eigen::Vector3d(1, -2, 0.5), Eigen::MatrixXd::Identity(3, 3),
                               Eigen::Vector3d(-1, -1, -1), Eigen::Vector3d(2, 2, 2)),
                          tight());
  ASSERT_EQ(s.status, QpStatus::solved);
  EXPECT_LT((s.x - Eigen::Vector3d(-1, 2, -1)).lpNorm<Eigen::Infinity>(), 1e-4);
}

TEST(Qp, RandomProblemsBeatFeasibleSamples) {
  test::Gen g(149);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = random_qp(g, g.integer(2, 8), g.integer(1, 6));
    const auto s = solve_qp(r.problem, tight());
    ASSERT_EQ(s.status, QpStatus::solved) << trial;
    EXPECT_TRUE(feasible(r.problem, s.x, 1e-6));
    const double f = r.problem.objective(s.x);
    for (int k = 0; k < 1000; ++k) {
      const auto x = sample_feasible(g, r);
      ASSERT_LE(f, r.problem.objective(x) + 1e-6 * (1 + std::abs(f))) << trial;
    }
    // stationarity with the returned multipliers
    const Eigen::VectorXd grad = r.problem.P * s.x + r.problem.q + r.problem.A.transpose() * s.y;
    EXPECT_LT(grad.lpNorm<Eigen::Infinity>(), 1e-5);
  }
}

TEST(Qp, Deterministic) {
  test::Gen g(151);
  const auto r = random_qp(g, 6, 4);
  const auto a = solve_qp(r.problem), b = solve_qp(r.problem);
  EXPECT_EQ(a.iterations, b.iterations);
  for (Eigen::Index i = 0; i < a.x.size(); ++i) EXPECT_EQ(a.x[i], b.x[i]);
}

TEST(Qp, ObjectiveScalingLeavesArgmin) {
  test::Gen g(157);
  for (int trial = 0; trial < 10; ++trial) {
    auto r = random_qp(g, 4, 3);
    r.problem.P.coeffRef(0, 0) += 1.0;  // keep the argmin unique
    const auto base = solve_qp(r.problem, tight());
    auto scaled = r.problem;
    scaled.P *= 37.0;
    scaled.q *= 37.0;
    const auto s = solve_qp(scaled, tight());
    ASSERT_EQ(base.status, QpStatus::solved);
    ASSERT_EQ(s.status, QpStatus::solved);
    EXPECT_NEAR(r.problem.objective(s.x), r.problem.objective(base.x), 1e-5 * (1 + std::abs(r.problem.objective(base.x))));
  }
}

TEST(Qp, DetectsPrimalInfeasibility) {
  Eigen::MatrixXd A(2, 1);
  A << 1, 1;
  const auto s = solve_qp(make(Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1), A, Eigen::Vector2d(1, -kInf),
                               Eigen::Vector2d(kInf, 0)));
  EXPECT_EQ(s.status, QpStatus::primal_infeasible);
}

TEST(Qp, RejectsMalformedProblems) {
  const auto bad_bounds = make(Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1),
                               Eigen::VectorXd::Constant(1, 1), Eigen::VectorXd::Zero(1));
  EXPECT_THROW(solve_qp(bad_bounds), std::invalid_argument);
  auto asym = make(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2),
                   Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2));
  asym.P.coeffRef(0, 1) = 0.5;
  EXPECT_THROW(solve_qp(asym), std::invalid_argument);
  auto dims = make(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(2, 2),
                   Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2));
  EXPECT_THROW(solve_qp(dims), std::invalid_argument);
}

TEST(Qp, JsonDumpRoundTrip) {
  test::Gen g(163);
  const auto r = random_qp(g, 5, 3);
  const auto back = qp_from_json(qp_to_json(r.problem));
  EXPECT_TRUE(back.P.isApprox(r.problem.P));
  EXPECT_TRUE(back.A.isApprox(r.problem.A));
  EXPECT_EQ(back.q, r.problem.q);
  EXPECT_EQ(back.l, r.problem.l);
  EXPECT_EQ(back.u, r.problem.u);
}
