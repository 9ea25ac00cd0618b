#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include "step/errors.hpp"

namespace step {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// minimize 1/2 x'Px + q'x  subject to  l <= Ax <= u
struct QpProblem {
  SparseMatrix P;
  Eigen::VectorXd q;
  SparseMatrix A;
  Eigen::VectorXd l;
  Eigen::VectorXd u;

  Eigen::Index n() const { return q.size(); }
  Eigen::Index m() const { return l.size(); }

  void validate() const {
    const auto n = q.size();
    if (P.rows() != n || P.cols() != n) throw std::invalid_argument("QP: P must be n x n");
    if (A.cols() != n) throw std::invalid_argument("QP: A must have n columns");
    if (A.rows() != l.size() || A.rows() != u.size()) throw std::invalid_argument("QP: A, l, u row mismatch");
    for (Eigen::Index i = 0; i < l.size(); ++i)
      if (!(l[i] <= u[i])) throw std::invalid_argument("QP: l > u on row " + std::to_string(i));
    const SparseMatrix asym = SparseMatrix(P.transpose()) - P;
    for (int k = 0; k < asym.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(asym, k); it; ++it)
        if (std::abs(it.value()) > 1e-12) throw std::invalid_argument("QP: P is not symmetric");
  }

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(P * x) + q.dot(x); }
};

enum class QpStatus { solved, max_iter, primal_infeasible };

inline std::string to_string(QpStatus s) {
  switch (s) {
    case QpStatus::solved: return "solved";
    case QpStatus::max_iter: return "max_iter";
    case QpStatus::primal_infeasible: return "primal_infeasible";
  }
  return "unknown";
}

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // constraint multipliers: Px + q + A'y = 0 at optimum
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
};

struct QpSettings {
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  int max_iter = 4000;
  double rho = 0.1;
  double sigma = 1e-6;
  double relaxation = 1.6;
  int adapt_interval = 50;
  int check_interval = 10;  // iterations between residual evaluations
  int scaling_passes = 10;  // Ruiz equilibration passes; 0 disables
  int infeasibility_check_after = 500;
  double eps_primal_inf = 1e-5;
};

struct QpWarmStart {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

namespace detail {

/// Diagonal equilibration: the solver works on P' = c D P D, q' = c D q,
/// A' = E A D, bounds E l, E u.
struct QpScaling {
  Eigen::VectorXd d;
  Eigen::VectorXd e;
  double c = 1.0;
};

inline QpScaling ruiz_scaling(const QpProblem& p, int passes) {
  constexpr double kMin = 1e-4, kMax = 1e4;
  const Eigen::Index n = p.n(), m = p.m();
  QpScaling sc{Eigen::VectorXd::Ones(n), Eigen::VectorXd::Ones(m), 1.0};
  SparseMatrix ps = p.P, as = p.A;
  auto inv_sqrt = [&](double v) { return v > 1e-12 ? std::clamp(1.0 / std::sqrt(v), kMin, kMax) : 1.0; };
  for (int pass = 0; pass < passes; ++pass) {
    Eigen::VectorXd cn = Eigen::VectorXd::Zero(n), rn = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < ps.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(ps, k); it; ++it) cn[it.col()] = std::max(cn[it.col()], std::abs(it.value()));
    for (int k = 0; k < as.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(as, k); it; ++it) {
        cn[it.col()] = std::max(cn[it.col()], std::abs(it.value()));
        rn[it.row()] = std::max(rn[it.row()], std::abs(it.value()));
      }
    for (Eigen::Index j = 0; j < n; ++j) cn[j] = inv_sqrt(cn[j]);
    for (Eigen::Index i = 0; i < m; ++i) rn[i] = inv_sqrt(rn[i]);
    ps = cn.asDiagonal() * ps * cn.asDiagonal();
    as = rn.asDiagonal() * as * cn.asDiagonal();
    sc.d = sc.d.cwiseProduct(cn);
    sc.e = sc.e.cwiseProduct(rn);
  }
  double mean_col = 0.0;
  if (n > 0) {
    Eigen::VectorXd cn = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < ps.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(ps, k); it; ++it) cn[it.col()] = std::max(cn[it.col()], std::abs(it.value()));
    mean_col = cn.mean();
  }
  const double g = std::max(mean_col, n > 0 ? sc.d.cwiseProduct(p.q).lpNorm<Eigen::Infinity>() : 0.0);
  sc.c = g > 1e-12 ? std::clamp(1.0 / g, kMin, kMax) : 1.0;
  return sc;
}

}  // namespace detail

/// ADMM operator splitting on (x, z = Ax) with projection of z onto [l, u],
/// run on a Ruiz-equilibrated copy of the problem. Equality rows get a
/// stiffer penalty; the penalty self-scales every adapt_interval iterations
/// from the primal/dual residual ratio. Residuals are reported unscaled.
inline QpSolution solve_qp(const QpProblem& orig, const QpSettings& s = {}, const QpWarmStart* warm = nullptr) {
  orig.validate();
  constexpr double kRhoMin = 1e-6, kRhoMax = 1e6, kEqScale = 1e3, kInfBound = 1e19;
  const Eigen::Index n = orig.n(), m = orig.m();

  const auto sc = detail::ruiz_scaling(orig, std::max(0, s.scaling_passes));
  const Eigen::VectorXd d_inv = sc.d.cwiseInverse(), e_inv = sc.e.cwiseInverse();
  const double c_inv = 1.0 / sc.c;
  QpProblem p;
  p.P = sc.d.asDiagonal() * orig.P * sc.d.asDiagonal();
  p.P *= sc.c;
  p.q = sc.c * sc.d.cwiseProduct(orig.q);
  p.A = sc.e.asDiagonal() * orig.A * sc.d.asDiagonal();
  p.l = sc.e.cwiseProduct(orig.l);
  p.u = sc.e.cwiseProduct(orig.u);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n), y = Eigen::VectorXd::Zero(m);
  if (warm && warm->x.size() == n) x = d_inv.cwiseProduct(warm->x);
  if (warm && warm->y.size() == m) y = sc.c * e_inv.cwiseProduct(warm->y);
  Eigen::VectorXd z = (p.A * x).cwiseMax(p.l).cwiseMin(p.u);

  double rho = s.rho;
  Eigen::VectorXd rho_vec(m);
  auto set_rho = [&] {
    for (Eigen::Index i = 0; i < m; ++i) {
      const bool loose = p.l[i] <= -kInfBound && p.u[i] >= kInfBound;
      if (loose)
        rho_vec[i] = kRhoMin;
      else if (p.u[i] - p.l[i] < 1e-12)
        rho_vec[i] = std::min(kEqScale * rho, kRhoMax);
      else
        rho_vec[i] = rho;
    }
  };
  set_rho();

  const SparseMatrix at = p.A.transpose();
  SparseMatrix identity(n, n);
  identity.setIdentity();
  auto assemble = [&] {
    SparseMatrix k = p.P + s.sigma * identity + SparseMatrix(at * rho_vec.asDiagonal() * p.A);
    k.makeCompressed();
    return k;
  };
  Eigen::SimplicialLDLT<SparseMatrix> ldlt;
  ldlt.compute(assemble());
  if (ldlt.info() != Eigen::Success) throw std::runtime_error("QP: KKT factorization failed");

  QpSolution sol;
  Eigen::VectorXd x_prev(n), z_prev(m), y_prev(m), ax(m), px(n), aty(n);
  Eigen::VectorXd rhs(n), x_tilde(n), z_tilde(m), z_relax(m), w(m);
  const double q_norm = c_inv * d_inv.cwiseProduct(p.q).lpNorm<Eigen::Infinity>();
  const int check_every = std::max(1, s.check_interval);

  for (int it = 1; it <= s.max_iter; ++it) {
    x_prev.swap(x);
    z_prev.swap(z);
    y_prev = y;

    w = rho_vec.cwiseProduct(z_prev) - y_prev;
    rhs.noalias() = at * w;
    rhs += s.sigma * x_prev - p.q;
    x_tilde = ldlt.solve(rhs);
    z_tilde.noalias() = p.A * x_tilde;

    x = s.relaxation * x_tilde + (1.0 - s.relaxation) * x_prev;
    z_relax = s.relaxation * z_tilde + (1.0 - s.relaxation) * z_prev;
    z = (z_relax + y_prev.cwiseQuotient(rho_vec)).cwiseMax(p.l).cwiseMin(p.u);
    y = y_prev + rho_vec.cwiseProduct(z_relax - z);

    const bool adapt_now = s.adapt_interval > 0 && it % s.adapt_interval == 0;
    const bool infeas_now = it >= s.infeasibility_check_after && m > 0 && it % check_every == 0;
    if (it % check_every != 0 && it != s.max_iter && !adapt_now) continue;

    // unscaled residuals
    ax.noalias() = p.A * x;
    px.noalias() = p.P * x;
    aty.noalias() = at * y;
    const double r_prim = m > 0 ? e_inv.cwiseProduct(ax - z).lpNorm<Eigen::Infinity>() : 0.0;
    const double r_dual = c_inv * d_inv.cwiseProduct(px + p.q + aty).lpNorm<Eigen::Infinity>();
    const double prim_scale =
        m > 0 ? std::max(e_inv.cwiseProduct(ax).lpNorm<Eigen::Infinity>(), e_inv.cwiseProduct(z).lpNorm<Eigen::Infinity>())
              : 0.0;
    const double dual_scale = std::max({c_inv * d_inv.cwiseProduct(px).lpNorm<Eigen::Infinity>(),
                                        c_inv * d_inv.cwiseProduct(aty).lpNorm<Eigen::Infinity>(), q_norm});
    sol.iterations = it;
    sol.primal_residual = r_prim;
    sol.dual_residual = r_dual;

    if (r_prim <= s.eps_abs + s.eps_rel * prim_scale && r_dual <= s.eps_abs + s.eps_rel * dual_scale) {
      sol.status = QpStatus::solved;
      break;
    }

    if (infeas_now) {
      // certificate on the unscaled multiplier step
      const Eigen::VectorXd dy = c_inv * sc.e.cwiseProduct(y - y_prev);
      const double dy_norm = dy.lpNorm<Eigen::Infinity>();
      if (dy_norm > 1e-12) {
        double support = 0.0;
        bool bounded = true;
        for (Eigen::Index i = 0; i < m; ++i) {
          if (dy[i] > 0.0) {
            if (orig.u[i] >= kInfBound) bounded = false;
            else support += orig.u[i] * dy[i];
          } else if (dy[i] < 0.0) {
            if (orig.l[i] <= -kInfBound) bounded = false;
            else support += orig.l[i] * dy[i];
          }
        }
        if (bounded && (orig.A.transpose() * dy).lpNorm<Eigen::Infinity>() <= s.eps_primal_inf * dy_norm &&
            support < -s.eps_primal_inf * dy_norm) {
          sol.status = QpStatus::primal_infeasible;
          break;
        }
      }
    }

    if (adapt_now) {
      const double num = r_prim / (prim_scale + 1e-30);
      const double den = r_dual / (dual_scale + 1e-30);
      const double rho_new = std::clamp(rho * std::sqrt(num / (den + 1e-30)), kRhoMin, kRhoMax);
      if (rho_new > 5.0 * rho || rho_new < 0.2 * rho) {
        rho = rho_new;
        set_rho();
        ldlt.factorize(assemble());
        if (ldlt.info() != Eigen::Success) throw std::runtime_error("QP: KKT factorization failed");
      }
    }
  }
  sol.x = sc.d.cwiseProduct(x);
  sol.y = c_inv * sc.e.cwiseProduct(y);
  return sol;
}

// ─── Problem dump ───────────────────────────────────────────────────────────

namespace detail {

inline nlohmann::json bound_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}
inline double bound_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ParseError("QP dump: bad bound '" + s + "'");
  }
  return j.get<double>();
}
inline nlohmann::json triplets_to_json(const SparseMatrix& mat) {
  auto arr = nlohmann::json::array();
  for (int k = 0; k < mat.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(mat, k); it; ++it) arr.push_back({it.row(), it.col(), it.value()});
  return arr;
}
inline SparseMatrix triplets_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  std::vector<Triplet> t;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 3) throw ParseError("QP dump: triplet must be [row, col, value]");
    const auto r = e[0].get<Eigen::Index>(), c = e[1].get<Eigen::Index>();
    if (r < 0 || c < 0 || r >= rows || c >= cols) throw ParseError("QP dump: triplet index out of range");
    t.emplace_back(r, c, e[2].get<double>());
  }
  SparseMatrix mat(rows, cols);
  mat.setFromTriplets(t.begin(), t.end());
  return mat;
}

}  // namespace detail

inline nlohmann::json qp_to_json(const QpProblem& p) {
  nlohmann::json j;
  j["n"] = p.n();
  j["m"] = p.m();
  j["P"] = detail::triplets_to_json(p.P);
  j["q"] = std::vector<double>(p.q.data(), p.q.data() + p.q.size());
  j["A"] = detail::triplets_to_json(p.A);
  auto l = nlohmann::json::array(), u = nlohmann::json::array();
  for (Eigen::Index i = 0; i < p.m(); ++i) {
    l.push_back(detail::bound_to_json(p.l[i]));
    u.push_back(detail::bound_to_json(p.u[i]));
  }
  j["l"] = l;
  j["u"] = u;
  return j;
}

inline QpProblem qp_from_json(const nlohmann::json& j) {
  try {
    QpProblem p;
    const auto n = j.at("n").get<Eigen::Index>();
    const auto m = j.at("m").get<Eigen::Index>();
    p.P = detail::triplets_from_json(j.at("P"), n, n);
    p.A = detail::triplets_from_json(j.at("A"), m, n);
    const auto q = j.at("q").get<std::vector<double>>();
    if (Eigen::Index(q.size()) != n) throw ParseError("QP dump: q must have n entries");
    p.q = Eigen::Map<const Eigen::VectorXd>(q.data(), n);
    if (Eigen::Index(j.at("l").size()) != m || Eigen::Index(j.at("u").size()) != m)
      throw ParseError("QP dump: l and u must have m entries");
    p.l.resize(m);
    p.u.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      p.l[i] = detail::bound_from_json(j["l"][i]);
      p.u[i] = detail::bound_from_json(j["u"][i]);
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("QP dump: ") + e.what());
  }
}

}  // namespace step
