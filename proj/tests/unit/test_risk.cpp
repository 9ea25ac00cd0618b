#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "common/oracles.hpp"
#include "step/risk.hpp"
#include "test_util.hpp"

using namespace step;

TEST(RiskLevel, RejectsClosedEndpoints) {
  EXPECT_THROW(RiskLevel(0.0), std::invalid_argument);
  EXPECT_THROW(RiskLevel(1.0), std::invalid_argument);
  EXPECT_THROW(RiskLevel(-0.2), std::invalid_argument);
  EXPECT_DOUBLE_EQ(RiskLevel(0.9995).value(), RiskLevel::kMaxAlpha);
}

TEST(Cvar, DegenerateDistribution) {
  for (double a : {0.1, 0.5, 0.9, 0.99}) EXPECT_DOUBLE_EQ(cvar_gaussian({0.5, 0.0}, RiskLevel(a)), 0.5);
}

TEST(Cvar, TailFactorMatchesBisectionOracle) {
  for (double a : {0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99})
    EXPECT_NEAR(RiskLevel(a).tail_factor(), oracle::cvar_closed_form(0.0, 1.0, a), 1e-10) << a;
}

TEST(Cvar, StandardNormalAgainstMonteCarlo) {
  // alpha = 0.5 -> 0.7979, alpha = 0.9 -> 1.7550
  const std::pair<double, double> cases[] = {{0.5, 0.7979}, {0.9, 1.7550}};
  for (auto [a, expected] : cases) {
    const double analytic = cvar_gaussian({0.0, 1.0}, RiskLevel(a));
    EXPECT_NEAR(analytic, expected, 1e-4);
    const auto mc = oracle::monte_carlo_cvar(0.0, 1.0, a, 1'000'000, 7);
    EXPECT_NEAR(analytic, mc.mean, 3e-3);
  }
}

TEST(Cvar, CoherenceProperties) {
  test::Gen g(41);
  for (int i = 0; i < 200; ++i) {
    const double mu = g.uniform(0, 1), sigma = g.uniform(0, 0.5), c = g.uniform(-2, 2), scale = g.uniform(0.1, 5);
    const RiskLevel lo(g.uniform(0.01, 0.5)), hi(g.uniform(0.5, 0.99));
    const double base = cvar_gaussian({mu, sigma}, lo);
    EXPECT_NEAR(cvar_gaussian({mu + c, sigma}, lo), base + c, 1e-12);
    EXPECT_NEAR(cvar_gaussian({scale * mu, scale * sigma}, lo), scale * base, 1e-12);
    EXPECT_LE(base, cvar_gaussian({mu, sigma}, hi));
    if (sigma > 1e-9) { EXPECT_LT(base, cvar_gaussian({mu, sigma}, hi)); }
    EXPECT_GE(base, mu);
  }
  EXPECT_DOUBLE_EQ(cvar_gaussian({0.3, 0.0}, RiskLevel(0.9)), 0.3);
}

TEST(RiskFactor, FlatStepIsZeroWithFloorSigma) {
  GridMap m(6, 6, 0.25, Eigen::Vector2d::Zero());
  m.add_layer(layer::elevation, 0.0);
  const auto spec = default_factor_spec(RiskFactorKind::step);
  const auto r = compute_risk_factor(m, spec);
  for (std::size_t i = 0; i < m.cell_count(); ++i) {
    EXPECT_DOUBLE_EQ(r.mu[i], 0.0);
    EXPECT_DOUBLE_EQ(r.sigma[i], spec.sigma_floor);
  }
}

TEST(RiskFactor, CliffSaturatesAdjacentCells) {
  GridMap m(8, 6, 0.25, Eigen::Vector2d::Zero());
  auto& h = m.add_layer(layer::elevation, 0.0);
  for (std::size_t i = 0; i < m.cell_count(); ++i)
    if (m.cell_at(i).col >= 4) h[i] = 0.5;
  auto spec = default_factor_spec(RiskFactorKind::step);
  spec.lethal = 0.2;
  const auto r = compute_risk_factor(m, spec);

  // oracle: max |dh| over the 8-neighbourhood by direct scan
  for (std::size_t i = 0; i < m.cell_count(); ++i) {
    const auto c = m.cell_at(i);
    double gap = 0.0;
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const auto rr = std::ptrdiff_t(c.row) + dr, cc = std::ptrdiff_t(c.col) + dc;
        if (rr < 0 || cc < 0 || rr >= std::ptrdiff_t(m.height()) || cc >= std::ptrdiff_t(m.width())) continue;
        gap = std::max(gap, std::abs(h[m.linear({std::size_t(rr), std::size_t(cc)})] - h[i]));
      }
    const double expected = gap >= spec.lethal ? spec.risk_cap : 0.0;
    EXPECT_DOUBLE_EQ(r.mu[i], expected) << "col " << c.col;
    if (c.col == 3 || c.col == 4) { EXPECT_DOUBLE_EQ(r.mu[i], spec.risk_cap); }
  }
}

TEST(RiskFactor, MissingElevationIsNegativeObstacle) {
  GridMap m(5, 5, 0.5, Eigen::Vector2d::Zero());
  auto& h = m.add_layer(layer::elevation, 0.0);
  h[12] = kMissing;
  const auto r = compute_risk_factor(m, default_factor_spec(RiskFactorKind::step));
  EXPECT_DOUBLE_EQ(r.mu[12], 1.0);
}

TEST(RiskFactor, TipoverOnThirtyDegreeRamp) {
  GridMap m(10, 10, 0.25, Eigen::Vector2d::Zero());
  auto& h = m.add_layer(layer::elevation);
  const double slope = 30.0 * M_PI / 180.0;
  for (std::size_t i = 0; i < m.cell_count(); ++i) h[i] = m.world_of(m.cell_at(i)).x() * std::tan(slope);
  compute_surface_normals(m);
  const auto spec = default_factor_spec(RiskFactorKind::tipover);  // lethal at 45 degrees
  const auto r = compute_risk_factor(m, spec);
  // analytic plane normal (-sin, 0, cos) -> angle to vertical is exactly the slope
  const double expected = std::clamp(30.0 / 45.0, 0.0, 1.0) * spec.risk_cap;
  for (std::size_t row = 1; row + 1 < m.height(); ++row)
    for (std::size_t col = 1; col + 1 < m.width(); ++col) EXPECT_NEAR(r.mu[m.linear({row, col})], expected, 1e-6);
}

TEST(RiskFactor, MissingPrerequisiteNamesLayer) {
  GridMap m(3, 3, 1.0, Eigen::Vector2d::Zero());
  try {
    compute_risk_factor(m, default_factor_spec(RiskFactorKind::step));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("elevation"), std::string::npos);
  }
  m.add_layer(layer::elevation, 0.0);
  EXPECT_THROW(compute_risk_factor(m, default_factor_spec(RiskFactorKind::tipover)), ConfigError);
  EXPECT_THROW(compute_risk_factor(m, default_factor_spec(RiskFactorKind::slippage)), ConfigError);
}

TEST(RiskFactor, SensorSigmaGrowsWithDistance) {
  GridMap m(10, 1, 1.0, Eigen::Vector2d::Zero());
  auto spec = default_factor_spec(RiskFactorKind::sensor_uncertainty);
  spec.sigma_per_meter = 0.05;
  const auto r = compute_risk_factor(m, spec);
  for (std::size_t i = 0; i < m.cell_count(); ++i) {
    EXPECT_DOUBLE_EQ(r.mu[i], 0.0);
    EXPECT_NEAR(r.sigma[i], spec.sigma_floor + 0.05 * double(i), 1e-12);
  }
}

TEST(RiskFactor, MonotoneInHazardSignal) {
  // raising a peak never lowers its mu
  test::Gen g(43);
  for (int trial = 0; trial < 30; ++trial) {
    GridMap m(7, 7, 0.25, Eigen::Vector2d::Zero());
    auto& h = m.add_layer(layer::elevation);
    for (auto& v : h) v = g.uniform(0, 0.3);
    const auto spec = default_factor_spec(RiskFactorKind::step);
    const std::size_t i = m.linear({3, 3});
    h[i] = *std::max_element(h.begin(), h.end());  // a local peak: raising it widens every gap
    const auto before = compute_risk_factor(m, spec);
    h[i] += g.uniform(0, 0.2);
    const auto after = compute_risk_factor(m, spec);
    EXPECT_GE(after.mu[i], before.mu[i]);
  }
}

TEST(Aggregate, SingleFactorIdentity) {
  const std::vector<double> mu{0.1, 0.7}, sigma{0.05, 0.2};
  const WeightedRisk f[] = {{mu, sigma, 1.0}};
  const auto r = aggregate_risk(f);
  EXPECT_EQ(r.mu, mu);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(r.sigma[i], sigma[i]);
}

TEST(Aggregate, TwoFactorsMatchSampling) {
  const std::vector<double> m1{0.2}, s1{0.1}, m2{0.4}, s2{0.3};
  const WeightedRisk f[] = {{m1, s1, 0.5}, {m2, s2, 0.5}};
  const auto r = aggregate_risk(f);
  EXPECT_NEAR(r.mu[0], 0.3, 1e-15);
  EXPECT_NEAR(r.sigma[0], std::sqrt(0.025), 1e-15);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> a(0.2, 0.1), b(0.4, 0.3);
  const int n = 1'000'000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = 0.5 * a(rng) + 0.5 * b(rng);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(r.mu[0], mean, 1e-3);
  EXPECT_NEAR(r.sigma[0], sd, 1e-3);
}

TEST(Aggregate, Preconditions) {
  const std::vector<double> a{0.1}, b{0.1, 0.2};
  const WeightedRisk bad_sum[] = {{a, a, 0.7}, {a, a, 0.4}};
  EXPECT_THROW(aggregate_risk(bad_sum), std::invalid_argument);
  const WeightedRisk shape[] = {{a, a, 0.5}, {b, b, 0.5}};
  EXPECT_THROW(aggregate_risk(shape), std::invalid_argument);
}

TEST(CvarLayer, ZeroSigmaEqualsMu) {
  auto m = test::flat_risk_map(4, 4, 0.5, 0.0, 0.0);
  auto& mu = m.layer(layer::risk_mu);
  test::Gen g(1);
  for (auto& v : mu) v = g.uniform(0, 1);
  build_cvar_layer(m, RiskLevel(0.9));
  EXPECT_EQ(m.layer(layer::cvar), mu);
}

TEST(CvarLayer, ConstantFieldAndAlphaOrdering) {
  auto m = test::flat_risk_map(5, 5, 0.5, 0.1, 0.05);
  build_cvar_layer(m, RiskLevel(0.9));
  for (double v : m.layer(layer::cvar)) EXPECT_NEAR(v, 0.1 + 0.05 * 1.7550, 1e-4);
  const auto lo = cvar_values(m, RiskLevel(0.1)), hi = cvar_values(m, RiskLevel(0.9));
  for (std::size_t i = 0; i < lo.size(); ++i) EXPECT_LE(lo[i], hi[i]);
}

TEST(CvarLayer, MissingAggregateLayers) {
  GridMap m(2, 2, 1.0, Eigen::Vector2d::Zero());
  EXPECT_THROW(build_cvar_layer(m, RiskLevel(0.5)), ConfigError);
}

TEST(BuildRiskMap, StoresFactorAndAggregateLayers) {
  GridMap m(6, 6, 0.25, Eigen::Vector2d::Zero());
  auto& h = m.add_layer(layer::elevation);
  test::Gen g(5);
  for (auto& v : h) v = g.uniform(0, 0.1);
  std::vector<RiskFactorSpec> specs{default_factor_spec(RiskFactorKind::step), default_factor_spec(RiskFactorKind::tipover)};
  specs[0].weight = 0.6;
  specs[1].weight = 0.4;
  build_risk_map(m, specs, RiskLevel(0.9));
  for (const char* name : {"step_mu", "step_sigma", "tipover_mu", "tipover_sigma", "risk_mu", "risk_sigma", "cvar"})
    EXPECT_TRUE(m.has_layer(name)) << name;
  for (std::size_t i = 0; i < m.cell_count(); ++i) {
    EXPECT_NEAR(m.layer(layer::risk_mu)[i], 0.6 * m.layer("step_mu")[i] + 0.4 * m.layer("tipover_mu")[i], 1e-12);
    EXPECT_GE(m.layer(layer::cvar)[i], m.layer(layer::risk_mu)[i]);
  }
}
