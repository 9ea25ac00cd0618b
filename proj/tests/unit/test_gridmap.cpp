#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "step/gridmap.hpp"
#include "step/gridmap_io.hpp"
#include "test_util.hpp"

using namespace step;

TEST(GridMap, CellCenterTransform) {
  GridMap m(10, 10, 0.5, Eigen::Vector2d::Zero());
  const Eigen::Vector2d w = m.world_of({2, 3});  // row 2, col 3
  EXPECT_DOUBLE_EQ(w.x(), 1.5);
  EXPECT_DOUBLE_EQ(w.y(), 1.0);

  GridMap single(1, 1, 1.0, Eigen::Vector2d(-5, -5));
  EXPECT_EQ(single.world_of({0, 0}), Eigen::Vector2d(-5, -5));
  ASSERT_TRUE(single.cell_of(Eigen::Vector2d(-5, -5)));
}

TEST(GridMap, RejectsBadDimensions) {
  EXPECT_THROW(GridMap(0, 5, 1.0, Eigen::Vector2d::Zero()), std::invalid_argument);
  EXPECT_THROW(GridMap(5, 5, 0.0, Eigen::Vector2d::Zero()), std::invalid_argument);
  EXPECT_THROW(GridMap(5, 5, -1.0, Eigen::Vector2d::Zero()), std::invalid_argument);
}

TEST(GridMap, CellWorldBijection) {
  test::Gen g(11);
  for (int trial = 0; trial < 20; ++trial) {
    GridMap m(std::size_t(g.integer(1, 30)), std::size_t(g.integer(1, 30)), g.uniform(0.05, 2.0), g.point(-10, 10));
    for (std::size_t r = 0; r < m.height(); ++r)
      for (std::size_t c = 0; c < m.width(); ++c) {
        const auto back = m.cell_of(m.world_of({r, c}));
        ASSERT_TRUE(back);
        EXPECT_EQ(back->row, r);
        EXPECT_EQ(back->col, c);
      }
  }
}

TEST(GridMap, MissingLayerIsConfigError) {
  GridMap m(3, 3, 1.0, Eigen::Vector2d::Zero());
  EXPECT_THROW(m.layer("nope"), ConfigError);
  EXPECT_THROW(m.set_layer("short", std::vector<double>(4, 0.0)), std::invalid_argument);
}

TEST(Bilinear, ConstantAndLinearFields) {
  GridMap m(8, 8, 0.5, Eigen::Vector2d::Zero());
  auto& c = m.add_layer("c", 3.0);
  (void)c;
  auto& lin = m.add_layer("lin");
  for (std::size_t i = 0; i < m.cell_count(); ++i) lin[i] = m.world_of(m.cell_at(i)).x();

  test::Gen g(3);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector2d p = g.point(0.0, 3.5);
    EXPECT_NEAR(m.sample_bilinear("c", p), 3.0, 1e-12);
    EXPECT_NEAR(m.sample_bilinear("lin", p), p.x(), 1e-12);
  }
  EXPECT_NEAR(m.sample_bilinear("lin", Eigen::Vector2d(1.25, 2.0)), 1.25, 1e-12);
}

TEST(Bilinear, CellCentersReproduceValues) {
  test::Gen g(5);
  GridMap m(6, 4, 0.3, Eigen::Vector2d(1, -2));
  auto& v = m.add_layer("v");
  for (auto& x : v) x = g.uniform(-5, 5);
  for (std::size_t i = 0; i < m.cell_count(); ++i)
    EXPECT_NEAR(m.sample_bilinear("v", m.world_of(m.cell_at(i))), v[i], 1e-12);
}

TEST(Bilinear, MissingFallsBackToNearestPresentCorner) {
  GridMap m(2, 2, 1.0, Eigen::Vector2d::Zero());
  auto& v = m.add_layer("v");
  v = {1.0, 2.0, 3.0, kMissing};  // (0,0) (0,1) (1,0) (1,1)
  // closest present corner to (0.9, 0.2) is (row 0, col 1)
  EXPECT_DOUBLE_EQ(m.sample_bilinear("v", Eigen::Vector2d(0.9, 0.2)), 2.0);
  EXPECT_DOUBLE_EQ(m.sample_bilinear("v", Eigen::Vector2d(0.1, 0.8)), 3.0);
  v.assign(4, kMissing);
  EXPECT_TRUE(is_missing(m.sample_bilinear("v", Eigen::Vector2d(0.5, 0.5))));
}

TEST(Bilinear, OutOfExtentThrows) {
  GridMap m(4, 4, 1.0, Eigen::Vector2d::Zero());
  m.add_layer("v", 1.0);
  EXPECT_THROW(m.sample_bilinear("v", Eigen::Vector2d(-0.6, 1.0)), std::out_of_range);
  EXPECT_THROW(m.sample_bilinear("v", Eigen::Vector2d(1.0, 3.6)), std::out_of_range);
}

namespace {

GridMap elevation_map(std::size_t n, double res, const std::function<double(double, double)>& h,
                      Eigen::Vector2d origin = Eigen::Vector2d::Zero()) {
  GridMap m(n, n, res, origin);
  auto& e = m.add_layer(layer::elevation);
  for (std::size_t i = 0; i < m.cell_count(); ++i) {
    const auto w = m.world_of(m.cell_at(i));
    e[i] = h(w.x(), w.y());
  }
  compute_surface_normals(m);
  return m;
}

}  // namespace

TEST(Normals, FlatIsVertical) {
  const auto m = elevation_map(6, 0.5, [](double, double) { return 0.0; });
  for (std::size_t i = 0; i < m.cell_count(); ++i) {
    EXPECT_DOUBLE_EQ(m.layer(layer::normal_x)[i], 0.0);
    EXPECT_DOUBLE_EQ(m.layer(layer::normal_y)[i], 0.0);
    EXPECT_DOUBLE_EQ(m.layer(layer::normal_z)[i], 1.0);
  }
}

TEST(Normals, RampsMatchPlaneNormal) {
  for (auto [deg, along_x] : {std::pair{10.0, true}, std::pair{30.0, false}}) {
    const double t = std::tan(deg * M_PI / 180.0);
    const auto m = elevation_map(8, 0.25, [&](double x, double y) { return (along_x ? x : y) * t; });
    const double s = std::sin(deg * M_PI / 180.0), c = std::cos(deg * M_PI / 180.0);
    for (std::size_t r = 1; r + 1 < m.height(); ++r)
      for (std::size_t col = 1; col + 1 < m.width(); ++col) {
        const auto i = m.linear({r, col});
        EXPECT_NEAR(m.layer(layer::normal_x)[i], along_x ? -s : 0.0, 1e-6);
        EXPECT_NEAR(m.layer(layer::normal_y)[i], along_x ? 0.0 : -s, 1e-6);
        EXPECT_NEAR(m.layer(layer::normal_z)[i], c, 1e-6);
      }
  }
}

TEST(Normals, UnitLengthPositiveZProperty) {
  test::Gen g(17);
  for (int trial = 0; trial < 10; ++trial) {
    GridMap m(12, 9, g.uniform(0.1, 1.0), Eigen::Vector2d::Zero());
    auto& e = m.add_layer(layer::elevation);
    for (auto& v : e) v = g.coin(0.1) ? kMissing : g.uniform(-2, 2);
    compute_surface_normals(m);
    for (std::size_t i = 0; i < m.cell_count(); ++i) {
      const Eigen::Vector3d n(m.layer(layer::normal_x)[i], m.layer(layer::normal_y)[i], m.layer(layer::normal_z)[i]);
      EXPECT_NEAR(n.squaredNorm(), 1.0, 1e-9);
      EXPECT_GT(n.z(), 0.0);
      if (is_missing(e[i])) { EXPECT_EQ(n, Eigen::Vector3d(0, 0, 1)); }
    }
  }
}

TEST(NormalJacobian, PlaneIsZero) {
  const auto m = elevation_map(10, 0.25, [](double x, double y) { return 0.3 * x - 0.2 * y; });
  const auto jac = elevation_normal_jacobian(m, Eigen::Vector2d(1.1, 1.3));
  EXPECT_LT(jac.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NormalJacobian, BowlSigns) {
  // h = (x^2 + y^2)/2, n ∝ (-x, -y, 1): dn_x/dx = dn_y/dy = -1 at the origin.
  const auto m = elevation_map(21, 0.1, [](double x, double y) { return 0.5 * (x * x + y * y); },
                               Eigen::Vector2d(-1.0, -1.0));
  const auto jac = elevation_normal_jacobian(m, Eigen::Vector2d::Zero());
  EXPECT_LT(jac(0, 0), 0.0);
  EXPECT_LT(jac(1, 1), 0.0);
  EXPECT_NEAR(jac(0, 1), 0.0, 1e-6);
  EXPECT_NEAR(jac(1, 0), 0.0, 1e-6);
  EXPECT_NEAR(jac(0, 0), -1.0, 0.05);
}

TEST(NormalJacobian, MatchesFinerStencilOnCellCenterLines) {
  // along an axis the bilinear normal is piecewise linear between centers, so
  // from a center the res/2 and res/4 quotients both average the same two slopes
  test::Gen g(23);
  const auto m = elevation_map(24, 0.2, [](double x, double y) { return 0.3 * std::sin(x) * std::cos(0.7 * y); });
  for (int i = 0; i < 40; ++i) {
    Eigen::Vector2d p = g.point(0.6, 4.0);
    const int axis = i % 2;
    p[axis] = m.world_of(*m.cell_of(p))[axis];
    const auto jac = elevation_normal_jacobian(m, p);
    const double h = m.resolution() / 4.0;
    Eigen::Vector2d d = Eigen::Vector2d::Zero();
    d[axis] = h;
    const Eigen::Vector3d fd = (m.sample_normal(p + d) - m.sample_normal(p - d)) / (2 * h);
    EXPECT_LT((jac.col(axis) - fd).cwiseAbs().maxCoeff(), 1e-9) << "p=" << p.transpose();
  }
}

TEST(NormalJacobian, OutOfExtentThrows) {
  const auto m = elevation_map(4, 1.0, [](double, double) { return 0.0; });
  EXPECT_THROW(elevation_normal_jacobian(m, Eigen::Vector2d(10, 10)), std::out_of_range);
}

TEST(MapIo, RoundTripPreservesValuesAndMissing) {
  test::Gen g(29);
  GridMap m(3, 3, 0.37, Eigen::Vector2d(-1.5, 2.25));
  auto& a = m.add_layer("a");
  auto& b = m.add_layer("b");
  for (auto& v : a) v = g.normal() * 1e3;
  for (auto& v : b) v = g.uniform(0, 1) / 3.0;
  b[4] = kMissing;
  const GridMap back = load_map_from_string(map_to_json(m).dump());
  EXPECT_TRUE(back == m);
  EXPECT_TRUE(is_missing(back.layer("b")[4]));
}

TEST(MapIo, FileRoundTrip) {
  GridMap m(4, 2, 0.5, Eigen::Vector2d::Zero());
  m.add_layer("z", 1.0 / 7.0);
  const std::string path = ::testing::TempDir() + "/roundtrip_map.json";
  save_map(m, path);
  EXPECT_TRUE(load_map(path) == m);
}

TEST(MapIo, MalformedFilesAreParseErrors) {
  EXPECT_THROW(load_map_from_string("{not json"), ParseError);
  EXPECT_THROW(load_map_from_string(R"({"version":1,"resolution":1,"origin":[0,0],"width":2,"height":2,
                                        "layers":{"a":[1,2,3]}})"),
               ParseError);
  EXPECT_THROW(load_map_from_string(R"({"version":2,"resolution":1,"origin":[0,0],"width":1,"height":1,"layers":{}})"),
               ParseError);
  EXPECT_THROW(load_map_from_string(R"({"version":1,"origin":[0,0],"width":1,"height":1,"layers":{}})"), ParseError);
  try {
    load_map_from_string(R"({"version":1,"resolution":1,"origin":[0,0],"width":2,"height":2,"layers":{"a":[1,2,3]}})");
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("a"), std::string::npos);
  }
}
