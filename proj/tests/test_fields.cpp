#include <gtest/gtest.h>

#include <random>

#include "iontrap/fields.hpp"
#include "iontrap/fixtures.hpp"
#include "oracles.hpp"

using namespace iontrap;

namespace {

Ring square(double cx, double cy, double s) {
  return {{cx - s / 2, cy - s / 2}, {cx + s / 2, cy - s / 2}, {cx + s / 2, cy + s / 2}, {cx - s / 2, cy + s / 2}};
}

Electrode electrode(std::vector<Ring> rings) { return {"e", Role::Control, std::move(rings)}; }

Ring l_shape() {
  return {{-30e-6, -30e-6}, {40e-6, -30e-6}, {40e-6, -5e-6}, {-5e-6, -5e-6}, {-5e-6, 35e-6}, {-30e-6, 35e-6}};
}

std::vector<Vec3> random_points(int n, unsigned seed, double zlo = 10e-6, double zhi = 100e-6) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> xy(-80e-6, 80e-6), z(zlo, zhi);
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) out.emplace_back(xy(rng), xy(rng), z(rng));
  return out;
}

}  // namespace

TEST(BasisEval, UnitSquareOnAxisMatchesQuadrature) {
  const Ring sq = square(0, 0, 1.0);
  const BasisPotential b(electrode({sq}));
  for (double h : {0.05, 0.3, 1.0, 4.0}) {
    const Vec3 r(0, 0, h);
    const auto q = oracle::polygon_integrals({sq}, r);
    EXPECT_NEAR(b.value(r), q.value, 1e-8) << "h=" << h;
    // closed form on the axis of a square of side a: (2/pi) atan(a^2 / (4 h sqrt(h^2 + a^2/2)))
    const double closed = 2.0 / std::numbers::pi * std::atan(1.0 / (4.0 * h * std::sqrt(h * h + 0.5)));
    EXPECT_NEAR(b.value(r), closed, 1e-13);
  }
}

TEST(BasisEval, NonConvexAndHoledShapesMatchQuadrature) {
  Ring hole = square(5e-6, 0, 20e-6);
  std::reverse(hole.begin(), hole.end());
  const std::vector<std::vector<Ring>> shapes{{l_shape()}, {square(0, 0, 60e-6), hole}};
  for (const auto& rings : shapes) {
    const BasisPotential b(electrode(rings));
    for (const auto& r : random_points(6, 11)) {
      const auto q = oracle::polygon_integrals(rings, r);
      const auto s = b.eval(r, 1);
      EXPECT_NEAR(s.value, q.value, 1e-8);
      EXPECT_LT((s.gradient - q.gradient).norm(), 1e-8 * std::max(1.0, q.gradient.norm()));
    }
  }
}

TEST(BasisEval, LargePlaneApproachesOne) {
  const BasisPotential b(electrode({square(0, 0, 1.0)}));
  EXPECT_NEAR(b.value(Vec3(0, 0, 1e-7)), 1.0, 1e-6);
}

TEST(BasisEval, FarOutsideFootprintApproachesZero) {
  const BasisPotential b(electrode({square(0, 0, 1e-6)}));
  const double v = b.value(Vec3(1e-3, 0, 1e-9));
  EXPECT_GE(v, 0.0);
  EXPECT_LT(v, 1e-9);
}

TEST(BasisEval, StrictlyBetweenZeroAndOneAbovePlane) {
  const auto l = fixtures::triangle_array();
  const BasisPotential b(l.rf());
  for (const auto& r : random_points(50, 3, 1e-6, 200e-6)) {
    const double v = b.value(r);
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(BasisEval, BelowPlaneRejected) {
  const BasisPotential b(electrode({square(0, 0, 1.0)}));
  for (double z : {0.0, -1e-6}) {
    try {
      (void)b.eval(Vec3(0, 0, z), 0);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::BelowPlane);
    }
  }
}

TEST(BasisEval, GradientMatchesFiniteDifferences) {
  const auto l = fixtures::triangle_array();
  const BasisPotential b(l.rf());
  for (const auto& r : random_points(100, 5)) {
    const Vec3 g = b.eval(r, 1).gradient;
    const Vec3 fd = oracle::fd_gradient([&](const Vec3& p) { return b.value(p); }, r, 1e-8);
    EXPECT_LT((g - fd).norm(), 1e-5 * g.norm()) << r.transpose();
  }
}

TEST(BasisEval, HessianMatchesFiniteDifferencesAndIsTraceless) {
  const auto l = fixtures::triangle_array();
  const BasisPotential b(l.rf());
  for (const auto& r : random_points(100, 6)) {
    const Mat3 h = b.eval(r, 2).hessian;
    const Mat3 fd = oracle::fd_jacobian([&](const Vec3& p) { return b.eval(p, 1).gradient; }, r, 1e-8);
    EXPECT_LT((h - fd).norm(), 1e-4 * h.norm());
    EXPECT_LE(std::abs(h.trace()), 1e-6 * h.norm());
    EXPECT_LE((h - h.transpose()).norm(), 1e-12 * h.norm());
  }
}

TEST(BasisEval, ThirdDerivativesMatchFiniteDifferences) {
  const auto l = fixtures::triangle_array();
  const BasisPotential b(l.rf());
  for (const auto& r : random_points(20, 7)) {
    Vec3 g;
    Mat3 h;
    Tensor3 t;
    b.eval3(r, g, h, t);
    EXPECT_LT((h - b.eval(r, 2).hessian).norm(), 1e-10 * h.norm());
    double scale = 0.0;
    for (int a = 0; a < 3; ++a) scale = std::max(scale, t[static_cast<std::size_t>(a)].norm());
    for (int a = 0; a < 3; ++a) {
      // d/dr_a of the Hessian
      Vec3 e = Vec3::Zero();
      e[a] = 1e-8;
      const Mat3 fd = (b.eval(r + e, 2).hessian - b.eval(r - e, 2).hessian) / 2e-8;
      EXPECT_LT((t[static_cast<std::size_t>(a)] - fd).norm(), 1e-4 * scale);
      // Laplacian of a harmonic function's derivative vanishes too
      EXPECT_LE(std::abs(t[static_cast<std::size_t>(a)].trace()), 1e-6 * scale);
    }
  }
}

TEST(BasisEval, TriangulationAdditivity) {
  const Ring shape = l_shape();
  const BasisPotential whole(electrode({shape}));
  const auto tris = geometry::ear_clip(shape);
  for (const auto& r : random_points(20, 8)) {
    double sum = 0.0;
    for (const auto& t : tris) sum += detail::triangle_solid_angle(r, t) / (2.0 * std::numbers::pi);
    EXPECT_NEAR(whole.value(r), sum, 1e-10);
  }
}

TEST(BasisEval, AnnulusPlusDiskEqualsLargeDisk) {
  const Ring outer = geometry::regular_polygon(Vec2::Zero(), 50e-6, 48);
  const Ring inner = geometry::regular_polygon(Vec2::Zero(), 20e-6, 48);
  const BasisPotential annulus(electrode({outer, geometry::reversed(inner)}));
  const BasisPotential disk(electrode({inner}));
  const BasisPotential full(electrode({outer}));
  for (const auto& r : random_points(20, 9)) {
    const auto a = annulus.eval(r, 2), d = disk.eval(r, 2), f = full.eval(r, 2);
    EXPECT_NEAR(a.value + d.value, f.value, 1e-12);
    EXPECT_LT((a.hessian + d.hessian - f.hessian).norm(), 1e-9 * f.hessian.norm());
  }
}

class SuperposeTest : public ::testing::Test {
 protected:
  FieldModel model{fixtures::triangle_array()};
};

TEST_F(SuperposeTest, UnitVectorReproducesBasis) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(30);
  v[0] = 1.0;
  const Vec3 r(-40e-6, 3e-6, 30e-6);
  const auto s = superpose(model, v, 1.0, r, 2);
  const auto b = basis_eval(model.control(0), r, 2);
  EXPECT_DOUBLE_EQ(s.value, b.value);
  EXPECT_EQ(s.gradient, b.gradient);
  EXPECT_EQ(s.hessian, b.hessian);
}

TEST_F(SuperposeTest, ZeroAmplitudeGivesZeroSample) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(30).normalized();
  const auto s = superpose(model, v, 0.0, Vec3(0, 0, 40e-6), 2);
  EXPECT_EQ(s.value, 0.0);
  EXPECT_TRUE(s.gradient.isZero(0.0));
  EXPECT_TRUE(s.hessian.isZero(0.0));
}

TEST_F(SuperposeTest, LinearInAmplitude) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  Eigen::VectorXd v(30);
  for (auto& x : v) x = n(rng);
  v.normalize();
  for (const auto& r : random_points(10, 12)) {
    const auto one = superpose(model, v, 1.0, r, 2), two = superpose(model, v, 2.0, r, 2);
    EXPECT_NEAR(two.value, 2.0 * one.value, 1e-12 * std::abs(two.value));
    EXPECT_LT((two.gradient - 2.0 * one.gradient).norm(), 1e-12 * two.gradient.norm());
    EXPECT_LT((two.hessian - 2.0 * one.hessian).norm(), 1e-12 * two.hessian.norm());
    EXPECT_LE(std::abs(one.hessian.trace()), 1e-6 * one.hessian.norm());
  }
}

TEST_F(SuperposeTest, Errors) {
  Eigen::VectorXd short_v = Eigen::VectorXd::Ones(29).normalized();
  try {
    superpose(model, short_v, 1.0, Vec3(0, 0, 1e-5), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
  }
  Eigen::VectorXd big = Eigen::VectorXd::Ones(30);
  try {
    superpose(model, big, 1.0, Vec3(0, 0, 1e-5), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotNormalized);
  }
  EXPECT_NO_THROW(superpose(model, big, 1.0, Vec3(0, 0, 1e-5), 0, true));
}
