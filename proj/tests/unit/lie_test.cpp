#include <gtest/gtest.h>

#include <numbers>

#include "oracles.hpp"
#include "rifls/error.hpp"
#include "rifls/lie.hpp"

namespace rifls::lie {
namespace {

using rifls::testing::numeric_jacobian;
using rifls::testing::random_rotvec;
using rifls::testing::random_vec3;
using rifls::testing::rel_err;
using rifls::testing::Rng;
using rifls::testing::series_exp;

constexpr double kPi = std::numbers::pi;

TangentSE23 random_tangent(Rng& rng, double max_angle = 2.0) {
  return {random_rotvec(rng, max_angle), random_vec3(rng, 2.0), random_vec3(rng, 5.0)};
}

SE23 random_element(Rng& rng) { return se23_exp(random_tangent(rng, 3.0)); }

TEST(Skew, ZeroAndCross) {
  EXPECT_TRUE(skew(Vec3::Zero()).isZero(0.0));
  EXPECT_TRUE((skew(Vec3::UnitX()) * Vec3::UnitY()).isApprox(Vec3::UnitZ()));
}

TEST(Skew, RoundTripAndAntisymmetry) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 v = random_vec3(rng, 3.0);
    const Vec3 w = random_vec3(rng);
    const Mat3 s = skew(v);
    EXPECT_EQ(unskew(s), v);
    EXPECT_TRUE((s + s.transpose()).isZero(0.0));
    EXPECT_LT((s * w - v.cross(w)).norm(), 1e-14);
  }
}

TEST(So3Exp, Identity) { EXPECT_EQ(so3_exp(Vec3::Zero()).matrix(), Mat3::Identity()); }

TEST(So3Exp, QuarterTurnMatchesSeries) {
  const Vec3 w(kPi / 2, 0, 0);
  const Mat3 oracle = series_exp(skew(w));
  EXPECT_LT((so3_exp(w).matrix() - oracle).norm(), 1e-12);
  EXPECT_LT((so3_exp(w) * Vec3::UnitY() - Vec3::UnitZ()).norm(), 1e-12);
}

TEST(So3Exp, InverseSymmetryAndOrthonormality) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 w = random_rotvec(rng, 3.0);
    const Rot3 r = so3_exp(w);
    EXPECT_LT(((r * so3_exp(-w)).matrix() - Mat3::Identity()).norm(), 1e-12);
    EXPECT_TRUE(r.is_valid());
    EXPECT_NEAR(r.matrix().determinant(), 1.0, 1e-12);
  }
}

TEST(So3Log, IdentityIsZero) { EXPECT_EQ(so3_log(Rot3::identity()), Vec3::Zero()); }

TEST(So3Log, RoundTrip) {
  const Vec3 w(0.3, -0.2, 0.1);
  EXPECT_LT((so3_log(so3_exp(w)) - w).norm(), 1e-14);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 v = random_rotvec(rng, kPi - 1e-3);
    EXPECT_LT((so3_log(so3_exp(v)) - v).norm(), 1e-9);
    const Rot3 r = so3_exp(random_rotvec(rng, 3.0));
    EXPECT_LT((so3_exp(so3_log(r)).matrix() - r.matrix()).norm(), 1e-9);
  }
}

TEST(So3Log, NearPiAxisAngle) {
  const double a = kPi - 1e-3;
  Mat3 m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  const Vec3 w = so3_log(Rot3(m));
  EXPECT_NEAR(w.norm(), a, 1e-9);
  EXPECT_NEAR(w.normalized().dot(Vec3::UnitZ()), 1.0, 1e-12);
}

TEST(So3Log, RejectsAngleNearPi) {
  try {
    so3_log(so3_exp(Vec3(0, 0, kPi - 1e-8)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AngleNearPi);
  }
}

TEST(So3LeftJacobian, ZeroIsIdentity) {
  EXPECT_EQ(so3_left_jacobian(Vec3::Zero()), Mat3::Identity());
  EXPECT_EQ(so3_left_jacobian_inv(Vec3::Zero()), Mat3::Identity());
}

TEST(So3LeftJacobian, MatchesFiniteDifferences) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 w = random_rotvec(rng, 2.5);
    const Rot3 r0 = so3_exp(w);
    const MatX fd = numeric_jacobian(
        [&](const VecX& d) -> VecX { return so3_log(so3_exp(w + d) * r0.inverse()); },
        VecX::Zero(3));
    EXPECT_LT(rel_err(so3_left_jacobian(w), fd), 1e-5);
  }
}

TEST(So3LeftJacobian, InverseMatchesDenseInverse) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 w = random_rotvec(rng, 2.5);
    const Mat3 j = so3_left_jacobian(w);
    EXPECT_LT((so3_left_jacobian_inv(w) - j.inverse()).norm(), 1e-10);
    EXPECT_LT((j * so3_left_jacobian_inv(w) - Mat3::Identity()).norm(), 1e-10);
  }
}

TEST(So3, SmallAngleBranchesAreContinuous) {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const Vec3 axis = random_vec3(rng).normalized();
    const Vec3 lo = axis * (kSmallAngle * 0.9);
    const Vec3 hi = axis * (kSmallAngle * 1.1);
    const Vec3 at = axis * kSmallAngle;
    // Exact values differ by O(theta); compare through their first-order model.
    const Mat3 d = skew(hi - lo);
    EXPECT_LT((so3_exp(hi).matrix() - so3_exp(lo).matrix() - d).norm(), 1e-12);
    EXPECT_LT((so3_left_jacobian(hi) - so3_left_jacobian(lo) - 0.5 * d).norm(), 1e-12);
    EXPECT_LT((so3_left_jacobian_inv(hi) - so3_left_jacobian_inv(lo) + 0.5 * d).norm(), 1e-12);
    EXPECT_LT((so3_log(so3_exp(at)) - at).norm(), 1e-12 * kSmallAngle + 1e-20);
  }
}

TEST(Se23Exp, IdentityAndPureTranslation) {
  const SE23 e = se23_exp(TangentSE23::zero());
  EXPECT_EQ(e.matrix(), Mat5::Identity());
  const TangentSE23 xi{Vec3::Zero(), Vec3(1, 2, 3), Vec3(-4, 5, 6)};
  const SE23 x = se23_exp(xi);
  EXPECT_EQ(x.r.matrix(), Mat3::Identity());
  EXPECT_EQ(x.v, xi.dv);
  EXPECT_EQ(x.p, xi.dp);
}

TEST(Se23Exp, MatchesSeriesOfEmbedding) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const TangentSE23 xi = random_tangent(rng);
    const Mat5 oracle = series_exp(se23_hat(xi), 60);
    EXPECT_LT((se23_exp(xi).matrix() - oracle).norm(), 1e-10);
    const SE23 x = se23_exp(xi);
    const Mat3 jl = so3_left_jacobian(xi.dtheta);
    EXPECT_LT((x.v - jl * xi.dv).norm(), 1e-14);
    EXPECT_LT((x.p - jl * xi.dp).norm(), 1e-14);
  }
}

TEST(Se23, HatVeeRoundTrip) {
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    const TangentSE23 xi = random_tangent(rng);
    EXPECT_EQ(se23_vee(se23_hat(xi)).vector(), xi.vector());
    EXPECT_EQ(TangentSE23::from_vector(xi.vector()).vector(), xi.vector());
  }
}

TEST(Se23Log, IdentityAndPureTranslation) {
  EXPECT_TRUE(se23_log(SE23::identity()).vector().isZero(0.0));
  SE23 x;
  x.v = Vec3(1, 2, 3);
  x.p = Vec3(4, 5, 6);
  Vec9 expect;
  expect << 0, 0, 0, 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(se23_log(x).vector(), expect);
}

TEST(Se23Log, RoundTrip) {
  Rng rng(9);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const TangentSE23 xi = random_tangent(rng, 2.0);
    worst = std::max(worst, (se23_log(se23_exp(xi)).vector() - xi.vector()).norm());
    const SE23 x = random_element(rng);
    EXPECT_LT((se23_exp(se23_log(x)).matrix() - x.matrix()).norm(), 1e-9);
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Se23LeftJacobian, ZeroIsIdentity) {
  EXPECT_EQ(se23_left_jacobian(TangentSE23::zero()), Mat9::Identity());
  EXPECT_EQ(se23_left_jacobian_inv(TangentSE23::zero()), Mat9::Identity());
}

TEST(Se23LeftJacobian, MatchesFiniteDifferences) {
  Rng rng(10);
  for (int i = 0; i < 1000; ++i) {
    const TangentSE23 xi = random_tangent(rng, 2.5);
    const SE23 x0inv = se23_inverse(se23_exp(xi));
    const Vec9 v = xi.vector();
    const MatX fd = numeric_jacobian(
        [&](const VecX& d) -> VecX {
          return se23_log(se23_exp(TangentSE23::from_vector(v + d)) * x0inv).vector();
        },
        VecX::Zero(9));
    const Mat9 j = se23_left_jacobian(xi);
    EXPECT_LT(rel_err(j, fd), 1e-5);
    EXPECT_LT((se23_left_jacobian_inv(xi) * j - Mat9::Identity()).norm(), 1e-10);
  }
}

TEST(Se23LeftJacobian, SmallAngleSeriesAgreesAcrossSwitch) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Vec3 axis = random_vec3(rng).normalized();
    const Vec3 dv = random_vec3(rng);
    const Vec3 dp = random_vec3(rng);
    const TangentSE23 lo{axis * kSmallAngleHighOrder * (1 - 1e-9), dv, dp};
    const TangentSE23 hi{axis * kSmallAngleHighOrder * (1 + 1e-9), dv, dp};
    EXPECT_LT((se23_left_jacobian(hi) - se23_left_jacobian(lo)).norm(), 1e-10);
  }
}

TEST(Se23LeftJacobian, TranslationBlocksDecoupleWithoutRotation) {
  Rng rng(12);
  const TangentSE23 xi{Vec3::Zero(), random_vec3(rng), random_vec3(rng)};
  const Mat9 j = se23_left_jacobian(xi);
  EXPECT_TRUE((j.block<3, 3>(3, 6).isZero(0.0)));
  EXPECT_TRUE((j.block<3, 3>(6, 3).isZero(0.0)));
  EXPECT_TRUE((j.block<3, 3>(0, 0).isIdentity(0.0)));
}

TEST(Se23, ComposeInverseMatchEmbedding) {
  Rng rng(13);
  for (int i = 0; i < 1000; ++i) {
    const SE23 a = random_element(rng);
    const SE23 b = random_element(rng);
    EXPECT_LT(((a * b).matrix() - a.matrix() * b.matrix()).norm(), 1e-12);
    EXPECT_LT((se23_inverse(a).matrix() - a.matrix().inverse()).norm(), 1e-12);
    EXPECT_LT(((a * se23_inverse(a)).matrix() - Mat5::Identity()).norm(), 1e-12);
    EXPECT_LT(((SE23::identity() * b).matrix() - b.matrix()).norm(), 0.0 + 1e-15);
  }
}

TEST(Se23, RightInvariance) {
  Rng rng(14);
  for (int i = 0; i < 1000; ++i) {
    const SE23 xbar = random_element(rng);
    const SE23 x = se23_exp(random_tangent(rng, 1.0)) * xbar;
    const SE23 y = random_element(rng);
    const Vec9 lhs = se23_log((x * y) * se23_inverse(xbar * y)).vector();
    const Vec9 rhs = se23_log(x * se23_inverse(xbar)).vector();
    EXPECT_LT((lhs - rhs).norm(), 1e-9);
  }
}

TEST(Se23, AdjointConjugation) {
  Rng rng(15);
  for (int i = 0; i < 200; ++i) {
    const SE23 x = random_element(rng);
    const TangentSE23 xi = random_tangent(rng, 1.0);
    const SE23 lhs = x * se23_exp(xi) * se23_inverse(x);
    const SE23 rhs = se23_exp(TangentSE23::from_vector(se23_adjoint(x) * xi.vector()));
    EXPECT_LT((lhs.matrix() - rhs.matrix()).norm(), 1e-9);
  }
}

TEST(Rot3, NormalizeRestoresOrthonormality) {
  Rng rng(16);
  Rot3 r = so3_exp(random_rotvec(rng, 2.0));
  for (int i = 0; i < 10000; ++i) r = r * so3_exp(random_rotvec(rng, 0.1));
  const Rot3 n = r.normalized();
  EXPECT_LT(n.orthonormality_defect(), 1e-14);
  EXPECT_LT((n.matrix() - r.matrix()).norm(), 1e-9);
}

}  // namespace
}  // namespace rifls::lie
