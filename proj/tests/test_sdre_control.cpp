#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "pae/sdre_control.hpp"

using namespace pae;

namespace {

LpvCoefficients scalar_lpv() {
  LpvCoefficients lpv;
  lpv.a0 = Matrix::Zero(1, 1);
  lpv.a = {Matrix::Ones(1, 1)};
  return lpv;
}

struct RandomCase {
  LpvCoefficients lpv;
  Matrix b, c;
};

RandomCase random_case(std::uint64_t seed, Index n = 6, Index r = 3) {
  Rng rng(seed);
  RandomCase rc;
  rc.lpv.a0 = rng.normal_matrix(n, n) - 2.0 * Matrix::Identity(n, n);
  for (Index j = 0; j < r; ++j) rc.lpv.a.push_back(0.5 * rng.normal_matrix(n, n));
  const Matrix s = rng.normal_matrix(n, n);
  rc.lpv.mass = s * s.transpose() + Matrix::Identity(n, n);
  rc.b = rng.normal_matrix(n, 2);
  rc.c = rng.normal_matrix(2, n);
  return rc;
}

double fit_slope(const std::vector<double>& t, const std::vector<double>& f) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    mx += std::log(t[i]);
    my += std::log(f[i]);
  }
  mx /= static_cast<double>(t.size());
  my /= static_cast<double>(t.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    sxy += (std::log(t[i]) - mx) * (std::log(f[i]) - my);
    sxx += std::pow(std::log(t[i]) - mx, 2);
  }
  return sxy / sxx;
}

}  // namespace

TEST(Multiindices, Counts) {
  EXPECT_EQ(enumerate_multiindices(10, 1).size(), 11u);
  EXPECT_EQ(enumerate_multiindices(5, 1).size(), 6u);
  EXPECT_EQ(enumerate_multiindices(5, 2).size(), 21u);
  EXPECT_EQ(enumerate_multiindices(5, 3).size(), 56u);
  const auto all = enumerate_multiindices(5, 2);
  EXPECT_EQ(std::count_if(all.begin(), all.end(), [](const MultiIndex& a) { return a.degree() == 2; }), 15);
  EXPECT_EQ(expansion_size(5, 3), 56u);
  EXPECT_EQ(equation_count(10, 1), 11u);
}

TEST(Multiindices, GradedLexOrder) {
  const auto idx = enumerate_multiindices(2, 2);
  const std::vector<std::vector<int>> expect{{0, 0}, {1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}};
  ASSERT_EQ(idx.size(), expect.size());
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(idx[i].exponents, expect[i]);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  EXPECT_EQ(std::set<MultiIndex>(idx.begin(), idx.end()).size(), idx.size());
}

TEST(Multiindices, InvalidArguments) {
  EXPECT_THROW(enumerate_multiindices(0, 1), ConfigError);
  EXPECT_THROW(enumerate_multiindices(3, -1), ConfigError);
}

TEST(Multiindices, Monomial) {
  const MultiIndex a({2, 0, 1});
  EXPECT_DOUBLE_EQ(a.monomial((Vector(3) << 3, 5, 2).finished()), 18.0);
  EXPECT_EQ(a.to_string(), "(2,0,1)");
}

TEST(Expansion, ScalarOracle) {
  const auto exp = compute_expansion_coefficients(scalar_lpv(), Matrix::Ones(1, 1), Matrix::Ones(1, 1), 1.0, 2);
  ASSERT_EQ(exp.p.size(), 3u);
  EXPECT_NEAR(exp.p[0](0, 0), 1.0, 1e-10);
  EXPECT_NEAR(exp.p[1](0, 0), 1.0, 1e-10);
  EXPECT_NEAR(exp.p[2](0, 0), 0.5, 1e-10);
  const Vector u = expanded_feedback(exp, Vector::Constant(1, 0.1), Vector::Ones(1));
  EXPECT_NEAR(u(0), -1.105, 1e-10);
}

TEST(Expansion, ScalarOracleLowRank) {
  const auto exp = compute_expansion_coefficients(scalar_lpv(), Matrix::Ones(1, 1), Matrix::Ones(1, 1), 1.0, 2,
                                                  RhsAssembly::low_rank);
  EXPECT_NEAR(exp.p[2](0, 0), 0.5, 1e-10);
}

TEST(Expansion, TruncationsAgreeOnSharedCoefficients) {
  const auto rc = random_case(1);
  const auto e0 = compute_expansion_coefficients(rc.lpv, rc.b, rc.c, 1.0, 0);
  const auto e2 = compute_expansion_coefficients(rc.lpv, rc.b, rc.c, 1.0, 2);
  EXPECT_EQ(e0.size(), 1u);
  EXPECT_EQ(e2.size(), 10u);
  EXPECT_LE((e0.p[0] - e2.p[0]).norm(), 1e-12 * e0.p[0].norm());
}

TEST(Expansion, CoefficientsAreSymmetricAndGainsConsistent) {
  const auto rc = random_case(2);
  const auto exp = compute_expansion_coefficients(rc.lpv, rc.b, rc.c, 0.5, 2);
  const Matrix bm = rc.lpv.mass.llt().solve(rc.b);
  for (std::size_t i = 0; i < exp.size(); ++i) {
    EXPECT_LE((exp.p[i] - exp.p[i].transpose()).norm(), 1e-10 * exp.p[i].norm());
    EXPECT_LE((exp.k[i] - bm.transpose() * exp.p[i]).norm(), 1e-10 * exp.k[i].norm());
  }
}

TEST(Expansion, ConstantTermIsStabilizing) {
  const auto rc = random_case(3);
  const auto exp = compute_expansion_coefficients(rc.lpv, rc.b, rc.c, 2.0, 1);
  const Matrix bm = rc.lpv.mass.llt().solve(rc.b);
  const Matrix a0 = rc.lpv.mass.llt().solve(rc.lpv.a0);
  EXPECT_LT(spectral_abscissa(a0 - bm * exp.k[0] / 2.0), 0.0);
}

TEST(Expansion, GammaScaling) {
  // P(gamma, C) = gamma P(1, C / sqrt(gamma)), so the feedback is unchanged.
  const auto rc = random_case(4);
  const double gamma = 10.0;
  const auto a = compute_expansion_coefficients(rc.lpv, rc.b, rc.c, gamma, 2);
  const auto b = compute_expansion_coefficients(rc.lpv, rc.b, rc.c / std::sqrt(gamma), 1.0, 2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE((a.p[i] - gamma * b.p[i]).norm(), 1e-9 * a.p[i].norm());
  Rng rng(5);
  const Vector rho = rng.uniform_matrix(3, 1, -0.1, 0.1);
  const Vector v = rng.normal_matrix(6, 1);
  EXPECT_LE((expanded_feedback(a, rho, v) - expanded_feedback(b, rho, v)).norm(),
            1e-9 * expanded_feedback(b, rho, v).norm());
}

TEST(Expansion, LowRankAssemblyMatchesDense) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const auto rc = random_case(seed);
    const auto d = compute_expansion_coefficients(rc.lpv, rc.b, rc.c, 1.0, 2);
    const auto l = compute_expansion_coefficients(rc.lpv, rc.b, rc.c, 1.0, 2, RhsAssembly::low_rank);
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_LE((d.p[i] - l.p[i]).norm(), 1e-9 * d.p[i].norm());
  }
}

TEST(Expansion, ResidualOrder) {
  const auto rc = random_case(20);
  Rng rng(21);
  for (int p = 0; p <= 2; ++p) {
    const auto exp = compute_expansion_coefficients(rc.lpv, rc.b, rc.c, 1.0, p);
    for (int ray = 0; ray < 3; ++ray) {
      const Vector dir = rng.normal_matrix(3, 1).normalized();
      std::vector<double> ts, rs;
      for (double t = 1e-3; t <= 0.1 + 1e-12; t *= std::sqrt(10.0)) {
        ts.push_back(t);
        rs.push_back(expansion_residual(exp, rc.lpv, rc.b, rc.c, 1.0, t * dir));
      }
      EXPECT_NEAR(fit_slope(ts, rs), p + 1.0, 0.3) << "p = " << p;
    }
  }
}

TEST(Expansion, DoubledRepeatedIndexTermLosesOrder) {
  const auto rc = random_case(22);
  auto exp = compute_expansion_coefficients(rc.lpv, rc.b, rc.c, 1.0, 2);
  for (std::size_t i = 0; i < exp.size(); ++i) {
    const auto& e = exp.indices[i].exponents;
    if (std::find(e.begin(), e.end(), 2) != e.end()) exp.p[i] *= 2.0;
  }
  const Vector dir = Vector::Ones(3).normalized();
  std::vector<double> ts, rs;
  for (double t = 1e-3; t <= 0.1 + 1e-12; t *= std::sqrt(10.0)) {
    ts.push_back(t);
    rs.push_back(expansion_residual(exp, rc.lpv, rc.b, rc.c, 1.0, t * dir));
  }
  EXPECT_LT(fit_slope(ts, rs), 2.3);
}

TEST(Expansion, InvalidArguments) {
  const auto lpv = scalar_lpv();
  const Matrix one = Matrix::Ones(1, 1);
  EXPECT_THROW(compute_expansion_coefficients(lpv, one, one, 1.0, 3), ConfigError);
  EXPECT_THROW(compute_expansion_coefficients(lpv, one, one, 0.0, 1), ConfigError);
  EXPECT_THROW(compute_expansion_coefficients(lpv, one, Matrix::Ones(1, 2), 1.0, 1), DimensionError);
}

TEST(Expansion, UnstabilizablePairReportsMultiindex) {
  LpvCoefficients lpv;
  lpv.a0 = Matrix::Identity(2, 2);
  lpv.a = {Matrix::Zero(2, 2)};
  const Matrix b = (Matrix(2, 1) << 1, 0).finished();
  try {
    compute_expansion_coefficients(lpv, b, Matrix::Identity(2, 2), 1.0, 1);
    FAIL() << "expected a synthesis error";
  } catch (const SynthesisError& e) {
    EXPECT_EQ(e.multiindex().degree(), 0);
  }
}

TEST(Expansion, JsonRoundTrip) {
  const auto rc = random_case(30);
  const auto exp = compute_expansion_coefficients(rc.lpv, rc.b, rc.c, 1.0, 2);
  const auto back = expansion_from_json(Json::parse(expansion_to_json(exp, true).dump()));
  EXPECT_EQ(back.indices, exp.indices);
  EXPECT_EQ(back.k[4], exp.k[4]);
  EXPECT_EQ(back.p[7], exp.p[7]);
  EXPECT_TRUE(expansion_from_json(expansion_to_json(exp)).p.empty());
  Json broken = expansion_to_json(exp);
  broken["K"].erase(0);
  EXPECT_THROW(expansion_from_json(broken), DimensionError);
}

TEST(SdreFeedback, ZeroCoefficientReducesToLqr) {
  const auto rc = random_case(31, 5, 1);
  const Matrix bm = rc.lpv.mass.llt().solve(rc.b);
  const Matrix a = rc.lpv.mass.llt().solve(rc.lpv.a0);
  const Matrix p = solve_care(a, bm / std::sqrt(3.0), rc.c);
  Rng rng(32);
  const Vector v = rng.normal_matrix(5, 1);
  const Vector u = sdre_feedback_for_coefficient(rc.lpv.a0, rc.lpv.mass, rc.b, rc.c, 3.0, v);
  EXPECT_LE((u + bm.transpose() * p * v / 3.0).norm(), 1e-10 * u.norm());
}
