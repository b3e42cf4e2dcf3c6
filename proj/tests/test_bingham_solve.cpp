#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "bingham/bingham_solve.hpp"
#include "bingham/errors.hpp"
#include "oracles.hpp"

using namespace bingham;

namespace {

constexpr double kPi = std::numbers::pi;

double bessel_ratio_oracle(int n, double x) {
  return static_cast<double>(oracle::bessel_i_series(n, x) / oracle::bessel_i_series(0, x));
}

double lambda_by_bisection(double mu1) {
  auto f = [mu1](double lambda) { return 0.5 * (1.0 + bessel_ratio_oracle(1, lambda)) - mu1; };
  return oracle::bisect(f, 0.0, 1e4);
}

// <cos^a sin^b> under exp(lambda cos 2 phi) by a dense trapezoid rule.
double planar_moment(double lambda, int a, int b, int nodes = 100000) {
  double num = 0.0;
  double den = 0.0;
  for (int j = 0; j < nodes; ++j) {
    const double phi = 2.0 * kPi * j / nodes;
    const double w = std::exp(lambda * (std::cos(2.0 * phi) - 1.0));
    num += w * std::pow(std::cos(phi), a) * std::pow(std::sin(phi), b);
    den += w;
  }
  return num / den;
}

TrianglePoint random_triangle_point(std::mt19937_64& rng, double margin) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    const double a = u(rng);
    const double b = u(rng);
    const double c = u(rng);
    std::array<double, 3> mu{a, b, c};
    const double s = a + b + c;
    for (double& m : mu) m /= s;
    std::sort(mu.begin(), mu.end(), std::greater<>());
    if (mu[2] < margin) continue;
    if (mu[0] - mu[2] < margin) continue;
    return {mu[0], mu[1]};
  }
}

}  // namespace

TEST_SUITE_BEGIN("bingham_solve");

TEST_CASE("solve_lambda_2d") {
  CHECK(solve_lambda_2d(0.5) == 0.0);
  for (double mu1 : {0.75, 0.99}) {
    const double lambda = solve_lambda_2d(mu1);
    const double ref = lambda_by_bisection(mu1);
    CAPTURE(mu1);
    CHECK(std::abs(lambda - ref) <= 1e-12 * std::max(1.0, ref));
    const double residual = 0.5 * (1.0 + bessel_ratio_oracle(1, lambda)) - mu1;
    CHECK(std::abs(residual) <= 1e-14);
  }
  CHECK(solve_lambda_2d(0.99) > 10.0);
  CHECK(std::isinf(solve_lambda_2d(1.0)));
  CHECK(solve_lambda_2d(0.5 - 1e-13) == 0.0);
  CHECK_THROWS_AS(solve_lambda_2d(0.49), DomainError);
  CHECK_THROWS_AS(solve_lambda_2d(1.01), DomainError);
}

TEST_CASE("solve_lambda_2d is strictly increasing") {
  double previous = -1.0;
  std::optional<double> guess;
  for (int i = 0; i < 1000; ++i) {
    const double mu1 = 0.5 + 0.4999 * i / 999.0;
    const double lambda = solve_lambda_2d(mu1, guess);
    CHECK(lambda > previous);
    previous = lambda;
    guess = lambda;
  }
}

TEST_CASE("s1111_from_lambda_2d") {
  CHECK(s1111_from_lambda_2d(0.0) == doctest::Approx(0.375).epsilon(1e-15));
  CHECK(s1111_from_lambda_2d(std::numeric_limits<double>::infinity()) == 1.0);
  const double lambda = solve_lambda_2d(0.8);
  CHECK(std::abs(s1111_from_lambda_2d(lambda) - planar_moment(lambda, 4, 0)) <= 1e-13);
}

TEST_CASE("log_z_2d matches direct integration") {
  for (double lambda : {0.0, 0.3, 4.0, 40.0, 900.0}) {
    // Periodic integrand: a dense trapezoid rule is exact to rounding.
    const int nodes = 200000;
    double shifted = 0.0;
    for (int j = 0; j < nodes; ++j) {
      shifted += std::exp(lambda * (std::cos(2.0 * kPi * j / nodes * 2.0) - 1.0));
    }
    shifted *= 2.0 * kPi / nodes;
    CAPTURE(lambda);
    CHECK(std::abs(log_z_2d(lambda) - (std::log(shifted) + lambda)) <= 1e-12 * (1.0 + lambda));
  }
}

TEST_CASE("triangle_to_square corners and round trip") {
  const SquarePoint aligned = triangle_to_square({1.0, 0.0});
  CHECK(aligned.nu1 == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(aligned.nu2 == doctest::Approx(1.0).epsilon(1e-15));
  const SquarePoint planar = triangle_to_square({0.5, 0.5});
  CHECK(planar.nu1 == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(planar.nu2 == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(triangle_to_square({1.0 / 3.0, 1.0 / 3.0}), DomainError);

  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const TrianglePoint p = random_triangle_point(rng, 1e-3);
    const SquarePoint q = triangle_to_square(p);
    CHECK(std::abs(q.nu1) <= 1.0);
    CHECK(std::abs(q.nu2) <= 1.0);
    const TrianglePoint back = square_to_triangle(q);
    CHECK(std::abs(back.mu1 - p.mu1) <= 1e-14);
    CHECK(std::abs(back.mu2 - p.mu2) <= 1e-14);
  }
}

TEST_CASE("square_to_triangle corners") {
  for (double nu2 : {-1.0, 0.37, 1.0}) {
    const TrianglePoint p = square_to_triangle({-1.0, nu2});
    CHECK(p.mu1 == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(p.mu2 == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  const TrianglePoint aligned = square_to_triangle({1.0, 1.0});
  CHECK(aligned.mu1 == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(aligned.mu2) <= 1e-15);
  const TrianglePoint planar = square_to_triangle({1.0, -1.0});
  CHECK(planar.mu1 == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(planar.mu2 == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("clamp_to_triangle") {
  const TrianglePoint p = clamp_to_triangle({0.5 + 1e-13, 0.5});
  CHECK(p.mu1 + p.mu2 <= 1.0);
  CHECK_THROWS_AS(clamp_to_triangle({0.7, 0.4}), DomainError);
  CHECK_THROWS_AS(clamp_to_triangle({0.3, 0.3}), DomainError);
}

TEST_CASE("sphere_moments uniform") {
  for (auto [n_phi, n_theta] : {std::pair{4, 2}, std::pair{8, 6}, std::pair{64, 32}}) {
    const SphereMoments m = sphere_moments({}, n_phi, n_theta);
    CAPTURE(n_phi);
    CHECK(std::abs(m.p1p1 - 1.0 / 3.0) <= 1e-14);
    CHECK(std::abs(m.p2p2 - 1.0 / 3.0) <= 1e-14);
    CHECK(std::abs(m.log_z - std::log(4.0 * kPi)) <= 1e-14);
  }
  // Quartic integrands need 3 Gauss nodes and more than 4 trapezoid nodes.
  for (auto [n_phi, n_theta] : {std::pair{6, 3}, std::pair{8, 6}, std::pair{64, 32}}) {
    const SphereMoments m = sphere_moments({}, n_phi, n_theta);
    CAPTURE(n_phi);
    CHECK(std::abs(m.p1p1p1p1 - 0.2) <= 1e-14);
    CHECK(std::abs(m.p1p1p2p2 - 1.0 / 15.0) <= 1e-14);
    CHECK(std::abs(m.p2p2p2p2 - 0.2) <= 1e-14);
    CHECK(std::abs(m.log_z - std::log(4.0 * kPi)) <= 1e-14);
  }
}

TEST_CASE("sphere_moments against adaptive quadrature") {
  BinghamParams params;
  params.lambda1 = 5.0;
  params.lambda2 = 2.0;
  const SphereMoments m = sphere_moments(params, kPrecomputePhiNodes, kPrecomputeThetaNodes);
  const oracle::DenseSphere ref = oracle::dense_sphere_moments(5.0, 2.0, 1e-14);
  CHECK(std::abs(m.p1p1 - ref.second[0]) <= 1e-12);
  CHECK(std::abs(m.p2p2 - ref.second[1]) <= 1e-12);
  CHECK(std::abs(m.p1p1p1p1 - ref.fourth[0][0]) <= 1e-12);
  CHECK(std::abs(m.p1p1p2p2 - ref.fourth[0][1]) <= 1e-12);
  CHECK(std::abs(m.p2p2p2p2 - ref.fourth[1][1]) <= 1e-12);
}

TEST_CASE("sphere_moments log_z against adaptive quadrature") {
  const double l1 = 5.0;
  const double l2 = 2.0;
  auto inner = [&](double x) {
    auto g = [&](double phi) {
      const double s2 = 1.0 - x * x;
      const double p2 = std::sqrt(s2) * std::sin(phi);
      return std::exp(l1 * (x * x - 1.0) + l2 * p2 * p2);
    };
    return 4.0 * oracle::adaptive_simpson(g, 0.0, kPi / 2.0, 1e-15, 40);
  };
  const double z = 2.0 * oracle::adaptive_simpson(inner, 0.0, 1.0, 1e-15, 40);
  BinghamParams params{l1, l2, 0.0};
  CHECK(std::abs(sphere_moments(params, 256, 256).log_z - (std::log(z) + l1)) <= 1e-12);
}

TEST_CASE("sphere_moments permutation symmetry") {
  const SphereMoments a = sphere_moments({7.0, 3.0, 0.0}, 256, 256);
  const SphereMoments b = sphere_moments({3.0, 7.0, 0.0}, 256, 256);
  CHECK(a.p1p1 == doctest::Approx(b.p2p2).epsilon(1e-14));
  CHECK(a.p2p2 == doctest::Approx(b.p1p1).epsilon(1e-14));
  CHECK(a.p1p1p1p1 == doctest::Approx(b.p2p2p2p2).epsilon(1e-14));
  CHECK(a.p2p2p2p2 == doctest::Approx(b.p1p1p1p1).epsilon(1e-14));
  CHECK(a.p1p1p2p2 == doctest::Approx(b.p1p1p2p2).epsilon(1e-14));
}

TEST_CASE("solve_lambda_3d") {
  const Solve3DResult iso = solve_lambda_3d({1.0 / 3.0, 1.0 / 3.0});
  CHECK(std::abs(iso.params.lambda1) <= 1e-12);
  CHECK(std::abs(iso.params.lambda2) <= 1e-12);

  const Solve3DResult r = solve_lambda_3d({0.5, 0.3});
  CHECK(r.residual <= 1e-13);
  const SphereMoments m =
      sphere_moments(r.params, kPrecomputePhiNodes, kPrecomputeThetaNodes);
  CHECK(std::abs(m.p1p1 - 0.5) <= 1e-12);
  CHECK(std::abs(m.p2p2 - 0.3) <= 1e-12);
  // Independent integrator.
  const oracle::DenseSphere ref =
      oracle::dense_sphere_moments(r.params.lambda1, r.params.lambda2, 1e-14);
  CHECK(std::abs(ref.second[0] - 0.5) <= 1e-11);
  CHECK(std::abs(ref.second[1] - 0.3) <= 1e-11);

  const Solve3DResult sym = solve_lambda_3d({0.4, 0.4});
  CHECK(std::abs(sym.params.lambda1 - sym.params.lambda2) <= 1e-10);
}

TEST_CASE("solve_lambda_3d self-consistency on random points") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const TrianglePoint p = random_triangle_point(rng, 1e-3);
    const Solve3DResult r = solve_lambda_3d(p);
    const SphereMoments m = sphere_moments(r.params, r.n_phi, kPrecomputeThetaNodes);
    CAPTURE(p.mu1);
    CAPTURE(p.mu2);
    CHECK(std::abs(m.p1p1 - p.mu1) <= 1e-12);
    CHECK(std::abs(m.p2p2 - p.mu2) <= 1e-12);
  }
}

TEST_CASE("planar_aligned_moments") {
  const FourthMomentTriple iso = planar_aligned_moments(0.5);
  CHECK(iso.s1111 == doctest::Approx(0.375).epsilon(1e-14));
  CHECK(iso.s1122 == doctest::Approx(0.125).epsilon(1e-14));
  CHECK(iso.s2222 == doctest::Approx(0.375).epsilon(1e-14));
  const FourthMomentTriple aligned = planar_aligned_moments(1.0);
  CHECK(aligned.s1111 == 1.0);
  CHECK(aligned.s1122 == 0.0);
  CHECK(aligned.s2222 == 0.0);

  const double lambda = lambda_by_bisection(0.8);
  const FourthMomentTriple m = planar_aligned_moments(0.8);
  CHECK(std::abs(m.s1111 - planar_moment(lambda, 4, 0)) <= 1e-13);
  CHECK(std::abs(m.s1122 - planar_moment(lambda, 2, 2)) <= 1e-13);
  CHECK(std::abs(m.s2222 - planar_moment(lambda, 0, 4)) <= 1e-13);
  CHECK(std::abs(m.s1111 - s1111_from_lambda_2d(solve_lambda_2d(0.8))) <= 1e-13);

  CHECK_THROWS_AS(planar_aligned_moments(0.4), DomainError);
  CHECK_THROWS_AS(planar_aligned_moments(1.1), DomainError);
}

TEST_CASE("approach to the planar edge is continuous") {
  for (double mu1 : {0.55, 0.7, 0.85}) {
    const double mu3 = 1e-4;
    const Solve3DResult r = solve_lambda_3d({mu1, 1.0 - mu1 - mu3});
    const FourthMomentTriple edge = planar_aligned_moments(mu1);
    CAPTURE(mu1);
    CHECK(std::abs(r.moments.p1p1p1p1 - edge.s1111) <= 1e-2);
    CHECK(std::abs(r.moments.p1p1p2p2 - edge.s1122) <= 1e-2);
    CHECK(std::abs(r.moments.p2p2p2p2 - edge.s2222) <= 1e-2);
  }
}

TEST_CASE("quadrature_estimate") {
  const double s = s1111_from_lambda_2d(solve_lambda_2d(0.75));
  CHECK(quadrature_estimate(0.75, s) ==
        doctest::Approx(40.0 * kPi * std::sqrt(0.25 / (0.75 - s))).epsilon(1e-15));

  const double n99 = quadrature_estimate(0.99, s1111_from_lambda_2d(solve_lambda_2d(0.99)));
  const double n9999 =
      quadrature_estimate(0.9999, s1111_from_lambda_2d(solve_lambda_2d(0.9999)));
  CHECK(n9999 / n99 == doctest::Approx(10.0).epsilon(0.2));

  CHECK_THROWS_AS(quadrature_estimate(0.5, 0.375), DomainError);
  CHECK_THROWS_AS(quadrature_estimate(0.8, 0.8), DomainError);
}

TEST_SUITE_END();
