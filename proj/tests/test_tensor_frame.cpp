#include <doctest.h>

#include <cmath>
#include <random>

#include "bingham/errors.hpp"
#include "bingham/tensor_frame.hpp"
#include "frame_helpers.hpp"
#include "map_fixture.hpp"
#include "oracles.hpp"

using namespace bingham;

namespace {

using oracle::Mat3;
using namespace helpers;

const ChebMap& map3() {
  static const ChebMap m = fixture::map_3d();
  return m;
}

const ChebMap& map2() {
  static const ChebMap m = fixture::map_2d();
  return m;
}

double reconstruction_error(const SymTensor& d, const EigenFrame& f) {
  Mat3 o{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) o[i][j] = f.omega[i][j];
  }
  return max_diff(compose(o, f.mu, d.dim), d);
}

double orthonormality_error(const EigenFrame& f) {
  double m = 0.0;
  for (int a = 0; a < f.dim; ++a) {
    for (int b = 0; b < f.dim; ++b) {
      double dot = 0.0;
      for (int i = 0; i < f.dim; ++i) dot += f.omega[i][a] * f.omega[i][b];
      m = std::max(m, std::abs(dot - (a == b ? 1.0 : 0.0)));
    }
  }
  return m;
}

// Full S~_iijj of the Bingham distribution for normalized eigenvalues mu by
// Newton solve plus nested adaptive quadrature.
Mat3 dense_fourth(const std::array<double, 3>& mu) {
  const Solve3DResult r = solve_lambda_3d({mu[0], mu[1]});
  const oracle::DenseSphere ref =
      oracle::dense_sphere_moments(r.params.lambda1, r.params.lambda2, 1e-14);
  Mat3 q{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) q[i][j] = ref.fourth[i][j];
  }
  return q;
}

}  // namespace

TEST_SUITE_BEGIN("tensor_frame");

TEST_CASE("eig2") {
  SymTensor half = SymTensor::identity(2);
  half.v = {0.5, 0.0, 0.5};
  const EigenFrame iso = eig2(half);
  CHECK(iso.mu[0] == 0.5);
  CHECK(iso.mu[1] == 0.5);
  CHECK(iso.omega[0][0] == 1.0);
  CHECK(iso.omega[1][1] == 1.0);
  CHECK(iso.omega[0][1] == 0.0);

  SymTensor diag;
  diag.dim = 2;
  diag.v = {0.9, 0.0, 0.1};
  const EigenFrame f = eig2(diag);
  CHECK(f.mu[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(std::abs(f.omega[0][0] - 1.0) <= 1e-15);
  CHECK(std::abs(f.omega[1][0]) <= 1e-15);

  std::mt19937_64 rng(21);
  for (int i = 0; i < 1000; ++i) {
    const SymTensor d = compose(random_rotation(rng, 2), random_spectrum(rng, 2), 2);
    const EigenFrame e = eig2(d);
    // Quadratic formula on the 2x2 characteristic polynomial.
    const double half_gap = std::sqrt(0.25 * (d(0, 0) - d(1, 1)) * (d(0, 0) - d(1, 1)) +
                                      d(0, 1) * d(0, 1));
    const double mean = 0.5 * (d(0, 0) + d(1, 1));
    CHECK(std::abs(e.mu[0] - (mean + half_gap)) <= 1e-14);
    CHECK(std::abs(e.mu[1] - (mean - half_gap)) <= 1e-14);
    CHECK(reconstruction_error(d, e) <= 1e-14);
    CHECK(orthonormality_error(e) <= 1e-14);
  }

  SymTensor bad;
  bad.dim = 2;
  bad.v = {0.5, std::nan(""), 0.5};
  CHECK_THROWS_AS(eig2(bad), DomainError);
}

TEST_CASE("eig3 simple inputs") {
  SymTensor third = SymTensor::identity(3);
  for (int i = 0; i < 3; ++i) third(i, i) = 1.0 / 3.0;
  const EigenFrame iso = eig3(third);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(iso.mu[i] - 1.0 / 3.0) <= 1e-12);
  CHECK(orthonormality_error(iso) <= 1e-12);
  CHECK(reconstruction_error(third, iso) <= 1e-12);

  SymTensor diag = SymTensor::identity(3);
  diag(0, 0) = 0.5;
  diag(1, 1) = 0.3;
  diag(2, 2) = 0.2;
  const EigenFrame f = eig3(diag);
  CHECK(std::abs(f.mu[0] - 0.5) <= 1e-14);
  CHECK(std::abs(f.mu[1] - 0.3) <= 1e-14);
  CHECK(std::abs(f.mu[2] - 0.2) <= 1e-14);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(std::abs(f.omega[k][k]) - 1.0) <= 1e-12);
}

TEST_CASE("eig3 against Jacobi") {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 1000; ++i) {
    const SymTensor d = compose(random_rotation(rng, 3), random_spectrum(rng, 3), 3);
    const EigenFrame e = eig3(d);
    const auto [mu, vec] = oracle::jacobi_eigen(to_mat(d));
    for (int k = 0; k < 3; ++k) CHECK(std::abs(e.mu[k] - mu[k]) <= 1e-11);
    CHECK(e.mu[0] >= e.mu[1]);
    CHECK(e.mu[1] >= e.mu[2]);
    CHECK(reconstruction_error(d, e) <= 1e-10);
    CHECK(orthonormality_error(e) <= 1e-12);
  }
}

TEST_CASE("eig3 near-degenerate spectra") {
  std::mt19937_64 rng(23);
  for (double gap : {0.0, 1e-15, 1e-13, 1e-10, 1e-7}) {
    for (int i = 0; i < 50; ++i) {
      const double a = 0.2 + 0.2 * std::uniform_real_distribution<double>()(rng);
      const std::array<double, 3> top{a + gap, a, 1.0 - 2.0 * a - gap};
      std::array<double, 3> mu = top;
      std::sort(mu.begin(), mu.end(), std::greater<>());
      const SymTensor d = compose(random_rotation(rng, 3), mu, 3);
      const EigenFrame e = eig3(d);
      CAPTURE(gap);
      CHECK(reconstruction_error(d, e) <= 1e-10);
      CHECK(orthonormality_error(e) <= 1e-12);
    }
  }
}

TEST_CASE("complete_fourth") {
  DiagFourthMoment partial;
  partial.q[0][0] = 0.2;
  partial.q[0][1] = 1.0 / 15.0;
  partial.q[1][1] = 0.2;
  const DiagFourthMoment iso = complete_fourth({1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, partial);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      CHECK(std::abs(iso.q[i][j] - (i == j ? 0.2 : 1.0 / 15.0)) <= 1e-15);
    }
  }

  DiagFourthMoment aligned2;
  aligned2.dim = 2;
  aligned2.q[0][0] = 1.0;
  const DiagFourthMoment a = complete_fourth({1.0, 0.0, 0.0}, aligned2);
  CHECK(a.q[0][1] == 0.0);
  CHECK(a.q[1][0] == 0.0);
  CHECK(a.q[1][1] == 0.0);

  DiagFourthMoment inconsistent;
  inconsistent.q[0][0] = 0.6;
  inconsistent.q[0][1] = 0.1;
  inconsistent.q[1][1] = 0.1;
  CHECK_THROWS_AS(complete_fourth({0.5, 0.3, 0.2}, inconsistent), DomainError);

  std::mt19937_64 rng(24);
  for (int i = 0; i < 5; ++i) {
    std::array<double, 3> mu = random_spectrum(rng, 3);
    if (mu[2] < 0.02) continue;
    const DiagFourthMoment s = closure_moments(mu, 3, map3());
    const Mat3 ref = dense_fourth(mu);
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) CHECK(std::abs(s.q[a][b] - ref[a][b]) <= 1e-10);
      double row = 0.0;
      for (int b = 0; b < 3; ++b) row += s.q[a][b];
      CHECK(std::abs(row - mu[a]) <= 1e-10);
    }
  }
}

TEST_CASE("contract_rotate") {
  std::mt19937_64 rng(25);
  for (int dim : {2, 3}) {
    for (int i = 0; i < 50; ++i) {
      std::array<double, 3> mu = random_spectrum(rng, dim);
      const DiagFourthMoment s = closure_moments(mu, dim, dim == 3 ? map3() : map2());
      const Mat3 r = random_rotation(rng, dim);
      const SymTensor d = compose(r, mu, dim);
      const EigenFrame f = eigen_frame(d);

      // T = I gives S:I = D.
      const SymTensor id = SymTensor::identity(dim);
      CHECK(max_diff(contract_rotate(f, s, id), d) <= 1e-12);

      EigenFrame plain;
      plain.dim = dim;
      plain.mu = mu;
      for (int k = 0; k < 3; ++k) plain.omega[k][k] = 1.0;
      const SymTensor diag = contract_rotate(plain, s, id);
      for (int k = 0; k < dim; ++k) CHECK(std::abs(diag(k, k) - mu[k]) <= 1e-12);

      SymTensor t = random_trace_free(rng, dim);
      t(0, 0) += 0.3;
      const SymTensor got = contract_rotate(f, s, t);
      const Mat3 ref = oracle::explicit_rotated_contraction(f.omega, s.q, to_mat(t), dim);
      CHECK(max_diff(got, to_sym(ref, dim)) <= 1e-12);
    }
  }
}

TEST_CASE("closure_eval special states") {
  const double zeta = 1.3;
  std::mt19937_64 rng(26);
  for (int dim : {2, 3}) {
    const ChebMap& map = dim == 3 ? map3() : map2();
    const double c = 1.7;
    SymTensor d = SymTensor::identity(dim);
    for (int k = 0; k < dim; ++k) d(k, k) = c / dim;
    const SymTensor e = random_trace_free(rng, dim);
    const ClosureOutput out = closure_eval(d, c, zeta, e, map);
    // Isotropic fourth moment: S:T = a (tr T I + 2 T) with a = 1/15 or 1/8.
    const double a = dim == 3 ? 1.0 / 15.0 : 1.0 / 8.0;
    SymTensor t = e;
    for (int k = 0; k < SymTensor::components(dim); ++k) t.v[k] += 2.0 * zeta * d.v[k];
    for (int i = 0; i < dim; ++i) {
      for (int j = i; j < dim; ++j) {
        const double expect = c * a * ((i == j ? t.trace() : 0.0) + 2.0 * t(i, j));
        CHECK(std::abs(out.s_dot_t(i, j) - expect) <= 1e-12);
      }
    }

    SymTensor aligned;
    aligned.dim = dim;
    aligned(0, 0) = 1.0;
    SymTensor zero;
    zero.dim = dim;
    const ClosureOutput al = closure_eval(aligned, 1.0, zeta, zero, map);
    for (int i = 0; i < dim; ++i) {
      for (int j = i; j < dim; ++j) {
        CHECK(std::abs(al.s_dot_t(i, j) - (i == 0 && j == 0 ? 2.0 * zeta : 0.0)) <= 1e-10);
      }
    }
  }
}

TEST_CASE("closure_eval against composed oracle") {
  std::mt19937_64 rng(27);
  int checked = 0;
  while (checked < 5) {
    std::array<double, 3> mu = random_spectrum(rng, 3);
    if (mu[2] < 0.02 || mu[0] - mu[1] < 1e-3 || mu[1] - mu[2] < 1e-3) continue;
    const double c = 0.8;
    const double zeta = 2.0;
    const SymTensor d = compose(random_rotation(rng, 3), {c * mu[0], c * mu[1], c * mu[2]}, 3);
    const SymTensor e = random_trace_free(rng, 3);
    const ClosureOutput out = closure_eval(d, c, zeta, e, map3());

    SymTensor dn = d;
    for (double& x : dn.v) x /= c;
    const auto [mu_ref, vec] = oracle::jacobi_eigen(to_mat(dn));
    const Mat3 q = dense_fourth(mu_ref);
    SymTensor t = e;
    for (int k = 0; k < 6; ++k) t.v[k] += 2.0 * zeta * d.v[k];
    Mat3 ref = oracle::explicit_rotated_contraction(vec, q, to_mat(t), 3);
    for (auto& row : ref) {
      for (double& x : row) x *= c;
    }
    CHECK(max_diff(out.s_dot_t, to_sym(ref, 3)) <= 1e-10);
    ++checked;
  }
}

TEST_CASE("closure_eval is symmetric and finite") {
  std::mt19937_64 rng(28);
  for (int i = 0; i < 10000; ++i) {
    const int dim = i % 2 == 0 ? 3 : 2;
    const SymTensor d = compose(random_rotation(rng, dim), random_spectrum(rng, dim), dim);
    const ClosureOutput out =
        closure_eval(d, 1.0, 1.0, random_trace_free(rng, dim), dim == 3 ? map3() : map2());
    const Mat3 m = to_mat(out.s_dot_t);
    for (int a = 0; a < dim; ++a) {
      for (int b = 0; b < dim; ++b) {
        CHECK(std::isfinite(m[a][b]));
        CHECK(std::abs(m[a][b] - m[b][a]) <= 1e-13);
      }
    }
  }
}

TEST_CASE("closure_eval frame independence") {
  std::mt19937_64 rng(29);
  for (int dim : {2, 3}) {
    const ChebMap& map = dim == 3 ? map3() : map2();
    for (int i = 0; i < 100; ++i) {
      const double c = 0.5 + std::uniform_real_distribution<double>()(rng);
      std::array<double, 3> mu = random_spectrum(rng, dim);
      for (double& x : mu) x *= c;
      const SymTensor d = compose(random_rotation(rng, dim), mu, dim);
      const SymTensor e = random_trace_free(rng, dim);
      const Mat3 r = random_rotation(rng, dim);
      const SymTensor lhs = closure_eval(rotate(r, d), c, 1.5, rotate(r, e), map).s_dot_t;
      const SymTensor rhs = rotate(r, closure_eval(d, c, 1.5, e, map).s_dot_t);
      CHECK(max_diff(lhs, rhs) <= 1e-10);
    }
  }
}

TEST_CASE("closure_eval is continuous at repeated eigenvalues") {
  std::mt19937_64 rng(30);
  for (int i = 0; i < 100; ++i) {
    const Mat3 r = random_rotation(rng, 3);
    const SymTensor e = random_trace_free(rng, 3);
    const double a = 0.2 + 0.25 * std::uniform_real_distribution<double>()(rng);
    // Repeated top pair and repeated bottom pair.
    for (auto [exact, split] :
         {std::pair{std::array<double, 3>{a, a, 1.0 - 2.0 * a},
                    std::array<double, 3>{a + 0.5e-13, a - 0.5e-13, 1.0 - 2.0 * a}},
          std::pair{std::array<double, 3>{1.0 - 2.0 * a, a, a},
                    std::array<double, 3>{1.0 - 2.0 * a, a + 0.5e-13, a - 0.5e-13}}}) {
      std::sort(exact.begin(), exact.end(), std::greater<>());
      std::sort(split.begin(), split.end(), std::greater<>());
      const SymTensor s0 = closure_eval(compose(r, exact, 3), 1.0, 1.0, e, map3()).s_dot_t;
      const SymTensor s1 = closure_eval(compose(r, split, 3), 1.0, 1.0, e, map3()).s_dot_t;
      CHECK(max_diff(s0, s1) <= 1e-8);
    }
  }
}

TEST_CASE("closure_eval rejects infeasible input") {
  SymTensor d = SymTensor::identity(3);
  d(0, 0) = 0.7;
  d(1, 1) = 0.4;
  d(2, 2) = -0.1;
  SymTensor e;
  CHECK_THROWS_AS(closure_eval(d, 1.0, 1.0, e, map3()), DomainError);
}

TEST_CASE("recover_B") {
  std::array<double, 3> third{1.0 / 3, 1.0 / 3, 1.0 / 3};
  const DiagFourthMoment iso_s = closure_moments(third, 3, map3());
  const RecoveredBingham iso = recover_B(third, iso_s, 1.0, 3);
  for (double l : iso.lambda) CHECK(l == 0.0);

  std::array<double, 3> mu2{0.75, 0.25, 0.0};
  const DiagFourthMoment s2 = closure_moments(mu2, 2, map2());
  const RecoveredBingham b2 = recover_B(mu2, s2, 1.0, 2);
  CHECK(std::abs((b2.lambda[0] - b2.lambda[1]) - 2.0 * solve_lambda_2d(0.75)) <= 1e-10);

  std::mt19937_64 rng(31);
  for (int i = 0; i < 20; ++i) {
    std::array<double, 3> mu = random_spectrum(rng, 3);
    if (mu[2] < 0.01 || mu[0] - mu[2] < 1e-3) continue;
    const DiagFourthMoment s = closure_moments(mu, 3, map3());
    const RecoveredBingham b = recover_B(mu, s, 1.0, 3);
    const Solve3DResult ref = solve_lambda_3d({mu[0], mu[1]});
    CHECK(std::abs(b.reduced.lambda1 - ref.params.lambda1) <= 1e-9 * (1.0 + ref.params.lambda1));
    CHECK(std::abs(b.reduced.lambda2 - ref.params.lambda2) <= 1e-9 * (1.0 + ref.params.lambda1));
    CHECK(std::abs(b.lambda[0] + b.lambda[1] + b.lambda[2]) <= 1e-12 * (1.0 + b.reduced.lambda1));

    const SphereMoments m = sphere_moments(b.reduced, resolved_phi_nodes(b.reduced.lambda2),
                                           kPrecomputeThetaNodes);
    CHECK(std::abs(m.p1p1 - mu[0]) <= 1e-9);
    CHECK(std::abs(m.p2p2 - mu[1]) <= 1e-9);
  }
}

TEST_CASE("scalar_order") {
  for (int dim : {2, 3}) {
    SymTensor iso = SymTensor::identity(dim);
    for (int k = 0; k < dim; ++k) iso(k, k) = 2.0 / dim;
    CHECK(std::abs(scalar_order(iso, 2.0).s) <= 1e-15);
    SymTensor aligned;
    aligned.dim = dim;
    aligned(1, 1) = 2.0;
    const ScalarOrder so = scalar_order(aligned, 2.0);
    CHECK(so.s == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(so.director[1] - 1.0) <= 1e-14);
  }
  SymTensor d = SymTensor::identity(3);
  d(0, 0) = 0.3;
  d(1, 1) = 0.5;
  d(2, 2) = 0.2;
  const ScalarOrder so = scalar_order(d, 1.0);
  CHECK(so.s == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(std::abs(so.director[1] - 1.0) <= 1e-12);

  // Director sign: first nonzero component positive.
  std::mt19937_64 rng(32);
  for (int i = 0; i < 100; ++i) {
    const SymTensor t = compose(random_rotation(rng, 3), random_spectrum(rng, 3), 3);
    const ScalarOrder o = scalar_order(t, 1.0);
    const int first = std::abs(o.director[0]) > 0 ? 0 : (std::abs(o.director[1]) > 0 ? 1 : 2);
    CHECK(o.director[first] > 0.0);
  }
}

TEST_SUITE_END();
