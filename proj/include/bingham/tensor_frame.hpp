#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "bingham/bingham_solve.hpp"
#include "bingham/cheb_map.hpp"

namespace bingham {

/// Symmetric d x d tensor, d = 2 or 3, stored as the upper triangle in
/// row-major order: (xx, xy, yy) in 2D and (xx, xy, xz, yy, yz, zz) in 3D.
struct SymTensor {
  int dim = 3;
  std::array<double, 6> v{};

  static constexpr int components(int d) { return d * (d + 1) / 2; }
  static constexpr int index(int d, int i, int j) {
    if (i > j) {
      const int t = i;
      i = j;
      j = t;
    }
    return d == 2 ? i + j : (i == 0 ? j : i + j + 1);
  }

  double operator()(int i, int j) const { return v[index(dim, i, j)]; }
  double& operator()(int i, int j) { return v[index(dim, i, j)]; }

  static SymTensor identity(int d);
  double trace() const;
};

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Descending eigenvalues and the rotation whose columns are the matching
/// unit eigenvectors. Only the leading dim x dim block of `omega` is used.
struct EigenFrame {
  int dim = 3;
  std::array<double, 3> mu{};
  Mat3 omega{};

  std::array<double, 3> vector(int k) const { return {omega[0][k], omega[1][k], omega[2][k]}; }
};

/// Nonzero entries S~_iijj of the rotated fourth moment, kept as a symmetric
/// array q[i][j] = S~_iijj. Index 2 is unused in 2D.
struct DiagFourthMoment {
  int dim = 3;
  Mat3 q{};

  double s1111() const { return q[0][0]; }
  double s1122() const { return q[0][1]; }
  double s2222() const { return q[1][1]; }
};

/// Closed-form 2x2 decomposition of a normalized tensor.
EigenFrame eig2(const SymTensor& d);

/// 3x3 decomposition of a normalized tensor: Newton on the characteristic
/// polynomial for the largest root, quadratic formula for the other two,
/// cross-product eigenvectors for the best-separated root and a 2x2
/// rotation on its orthogonal complement. det(omega) = +1.
EigenFrame eig3(const SymTensor& d);

EigenFrame eigen_frame(const SymTensor& d);

/// Builds S~ from the 2d - 3 mapped entries using sum_k S~_iikk = mu_i.
/// `partial` needs q[0][0] in 2D and q[0][0], q[0][1], q[1][1] in 3D.
DiagFourthMoment complete_fourth(const std::array<double, 3>& mu, const DiagFourthMoment& partial);

/// Omega (S~ : Omega^T T Omega) Omega^T.
SymTensor contract_rotate(const EigenFrame& frame, const DiagFourthMoment& s, const SymTensor& t);

/// Map lookup and trace completion for the eigenvalues `mu` of D/c. A
/// smallest eigenvalue in [-feasibility_tol, 0) is projected to zero (and mu
/// renormalized in place); below that DomainError is thrown.
DiagFourthMoment closure_moments(std::array<double, 3>& mu, int dim, const ChebMap& map,
                                 double feasibility_tol = 1e-12);

/// closure_moments over many points at once (3D map lookups are blocked).
/// The first infeasible point throws.
void closure_moments_batch(std::span<std::array<double, 3>> mu, int dim, const ChebMap& map,
                           std::span<DiagFourthMoment> out, double feasibility_tol = 1e-12);

struct ClosureOutput {
  SymTensor s_dot_t;
  EigenFrame frame;
  DiagFourthMoment s;
};

/// Bingham closure S_B : (E + 2 zeta D) for an unnormalized D with trace c.
/// Eigenvalues of D/c that leave the feasible set by at most
/// `feasibility_tol` are projected back; larger violations throw DomainError.
ClosureOutput closure_eval(const SymTensor& d, double c, double zeta, const SymTensor& e,
                           const ChebMap& map, double feasibility_tol = 1e-12);

/// Trace-free Bingham eigenvalues recovered from the second and fourth
/// moments. `reduced` carries the same exponent in the lambda'_i convention
/// used by the solvers (2D: lambda1 = lambda_1 - lambda_2).
struct RecoveredBingham {
  int dim = 3;
  std::array<double, 3> lambda{};
  BinghamParams reduced;
};

RecoveredBingham recover_B(const std::array<double, 3>& mu, const DiagFourthMoment& s, double c,
                           int dim);

struct ScalarOrder {
  double s = 0.0;
  std::array<double, 3> director{};
};

/// s = d (mu1 - 1/d) / (d - 1) of D/c; the director is the leading
/// eigenvector with its first nonzero component made positive.
ScalarOrder scalar_order(const SymTensor& d, double c);

}  // namespace bingham
