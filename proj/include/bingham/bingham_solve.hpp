#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "bingham/special_functions.hpp"

namespace bingham {

/// Diagonal Bingham exponents relative to the last axis, lambda'_i =
/// lambda_i - lambda_d, so the density is proportional to
/// exp(sum_i lambda'_i p_i^2). In 2D only lambda1 is used; it equals twice the
/// coefficient of the exp(lambda cos 2theta) form.
struct BinghamParams {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  /// log of the normalization integral of exp(sum lambda'_i p_i^2) over the
  /// unit sphere (circle in 2D), shift included.
  double log_z = 0.0;
};

/// The two largest eigenvalues of a normalized 3D second-moment tensor.
struct TrianglePoint {
  double mu1 = 1.0 / 3.0;
  double mu2 = 1.0 / 3.0;
  double mu3() const { return 1.0 - mu1 - mu2; }
};

/// Coordinates on the Chebyshev square [-1, 1]^2.
struct SquarePoint {
  double nu1 = 0.0;
  double nu2 = 0.0;
};

/// Nonzero diagonal fourth moments needed by the 3D map, in the ordered frame.
struct FourthMomentTriple {
  double s1111 = 0.0;
  double s1122 = 0.0;
  double s2222 = 0.0;
};

// ---------------------------------------------------------------------------
// Two dimensions: exp(lambda cos 2theta) on the circle.

/// Solves (1 + I1/I0)/2 = mu1 for lambda by safeguarded Newton.
/// mu1 = 1 returns +infinity. `guess`, when given, warm-starts the iteration.
double solve_lambda_2d(double mu1, std::optional<double> guess = std::nullopt);

/// (3 + 4 I1/I0 + I2/I0)/8, equal to <cos^4 theta>; 1 for lambda = +inf.
double s1111_from_lambda_2d(double lambda);

/// log of the integral of exp(lambda cos 2theta) over [0, 2pi).
double log_z_2d(double lambda);

// ---------------------------------------------------------------------------
// Triangle <-> square domain transform.

/// Projects eigenvalue pairs that violate the triangle constraints by at most
/// `tol` onto the triangle; larger violations throw DomainError.
TrianglePoint clamp_to_triangle(TrianglePoint p, double tol = 1e-12);

/// Points with mu1 - mu3 at or below this are treated as exactly isotropic;
/// rounding keeps (1/3, 1/3) itself from landing on the corner.
inline constexpr double kIsotropicGap = 1e-14;

/// H = G o A. Throws DomainError at the isotropic corner (1/3, 1/3).
SquarePoint triangle_to_square(TrianglePoint p);

/// H^{-1} = A^{-1} o G^{-1}; the whole edge nu1 = -1 maps to (1/3, 1/3).
TrianglePoint square_to_triangle(SquarePoint q);

// ---------------------------------------------------------------------------
// Three dimensions: product quadrature on the sphere.

/// Normalized Bingham moments in the ordered frame.
struct SphereMoments {
  double p1p1 = 0.0;
  double p2p2 = 0.0;
  double p1p1p1p1 = 0.0;
  double p1p1p2p2 = 0.0;
  double p2p2p2p2 = 0.0;
  double log_z = 0.0;
};

/// Trapezoid (phi) x Gauss (theta) rule in the permuted coordinates
/// p = (cos theta, sin phi sin theta, cos phi sin theta), with the node
/// symmetries folded so each distinct (sin^2 theta, sin^2 phi) pair is
/// visited once.
class SphereQuadrature {
 public:
  SphereQuadrature(int n_phi, int n_theta);

  int n_phi() const { return n_phi_; }
  int n_theta() const { return n_theta_; }

  SphereMoments moments(double lambda1, double lambda2) const;

  /// Shared, lazily built rules; construction of a 4096-node Gauss rule is
  /// not free, and the precompute reuses the same handful of sizes.
  static std::shared_ptr<const SphereQuadrature> cached(int n_phi, int n_theta);

 private:
  int n_phi_;
  int n_theta_;
  // phi direction: distinct sin^2 and cos^2 values with multiplicities.
  std::vector<double> sin2_phi_;
  std::vector<double> cos2_phi_;
  std::vector<double> phi_mult_;
  // theta direction: distinct cos^2 and sin^2 values with folded weights.
  std::vector<double> cos2_theta_;
  std::vector<double> sin2_theta_;
  std::vector<double> theta_weight_;
};

/// Production quadrature sizes for the 3D precompute.
inline constexpr int kPrecomputePhiNodes = 1024;
inline constexpr int kPrecomputeThetaNodes = 4096;

/// Moments of exp(lambda'_1 p1^2 + lambda'_2 p2^2) using the product rule.
SphereMoments sphere_moments(const BinghamParams& params, int n_phi, int n_theta);

/// Trapezoid node count in phi that keeps the aliasing error of the phi
/// integral below double rounding for the given lambda'_2 (never less than
/// `floor`). Returns a power of two.
int resolved_phi_nodes(double lambda2, int floor = kPrecomputePhiNodes);

struct Solve3DOptions {
  int n_phi = kPrecomputePhiNodes;
  int n_theta = kPrecomputeThetaNodes;
  /// Raise n_phi when the converged lambda'_2 needs more phi resolution.
  bool refine_phi = true;
  /// Target residual. A line search that stalls within 10x of it is accepted:
  /// that is the rounding floor of the moment sums next to the planar edge.
  double tolerance = 1e-13;
  int max_iterations = 200;
  int max_halvings = 30;
};

struct Solve3DResult {
  BinghamParams params;
  SphereMoments moments;
  int iterations = 0;
  double residual = 0.0;
  int n_phi = 0;
};

/// Initial guess from the quadratic-closure surrogate S_iijj ~ mu_i mu_j
/// inserted into the integration-by-parts identity:
/// lambda'_i = (1/mu_3 - 1/mu_i) / 2.
BinghamParams surrogate_guess_3d(TrianglePoint p);

/// Damped Newton solve of the two moment constraints for (lambda'_1,
/// lambda'_2). Must not be called on the planar edge mu1 + mu2 = 1.
Solve3DResult solve_lambda_3d(TrianglePoint p, const Solve3DOptions& options = {},
                              std::optional<BinghamParams> guess = std::nullopt);

/// Fourth moments on the planar edge mu3 = 0, where the distribution
/// collapses onto the p1-p2 circle and the 2D map applies to lambda'_1 -
/// lambda'_2.
FourthMomentTriple planar_aligned_moments(double mu1);

/// Number of trapezoid nodes needed to put ten nodes inside one standard
/// deviation of the 2D distribution: 40 pi sqrt((mu1 - 1/2)/(mu1 - S1111)).
double quadrature_estimate(double mu1, double s1111);

}  // namespace bingham
