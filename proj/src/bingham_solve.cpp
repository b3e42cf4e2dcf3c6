#include "bingham/bingham_solve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <utility>

#include "bingham/errors.hpp"

namespace bingham {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string point_str(TrianglePoint p) {
  std::ostringstream os;
  os.precision(17);
  os << "(" << p.mu1 << ", " << p.mu2 << ")";
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Two dimensions

double solve_lambda_2d(double mu1, std::optional<double> guess) {
  if (!std::isfinite(mu1) || mu1 < 0.5 - 1e-12 || mu1 > 1.0 + 1e-12) {
    throw DomainError("solve_lambda_2d: mu1 must lie in [1/2, 1]");
  }
  mu1 = std::clamp(mu1, 0.5, 1.0);
  if (mu1 == 1.0) return std::numeric_limits<double>::infinity();
  if (mu1 == 0.5) return 0.0;

  double lambda = guess.value_or((mu1 - 0.5) / (2.0 * (mu1 - mu1 * mu1)));
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) lambda = 0.0;

  // F is increasing in lambda with F(0) < 0, so [lo, hi] always brackets the
  // root and Newton steps that leave it are replaced by bisection.
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 100; ++iter) {
    const double r1 = bessel_ratio(1, lambda);
    const double r2 = bessel_ratio(2, lambda);
    const double f = 0.5 * (1.0 + r1) - mu1;
    const double df = 0.25 * (1.0 - 2.0 * r1 * r1 + r2);
    if (std::abs(f) <= 1e-14) {
      // One more step squares the error; keep it only if it helps.
      if (f != 0.0 && df > 0.0) {
        const double polished = lambda - f / df;
        if (polished >= 0.0) {
          const double fp = 0.5 * (1.0 + bessel_ratio(1, polished)) - mu1;
          if (std::abs(fp) < std::abs(f)) return polished;
        }
      }
      return lambda;
    }
    if (f < 0.0) {
      lo = lambda;
    } else {
      hi = lambda;
    }
    double next = df > 0.0 ? lambda - f / df : -1.0;
    if (!(next > lo && next < hi)) {
      next = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * std::max(lambda, 1.0);
    }
    lambda = next;
  }
  throw ConvergenceError("solve_lambda_2d: no convergence for mu1 = " + std::to_string(mu1));
}

double s1111_from_lambda_2d(double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("s1111_from_lambda_2d: lambda must be >= 0");
  if (std::isinf(lambda)) return 1.0;
  return (3.0 + 4.0 * bessel_ratio(1, lambda) + bessel_ratio(2, lambda)) / 8.0;
}

double log_z_2d(double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("log_z_2d: lambda must be >= 0");
  return std::log(kTwoPi) + log_bessel_i0(lambda);
}

// ---------------------------------------------------------------------------
// Domain transform

TrianglePoint clamp_to_triangle(TrianglePoint p, double tol) {
  if (!std::isfinite(p.mu1) || !std::isfinite(p.mu2)) {
    throw DomainError("eigenvalue pair is not finite");
  }
  const double v_order = p.mu2 - p.mu1;
  const double v_planar = p.mu1 + p.mu2 - 1.0;
  const double v_smallest = (1.0 - p.mu1 - p.mu2) - p.mu2;
  if (v_order > tol || v_planar > tol || v_smallest > tol) {
    throw DomainError("eigenvalue pair " + point_str(p) + " lies outside the feasible triangle");
  }
  if (v_order > 0.0) p.mu1 = p.mu2 = 0.5 * (p.mu1 + p.mu2);
  if (p.mu1 + p.mu2 > 1.0) {
    const double excess = 0.5 * (p.mu1 + p.mu2 - 1.0);
    p.mu1 -= excess;
    p.mu2 = 1.0 - p.mu1;
  }
  if (1.0 - p.mu1 - p.mu2 > p.mu2) p.mu2 = 0.5 * (1.0 - p.mu1);
  return p;
}

SquarePoint triangle_to_square(TrianglePoint p) {
  const double a1 = p.mu1 - p.mu2;
  const double a2 = 2.0 * p.mu1 + 4.0 * p.mu2 - 2.0;
  const double sum = a1 + a2;
  if (sum == 0.0) {
    throw DomainError("triangle_to_square: the isotropic corner has no image");
  }
  SquarePoint q;
  q.nu1 = std::clamp(2.0 * sum - 1.0, -1.0, 1.0);
  q.nu2 = std::clamp((a1 - a2) / sum, -1.0, 1.0);
  return q;
}

TrianglePoint square_to_triangle(SquarePoint q) {
  const double a1 = 0.25 * (1.0 + q.nu1) * (1.0 + q.nu2);
  const double a2 = 0.25 * (1.0 + q.nu1) * (1.0 - q.nu2);
  TrianglePoint p;
  p.mu1 = 2.0 * a1 / 3.0 + a2 / 6.0 + 1.0 / 3.0;
  p.mu2 = -a1 / 3.0 + a2 / 6.0 + 1.0 / 3.0;
  return p;
}

// ---------------------------------------------------------------------------
// Sphere quadrature

SphereQuadrature::SphereQuadrature(int n_phi, int n_theta)
    : n_phi_(n_phi), n_theta_(n_theta) {
  const QuadratureRule phi = trapezoid_rule(n_phi);
  const QuadratureRule theta = gauss_polar_rule(n_theta);
  const double w_phi = phi.weights[0];

  // sin^2 phi has period pi and is symmetric about pi/2.
  if (n_phi % 4 == 0) {
    const int quarter = n_phi / 4;
    for (int k = 0; k <= quarter; ++k) {
      double s = std::sin(phi.nodes[k]);
      double c = std::cos(phi.nodes[k]);
      if (k == 0) s = 0.0, c = 1.0;
      if (k == quarter) s = 1.0, c = 0.0;
      sin2_phi_.push_back(s * s);
      cos2_phi_.push_back(c * c);
      phi_mult_.push_back((k == 0 || k == quarter ? 2.0 : 4.0) * w_phi);
    }
  } else {
    for (int k = 0; k < n_phi / 2; ++k) {
      const double s = std::sin(phi.nodes[k]);
      const double c = std::cos(phi.nodes[k]);
      sin2_phi_.push_back(s * s);
      cos2_phi_.push_back(c * c);
      phi_mult_.push_back(2.0 * w_phi);
    }
  }

  // Gauss nodes come in +-x pairs.
  for (int j = 0; j < n_theta / 2; ++j) {
    const double x = theta.cosines[j];
    cos2_theta_.push_back(x * x);
    sin2_theta_.push_back((1.0 - x) * (1.0 + x));
    theta_weight_.push_back(2.0 * theta.weights[j]);
  }
  if (n_theta % 2 == 1) {
    cos2_theta_.push_back(0.0);
    sin2_theta_.push_back(1.0);
    theta_weight_.push_back(theta.weights[n_theta / 2]);
  }
}

SphereMoments SphereQuadrature::moments(double lambda1, double lambda2) const {
  // The exponent lambda1 p1^2 + lambda2 p2^2 - shift is written as
  // alpha + beta sin^2 phi + gamma cos^2 phi with every piece <= 0, so no
  // large terms cancel and nothing overflows.
  const double shift = std::max({lambda1, lambda2, 0.0});
  const std::size_t n_inner = sin2_phi_.size();
  const double* q = sin2_phi_.data();
  const double* c = cos2_phi_.data();
  const double* m = phi_mult_.data();

  // Outer sums run over thousands of rows; extended precision keeps their
  // rounding below the solver tolerance near the planar edge.
  long double z = 0.0L;
  long double m11 = 0.0L;
  long double m22 = 0.0L;
  long double m1111 = 0.0L;
  long double m1122 = 0.0L;
  long double m2222 = 0.0L;
  for (std::size_t j = 0; j < theta_weight_.size(); ++j) {
    const double x2 = cos2_theta_[j];
    const double s = sin2_theta_[j];
    double alpha;
    double beta;
    double gamma;
    if (shift == lambda1) {
      alpha = 0.0;
      beta = s * (lambda2 - lambda1);
      gamma = -lambda1 * s;
    } else if (shift == lambda2) {
      alpha = (lambda1 - lambda2) * x2;
      beta = 0.0;
      gamma = -lambda2 * s;
    } else {
      alpha = lambda1 * x2;
      beta = lambda2 * s;
      gamma = 0.0;
    }
    if (alpha + std::max(beta, gamma) < -746.0) continue;  // all terms underflow

    double a0 = 0.0;
    double a1 = 0.0;
    double a2 = 0.0;
    for (std::size_t k = 0; k < n_inner; ++k) {
      const double e = m[k] * std::exp(alpha + beta * q[k] + gamma * c[k]);
      a0 += e;
      a1 += e * q[k];
      a2 += e * q[k] * q[k];
    }
    const long double w = theta_weight_[j];
    const long double wx = w * x2;
    const long double ws = w * s;
    z += w * a0;
    m11 += wx * a0;
    m22 += ws * a1;
    m1111 += wx * x2 * a0;
    m1122 += wx * s * a1;
    m2222 += ws * s * a2;
  }

  SphereMoments out;
  out.p1p1 = static_cast<double>(m11 / z);
  out.p2p2 = static_cast<double>(m22 / z);
  out.p1p1p1p1 = static_cast<double>(m1111 / z);
  out.p1p1p2p2 = static_cast<double>(m1122 / z);
  out.p2p2p2p2 = static_cast<double>(m2222 / z);
  out.log_z = static_cast<double>(std::log(z)) + shift;
  return out;
}

std::shared_ptr<const SphereQuadrature> SphereQuadrature::cached(int n_phi, int n_theta) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::shared_ptr<const SphereQuadrature>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[{n_phi, n_theta}];
  if (!slot) slot = std::make_shared<const SphereQuadrature>(n_phi, n_theta);
  return slot;
}

SphereMoments sphere_moments(const BinghamParams& params, int n_phi, int n_theta) {
  if (n_phi < 4 || n_phi % 2 != 0 || n_theta < 2) {
    throw DomainError("sphere_moments: need n_phi >= 4 even and n_theta >= 2");
  }
  return SphereQuadrature::cached(n_phi, n_theta)->moments(params.lambda1, params.lambda2);
}

int resolved_phi_nodes(double lambda2, int floor) {
  // Trapezoid aliasing for exp(b cos 2phi) is ~ 2 I_{n/2}(b)/I_0(b)
  // ~ 2 exp(-(n/2)^2 / 2b) with b = lambda2/2; 12.5 sqrt(lambda2) nodes push
  // it under 1e-16.
  const double need = 12.5 * std::sqrt(std::max(lambda2, 0.0));
  int n = 4;
  while (n < floor || n < need) n *= 2;
  return n;
}

BinghamParams surrogate_guess_3d(TrianglePoint p) {
  BinghamParams g;
  const double mu3 = p.mu3();
  if (mu3 <= 0.0 || p.mu2 <= 0.0) return g;
  g.lambda1 = 0.5 * (1.0 / mu3 - 1.0 / p.mu1);
  g.lambda2 = 0.5 * (1.0 / mu3 - 1.0 / p.mu2);
  return g;
}

Solve3DResult solve_lambda_3d(TrianglePoint p, const Solve3DOptions& options,
                              std::optional<BinghamParams> guess) {
  p = clamp_to_triangle(p);
  if (p.mu3() <= 0.0) {
    throw DomainError("solve_lambda_3d: " + point_str(p) +
                      " is on the planar edge; use planar_aligned_moments");
  }

  int n_phi = options.n_phi;
  auto quad = SphereQuadrature::cached(n_phi, options.n_theta);
  BinghamParams lam = guess.value_or(surrogate_guess_3d(p));

  auto residual = [&](const SphereMoments& mom, double& f1, double& f2) {
    f1 = mom.p1p1 - p.mu1;
    f2 = mom.p2p2 - p.mu2;
    return std::hypot(f1, f2);
  };

  SphereMoments mom = quad->moments(lam.lambda1, lam.lambda2);
  double f1 = 0.0;
  double f2 = 0.0;
  double norm = residual(mom, f1, f2);

  // Switches to a finer phi rule if the current lambda'_2 needs one.
  auto refine = [&]() {
    const int want = options.refine_phi ? resolved_phi_nodes(lam.lambda2, n_phi) : n_phi;
    if (want == n_phi) return false;
    n_phi = want;
    quad = SphereQuadrature::cached(n_phi, options.n_theta);
    mom = quad->moments(lam.lambda1, lam.lambda2);
    norm = residual(mom, f1, f2);
    return true;
  };

  bool polishing = false;
  for (int iter = 0; iter <= options.max_iterations; ++iter) {
    if (norm <= options.tolerance && !polishing) {
      if (refine()) continue;
      // One extra full step, kept only if it lowers the residual further.
      polishing = true;
    }

    // Jacobian is the covariance of (p1^2, p2^2).
    const double j11 = mom.p1p1p1p1 - mom.p1p1 * mom.p1p1;
    const double j12 = mom.p1p1p2p2 - mom.p1p1 * mom.p2p2;
    const double j22 = mom.p2p2p2p2 - mom.p2p2 * mom.p2p2;
    const double det = j11 * j22 - j12 * j12;
    if (!(std::abs(det) > 0.0) || !std::isfinite(det)) break;
    const double d1 = -(j22 * f1 - j12 * f2) / det;
    const double d2 = -(-j12 * f1 + j11 * f2) / det;

    double t = 1.0;
    bool accepted = false;
    const int halvings = polishing ? 0 : options.max_halvings;
    for (int h = 0; h <= halvings; ++h, t *= 0.5) {
      const double l1 = lam.lambda1 + t * d1;
      const double l2 = lam.lambda2 + t * d2;
      const SphereMoments trial = quad->moments(l1, l2);
      double g1 = 0.0;
      double g2 = 0.0;
      const double trial_norm = residual(trial, g1, g2);
      if (trial_norm < norm) {
        lam.lambda1 = l1;
        lam.lambda2 = l2;
        mom = trial;
        f1 = g1;
        f2 = g2;
        norm = trial_norm;
        accepted = true;
        break;
      }
    }
    if (accepted && !polishing) continue;
    if (!polishing) {
      // Right at the planar edge lambda' is ~1e4 and its last useful update
      // is below one ulp, so a stalled line search within 10x of the target
      // has reached the rounding floor of the moment sums.
      if (norm > 10.0 * options.tolerance) break;
      if (refine()) continue;
    }
    lam.log_z = mom.log_z;
    return {lam, mom, iter + 1, norm, n_phi};
  }
  std::ostringstream os;
  os.precision(3);
  os << "solve_lambda_3d: no convergence at " << point_str(p) << " (residual " << norm << ")";
  throw ConvergenceError(os.str());
}

FourthMomentTriple planar_aligned_moments(double mu1) {
  if (!std::isfinite(mu1) || mu1 < 0.5 - 1e-12 || mu1 > 1.0 + 1e-12) {
    throw DomainError("planar_aligned_moments: mu1 must lie in [1/2, 1]");
  }
  mu1 = std::clamp(mu1, 0.5, 1.0);
  FourthMomentTriple s;
  s.s1111 = s1111_from_lambda_2d(solve_lambda_2d(mu1));
  s.s1122 = mu1 - s.s1111;
  s.s2222 = (1.0 - mu1) - s.s1122;
  return s;
}

double quadrature_estimate(double mu1, double s1111) {
  if (!(mu1 > 0.5 && mu1 < 1.0)) {
    throw DomainError("quadrature_estimate: mu1 must lie in (1/2, 1)");
  }
  if (!(s1111 < mu1)) throw DomainError("quadrature_estimate: need S1111 < mu1");
  return 40.0 * std::numbers::pi * std::sqrt((mu1 - 0.5) / (mu1 - s1111));
}

}  // namespace bingham
