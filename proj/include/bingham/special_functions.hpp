#pragma once

#include <vector>

namespace bingham {

/// Above this argument, Bessel ratios switch to the asymptotic expansion.
inline constexpr double kBesselAsymptoticSwitch = 700.0;

/// I_n(x)/I_0(x) for n in {1, 2} and x >= 0.
///
/// Below the switch the ratio comes from the backward recurrence for
/// I_{k+1}/I_k (no exponentials, so nothing overflows). Above it, the large-x
/// expansions of numerator and denominator are truncated at 1/x^4 and divided
/// so the common factor e^x/sqrt(2 pi x) cancels.
double bessel_ratio(int n, double x);

/// The two branches of bessel_ratio, exposed so their agreement can be checked
/// on either side of the switch point.
double bessel_ratio_recurrence(int n, double x);
double bessel_ratio_asymptotic(int n, double x);

/// e^{-x} I_n(x) for n in {0, 1, 2}, x >= 0. Finite for every finite x.
double scaled_bessel_i(int n, double x);

/// log I_0(x) without forming I_0 itself.
double log_bessel_i0(double x);

/// A one-dimensional quadrature rule over an angle.
///
/// For the trapezoid kind the rule integrates dphi over [0, 2pi). For the
/// Gauss-polar kind the weights already include the sin(theta) Jacobian, so
/// sum_k w_k f(theta_k) approximates the integral of f(theta) sin(theta) over
/// [0, pi]; `cosines` then holds cos(theta_k), the Gauss-Legendre abscissae.
struct QuadratureRule {
  enum class Kind { kTrapezoidPeriodic, kGaussPolar };

  Kind kind = Kind::kTrapezoidPeriodic;
  std::vector<double> nodes;    // angles, strictly increasing
  std::vector<double> weights;
  std::vector<double> cosines;  // Gauss-polar only

  std::size_t size() const { return nodes.size(); }
  /// 2 pi for the trapezoid rule, 2 for the Gauss-polar rule.
  double measure() const;
};

/// n-point Gauss-Legendre rule in cos(theta), mapped to theta in [0, pi].
/// Exact for polynomials in cos(theta) up to degree 2n - 1.
QuadratureRule gauss_polar_rule(int n);

/// Equispaced periodic rule phi_k = 2 pi k / n with weights 2 pi / n.
QuadratureRule trapezoid_rule(int n);

}  // namespace bingham
