#include "bingham/special_functions.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "bingham/errors.hpp"

namespace bingham {
namespace {

void check_ratio_args(int n, double x) {
  if (n != 1 && n != 2) {
    throw DomainError("bessel_ratio: order must be 1 or 2, got " + std::to_string(n));
  }
  if (!(x >= 0.0)) {
    throw DomainError("bessel_ratio: argument must be >= 0");
  }
}

// Coefficients a_k(n) = prod_{l=1}^{k} (4n^2 - (2l-1)^2) / (8^k k!) of the
// large-argument expansion I_n(x) ~ e^x / sqrt(2 pi x) sum_k (-1)^k a_k(n) / x^k.
constexpr int kAsymptoticOrder = 4;
constexpr double kAsymptoticCoeff[3][kAsymptoticOrder + 1] = {
    {1.0, -1.0 / 8.0, 9.0 / 128.0, -225.0 / 3072.0, 11025.0 / 98304.0},
    {1.0, 3.0 / 8.0, -15.0 / 128.0, 315.0 / 3072.0, -14175.0 / 98304.0},
    {1.0, 15.0 / 8.0, 105.0 / 128.0, -945.0 / 3072.0, 31185.0 / 98304.0},
};

double asymptotic_sum(int n, double x) {
  // Horner in 1/x with alternating signs folded in.
  const double inv = 1.0 / x;
  double acc = 0.0;
  for (int k = kAsymptoticOrder; k >= 0; --k) {
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    acc = acc * inv + sign * kAsymptoticCoeff[n][k];
  }
  return acc;
}

// Longer expansion for the scaled values themselves; only used above the
// switch where twelve terms are far below double precision.
double scaled_asymptotic(int n, double x) {
  const double mu = 4.0 * n * n;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k <= 12; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= -(mu - odd * odd) / (8.0 * k * x);
    sum += term;
  }
  return sum / std::sqrt(2.0 * std::numbers::pi * x);
}

// e^{-x} I_0(x) by the power series with the exponential folded into the
// first term. Terms are all positive, so there is no cancellation.
double scaled_i0_series(double x) {
  const double q = 0.25 * x * x;
  double term = std::exp(-x);
  double sum = term;
  for (int k = 1; k < 100000; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-18 && static_cast<double>(k) > 0.5 * x) break;
  }
  return sum;
}

// Ratios r_k = I_{k+1}(x) / I_k(x) for k = 0, 1 by backward recurrence
// r_k = x / (2(k+1) + x r_{k+1}). For k > x the ratios fall below ~0.41, so
// 30 extra levels bury the truncation r_K = 0 far below rounding.
void ratio_recurrence(double x, double& r0, double& r1) {
  const int top = static_cast<int>(std::ceil(x)) + 32;
  double r = 0.0;
  for (int k = top; k >= 1; --k) {
    r = x / (2.0 * (k + 1) + x * r);
  }
  r1 = r;
  r0 = x / (2.0 + x * r1);
}

}  // namespace

double bessel_ratio_recurrence(int n, double x) {
  check_ratio_args(n, x);
  double r0 = 0.0;
  double r1 = 0.0;
  ratio_recurrence(x, r0, r1);
  return n == 1 ? r0 : r0 * r1;
}

double bessel_ratio_asymptotic(int n, double x) {
  check_ratio_args(n, x);
  if (x == 0.0) throw DomainError("bessel_ratio_asymptotic: argument must be > 0");
  return asymptotic_sum(n, x) / asymptotic_sum(0, x);
}

double bessel_ratio(int n, double x) {
  check_ratio_args(n, x);
  if (std::isinf(x)) return 1.0;
  return x > kBesselAsymptoticSwitch ? bessel_ratio_asymptotic(n, x)
                                     : bessel_ratio_recurrence(n, x);
}

double scaled_bessel_i(int n, double x) {
  if (n < 0 || n > 2) {
    throw DomainError("scaled_bessel_i: order must be 0, 1 or 2");
  }
  if (!(x >= 0.0)) throw DomainError("scaled_bessel_i: argument must be >= 0");
  if (x > kBesselAsymptoticSwitch) return scaled_asymptotic(n, x);
  const double i0 = scaled_i0_series(x);
  if (n == 0) return i0;
  double r0 = 0.0;
  double r1 = 0.0;
  ratio_recurrence(x, r0, r1);
  return n == 1 ? i0 * r0 : i0 * r0 * r1;
}

double log_bessel_i0(double x) {
  return x + std::log(scaled_bessel_i(0, x));
}

double QuadratureRule::measure() const {
  return kind == Kind::kTrapezoidPeriodic ? 2.0 * std::numbers::pi : 2.0;
}

QuadratureRule gauss_polar_rule(int n) {
  if (n < 2) throw DomainError("gauss_polar_rule: need at least 2 nodes");
  QuadratureRule rule;
  rule.kind = QuadratureRule::Kind::kGaussPolar;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  rule.cosines.resize(n);

  // Roots of P_n, largest first; the lower half is mirrored so the rule is
  // exactly symmetric under theta -> pi - theta.
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / ((x - 1.0) * (x + 1.0));
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) <= 1e-15) break;
    }
    // Recompute the derivative at the converged root for the weight.
    double p0 = 1.0;
    double p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (x * p1 - p0) / ((x - 1.0) * (x + 1.0));
    const double w = 2.0 / ((1.0 - x) * (1.0 + x) * dp * dp);

    rule.cosines[i] = x;
    rule.cosines[n - 1 - i] = -x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.cosines[n / 2] = 0.0;
  for (int i = 0; i < n; ++i) rule.nodes[i] = std::acos(rule.cosines[i]);
  return rule;
}

QuadratureRule trapezoid_rule(int n) {
  if (n < 4 || n % 2 != 0) {
    throw DomainError("trapezoid_rule: node count must be even and >= 4");
  }
  QuadratureRule rule;
  rule.kind = QuadratureRule::Kind::kTrapezoidPeriodic;
  rule.nodes.resize(n);
  rule.weights.assign(n, 2.0 * std::numbers::pi / n);
  for (int k = 0; k < n; ++k) rule.nodes[k] = 2.0 * std::numbers::pi * k / n;
  return rule;
}

}  // namespace bingham
