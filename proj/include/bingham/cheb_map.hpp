#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "bingham/bingham_solve.hpp"

namespace bingham {

/// Chebyshev series for the 2D closure map mu1 -> S1111 on nu = 4 mu1 - 3.
struct ChebMap1D {
  int degree = 0;
  std::vector<double> coeffs;  // degree + 1 entries
};

/// Chebyshev series for the 3D closure map (nu1, nu2) -> (S1111, S1122,
/// S2222) over the square image of the eigenvalue triangle. Each target is a
/// row-major (degree+1)^2 array indexed [m1][m2]; entries with m1 + m2 >
/// degree are zero.
struct ChebMap2D {
  static constexpr int kTargets = 3;
  int degree = 0;
  std::array<std::vector<double>, kTargets> coeffs;

  double coeff(int target, int m1, int m2) const {
    return coeffs[target][static_cast<std::size_t>(m1) * (degree + 1) + m2];
  }
};

using ChebMap = std::variant<ChebMap1D, ChebMap2D>;

/// First-kind Chebyshev nodes cos((2k - 1) pi / 2n), k = 1..n (descending).
std::vector<double> chebyshev_nodes(int n);

/// Coefficients c_0..c_{n-1} of the interpolant through f at
/// chebyshev_nodes(n), by the discrete cosine transform.
std::vector<double> chebyshev_coefficients(std::span<const double> values);

/// Sum_m c_m T_m(x) by Clenshaw's recurrence.
double clenshaw(std::span<const double> coeffs, double x);

/// Same sum by the forward three-term recurrence for T_m.
double chebyshev_forward(std::span<const double> coeffs, double x);

struct FitStats {
  /// Largest moment-constraint residual over all solves.
  double max_residual = 0.0;
  /// Largest |interpolant - solved value| over the fit nodes.
  double max_node_error = 0.0;
  int solves = 0;
};

ChebMap1D fit_map_2d(int degree, FitStats* stats = nullptr);

/// Evaluates the 2D closure map at mu1 in [1/2, 1] (clamped within 1e-12).
double eval_map_2d(const ChebMap1D& map, double mu1);

/// Fits the 3D closure map on an (M+1)^2 tensor grid. Each nu2 line is swept
/// from the isotropic edge toward the planar edge with warm starts; lines are
/// independent. `progress`, if set, is called after each finished line.
ChebMap2D fit_map_3d(int degree, FitStats* stats = nullptr,
                     const std::function<void(int done, int total)>& progress = {});

/// Evaluates the 3D closure map; the exact isotropic corner returns
/// (1/5, 1/15, 1/5) without going through the square transform.
FourthMomentTriple eval_map_3d(const ChebMap2D& map, TrianglePoint p);

/// Same evaluation on pre-transformed square coordinates.
FourthMomentTriple eval_map_3d_square(const ChebMap2D& map, SquarePoint q);

/// eval_map_3d_square over many points, blocked for throughput. Results are
/// bit-identical to the single-point call.
void eval_map_3d_batch(const ChebMap2D& map, std::span<const SquarePoint> points,
                       std::span<FourthMomentTriple> out);

/// Degree-averaged coefficient magnitude, mean over m1 + m2 = m of |C|.
double degree_averaged_magnitude(const ChebMap2D& map, int target, int m);

void save_map(const ChebMap& map, const std::filesystem::path& path);
ChebMap load_map(const std::filesystem::path& path);

}  // namespace bingham
