#include "bingham/tensor_frame.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "bingham/errors.hpp"

namespace bingham {
namespace {

using Vec3 = std::array<double, 3>;

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 scaled(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

Vec3 mat_vec(const Mat3& m, const Vec3& x) {
  return {dot(m[0], x), dot(m[1], x), dot(m[2], x)};
}

void check_finite(const SymTensor& t, const char* who) {
  for (int k = 0; k < SymTensor::components(t.dim); ++k) {
    if (!std::isfinite(t.v[k])) throw DomainError(std::string(who) + ": non-finite tensor entry");
  }
}

// Eigenvector of the symmetric matrix `a` for a simple eigenvalue `e`: the
// largest cross product of two rows of a - e I.
Vec3 null_vector(const Mat3& a, double e) {
  const Vec3 r0{a[0][0] - e, a[0][1], a[0][2]};
  const Vec3 r1{a[1][0], a[1][1] - e, a[1][2]};
  const Vec3 r2{a[2][0], a[2][1], a[2][2] - e};
  const Vec3 cands[3] = {cross(r0, r1), cross(r0, r2), cross(r1, r2)};
  int best = 0;
  double best_norm = dot(cands[0], cands[0]);
  for (int k = 1; k < 3; ++k) {
    const double n = dot(cands[k], cands[k]);
    if (n > best_norm) best = k, best_norm = n;
  }
  if (!(best_norm > 0.0)) {
    throw DomainError("eig3: eigenvector has zero norm");
  }
  return scaled(cands[best], 1.0 / std::sqrt(best_norm));
}

}  // namespace

SymTensor SymTensor::identity(int d) {
  SymTensor t;
  t.dim = d;
  for (int i = 0; i < d; ++i) t(i, i) = 1.0;
  return t;
}

double SymTensor::trace() const {
  double s = 0.0;
  for (int i = 0; i < dim; ++i) s += (*this)(i, i);
  return s;
}

EigenFrame eig2(const SymTensor& d) {
  if (d.dim != 2) throw DomainError("eig2: tensor is not 2x2");
  check_finite(d, "eig2");
  // (D11 - D22)^2 + 4 D12^2 equals 2 D:D - 1 for trace-one input and cannot
  // go negative through cancellation.
  const double tr = d(0, 0) + d(1, 1);
  const double diff = d(0, 0) - d(1, 1);
  const double radius = 0.5 * std::hypot(diff, 2.0 * d(0, 1));
  const double angle = 0.5 * std::atan2(2.0 * d(0, 1), diff);
  const double cs = std::cos(angle);
  const double sn = std::sin(angle);

  EigenFrame f;
  f.dim = 2;
  f.mu = {0.5 * tr + radius, 0.5 * tr - radius, 0.0};
  f.omega = {{{cs, -sn, 0.0}, {sn, cs, 0.0}, {0.0, 0.0, 1.0}}};
  return f;
}

EigenFrame eig3(const SymTensor& d) {
  if (d.dim != 3) throw DomainError("eig3: tensor is not 3x3");
  check_finite(d, "eig3");
  constexpr double kPerturb = 1e-16;

  // Work with the deviator so the cubic's roots scale with the anisotropy
  // instead of sitting next to 1/3.
  const double shift = d.trace() / 3.0;
  Mat3 a{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) a[i][j] = d(i, j) + (i == j ? -shift : kPerturb);
  }
  const double half_sq = 0.5 * (a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2]) +
                         a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
  const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                     a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                     a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);

  EigenFrame f;
  f.dim = 3;
  if (!(half_sq > 0.0)) {
    f.mu = {shift, shift, shift};
    f.omega = {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
    return f;
  }

  // z^3 - half_sq z - det. Starting at the upper bound sqrt(4 half_sq / 3)
  // the Newton iterates decrease monotonically to the largest root (the cubic
  // is convex there), so stagnation is the stopping test.
  double z = std::sqrt(4.0 * half_sq / 3.0);
  for (int iter = 0; iter < 200; ++iter) {
    const double fz = (z * z - half_sq) * z - det;
    const double dfz = 3.0 * z * z - half_sq;
    if (!(fz > 0.0) || !(dfz > 0.0)) break;
    const double next = z - fz / dfz;
    if (!(next < z)) break;
    z = next;
  }
  const double disc = std::max(0.0, 4.0 * half_sq - 3.0 * z * z);
  const double top = z;
  const double mid = 0.5 * (-z + std::sqrt(disc));
  const double low = 0.5 * (-z - std::sqrt(disc));

  // Take the eigenvector of whichever end root is better separated, then
  // split its complement with a 2x2 rotation. Near a double root this never
  // forms a cross product inside the degenerate eigenspace.
  const bool top_isolated = (top - mid) >= (mid - low);
  const Vec3 v = null_vector(a, top_isolated ? top : low);
  const double ev = dot(v, mat_vec(a, v));

  int axis = 0;
  for (int k = 1; k < 3; ++k) {
    if (std::abs(v[k]) < std::abs(v[axis])) axis = k;
  }
  Vec3 ek{0.0, 0.0, 0.0};
  ek[axis] = 1.0;
  Vec3 u = cross(v, ek);
  u = scaled(u, 1.0 / std::sqrt(dot(u, u)));
  const Vec3 w = cross(v, u);
  const Vec3 au = mat_vec(a, u);
  const Vec3 aw = mat_vec(a, w);
  const double b11 = dot(u, au);
  const double b12 = 0.5 * (dot(u, aw) + dot(w, au));
  const double b22 = dot(w, aw);
  const double radius = 0.5 * std::hypot(b11 - b22, 2.0 * b12);
  const double angle = 0.5 * std::atan2(2.0 * b12, b11 - b22);
  const double cs = std::cos(angle);
  const double sn = std::sin(angle);
  const Vec3 x{cs * u[0] + sn * w[0], cs * u[1] + sn * w[1], cs * u[2] + sn * w[2]};
  const Vec3 y{-sn * u[0] + cs * w[0], -sn * u[1] + cs * w[1], -sn * u[2] + cs * w[2]};
  const double ex = 0.5 * (b11 + b22) + radius;
  const double ey = 0.5 * (b11 + b22) - radius;

  struct Pair {
    double e;
    Vec3 vec;
  };
  std::array<Pair, 3> pairs = {Pair{ev, v}, Pair{ex, x}, Pair{ey, y}};
  std::sort(pairs.begin(), pairs.end(), [](const Pair& l, const Pair& r) { return l.e > r.e; });

  const Vec3 v1 = pairs[0].vec;
  const Vec3 v2 = pairs[1].vec;
  const Vec3 v3 = cross(v1, v2);
  for (int i = 0; i < 3; ++i) {
    f.omega[i][0] = v1[i];
    f.omega[i][1] = v2[i];
    f.omega[i][2] = v3[i];
    f.mu[i] = pairs[i].e + shift;
  }
  return f;
}

EigenFrame eigen_frame(const SymTensor& d) { return d.dim == 2 ? eig2(d) : eig3(d); }

DiagFourthMoment complete_fourth(const std::array<double, 3>& mu, const DiagFourthMoment& partial) {
  DiagFourthMoment s = partial;
  Mat3& q = s.q;
  if (s.dim == 2) {
    q[0][1] = mu[0] - q[0][0];
    q[1][1] = mu[1] - q[0][1];
    q[1][0] = q[0][1];
  } else {
    q[0][2] = mu[0] - q[0][0] - q[0][1];
    q[1][2] = mu[1] - q[0][1] - q[1][1];
    q[2][2] = mu[2] - q[0][2] - q[1][2];
    q[1][0] = q[0][1];
    q[2][0] = q[0][2];
    q[2][1] = q[1][2];
  }
  for (int i = 0; i < s.dim; ++i) {
    for (int j = 0; j < s.dim; ++j) {
      double& e = q[i][j];
      if (e < -1e-10 || e > 1.0 + 1e-10) {
        throw DomainError("complete_fourth: completed entry " + std::to_string(e) +
                          " is outside [0, 1]");
      }
      if (e < 0.0 && e > -1e-12) e = 0.0;
      if (e > 1.0 && e < 1.0 + 1e-12) e = 1.0;
    }
  }
  return s;
}

SymTensor contract_rotate(const EigenFrame& frame, const DiagFourthMoment& s, const SymTensor& t) {
  const int n = frame.dim;
  const Mat3& om = frame.omega;
  // t~ = Omega^T t Omega
  Mat3 tw{};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += t(i, k) * om[k][j];
      tw[i][j] = acc;
    }
  }
  Mat3 tr{};
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += om[k][i] * tw[k][j];
      tr[i][j] = tr[j][i] = acc;
    }
  }
  // (S~ : t~)_ii = sum_k S~_iikk t~_kk and (S~ : t~)_ij = 2 S~_iijj t~_ij.
  Mat3 r{};
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) acc += s.q[i][k] * tr[k][k];
    r[i][i] = acc;
    for (int j = i + 1; j < n; ++j) r[i][j] = r[j][i] = 2.0 * s.q[i][j] * tr[i][j];
  }
  // Omega r Omega^T
  Mat3 rw{};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += om[i][k] * r[k][j];
      rw[i][j] = acc;
    }
  }
  SymTensor out;
  out.dim = n;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += rw[i][k] * om[j][k];
      out(i, j) = acc;
    }
  }
  return out;
}

namespace {

void project_feasible(std::array<double, 3>& mu, int dim, double feasibility_tol) {
  const double smallest = mu[dim - 1];
  if (smallest < -feasibility_tol) {
    throw DomainError("closure: eigenvalue " + std::to_string(smallest) +
                      " of D/c is below the feasible set");
  }
  if (smallest < 0.0) {
    double sum = 0.0;
    mu[dim - 1] = 0.0;
    for (int i = 0; i < dim; ++i) sum += mu[i];
    for (int i = 0; i < dim; ++i) mu[i] /= sum;
  }
}

}  // namespace

DiagFourthMoment closure_moments(std::array<double, 3>& mu, int dim, const ChebMap& map,
                                 double feasibility_tol) {
  project_feasible(mu, dim, feasibility_tol);
  DiagFourthMoment partial;
  partial.dim = dim;
  if (dim == 2) {
    const auto* m = std::get_if<ChebMap1D>(&map);
    if (m == nullptr) throw DomainError("closure: 2D field needs a 2D map");
    partial.q[0][0] = eval_map_2d(*m, std::clamp(mu[0], 0.5, 1.0));
  } else {
    const auto* m = std::get_if<ChebMap2D>(&map);
    if (m == nullptr) throw DomainError("closure: 3D field needs a 3D map");
    TrianglePoint p{mu[0], mu[1]};
    p = clamp_to_triangle(p, std::max(feasibility_tol, 1e-12));
    const FourthMomentTriple t = eval_map_3d(*m, p);
    partial.q[0][0] = t.s1111;
    partial.q[0][1] = t.s1122;
    partial.q[1][1] = t.s2222;
  }
  return complete_fourth(mu, partial);
}

void closure_moments_batch(std::span<std::array<double, 3>> mu, int dim, const ChebMap& map,
                           std::span<DiagFourthMoment> out, double feasibility_tol) {
  if (out.size() != mu.size()) throw DomainError("closure_moments_batch: size mismatch");
  const auto* m3 = std::get_if<ChebMap2D>(&map);
  if (dim == 2 || m3 == nullptr) {
    for (std::size_t i = 0; i < mu.size(); ++i) {
      out[i] = closure_moments(mu[i], dim, map, feasibility_tol);
    }
    return;
  }
  std::vector<SquarePoint> square;
  std::vector<std::size_t> which;
  square.reserve(mu.size());
  which.reserve(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    project_feasible(mu[i], dim, feasibility_tol);
    const TrianglePoint p =
        clamp_to_triangle({mu[i][0], mu[i][1]}, std::max(feasibility_tol, 1e-12));
    out[i].dim = 3;
    out[i].q = Mat3{};
    if (p.mu1 - p.mu3() <= kIsotropicGap) {
      out[i].q[0][0] = 0.2;
      out[i].q[0][1] = 1.0 / 15.0;
      out[i].q[1][1] = 0.2;
    } else {
      square.push_back(triangle_to_square(p));
      which.push_back(i);
    }
  }
  std::vector<FourthMomentTriple> values(square.size());
  eval_map_3d_batch(*m3, square, values);
  for (std::size_t j = 0; j < which.size(); ++j) {
    DiagFourthMoment& o = out[which[j]];
    o.q[0][0] = values[j].s1111;
    o.q[0][1] = values[j].s1122;
    o.q[1][1] = values[j].s2222;
  }
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = complete_fourth(mu[i], out[i]);
}

ClosureOutput closure_eval(const SymTensor& d, double c, double zeta, const SymTensor& e,
                           const ChebMap& map, double feasibility_tol) {
  if (!(c > 0.0)) throw DomainError("closure_eval: concentration must be positive");
  const int n = d.dim;
  SymTensor q = d;
  for (int k = 0; k < SymTensor::components(n); ++k) q.v[k] /= c;

  ClosureOutput out;
  out.frame = eigen_frame(q);
  out.s = closure_moments(out.frame.mu, n, map, feasibility_tol);

  SymTensor t = e;
  t.dim = n;
  for (int k = 0; k < SymTensor::components(n); ++k) t.v[k] += 2.0 * zeta * d.v[k];
  out.s_dot_t = contract_rotate(out.frame, out.s, t);
  for (int k = 0; k < SymTensor::components(n); ++k) out.s_dot_t.v[k] *= c;
  return out;
}

RecoveredBingham recover_B(const std::array<double, 3>& mu, const DiagFourthMoment& s, double c,
                           int dim) {
  if (!(c > 0.0)) throw DomainError("recover_B: concentration must be positive");
  RecoveredBingham b;
  b.dim = dim;
  if (dim == 2) {
    if (mu[0] == 0.5) return b;
    const double gap = mu[0] - s.q[0][0];
    if (!(gap >= 1e-14)) {
      throw DomainError("recover_B: mu1 - S1111 below 1e-14, Bingham parameter overflows");
    }
    const double lam = (mu[0] - 0.5) / (2.0 * gap);
    b.lambda = {lam, -lam, 0.0};
    b.reduced.lambda1 = 2.0 * lam;
    return b;
  }
  if (mu[0] == 1.0 / 3.0 && mu[1] == 1.0 / 3.0) return b;
  // Rows 1 and 2 of D B - S:B = (3/2)(D - I/3) with lambda'_3 = 0; the
  // system only sees differences of the lambda_i.
  const double a11 = mu[0] - s.q[0][0];
  const double a12 = -s.q[0][1];
  const double a22 = mu[1] - s.q[1][1];
  const double r1 = 1.5 * (mu[0] - 1.0 / 3.0);
  const double r2 = 1.5 * (mu[1] - 1.0 / 3.0);
  const double det = a11 * a22 - a12 * a12;
  if (!(std::abs(det) >= 1e-28)) {
    throw DomainError("recover_B: singular system, Bingham parameter overflows");
  }
  const double l1 = (r1 * a22 - a12 * r2) / det;
  const double l2 = (a11 * r2 - a12 * r1) / det;
  const double l3 = -(l1 + l2) / 3.0;
  b.lambda = {l1 + l3, l2 + l3, l3};
  b.reduced.lambda1 = l1;
  b.reduced.lambda2 = l2;
  return b;
}

ScalarOrder scalar_order(const SymTensor& d, double c) {
  if (!(c > 0.0)) throw DomainError("scalar_order: concentration must be positive");
  SymTensor q = d;
  for (int k = 0; k < SymTensor::components(d.dim); ++k) q.v[k] /= c;
  const EigenFrame f = eigen_frame(q);
  const int n = d.dim;
  ScalarOrder out;
  out.s = n * (f.mu[0] - 1.0 / n) / (n - 1);
  out.director = f.vector(0);
  if (n == 2) out.director[2] = 0.0;
  for (int i = 0; i < n; ++i) {
    if (out.director[i] != 0.0) {
      if (out.director[i] < 0.0) {
        for (double& x : out.director) x = -x;
      }
      break;
    }
  }
  return out;
}

}  // namespace bingham
