#include "bingham/cheb_map.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "bingham/errors.hpp"

namespace bingham {
namespace {

constexpr const char* kTargetNames[ChebMap2D::kTargets] = {"S1111", "S1122", "S2222"};

// cos(j pi / 2n) for j in [0, 4n), written through sin so the table is
// exactly antisymmetric about its zeros.
std::vector<double> cosine_table(int n) {
  std::vector<double> table(4 * static_cast<std::size_t>(n));
  for (int j = 0; j < 4 * n; ++j) {
    table[j] = std::sin((n - j) * std::numbers::pi / (2.0 * n));
  }
  return table;
}

}  // namespace

std::vector<double> chebyshev_nodes(int n) {
  if (n < 1) throw DomainError("chebyshev_nodes: need n >= 1");
  std::vector<double> x(n);
  for (int k = 1; k <= n; ++k) {
    x[k - 1] = std::sin((n - 2 * k + 1) * std::numbers::pi / (2.0 * n));
  }
  return x;
}

std::vector<double> chebyshev_coefficients(std::span<const double> values) {
  const int n = static_cast<int>(values.size());
  if (n < 1) throw DomainError("chebyshev_coefficients: no values");
  const std::vector<double> table = cosine_table(n);
  std::vector<double> c(n, 0.0);
  for (int m = 0; m < n; ++m) {
    double sum = 0.0;
    for (int k = 1; k <= n; ++k) {
      const long j = (static_cast<long>(m) * (2 * k - 1)) % (4L * n);
      sum += values[k - 1] * table[j];
    }
    c[m] = 2.0 * sum / n;
  }
  c[0] *= 0.5;
  return c;
}

double clenshaw(std::span<const double> coeffs, double x) {
  double b1 = 0.0;
  double b2 = 0.0;
  for (std::size_t k = coeffs.size(); k-- > 1;) {
    const double b0 = coeffs[k] + 2.0 * x * b1 - b2;
    b2 = b1;
    b1 = b0;
  }
  return coeffs.empty() ? 0.0 : coeffs[0] + x * b1 - b2;
}

double chebyshev_forward(std::span<const double> coeffs, double x) {
  if (coeffs.empty()) return 0.0;
  double t_prev = 1.0;
  double t = x;
  double sum = coeffs[0];
  for (std::size_t m = 1; m < coeffs.size(); ++m) {
    sum += coeffs[m] * t;
    const double t_next = 2.0 * x * t - t_prev;
    t_prev = t;
    t = t_next;
  }
  return sum;
}

// ---------------------------------------------------------------------------
// 2D closure map

ChebMap1D fit_map_2d(int degree, FitStats* stats) {
  if (degree < 4) throw DomainError("fit_map_2d: degree must be >= 4");
  const int n = degree + 1;
  const std::vector<double> nu = chebyshev_nodes(n);
  std::vector<double> values(n);
  FitStats local;

  // Nodes are stored with nu descending; march from the isotropic end.
  double lambda = 0.0;
  for (int k = n - 1; k >= 0; --k) {
    const double mu1 = 0.25 * (nu[k] + 3.0);
    lambda = solve_lambda_2d(mu1, lambda);
    values[k] = s1111_from_lambda_2d(lambda);
    const double f = 0.5 * (1.0 + bessel_ratio(1, lambda)) - mu1;
    local.max_residual = std::max(local.max_residual, std::abs(f));
    ++local.solves;
  }

  ChebMap1D map;
  map.degree = degree;
  map.coeffs = chebyshev_coefficients(values);
  for (int k = 0; k < n; ++k) {
    local.max_node_error =
        std::max(local.max_node_error, std::abs(clenshaw(map.coeffs, nu[k]) - values[k]));
  }
  if (stats) *stats = local;
  return map;
}

double eval_map_2d(const ChebMap1D& map, double mu1) {
  if (!std::isfinite(mu1) || mu1 < 0.5 - 1e-12 || mu1 > 1.0 + 1e-12) {
    throw DomainError("eval_map_2d: mu1 must lie in [1/2, 1]");
  }
  mu1 = std::clamp(mu1, 0.5, 1.0);
  return clenshaw(map.coeffs, 4.0 * mu1 - 3.0);
}

// ---------------------------------------------------------------------------
// 3D closure map

ChebMap2D fit_map_3d(int degree, FitStats* stats,
                     const std::function<void(int, int)>& progress) {
  if (degree < 4) throw DomainError("fit_map_3d: degree must be >= 4");
  const int n = degree + 1;
  const std::size_t nn = static_cast<std::size_t>(n) * n;
  const std::vector<double> nu = chebyshev_nodes(n);

  // values[t][k1 * n + k2] at (nu[k1], nu[k2]).
  std::array<std::vector<double>, ChebMap2D::kTargets> values;
  for (auto& v : values) v.assign(nn, 0.0);
  std::vector<double> line_residual(n, 0.0);
  std::vector<int> line_solves(n, 0);
  std::vector<std::string> failures(n);
  int done = 0;

#pragma omp parallel for schedule(dynamic, 1)
  for (int k2 = 0; k2 < n; ++k2) {
    std::optional<BinghamParams> warm;
    for (int k1 = n - 1; k1 >= 0 && failures[k2].empty(); --k1) {
      const TrianglePoint p = square_to_triangle({nu[k1], nu[k2]});
      Solve3DResult r;
      try {
        try {
          r = solve_lambda_3d(p, {}, warm);
        } catch (const ConvergenceError&) {
          if (!warm) throw;
          r = solve_lambda_3d(p, {}, std::nullopt);
        }
      } catch (const std::exception& e) {
        std::ostringstream os;
        os.precision(17);
        os << "fit_map_3d: solve failed at (nu1, nu2) = (" << nu[k1] << ", " << nu[k2]
           << "): " << e.what();
        failures[k2] = os.str();
        break;
      }
      warm = r.params;
      const std::size_t idx = static_cast<std::size_t>(k1) * n + k2;
      values[0][idx] = r.moments.p1p1p1p1;
      values[1][idx] = r.moments.p1p1p2p2;
      values[2][idx] = r.moments.p2p2p2p2;
      line_residual[k2] = std::max(line_residual[k2], r.residual);
      ++line_solves[k2];
    }
#pragma omp critical(fit_map_3d_progress)
    {
      ++done;
      if (progress) progress(done, n);
    }
  }
  for (const auto& f : failures) {
    if (!f.empty()) throw ConvergenceError(f);
  }

  ChebMap2D map;
  map.degree = degree;
  std::vector<double> column(n);
  for (int t = 0; t < ChebMap2D::kTargets; ++t) {
    // Transform along nu2 (rows), then along nu1 (columns).
    std::vector<double> rows(nn);
    for (int k1 = 0; k1 < n; ++k1) {
      const std::vector<double> c = chebyshev_coefficients(
          std::span<const double>(values[t].data() + static_cast<std::size_t>(k1) * n, n));
      std::copy(c.begin(), c.end(), rows.begin() + static_cast<std::ptrdiff_t>(k1) * n);
    }
    map.coeffs[t].assign(nn, 0.0);
    for (int m2 = 0; m2 < n; ++m2) {
      for (int k1 = 0; k1 < n; ++k1) column[k1] = rows[static_cast<std::size_t>(k1) * n + m2];
      const std::vector<double> c = chebyshev_coefficients(column);
      for (int m1 = 0; m1 + m2 <= degree; ++m1) {
        map.coeffs[t][static_cast<std::size_t>(m1) * n + m2] = c[m1];
      }
    }
  }

  if (stats) {
    FitStats local;
    for (int k = 0; k < n; ++k) {
      local.max_residual = std::max(local.max_residual, line_residual[k]);
      local.solves += line_solves[k];
    }
    for (int k1 = 0; k1 < n; ++k1) {
      for (int k2 = 0; k2 < n; ++k2) {
        const FourthMomentTriple s = eval_map_3d_square(map, {nu[k1], nu[k2]});
        const std::size_t idx = static_cast<std::size_t>(k1) * n + k2;
        local.max_node_error = std::max({local.max_node_error, std::abs(s.s1111 - values[0][idx]),
                                         std::abs(s.s1122 - values[1][idx]),
                                         std::abs(s.s2222 - values[2][idx])});
      }
    }
    *stats = local;
  }
  return map;
}

namespace {

// Points run along the vector lanes, so each coefficient is loaded once per
// block instead of once per point. Single-point evaluation goes through the
// same kernel so both paths round identically.
constexpr int kLanes = 8;

void eval_block(const ChebMap2D& map, const SquarePoint* points, int count,
                FourthMomentTriple* out, double* t1, double* t2) {
  const int degree = map.degree;
  const int n = degree + 1;
  double x1[kLanes];
  double x2[kLanes];
  for (int p = 0; p < kLanes; ++p) {
    const SquarePoint& q = points[std::min(p, count - 1)];
    x1[p] = q.nu1;
    x2[p] = q.nu2;
    t1[p] = 1.0;
    t2[p] = 1.0;
    if (degree >= 1) {
      t1[kLanes + p] = q.nu1;
      t2[kLanes + p] = q.nu2;
    }
  }
  for (int m = 2; m <= degree; ++m) {
    double* a1 = &t1[static_cast<std::size_t>(m) * kLanes];
    double* a2 = &t2[static_cast<std::size_t>(m) * kLanes];
#pragma omp simd
    for (int p = 0; p < kLanes; ++p) {
      a1[p] = 2.0 * x1[p] * a1[p - kLanes] - a1[p - 2 * kLanes];
      a2[p] = 2.0 * x2[p] * a2[p - kLanes] - a2[p - 2 * kLanes];
    }
  }
  double r0[kLanes] = {};
  double r1[kLanes] = {};
  double r2[kLanes] = {};
  for (int m1 = 0; m1 <= degree; ++m1) {
    const std::size_t row = static_cast<std::size_t>(m1) * n;
    const double* c0 = map.coeffs[0].data() + row;
    const double* c1 = map.coeffs[1].data() + row;
    const double* c2 = map.coeffs[2].data() + row;
    double i0[kLanes] = {};
    double i1[kLanes] = {};
    double i2[kLanes] = {};
    for (int m2 = 0; m2 < n - m1; ++m2) {
      const double* b = &t2[static_cast<std::size_t>(m2) * kLanes];
      const double k0 = c0[m2];
      const double k1 = c1[m2];
      const double k2 = c2[m2];
#pragma omp simd
      for (int p = 0; p < kLanes; ++p) {
        i0[p] += k0 * b[p];
        i1[p] += k1 * b[p];
        i2[p] += k2 * b[p];
      }
    }
    const double* a = &t1[static_cast<std::size_t>(m1) * kLanes];
#pragma omp simd
    for (int p = 0; p < kLanes; ++p) {
      r0[p] += a[p] * i0[p];
      r1[p] += a[p] * i1[p];
      r2[p] += a[p] * i2[p];
    }
  }
  for (int p = 0; p < count; ++p) out[p] = {r0[p], r1[p], r2[p]};
}

}  // namespace

FourthMomentTriple eval_map_3d_square(const ChebMap2D& map, SquarePoint q) {
  const std::size_t size = static_cast<std::size_t>(map.degree + 1) * kLanes;
  // Small degrees stay off the heap.
  constexpr std::size_t kStack = 128 * kLanes;
  double t1_stack[kStack];
  double t2_stack[kStack];
  std::vector<double> t1_heap;
  std::vector<double> t2_heap;
  double* t1 = t1_stack;
  double* t2 = t2_stack;
  if (size > kStack) {
    t1_heap.resize(size);
    t2_heap.resize(size);
    t1 = t1_heap.data();
    t2 = t2_heap.data();
  }
  FourthMomentTriple out;
  eval_block(map, &q, 1, &out, t1, t2);
  return out;
}

void eval_map_3d_batch(const ChebMap2D& map, std::span<const SquarePoint> points,
                       std::span<FourthMomentTriple> out) {
  if (out.size() != points.size()) throw DomainError("eval_map_3d_batch: size mismatch");
  const std::size_t size = static_cast<std::size_t>(map.degree + 1) * kLanes;
  std::vector<double> t1(size);
  std::vector<double> t2(size);
  for (std::size_t start = 0; start < points.size(); start += kLanes) {
    const int count = static_cast<int>(std::min<std::size_t>(kLanes, points.size() - start));
    eval_block(map, points.data() + start, count, out.data() + start, t1.data(), t2.data());
  }
}

FourthMomentTriple eval_map_3d(const ChebMap2D& map, TrianglePoint p) {
  p = clamp_to_triangle(p);
  if (p.mu1 - p.mu3() <= kIsotropicGap) {
    return {0.2, 1.0 / 15.0, 0.2};
  }
  return eval_map_3d_square(map, triangle_to_square(p));
}

double degree_averaged_magnitude(const ChebMap2D& map, int target, int m) {
  if (m < 0 || m > map.degree) throw DomainError("degree_averaged_magnitude: bad degree");
  double sum = 0.0;
  for (int m1 = 0; m1 <= m; ++m1) sum += std::abs(map.coeff(target, m1, m - m1));
  return sum / (m + 1);
}

// ---------------------------------------------------------------------------
// Coefficient files

namespace {

std::string format_coefficient(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

std::string crc_hex(unsigned long crc) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", crc);
  return buf;
}

unsigned long crc_update(unsigned long crc, const std::string& line) {
  const std::string with_newline = line + "\n";
  return ::crc32(crc, reinterpret_cast<const Bytef*>(with_newline.data()),
                 static_cast<uInt>(with_newline.size()));
}

// Splits "key=value" tokens of a header line into a lookup.
std::string header_field(const std::string& line, const std::string& key) {
  std::istringstream is(line);
  std::string token;
  while (is >> token) {
    if (token.rfind(key + "=", 0) == 0) return token.substr(key.size() + 1);
  }
  throw FormatError("map file: header lacks field '" + key + "'");
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("map file: malformed " + what + " '" + s + "'");
  }
}

}  // namespace

void save_map(const ChebMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");

  unsigned long crc = ::crc32(0L, Z_NULL, 0);
  auto write_coeffs = [&](const std::vector<double>& c) {
    for (double v : c) {
      const std::string line = format_coefficient(v);
      crc = crc_update(crc, line);
      out << line << '\n';
    }
  };

  if (const auto* m1 = std::get_if<ChebMap1D>(&map)) {
    out << "binghammap v1 dim=2 M=" << m1->degree << " targets=1\n";
    out << "domain=mu1:0.5:1\n";
    out << "target=S1111\n";
    write_coeffs(m1->coeffs);
  } else {
    const auto& m2 = std::get<ChebMap2D>(map);
    out << "binghammap v1 dim=3 M=" << m2.degree << " targets=3\n";
    out << "domain=square:H-v1\n";
    for (int t = 0; t < ChebMap2D::kTargets; ++t) {
      out << "target=" << kTargetNames[t] << '\n';
      write_coeffs(m2.coeffs[t]);
    }
  }
  out << "crc32=" << crc_hex(crc) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

ChebMap load_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open map file " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw FormatError("map file: empty file");
  std::istringstream head(line);
  std::string magic;
  std::string version;
  head >> magic >> version;
  if (magic != "binghammap") throw FormatError("map file: bad magic '" + magic + "'");
  if (version != "v1") throw FormatError("map file: unsupported format version '" + version + "'");
  const int dim = parse_int(header_field(line, "dim"), "dim");
  if (dim != 2 && dim != 3) {
    throw FormatError("map file: unsupported dimension dim=" + std::to_string(dim));
  }
  const int degree = parse_int(header_field(line, "M"), "degree");
  const int targets = parse_int(header_field(line, "targets"), "target count");
  if (degree < 0 || degree > 4096) throw FormatError("map file: degree out of range");
  const int want_targets = dim == 2 ? 1 : 3;
  if (targets != want_targets) {
    throw FormatError("map file: dim=" + std::to_string(dim) + " requires targets=" +
                      std::to_string(want_targets));
  }

  if (!std::getline(in, line)) throw FormatError("map file: missing section 'domain'");
  const std::string want_domain = dim == 2 ? "domain=mu1:0.5:1" : "domain=square:H-v1";
  if (line != want_domain) throw FormatError("map file: unexpected domain line '" + line + "'");

  const std::size_t per_target =
      dim == 2 ? static_cast<std::size_t>(degree) + 1
               : static_cast<std::size_t>(degree + 1) * (degree + 1);
  unsigned long crc = ::crc32(0L, Z_NULL, 0);
  std::array<std::vector<double>, 3> data;
  for (int t = 0; t < targets; ++t) {
    const std::string section = std::string("target=") + kTargetNames[t];
    if (!std::getline(in, line)) throw FormatError("map file: missing section '" + section + "'");
    if (line != section) {
      throw FormatError("map file: expected '" + section + "', found '" + line + "'");
    }
    data[t].reserve(per_target);
    for (std::size_t i = 0; i < per_target; ++i) {
      if (!std::getline(in, line) || line.rfind("target=", 0) == 0 || line.rfind("crc32=", 0) == 0) {
        throw FormatError("map file: section '" + section + "' is truncated after " +
                          std::to_string(i) + " coefficients");
      }
      crc = crc_update(crc, line);
      char* end = nullptr;
      const double v = std::strtod(line.c_str(), &end);
      if (end == line.c_str() || *end != '\0') {
        throw FormatError("map file: malformed coefficient '" + line + "'");
      }
      data[t].push_back(v);
    }
  }
  if (!std::getline(in, line) || line.rfind("crc32=", 0) != 0) {
    throw FormatError("map file: missing section 'crc32'");
  }
  if (line.substr(6) != crc_hex(crc)) {
    throw FormatError("map file: checksum mismatch (file " + line.substr(6) + ", computed " +
                      crc_hex(crc) + ")");
  }

  if (dim == 2) {
    ChebMap1D m;
    m.degree = degree;
    m.coeffs = std::move(data[0]);
    return m;
  }
  ChebMap2D m;
  m.degree = degree;
  for (int t = 0; t < 3; ++t) m.coeffs[t] = std::move(data[t]);
  return m;
}

}  // namespace bingham
