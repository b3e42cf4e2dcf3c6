#include "bingham/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "bingham/errors.hpp"

namespace bingham {

ShellSpectrum shell_spectrum(const SpectralGrid& grid, const std::vector<SpecField>& field,
                             SpectrumMode mode) {
  const int dim = grid.dim();
  const int n = grid.n();
  int shells = static_cast<int>(std::floor(n * std::sqrt(static_cast<double>(dim)) / 2.0));
  std::vector<int> shell_of(grid.spec_size());
  for (std::size_t s = 0; s < grid.spec_size(); ++s) {
    double m2 = 0.0;
    for (int a = 0; a < dim; ++a) m2 += static_cast<double>(grid.mode(s, a)) * grid.mode(s, a);
    shell_of[s] = static_cast<int>(std::lround(std::sqrt(m2)));
    shells = std::max(shells, shell_of[s]);
  }
  std::vector<double> sum(shells + 1, 0.0);
  std::vector<double> weight(shells + 1, 0.0);
  for (std::size_t s = 0; s < grid.spec_size(); ++s) {
    double mag2 = 0.0;
    for (const SpecField& f : field) mag2 += std::norm(f[s]);
    const double mult = grid.multiplicity(s);
    sum[shell_of[s]] += mult * (mode == SpectrumMode::Mean ? std::sqrt(mag2) : mag2);
    weight[shell_of[s]] += mult;
  }
  ShellSpectrum out;
  out.mode = mode;
  for (int k = 0; k <= shells; ++k) {
    out.k.push_back(k);
    if (mode == SpectrumMode::Mean) {
      out.value.push_back(weight[k] > 0.0 ? sum[k] / weight[k] : 0.0);
    } else {
      out.value.push_back(sum[k]);
    }
  }
  return out;
}

OnsetResult onset_wavenumber(const ShellSpectrum& spectrum, const OnsetParams& params) {
  OnsetResult result;
  result.params = params;
  const auto& v = spectrum.value;
  const auto& k = spectrum.k;
  if (v.size() < 3) return result;
  std::size_t peak = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[peak]) peak = i;
  }
  std::size_t last = peak;
  while (last + 1 < v.size() && v[last + 1] > 0.0) ++last;
  auto slope = [&](std::size_t i) {
    // between entries i and i + 1
    return (std::log(v[i + 1]) - std::log(v[i])) /
           std::log(static_cast<double>(k[i + 1]) / static_cast<double>(k[i]));
  };
  for (std::size_t i = std::max<std::size_t>(peak + 1, 2); i + 1 <= last; ++i) {
    if (k[i - 1] <= 0) continue;
    if (slope(i) - slope(i - 1) > params.threshold) {
      result.k = k[i];
      break;
    }
  }
  return result;
}

std::optional<int> divergence_wavenumber(const ShellSpectrum& value,
                                         const ShellSpectrum& reference, double rel_tol) {
  const std::size_t n = std::min(value.value.size(), reference.value.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (reference.k[i] < 1) continue;
    if (std::abs(value.value[i] - reference.value[i]) > rel_tol * std::abs(reference.value[i])) {
      return reference.k[i];
    }
  }
  return std::nullopt;
}

std::vector<SpecField> vorticity(const SpectralGrid& grid, const std::vector<SpecField>& u_hat) {
  const int dim = grid.dim();
  if (static_cast<int>(u_hat.size()) != dim) throw DomainError("vorticity: need d components");
  auto ddx = [&](const SpecField& f, int axis, std::size_t s) {
    const Complex z = grid.wavenumber(s, axis) * f[s];
    return Complex(-z.imag(), z.real());
  };
  if (dim == 2) {
    std::vector<SpecField> w(1, grid.spec_field());
    for (std::size_t s = 0; s < grid.spec_size(); ++s) {
      w[0][s] = ddx(u_hat[1], 0, s) - ddx(u_hat[0], 1, s);
    }
    return w;
  }
  std::vector<SpecField> w(3, grid.spec_field());
  for (std::size_t s = 0; s < grid.spec_size(); ++s) {
    w[0][s] = ddx(u_hat[2], 1, s) - ddx(u_hat[1], 2, s);
    w[1][s] = ddx(u_hat[0], 2, s) - ddx(u_hat[2], 0, s);
    w[2][s] = ddx(u_hat[1], 0, s) - ddx(u_hat[0], 1, s);
  }
  return w;
}

double entropy_density(const std::array<double, 3>& mu_in, int dim, const ChebMap& map) {
  std::array<double, 3> mu = mu_in;
  const DiagFourthMoment s = closure_moments(mu, dim, map, 1e-8);
  const RecoveredBingham b = recover_B(mu, s, 1.0, dim);
  const double psi0 =
      dim == 2 ? 1.0 / (2.0 * std::numbers::pi) : 1.0 / (4.0 * std::numbers::pi);
  double log_z = 0.0;
  double b_dot_d = 0.0;
  for (int i = 0; i < dim; ++i) b_dot_d += b.lambda[i] * mu[i];
  if (dim == 2) {
    log_z = log_z_2d(b.lambda[0]);
  } else {
    const double l1 = std::abs(b.reduced.lambda1);
    const double l2 = std::abs(b.reduced.lambda2);
    const int n_theta = resolved_phi_nodes(l1, 64);
    const int n_phi = resolved_phi_nodes(l2, 64);
    log_z = b.lambda[2] + sphere_moments(b.reduced, n_phi, n_theta).log_z;
  }
  return (-log_z - std::log(psi0) + b_dot_d) / psi0;
}

EntropyResult entropy_functionals(const SpectralGrid& grid, const RealField& c,
                                  const std::vector<RealField>& d, const ChebMap& map) {
  const int dim = grid.dim();
  const int nc = SymTensor::components(dim);
  const std::size_t npts = grid.real_size();
  const double psi0 =
      dim == 2 ? 1.0 / (2.0 * std::numbers::pi) : 1.0 / (4.0 * std::numbers::pi);
  double entropy = 0.0;
  double steric = 0.0;
  std::size_t excluded = 0;
#pragma omp parallel for reduction(+ : entropy, steric, excluded) schedule(dynamic, 64)
  for (std::size_t r = 0; r < npts; ++r) {
    SymTensor t;
    t.dim = dim;
    for (int k = 0; k < nc; ++k) t.v[k] = d[k][r];
    double dev2 = 0.0;
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) {
        const double e = t(i, j) - (i == j ? c[r] / dim : 0.0);
        dev2 += e * e;
      }
    }
    steric += dev2;
    try {
      if (!(c[r] > 0.0)) throw DomainError("non-positive concentration");
      for (int k = 0; k < nc; ++k) t.v[k] /= c[r];
      const EigenFrame frame = eigen_frame(t);
      entropy += c[r] * entropy_density(frame.mu, dim, map) + c[r] * std::log(c[r]) / psi0;
    } catch (const std::exception&) {
      ++excluded;
    }
  }
  const double cell = std::pow(grid.length(), dim) / static_cast<double>(npts);
  EntropyResult out;
  out.entropy = entropy * cell;
  out.steric = steric * cell;
  out.excluded = excluded;
  out.points = npts;
  out.valid = static_cast<double>(excluded) <= 1e-3 * static_cast<double>(npts);
  return out;
}

// ---------------------------------------------------------------------------
// Config files

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& text, const std::string& where) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && text[0] == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw FormatError(where + ": cannot parse '" + text + "' as a number");
  }
  return value;
}

std::string parse_string(const std::string& text) {
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
    return text.substr(1, text.size() - 2);
  }
  return text;
}

}  // namespace

SimConfig parse_config(std::istream& in, const std::string& source) {
  SimConfig c;
  using Setter = void (*)(SimConfig&, const std::string&, const std::string&);
  static const std::map<std::string, Setter> setters = {
      {"d", [](SimConfig& s, const std::string& v, const std::string& w) { s.d = parse_number<int>(v, w); }},
      {"n", [](SimConfig& s, const std::string& v, const std::string& w) { s.n = parse_number<int>(v, w); }},
      {"L", [](SimConfig& s, const std::string& v, const std::string& w) { s.L = parse_number<double>(v, w); }},
      {"dt", [](SimConfig& s, const std::string& v, const std::string& w) { s.dt = parse_number<double>(v, w); }},
      {"alpha", [](SimConfig& s, const std::string& v, const std::string& w) { s.alpha = parse_number<double>(v, w); }},
      {"beta", [](SimConfig& s, const std::string& v, const std::string& w) { s.beta = parse_number<double>(v, w); }},
      {"zeta", [](SimConfig& s, const std::string& v, const std::string& w) { s.zeta = parse_number<double>(v, w); }},
      {"dT", [](SimConfig& s, const std::string& v, const std::string& w) { s.dT = parse_number<double>(v, w); }},
      {"dR", [](SimConfig& s, const std::string& v, const std::string& w) { s.dR = parse_number<double>(v, w); }},
      {"M", [](SimConfig& s, const std::string& v, const std::string& w) { s.M = parse_number<int>(v, w); }},
      {"amplitude", [](SimConfig& s, const std::string& v, const std::string& w) { s.amplitude = parse_number<double>(v, w); }},
      {"modes", [](SimConfig& s, const std::string& v, const std::string& w) { s.modes = parse_number<int>(v, w); }},
      {"seed", [](SimConfig& s, const std::string& v, const std::string& w) { s.seed = parse_number<std::uint64_t>(v, w); }},
      {"t_end", [](SimConfig& s, const std::string& v, const std::string& w) { s.t_end = parse_number<double>(v, w); }},
      {"output_every", [](SimConfig& s, const std::string& v, const std::string& w) { s.output_every = parse_number<int>(v, w); }},
      {"output_dir", [](SimConfig& s, const std::string& v, const std::string&) { s.output_dir = parse_string(v); }},
      {"map", [](SimConfig& s, const std::string& v, const std::string&) { s.map = parse_string(v); }},
      {"map_cache", [](SimConfig& s, const std::string& v, const std::string&) { s.map_cache = parse_string(v); }},
      {"velocity_tol", [](SimConfig& s, const std::string& v, const std::string& w) { s.velocity_tol = parse_number<double>(v, w); }},
  };
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw FormatError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw FormatError(where + ": duplicate key '" + key + "'");
    it->second(c, value, where);
  }
  try {
    validate(c);
  } catch (const DomainError& e) {
    throw FormatError(source + ": " + e.what());
  }
  return c;
}

SimConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return parse_config(in, path.string());
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_config(std::ostream& out, const SimConfig& c) {
  out << "d = " << c.d << "\n"
      << "n = " << c.n << "\n"
      << "L = " << format_double(c.L) << "\n"
      << "dt = " << format_double(c.dt) << "\n"
      << "alpha = " << format_double(c.alpha) << "\n"
      << "beta = " << format_double(c.beta) << "\n"
      << "zeta = " << format_double(c.zeta) << "\n"
      << "dT = " << format_double(c.dT) << "\n"
      << "dR = " << format_double(c.dR) << "\n"
      << "M = " << c.M << "\n"
      << "amplitude = " << format_double(c.amplitude) << "\n"
      << "modes = " << c.modes << "\n"
      << "seed = " << c.seed << "\n"
      << "t_end = " << format_double(c.t_end) << "\n"
      << "output_every = " << c.output_every << "\n"
      << "output_dir = " << c.output_dir << "\n"
      << "map = " << c.map << "\n"
      << "map_cache = " << c.map_cache << "\n"
      << "velocity_tol = " << format_double(c.velocity_tol) << "\n";
}

// ---------------------------------------------------------------------------
// Spectrum CSV

void write_spectrum_csv(std::ostream& out, const ShellSpectrum& spectrum,
                        const std::vector<std::string>& metadata) {
  out << "# mode=" << (spectrum.mode == SpectrumMode::Mean ? "mean" : "sum-squared") << "\n";
  out << "# binning=nearest-integer |m| in lattice units 2pi/L\n";
  for (const std::string& m : metadata) out << "# " << m << "\n";
  out << "k,value\n";
  for (std::size_t i = 0; i < spectrum.k.size(); ++i) {
    out << spectrum.k[i] << "," << format_double(spectrum.value[i]) << "\n";
  }
}

ShellSpectrum read_spectrum_csv(std::istream& in) {
  ShellSpectrum s;
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "spectrum csv:" + std::to_string(lineno);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line == "# mode=sum-squared") s.mode = SpectrumMode::SumSquared;
      if (line == "# mode=mean") s.mode = SpectrumMode::Mean;
      continue;
    }
    if (!header) {
      if (line != "k,value") throw FormatError(where + ": expected header 'k,value'");
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(where + ": expected 'k,value'");
    s.k.push_back(parse_number<int>(line.substr(0, comma), where));
    s.value.push_back(parse_number<double>(line.substr(comma + 1), where));
  }
  if (!header) throw FormatError("spectrum csv: missing header");
  return s;
}

}  // namespace bingham
