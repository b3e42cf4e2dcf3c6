#include "bingham/nematic_sim.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

#include "bingham/errors.hpp"

namespace bingham {

static_assert(std::endian::native == std::endian::little,
              "snapshot I/O writes host-order doubles and assumes little-endian");

template <class T>
T* FftwAllocator<T>::allocate(std::size_t n) {
  void* p = fftw_malloc(n * sizeof(T));
  if (p == nullptr && n != 0) throw std::bad_alloc();
  return static_cast<T*>(p);
}

template <class T>
void FftwAllocator<T>::deallocate(T* p, std::size_t) noexcept {
  fftw_free(p);
}

template struct FftwAllocator<double>;
template struct FftwAllocator<Complex>;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// (i, j) index pairs of the stored components, upper triangle row-major.
struct ComponentTable {
  int count;
  int i[6];
  int j[6];
};

ComponentTable component_table(int d) {
  ComponentTable t{};
  t.count = 0;
  for (int a = 0; a < d; ++a) {
    for (int b = a; b < d; ++b) {
      t.i[t.count] = a;
      t.j[t.count] = b;
      ++t.count;
    }
  }
  return t;
}

fftw_complex* as_fftw(Complex* p) { return reinterpret_cast<fftw_complex*>(p); }

// i z without the overflow-checking complex multiply.
inline Complex times_i(Complex z) { return {-z.imag(), z.real()}; }

}  // namespace

// ---------------------------------------------------------------------------
// Grid

SpectralGrid::SpectralGrid(int dim, int n, double length, bool measure_plans)
    : dim_(dim), n_(n), length_(length) {
  if (dim != 2 && dim != 3) throw DomainError("SpectralGrid: dimension must be 2 or 3");
  if (n < 4 || n % 2 != 0) throw DomainError("SpectralGrid: n must be even and >= 4");
  if (!(length > 0.0)) throw DomainError("SpectralGrid: box length must be positive");

  const int half = n / 2 + 1;
  real_size_ = 1;
  for (int a = 0; a < dim; ++a) real_size_ *= static_cast<std::size_t>(n);
  spec_size_ = real_size_ / n * half;

  RealField in(real_size_);
  SpecField out(spec_size_);
  scratch_.resize(spec_size_);
  const unsigned flags = measure_plans ? FFTW_MEASURE : FFTW_ESTIMATE;
  int dims[3] = {n, n, n};
  plan_forward_ = fftw_plan_dft_r2c(dim, dims, in.data(), as_fftw(out.data()), flags);
  plan_inverse_ = fftw_plan_dft_c2r(dim, dims, as_fftw(out.data()), in.data(), flags);
  if (plan_forward_ == nullptr || plan_inverse_ == nullptr) {
    throw NumericalFailure("SpectralGrid: FFTW planning failed");
  }

  for (int a = 0; a < 3; ++a) {
    modes_[a].assign(spec_size_, 0);
    wavenumbers_[a].assign(spec_size_, 0.0);
  }
  k2_.assign(spec_size_, 0.0);
  multiplicity_.assign(spec_size_, 2.0);
  const double unit = kTwoPi / length;
  auto signed_mode = [n](int idx) { return idx <= n / 2 - 1 ? idx : idx - n; };
  for (std::size_t s = 0; s < spec_size_; ++s) {
    std::size_t rest = s;
    const int last = static_cast<int>(rest % half);
    rest /= half;
    int m[3] = {0, 0, 0};
    if (dim == 2) {
      m[0] = signed_mode(static_cast<int>(rest));
      m[1] = last;
    } else {
      m[1] = signed_mode(static_cast<int>(rest % n));
      m[0] = signed_mode(static_cast<int>(rest / n));
      m[2] = last;
    }
    double k2 = 0.0;
    for (int a = 0; a < dim; ++a) {
      modes_[a][s] = m[a];
      wavenumbers_[a][s] = unit * m[a];
      k2 += wavenumbers_[a][s] * wavenumbers_[a][s];
    }
    k2_[s] = k2;
    if (last == 0 || last == n / 2) multiplicity_[s] = 1.0;
  }
}

SpectralGrid::~SpectralGrid() {
  if (plan_forward_) fftw_destroy_plan(static_cast<fftw_plan>(plan_forward_));
  if (plan_inverse_) fftw_destroy_plan(static_cast<fftw_plan>(plan_inverse_));
}

void SpectralGrid::forward(const double* in, Complex* out) const {
  fftw_execute_dft_r2c(static_cast<fftw_plan>(plan_forward_), const_cast<double*>(in),
                       as_fftw(out));
  const double scale = 1.0 / static_cast<double>(real_size_);
  for (std::size_t s = 0; s < spec_size_; ++s) out[s] *= scale;
}

void SpectralGrid::inverse(const Complex* in, double* out) const {
  // Multi-dimensional c2r overwrites its input.
  std::copy(in, in + spec_size_, scratch_.begin());
  fftw_execute_dft_c2r(static_cast<fftw_plan>(plan_inverse_), as_fftw(scratch_.data()), out);
}

double SpectralGrid::coordinate(std::size_t r, int axis) const {
  std::size_t idx = r;
  for (int a = dim_ - 1; a > axis; --a) idx /= static_cast<std::size_t>(n_);
  return length_ * static_cast<double>(idx % static_cast<std::size_t>(n_)) / n_;
}

void dealias(const SpectralGrid& grid, Complex* spectrum) {
  const int n = grid.n();
  for (std::size_t s = 0; s < grid.spec_size(); ++s) {
    for (int a = 0; a < grid.dim(); ++a) {
      if (3 * std::abs(grid.mode(s, a)) > n) {
        spectrum[s] = 0.0;
        break;
      }
    }
  }
}

std::vector<SpecField> stokes_solve(const SpectralGrid& grid, const std::vector<SpecField>& sigma) {
  const int d = grid.dim();
  const ComponentTable ct = component_table(d);
  if (static_cast<int>(sigma.size()) != ct.count) {
    throw DomainError("stokes_solve: wrong number of stress components");
  }
  std::vector<SpecField> u(d, grid.spec_field());
  for (std::size_t s = 0; s < grid.spec_size(); ++s) {
    const double k2 = grid.k2(s);
    if (k2 == 0.0) continue;
    double k[3] = {0.0, 0.0, 0.0};
    for (int a = 0; a < d; ++a) k[a] = grid.wavenumber(s, a);
    Complex f[3] = {0.0, 0.0, 0.0};
    for (int c = 0; c < ct.count; ++c) {
      const Complex v = sigma[c][s];
      f[ct.i[c]] += k[ct.j[c]] * v;
      if (ct.i[c] != ct.j[c]) f[ct.j[c]] += k[ct.i[c]] * v;
    }
    Complex kf = 0.0;
    for (int a = 0; a < d; ++a) kf += k[a] * f[a];
    for (int a = 0; a < d; ++a) u[a][s] = times_i((f[a] - k[a] * kf / k2) / k2);
  }
  return u;
}

SymTensor compute_stress(const SymTensor& d, const SymTensor& s_dot_t, double zeta, double alpha,
                         double beta) {
  const int n = d.dim;
  SymTensor out;
  out.dim = n;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double dd = 0.0;
      for (int k = 0; k < n; ++k) dd += d(i, k) * d(k, j);
      out(i, j) = alpha * d(i, j) + beta * s_dot_t(i, j) - 2.0 * zeta * beta * dd;
    }
  }
  return out;
}

void validate(const SimConfig& c) {
  auto fail = [](const std::string& what) { throw DomainError("config: " + what); };
  if (c.d != 2 && c.d != 3) fail("d must be 2 or 3");
  if (c.n < 4 || c.n % 2 != 0) fail("n must be even and >= 4");
  if (!(c.L > 0.0)) fail("L must be positive");
  if (!(c.dt > 0.0)) fail("dt must be positive");
  if (!(c.dT >= 0.0)) fail("dT must be >= 0");
  if (!(c.dR >= 0.0)) fail("dR must be >= 0");
  if (c.M < 4) fail("M must be >= 4");
  if (!(c.amplitude >= 0.0)) fail("amplitude must be >= 0");
  if (c.modes < 0) fail("modes must be >= 0");
  if (!(c.t_end >= 0.0)) fail("t_end must be >= 0");
  if (c.output_every < 0) fail("output_every must be >= 0");
  if (!(c.velocity_tol > 0.0)) fail("velocity_tol must be positive");
  if (!std::isfinite(c.alpha) || !std::isfinite(c.beta) || !std::isfinite(c.zeta)) {
    fail("alpha, beta and zeta must be finite");
  }
}

// ---------------------------------------------------------------------------
// Simulator

NematicSim::NematicSim(const SimConfig& config, std::shared_ptr<const ChebMap> map,
                       bool measure_plans)
    : config_(config), map_(std::move(map)) {
  validate(config_);
  if (!map_) throw DomainError("NematicSim: closure map is required");
  const bool map_is_2d = std::holds_alternative<ChebMap1D>(*map_);
  if (map_is_2d != (config_.d == 2)) {
    throw DomainError("NematicSim: map dimension does not match d");
  }
  grid_ = std::make_unique<SpectralGrid>(config_.d, config_.n, config_.L, measure_plans);
  c_hat_ = grid_->spec_field();
  d_hat_.assign(components(), grid_->spec_field());
  u_hat_.assign(config_.d, grid_->spec_field());
  closure_.resize(grid_->real_size());
}

void NematicSim::set_state(const RealField& c, const std::vector<RealField>& d, double t) {
  if (c.size() != grid_->real_size() || static_cast<int>(d.size()) != components()) {
    throw DomainError("set_state: field sizes do not match the grid");
  }
  grid_->forward(c.data(), c_hat_.data());
  dealias(*grid_, c_hat_.data());
  for (int k = 0; k < components(); ++k) {
    if (d[k].size() != grid_->real_size()) throw DomainError("set_state: field size mismatch");
    grid_->forward(d[k].data(), d_hat_[k].data());
    dealias(*grid_, d_hat_[k].data());
  }
  for (auto& u : u_hat_) std::fill(u.begin(), u.end(), Complex(0.0, 0.0));
  time_ = t;
  steps_ = 0;
  has_history_ = false;
}

namespace {

// Lattice vectors ordered by length, then lexicographically, skipping one of
// each +-m pair.
std::vector<std::array<int, 3>> lowest_lattice_modes(int d, int count) {
  std::vector<std::array<int, 3>> out;
  const int r = 4;
  for (int a = -r; a <= r; ++a) {
    for (int b = -r; b <= r; ++b) {
      for (int c = (d == 3 ? -r : 0); c <= (d == 3 ? r : 0); ++c) {
        std::array<int, 3> m{a, b, c};
        // keep the representative whose first nonzero entry is positive
        int first = 0;
        for (int x : m) {
          if (x != 0) {
            first = x;
            break;
          }
        }
        if (first > 0) out.push_back(m);
      }
    }
  }
  auto len2 = [](const std::array<int, 3>& m) { return m[0] * m[0] + m[1] * m[1] + m[2] * m[2]; };
  std::stable_sort(out.begin(), out.end(), [&](const auto& x, const auto& y) {
    if (len2(x) != len2(y)) return len2(x) < len2(y);
    return x > y;
  });
  if (static_cast<int>(out.size()) > count) out.resize(count);
  return out;
}

}  // namespace

void NematicSim::init_planewave() {
  const int d = config_.d;
  const ComponentTable ct = component_table(d);
  const std::size_t npts = grid_->real_size();
  const auto modes = lowest_lattice_modes(d, config_.modes);

  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, kTwoPi);
  struct Wave {
    std::array<int, 3> m;
    SymTensor a;
    double phase;
  };
  std::vector<Wave> waves;
  for (const auto& m : modes) {
    Wave w{m, SymTensor{}, 0.0};
    w.a.dim = d;
    for (int c = 0; c < ct.count; ++c) w.a.v[c] = normal(rng);
    const double mean = w.a.trace() / d;
    for (int i = 0; i < d; ++i) w.a(i, i) -= mean;
    double norm2 = 0.0;
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) norm2 += w.a(i, j) * w.a(i, j);
    }
    for (int c = 0; c < ct.count; ++c) w.a.v[c] /= std::sqrt(norm2);
    w.phase = uniform(rng);
    waves.push_back(w);
  }

  RealField c = grid_->real_field();
  std::vector<RealField> dfield(ct.count, grid_->real_field());
  double worst = 0.0;  // most negative eigenvalue of the unscaled perturbation
  for (std::size_t r = 0; r < npts; ++r) {
    SymTensor pert;
    pert.dim = d;
    for (const Wave& w : waves) {
      double phase = w.phase;
      for (int a = 0; a < d; ++a) phase += kTwoPi * w.m[a] * grid_->coordinate(r, a) / config_.L;
      const double amp = std::cos(phase);
      for (int k = 0; k < ct.count; ++k) pert.v[k] += amp * w.a.v[k];
    }
    c[r] = 1.0;
    for (int k = 0; k < ct.count; ++k) {
      dfield[k][r] = config_.amplitude * pert.v[k] + (ct.i[k] == ct.j[k] ? 1.0 / d : 0.0);
    }
    if (!waves.empty()) worst = std::min(worst, eigen_frame(pert).mu[d - 1]);
  }
  if (worst < 0.0 && config_.amplitude * -worst > 1.0 / d) {
    std::ostringstream os;
    os.precision(6);
    os << "init_planewave: amplitude " << config_.amplitude
       << " leaves the feasible set; the largest feasible amplitude is " << (1.0 / d) / -worst;
    throw DomainError(os.str());
  }
  set_state(c, dfield, 0.0);
}

RealField NematicSim::c_field() const {
  RealField c = grid_->real_field();
  grid_->inverse(c_hat_.data(), c.data());
  return c;
}

std::vector<RealField> NematicSim::d_fields() const {
  std::vector<RealField> out(components(), grid_->real_field());
  for (int k = 0; k < components(); ++k) grid_->inverse(d_hat_[k].data(), out[k].data());
  return out;
}

double NematicSim::max_trace_error() const {
  const RealField c = c_field();
  const auto d = d_fields();
  const ComponentTable ct = component_table(config_.d);
  double worst = 0.0;
  for (std::size_t r = 0; r < c.size(); ++r) {
    double tr = 0.0;
    for (int k = 0; k < ct.count; ++k) {
      if (ct.i[k] == ct.j[k]) tr += d[k][r];
    }
    worst = std::max(worst, std::abs(tr - c[r]));
  }
  return worst;
}

void NematicSim::prepare_closure(const RealField& c, const std::vector<RealField>& d,
                                 StepStats* stats) {
  const int dim = config_.d;
  const int nc = components();
  const std::size_t npts = grid_->real_size();
  constexpr double kFeasibility = 1e-8;
  double min_eig = 1.0;
  bool failed = false;
  std::string message;

  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (npts + kChunk - 1) / kChunk;

#pragma omp parallel for reduction(min : min_eig) schedule(static)
  for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
    const std::size_t begin = chunk * kChunk;
    const std::size_t end = std::min(npts, begin + kChunk);
    std::array<std::array<double, 3>, kChunk> mu;
    std::array<DiagFourthMoment, kChunk> moments;
    std::size_t r = begin;
    try {
      for (; r < end; ++r) {
        const double cr = c[r];
        if (!(cr > 0.0)) throw DomainError("non-positive concentration");
        SymTensor q;
        q.dim = dim;
        for (int k = 0; k < nc; ++k) q.v[k] = d[k][r] / cr;
        closure_[r].frame = eigen_frame(q);
        mu[r - begin] = closure_[r].frame.mu;
        min_eig = std::min(min_eig, mu[r - begin][dim - 1]);
      }
      const std::size_t count = end - begin;
      closure_moments_batch(std::span(mu.data(), count), dim, *map_,
                            std::span(moments.data(), count), kFeasibility);
      for (r = begin; r < end; ++r) {
        closure_[r].frame.mu = mu[r - begin];
        closure_[r].s = moments[r - begin];
      }
    } catch (const std::exception& e) {
#pragma omp critical
      {
        if (!failed) {
          failed = true;
          std::ostringstream os;
          os << "closure failed near grid point " << r << ", t = " << time_ << ": " << e.what();
          message = os.str();
        }
      }
    }
  }
  if (failed) throw NumericalFailure(message);
  if (stats) stats->min_eigenvalue = min_eig;
}

std::vector<SpecField> NematicSim::rigidity_velocity(const std::vector<SpecField>& v_hat) {
  const int dim = config_.d;
  const ComponentTable ct = component_table(dim);
  const std::size_t npts = grid_->real_size();

  // E(v) on the grid
  std::vector<RealField> e(ct.count, grid_->real_field());
  SpecField work = grid_->spec_field();
  for (int k = 0; k < ct.count; ++k) {
    const int i = ct.i[k];
    const int j = ct.j[k];
    for (std::size_t s = 0; s < grid_->spec_size(); ++s) {
      work[s] = times_i(0.5 * (grid_->wavenumber(s, j) * v_hat[i][s] +
                                    grid_->wavenumber(s, i) * v_hat[j][s]));
    }
    grid_->inverse(work.data(), e[k].data());
  }
  std::vector<RealField> sigma(ct.count, grid_->real_field());
  const double beta = config_.beta;
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < npts; ++r) {
    SymTensor t;
    t.dim = dim;
    for (int k = 0; k < ct.count; ++k) t.v[k] = e[k][r];
    const SymTensor st = contract_rotate(closure_[r].frame, closure_[r].s, t);
    const double scale = beta * closure_c_[r];
    for (int k = 0; k < ct.count; ++k) sigma[k][r] = scale * st.v[k];
  }
  std::vector<SpecField> sigma_hat(ct.count, grid_->spec_field());
  for (int k = 0; k < ct.count; ++k) {
    grid_->forward(sigma[k].data(), sigma_hat[k].data());
    dealias(*grid_, sigma_hat[k].data());
  }
  return stokes_solve(*grid_, sigma_hat);
}

namespace {

double energy_dot(const SpectralGrid& grid, const std::vector<SpecField>& a,
                  const std::vector<SpecField>& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t s = 0; s < grid.spec_size(); ++s) {
      sum += grid.multiplicity(s) * grid.k2(s) * (a[i][s].real() * b[i][s].real() +
                                                  a[i][s].imag() * b[i][s].imag());
    }
  }
  return sum;
}

void axpy(double a, const std::vector<SpecField>& x, std::vector<SpecField>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t s = 0; s < x[i].size(); ++s) y[i][s] += a * x[i][s];
  }
}

}  // namespace

std::vector<SpecField> NematicSim::velocity_from_state(const RealField& c,
                                                       const std::vector<RealField>& d,
                                                       StepStats* stats) {
  const int dim = config_.d;
  const int nc = components();
  const std::size_t npts = grid_->real_size();
  prepare_closure(c, d, stats);
  closure_c_ = c;

  // Part of the stress that does not depend on u.
  std::vector<RealField> sigma(nc, grid_->real_field());
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < npts; ++r) {
    SymTensor dr;
    dr.dim = dim;
    for (int k = 0; k < nc; ++k) dr.v[k] = d[k][r];
    SymTensor t = dr;
    for (int k = 0; k < nc; ++k) t.v[k] *= 2.0 * config_.zeta;
    SymTensor st = contract_rotate(closure_[r].frame, closure_[r].s, t);
    for (int k = 0; k < nc; ++k) st.v[k] *= c[r];
    const SymTensor s0 = compute_stress(dr, st, config_.zeta, config_.alpha, config_.beta);
    for (int k = 0; k < nc; ++k) sigma[k][r] = s0.v[k];
  }
  std::vector<SpecField> sigma_hat(nc, grid_->spec_field());
  for (int k = 0; k < nc; ++k) {
    grid_->forward(sigma[k].data(), sigma_hat[k].data());
    dealias(*grid_, sigma_hat[k].data());
  }
  const std::vector<SpecField> u0 = stokes_solve(*grid_, sigma_hat);

  int iterations = 0;
  std::vector<SpecField> u = u0;
  const double rhs_norm = std::sqrt(energy_dot(*grid_, u0, u0));
  if (config_.beta != 0.0 && rhs_norm > 0.0) {
    // (I - G) u = u0 with G = rigidity_velocity, which is symmetric and
    // negative semidefinite in the energy inner product; plain CG applies.
    u = u_hat_;
    auto apply = [&](const std::vector<SpecField>& v) {
      std::vector<SpecField> g = rigidity_velocity(v);
      std::vector<SpecField> out = v;
      axpy(-1.0, g, out);
      return out;
    };
    std::vector<SpecField> r = u0;
    axpy(-1.0, apply(u), r);
    std::vector<SpecField> p = r;
    double rr = energy_dot(*grid_, r, r);
    const double target = config_.velocity_tol * rhs_norm;
    constexpr int kMaxIterations = 200;
    while (std::sqrt(rr) > target) {
      if (iterations == kMaxIterations) {
        std::ostringstream os;
        os << "velocity solve: no convergence in " << kMaxIterations
           << " iterations (relative residual " << std::sqrt(rr) / rhs_norm << ", t = " << time_
           << ")";
        throw NumericalFailure(os.str());
      }
      const std::vector<SpecField> ap = apply(p);
      const double alpha = rr / energy_dot(*grid_, p, ap);
      axpy(alpha, p, u);
      axpy(-alpha, ap, r);
      const double rr_next = energy_dot(*grid_, r, r);
      for (std::size_t i = 0; i < p.size(); ++i) {
        for (std::size_t s = 0; s < p[i].size(); ++s) p[i][s] = r[i][s] + (rr_next / rr) * p[i][s];
      }
      rr = rr_next;
      ++iterations;
    }
  }
  if (stats) stats->velocity_iterations = iterations;
  return u;
}

const std::vector<SpecField>& NematicSim::solve_velocity() {
  u_hat_ = velocity_from_state(c_field(), d_fields(), nullptr);
  return u_hat_;
}

Tendency NematicSim::rhs_explicit(StepStats* stats) {
  const int dim = config_.d;
  const ComponentTable ct = component_table(dim);
  const int nc = ct.count;
  const std::size_t npts = grid_->real_size();
  const std::size_t nspec = grid_->spec_size();

  const RealField c = c_field();
  const std::vector<RealField> d = d_fields();
  StepStats local;
  u_hat_ = velocity_from_state(c, d, &local);

  SpecField work = grid_->spec_field();
  auto derivative = [&](const SpecField& f, int axis, RealField& out) {
    for (std::size_t s = 0; s < nspec; ++s) work[s] = times_i(grid_->wavenumber(s, axis) * f[s]);
    grid_->inverse(work.data(), out.data());
  };

  std::vector<RealField> u(dim, grid_->real_field());
  for (int a = 0; a < dim; ++a) grid_->inverse(u_hat_[a].data(), u[a].data());
  // grad_u[i * dim + j] = d u_i / d x_j
  std::vector<RealField> grad_u(dim * dim, grid_->real_field());
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) derivative(u_hat_[i], j, grad_u[i * dim + j]);
  }
  RealField advect_c(npts, 0.0);
  {
    RealField g = grid_->real_field();
    for (int a = 0; a < dim; ++a) {
      derivative(c_hat_, a, g);
      for (std::size_t r = 0; r < npts; ++r) advect_c[r] += u[a][r] * g[r];
    }
  }
  std::vector<RealField> advect_d(nc, RealField(npts, 0.0));
  {
    RealField g = grid_->real_field();
    for (int k = 0; k < nc; ++k) {
      for (int a = 0; a < dim; ++a) {
        derivative(d_hat_[k], a, g);
        for (std::size_t r = 0; r < npts; ++r) advect_d[k][r] += u[a][r] * g[r];
      }
    }
  }

  RealField nl_c(npts);
  std::vector<RealField> nl_d(nc, grid_->real_field());
  const double zeta = config_.zeta;
  double max_speed = 0.0;
#pragma omp parallel for schedule(static) reduction(max : max_speed)
  for (std::size_t r = 0; r < npts; ++r) {
    double gu[3][3] = {};
    double speed2 = 0.0;
    for (int i = 0; i < dim; ++i) {
      speed2 += u[i][r] * u[i][r];
      for (int j = 0; j < dim; ++j) gu[i][j] = grad_u[i * dim + j][r];
    }
    max_speed = std::max(max_speed, std::sqrt(speed2));
    SymTensor dr;
    dr.dim = dim;
    for (int k = 0; k < nc; ++k) dr.v[k] = d[k][r];
    SymTensor t;
    t.dim = dim;
    for (int i = 0; i < dim; ++i) {
      for (int j = i; j < dim; ++j) t(i, j) = 0.5 * (gu[i][j] + gu[j][i]) + 2.0 * zeta * dr(i, j);
    }
    const SymTensor st = contract_rotate(closure_[r].frame, closure_[r].s, t);
    nl_c[r] = -advect_c[r];
    for (int k = 0; k < nc; ++k) {
      const int i = ct.i[k];
      const int j = ct.j[k];
      double stretch = 0.0;
      double dd = 0.0;
      for (int m = 0; m < dim; ++m) {
        stretch += gu[i][m] * dr(m, j) + dr(i, m) * gu[j][m];
        dd += dr(i, m) * dr(m, j);
      }
      nl_d[k][r] = -advect_d[k][r] + stretch - 2.0 * c[r] * st.v[k] + 4.0 * zeta * dd;
    }
  }

  Tendency out;
  out.c = grid_->spec_field();
  grid_->forward(nl_c.data(), out.c.data());
  dealias(*grid_, out.c.data());
  out.d.assign(nc, grid_->spec_field());
  for (int k = 0; k < nc; ++k) {
    grid_->forward(nl_d[k].data(), out.d[k].data());
    dealias(*grid_, out.d[k].data());
  }
  auto finite = [](const SpecField& f) {
    for (const Complex& z : f) {
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    }
    return true;
  };
  bool ok = finite(out.c);
  for (const auto& f : out.d) ok = ok && finite(f);
  if (!ok) {
    std::ostringstream os;
    os << "non-finite tendency at t = " << time_;
    throw NumericalFailure(os.str());
  }

  double max_div = 0.0;
  for (std::size_t s = 0; s < nspec; ++s) {
    Complex div = 0.0;
    for (int a = 0; a < dim; ++a) div += grid_->wavenumber(s, a) * u_hat_[a][s];
    max_div = std::max(max_div, std::abs(div));
  }
  local.max_divergence = max_div;
  local.max_speed = max_speed;
  local.cfl_warning = max_speed * config_.dt / (config_.L / config_.n) > 1.0;
  if (stats) *stats = local;
  return out;
}

void NematicSim::implicit_solve(const SpecField& c_rhs, const std::vector<SpecField>& d_rhs,
                                double gamma, double dt_scale) {
  const ComponentTable ct = component_table(config_.d);
  const double rotational = 2.0 * config_.d * config_.dR;
  for (std::size_t s = 0; s < grid_->spec_size(); ++s) {
    const double diff = config_.dT * grid_->k2(s);
    c_hat_[s] = c_rhs[s] / (gamma + dt_scale * diff);
    // The isotropic relaxation source uses the new concentration so that
    // trace(D) and c stay equal to rounding.
    const Complex source = dt_scale * 2.0 * config_.dR * c_hat_[s];
    const double denom = gamma + dt_scale * (diff + rotational);
    for (int k = 0; k < ct.count; ++k) {
      d_hat_[k][s] = (d_rhs[k][s] + (ct.i[k] == ct.j[k] ? source : Complex(0.0, 0.0))) / denom;
    }
  }
  dealias(*grid_, c_hat_.data());
  for (auto& f : d_hat_) dealias(*grid_, f.data());
}

StepStats NematicSim::step() {
  const double dt = config_.dt;
  StepStats stats;
  Tendency tend = rhs_explicit(&stats);
  const int nc = components();
  SpecField c_rhs = c_hat_;
  std::vector<SpecField> d_rhs = d_hat_;
  double gamma = 1.0;
  if (!has_history_) {
    for (std::size_t s = 0; s < c_rhs.size(); ++s) c_rhs[s] += dt * tend.c[s];
    for (int k = 0; k < nc; ++k) {
      for (std::size_t s = 0; s < c_rhs.size(); ++s) d_rhs[k][s] += dt * tend.d[k][s];
    }
  } else {
    gamma = 1.5;
    for (std::size_t s = 0; s < c_rhs.size(); ++s) {
      c_rhs[s] = 2.0 * c_hat_[s] - 0.5 * c_prev_[s] +
                 dt * (2.0 * tend.c[s] - tendency_prev_.c[s]);
    }
    for (int k = 0; k < nc; ++k) {
      for (std::size_t s = 0; s < c_rhs.size(); ++s) {
        d_rhs[k][s] = 2.0 * d_hat_[k][s] - 0.5 * d_prev_[k][s] +
                      dt * (2.0 * tend.d[k][s] - tendency_prev_.d[k][s]);
      }
    }
  }
  c_prev_ = c_hat_;
  d_prev_ = d_hat_;
  tendency_prev_ = std::move(tend);
  implicit_solve(c_rhs, d_rhs, gamma, dt);
  has_history_ = true;
  ++steps_;
  time_ += dt;
  return stats;
}

void NematicSim::run(double t_end,
                     const std::function<void(const NematicSim&, const StepStats&)>& observer) {
  const double dt = config_.dt;
  const long total = std::lround((t_end - time_) / dt);
  for (long i = 0; i < total; ++i) {
    const StepStats stats = step();
    if (observer) observer(*this, stats);
  }
}

// ---------------------------------------------------------------------------
// Snapshots

Snapshot make_snapshot(const NematicSim& sim) {
  Snapshot snap;
  snap.d = sim.config().d;
  snap.n = sim.config().n;
  snap.L = sim.config().L;
  snap.t = sim.time();
  snap.dt = sim.config().dt;
  const RealField c = sim.c_field();
  snap.c.assign(c.begin(), c.end());
  for (const RealField& f : sim.d_fields()) snap.D.emplace_back(f.begin(), f.end());
  return snap;
}

namespace {

constexpr char kSnapshotMagic[4] = {'A', 'N', 'F', '1'};

template <class T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw FormatError("snapshot: truncated header");
  return value;
}

}  // namespace

void write_snapshot(const Snapshot& snap, const std::filesystem::path& path) {
  const std::size_t npts = static_cast<std::size_t>(std::pow(snap.n, snap.d));
  if (snap.c.size() != npts || static_cast<int>(snap.D.size()) != SymTensor::components(snap.d)) {
    throw DomainError("write_snapshot: inconsistent field sizes");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kSnapshotMagic, 4);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(snap.d));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(snap.n));
  put(os, snap.L);
  put(os, snap.t);
  put(os, snap.dt);
  os.write(reinterpret_cast<const char*>(snap.c.data()),
           static_cast<std::streamsize>(npts * sizeof(double)));
  for (const auto& f : snap.D) {
    if (f.size() != npts) throw DomainError("write_snapshot: inconsistent field sizes");
    os.write(reinterpret_cast<const char*>(f.data()),
             static_cast<std::streamsize>(npts * sizeof(double)));
  }
  if (!os) throw FormatError("write failed for " + path.string());
}

Snapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kSnapshotMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a snapshot file");
  }
  Snapshot snap;
  snap.d = static_cast<int>(get<std::uint32_t>(is));
  snap.n = static_cast<int>(get<std::uint32_t>(is));
  if ((snap.d != 2 && snap.d != 3) || snap.n < 1 || snap.n > 4096) {
    throw FormatError(path.string() + ": bad grid header");
  }
  snap.L = get<double>(is);
  snap.t = get<double>(is);
  snap.dt = get<double>(is);
  const std::size_t npts = static_cast<std::size_t>(std::pow(snap.n, snap.d));
  auto read_field = [&](std::vector<double>& f) {
    f.resize(npts);
    is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(npts * sizeof(double)));
    if (!is) throw FormatError(path.string() + ": truncated field data");
  };
  read_field(snap.c);
  snap.D.resize(SymTensor::components(snap.d));
  for (auto& f : snap.D) read_field(f);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after field data");
  }
  return snap;
}

std::shared_ptr<const ChebMap> obtain_map(const SimConfig& config) {
  auto check = [&](const ChebMap& map, const std::string& where) {
    const bool is2d = std::holds_alternative<ChebMap1D>(map);
    if (is2d != (config.d == 2)) {
      throw FormatError(where + ": map dimension does not match d = " + std::to_string(config.d));
    }
  };
  if (!config.map.empty()) {
    auto map = std::make_shared<ChebMap>(load_map(config.map));
    check(*map, config.map);
    return map;
  }
  const std::filesystem::path cached = std::filesystem::path(config.map_cache) /
                                       ("bingham_d" + std::to_string(config.d) + "_M" +
                                        std::to_string(config.M) + ".map");
  if (std::filesystem::exists(cached)) {
    auto map = std::make_shared<ChebMap>(load_map(cached));
    check(*map, cached.string());
    return map;
  }
  std::shared_ptr<ChebMap> map;
  if (config.d == 2) {
    map = std::make_shared<ChebMap>(fit_map_2d(config.M));
  } else {
    map = std::make_shared<ChebMap>(fit_map_3d(config.M));
  }
  std::filesystem::create_directories(cached.parent_path().empty() ? "." : cached.parent_path());
  save_map(*map, cached);
  return map;
}

}  // namespace bingham
