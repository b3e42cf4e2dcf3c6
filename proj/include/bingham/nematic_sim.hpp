#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bingham/cheb_map.hpp"
#include "bingham/tensor_frame.hpp"

namespace bingham {

using Complex = std::complex<double>;

/// std::allocator replacement returning FFTW-aligned storage.
template <class T>
struct FftwAllocator {
  using value_type = T;
  FftwAllocator() = default;
  template <class U>
  FftwAllocator(const FftwAllocator<U>&) {}
  T* allocate(std::size_t n);
  void deallocate(T* p, std::size_t) noexcept;
  template <class U>
  bool operator==(const FftwAllocator<U>&) const {
    return true;
  }
};

using RealField = std::vector<double, FftwAllocator<double>>;
using SpecField = std::vector<Complex, FftwAllocator<Complex>>;

/// Periodic grid of n^d points on [0, L)^d with real-to-complex transforms.
/// The spectral layout is the FFTW half-complex one: the last axis keeps
/// indices 0..n/2. `forward` divides by n^d, so index 0 holds the mean.
class SpectralGrid {
 public:
  SpectralGrid(int dim, int n, double length, bool measure_plans = false);
  ~SpectralGrid();
  SpectralGrid(const SpectralGrid&) = delete;
  SpectralGrid& operator=(const SpectralGrid&) = delete;

  int dim() const { return dim_; }
  int n() const { return n_; }
  double length() const { return length_; }
  std::size_t real_size() const { return real_size_; }
  std::size_t spec_size() const { return spec_size_; }

  RealField real_field() const { return RealField(real_size_, 0.0); }
  SpecField spec_field() const { return SpecField(spec_size_, Complex(0.0, 0.0)); }

  void forward(const double* in, Complex* out) const;
  /// Does not modify `in`.
  void inverse(const Complex* in, double* out) const;

  /// Signed integer lattice index of spectral entry s along `axis`.
  int mode(std::size_t s, int axis) const { return modes_[axis][s]; }
  /// Physical wavenumber 2 pi mode / L.
  double wavenumber(std::size_t s, int axis) const { return wavenumbers_[axis][s]; }
  double k2(std::size_t s) const { return k2_[s]; }
  /// 1 for self-conjugate entries of the half spectrum, 2 for the rest, so
  /// sums over the half spectrum equal sums over the full one.
  double multiplicity(std::size_t s) const { return multiplicity_[s]; }

  /// Physical coordinate of real-grid entry r along `axis`.
  double coordinate(std::size_t r, int axis) const;

 private:
  int dim_;
  int n_;
  double length_;
  std::size_t real_size_;
  std::size_t spec_size_;
  void* plan_forward_ = nullptr;
  void* plan_inverse_ = nullptr;
  mutable SpecField scratch_;
  std::array<std::vector<int>, 3> modes_;
  std::array<std::vector<double>, 3> wavenumbers_;
  std::vector<double> k2_;
  std::vector<double> multiplicity_;
};

/// Zeroes every spectral entry with some |mode| > n/3.
void dealias(const SpectralGrid& grid, Complex* spectrum);

/// u^(k) = (I - k k^T/|k|^2)(i k . Sigma^(k)) / |k|^2, u^(0) = 0. `sigma`
/// holds the SymTensor components in upper-triangle order.
std::vector<SpecField> stokes_solve(const SpectralGrid& grid, const std::vector<SpecField>& sigma);

/// Extra stress alpha D + beta S:T - 2 zeta beta D.D at one point, with
/// S:T = S_B : (E + 2 zeta D) already contracted.
SymTensor compute_stress(const SymTensor& d, const SymTensor& s_dot_t, double zeta, double alpha,
                         double beta);

struct SimConfig {
  int d = 3;
  int n = 64;
  double L = 15.0;
  double dt = 0.05;
  double alpha = -1.0;
  double beta = 0.8;
  double zeta = 1.0;
  double dT = 0.1;
  double dR = 0.1;
  int M = 80;
  /// Plane-wave perturbation: amplitude, number of lattice modes, phase seed.
  double amplitude = 1e-2;
  int modes = 3;
  std::uint64_t seed = 1;
  double t_end = 50.0;
  /// Steps between snapshots/spectra; 0 writes only the final state.
  int output_every = 0;
  std::string output_dir = "out";
  /// Coefficient file; empty means fit (or reuse from map_cache) at degree M.
  std::string map;
  std::string map_cache = "maps";
  /// Relative energy-norm tolerance of the velocity solve.
  double velocity_tol = 1e-12;
};

/// Throws DomainError naming the first invalid field.
void validate(const SimConfig& config);

/// Explicit tendencies of one state, spectral and dealiased.
struct Tendency {
  SpecField c;
  std::vector<SpecField> d;
};

struct StepStats {
  int velocity_iterations = 0;
  double max_divergence = 0.0;  // max |k . u^| over modes
  double max_speed = 0.0;
  double min_eigenvalue = 0.0;  // of D/c before the feasibility projection
  bool cfl_warning = false;
};

/// Coarse-grained active nematic on a periodic box.
class NematicSim {
 public:
  NematicSim(const SimConfig& config, std::shared_ptr<const ChebMap> map,
             bool measure_plans = false);

  const SimConfig& config() const { return config_; }
  const SpectralGrid& grid() const { return *grid_; }
  int components() const { return SymTensor::components(config_.d); }

  double time() const { return time_; }
  long steps_taken() const { return steps_; }

  /// c = 1, D = I/d + eps sum_k A_k cos(k.x + phase_k) with trace-free A_k.
  void init_planewave();
  /// Sets the state from physical fields (c, then D components).
  void set_state(const RealField& c, const std::vector<RealField>& d, double t = 0.0);

  /// One SBDF2 step (IMEX Euler for the first).
  StepStats step();

  /// Steps until t_end; `observer` runs after every step.
  void run(double t_end, const std::function<void(const NematicSim&, const StepStats&)>& observer =
                             {});

  // Spectral state, dealiased.
  const SpecField& c_hat() const { return c_hat_; }
  const std::vector<SpecField>& d_hat() const { return d_hat_; }
  /// Velocity from the most recent tendency evaluation.
  const std::vector<SpecField>& u_hat() const { return u_hat_; }

  RealField c_field() const;
  std::vector<RealField> d_fields() const;
  /// Recomputes u for the current state and returns it.
  const std::vector<SpecField>& solve_velocity();

  /// Explicit tendencies at the current state (updates u_hat()).
  Tendency rhs_explicit(StepStats* stats = nullptr);

  /// Clears the SBDF2 history so the next step is an IMEX Euler step.
  void reset_history() { has_history_ = false; }

  double max_trace_error() const;

 private:
  struct PointClosure {
    EigenFrame frame;
    DiagFourthMoment s;
  };

  void prepare_closure(const RealField& c, const std::vector<RealField>& d, StepStats* stats);
  /// Stokes velocity for beta c S:E(v) from the stored closure frames.
  std::vector<SpecField> rigidity_velocity(const std::vector<SpecField>& v_hat);
  std::vector<SpecField> velocity_from_state(const RealField& c, const std::vector<RealField>& d,
                                             StepStats* stats);
  void implicit_solve(const SpecField& c_rhs, const std::vector<SpecField>& d_rhs, double gamma,
                      double dt_scale);

  SimConfig config_;
  std::shared_ptr<const ChebMap> map_;
  std::unique_ptr<SpectralGrid> grid_;
  double time_ = 0.0;
  long steps_ = 0;

  SpecField c_hat_;
  std::vector<SpecField> d_hat_;
  std::vector<SpecField> u_hat_;

  bool has_history_ = false;
  SpecField c_prev_;
  std::vector<SpecField> d_prev_;
  Tendency tendency_prev_;

  std::vector<PointClosure> closure_;
  RealField closure_c_;  // concentration the closure frames were built from
};

/// Snapshot file: "ANF1", u32 d, u32 n, f64 L, f64 t, f64 dt, then c and the
/// D components (upper triangle) as row-major little-endian f64 arrays.
struct Snapshot {
  int d = 0;
  int n = 0;
  double L = 0.0;
  double t = 0.0;
  double dt = 0.0;
  std::vector<double> c;
  std::vector<std::vector<double>> D;
};

Snapshot make_snapshot(const NematicSim& sim);
void write_snapshot(const Snapshot& snap, const std::filesystem::path& path);
Snapshot read_snapshot(const std::filesystem::path& path);

/// Loads `config.map` if set, else a cached or freshly fitted map of degree
/// config.M for dimension config.d (fits are saved into config.map_cache).
std::shared_ptr<const ChebMap> obtain_map(const SimConfig& config);

}  // namespace bingham
