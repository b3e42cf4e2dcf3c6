#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bingham/nematic_sim.hpp"

namespace bingham {

enum class SpectrumMode { Mean, SumSquared };

/// Shell k holds the modes whose lattice length |m| rounds to k.
struct ShellSpectrum {
  SpectrumMode mode = SpectrumMode::Mean;
  std::vector<int> k;
  std::vector<double> value;
};

/// Mean: multiplicity-weighted average of |v^(m)| over each shell, where
/// |v^|^2 sums over components. SumSquared: sum of |v^(m)|^2 over the full
/// spectrum, so the shells add up to the grid mean of |v|^2.
ShellSpectrum shell_spectrum(const SpectralGrid& grid, const std::vector<SpecField>& field,
                             SpectrumMode mode);

struct OnsetParams {
  /// Minimum jump in log-log slope between neighbouring shell pairs.
  double threshold = 1.0;
};

struct OnsetResult {
  std::optional<int> k;
  OnsetParams params;
};

/// Oscillation onset in a decaying spectrum. With slope(k) the log-log slope
/// between shells k and k+1, the jump at k is slope(k) - slope(k-1), which is
/// zero for a power law and negative for a smooth exponential roll-off. The
/// first shell after the global maximum whose jump exceeds the threshold is
/// returned; the scan stops at the last positive shell.
OnsetResult onset_wavenumber(const ShellSpectrum& spectrum, const OnsetParams& params = {});

/// First shell k >= 1 with |value - reference| > rel_tol * reference, or
/// nullopt when the spectra agree on every shell both have.
std::optional<int> divergence_wavenumber(const ShellSpectrum& value,
                                         const ShellSpectrum& reference, double rel_tol = 0.01);

/// Spectral curl: one component (du_y/dx - du_x/dy) in 2D, three in 3D.
std::vector<SpecField> vorticity(const SpectralGrid& grid, const std::vector<SpecField>& u_hat);

struct EntropyResult {
  double entropy = 0.0;  // conformational entropy functional
  double steric = 0.0;   // integral of (D - c I/d):(D - c I/d)
  std::size_t excluded = 0;
  std::size_t points = 0;
  /// False when more than 0.1% of the points had to be excluded.
  bool valid = true;
};

/// Per point: recover the Bingham exponent from D/c and the closure, then
/// integrate (c/Psi0)(gamma + log c - gamma0 + B:D/c) with gamma = -log Z.
EntropyResult entropy_functionals(const SpectralGrid& grid, const RealField& c,
                                  const std::vector<RealField>& d, const ChebMap& map);

/// Entropy density of one normalized state (c = 1) from its eigenvalues.
double entropy_density(const std::array<double, 3>& mu, int dim, const ChebMap& map);

// ---------------------------------------------------------------------------
// Text formats

/// `key = value` lines with `#` comments; keys are the SimConfig field names.
/// Unknown keys, duplicates and malformed values throw FormatError.
SimConfig parse_config(std::istream& in, const std::string& source = "config");
SimConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const SimConfig& config);

/// Header `k,value`, one shell per line, values with 17 significant digits.
/// `metadata` lines are written first as `# ` comments.
void write_spectrum_csv(std::ostream& out, const ShellSpectrum& spectrum,
                        const std::vector<std::string>& metadata = {});
ShellSpectrum read_spectrum_csv(std::istream& in);

std::string format_double(double v);

}  // namespace bingham
