// Command-line front end: map precompute/eval, simulation runs and spectra.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bingham/bingham_solve.hpp"
#include "bingham/cheb_map.hpp"
#include "bingham/diagnostics.hpp"
#include "bingham/errors.hpp"
#include "bingham/nematic_sim.hpp"
#include "bingham/tensor_frame.hpp"

namespace fs = std::filesystem;
using namespace bingham;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

std::string step_tag(long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06ld", step);
  return buf;
}

void write_csv_file(const fs::path& path, const ShellSpectrum& s,
                    const std::vector<std::string>& metadata) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_spectrum_csv(out, s, metadata);
}

// ---------------------------------------------------------------------------

int cmd_precompute(int dim, int degree, const std::string& out) {
  FitStats stats;
  ChebMap map;
  if (dim == 2) {
    map = fit_map_2d(degree, &stats);
  } else {
    map = fit_map_3d(degree, &stats, [](int done, int total) {
      if (done % 10 == 0 || done == total) std::cerr << "  lines " << done << "/" << total << "\r";
    });
    std::cerr << "\n";
  }
  save_map(map, out);
  std::cout << "wrote " << out << " (dim " << dim << ", degree " << degree << ")\n";
  std::cout << "max node residual " << format_double(stats.max_node_error) << "\n";
  std::cout << "max moment residual " << format_double(stats.max_residual) << "\n";
  return 0;
}

int cmd_eval(const std::string& map_path, double mu1, std::optional<double> mu2) {
  const ChebMap map = load_map(map_path);
  const bool is2d = std::holds_alternative<ChebMap1D>(map);
  std::cout.precision(15);
  if (is2d) {
    if (mu2) throw DomainError("--mu2 is only meaningful for a 3D map");
    std::array<double, 3> mu{mu1, 1.0 - mu1, 0.0};
    if (mu1 < 0.5 - 1e-12 || mu1 > 1.0 + 1e-12) {
      throw DomainError("mu1 must lie in [1/2, 1] for a 2D map");
    }
    const DiagFourthMoment s = closure_moments(mu, 2, map);
    std::cout << "S1111 " << s.q[0][0] << "\n";
    std::cout << "S1122 " << s.q[0][1] << "\n";
    std::cout << "S2222 " << s.q[1][1] << "\n";
    try {
      const RecoveredBingham b = recover_B(mu, s, 1.0, 2);
      std::cout << "lambda " << b.lambda[0] << " " << b.lambda[1] << "\n";
    } catch (const DomainError& e) {
      std::cout << "lambda unavailable (" << e.what() << ")\n";
    }
    return 0;
  }
  if (!mu2) throw DomainError("a 3D map needs --mu2");
  TrianglePoint p = clamp_to_triangle({mu1, *mu2});
  std::array<double, 3> mu{p.mu1, p.mu2, p.mu3()};
  const DiagFourthMoment s = closure_moments(mu, 3, map);
  std::cout << "S1111 " << s.q[0][0] << "\n";
  std::cout << "S1122 " << s.q[0][1] << "\n";
  std::cout << "S2222 " << s.q[1][1] << "\n";
  std::cout << "S1133 " << s.q[0][2] << "\n";
  std::cout << "S2233 " << s.q[1][2] << "\n";
  std::cout << "S3333 " << s.q[2][2] << "\n";
  try {
    const RecoveredBingham b = recover_B(mu, s, 1.0, 3);
    std::cout << "lambda " << b.lambda[0] << " " << b.lambda[1] << " " << b.lambda[2] << "\n";
  } catch (const DomainError& e) {
    std::cout << "lambda unavailable (" << e.what() << ")\n";
  }
  return 0;
}

ShellSpectrum velocity_spectrum(const NematicSim& sim, SpectrumMode mode) {
  return shell_spectrum(sim.grid(), sim.u_hat(), mode);
}

int cmd_run(const std::string& config_path, bool quiet) {
  const SimConfig config = load_config(config_path);
  const auto map = obtain_map(config);
  NematicSim sim(config, map);
  sim.init_planewave();
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "config.txt");
    write_config(cfg, config);
  }
  std::ofstream log(dir / "log.csv");
  log << "step,t,max_speed,max_divergence,min_eigenvalue,velocity_iterations\n";

  // Spectra use the velocity of the state being written, not the one the
  // last step was computed from.
  auto write_outputs = [&]() {
    sim.solve_velocity();
    const std::string tag = step_tag(sim.steps_taken());
    write_snapshot(make_snapshot(sim), dir / ("snapshot_" + tag + ".anf"));
    const std::vector<std::string> meta = {"t=" + format_double(sim.time())};
    write_csv_file(dir / ("velocity_" + tag + ".csv"), velocity_spectrum(sim, SpectrumMode::Mean),
                   meta);
  };
  const long total = std::lround(config.t_end / config.dt);
  try {
    for (long i = 0; i < total; ++i) {
      const StepStats st = sim.step();
      log << sim.steps_taken() << "," << format_double(sim.time()) << ","
          << format_double(st.max_speed) << "," << format_double(st.max_divergence) << ","
          << format_double(st.min_eigenvalue) << "," << st.velocity_iterations << "\n";
      if (st.cfl_warning) {
        std::cerr << "warning: CFL number above 1 at t = " << sim.time() << "\n";
      }
      if (!quiet && sim.steps_taken() % 20 == 0) {
        std::cerr << "t = " << sim.time() << "  max|u| = " << st.max_speed << "\n";
      }
      if (config.output_every > 0 && sim.steps_taken() % config.output_every == 0) {
        write_outputs();
      }
    }
  } catch (const NumericalFailure&) {
    write_snapshot(make_snapshot(sim), dir / "failure.anf");
    throw;
  }
  if (config.output_every == 0 || sim.steps_taken() % config.output_every != 0) write_outputs();
  std::cout << "finished t = " << sim.time() << " after " << sim.steps_taken() << " steps\n";
  std::cout << "max |trace(D) - c| " << format_double(sim.max_trace_error()) << "\n";
  return 0;
}

int cmd_spectrum(const std::string& snapshot_path, const std::string& what,
                 const std::string& stat, const std::string& config_path, const std::string& out) {
  const Snapshot snap = read_snapshot(snapshot_path);
  SimConfig config;
  if (!config_path.empty()) config = load_config(config_path);
  config.d = snap.d;
  config.n = snap.n;
  config.L = snap.L;
  if (snap.dt > 0.0) config.dt = snap.dt;
  const auto map = obtain_map(config);
  NematicSim sim(config, map);
  const std::size_t npts = sim.grid().real_size();
  RealField c(snap.c.begin(), snap.c.end());
  std::vector<RealField> d;
  for (const auto& f : snap.D) d.emplace_back(f.begin(), f.end());
  if (c.size() != npts) throw FormatError("snapshot grid does not match");
  sim.set_state(c, d, snap.t);
  const auto& u = sim.solve_velocity();

  SpectrumMode mode;
  if (stat.empty()) {
    mode = what == "velocity" ? SpectrumMode::Mean : SpectrumMode::SumSquared;
  } else {
    mode = stat == "mean" ? SpectrumMode::Mean : SpectrumMode::SumSquared;
  }
  const ShellSpectrum s =
      what == "velocity" ? shell_spectrum(sim.grid(), u, mode)
                         : shell_spectrum(sim.grid(), vorticity(sim.grid(), u), mode);
  std::vector<std::string> meta = {"field=" + what, "t=" + format_double(snap.t)};
  if (what == "vorticity") {
    const OnsetResult onset = onset_wavenumber(s);
    meta.push_back("onset_threshold=" + format_double(onset.params.threshold));
    meta.push_back("onset_k=" + (onset.k ? std::to_string(*onset.k) : std::string("none")));
  }
  if (out.empty() || out == "-") {
    write_spectrum_csv(std::cout, s, meta);
  } else {
    write_csv_file(out, s, meta);
  }
  return 0;
}

int cmd_convergence(const std::string& config_path, const std::vector<int>& degrees,
                    const std::string& out_dir, double rel_tol) {
  const SimConfig base = load_config(config_path);
  if (degrees.empty()) throw DomainError("--degrees is empty");
  const int reference = *std::max_element(degrees.begin(), degrees.end());
  std::map<int, ShellSpectrum> spectra;
  for (int m : degrees) {
    SimConfig config = base;
    config.M = m;
    const auto map = obtain_map(config);
    NematicSim sim(config, map);
    sim.init_planewave();
    sim.run(config.t_end);
    sim.solve_velocity();
    spectra[m] = velocity_spectrum(sim, SpectrumMode::Mean);
    write_csv_file(fs::path(out_dir) / ("velocity_M" + std::to_string(m) + ".csv"), spectra[m],
                   {"M=" + std::to_string(m), "t=" + format_double(sim.time())});
    std::cerr << "M = " << m << " done\n";
  }
  const fs::path report_path = fs::path(out_dir) / "divergence.csv";
  std::ofstream report(report_path);
  report << "# reference_M=" << reference << "\n# rel_tol=" << format_double(rel_tol) << "\n";
  report << "M,divergence_k\n";
  std::cout << "M  divergence k (vs M = " << reference << ", rel tol " << rel_tol << ")\n";
  for (int m : degrees) {
    if (m == reference) continue;
    const auto k = divergence_wavenumber(spectra[m], spectra[reference], rel_tol);
    const std::string text = k ? std::to_string(*k) : "none";
    report << m << "," << text << "\n";
    std::cout << m << "  " << text << "\n";
  }
  return 0;
}

std::vector<int> parse_degrees(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw FormatError("--degrees: cannot parse '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bingham closure maps and active nematic simulations"};
  app.require_subcommand(1);

  int dim = 2;
  int degree = 99;
  std::string out;
  auto* pre = app.add_subcommand("precompute", "fit a closure map and save its coefficients");
  pre->add_option("--dim", dim, "2 or 3")->required()->check(CLI::IsMember({2, 3}));
  pre->add_option("--degree", degree, "interpolant degree M")->required()->check(CLI::Range(1, 400));
  pre->add_option("--out", out, "output file")->required();

  std::string map_path;
  double mu1 = 0.0;
  double mu2_value = 0.0;
  auto* ev = app.add_subcommand("eval", "evaluate a saved map");
  ev->add_option("--map", map_path)->required();
  ev->add_option("--mu1", mu1)->required();
  auto* mu2_opt = ev->add_option("--mu2", mu2_value);

  std::string config_path;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "run a simulation from a config file");
  run->add_option("--config", config_path)->required();
  run->add_flag("--quiet", quiet);

  std::string snapshot;
  std::string field = "velocity";
  std::string stat;
  std::string spec_config;
  std::string spec_out;
  auto* spec = app.add_subcommand("spectrum", "shell spectrum of a snapshot");
  spec->add_option("--snapshot", snapshot)->required();
  spec->add_option("--mode", field, "velocity or vorticity")
      ->check(CLI::IsMember({"velocity", "vorticity"}));
  spec->add_option("--stat", stat, "mean or sum-squared")
      ->check(CLI::IsMember({"mean", "sum-squared"}));
  spec->add_option("--config", spec_config, "model parameters for the velocity solve");
  spec->add_option("--out", spec_out, "CSV path, '-' for stdout");

  std::string degrees_text = "10,20,40,80";
  std::string conv_out = "convergence";
  double rel_tol = 0.01;
  auto* conv = app.add_subcommand("convergence", "compare velocity spectra across map degrees");
  conv->add_option("--config", config_path)->required();
  conv->add_option("--degrees", degrees_text);
  conv->add_option("--out", conv_out, "output directory");
  conv->add_option("--rel-tol", rel_tol);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*pre) return cmd_precompute(dim, degree, out);
    if (*ev) {
      std::optional<double> mu2;
      if (*mu2_opt) mu2 = mu2_value;
      return cmd_eval(map_path, mu1, mu2);
    }
    if (*run) return cmd_run(config_path, quiet);
    if (*spec) return cmd_spectrum(snapshot, field, stat, spec_config, spec_out);
    if (*conv) return cmd_convergence(config_path, parse_degrees(degrees_text), conv_out, rel_tol);
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConvergenceError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
