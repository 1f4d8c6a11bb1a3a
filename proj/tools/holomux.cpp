#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "holomux/multiplex.hpp"
#include "holomux/pipeline.hpp"

namespace fs = std::filesystem;
using namespace holomux;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 1;
  std::optional<int> threads;
  std::string out;
};

ExperimentConfig config_of(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  validate(c);
  return c;
}

int threads_of(const Globals& g) { return resolve_threads(g.threads); }

fs::path out_of(const Globals& g, const char* what) {
  if (g.out.empty()) throw ParameterError(std::string(what) + " needs --out");
  return g.out;
}

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return in;
}

/// Writes one output file through a staged temporary.
template <class F>
void write_one(const fs::path& path, F writer) {
  StagedOutputs out;
  writer(out.open(path));
  out.commit();
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "holomux: warning: " << w << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatially multiplexed quantum memory simulation and analysis"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Experiment config (key = value)");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--threads", g.threads, "Worker threads (default: HOLOMUX_THREADS, then all cores)")
      ->check(CLI::Range(1, 4096));
  app.add_option("--out", g.out, "Output file or directory");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Monte Carlo shots to events.csv");
  std::size_t sim_shots = 0;
  bool emit_truth = false, time_bins = false;
  sim->add_option("--shots", sim_shots, "Shot count")->required();
  sim->add_flag("--emit-truth", emit_truth, "Also write truth.csv");
  sim->add_flag("--time-bins", time_bins, "Resolve write and read time bins");

  // replay
  auto* rep = app.add_subcommand("replay", "Re-run a simulate manifest and compare hashes");
  std::string manifest_path;
  rep->add_option("--manifest", manifest_path, "manifest.txt of an earlier run")->required()->check(CLI::ExistingFile);

  // render
  auto* ren = app.add_subcommand("render", "Event CSV to a camera frame stream");
  std::string ren_events;
  std::optional<std::uint64_t> ren_frames;
  ren->add_option("--events", ren_events, "Event CSV")->required()->check(CLI::ExistingFile);
  ren->add_option("--frames", ren_frames, "Frame count (default: largest shot id + 1)");

  // extract
  auto* ext = app.add_subcommand("extract", "Frame stream to event CSV");
  std::string ext_frames;
  std::optional<double> ext_threshold;
  ext->add_option("--frames", ext_frames, "frames.holo, a directory holding it, or - for stdin")->required();
  ext->add_option("--threshold-sigma", ext_threshold, "Threshold above the median in noise sigmas");

  // coincide
  auto* coi = app.add_subcommand("coincide", "Event CSV to corrected coincidence histogram");
  std::string coi_events, coi_axis = "x";
  std::optional<double> coi_dtheta, coi_bin;
  std::optional<std::uint64_t> coi_frames;
  coi->add_option("--events", coi_events, "Event CSV")->required()->check(CLI::ExistingFile);
  coi->add_option("--delta-theta", coi_dtheta, "Stripe half-width in mrad");
  coi->add_option("--bin", coi_bin, "Bin width in mrad");
  coi->add_option("--axis", coi_axis, "Histogrammed axis")->check(CLI::IsMember({"x", "y"}));
  coi->add_option("--frames", coi_frames, "Frame count (default: largest shot id + 1)");

  // fit-modes
  auto* fm = app.add_subcommand("fit-modes", "Rotated Gaussian fit of a corrected histogram");
  std::string fm_hist;
  fm->add_option("--hist", fm_hist, "Histogram CSV")->required()->check(CLI::ExistingFile);

  // fit-diffusion
  auto* fd = app.add_subcommand("fit-diffusion", "Diffusion coefficient from a width series");
  std::string fd_series;
  double fd_lambda = 795.0;
  double fd_kernel = 0.0;
  fd->add_option("--series", fd_series, "widths.csv")->required()->check(CLI::ExistingFile);
  fd->add_option("--lambda-nm", fd_lambda, "Wavelength in nm");
  fd->add_option("--sigma-kernel-mrad", fd_kernel, "Detection kernel width in mrad")->required();

  // plan, plan route
  auto* plan = app.add_subcommand("plan", "Multiplexing enhancement table");
  plan->require_subcommand(0, 1);
  SourceSpec spec;
  plan->add_option("--zeta", spec.zeta, "Mean pairs per mode");
  plan->add_option("--modes", spec.modes, "Mode count");
  plan->add_option("--eta-h", spec.eta_H, "Heralded retrieval efficiency");
  plan->add_option("--n", spec.n_targets, "Target photon number");
  auto* route_cmd = plan->add_subcommand("route", "Assign triggers to output ports");
  std::string triggers_path;
  int ports = 1;
  route_cmd->add_option("--triggers", triggers_path, "Trigger CSV")->required()->check(CLI::ExistingFile);
  route_cmd->add_option("--ports", ports, "Output ports")->required();

  // reproduce fig4 | single-photon
  auto* repro = app.add_subcommand("reproduce", "Figure-level recipes");
  repro->require_subcommand(1);
  auto* fig4 = repro->add_subcommand("fig4", "Storage-time sweep of the coincidence maps");
  std::vector<double> fig4_tau;
  std::size_t fig4_shots = 0;
  bool via_frames = false;
  std::string fig4_axis = "x";
  fig4->add_option("--tau", fig4_tau, "Storage times in us")->required()->delimiter(',');
  fig4->add_option("--shots", fig4_shots, "Shots per storage time")->required();
  fig4->add_flag("--via-frames", via_frames, "Route every shot through render and extract");
  fig4->add_option("--axis", fig4_axis, "Histogrammed axis")->check(CLI::IsMember({"x", "y"}));
  auto* sp = repro->add_subcommand("single-photon", "Low-gain bookkeeping and coincidence map");
  std::size_t sp_shots = 0;
  std::string sp_axis = "y";
  std::optional<double> sp_target;
  std::size_t sp_cal_shots = 100000;
  sp->add_option("--shots", sp_shots, "Shot count")->required();
  sp->add_option("--axis", sp_axis, "Histogrammed axis")->check(CLI::IsMember({"x", "y"}));
  sp->add_option("--calibrate-accidentals", sp_target, "Set noise_rate so the central accidental fraction hits this")
      ->check(CLI::Range(0.0, 1.0));
  sp->add_option("--calibration-shots", sp_cal_shots, "Shots per calibration step");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      ExperimentConfig c = config_of(g);
      if (time_bins) c.time_bins = true;
      const auto m = simulate_run(c, {sim_shots, g.seed, threads_of(g), emit_truth}, out_of(g, "simulate"));
      std::cout << "events sha256 = " << m.artifact("events")->sha256 << '\n';
    } else if (*rep) {
      const auto m = load_manifest(manifest_path);
      const auto bad = replay(m, out_of(g, "replay"), threads_of(g));
      for (const auto& name : bad) std::cerr << "holomux: mismatch: " << name << '\n';
      if (!bad.empty()) return 3;
      std::cout << "replay identical\n";
    } else if (*ren) {
      const ExperimentConfig c = config_of(g);
      const auto shots = run_stage("render", [&] { return group_shots(load_events_csv(ren_events)); });
      std::size_t n = 0;
      for (const auto& s : shots) n = std::max(n, static_cast<std::size_t>(s.shot_id + 1));
      if (ren_frames) {
        if (*ren_frames < n) throw ParameterError("--frames is below the largest shot id + 1");
        n = static_cast<std::size_t>(*ren_frames);
      }
      const fs::path dir = out_of(g, "render");
      StagedOutputs out;
      auto& os = out.open(dir / "frames.holo", true);
      run_stage("render", [&] { render_stream(c, shots, n, g.seed, threads_of(g), os); });
      out.commit();
      std::cout << "frames = " << n << '\n';
    } else if (*ext) {
      ExperimentConfig c = config_of(g);
      ExtractOptions opt{ext_threshold.value_or(c.threshold_sigma), c.max_area_px};
      fs::path src = ext_frames;
      if (src != "-" && fs::is_directory(src)) src /= "frames.holo";
      std::ifstream file;
      if (src != "-") file = open_in(src.string(), true);
      std::istream& in = src == "-" ? std::cin : file;
      StagedOutputs out;
      auto& os = out.open(out_of(g, "extract"));
      const auto sum = run_stage("extract", [&] { return extract_stream(in, opt, threads_of(g), os); });
      out.commit();
      std::cout << "frames = " << sum.frames << "\nevents = " << sum.events << "\nflagged = " << sum.flagged << '\n';
    } else if (*coi) {
      const ExperimentConfig c = config_of(g);
      const Binning bins = Binning::covering(c.fov_mrad, coi_bin.value_or(c.bin_mrad));
      const auto events = run_stage("coincide", [&] { return load_events_csv(coi_events); });
      const auto h = run_stage("coincide", [&] {
        return subtract(coincide_events(events, bins, coi_dtheta.value_or(c.delta_theta_mrad), parse_axis(coi_axis),
                                        coi_frames));
      });
      write_one(out_of(g, "coincide"), [&](std::ostream& o) { write_histogram_csv(o, h); });
    } else if (*fm) {
      auto in = open_in(fm_hist);
      const auto h = run_stage("fit-modes", [&] { return read_histogram_csv(in); });
      const auto f = run_stage("fit-modes", [&] { return fit_correlation(h); });
      write_one(out_of(g, "fit-modes"), [&](std::ostream& o) { write_fit(o, f); });
    } else if (*fd) {
      auto in = open_in(fd_series);
      const auto series = run_stage("fit-diffusion", [&] { return read_widths_csv(in); });
      const auto r = run_stage("fit-diffusion", [&] { return fit_D(series, fd_lambda * 1e-9, fd_kernel); });
      write_one(out_of(g, "fit-diffusion"), [&](std::ostream& o) { write_diffusion_fit(o, r); });
      print_warnings(r.warnings);
    } else if (*plan) {
      if (*route_cmd) {
        auto in = open_in(triggers_path);
        const auto p = route(read_triggers_csv(in), ports);
        write_one(out_of(g, "plan route"), [&](std::ostream& o) { write_routing_csv(o, p); });
      } else {
        const auto rows = enhancement_report(spec);
        const fs::path table = out_of(g, "plan");
        StagedOutputs out;
        write_enhancement_csv(out.open(table), rows);
        write_rate_summary(out.open(fs::path(table).replace_extension(".summary.txt")), spec);
        out.commit();
      }
    } else if (*fig4) {
      const ExperimentConfig c = config_of(g);
      SweepOptions opt{fig4_tau, fig4_shots, g.seed, threads_of(g), parse_axis(fig4_axis), via_frames};
      const auto r = reproduce_fig4(c, opt);
      write_sweep(r, out_of(g, "reproduce fig4"));
      print_warnings(r.warnings);
      for (const auto& p : r.points) {
        std::cout << "tau " << text::sig6(p.tau_us) << " us: M = " << text::sig6(p.mode_count) << " +- "
                  << text::sig6(p.mode_count_err) << " (predicted " << text::sig6(p.predicted) << ")\n";
      }
      if (r.diffusion) std::cout << "D = " << text::sig6(r.diffusion->D) << " m^2/s\n";
    } else if (*sp) {
      ExperimentConfig c = config_of(g);
      const Axis axis = parse_axis(sp_axis);
      const fs::path dir = out_of(g, "reproduce single-photon");
      if (sp_target) {
        const auto cal = run_stage("calibrate", [&] {
          return calibrate_noise(c, *sp_target, sp_cal_shots, g.seed, threads_of(g), axis);
        });
        c.noise_rate = cal.noise_rate;
        std::cout << "noise_rate = " << text::sig6(cal.noise_rate) << '\n';
      }
      const auto r = single_photon_level(c, sp_shots, g.seed, threads_of(g), axis);
      StagedOutputs out;
      write_single_photon_report(out.open(dir / "report.txt"), r);
      write_histogram_csv(out.open(dir / "hist.csv"), r.hist);
      RunManifest m;
      m.command = "reproduce single-photon";
      m.config = c;
      m.master_seed = g.seed;
      m.shots = sp_shots;
      m.artifacts.push_back({"report", "report.txt", out.close_and_hash(dir / "report.txt")});
      m.artifacts.push_back({"hist", "hist.csv", out.close_and_hash(dir / "hist.csv")});
      write_manifest(out.open(dir / "manifest.txt"), m);
      out.commit();
      print_warnings(r.warnings);
      std::cout << "write_pairs = " << text::sig6(r.write_pairs.mean) << "\nretrieved_pairs = "
                << text::sig6(r.retrieved_pairs.mean) << "\ncoincidence_ratio = " << text::sig6(r.coincidence_ratio)
                << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "holomux: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
