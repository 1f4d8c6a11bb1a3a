#pragma once

#include <openssl/evp.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "holomux/coincidence.hpp"
#include "holomux/config.hpp"
#include "holomux/correlation_fit.hpp"
#include "holomux/diffusion.hpp"
#include "holomux/events_io.hpp"
#include "holomux/extract.hpp"
#include "holomux/frame.hpp"
#include "holomux/memory_sim.hpp"
#include "holomux/parallel.hpp"
#include "holomux/text.hpp"

namespace holomux {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "holomux 1.0.0";

/// A stage failure with the stage named in front of the underlying message.
class StageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

template <class F>
auto run_stage(const std::string& stage, F fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError& e) {
    throw StageError(stage + ": " + e.what());
  } catch (const std::exception& e) {
    throw StageError(stage + ": " + e.what());
  }
}

// ---------------------------------------------------------------- hashing

class Sha256 {
public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw std::runtime_error("sha256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw std::runtime_error("sha256 final failed");
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }

private:
  std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> ctx_;
};

inline std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.hex();
}

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "' for hashing");
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

// ---------------------------------------------------------------- staged outputs

/// Output files written to hidden temporaries and renamed into place only by
/// commit(). Without a commit every temporary is removed.
class StagedOutputs {
public:
  StagedOutputs() = default;
  StagedOutputs(const StagedOutputs&) = delete;
  StagedOutputs& operator=(const StagedOutputs&) = delete;
  ~StagedOutputs() {
    if (!committed_) discard();
  }

  std::ostream& open(const fs::path& final_path, bool binary = false) {
    for (const auto& e : entries_) {
      if (e.final_path == final_path) throw ParameterError("output '" + final_path.string() + "' opened twice");
    }
    const fs::path parent = final_path.has_parent_path() ? final_path.parent_path() : fs::path(".");
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw FormatError("cannot create directory '" + parent.string() + "': " + ec.message());
    Entry e;
    e.final_path = final_path;
    e.temp_path = parent / ("." + final_path.filename().string() + ".partial");
    e.stream = std::make_unique<std::ofstream>(e.temp_path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!*e.stream) throw FormatError("cannot write '" + e.temp_path.string() + "'");
    entries_.push_back(std::move(e));
    return *entries_.back().stream;
  }

  /// Closes one output early and returns its content hash.
  std::string close_and_hash(const fs::path& final_path) {
    auto& e = find(final_path);
    close(e);
    return sha256_file(e.temp_path);
  }

  void commit() {
    for (auto& e : entries_) close(e);
    std::vector<fs::path> done;
    for (auto& e : entries_) {
      std::error_code ec;
      fs::rename(e.temp_path, e.final_path, ec);
      if (ec) {
        for (const auto& p : done) fs::remove(p, ec);
        throw FormatError("cannot move output into '" + e.final_path.string() + "': " + ec.message());
      }
      done.push_back(e.final_path);
    }
    committed_ = true;
  }

  void discard() {
    for (auto& e : entries_) {
      e.stream.reset();
      std::error_code ec;
      fs::remove(e.temp_path, ec);
    }
    entries_.clear();
  }

private:
  struct Entry {
    fs::path final_path;
    fs::path temp_path;
    std::unique_ptr<std::ofstream> stream;
    bool closed = false;
  };

  Entry& find(const fs::path& p) {
    for (auto& e : entries_) {
      if (e.final_path == p) return e;
    }
    throw ParameterError("output '" + p.string() + "' was never opened");
  }

  static void close(Entry& e) {
    if (e.closed) return;
    e.stream->flush();
    const bool ok = static_cast<bool>(*e.stream);
    e.stream->close();
    e.closed = true;
    if (!ok) throw FormatError("write to '" + e.temp_path.string() + "' failed");
  }

  std::vector<Entry> entries_;
  bool committed_ = false;
};

// ---------------------------------------------------------------- manifest

struct Artifact {
  std::string name;
  std::string path;  ///< relative to the manifest's directory
  std::string sha256;
};

struct RunManifest {
  std::string command;
  ExperimentConfig config;
  std::uint64_t master_seed = 0;
  std::uint64_t shots = 0;
  std::vector<double> tau_us;
  std::string tool_version = kToolVersion;
  std::vector<Artifact> artifacts;

  const Artifact* artifact(const std::string& name) const {
    for (const auto& a : artifacts) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }
};

inline void write_manifest(std::ostream& out, const RunManifest& m) {
  text::KeyValueWriter w(out);
  w.put("tool_version", m.tool_version);
  w.put("command", m.command);
  w.put("master_seed", std::to_string(m.master_seed));
  w.put("shots", std::to_string(m.shots));
  std::string taus;
  for (std::size_t i = 0; i < m.tau_us.size(); ++i) taus += (i ? "," : "") + text::exact(m.tau_us[i]);
  w.put("tau_us", taus);
  for (const auto& a : m.artifacts) {
    w.put("artifact." + a.name, a.path);
    w.put("sha256." + a.name, a.sha256);
  }
  std::ostringstream cfg;
  write_config(cfg, m.config);
  std::istringstream lines(cfg.str());
  for (const auto& kv : text::read_keyvalue(lines)) w.put("config." + kv.key, kv.value);
}

inline RunManifest read_manifest(std::istream& in) {
  RunManifest m;
  std::ostringstream cfg;
  m.tool_version.clear();
  for (const auto& kv : text::read_keyvalue(in)) {
    const std::string& k = kv.key;
    const auto parse_u64 = [&](const std::string& v) {
      try {
        return text::parse_uint64(v);
      } catch (const FormatError& e) {
        throw FormatError("manifest line " + std::to_string(kv.line) + ": " + k + ": " + e.what());
      }
    };
    if (k == "tool_version") {
      m.tool_version = kv.value;
    } else if (k == "command") {
      m.command = kv.value;
    } else if (k == "master_seed") {
      m.master_seed = parse_u64(kv.value);
    } else if (k == "shots") {
      m.shots = parse_u64(kv.value);
    } else if (k == "tau_us") {
      if (!kv.value.empty()) {
        for (auto f : text::split(kv.value, ',')) m.tau_us.push_back(text::parse_double(f));
      }
    } else if (k.starts_with("config.")) {
      cfg << k.substr(7) << " = " << kv.value << '\n';
    } else if (k.starts_with("artifact.") || k.starts_with("sha256.")) {
      const bool is_path = k.starts_with("artifact.");
      const std::string name = k.substr(is_path ? 9 : 7);
      Artifact* a = nullptr;
      for (auto& x : m.artifacts) {
        if (x.name == name) a = &x;
      }
      if (!a) {
        m.artifacts.push_back({name, "", ""});
        a = &m.artifacts.back();
      }
      (is_path ? a->path : a->sha256) = kv.value;
    } else {
      throw FormatError("manifest line " + std::to_string(kv.line) + ": unknown key '" + k + "'");
    }
  }
  std::istringstream cfg_in(cfg.str());
  m.config = parse_config(cfg_in);
  return m;
}

inline RunManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest '" + path.string() + "'");
  return read_manifest(in);
}

/// Names of artifacts whose file in `dir` is missing or hashes differently.
inline std::vector<std::string> verify_artifacts(const RunManifest& m, const fs::path& dir) {
  std::vector<std::string> bad;
  for (const auto& a : m.artifacts) {
    const fs::path p = dir / a.path;
    if (!fs::exists(p) || sha256_file(p) != a.sha256) bad.push_back(a.name);
  }
  return bad;
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  std::size_t shots = 0;
  std::uint64_t seed = 0;
  int threads = 1;
  bool emit_truth = false;
};

/// Streams shots in fixed blocks: parallel simulation, serial output in shot order.
template <class Sink>
void simulate_stream(const ExperimentConfig& c, const SimulateOptions& opt, Sink sink) {
  const auto grid = build_mode_grid(c);
  const std::size_t chunk = kShotBlock * static_cast<std::size_t>(std::max(1, opt.threads));
  for (std::size_t first = 0; first < opt.shots; first += chunk) {
    const std::size_t n = std::min(chunk, opt.shots - first);
    for (const auto& s : simulate_shots(c, grid, static_cast<std::int64_t>(first), n, opt.seed, opt.threads)) sink(s);
  }
}

/// events.csv, optional truth.csv and manifest.txt under `dir`.
inline RunManifest simulate_run(const ExperimentConfig& c, const SimulateOptions& opt, const fs::path& dir) {
  validate(c);
  detail::require(opt.shots >= 1, "simulate needs at least one shot");
  StagedOutputs out;
  auto& events = out.open(dir / "events.csv");
  EventCsvWriter ew(events, c.time_bins);
  std::ostream* truth = opt.emit_truth ? &out.open(dir / "truth.csv") : nullptr;
  std::optional<TruthCsvWriter> tw;
  if (truth) tw.emplace(*truth);
  run_stage("simulate", [&] {
    simulate_stream(c, opt, [&](const ShotRecord& s) {
      ew.write(s);
      if (tw) tw->write(s);
    });
  });
  RunManifest m;
  m.command = "simulate";
  m.config = c;
  m.master_seed = opt.seed;
  m.shots = opt.shots;
  m.artifacts.push_back({"events", "events.csv", out.close_and_hash(dir / "events.csv")});
  if (truth) m.artifacts.push_back({"truth", "truth.csv", out.close_and_hash(dir / "truth.csv")});
  write_manifest(out.open(dir / "manifest.txt"), m);
  out.commit();
  return m;
}

/// Re-runs a simulate manifest into `dir` and returns the artifacts whose hashes changed.
inline std::vector<std::string> replay(const RunManifest& m, const fs::path& dir, int threads) {
  detail::require(m.command == "simulate", "only simulate manifests can be replayed");
  SimulateOptions opt{static_cast<std::size_t>(m.shots), m.master_seed, threads, m.artifact("truth") != nullptr};
  const auto again = simulate_run(m.config, opt, dir);
  std::vector<std::string> bad;
  for (const auto& a : m.artifacts) {
    const auto* b = again.artifact(a.name);
    if (!b || b->sha256 != a.sha256) bad.push_back(a.name);
  }
  return bad;
}

// ---------------------------------------------------------------- render / extract

/// Frames 0 .. n_frames - 1; frame i shows the events of shot i.
inline void render_stream(const ExperimentConfig& c, const std::vector<ShotRecord>& shots, std::size_t n_frames,
                          std::uint64_t seed, int threads, std::ostream& out) {
  std::vector<const ShotRecord*> by_id(n_frames, nullptr);
  for (const auto& s : shots) {
    if (s.shot_id < 0 || static_cast<std::size_t>(s.shot_id) >= n_frames) {
      throw ParameterError("shot " + std::to_string(s.shot_id) + " lies outside the frame range");
    }
    by_id[static_cast<std::size_t>(s.shot_id)] = &s;
  }
  const Frame layout = blank_frame(c);
  const FrameRenderer renderer(SpotModel::from(c));
  const ShotRecord empty;
  const std::size_t chunk = 64 * static_cast<std::size_t>(std::max(1, threads));
  for (std::size_t first = 0; first < n_frames; first += chunk) {
    const std::size_t n = std::min(chunk, n_frames - first);
    std::vector<Frame> frames(n);
    for_each_block(n, 8, threads, [&](int, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const std::size_t id = first + i;
        Rng rng(derive_seed(seed, id, stream::render));
        frames[i] = renderer.render(by_id[id] ? *by_id[id] : empty, layout, rng);
      }
    });
    for (const auto& f : frames) write_frame(out, f);
  }
}

struct ExtractSummary {
  std::size_t frames = 0;
  std::size_t events = 0;
  std::size_t flagged = 0;
};

/// Reads a concatenated frame stream and writes the event CSV; frame i becomes shot i.
inline ExtractSummary extract_stream(std::istream& in, const ExtractOptions& opt, int threads, std::ostream& out) {
  EventCsvWriter w(out, false);
  ExtractSummary sum;
  const std::size_t chunk = 64 * static_cast<std::size_t>(std::max(1, threads));
  bool more = true;
  while (more) {
    std::vector<Frame> frames;
    for (Frame f; frames.size() < chunk && (more = read_frame(in, f));) frames.push_back(std::move(f));
    std::vector<ExtractionResult> res(frames.size());
    for_each_block(frames.size(), 8, threads, [&](int, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) res[i] = extract_events(frames[i], opt, static_cast<std::int64_t>(sum.frames + i));
    });
    for (const auto& r : res) {
      for (const auto& e : r.events) w.write(e);
      sum.events += r.events.size();
      sum.flagged += r.flagged.size();
    }
    sum.frames += frames.size();
  }
  return sum;
}

/// Shot as seen through the camera: rendered, then extracted again.
inline ShotRecord camera_view(const ShotRecord& shot, const ExperimentConfig& c, const Frame& layout,
                              const FrameRenderer& renderer, std::uint64_t seed) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(shot.shot_id), stream::render));
  const auto res = extract_events(renderer.render(shot, layout, rng), c, shot.shot_id);
  ShotRecord out;
  out.shot_id = shot.shot_id;
  for (const auto& e : res.events) (e.region == Region::Stokes ? out.stokes_events : out.antistokes_events).push_back(e);
  return out;
}

// ---------------------------------------------------------------- coincidence stage

/// Histogram of an event stream; shots without events still count as frames.
inline CoincidenceHistogram coincide_events(const std::vector<PhotonEvent>& events, const Binning& bins, double dtheta,
                                            Axis axis, std::optional<std::uint64_t> n_frames) {
  const auto shots = group_shots(events);
  auto h = accumulate(shots, bins, dtheta, axis);
  std::int64_t max_id = -1;
  for (const auto& s : shots) {
    if (s.shot_id < 0) throw FormatError("negative shot id " + std::to_string(s.shot_id));
    max_id = std::max(max_id, s.shot_id);
  }
  const std::uint64_t implied = static_cast<std::uint64_t>(max_id + 1);
  if (n_frames) {
    if (*n_frames < implied) {
      throw ParameterError("frame count " + std::to_string(*n_frames) + " is below the largest shot id + 1 (" +
                           std::to_string(implied) + ")");
    }
    h.n_frames = *n_frames;
  } else {
    h.n_frames = implied;
  }
  return h;
}

// ---------------------------------------------------------------- figure 4 sweep

struct SweepOptions {
  std::vector<double> tau_us;
  std::size_t shots = 0;
  std::uint64_t seed = 0;
  int threads = 1;
  Axis axis = Axis::X;
  bool via_frames = false;  ///< route every shot through render and extract
};

struct SweepPoint {
  double tau_us = 0.0;
  CorrectedHistogram hist;
  CorrelationFit fit;
  double mode_count = 0.0;
  double mode_count_err = 0.0;
  double predicted = 0.0;
  double accidental_fraction = 0.0;
};

struct SweepReport {
  ExperimentConfig config;
  SweepOptions options;
  std::vector<SweepPoint> points;
  WidthSeries widths;
  std::optional<DiffusionFitResult> diffusion;  ///< needs three or more storage times
  bool monotone = false;                        ///< M non-increasing along the sweep
  std::vector<std::string> warnings;
};

/// Seed of the k-th storage time; independent shots per point keep the widths uncorrelated.
inline std::uint64_t sweep_seed(std::uint64_t seed, std::size_t k) { return derive_seed(seed, k, stream::sweep); }

inline CoincidenceHistogram sweep_histogram(const ExperimentConfig& c, const SweepOptions& opt, std::uint64_t seed) {
  const auto grid = build_mode_grid(c);
  if (!opt.via_frames) return simulate_histogram(c, grid, opt.shots, seed, opt.threads, opt.axis);
  const Binning bins = Binning::covering(c.fov_mrad, c.bin_mrad);
  const Frame layout = blank_frame(c);
  const FrameRenderer renderer(SpotModel::from(c));
  const int workers = worker_count(opt.shots, kShotBlock, opt.threads);
  std::vector<CoincidenceHistogram> partial(static_cast<std::size_t>(workers),
                                            CoincidenceHistogram(bins, c.delta_theta_mrad, opt.axis));
  for_each_block(opt.shots, kShotBlock, workers, [&](int w, std::size_t b, std::size_t e) {
    auto& h = partial[static_cast<std::size_t>(w)];
    for (std::size_t i = b; i < e; ++i) {
      const auto seen = camera_view(run_shot(c, grid, static_cast<std::int64_t>(i), seed), c, layout, renderer, seed);
      accumulate_shot(h, seen.stokes_events, seen.antistokes_events);
      ++h.n_frames;
    }
  });
  for (std::size_t w = 1; w < partial.size(); ++w) partial[0].merge(partial[w]);
  return std::move(partial[0]);
}

inline SweepReport reproduce_fig4(const ExperimentConfig& config, const SweepOptions& opt) {
  validate(config);
  if (opt.shots == 0) throw ParameterError("reproduce fig4 needs at least one shot per storage time");
  if (opt.tau_us.empty()) throw ParameterError("reproduce fig4 needs at least one storage time");
  for (std::size_t i = 0; i < opt.tau_us.size(); ++i) {
    detail::require(opt.tau_us[i] >= 0.0, "storage times must be non-negative");
    detail::require(i == 0 || opt.tau_us[i] > opt.tau_us[i - 1], "storage times must increase");
  }
  SweepReport rep;
  rep.config = config;
  rep.options = opt;
  for (std::size_t k = 0; k < opt.tau_us.size(); ++k) {
    ExperimentConfig c = config;
    c.tau_us = opt.tau_us[k];
    const std::string where = "tau=" + text::sig6(c.tau_us) + " us";
    SweepPoint p;
    p.tau_us = c.tau_us;
    const auto h = run_stage(where + ": simulate", [&] { return sweep_histogram(c, opt, sweep_seed(opt.seed, k)); });
    p.hist = run_stage(where + ": coincide", [&] { return subtract(h); });
    p.fit = run_stage(where + ": fit-modes", [&] { return fit_correlation(p.hist); });
    p.mode_count = mode_count(p.fit);
    p.mode_count_err = mode_count_error(p.fit);
    p.predicted = predict_mode_count(c, c.tau_s());
    try {
      p.accidental_fraction = accidental_fraction(p.hist, c.central_window_mrad);
    } catch (const ParameterError&) {
      p.accidental_fraction = std::nan("");
      rep.warnings.push_back(where + ": no coincidences in the central window");
    }
    rep.widths.entries.push_back({p.tau_us, p.fit.sigma_sum, p.fit.sigma_sum_err, p.fit.sigma_diff, p.fit.sigma_diff_err});
    rep.points.push_back(std::move(p));
  }
  rep.monotone = true;
  for (std::size_t k = 1; k < rep.points.size(); ++k) {
    if (rep.points[k].mode_count > rep.points[k - 1].mode_count) rep.monotone = false;
  }
  if (rep.points.size() >= 3) {
    rep.diffusion = run_stage("fit-diffusion", [&] {
      return fit_D(rep.widths, config.lambda_m(), config.conditional_width_mrad());
    });
    for (const auto& w : rep.diffusion->warnings) rep.warnings.push_back("fit-diffusion: " + w);
  } else {
    rep.warnings.push_back("fewer than three storage times; diffusion fit skipped");
  }
  return rep;
}

inline std::string tau_tag(double tau_us) { return "tau_" + text::sig6(tau_us) + "us"; }

inline void write_mode_count_csv(std::ostream& out, const SweepReport& r) {
  out << "tau_us,mode_count,mode_count_err,predicted,accidental_fraction\n";
  for (const auto& p : r.points) {
    out << text::sig6(p.tau_us) << ',' << text::sig6(p.mode_count) << ',' << text::sig6(p.mode_count_err) << ','
        << text::sig6(p.predicted) << ',' << text::sig6(p.accidental_fraction) << '\n';
  }
}

inline void write_sweep_report(std::ostream& out, const SweepReport& r) {
  text::KeyValueWriter w(out);
  w.put_int("shots_per_point", static_cast<std::int64_t>(r.options.shots));
  w.put_int("points", static_cast<std::int64_t>(r.points.size()));
  w.put("axis", r.options.axis == Axis::X ? "x" : "y");
  w.put("via_frames", r.options.via_frames ? "true" : "false");
  for (const auto& p : r.points) {
    const std::string t = tau_tag(p.tau_us);
    w.put(t + ".mode_count", p.mode_count);
    w.put(t + ".mode_count_err", p.mode_count_err);
    w.put(t + ".predicted", p.predicted);
    w.put(t + ".elongation", p.fit.sigma_diff / p.fit.sigma_sum);
  }
  w.put("monotone", r.monotone ? "true" : "false");
  w.put("D_config", r.config.D_m2_per_s);
  if (r.diffusion) {
    w.put("D_fit", r.diffusion->D);
    w.put("D_err", r.diffusion->D_err);
    if (r.config.D_m2_per_s > 0.0) w.put("D_relative_error", r.diffusion->D / r.config.D_m2_per_s - 1.0);
    w.put("sigma0_sum_mrad", r.diffusion->sigma0_sum);
    w.put("sigma0_diff_mrad", r.diffusion->sigma0_diff);
  }
  for (const auto& m : r.warnings) w.put("warning", m);
}

/// Histograms, widths, M(tau), report and manifest under `dir`.
inline RunManifest write_sweep(const SweepReport& r, const fs::path& dir) {
  StagedOutputs out;
  RunManifest m;
  m.command = "reproduce fig4";
  m.config = r.config;
  m.master_seed = r.options.seed;
  m.shots = r.options.shots;
  m.tau_us = r.options.tau_us;
  auto add = [&](const std::string& name, const std::string& file, auto writer) {
    writer(out.open(dir / file));
    m.artifacts.push_back({name, file, out.close_and_hash(dir / file)});
  };
  for (const auto& p : r.points) {
    add("hist_" + tau_tag(p.tau_us), "hist_" + tau_tag(p.tau_us) + ".csv",
        [&](std::ostream& o) { write_histogram_csv(o, p.hist); });
  }
  add("widths", "widths.csv", [&](std::ostream& o) { write_widths_csv(o, r.widths); });
  add("mode_count", "mode_count.csv", [&](std::ostream& o) { write_mode_count_csv(o, r); });
  add("report", "report.txt", [&](std::ostream& o) { write_sweep_report(o, r); });
  write_manifest(out.open(dir / "manifest.txt"), m);
  out.commit();
  return m;
}

// ---------------------------------------------------------------- single-photon level

struct MeanEstimate {
  double mean = 0.0;
  double err = 0.0;  ///< standard error of the mean
};

struct SinglePhotonReport {
  std::size_t shots = 0;
  int modes = 0;
  MeanEstimate write_pairs;      ///< generated pairs per shot in the whole memory
  MeanEstimate pairs_per_mode;
  MeanEstimate retrieved_pairs;  ///< pairs whose anti-Stokes photon was read out
  CorrectedHistogram hist;
  std::optional<CorrelationFit> fit;
  double mode_count = 0.0;
  double mode_count_err = 0.0;
  double accidental_fraction = 0.0;
  double coincidence_ratio = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {
struct Moments2 {
  std::uint64_t n = 0, sum = 0, sum_sq = 0;
  void add(std::uint64_t x) {
    ++n;
    sum += x;
    sum_sq += x * x;
  }
  void merge(const Moments2& o) {
    n += o.n;
    sum += o.sum;
    sum_sq += o.sum_sq;
  }
  MeanEstimate estimate(double scale = 1.0) const {
    if (n == 0) return {};
    const double m = static_cast<double>(sum) / n;
    const double var = n > 1 ? (static_cast<double>(sum_sq) - n * m * m) / (n - 1.0) : 0.0;
    return {scale * m, scale * std::sqrt(std::max(var, 0.0) / n)};
  }
};
}  // namespace detail

inline SinglePhotonReport single_photon_level(const ExperimentConfig& c, std::size_t shots, std::uint64_t seed,
                                              int threads, Axis axis = Axis::Y) {
  validate(c);
  if (shots == 0) throw ParameterError("single-photon report needs at least one shot");
  SinglePhotonReport rep;
  rep.shots = shots;
  rep.modes = c.resolved_modes();
  const auto grid = build_mode_grid(c);
  std::vector<detail::Moments2> pairs(static_cast<std::size_t>(worker_count(shots, kShotBlock, threads)));
  std::vector<detail::Moments2> read(pairs.size());
  const auto h = run_stage("simulate", [&] {
    return simulate_histogram(c, grid, shots, seed, threads, axis, [&](int w, const ShotRecord& s) {
      pairs[static_cast<std::size_t>(w)].add(s.write_pairs);
      read[static_cast<std::size_t>(w)].add(s.retrieved);
    });
  });
  for (std::size_t w = 1; w < pairs.size(); ++w) {
    pairs[0].merge(pairs[w]);
    read[0].merge(read[w]);
  }
  rep.write_pairs = pairs[0].estimate();
  rep.pairs_per_mode = pairs[0].estimate(1.0 / rep.modes);
  rep.retrieved_pairs = read[0].estimate();
  rep.hist = run_stage("coincide", [&] { return subtract(h); });
  try {
    rep.accidental_fraction = accidental_fraction(rep.hist, c.central_window_mrad);
    rep.coincidence_ratio = coincidence_ratio(rep.hist, c.central_window_mrad);
  } catch (const ParameterError& e) {
    rep.warnings.push_back(std::string("coincide: ") + e.what());
    rep.accidental_fraction = rep.coincidence_ratio = std::nan("");
  }
  try {
    rep.fit = fit_correlation(rep.hist);
    rep.mode_count = mode_count(*rep.fit);
    rep.mode_count_err = mode_count_error(*rep.fit);
  } catch (const std::exception& e) {
    rep.warnings.push_back(std::string("fit-modes: ") + e.what());
    rep.mode_count = rep.mode_count_err = std::nan("");
  }
  return rep;
}

inline void write_single_photon_report(std::ostream& out, const SinglePhotonReport& r) {
  text::KeyValueWriter w(out);
  w.put_int("shots", static_cast<std::int64_t>(r.shots));
  w.put_int("modes", r.modes);
  w.put("write_pairs_per_shot", r.write_pairs.mean);
  w.put("write_pairs_per_shot_err", r.write_pairs.err);
  w.put("pairs_per_mode", r.pairs_per_mode.mean);
  w.put("pairs_per_mode_err", r.pairs_per_mode.err);
  w.put("retrieved_pairs_per_shot", r.retrieved_pairs.mean);
  w.put("retrieved_pairs_per_shot_err", r.retrieved_pairs.err);
  w.put("mode_count", r.mode_count);
  w.put("mode_count_err", r.mode_count_err);
  w.put("accidental_fraction", r.accidental_fraction);
  w.put("coincidence_ratio", r.coincidence_ratio);
  for (const auto& m : r.warnings) w.put("warning", m);
}

// ---------------------------------------------------------------- noise calibration

struct NoiseCalibration {
  double noise_rate = 0.0;
  double accidental_fraction = 0.0;
  int evaluations = 0;
};

/// Central-window accidental fraction of a simulated run.
inline double simulated_accidental_fraction(const ExperimentConfig& c, std::size_t shots, std::uint64_t seed,
                                            int threads, Axis axis) {
  const auto h = simulate_histogram(c, build_mode_grid(c), shots, seed, threads, axis);
  return accidental_fraction(subtract(h), c.central_window_mrad);
}

/// Bisects noise_rate until the central-window accidental fraction is within
/// `tolerance` of `target`. The fraction is a noisy but increasing function of
/// the rate; every evaluation reuses the same seed.
inline NoiseCalibration calibrate_noise(ExperimentConfig c, double target, std::size_t shots, std::uint64_t seed,
                                        int threads, Axis axis = Axis::X, double tolerance = 0.005) {
  detail::require(target > 0.0 && target < 1.0, "target accidental fraction must lie in (0, 1)");
  detail::require(shots >= 1, "calibration needs at least one shot");
  NoiseCalibration cal;
  auto eval = [&](double rate) {
    c.noise_rate = rate;
    ++cal.evaluations;
    return simulated_accidental_fraction(c, shots, seed, threads, axis);
  };
  double lo = 0.0, f_lo = eval(0.0);
  if (f_lo >= target) return {0.0, f_lo, cal.evaluations};
  double hi = 1.0, f_hi = eval(hi);
  while (f_hi < target) {
    lo = hi;
    f_lo = f_hi;
    hi *= 2.0;
    if (hi > 1e5) throw ParameterError("no noise rate up to 1e5 reaches the target accidental fraction");
    f_hi = eval(hi);
  }
  for (int i = 0; i < 40; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double f = eval(mid);
    if (std::abs(f - target) <= tolerance) return {mid, f, cal.evaluations};
    (f < target ? lo : hi) = mid;
    (f < target ? f_lo : f_hi) = f;
  }
  const bool take_hi = std::abs(f_hi - target) < std::abs(f_lo - target);
  return {take_hi ? hi : lo, take_hi ? f_hi : f_lo, cal.evaluations};
}

}  // namespace holomux
