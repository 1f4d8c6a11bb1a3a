#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "holomux/config.hpp"
#include "holomux/core.hpp"
#include "holomux/random.hpp"

namespace holomux {

enum class Region : std::uint8_t { Stokes, AntiStokes };

/// Gate granularity of the optional time-resolved readout.
constexpr double kTimeBinNs = 100.0;

struct PhotonEvent {
  Region region = Region::Stokes;
  Angle2D angle;
  std::int64_t shot_id = 0;
  std::optional<double> time_bin_ns;
  /// Index of the originating write pair within the shot; -1 for noise and dark counts.
  std::int32_t origin = -1;

  bool operator==(const PhotonEvent&) const = default;
};

/// Write-stage content of one mode.
struct ModeExcitation {
  Angle2D mode_center;
  std::uint32_t pair_count = 0;
  WaveVector k;
  std::vector<Angle2D> stokes_angles;  ///< one per pair
};

/// One photon/spin-wave pair after the write stage.
struct SpinWave {
  std::int32_t pair_index = 0;
  Angle2D mode_center;
  WaveVector k;
};

struct TruthLink {
  std::uint32_t stokes_index = 0;
  std::uint32_t antistokes_index = 0;
  bool operator==(const TruthLink&) const = default;
};

struct ShotRecord {
  std::int64_t shot_id = 0;
  std::vector<PhotonEvent> stokes_events;
  std::vector<PhotonEvent> antistokes_events;
  std::vector<TruthLink> truth;
  /// Bookkeeping before detection: generated pairs and retrieved anti-Stokes photons.
  std::uint32_t write_pairs = 0;
  std::uint32_t retrieved = 0;

  bool operator==(const ShotRecord&) const = default;
};

/// Per-axis jitter of each arm around its mode direction; the two arms together
/// spread theta_S + theta_AS by sigma_corr.
inline double arm_jitter_mrad(const ExperimentConfig& c) { return c.sigma_corr_mrad / std::numbers::sqrt2; }

/// Thermal (two-mode-squeezed marginal) pair counts per mode, with a Stokes
/// direction drawn for every pair.
inline std::vector<ModeExcitation> sample_write(const ExperimentConfig& c, const ModeGrid& grid, Rng& rng) {
  detail::require(c.zeta >= 0.0 && c.zeta < 1.0, "sample_write: zeta must lie in [0, 1)");
  const double q = c.zeta / (1.0 + c.zeta);
  const double jitter = arm_jitter_mrad(c);
  std::vector<ModeExcitation> out;
  out.reserve(grid.size());
  for (const auto& center : grid.cells) {
    ModeExcitation m;
    m.mode_center = center;
    m.k = wavevector_from_angle(center, c.lambda_m());
    m.pair_count = static_cast<std::uint32_t>(rng.geometric(q));
    m.stokes_angles.reserve(m.pair_count);
    for (std::uint32_t i = 0; i < m.pair_count; ++i) {
      const double jx = rng.normal();
      const double jy = rng.normal();
      m.stokes_angles.push_back({center.theta_x + jitter * jx, center.theta_y + jitter * jy});
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Probability that a stored excitation with wave-vector K survives diffusion for tau.
inline double storage_survival(const WaveVector& k, double D_m2_per_s, double tau_s) {
  detail::require(D_m2_per_s >= 0.0, "storage_survival: D must be non-negative");
  detail::require(tau_s >= 0.0, "storage_survival: tau must be non-negative");
  return std::exp(-2.0 * D_m2_per_s * tau_s * k.norm_sq());
}

/// Relative anti-Stokes intensity at time t into the read gate.
inline double read_intensity_envelope(double t_s, double gamma0_per_s) {
  detail::require(t_s >= 0.0, "read_intensity_envelope: t must be non-negative");
  return std::exp(-gamma0_per_s * t_s);
}

/// Spin-waves that remain after the optional spin-wave fraction and diffusion.
inline std::vector<SpinWave> apply_storage(const std::vector<ModeExcitation>& write, const ExperimentConfig& c,
                                           Rng& rng) {
  std::vector<SpinWave> out;
  std::int32_t pair = 0;
  for (const auto& m : write) {
    const double survive = storage_survival(m.k, c.D_m2_per_s, c.tau_s());
    for (std::uint32_t i = 0; i < m.pair_count; ++i, ++pair) {
      if (!rng.bernoulli(c.spinwave_fraction)) continue;
      if (!rng.bernoulli(survive)) continue;
      out.push_back({pair, m.mode_center, m.k});
    }
  }
  return out;
}

/// Anti-Stokes retrieval: each spin-wave converts with probability eta_read into
/// the phase-matched direction, blurred by the arm jitter and the read kernel.
inline std::vector<PhotonEvent> sample_read(const std::vector<SpinWave>& stored, const ExperimentConfig& c, Rng& rng) {
  const double jitter = arm_jitter_mrad(c);
  const double kernel = c.resolved_sigma_kernel_mrad();
  std::vector<PhotonEvent> out;
  for (const auto& sw : stored) {
    if (!rng.bernoulli(c.eta_read)) continue;
    const Angle2D mirror = phase_matched_angle(sw.mode_center);
    PhotonEvent e;
    e.region = Region::AntiStokes;
    e.origin = sw.pair_index;
    const double jx = rng.normal();
    const double jy = rng.normal();
    const double kx = rng.normal();
    const double ky = rng.normal();
    e.angle = {mirror.theta_x + jitter * jx + kernel * kx, mirror.theta_y + jitter * jy + kernel * ky};
    if (c.time_bins) {
      const double t_ns = rng.truncated_exponential(c.gamma0_per_us * 1e-3, c.t_read_us * 1e3);
      e.time_bin_ns = std::floor(t_ns / kTimeBinNs) * kTimeBinNs;
    }
    if (e.angle.within(c.fov_mrad)) out.push_back(e);
  }
  return out;
}

namespace detail {
inline void uniform_events(std::uint64_t count, Region region, const ExperimentConfig& c, double gate_us, Rng& rng,
                           std::vector<PhotonEvent>& out) {
  for (std::uint64_t i = 0; i < count; ++i) {
    PhotonEvent e;
    e.region = region;
    e.angle = {rng.uniform(-c.fov_mrad, c.fov_mrad), rng.uniform(-c.fov_mrad, c.fov_mrad)};
    if (c.time_bins) e.time_bin_ns = std::floor(rng.uniform() * gate_us * 1e3 / kTimeBinNs) * kTimeBinNs;
    out.push_back(e);
  }
}
}  // namespace detail

/// Isotropic incoherent background over the field of view, before detection.
inline std::vector<PhotonEvent> sample_noise(const ExperimentConfig& c, Region region, Rng& rng) {
  std::vector<PhotonEvent> out;
  const double gate = region == Region::Stokes ? c.t_write_us : c.t_read_us;
  detail::uniform_events(rng.poisson(c.noise_rate), region, c, gate, rng, out);
  return out;
}

/// Intensifier dark counts; these never pass through the optical thinning.
inline std::vector<PhotonEvent> sample_dark(const ExperimentConfig& c, Region region, Rng& rng) {
  std::vector<PhotonEvent> out;
  const double gate = region == Region::Stokes ? c.t_write_us : c.t_read_us;
  detail::uniform_events(rng.poisson(c.dark_rate), region, c, gate, rng, out);
  return out;
}

/// Keeps each physical event with probability eta_T * QE, order preserved.
inline std::vector<PhotonEvent> detect(const std::vector<PhotonEvent>& events, const ExperimentConfig& c, Rng& rng) {
  const double p = c.detection_efficiency();
  std::vector<PhotonEvent> out;
  out.reserve(events.size());
  for (const auto& e : events) {
    if (rng.bernoulli(p)) out.push_back(e);
  }
  return out;
}

/// One complete shot, fully determined by (config, shot_id, master_seed).
inline ShotRecord run_shot(const ExperimentConfig& c, const ModeGrid& grid, std::int64_t shot_id,
                           std::uint64_t master_seed) {
  Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(shot_id), stream::simulate));
  ShotRecord shot;
  shot.shot_id = shot_id;

  const auto write = sample_write(c, grid, rng);
  std::vector<PhotonEvent> stokes;
  std::int32_t pair = 0;
  for (const auto& m : write) {
    shot.write_pairs += m.pair_count;
    for (const auto& a : m.stokes_angles) {
      PhotonEvent e;
      e.region = Region::Stokes;
      e.angle = a;
      e.origin = pair++;
      if (c.time_bins) e.time_bin_ns = std::floor(rng.uniform() * c.t_write_us * 1e3 / kTimeBinNs) * kTimeBinNs;
      if (a.within(c.fov_mrad)) stokes.push_back(e);
    }
  }
  const auto stored = apply_storage(write, c, rng);
  auto anti = sample_read(stored, c, rng);
  shot.retrieved = static_cast<std::uint32_t>(anti.size());

  for (auto& e : sample_noise(c, Region::Stokes, rng)) stokes.push_back(e);
  for (auto& e : sample_noise(c, Region::AntiStokes, rng)) anti.push_back(e);

  shot.stokes_events = detect(stokes, c, rng);
  shot.antistokes_events = detect(anti, c, rng);
  for (auto& e : sample_dark(c, Region::Stokes, rng)) shot.stokes_events.push_back(e);
  for (auto& e : sample_dark(c, Region::AntiStokes, rng)) shot.antistokes_events.push_back(e);

  for (auto* list : {&shot.stokes_events, &shot.antistokes_events}) {
    for (auto& e : *list) e.shot_id = shot_id;
  }

  // Origins are ascending in both lists, so a merge walk finds the links.
  std::size_t i = 0, j = 0;
  const auto& s = shot.stokes_events;
  const auto& as = shot.antistokes_events;
  while (i < s.size() && j < as.size()) {
    if (s[i].origin < 0) {
      ++i;
    } else if (as[j].origin < 0) {
      ++j;
    } else if (s[i].origin < as[j].origin) {
      ++i;
    } else if (as[j].origin < s[i].origin) {
      ++j;
    } else {
      shot.truth.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)});
      ++i;
      ++j;
    }
  }
  return shot;
}

inline ShotRecord run_shot(const ExperimentConfig& c, std::int64_t shot_id, std::uint64_t master_seed) {
  return run_shot(c, build_mode_grid(c), shot_id, master_seed);
}

}  // namespace holomux
