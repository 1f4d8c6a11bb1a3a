#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "holomux/core.hpp"
#include "holomux/text.hpp"

namespace holomux {

/// All physical, detector and analysis parameters of one experiment.
///
/// Lengths, times and angles are held in the unit named by the member suffix;
/// SI conversions happen in the accessors below. Optional members are derived
/// from the others when unset.
struct ExperimentConfig {
  // Geometry and source
  double lambda_nm = 795.0;
  double cell_length_cm = 10.0;
  double beam_waist_mm = 2.3;  ///< 1/e^2 intensity radius w of the drive beams
  double zeta = 0.01;          ///< mean write pairs per mode
  std::optional<int> modes;    ///< defaults to round(Fresnel number)
  double optical_depth = 0.0;  ///< metadata only

  // Storage and readout
  double D_m2_per_s = 0.0;
  double tau_us = 0.0;
  double eta_read = 0.3;
  double spinwave_fraction = 1.0;
  double gamma0_per_us = 3.82;
  double t_write_us = 1.0;
  double t_read_us = 1.0;
  bool time_bins = false;

  // Angular structure (mrad)
  double sigma_corr_mrad = 0.41;
  std::optional<double> sigma_kernel_mrad;  ///< defaults to lambda/(pi w)
  std::optional<double> sigma_env_mrad;     ///< Stokes emission envelope, per axis
  double fov_mrad = 25.0;

  // Detection
  double eta_T = 0.5;
  double QE = 0.2;
  double dark_rate = 0.0;   ///< dark counts per gate per region
  double noise_rate = 0.0;  ///< isotropic background events per shot per region

  // Coincidence analysis
  double delta_theta_mrad = 0.3;
  double bin_mrad = 0.15;
  double central_window_mrad = 0.3;

  // Camera
  int frame_width = 1024;
  int frame_height = 512;
  double mrad_per_px = 0.1;
  double spot_amplitude = 200.0;
  double spot_sigma_px = 1.2;
  int noise_floor = 200;
  double noise_sigma = 10.0;
  double threshold_sigma = 5.0;
  int max_area_px = 100;

  double lambda_m() const { return lambda_nm * 1e-9; }
  double cell_length_m() const { return cell_length_cm * 1e-2; }
  double beam_waist_m() const { return beam_waist_mm * 1e-3; }
  double tau_s() const { return tau_us * 1e-6; }
  double gamma0_per_s() const { return gamma0_per_us * 1e6; }
  double detection_efficiency() const { return eta_T * QE; }

  double fresnel() const { return fresnel_number(beam_waist_m(), lambda_m(), cell_length_m()); }
  int resolved_modes() const { return modes ? *modes : static_cast<int>(std::lround(fresnel())); }
  double resolved_sigma_kernel_mrad() const {
    return sigma_kernel_mrad ? *sigma_kernel_mrad : diffraction_angle_mrad(lambda_m(), beam_waist_m());
  }
  /// Spread of the paired emission along u = (theta_S + theta_AS)/sqrt(2).
  double conditional_width_mrad() const {
    const double k = resolved_sigma_kernel_mrad();
    return std::sqrt(0.5 * (sigma_corr_mrad * sigma_corr_mrad + k * k));
  }
  /// Unset envelope is sized so that the mode grid gives 2 (sigma_diff / sigma_sum)^2
  /// equal to the mode count.
  double resolved_sigma_env_mrad() const;
};

namespace detail {

using ConfigField = std::variant<double ExperimentConfig::*, int ExperimentConfig::*, bool ExperimentConfig::*,
                                 std::optional<int> ExperimentConfig::*, std::optional<double> ExperimentConfig::*>;

struct ConfigKey {
  const char* name;
  ConfigField field;
};

inline const std::vector<ConfigKey>& config_keys() {
  using C = ExperimentConfig;
  static const std::vector<ConfigKey> keys = {
      {"lambda_nm", &C::lambda_nm},
      {"cell_length_cm", &C::cell_length_cm},
      {"beam_waist_mm", &C::beam_waist_mm},
      {"zeta", &C::zeta},
      {"modes", &C::modes},
      {"optical_depth", &C::optical_depth},
      {"D_m2_per_s", &C::D_m2_per_s},
      {"tau_us", &C::tau_us},
      {"eta_read", &C::eta_read},
      {"spinwave_fraction", &C::spinwave_fraction},
      {"gamma0_per_us", &C::gamma0_per_us},
      {"t_write_us", &C::t_write_us},
      {"t_read_us", &C::t_read_us},
      {"time_bins", &C::time_bins},
      {"sigma_corr_mrad", &C::sigma_corr_mrad},
      {"sigma_kernel_mrad", &C::sigma_kernel_mrad},
      {"sigma_env_mrad", &C::sigma_env_mrad},
      {"fov_mrad", &C::fov_mrad},
      {"eta_T", &C::eta_T},
      {"QE", &C::QE},
      {"dark_rate", &C::dark_rate},
      {"noise_rate", &C::noise_rate},
      {"delta_theta_mrad", &C::delta_theta_mrad},
      {"bin_mrad", &C::bin_mrad},
      {"central_window_mrad", &C::central_window_mrad},
      {"frame_width", &C::frame_width},
      {"frame_height", &C::frame_height},
      {"mrad_per_px", &C::mrad_per_px},
      {"spot_amplitude", &C::spot_amplitude},
      {"spot_sigma_px", &C::spot_sigma_px},
      {"noise_floor", &C::noise_floor},
      {"noise_sigma", &C::noise_sigma},
      {"threshold_sigma", &C::threshold_sigma},
      {"max_area_px", &C::max_area_px},
  };
  return keys;
}

inline bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw FormatError("not a boolean: '" + std::string(v) + "'");
}

}  // namespace detail

/// Throws ParameterError on the first violated invariant.
inline void validate(const ExperimentConfig& c) {
  using detail::require;
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  require(c.lambda_nm > 0.0, "lambda_nm must be positive");
  require(c.cell_length_cm > 0.0, "cell_length_cm must be positive");
  require(c.beam_waist_mm > 0.0, "beam_waist_mm must be positive");
  require(c.zeta >= 0.0 && c.zeta < 1.0, "zeta must lie in [0, 1)");
  require(!c.modes || *c.modes >= 1, "modes must be a positive integer");
  require(c.D_m2_per_s >= 0.0, "D_m2_per_s must be non-negative");
  require(c.tau_us >= 0.0, "tau_us must be non-negative");
  require(unit(c.eta_read) && unit(c.eta_T) && unit(c.QE) && unit(c.spinwave_fraction),
          "efficiencies must lie in [0, 1]");
  require(c.gamma0_per_us >= 0.0, "gamma0_per_us must be non-negative");
  require(c.t_write_us > 0.0 && c.t_read_us > 0.0, "gate durations must be positive");
  require(c.sigma_corr_mrad >= 0.0, "sigma_corr_mrad must be non-negative");
  require(!c.sigma_kernel_mrad || *c.sigma_kernel_mrad >= 0.0, "sigma_kernel_mrad must be non-negative");
  require(!c.sigma_env_mrad || *c.sigma_env_mrad >= 0.0, "sigma_env_mrad must be non-negative");
  require(c.fov_mrad > 0.0, "fov_mrad must be positive");
  require(c.dark_rate >= 0.0 && c.noise_rate >= 0.0, "noise rates must be non-negative");
  require(c.delta_theta_mrad > 0.0 && c.bin_mrad > 0.0, "delta_theta_mrad and bin_mrad must be positive");
  require(c.central_window_mrad > 0.0, "central_window_mrad must be positive");
  require(c.frame_width >= 2 && c.frame_height >= 1 && c.frame_width <= 65535 && c.frame_height <= 65535,
          "frame dimensions out of range");
  require(c.mrad_per_px > 0.0, "mrad_per_px must be positive");
  require(c.spot_amplitude >= 0.0 && c.spot_sigma_px > 0.0, "spot model must be positive");
  require(c.noise_floor >= 0 && c.noise_floor < 65535 && c.noise_sigma >= 0.0, "camera noise model out of range");
  require(c.threshold_sigma > 0.0 && c.max_area_px >= 1, "extraction thresholds must be positive");
}

/// Mean occupancy above which per-mode statistics leave the linear regime.
constexpr double kLinearRegimeOccupancy = 0.47;

inline std::vector<std::string> config_warnings(const ExperimentConfig& c) {
  std::vector<std::string> out;
  if (c.zeta > kLinearRegimeOccupancy) {
    out.push_back("zeta=" + text::sig6(c.zeta) + " exceeds the linear-regime occupancy 0.47 per mode");
  }
  return out;
}

inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::vector<std::string> seen;
  for (const auto& kv : text::read_keyvalue(in)) {
    const auto& keys = detail::config_keys();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return kv.key == k.name; });
    const std::string where = "line " + std::to_string(kv.line) + ": ";
    if (it == keys.end()) throw FormatError(where + "unknown key '" + kv.key + "'");
    if (std::find(seen.begin(), seen.end(), kv.key) != seen.end()) {
      throw FormatError(where + "duplicate key '" + kv.key + "'");
    }
    seen.push_back(kv.key);
    try {
      std::visit(
          [&](auto member) {
            using M = std::remove_reference_t<decltype(c.*member)>;
            if constexpr (std::is_same_v<M, double> || std::is_same_v<M, std::optional<double>>) {
              c.*member = text::parse_double(kv.value);
            } else if constexpr (std::is_same_v<M, int> || std::is_same_v<M, std::optional<int>>) {
              c.*member = static_cast<int>(text::parse_int(kv.value));
            } else {
              c.*member = detail::parse_bool(kv.value);
            }
          },
          it->field);
    } catch (const FormatError& e) {
      throw FormatError(where + kv.key + ": " + e.what());
    }
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file '" + path + "'");
  return parse_config(in);
}

/// Writes every set key with round-trip precision.
inline void write_config(std::ostream& out, const ExperimentConfig& c) {
  text::KeyValueWriter w(out);
  for (const auto& key : detail::config_keys()) {
    std::visit(
        [&](auto member) {
          const auto& v = c.*member;
          using M = std::remove_cvref_t<decltype(v)>;
          if constexpr (std::is_same_v<M, double>) {
            w.put_exact(key.name, v);
          } else if constexpr (std::is_same_v<M, int>) {
            w.put_int(key.name, v);
          } else if constexpr (std::is_same_v<M, bool>) {
            w.put(key.name, v ? "true" : "false");
          } else if constexpr (std::is_same_v<M, std::optional<int>>) {
            if (v) w.put_int(key.name, *v);
          } else {
            if (v) w.put_exact(key.name, *v);
          }
        },
        key.field);
  }
}

/// Angular modes of the memory: M cells tiling a Gaussian emission envelope
/// with equal probability mass each.
struct ModeGrid {
  std::vector<Angle2D> cells;  ///< mode centers
  double cell_width = 0.0;     ///< side of an equal-area cell at the envelope center (mrad)
  double envelope_sigma = 0.0;

  std::size_t size() const { return cells.size(); }
  /// Second moment of the mode centers along one axis.
  double variance_x() const {
    double s = 0.0;
    for (const auto& c : cells) s += c.theta_x * c.theta_x;
    return cells.empty() ? 0.0 : s / static_cast<double>(cells.size());
  }
  double variance_y() const {
    double s = 0.0;
    for (const auto& c : cells) s += c.theta_y * c.theta_y;
    return cells.empty() ? 0.0 : s / static_cast<double>(cells.size());
  }
};

/// Sunflower spiral with Gaussian radial quantiles: cell k sits at the median
/// radius of the k-th equal-mass annulus, rotated by the golden angle. The
/// Voronoi cells of these centers tile the plane; the set is recentred on the
/// origin.
inline ModeGrid build_mode_grid(int modes, double envelope_sigma_mrad) {
  detail::require(modes >= 1, "mode grid needs at least one mode");
  detail::require(envelope_sigma_mrad >= 0.0, "envelope width must be non-negative");
  ModeGrid g;
  g.envelope_sigma = envelope_sigma_mrad;
  g.cells.reserve(static_cast<std::size_t>(modes));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const double m = static_cast<double>(modes);
  Angle2D mean{};
  for (int k = 0; k < modes; ++k) {
    const double r = envelope_sigma_mrad * std::sqrt(-2.0 * std::log1p(-(k + 0.5) / m));
    const double phi = golden * k;
    Angle2D c{r * std::cos(phi), r * std::sin(phi)};
    mean = mean + c;
    g.cells.push_back(c);
  }
  mean = {mean.theta_x / m, mean.theta_y / m};
  for (auto& c : g.cells) c = c - mean;
  g.cell_width = std::sqrt(2.0 * std::numbers::pi / m) * envelope_sigma_mrad;
  return g;
}

inline double ExperimentConfig::resolved_sigma_env_mrad() const {
  if (sigma_env_mrad) return *sigma_env_mrad;
  const int m = resolved_modes();
  const double unit_var = build_mode_grid(m, 1.0).variance_x();
  if (m < 2 || unit_var <= 0.0) return 0.0;
  return conditional_width_mrad() * std::sqrt((m - 2.0) / (4.0 * unit_var));
}

inline ModeGrid build_mode_grid(const ExperimentConfig& c) {
  return build_mode_grid(c.resolved_modes(), c.resolved_sigma_env_mrad());
}

}  // namespace holomux
