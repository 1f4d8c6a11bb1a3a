#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace holomux {

/// Raised for out-of-domain physical or numerical parameters.
class ParameterError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for malformed input files and streams.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void require(bool ok, const std::string& what) {
  if (!ok) throw ParameterError(what);
}
}  // namespace detail

constexpr double kMradToRad = 1e-3;
constexpr double kRadToMrad = 1e3;

/// Scattering direction relative to the drive axis, in milliradians.
struct Angle2D {
  double theta_x = 0.0;
  double theta_y = 0.0;

  constexpr Angle2D operator-() const { return {-theta_x, -theta_y}; }
  constexpr Angle2D operator+(const Angle2D& o) const { return {theta_x + o.theta_x, theta_y + o.theta_y}; }
  constexpr Angle2D operator-(const Angle2D& o) const { return {theta_x - o.theta_x, theta_y - o.theta_y}; }
  constexpr bool operator==(const Angle2D&) const = default;

  double norm() const { return std::hypot(theta_x, theta_y); }
  bool finite() const { return std::isfinite(theta_x) && std::isfinite(theta_y); }
  /// True when both components lie inside the square field of view [-fov, fov].
  bool within(double fov_mrad) const {
    return std::abs(theta_x) <= fov_mrad && std::abs(theta_y) <= fov_mrad;
  }
};

/// Spin-wave wave-vector in rad/m.
struct WaveVector {
  double k_x = 0.0;
  double k_y = 0.0;

  double norm_sq() const { return k_x * k_x + k_y * k_y; }
  double norm() const { return std::sqrt(norm_sq()); }
};

/// Anti-Stokes direction selected by phase matching: the mirror of the Stokes direction.
constexpr Angle2D phase_matched_angle(const Angle2D& theta_s) { return -theta_s; }

/// K = 2*pi*theta/lambda, componentwise, with theta converted from mrad.
inline WaveVector wavevector_from_angle(const Angle2D& theta, double lambda_m) {
  detail::require(lambda_m > 0.0, "wavelength must be positive");
  const double scale = 2.0 * std::numbers::pi * kMradToRad / lambda_m;
  return {scale * theta.theta_x, scale * theta.theta_y};
}

/// Fresnel number w^2 / (lambda L) of a cylindrical ensemble.
inline double fresnel_number(double w_beam_m, double lambda_m, double length_m) {
  detail::require(w_beam_m > 0.0 && lambda_m > 0.0 && length_m > 0.0,
                  "fresnel_number: all inputs must be positive");
  return w_beam_m * w_beam_m / (lambda_m * length_m);
}

// Width convention used everywhere: a Gaussian exp(-theta^2 / 2 sigma^2) has its
// 1/e^2 half-width at w = 2 sigma.

inline double width_from_sigma(double sigma) {
  detail::require(sigma >= 0.0, "width_from_sigma: sigma must be non-negative");
  return 2.0 * sigma;
}

inline double sigma_from_width(double width) {
  detail::require(width >= 0.0, "sigma_from_width: width must be non-negative");
  return 0.5 * width;
}

/// Diffraction half-angle lambda/(pi w) of a Gaussian beam, in mrad.
inline double diffraction_angle_mrad(double lambda_m, double w_beam_m) {
  detail::require(lambda_m > 0.0 && w_beam_m > 0.0, "diffraction_angle: inputs must be positive");
  return lambda_m / (std::numbers::pi * w_beam_m) * kRadToMrad;
}

}  // namespace holomux
