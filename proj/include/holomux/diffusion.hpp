#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "holomux/config.hpp"
#include "holomux/core.hpp"
#include "holomux/correlation_fit.hpp"
#include "holomux/lsq.hpp"
#include "holomux/memory_sim.hpp"
#include "holomux/text.hpp"

namespace holomux {

/// 8 pi^2 / lambda^2 in rad^-2 m^-2.
inline double diffusion_rate_scale(double lambda_m) {
  detail::require(lambda_m > 0.0, "wavelength must be positive");
  return 8.0 * std::numbers::pi * std::numbers::pi / (lambda_m * lambda_m);
}

/// sigma(t) = [sigma0^-2 + 8 pi^2 D t / lambda^2]^(-1/2), angles in mrad.
inline double variance_evolution(double sigma0_mrad, double D_m2_per_s, double t_s, double lambda_m) {
  detail::require(sigma0_mrad > 0.0, "variance_evolution: sigma0 must be positive");
  detail::require(D_m2_per_s >= 0.0 && t_s >= 0.0, "variance_evolution: D and t must be non-negative");
  const double s0 = sigma0_mrad * kMradToRad;
  const double g = 1.0 + diffusion_rate_scale(lambda_m) * D_m2_per_s * t_s * s0 * s0;
  return sigma0_mrad / std::sqrt(g);
}

/// Coincidences at anti-Stokes angle theta after storage time t.
inline double coincidence_decay(double n0, const Angle2D& theta, double D_m2_per_s, double t_s, double lambda_m) {
  detail::require(n0 >= 0.0, "coincidence_decay: n0 must be non-negative");
  return n0 * storage_survival(wavevector_from_angle(theta, lambda_m), D_m2_per_s, t_s);
}

/// Width of a Gaussian convolved with a Gaussian kernel.
inline double convolved_width(double sigma_atomic, double sigma_kernel) {
  detail::require(sigma_atomic >= 0.0 && sigma_kernel >= 0.0, "convolved_width: inputs must be non-negative");
  return std::hypot(sigma_atomic, sigma_kernel);
}

/// Atomic and kernel contributions to the retrieved correlation at zero storage.
struct ModeWidths {
  double atomic_sum = 0.0;   ///< mrad
  double atomic_diff = 0.0;  ///< mrad
  double kernel = 0.0;       ///< mrad, common to both directions
};

/// The mode centers carry the whole diagonal span along the histogrammed x axis;
/// jitter and read kernel the conditional spread in both directions.
inline ModeWidths initial_widths(const ExperimentConfig& c) {
  const auto grid = build_mode_grid(c);
  return {0.0, std::sqrt(2.0 * grid.variance_x()), c.conditional_width_mrad()};
}

/// Evolved then convolved (sigma_sum, sigma_diff) in mrad.
inline std::pair<double, double> predict_widths(const ModeWidths& w, double D_m2_per_s, double tau_s, double lambda_m) {
  auto evolve = [&](double s0) { return s0 > 0.0 ? variance_evolution(s0, D_m2_per_s, tau_s, lambda_m) : 0.0; };
  return {convolved_width(evolve(w.atomic_sum), w.kernel), convolved_width(evolve(w.atomic_diff), w.kernel)};
}

inline double predict_mode_count(const ExperimentConfig& c, double tau_s) {
  detail::require(tau_s >= 0.0, "predict_mode_count: tau must be non-negative");
  const auto [s, d] = predict_widths(initial_widths(c), c.D_m2_per_s, tau_s, c.lambda_m());
  return mode_count(s, d);
}

/// D that brings the predicted mode count to `target` after `tau_s`.
inline double diffusion_for_mode_count(const ExperimentConfig& c, double tau_s, double target) {
  detail::require(tau_s > 0.0, "diffusion_for_mode_count: tau must be positive");
  const auto w = initial_widths(c);
  detail::require(w.kernel > 0.0, "diffusion_for_mode_count: needs a finite conditional width");
  const double m0 = mode_count(convolved_width(w.atomic_sum, w.kernel), convolved_width(w.atomic_diff, w.kernel));
  detail::require(target > 2.0 && target <= m0, "diffusion_for_mode_count: target must lie in (2, M(0)]");
  const double atomic = w.kernel * std::sqrt(target / 2.0 - 1.0) * kMradToRad;
  const double s0 = w.atomic_diff * kMradToRad;
  return (1.0 / (atomic * atomic) - 1.0 / (s0 * s0)) / (diffusion_rate_scale(c.lambda_m()) * tau_s);
}

struct WidthEntry {
  double tau_us = 0.0;
  double sigma_sum = 0.0;  ///< mrad
  double sigma_sum_err = 0.0;
  double sigma_diff = 0.0;  ///< mrad
  double sigma_diff_err = 0.0;
};

struct WidthSeries {
  std::vector<WidthEntry> entries;

  void validate() const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      detail::require(e.tau_us >= 0.0, "width series: tau must be non-negative");
      detail::require(i == 0 || e.tau_us > entries[i - 1].tau_us, "width series: taus must be strictly increasing");
      detail::require(e.sigma_sum > 0.0 && e.sigma_diff > 0.0, "width series: widths must be positive");
      detail::require(e.sigma_sum_err > 0.0 && e.sigma_diff_err > 0.0, "width series: errors must be positive");
    }
  }
};

inline void write_widths_csv(std::ostream& out, const WidthSeries& s) {
  out << "tau_us,sigma_sum_mrad,sigma_sum_err,sigma_diff_mrad,sigma_diff_err\n";
  for (const auto& e : s.entries) {
    out << text::sig6(e.tau_us) << ',' << text::sig6(e.sigma_sum) << ',' << text::sig6(e.sigma_sum_err) << ','
        << text::sig6(e.sigma_diff) << ',' << text::sig6(e.sigma_diff_err) << '\n';
  }
}

inline WidthSeries read_widths_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "tau_us,sigma_sum_mrad,sigma_sum_err,sigma_diff_mrad,sigma_diff_err") {
    throw FormatError("widths CSV: unexpected header");
  }
  WidthSeries s;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = text::trim(line);
    if (row.empty()) continue;
    const auto f = text::split(row, ',');
    if (f.size() != 5) throw FormatError("widths CSV line " + std::to_string(line_no) + ": expected 5 fields");
    try {
      s.entries.push_back({text::parse_double(f[0]), text::parse_double(f[1]), text::parse_double(f[2]),
                           text::parse_double(f[3]), text::parse_double(f[4])});
    } catch (const FormatError& e) {
      throw FormatError("widths CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  try {
    s.validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string("widths CSV: ") + e.what());
  }
  return s;
}

struct DiffusionFitResult {
  double D = 0.0;  ///< m^2/s
  double D_err = 0.0;
  double sigma0_sum = 0.0;  ///< atomic, mrad
  double sigma0_sum_err = 0.0;
  double sigma0_diff = 0.0;  ///< atomic, mrad
  double sigma0_diff_err = 0.0;
  double residual_norm = 0.0;  ///< sqrt of the weighted chi-square
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();  ///< D, sigma0_sum, sigma0_diff
  int iterations = 0;
  bool clamped = false;
  std::vector<std::string> warnings;
};

namespace detail {

/// Convolved width and its derivatives w.r.t. (D, sigma0) at one storage time.
struct WidthModel {
  double value, d_D, d_s0;
};

inline WidthModel width_model(double s0_mrad, double D, double tau_s, double kernel_mrad, double c) {
  const double s0 = s0_mrad * kMradToRad;
  const double g = 1.0 + c * D * tau_s * s0 * s0;
  const double s = s0 / std::sqrt(g);
  const double total = std::hypot(s, kernel_mrad * kMradToRad);
  if (total == 0.0) return {0.0, 0.0, 1.0};
  const double ds_dD = -0.5 * c * tau_s * s * s * s;
  const double ds_ds0 = std::pow(g, -1.5);
  // Back to mrad; sigma0 derivative is dimensionless.
  return {total * kRadToMrad, s / total * ds_dD * kRadToMrad, s / total * ds_ds0};
}

}  // namespace detail

/// Weighted least squares of the evolved, convolved widths over (log D, sigma0_sum, sigma0_diff).
inline DiffusionFitResult fit_D(const WidthSeries& series, double lambda_m, double sigma_kernel_mrad) {
  series.validate();
  detail::require(series.entries.size() >= 3, "fit_D needs at least three storage times");
  detail::require(sigma_kernel_mrad >= 0.0, "fit_D: kernel width must be non-negative");
  const double c = diffusion_rate_scale(lambda_m);
  const auto& e = series.entries;
  const auto n = static_cast<Eigen::Index>(e.size());

  auto atomic = [&](double total) {
    return std::sqrt(std::max(total * total - sigma_kernel_mrad * sigma_kernel_mrad, 0.01 * total * total));
  };
  const double s0s = atomic(e.front().sigma_sum), s0d = atomic(e.front().sigma_diff);
  const double s_end = atomic(e.back().sigma_diff) * kMradToRad, s_start = s0d * kMradToRad;
  const double dt = (e.back().tau_us - e.front().tau_us) * 1e-6;
  double D0 = dt > 0.0 ? (1.0 / (s_end * s_end) - 1.0 / (s_start * s_start)) / (c * dt) : 0.0;
  if (!(D0 > 0.0)) D0 = 1e-3 * 1.0 / (c * std::max(dt, 1e-6) * s_start * s_start);

  auto residuals = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
    const double D = std::exp(p[0]);
    if (!std::isfinite(D)) return false;
    r.resize(2 * n);
    J.setZero(2 * n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double tau = e[i].tau_us * 1e-6;
      const auto ms = detail::width_model(std::abs(p[1]), D, tau, sigma_kernel_mrad, c);
      const auto md = detail::width_model(std::abs(p[2]), D, tau, sigma_kernel_mrad, c);
      r[2 * i] = (ms.value - e[i].sigma_sum) / e[i].sigma_sum_err;
      r[2 * i + 1] = (md.value - e[i].sigma_diff) / e[i].sigma_diff_err;
      J(2 * i, 0) = D * ms.d_D / e[i].sigma_sum_err;
      J(2 * i, 1) = (p[1] < 0.0 ? -1.0 : 1.0) * ms.d_s0 / e[i].sigma_sum_err;
      J(2 * i + 1, 0) = D * md.d_D / e[i].sigma_diff_err;
      J(2 * i + 1, 2) = (p[2] < 0.0 ? -1.0 : 1.0) * md.d_s0 / e[i].sigma_diff_err;
    }
    return true;
  };

  Eigen::VectorXd p0(3);
  p0 << std::log(D0), s0s, s0d;
  LsqOptions opt;
  opt.max_iterations = 500;
  const auto res = levenberg_marquardt(residuals, p0, opt);

  DiffusionFitResult out;
  out.D = std::exp(res.params[0]);
  out.sigma0_sum = std::abs(res.params[1]);
  out.sigma0_diff = std::abs(res.params[2]);
  out.iterations = res.iterations;
  out.residual_norm = std::sqrt(res.chi2);

  // Covariance in linear parameters from the Jacobian at the optimum.
  Eigen::MatrixXd J(2 * n, 3);
  Eigen::VectorXd grad_D(2 * n), r(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double tau = e[i].tau_us * 1e-6;
    const auto ms = detail::width_model(out.sigma0_sum, out.D, tau, sigma_kernel_mrad, c);
    const auto md = detail::width_model(out.sigma0_diff, out.D, tau, sigma_kernel_mrad, c);
    J.row(2 * i) << ms.d_D / e[i].sigma_sum_err, ms.d_s0 / e[i].sigma_sum_err, 0.0;
    J.row(2 * i + 1) << md.d_D / e[i].sigma_diff_err, 0.0, md.d_s0 / e[i].sigma_diff_err;
    r[2 * i] = (ms.value - e[i].sigma_sum) / e[i].sigma_sum_err;
    r[2 * i + 1] = (md.value - e[i].sigma_diff) / e[i].sigma_diff_err;
  }
  const Eigen::Index dof = 2 * n - 3;
  const double scale = dof > 0 ? std::max(res.chi2 / static_cast<double>(dof), 1.0) : 1.0;
  out.covariance = (J.transpose() * J).completeOrthogonalDecomposition().pseudoInverse() * scale;
  out.D_err = std::sqrt(out.covariance(0, 0));
  out.sigma0_sum_err = std::sqrt(out.covariance(1, 1));
  out.sigma0_diff_err = std::sqrt(out.covariance(2, 2));

  // A vanishing D whose chi-square still falls towards negative D is a clamped optimum.
  const double slope = J.col(0).dot(r);
  if (out.D < 1e-6 * std::max(out.D_err, 1e-300) && slope > 0.0) {
    out.D = 0.0;
    out.clamped = true;
    out.warnings.push_back("negative-D optimum clamped to 0");
  } else if (out.D < 1e-12 * D0) {
    out.D = 0.0;
  }
  return out;
}

inline void write_diffusion_fit(std::ostream& out, const DiffusionFitResult& r) {
  text::KeyValueWriter w(out);
  w.put("D_m2_per_s", r.D);
  w.put("D_err", r.D_err);
  w.put("sigma0_sum_mrad", r.sigma0_sum);
  w.put("sigma0_sum_err", r.sigma0_sum_err);
  w.put("sigma0_diff_mrad", r.sigma0_diff);
  w.put("sigma0_diff_err", r.sigma0_diff_err);
  w.put("residual_norm", r.residual_norm);
  w.put_int("iterations", r.iterations);
  w.put("clamped", r.clamped ? "true" : "false");
  for (const auto& msg : r.warnings) w.put("warning", msg);
}

}  // namespace holomux
