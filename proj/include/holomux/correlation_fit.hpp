#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "holomux/coincidence.hpp"
#include "holomux/core.hpp"
#include "holomux/lsq.hpp"
#include "holomux/text.hpp"

namespace holomux {

/// Gaussian correlation shape in rotated coordinates
/// u = (theta_S + theta_AS)/sqrt(2), v = (theta_S - theta_AS)/sqrt(2).
struct CorrelationFit {
  double amplitude = 0.0;
  double center_s = 0.0;   ///< mrad
  double center_as = 0.0;  ///< mrad
  double sigma_sum = 0.0;  ///< spread along u, mrad
  double sigma_diff = 0.0; ///< spread along v, mrad
  double sigma_sum_err = 0.0;
  double sigma_diff_err = 0.0;
  Eigen::Matrix<double, 5, 5> covariance = Eigen::Matrix<double, 5, 5>::Zero();  ///< A, cs, cas, log su, log sv
  double chi2 = 0.0;
  int dof = 0;
  int iterations = 0;
};

struct CorrelationFitOptions {
  double window_sigmas = 4.0;  ///< fit region half-width in units of the larger spread
  int min_window_bins = 6;
  bool sheppard = true;        ///< remove the bin-width variance b^2/12
  int reweight_passes = 2;     ///< refits with variances from the fitted expectation
};

inline double mode_count(double sigma_sum, double sigma_diff) {
  detail::require(sigma_sum > 0.0, "mode count needs a positive sum-direction width");
  const double r = sigma_diff / sigma_sum;
  return 2.0 * r * r;
}

inline double mode_count(const CorrelationFit& f) { return mode_count(f.sigma_sum, f.sigma_diff); }

/// First-order error of 2 (sd/ss)^2 from independent width errors.
inline double mode_count_error(const CorrelationFit& f) {
  const double m = mode_count(f);
  return 2.0 * m * std::hypot(f.sigma_sum_err / f.sigma_sum, f.sigma_diff_err / f.sigma_diff);
}

namespace detail {

struct Moments {
  double cs = 0.0, cas = 0.0, var_u = 0.0, var_v = 0.0, total = 0.0;
};

inline Moments window_moments(const CorrectedHistogram& h, int i0, int j0, int radius) {
  const int n = h.bins.count();
  Moments m;
  double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (int i = std::max(0, i0 - radius); i <= std::min(n - 1, i0 + radius); ++i) {
    for (int j = std::max(0, j0 - radius); j <= std::min(n - 1, j0 + radius); ++j) {
      const double w = h.n_corr(i, j), x = h.bins.center(i), y = h.bins.center(j);
      m.total += w;
      sx += w * x;
      sy += w * y;
      sxx += w * x * x;
      syy += w * y * y;
      sxy += w * x * y;
    }
  }
  if (m.total <= 0.0) return m;
  m.cs = sx / m.total;
  m.cas = sy / m.total;
  const double vxx = sxx / m.total - m.cs * m.cs, vyy = syy / m.total - m.cas * m.cas;
  const double vxy = sxy / m.total - m.cs * m.cas;
  m.var_u = 0.5 * (vxx + vyy) + vxy;
  m.var_v = 0.5 * (vxx + vyy) - vxy;
  return m;
}

}  // namespace detail

/// Weighted least-squares fit of A exp(-u^2/2su^2 - v^2/2sv^2) to the corrected
/// counts. The first pass weights by 1/max(n2, 1); later passes use the fitted
/// expectation of n2 in place of the observed count. Errors are scaled by the
/// reduced chi-square.
inline CorrelationFit fit_correlation(const CorrectedHistogram& h, const CorrelationFitOptions& opt = {}) {
  const int n = h.bins.count();
  const double b = h.bins.width;
  if (n < 3) throw ParameterError("histogram too small to fit");

  // Peak bin from a 3x3 box sum.
  int i0 = h.bins.half, j0 = h.bins.half;
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 1; i + 1 < n; ++i) {
    for (int j = 1; j + 1 < n; ++j) {
      const double s = h.n_corr.block(i - 1, j - 1, 3, 3).sum();
      if (s > best) {
        best = s;
        i0 = i;
        j0 = j;
      }
    }
  }
  if (!(best > 0.0)) throw ParameterError("corrected histogram has no positive peak");

  // Second moments over a window that tracks the estimated span.
  int radius = std::max(opt.min_window_bins, 8);
  detail::Moments mom;
  for (int pass = 0; pass < 3; ++pass) {
    mom = detail::window_moments(h, i0, j0, radius);
    const double span = std::sqrt(std::max({mom.var_u, mom.var_v, b * b}));
    radius = std::clamp(static_cast<int>(std::ceil(opt.window_sigmas * span / b)), opt.min_window_bins, n);
  }
  const double su0 = std::sqrt(std::max(mom.var_u, b * b / 4.0));
  const double sv0 = std::sqrt(std::max(mom.var_v, b * b / 4.0));
  const double cs0 = mom.total > 0.0 ? mom.cs : h.bins.center(i0);
  const double cas0 = mom.total > 0.0 ? mom.cas : h.bins.center(j0);
  const double a0 = std::max(best / 9.0, 1.0);

  const int ilo = std::max(0, i0 - radius), ihi = std::min(n - 1, i0 + radius);
  const int jlo = std::max(0, j0 - radius), jhi = std::min(n - 1, j0 + radius);
  const Eigen::Index m = static_cast<Eigen::Index>(ihi - ilo + 1) * (jhi - jlo + 1);
  Eigen::VectorXd xs(m), ys(m), data(m), acc(m), inv_sd(m);
  Eigen::Index k = 0;
  for (int i = ilo; i <= ihi; ++i) {
    for (int j = jlo; j <= jhi; ++j, ++k) {
      xs[k] = h.bins.center(i);
      ys[k] = h.bins.center(j);
      data[k] = h.n_corr(i, j);
      acc[k] = h.n_acc(i, j);
      inv_sd[k] = 1.0 / std::sqrt(std::max(h.n2(i, j), 1.0));
    }
  }

  constexpr double rs2 = std::numbers::sqrt2 / 2.0;
  auto model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
    const double su = std::exp(p[3]), sv = std::exp(p[4]);
    if (!std::isfinite(su) || !std::isfinite(sv) || su <= 0.0 || sv <= 0.0) return false;
    r.resize(m);
    J.resize(m, 5);
    for (Eigen::Index q = 0; q < m; ++q) {
      const double dx = xs[q] - p[1], dy = ys[q] - p[2];
      const double u = rs2 * (dx + dy), v = rs2 * (dx - dy);
      const double au = u / (su * su), av = v / (sv * sv);
      const double e = std::exp(-0.5 * (u * au + v * av));
      const double mv = p[0] * e;
      r[q] = (mv - data[q]) * inv_sd[q];
      J(q, 0) = e * inv_sd[q];
      J(q, 1) = mv * rs2 * (au + av) * inv_sd[q];
      J(q, 2) = mv * rs2 * (au - av) * inv_sd[q];
      J(q, 3) = mv * u * au * inv_sd[q];
      J(q, 4) = mv * v * av * inv_sd[q];
    }
    return true;
  };

  Eigen::VectorXd p0(5);
  p0 << a0, cs0, cas0, std::log(su0), std::log(sv0);
  auto res = levenberg_marquardt(model, p0);
  for (int pass = 0; pass < opt.reweight_passes; ++pass) {
    const double su = std::exp(res.params[3]), sv = std::exp(res.params[4]);
    for (Eigen::Index q = 0; q < m; ++q) {
      const double dx = xs[q] - res.params[1], dy = ys[q] - res.params[2];
      const double u = rs2 * (dx + dy) / su, v = rs2 * (dx - dy) / sv;
      const double expect = res.params[0] * std::exp(-0.5 * (u * u + v * v)) + acc[q];
      inv_sd[q] = 1.0 / std::sqrt(std::max(expect, 1.0));
    }
    res = levenberg_marquardt(model, res.params);
  }

  CorrelationFit f;
  f.amplitude = res.params[0];
  f.center_s = res.params[1];
  f.center_as = res.params[2];
  f.chi2 = res.chi2;
  f.dof = static_cast<int>(m) - 5;
  f.iterations = res.iterations;
  const double scale = f.dof > 0 ? std::max(res.chi2 / f.dof, 1.0) : 1.0;
  f.covariance = res.covariance * scale;

  double su = std::exp(res.params[3]), sv = std::exp(res.params[4]);
  double dsu = su * std::sqrt(f.covariance(3, 3)), dsv = sv * std::sqrt(f.covariance(4, 4));
  if (opt.sheppard) {
    const double bin_var = b * b / 12.0;
    if (su * su <= bin_var || sv * sv <= bin_var) {
      FitDiagnostics d{p0, res.params, res.chi2, res.iterations, "fitted width below the bin resolution"};
      throw FitError("correlation fit is unresolved", d);
    }
    const double su_c = std::sqrt(su * su - bin_var), sv_c = std::sqrt(sv * sv - bin_var);
    dsu *= su / su_c;
    dsv *= sv / sv_c;
    su = su_c;
    sv = sv_c;
  }
  f.sigma_sum = su;
  f.sigma_diff = sv;
  f.sigma_sum_err = dsu;
  f.sigma_diff_err = dsv;
  return f;
}

inline void write_fit(std::ostream& out, const CorrelationFit& f) {
  text::KeyValueWriter w(out);
  w.put("amplitude", text::sig6(f.amplitude));
  w.put("center_s_mrad", text::sig6(f.center_s));
  w.put("center_as_mrad", text::sig6(f.center_as));
  w.put("sigma_sum_mrad", text::sig6(f.sigma_sum));
  w.put("sigma_sum_err", text::sig6(f.sigma_sum_err));
  w.put("sigma_diff_mrad", text::sig6(f.sigma_diff));
  w.put("sigma_diff_err", text::sig6(f.sigma_diff_err));
  w.put("mode_count", text::sig6(mode_count(f)));
  w.put("mode_count_err", text::sig6(mode_count_error(f)));
  w.put("chi2", text::sig6(f.chi2));
  w.put_int("dof", f.dof);
  w.put_int("iterations", f.iterations);
}

}  // namespace holomux
