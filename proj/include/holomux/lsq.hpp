#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace holomux {

/// State of a least-squares solve, attached to FitError on failure.
struct FitDiagnostics {
  Eigen::VectorXd initial;
  Eigen::VectorXd last;
  double chi2 = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  std::string reason;

  std::string report() const {
    std::string s = reason + " after " + std::to_string(iterations) + " iterations; initial guess [";
    for (Eigen::Index i = 0; i < initial.size(); ++i) s += (i ? ", " : "") + std::to_string(initial[i]);
    s += "], last [";
    for (Eigen::Index i = 0; i < last.size(); ++i) s += (i ? ", " : "") + std::to_string(last[i]);
    return s + "], chi2 " + std::to_string(chi2);
  }
};

class FitError : public std::runtime_error {
public:
  FitError(const std::string& what, FitDiagnostics d) : std::runtime_error(what + ": " + d.report()), diag(std::move(d)) {}
  FitDiagnostics diag;
};

struct LsqOptions {
  int max_iterations = 200;
  double rel_tolerance = 1e-10;
  double initial_lambda = 1e-3;
};

struct LsqResult {
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;  ///< (J^T J)^+ at the optimum, unscaled
  Eigen::VectorXd residuals;
  double chi2 = 0.0;
  int iterations = 0;
};

/// Levenberg-Marquardt on weighted residuals. `f(p, r, J)` fills r (m) and J (m x n)
/// and returns false when p is outside the model domain.
template <class F>
LsqResult levenberg_marquardt(F&& f, const Eigen::VectorXd& p0, const LsqOptions& opt = {}) {
  const Eigen::Index n = p0.size();
  Eigen::VectorXd p = p0, r, r_try;
  Eigen::MatrixXd J, J_try;
  FitDiagnostics diag{p0, p0, std::numeric_limits<double>::quiet_NaN(), 0, ""};
  if (!f(p, r, J) || !r.allFinite() || !J.allFinite()) {
    diag.reason = "model undefined at the initial guess";
    throw FitError("least squares did not start", diag);
  }
  if (r.size() < n) {
    diag.reason = "fewer residuals than parameters";
    throw FitError("least squares is underdetermined", diag);
  }
  double chi2 = r.squaredNorm();
  double lambda = opt.initial_lambda;
  int it = 0;
  bool converged = false;
  for (; it < opt.max_iterations && !converged; ++it) {
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
      const Eigen::VectorXd step = A.ldlt().solve(-g);
      const Eigen::VectorXd trial = p + step;
      if (step.allFinite() && f(trial, r_try, J_try) && r_try.allFinite() && J_try.allFinite()) {
        const double chi2_try = r_try.squaredNorm();
        if (chi2_try <= chi2) {
          const double drop = chi2 - chi2_try;
          const bool small_step = step.norm() <= opt.rel_tolerance * (p.norm() + opt.rel_tolerance);
          p = trial;
          r.swap(r_try);
          J.swap(J_try);
          converged = drop <= opt.rel_tolerance * std::max(chi2, 1e-300) || small_step;
          chi2 = chi2_try;
          lambda = std::max(lambda / 10.0, 1e-12);
          accepted = true;
          continue;
        }
      }
      lambda *= 10.0;
      if (lambda > 1e16) {
        // No descent direction left: the current point is a stationary point.
        converged = true;
        break;
      }
    }
  }
  if (!converged) {
    diag.last = p;
    diag.chi2 = chi2;
    diag.iterations = it;
    diag.reason = "no convergence";
    throw FitError("least squares did not converge", diag);
  }
  LsqResult out;
  out.covariance = (J.transpose() * J).completeOrthogonalDecomposition().pseudoInverse();
  out.params = p;
  out.residuals = r;
  out.chi2 = chi2;
  out.iterations = it;
  return out;
}

}  // namespace holomux
