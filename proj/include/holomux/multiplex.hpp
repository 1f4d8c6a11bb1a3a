#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "holomux/core.hpp"
#include "holomux/text.hpp"

namespace holomux {

/// Multiplexed heralded source: M modes, each excited with probability zeta.
struct SourceSpec {
  double zeta = 0.01;
  int modes = 100;
  double eta_H = 1.0;
  int n_targets = 8;

  void validate() const {
    detail::require(zeta >= 0.0 && zeta < 1.0, "zeta must lie in [0, 1)");
    detail::require(modes >= 1, "mode count must be at least 1");
    detail::require(eta_H >= 0.0 && eta_H <= 1.0, "eta_H must lie in [0, 1]");
    detail::require(n_targets >= 1 && n_targets <= modes, "target photon number must lie in [1, M]");
  }
};

/// Modes above which probabilities are evaluated in log space.
constexpr int kDirectEvaluationLimit = 50;

namespace detail {

inline void check_zeta_modes(double zeta, int modes) {
  require(zeta >= 0.0 && zeta < 1.0, "zeta must lie in [0, 1)");
  require(modes >= 1, "mode count must be at least 1");
}

/// log C(M, N) as a sum of min(N, M-N) logarithms.
inline double log_choose(int m, int n) {
  const int k = std::min(n, m - n);
  double s = 0.0;
  for (int i = 1; i <= k; ++i) s += std::log(static_cast<double>(m - k + i) / i);
  return s;
}

/// C(M, N) exactly for M <= kDirectEvaluationLimit.
inline double choose_direct(int m, int n) {
  const int k = std::min(n, m - n);
  std::uint64_t c = 1;
  for (int i = 1; i <= k; ++i) c = c * static_cast<std::uint64_t>(m - k + i) / static_cast<std::uint64_t>(i);
  return static_cast<double>(c);
}

/// N log x with 0 log 0 = 0.
inline double n_log(int n, double x) { return n == 0 ? 0.0 : n * std::log(x); }

}  // namespace detail

/// 1 - (1 - zeta)^M without cancellation for small zeta M.
inline double p_at_least_one(double zeta, int modes) {
  detail::check_zeta_modes(zeta, modes);
  return -std::expm1(modes * std::log1p(-zeta));
}

/// Binomial probability of exactly N excited modes out of M.
inline double p_exactly_N(double zeta, int modes, int n) {
  detail::check_zeta_modes(zeta, modes);
  detail::require(n >= 0 && n <= modes, "photon number must lie in [0, M]");
  if (zeta == 0.0) return n == 0 ? 1.0 : 0.0;
  if (modes <= kDirectEvaluationLimit) {
    return detail::choose_direct(modes, n) * std::pow(zeta, n) * std::exp((modes - n) * std::log1p(-zeta));
  }
  return std::exp(detail::log_choose(modes, n) + n * std::log(zeta) + (modes - n) * std::log1p(-zeta));
}

/// eta_H^N times the probability of exactly N excited modes.
inline double p_retrieve_N(double zeta, int modes, int n, double eta_H) {
  detail::require(eta_H >= 0.0 && eta_H <= 1.0, "eta_H must lie in [0, 1]");
  const double p = p_exactly_N(zeta, modes, n);
  if (n == 0 || eta_H == 1.0) return p;
  if (eta_H == 0.0 || p == 0.0) return 0.0;
  return std::exp(std::log(p) + n * std::log(eta_H));
}

inline double p_retrieve_N(const SourceSpec& s) {
  s.validate();
  return p_retrieve_N(s.zeta, s.modes, s.n_targets, s.eta_H);
}

struct EnhancementRow {
  int n = 0;
  double p_multiplexed = 0.0;
  double p_independent = 0.0;  ///< zeta^N from N separate sources
  double ratio = 0.0;
};

/// ratio = C(M, N) eta_H^N (1 - zeta)^(M - N), evaluated in log space.
inline std::vector<EnhancementRow> enhancement_report(const SourceSpec& s) {
  s.validate();
  std::vector<EnhancementRow> rows;
  for (int n = 1; n <= s.n_targets; ++n) {
    EnhancementRow r;
    r.n = n;
    r.p_multiplexed = p_retrieve_N(s.zeta, s.modes, n, s.eta_H);
    r.p_independent = std::pow(s.zeta, n);
    const double log_eta = s.eta_H == 0.0 ? -std::numeric_limits<double>::infinity() : detail::n_log(n, s.eta_H);
    r.ratio = std::exp(detail::log_choose(s.modes, n) + log_eta + (s.modes - n) * std::log1p(-s.zeta));
    rows.push_back(r);
  }
  return rows;
}

/// Per-mode and whole-memory views of the same source.
struct RateSummary {
  double per_mode_zeta = 0.0;
  double mean_excitations = 0.0;  ///< M zeta
  double p_at_least_one = 0.0;
  double p_target = 0.0;          ///< p_retrieve_N at n_targets
};

inline RateSummary rate_summary(const SourceSpec& s) {
  s.validate();
  return {s.zeta, s.modes * s.zeta, p_at_least_one(s.zeta, s.modes), p_retrieve_N(s)};
}

inline void write_enhancement_csv(std::ostream& out, const std::vector<EnhancementRow>& rows) {
  out << "N,p_multiplexed,p_independent,ratio\n";
  for (const auto& r : rows) {
    out << r.n << ',' << text::sig6(r.p_multiplexed) << ',' << text::sig6(r.p_independent) << ','
        << text::sig6(r.ratio) << '\n';
  }
}

inline void write_rate_summary(std::ostream& out, const SourceSpec& s) {
  const auto r = rate_summary(s);
  text::KeyValueWriter w(out);
  w.put("zeta_per_mode", r.per_mode_zeta);
  w.put_int("modes", s.modes);
  w.put("mean_excitations_whole_memory", r.mean_excitations);
  w.put("p_at_least_one", r.p_at_least_one);
  w.put_int("n_targets", s.n_targets);
  w.put("eta_H", s.eta_H);
  w.put("p_retrieve_n", r.p_target);
}

struct RouteAssignment {
  Angle2D trigger;  ///< Stokes direction
  Angle2D output;   ///< phase-matched anti-Stokes direction
  int port = 0;
};

struct RoutingPlan {
  std::vector<RouteAssignment> assignments;
  std::vector<Angle2D> unassigned_triggers;
};

/// Ranks triggers; the first `ports` indices receive ports 0, 1, ...
using RoutingPolicy = std::function<std::vector<std::size_t>(const std::vector<Angle2D>&)>;

/// Ascending |theta|, ties broken by (theta_x, theta_y), then input order.
inline std::vector<std::size_t> nearest_axis_first(const std::vector<Angle2D>& triggers) {
  std::vector<std::size_t> order(triggers.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& p = triggers[a];
    const auto& q = triggers[b];
    const double np = p.norm(), nq = q.norm();
    if (np != nq) return np < nq;
    if (p.theta_x != q.theta_x) return p.theta_x < q.theta_x;
    return p.theta_y < q.theta_y;
  });
  return order;
}

inline RoutingPlan route(const std::vector<Angle2D>& triggers, int ports,
                         const RoutingPolicy& policy = nearest_axis_first) {
  detail::require(ports >= 1, "route needs at least one port");
  const auto order = policy(triggers);
  detail::require(order.size() == triggers.size(), "routing policy must rank every trigger");
  std::vector<bool> seen(triggers.size(), false);
  RoutingPlan plan;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const std::size_t i = order[rank];
    detail::require(i < triggers.size() && !seen[i], "routing policy must return a permutation");
    seen[i] = true;
    if (rank < static_cast<std::size_t>(ports)) {
      plan.assignments.push_back({triggers[i], phase_matched_angle(triggers[i]), static_cast<int>(rank)});
    } else {
      plan.unassigned_triggers.push_back(triggers[i]);
    }
  }
  return plan;
}

inline std::vector<Angle2D> read_triggers_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "theta_x_mrad,theta_y_mrad") {
    throw FormatError("triggers CSV: expected header theta_x_mrad,theta_y_mrad");
  }
  std::vector<Angle2D> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = text::trim(line);
    if (row.empty()) continue;
    const auto f = text::split(row, ',');
    if (f.size() != 2) throw FormatError("triggers CSV line " + std::to_string(line_no) + ": expected 2 fields");
    try {
      out.push_back({text::parse_double(f[0]), text::parse_double(f[1])});
    } catch (const FormatError& e) {
      throw FormatError("triggers CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

/// Assigned rows first in port order, then unassigned rows with port -1.
inline void write_routing_csv(std::ostream& out, const RoutingPlan& plan) {
  out << "port,trigger_x_mrad,trigger_y_mrad,output_x_mrad,output_y_mrad\n";
  for (const auto& a : plan.assignments) {
    out << a.port << ',' << text::sig6(a.trigger.theta_x) << ',' << text::sig6(a.trigger.theta_y) << ','
        << text::sig6(a.output.theta_x) << ',' << text::sig6(a.output.theta_y) << '\n';
  }
  for (const auto& t : plan.unassigned_triggers) {
    out << "-1," << text::sig6(t.theta_x) << ',' << text::sig6(t.theta_y) << ",,\n";
  }
}

}  // namespace holomux
