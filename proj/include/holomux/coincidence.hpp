#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "holomux/core.hpp"
#include "holomux/memory_sim.hpp"
#include "holomux/text.hpp"

namespace holomux {

/// Histogrammed axis; the other axis carries the stripe condition.
enum class Axis : std::uint8_t { X, Y };

inline Axis parse_axis(std::string_view s) {
  if (s == "x") return Axis::X;
  if (s == "y") return Axis::Y;
  throw ParameterError("axis must be x or y, got '" + std::string(s) + "'");
}

/// Uniform bins of width `width` centered on integer multiples of it.
struct Binning {
  double width = 0.15;
  int half = 0;  ///< bins run over k = -half..half

  static Binning covering(double fov_mrad, double width) {
    detail::require(width > 0.0 && fov_mrad > 0.0, "binning needs positive width and field of view");
    return {width, static_cast<int>(std::ceil(fov_mrad / width - 0.5))};
  }

  int count() const { return 2 * half + 1; }
  double lo() const { return -(half + 0.5) * width; }
  double edge(int i) const { return lo() + i * width; }
  double center(int i) const { return (i - half) * width; }
  /// Bin index or -1 when outside.
  int index(double v) const {
    const double f = std::floor((v - lo()) / width);
    return f >= 0.0 && f < count() ? static_cast<int>(f) : -1;
  }
  bool operator==(const Binning&) const = default;
};

/// Counts over (primary S, primary AS) for stripe-matched same-shot pairs,
/// plus the full 2D marginal of each region.
struct CoincidenceHistogram {
  Binning bins;
  double delta_theta = 0.3;
  Axis axis = Axis::X;
  std::uint64_t n_frames = 0;
  std::vector<std::uint64_t> n2;           ///< [s * count + as]
  std::vector<std::uint64_t> marginal_s;   ///< [primary * count + stripe]
  std::vector<std::uint64_t> marginal_as;  ///< [primary * count + stripe]
  std::uint64_t outside = 0;               ///< events beyond the binning

  CoincidenceHistogram() = default;
  CoincidenceHistogram(const Binning& b, double dtheta, Axis ax) : bins(b), delta_theta(dtheta), axis(ax) {
    detail::require(dtheta > 0.0, "stripe half-width must be positive");
    const auto n = static_cast<std::size_t>(b.count());
    n2.assign(n * n, 0);
    marginal_s.assign(n * n, 0);
    marginal_as.assign(n * n, 0);
  }

  std::size_t size() const { return static_cast<std::size_t>(bins.count()); }
  std::uint64_t n2_at(int s, int as) const { return n2[static_cast<std::size_t>(s) * size() + as]; }

  bool compatible(const CoincidenceHistogram& o) const {
    return bins == o.bins && delta_theta == o.delta_theta && axis == o.axis;
  }

  CoincidenceHistogram& merge(const CoincidenceHistogram& o) {
    if (!compatible(o)) throw ParameterError("cannot merge histograms with different binning");
    for (std::size_t i = 0; i < n2.size(); ++i) n2[i] += o.n2[i];
    for (std::size_t i = 0; i < marginal_s.size(); ++i) marginal_s[i] += o.marginal_s[i];
    for (std::size_t i = 0; i < marginal_as.size(); ++i) marginal_as[i] += o.marginal_as[i];
    n_frames += o.n_frames;
    outside += o.outside;
    return *this;
  }

  bool operator==(const CoincidenceHistogram&) const = default;
};

inline CoincidenceHistogram merge(CoincidenceHistogram a, const CoincidenceHistogram& b) { return a.merge(b); }

namespace detail {
inline double primary(const Angle2D& a, Axis ax) { return ax == Axis::X ? a.theta_x : a.theta_y; }
inline double stripe(const Angle2D& a, Axis ax) { return ax == Axis::X ? a.theta_y : a.theta_x; }
}  // namespace detail

/// Adds one shot. Every stripe-passing cross-region pair counts; same-region pairs never do.
inline void accumulate_shot(CoincidenceHistogram& h, const std::vector<PhotonEvent>& stokes,
                            const std::vector<PhotonEvent>& anti) {
  const auto n = h.size();
  const Axis ax = h.axis;
  struct Binned {
    double stripe;
    int primary_bin;
  };
  auto bin_region = [&](const std::vector<PhotonEvent>& events, std::vector<std::uint64_t>& marginal) {
    std::vector<Binned> out;
    out.reserve(events.size());
    for (const auto& e : events) {
      const int p = h.bins.index(detail::primary(e.angle, ax));
      const int s = h.bins.index(detail::stripe(e.angle, ax));
      if (p < 0 || s < 0) {
        ++h.outside;
        continue;
      }
      ++marginal[static_cast<std::size_t>(p) * n + s];
      out.push_back({detail::stripe(e.angle, ax), p});
    }
    return out;
  };
  const auto s_ev = bin_region(stokes, h.marginal_s);
  auto as_ev = bin_region(anti, h.marginal_as);
  std::sort(as_ev.begin(), as_ev.end(), [](const Binned& a, const Binned& b) { return a.stripe < b.stripe; });
  // |y_s + y_as| < dtheta  <=>  y_as in (-y_s - dtheta, -y_s + dtheta)
  for (const auto& s : s_ev) {
    const double lo = -s.stripe - h.delta_theta;
    auto it = std::upper_bound(as_ev.begin(), as_ev.end(), lo, [](double v, const Binned& b) { return v < b.stripe; });
    for (; it != as_ev.end() && it->stripe < -s.stripe + h.delta_theta; ++it) {
      if (std::abs(s.stripe + it->stripe) < h.delta_theta) {
        ++h.n2[static_cast<std::size_t>(s.primary_bin) * n + it->primary_bin];
      }
    }
  }
}

/// Histogram over a sequence of shots; n_frames counts every shot, including empty ones.
class CoincidenceAccumulator {
public:
  CoincidenceAccumulator(const Binning& b, double dtheta, Axis ax) : hist_(b, dtheta, ax) {}

  void add(const ShotRecord& shot) {
    if (!seen_.insert(shot.shot_id).second) {
      throw FormatError("shot " + std::to_string(shot.shot_id) + " appears twice; streams must be grouped by shot");
    }
    accumulate_shot(hist_, shot.stokes_events, shot.antistokes_events);
    ++hist_.n_frames;
  }

  const CoincidenceHistogram& histogram() const { return hist_; }
  CoincidenceHistogram take() { return std::move(hist_); }

private:
  CoincidenceHistogram hist_;
  std::set<std::int64_t> seen_;
};

inline CoincidenceHistogram accumulate(const std::vector<ShotRecord>& shots, const Binning& b, double dtheta,
                                       Axis ax = Axis::X) {
  CoincidenceAccumulator acc(b, dtheta, ax);
  for (const auto& s : shots) acc.add(s);
  return acc.take();
}

/// P(|m b + T| < dtheta) with T the difference of two uniform in-bin offsets
/// (triangular on [-b, b]): the fraction of a bin pair whose stripe-coordinate
/// sum is centered at m b that passes the stripe condition.
inline double stripe_weight(int m, double bin, double dtheta) {
  auto cdf = [bin](double t) {
    if (t <= -bin) return 0.0;
    if (t >= bin) return 1.0;
    if (t <= 0.0) return (t + bin) * (t + bin) / (2.0 * bin * bin);
    return 1.0 - (bin - t) * (bin - t) / (2.0 * bin * bin);
  };
  const double c = m * bin;
  return cdf(dtheta - c) - cdf(-dtheta - c);
}

/// Accidental estimate from the marginals on the histogram grid:
/// n_acc(i, j) = (1/N) sum_{k,l} w(k + l) marginal_s(i, k) marginal_as(j, l).
inline Eigen::MatrixXd accidental_histogram(const CoincidenceHistogram& h) {
  if (h.n_frames == 0) throw ParameterError("accidental estimate needs at least one frame");
  const int n = static_cast<int>(h.size());
  const int half = h.bins.half;
  Eigen::MatrixXd ms(n, n), mas(n, n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      ms(i, k) = static_cast<double>(h.marginal_s[static_cast<std::size_t>(i) * n + k]);
      mas(i, k) = static_cast<double>(h.marginal_as[static_cast<std::size_t>(i) * n + k]);
    }
  }
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  const int reach = static_cast<int>(std::ceil(h.delta_theta / h.bins.width)) + 1;
  Eigen::MatrixXd shifted(n, n);
  for (int m = -reach; m <= reach; ++m) {
    const double w = stripe_weight(m, h.bins.width, h.delta_theta);
    if (w <= 0.0) continue;
    // Stripe bins k (S) and l (AS) with centers summing to m b: l = 2 half + m - k.
    shifted.setZero();
    for (int k = 0; k < n; ++k) {
      const int l = 2 * half + m - k;
      if (l >= 0 && l < n) shifted.col(k) = mas.col(l);
    }
    acc.noalias() += w * (ms * shifted.transpose());
  }
  return acc / static_cast<double>(h.n_frames);
}

/// n2, n_acc and n2 - n_acc on one grid; negative corrected bins are kept.
struct CorrectedHistogram {
  Binning bins;
  Eigen::MatrixXd n2;
  Eigen::MatrixXd n_acc;
  Eigen::MatrixXd n_corr;
};

inline CorrectedHistogram subtract(const CoincidenceHistogram& h, const Eigen::MatrixXd& n_acc) {
  const auto n = static_cast<Eigen::Index>(h.size());
  if (n_acc.rows() != n || n_acc.cols() != n) throw ParameterError("accidental histogram binning mismatch");
  CorrectedHistogram out;
  out.bins = h.bins;
  out.n2.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out.n2(i, j) = static_cast<double>(h.n2_at(int(i), int(j)));
  }
  out.n_acc = n_acc;
  out.n_corr = out.n2 - n_acc;
  return out;
}

inline CorrectedHistogram subtract(const CoincidenceHistogram& h) { return subtract(h, accidental_histogram(h)); }

struct WindowSums {
  double n2 = 0.0;
  double n_acc = 0.0;
};

/// Sums over bins whose centers lie in the square |theta_S|, |theta_AS| <= window / 2.
inline WindowSums central_window(const CorrectedHistogram& c, double window_mrad) {
  detail::require(window_mrad > 0.0, "central window must be positive");
  const double lim = 0.5 * window_mrad + 1e-9 * c.bins.width;
  WindowSums w;
  for (int i = 0; i < c.bins.count(); ++i) {
    if (std::abs(c.bins.center(i)) > lim) continue;
    for (int j = 0; j < c.bins.count(); ++j) {
      if (std::abs(c.bins.center(j)) > lim) continue;
      w.n2 += c.n2(i, j);
      w.n_acc += c.n_acc(i, j);
    }
  }
  return w;
}

inline double accidental_fraction(const CorrectedHistogram& c, double window_mrad) {
  const auto w = central_window(c, window_mrad);
  if (w.n2 <= 0.0) throw ParameterError("no coincidences in the central window");
  return w.n_acc / w.n2;
}

/// Share of genuine coincidences among registered pairs in the central window.
inline double coincidence_ratio(const CorrectedHistogram& c, double window_mrad) {
  const auto w = central_window(c, window_mrad);
  if (w.n2 <= 0.0) throw ParameterError("no coincidences in the central window");
  return (w.n2 - w.n_acc) / w.n2;
}

inline void write_histogram_csv(std::ostream& out, const CorrectedHistogram& c) {
  out << "s_bin_lo,s_bin_hi,as_bin_lo,as_bin_hi,n2,n_acc,n_corr\n";
  for (int i = 0; i < c.bins.count(); ++i) {
    for (int j = 0; j < c.bins.count(); ++j) {
      if (c.n2(i, j) == 0.0 && c.n_acc(i, j) == 0.0) continue;
      out << text::sig6(c.bins.edge(i)) << ',' << text::sig6(c.bins.edge(i + 1)) << ',' << text::sig6(c.bins.edge(j))
          << ',' << text::sig6(c.bins.edge(j + 1)) << ',' << text::sig6(c.n2(i, j)) << ','
          << text::sig6(c.n_acc(i, j)) << ',' << text::sig6(c.n_corr(i, j)) << '\n';
    }
  }
}

/// Reads a histogram CSV back onto a grid; bins absent from the file are zero.
inline CorrectedHistogram read_histogram_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "s_bin_lo,s_bin_hi,as_bin_lo,as_bin_hi,n2,n_acc,n_corr") {
    throw FormatError("histogram CSV: unexpected header");
  }
  struct Row {
    double s_center, as_center, n2, n_acc, n_corr;
  };
  std::vector<Row> rows;
  double width = 0.0;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = text::trim(line);
    if (row.empty()) continue;
    const auto f = text::split(row, ',');
    if (f.size() != 7) throw FormatError("histogram CSV line " + std::to_string(line_no) + ": expected 7 fields");
    double v[7];
    for (int k = 0; k < 7; ++k) v[k] = text::parse_double(f[k]);
    const double w = v[1] - v[0];
    if (!(w > 0.0) || std::abs((v[3] - v[2]) - w) > 1e-4 * w) {
      throw FormatError("histogram CSV line " + std::to_string(line_no) + ": inconsistent bin edges");
    }
    if (width == 0.0) width = w;
    if (std::abs(w - width) > 1e-4 * width) throw FormatError("histogram CSV: mixed bin widths");
    rows.push_back({0.5 * (v[0] + v[1]), 0.5 * (v[2] + v[3]), v[4], v[5], v[6]});
  }
  if (rows.empty()) throw FormatError("histogram CSV: no bins");
  int half = 0;
  for (const auto& r : rows) {
    half = std::max({half, static_cast<int>(std::lround(std::abs(r.s_center) / width)),
                     static_cast<int>(std::lround(std::abs(r.as_center) / width))});
  }
  CorrectedHistogram c;
  c.bins = {width, half};
  const int n = c.bins.count();
  c.n2 = Eigen::MatrixXd::Zero(n, n);
  c.n_acc = Eigen::MatrixXd::Zero(n, n);
  c.n_corr = Eigen::MatrixXd::Zero(n, n);
  for (const auto& r : rows) {
    const int i = static_cast<int>(std::lround(r.s_center / width)) + half;
    const int j = static_cast<int>(std::lround(r.as_center / width)) + half;
    c.n2(i, j) = r.n2;
    c.n_acc(i, j) = r.n_acc;
    c.n_corr(i, j) = r.n_corr;
  }
  return c;
}

}  // namespace holomux
