#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "holomux/config.hpp"
#include "holomux/frame.hpp"
#include "holomux/memory_sim.hpp"
#include "holomux/random.hpp"

namespace holomux {

struct NoiseEstimate {
  double median = 0.0;
  double sigma = 0.0;  ///< 1.4826 * MAD
};

/// Median and MAD of 16-bit pixels. Each integer value v is treated as mass
/// spread uniformly over [v - 0.5, v + 0.5), which makes both statistics
/// continuous in the data and exactly shift-equivariant.
inline NoiseEstimate estimate_noise(const std::vector<std::uint16_t>& pixels) {
  detail::require(!pixels.empty(), "estimate_noise: empty frame");
  std::vector<std::uint32_t> hist(65536, 0);
  for (auto v : pixels) ++hist[v];
  std::vector<double> below(65537, 0.0);
  for (std::size_t v = 0; v < 65536; ++v) below[v + 1] = below[v] + hist[v];
  const double half = 0.5 * static_cast<double>(pixels.size());

  auto cdf = [&](double x) {
    if (x <= -0.5) return 0.0;
    if (x >= 65535.5) return below[65536];
    const auto v = static_cast<std::size_t>(std::floor(x + 0.5));
    return below[v] + hist[v] * (x - (static_cast<double>(v) - 0.5));
  };

  const auto it = std::upper_bound(below.begin() + 1, below.end(), half);
  const auto v = static_cast<std::size_t>(it - below.begin() - 1);
  const double median =
      hist[v] > 0 ? static_cast<double>(v) - 0.5 + (half - below[v]) / hist[v] : static_cast<double>(v) - 0.5;

  double lo = 0.0, hi = 65536.0;
  for (int i = 0; i < 64 && hi - lo > 1e-9; ++i) {
    const double mid = 0.5 * (lo + hi);
    (cdf(median + mid) - cdf(median - mid) >= half ? hi : lo) = mid;
  }
  return {median, 1.4826 * hi};
}

struct Run {
  int y = 0;
  int x0 = 0;  ///< first column
  int x1 = 0;  ///< last column, inclusive
  int label = 0;
};

/// Connected-component labeling of horizontal runs with 8-connectivity.
/// Labels are 1..n in raster order of each component's first pixel.
/// `row_begin[y]` indexes the first run of row y; `row_begin[height]` is the run count.
inline int label_runs(std::vector<Run>& runs, const std::vector<std::size_t>& row_begin) {
  std::vector<int> parent(runs.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  const std::size_t rows = row_begin.size() - 1;
  for (std::size_t y = 1; y < rows; ++y) {
    std::size_t p = row_begin[y - 1];
    const std::size_t p_end = row_begin[y];
    for (std::size_t r = row_begin[y]; r < row_begin[y + 1]; ++r) {
      while (p < p_end && runs[p].x1 < runs[r].x0 - 1) ++p;
      for (std::size_t q = p; q < p_end && runs[q].x0 <= runs[r].x1 + 1; ++q) {
        unite(static_cast<int>(q), static_cast<int>(r));
      }
    }
  }
  int next = 0;
  std::vector<int> id(runs.size(), 0);
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const int root = find(static_cast<int>(r));
    if (id[root] == 0) id[root] = ++next;
    runs[r].label = id[root];
  }
  return next;
}

/// Runs of `above(x, y)` pixels, row by row.
template <class Above>
std::vector<Run> find_runs(int width, int height, Above&& above, std::vector<std::size_t>& row_begin) {
  std::vector<Run> runs;
  row_begin.assign(static_cast<std::size_t>(height) + 1, 0);
  for (int y = 0; y < height; ++y) {
    row_begin[y] = runs.size();
    int x = 0;
    while (x < width) {
      if (!above(x, y)) {
        ++x;
        continue;
      }
      const int start = x;
      while (x < width && above(x, y)) ++x;
      runs.push_back({y, start, x - 1, 0});
    }
  }
  row_begin[height] = runs.size();
  return runs;
}

/// Dense label image for a binary mask (0 = background).
inline std::vector<int> label_components(const std::vector<std::uint8_t>& mask, int width, int height, int* count = nullptr) {
  detail::require(mask.size() == static_cast<std::size_t>(width) * height, "mask size mismatch");
  std::vector<std::size_t> row_begin;
  auto runs = find_runs(width, height, [&](int x, int y) { return mask[static_cast<std::size_t>(y) * width + x] != 0; },
                        row_begin);
  const int n = label_runs(runs, row_begin);
  std::vector<int> labels(mask.size(), 0);
  for (const auto& r : runs) {
    for (int x = r.x0; x <= r.x1; ++x) labels[static_cast<std::size_t>(r.y) * width + x] = r.label;
  }
  if (count) *count = n;
  return labels;
}

/// A component rejected for exceeding the area limit.
struct FlaggedBlob {
  int area = 0;
  PixelPos centroid;
  Region region = Region::Stokes;
};

struct ExtractionResult {
  std::vector<PhotonEvent> events;  ///< Stokes first, then anti-Stokes, each in raster order
  std::vector<FlaggedBlob> flagged;
  NoiseEstimate noise;
  double threshold = 0.0;
};

struct ExtractOptions {
  double threshold_sigma = 5.0;
  int max_area_px = 100;
};

/// Threshold at median + k * sigma, 8-connected labeling, and centroids weighted
/// by the excess over the median, mapped to angles through the frame calibration.
inline ExtractionResult extract_events(const Frame& f, const ExtractOptions& opt, std::int64_t shot_id = 0) {
  detail::require(opt.threshold_sigma > 0.0, "threshold_sigma must be positive");
  detail::require(opt.max_area_px >= 1, "max_area_px must be positive");
  ExtractionResult out;
  out.noise = estimate_noise(f.pixels);
  out.threshold = out.noise.median + opt.threshold_sigma * out.noise.sigma;
  // Integer pixels: v > threshold  <=>  v >= cut.
  const double cut_real = std::floor(out.threshold) + 1.0;
  const auto cut = static_cast<std::uint32_t>(std::clamp(cut_real, 0.0, 65536.0));

  std::vector<std::size_t> row_begin;
  const std::uint16_t* px = f.pixels.data();
  const int w = f.width;
  auto runs = find_runs(
      f.width, f.height, [&](int x, int y) { return px[static_cast<std::size_t>(y) * w + x] >= cut; }, row_begin);
  const int n = label_runs(runs, row_begin);

  struct Acc {
    double sw = 0, sx = 0, sy = 0;
    int area = 0;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(n) + 1);
  const double base = out.noise.median;
  for (const auto& r : runs) {
    auto& a = acc[r.label];
    const std::uint16_t* row = px + static_cast<std::size_t>(r.y) * w;
    for (int x = r.x0; x <= r.x1; ++x) {
      const double weight = row[x] - base;
      a.sw += weight;
      a.sx += weight * x;
      a.sy += weight * r.y;
    }
    a.area += r.x1 - r.x0 + 1;
  }

  std::vector<PhotonEvent> anti;
  for (int label = 1; label <= n; ++label) {
    const auto& a = acc[label];
    const PixelPos c{a.sx / a.sw, a.sy / a.sw};
    const Region region = f.region_of(c.x);
    if (a.area > opt.max_area_px) {
      out.flagged.push_back({a.area, c, region});
      continue;
    }
    PhotonEvent e;
    e.region = region;
    e.shot_id = shot_id;
    e.angle = f.calibration.map(region).to_angle(c);
    (region == Region::Stokes ? out.events : anti).push_back(e);
  }
  out.events.insert(out.events.end(), anti.begin(), anti.end());
  return out;
}

inline ExtractionResult extract_events(const Frame& f, const ExperimentConfig& c, std::int64_t shot_id = 0) {
  return extract_events(f, ExtractOptions{c.threshold_sigma, c.max_area_px}, shot_id);
}

struct FidelityReport {
  std::size_t frames = 0;
  std::size_t truth = 0;
  std::size_t extracted = 0;
  std::size_t matched = 0;
  std::size_t flagged = 0;
  double recall = 0.0;
  double precision = 0.0;
  double rmse_px = 0.0;
  double rmse_mrad = 0.0;
  double mean_dx_px = 0.0;
  double mean_dy_px = 0.0;
};

namespace detail {

struct MatchStats {
  std::size_t matched = 0;
  double sum_d2_px = 0, sum_d2_mrad = 0, sum_dx = 0, sum_dy = 0;
};

/// Greedy nearest-neighbour matching in pixel space within `radius`, closest pairs first.
inline void match_events(const Frame& f, const std::vector<PhotonEvent>& truth, const std::vector<PhotonEvent>& found,
                         double radius, MatchStats& st) {
  struct Cand {
    double d2;
    std::size_t t, e;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto tp = f.calibration.map(truth[i].region).to_pixel(truth[i].angle);
    for (std::size_t j = 0; j < found.size(); ++j) {
      if (found[j].region != truth[i].region) continue;
      const auto ep = f.calibration.map(found[j].region).to_pixel(found[j].angle);
      const double d2 = (tp.x - ep.x) * (tp.x - ep.x) + (tp.y - ep.y) * (tp.y - ep.y);
      if (d2 <= radius * radius) cands.push_back({d2, i, j});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return a.d2 != b.d2 ? a.d2 < b.d2 : (a.t != b.t ? a.t < b.t : a.e < b.e);
  });
  std::vector<bool> used_t(truth.size()), used_e(found.size());
  for (const auto& c : cands) {
    if (used_t[c.t] || used_e[c.e]) continue;
    used_t[c.t] = used_e[c.e] = true;
    const auto tp = f.calibration.map(truth[c.t].region).to_pixel(truth[c.t].angle);
    const auto ep = f.calibration.map(found[c.e].region).to_pixel(found[c.e].angle);
    const auto da = found[c.e].angle - truth[c.t].angle;
    ++st.matched;
    st.sum_d2_px += c.d2;
    st.sum_d2_mrad += da.theta_x * da.theta_x + da.theta_y * da.theta_y;
    st.sum_dx += ep.x - tp.x;
    st.sum_dy += ep.y - tp.y;
  }
}

}  // namespace detail

/// Renders each shot, extracts it again and scores the result against the rendered events.
inline FidelityReport roundtrip_fidelity(const std::vector<ShotRecord>& shots, const ExperimentConfig& c,
                                         std::uint64_t seed) {
  const Frame layout = blank_frame(c);
  const FrameRenderer renderer(SpotModel::from(c));
  FidelityReport rep;
  detail::MatchStats st;
  for (const auto& shot : shots) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(shot.shot_id), stream::render));
    const Frame f = renderer.render(shot, layout, rng);
    const auto res = extract_events(f, c, shot.shot_id);
    std::vector<PhotonEvent> truth = shot.stokes_events;
    truth.insert(truth.end(), shot.antistokes_events.begin(), shot.antistokes_events.end());
    detail::match_events(f, truth, res.events, 3.0 * c.spot_sigma_px, st);
    ++rep.frames;
    rep.truth += truth.size();
    rep.extracted += res.events.size();
    rep.flagged += res.flagged.size();
  }
  rep.matched = st.matched;
  rep.recall = rep.truth ? static_cast<double>(st.matched) / rep.truth : 0.0;
  rep.precision = rep.extracted ? static_cast<double>(st.matched) / rep.extracted : 1.0;
  if (st.matched) {
    const double m = static_cast<double>(st.matched);
    rep.rmse_px = std::sqrt(st.sum_d2_px / m);
    rep.rmse_mrad = std::sqrt(st.sum_d2_mrad / m);
    rep.mean_dx_px = st.sum_dx / m;
    rep.mean_dy_px = st.sum_dy / m;
  }
  return rep;
}

/// Random frames of 1..max_events well-separated spots, or exactly max_events when `exact`.
inline std::vector<ShotRecord> isolated_spot_shots(const ExperimentConfig& c, std::size_t n_frames,
                                                   std::uint64_t seed, int max_events = 20, bool exact = false) {
  detail::require(max_events >= 1, "max_events must be positive");
  const Frame layout = blank_frame(c);
  const double min_sep = 8.0 * c.spot_sigma_px;
  const double margin = 4.0 * c.spot_sigma_px * c.mrad_per_px;
  const double half_x = 0.5 * layout.region_split * c.mrad_per_px - margin;
  const double half_y = 0.5 * layout.height * c.mrad_per_px - margin;
  detail::require(half_x > 0.0 && half_y > 0.0, "frame too small for isolated spots");
  std::vector<ShotRecord> shots;
  shots.reserve(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    Rng rng(derive_seed(seed, i, stream::harness));
    ShotRecord s;
    s.shot_id = static_cast<std::int64_t>(i);
    const int n = exact ? max_events : 1 + static_cast<int>(rng.uniform() * max_events);
    std::vector<PixelPos> placed;
    for (int k = 0, attempts = 0; k < n && attempts < 10000; ++attempts) {
      PhotonEvent e;
      e.shot_id = s.shot_id;
      e.region = rng.bernoulli(0.5) ? Region::Stokes : Region::AntiStokes;
      e.angle = {rng.uniform(-half_x, half_x), rng.uniform(-half_y, half_y)};
      const auto p = layout.calibration.map(e.region).to_pixel(e.angle);
      const bool clear = std::all_of(placed.begin(), placed.end(), [&](const PixelPos& q) {
        return (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y) >= min_sep * min_sep;
      });
      if (!clear) continue;
      placed.push_back(p);
      (e.region == Region::Stokes ? s.stokes_events : s.antistokes_events).push_back(e);
      ++k;
    }
    shots.push_back(std::move(s));
  }
  return shots;
}

inline FidelityReport roundtrip_fidelity(const ExperimentConfig& c, std::size_t n_frames, std::uint64_t seed,
                                         int max_events = 20) {
  return roundtrip_fidelity(isolated_spot_shots(c, n_frames, seed, max_events), c, seed);
}

}  // namespace holomux
