#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <sstream>

#include "holomux/events_io.hpp"
#include "holomux/memory_sim.hpp"

using namespace holomux;

namespace {

ExperimentConfig quiet_config() {
  ExperimentConfig c;
  c.modes = 66;
  c.zeta = 0.05;
  c.eta_T = 1.0;
  c.QE = 1.0;
  return c;
}

double chi2_upper_p(double stat, int dof) {
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace

TEST(SampleWrite, VacuumAtZeroGain) {
  auto c = quiet_config();
  c.zeta = 0.0;
  const auto grid = build_mode_grid(c);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    for (const auto& m : sample_write(c, grid, rng)) EXPECT_EQ(m.pair_count, 0u);
  }
}

TEST(SampleWrite, RejectsUnphysicalGain) {
  auto c = quiet_config();
  c.zeta = 1.0;
  Rng rng(1);
  EXPECT_THROW(sample_write(c, build_mode_grid(66, 1.0), rng), ParameterError);
}

TEST(SampleWrite, WaveVectorMatchesCenter) {
  auto c = quiet_config();
  Rng rng(2);
  for (const auto& m : sample_write(c, build_mode_grid(c), rng)) {
    const auto k = wavevector_from_angle(m.mode_center, c.lambda_m());
    EXPECT_EQ(m.k.k_x, k.k_x);
    EXPECT_EQ(m.k.k_y, k.k_y);
    EXPECT_EQ(m.stokes_angles.size(), m.pair_count);
  }
}

TEST(SampleWrite, MeanTotalIsModesTimesZeta) {
  ExperimentConfig c;
  c.modes = 100;
  c.zeta = 0.01;
  const auto grid = build_mode_grid(c);
  Rng rng(3);
  const int shots = 200000;
  double s = 0;
  for (int i = 0; i < shots; ++i) {
    for (const auto& m : sample_write(c, grid, rng)) s += m.pair_count;
  }
  // Thermal variance per mode: zeta (1 + zeta).
  const double sd = std::sqrt(100 * 0.01 * 1.01 / shots);
  EXPECT_NEAR(s / shots, 1.0, 3 * sd);
}

TEST(SampleWrite, ThermalLawChiSquared) {
  ExperimentConfig c;
  c.modes = 1;
  c.zeta = 0.18;
  const auto grid = build_mode_grid(c);
  Rng rng(4);
  const int n = 1000000;
  std::vector<double> counts(8, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto k = sample_write(c, grid, rng)[0].pair_count;
    counts[std::min<std::size_t>(k, 7)] += 1;
  }
  double chi2 = 0;
  double tail = 1.0;
  for (int k = 0; k < 7; ++k) {
    const double p = std::pow(0.18, k) / std::pow(1.18, k + 1);
    tail -= p;
    chi2 += std::pow(counts[k] - n * p, 2) / (n * p);
  }
  chi2 += std::pow(counts[7] - n * tail, 2) / (n * tail);
  EXPECT_GT(chi2_upper_p(chi2, 7), 0.001) << chi2;
}

TEST(SampleWrite, ModesAreIndependent) {
  ExperimentConfig c;
  c.modes = 4;
  c.zeta = 0.3;
  c.sigma_env_mrad = 2.0;
  const auto grid = build_mode_grid(c);
  Rng rng(5);
  const int n = 200000;
  double s0 = 0, s1 = 0, s01 = 0;
  for (int i = 0; i < n; ++i) {
    const auto w = sample_write(c, grid, rng);
    s0 += w[0].pair_count;
    s1 += w[1].pair_count;
    s01 += double(w[0].pair_count) * w[1].pair_count;
  }
  const double cov = s01 / n - (s0 / n) * (s1 / n);
  const double var = 0.3 * 1.3;
  EXPECT_NEAR(cov, 0.0, 4 * var / std::sqrt(n));
}

TEST(StorageSurvival, Examples) {
  const auto k10 = wavevector_from_angle({10.0, 0.0}, 795e-9);
  EXPECT_EQ(storage_survival(k10, 1e-4, 0.0), 1.0);
  EXPECT_EQ(storage_survival({0.0, 0.0}, 1e-4, 1.0), 1.0);
  const double kk = 2 * 3.141592653589793 * 0.01 / 795e-9;
  const double exponent = 2 * 1e-4 * 1e-6 * kk * kk;
  EXPECT_NEAR(exponent, 1.249, 1e-3);
  EXPECT_NEAR(storage_survival(k10, 1e-4, 1e-6), std::exp(-exponent), 1e-12);
  EXPECT_NEAR(storage_survival(k10, 1e-4, 1e-6), 0.287, 5e-4);
  EXPECT_THROW(storage_survival(k10, -1e-4, 1e-6), ParameterError);
  EXPECT_THROW(storage_survival(k10, 1e-4, -1e-6), ParameterError);
}

TEST(StorageSurvival, Multiplicative) {
  for (double th : {0.5, 3.0, 11.0}) {
    const auto k = wavevector_from_angle({th, -0.7 * th}, 795e-9);
    for (double t1 : {0.1e-6, 1e-6}) {
      for (double t2 : {0.3e-6, 2e-6}) {
        EXPECT_NEAR(storage_survival(k, 3e-4, t1 + t2), storage_survival(k, 3e-4, t1) * storage_survival(k, 3e-4, t2),
                    1e-14);
      }
    }
  }
}

TEST(ReadEnvelope, Examples) {
  EXPECT_EQ(read_intensity_envelope(0.0, 3.82e6), 1.0);
  EXPECT_NEAR(read_intensity_envelope(500e-9, 3.82e6), std::exp(-1.91), 1e-14);
  EXPECT_NEAR(read_intensity_envelope(500e-9, 3.82e6), 0.148, 5e-4);
  double prev = 1.0;
  for (double t = 1e-8; t < 2e-6; t += 1e-7) {
    const double v = read_intensity_envelope(t, 3.82e6);
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_THROW(read_intensity_envelope(-1e-9, 3.82e6), ParameterError);
}

TEST(SampleRead, NothingAtZeroEfficiency) {
  auto c = quiet_config();
  c.eta_read = 0.0;
  c.zeta = 0.5;
  for (int s = 0; s < 50; ++s) EXPECT_TRUE(run_shot(c, s, 9).antistokes_events.empty());
}

TEST(SampleRead, IdealPhaseMatching) {
  auto c = quiet_config();
  c.eta_read = 1.0;
  c.sigma_corr_mrad = 0.0;
  c.sigma_kernel_mrad = 0.0;
  c.sigma_env_mrad = 2.0;
  c.zeta = 0.2;
  int links = 0;
  for (int s = 0; s < 200; ++s) {
    const auto shot = run_shot(c, s, 11);
    EXPECT_EQ(shot.stokes_events.size(), shot.antistokes_events.size());
    for (const auto& t : shot.truth) {
      EXPECT_EQ(shot.antistokes_events[t.antistokes_index].angle,
                phase_matched_angle(shot.stokes_events[t.stokes_index].angle));
      ++links;
    }
  }
  EXPECT_GT(links, 1000);
}

TEST(SampleRead, TimeBinsFollowEnvelope) {
  auto c = quiet_config();
  c.time_bins = true;
  c.eta_read = 1.0;
  c.zeta = 0.3;
  std::vector<double> per_bin(10, 0.0);
  for (int s = 0; s < 2000; ++s) {
    for (const auto& e : run_shot(c, s, 12).antistokes_events) {
      ASSERT_TRUE(e.time_bin_ns.has_value());
      const int b = static_cast<int>(*e.time_bin_ns / kTimeBinNs);
      ASSERT_GE(b, 0);
      ASSERT_LT(b, 10);
      per_bin[b] += 1;
    }
  }
  // Bin b holds the envelope integral over [100b, 100(b+1)) ns.
  const double g = 3.82e6;
  double total = 0;
  for (double v : per_bin) total += v;
  for (int b = 0; b < 10; ++b) {
    const double p = (std::exp(-g * b * 1e-7) - std::exp(-g * (b + 1) * 1e-7)) / -std::expm1(-g * 1e-6);
    EXPECT_NEAR(per_bin[b], total * p, 5 * std::sqrt(total * p) + 1) << b;
  }
}

TEST(Noise, EmptyWithoutRates) {
  auto c = quiet_config();
  Rng rng(6);
  EXPECT_TRUE(sample_noise(c, Region::Stokes, rng).empty());
  EXPECT_TRUE(sample_dark(c, Region::AntiStokes, rng).empty());
}

TEST(Noise, DarkCountMean) {
  auto c = quiet_config();
  c.dark_rate = 2.0;
  Rng rng(7);
  const int shots = 100000;
  double s = 0;
  for (int i = 0; i < shots; ++i) {
    const auto d = sample_dark(c, Region::Stokes, rng);
    for (const auto& e : d) ASSERT_TRUE(e.angle.within(c.fov_mrad));
    s += static_cast<double>(d.size());
  }
  EXPECT_NEAR(s / shots, 2.0, 3 * std::sqrt(2.0 / shots));
}

TEST(Noise, DarkCountsBypassThinning) {
  auto c = quiet_config();
  c.zeta = 0.0;
  c.dark_rate = 3.0;
  c.eta_T = 0.0;
  double s = 0;
  for (int i = 0; i < 20000; ++i) s += static_cast<double>(run_shot(c, i, 8).stokes_events.size());
  EXPECT_NEAR(s / 20000, 3.0, 3 * std::sqrt(3.0 / 20000));
}

TEST(Detect, Thinning) {
  auto c = quiet_config();
  std::vector<PhotonEvent> events(1000000);
  Rng rng(8);
  EXPECT_EQ(detect(events, c, rng).size(), events.size());
  c.eta_T = 0.5;
  c.QE = 0.2;
  const double kept = static_cast<double>(detect(events, c, rng).size());
  EXPECT_NEAR(kept, 1e5, 3 * std::sqrt(1e6 * 0.1 * 0.9));
  EXPECT_TRUE(detect({}, c, rng).empty());
}

TEST(RunShot, Deterministic) {
  ExperimentConfig c;
  c.noise_rate = 5.0;
  c.dark_rate = 1.0;
  c.time_bins = true;
  c.zeta = 0.3;
  for (int s = 0; s < 20; ++s) EXPECT_EQ(run_shot(c, s, 1234), run_shot(c, s, 1234));
  EXPECT_NE(run_shot(c, 0, 1234), run_shot(c, 0, 1235));
}

TEST(RunShot, EmptyShot) {
  ExperimentConfig c;
  c.zeta = 0.0;
  const auto s = run_shot(c, 3, 1);
  EXPECT_TRUE(s.stokes_events.empty());
  EXPECT_TRUE(s.antistokes_events.empty());
  EXPECT_TRUE(s.truth.empty());
}

TEST(RunShot, HighGainGivesHundredsOfPhotons) {
  ExperimentConfig c;
  c.modes = 66;
  c.zeta = 0.47;
  c.sigma_env_mrad = 5.0;
  c.eta_T = 1.0;
  c.QE = 1.0;
  double s = 0;
  for (int i = 0; i < 200; ++i) s += static_cast<double>(run_shot(c, i, 2).stokes_events.size());
  // Near the linear-regime edge a few dozen photons per shot; a wide envelope holds hundreds.
  EXPECT_NEAR(s / 200, 66 * 0.47, 3.0);
  c.modes = 1000;
  c.sigma_env_mrad = 8.0;
  EXPECT_GT(run_shot(c, 0, 2).stokes_events.size(), 200u);
}

TEST(RunShot, TruthLinksValidAndPhaseMatched) {
  ExperimentConfig c;
  c.modes = 66;
  c.zeta = 0.1;
  c.eta_read = 0.5;
  c.noise_rate = 3.0;
  c.dark_rate = 0.5;
  c.eta_T = 1.0;
  c.QE = 0.5;
  const auto grid = build_mode_grid(c);
  double sx = 0, sy = 0, sxx = 0, syy = 0;
  int n = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto shot = run_shot(c, grid, i, 77);
    for (const auto& t : shot.truth) {
      ASSERT_LT(t.stokes_index, shot.stokes_events.size());
      ASSERT_LT(t.antistokes_index, shot.antistokes_events.size());
      const auto& s = shot.stokes_events[t.stokes_index];
      const auto& a = shot.antistokes_events[t.antistokes_index];
      ASSERT_EQ(s.origin, a.origin);
      ASSERT_GE(s.origin, 0);
      const auto sum = s.angle + a.angle;
      sx += sum.theta_x;
      sy += sum.theta_y;
      sxx += sum.theta_x * sum.theta_x;
      syy += sum.theta_y * sum.theta_y;
      ++n;
    }
  }
  ASSERT_GT(n, 2000);
  // Sum coordinate per axis: Var = sigma_corr^2 + sigma_kernel^2.
  const double k = c.resolved_sigma_kernel_mrad();
  const double var = c.sigma_corr_mrad * c.sigma_corr_mrad + k * k;
  EXPECT_NEAR(sx / n, 0.0, 4 * std::sqrt(var / n));
  EXPECT_NEAR(sy / n, 0.0, 4 * std::sqrt(var / n));
  EXPECT_NEAR(sxx / n / var, 1.0, 4 * std::sqrt(2.0 / n));
  EXPECT_NEAR(syy / n / var, 1.0, 4 * std::sqrt(2.0 / n));
}

TEST(RunShot, EventsWithinFieldOfView) {
  ExperimentConfig c;
  c.fov_mrad = 2.0;
  c.sigma_env_mrad = 2.0;
  c.zeta = 0.3;
  c.noise_rate = 2.0;
  for (int i = 0; i < 500; ++i) {
    const auto shot = run_shot(c, i, 3);
    for (const auto& e : shot.stokes_events) ASSERT_TRUE(e.angle.within(2.0));
    for (const auto& e : shot.antistokes_events) ASSERT_TRUE(e.angle.within(2.0));
  }
}

TEST(EventCsv, RoundTripAndGrouping) {
  ExperimentConfig c;
  c.zeta = 0.2;
  c.noise_rate = 1.0;
  c.time_bins = true;
  std::ostringstream out;
  {
    EventCsvWriter w(out, true);
    for (int i = 0; i < 30; ++i) w.write(run_shot(c, i, 5));
  }
  std::istringstream in(out.str());
  const auto events = read_events_csv(in);
  const auto shots = group_shots(events);
  std::size_t total = 0;
  for (int i = 0; i < 30; ++i) {
    const auto ref = run_shot(c, i, 5);
    total += ref.stokes_events.size() + ref.antistokes_events.size();
  }
  EXPECT_EQ(events.size(), total);
  for (const auto& s : shots) {
    const auto ref = run_shot(c, s.shot_id, 5);
    ASSERT_EQ(s.stokes_events.size(), ref.stokes_events.size());
    for (std::size_t j = 0; j < s.stokes_events.size(); ++j) {
      EXPECT_NEAR(s.stokes_events[j].angle.theta_x, ref.stokes_events[j].angle.theta_x,
                  1e-5 * std::max(1.0, std::abs(ref.stokes_events[j].angle.theta_x)));
      EXPECT_EQ(s.stokes_events[j].time_bin_ns, ref.stokes_events[j].time_bin_ns);
    }
  }
}

TEST(EventCsv, UngroupedStreamIsError) {
  std::istringstream in(
      "shot_id,region,theta_x_mrad,theta_y_mrad\n"
      "0,S,1,1\n1,AS,-1,-1\n0,AS,2,2\n");
  const auto events = read_events_csv(in);
  EXPECT_THROW(group_shots(events), FormatError);
}

TEST(EventCsv, MalformedRows) {
  std::istringstream bad_region("shot_id,region,theta_x_mrad,theta_y_mrad\n0,X,1,1\n");
  EXPECT_THROW(read_events_csv(bad_region), FormatError);
  std::istringstream bad_header("shot,region,x,y\n");
  EXPECT_THROW(read_events_csv(bad_header), FormatError);
  std::istringstream short_row("shot_id,region,theta_x_mrad,theta_y_mrad\n0,S,1\n");
  EXPECT_THROW(read_events_csv(short_row), FormatError);
}

TEST(TruthCsv, RoundTrip) {
  ExperimentConfig c;
  c.zeta = 0.3;
  c.eta_read = 0.6;
  c.eta_T = 1;
  c.QE = 1;
  std::ostringstream out;
  std::vector<TruthRow> expected;
  {
    TruthCsvWriter w(out);
    for (int i = 0; i < 10; ++i) {
      const auto shot = run_shot(c, i, 6);
      w.write(shot);
      for (const auto& t : shot.truth) expected.push_back({shot.shot_id, t});
    }
  }
  std::istringstream in(out.str());
  const auto rows = read_truth_csv(in);
  ASSERT_EQ(rows.size(), expected.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].shot_id, expected[i].shot_id);
    EXPECT_EQ(rows[i].link, expected[i].link);
  }
}
