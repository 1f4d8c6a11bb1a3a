#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "holomux/diffusion.hpp"

using namespace holomux;

namespace {

constexpr double kLambda = 795e-9;

/// Widths from the closed form with multiplicative Gaussian noise.
WidthSeries noisy_series(const ModeWidths& w, double D, double t_max_us, double step_us, double noise,
                         std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  WidthSeries s;
  for (int i = 0; i * step_us <= t_max_us + 1e-9; ++i) {
    const double t = i * step_us;
    const auto [a, b] = predict_widths(w, D, t * 1e-6, kLambda);
    s.entries.push_back({t, a * (1.0 + noise * z(gen)), noise * a, b * (1.0 + noise * z(gen)), noise * b});
  }
  return s;
}

ExperimentConfig paper_like() {
  ExperimentConfig c;
  c.modes = 58;
  c.sigma_kernel_mrad = 0.11;
  return c;
}

}  // namespace

TEST(VarianceEvolution, HandEvaluation) {
  const double inv = 1.0 / (1.6e-3 * 1.6e-3) + 8.0 * std::numbers::pi * std::numbers::pi * 1e-4 * 2e-6 / (795e-9 * 795e-9);
  EXPECT_NEAR(variance_evolution(1.6, 1e-4, 2e-6, kLambda), 1e3 / std::sqrt(inv), 1e-12);
  EXPECT_NEAR(variance_evolution(1.6, 1e-4, 2e-6, kLambda), 1.551160803084494, 1e-12);
  EXPECT_DOUBLE_EQ(variance_evolution(1.6, 1e-4, 0.0, kLambda), 1.6);
  EXPECT_DOUBLE_EQ(variance_evolution(1.6, 0.0, 5e-6, kLambda), 1.6);
}

TEST(VarianceEvolution, MonotoneAndVanishing) {
  double prev = 2.0, last = 0.0;
  for (double t = 1e-7; t < 1.0; t *= 3.0) {
    const double s = variance_evolution(2.0, 1e-4, t, kLambda);
    EXPECT_LT(s, prev);
    prev = s;
    last = t;
  }
  // Long times approach [8 pi^2 D t / lambda^2]^(-1/2), which itself vanishes.
  EXPECT_NEAR(prev, 1e3 / std::sqrt(diffusion_rate_scale(kLambda) * 1e-4 * last), 0.01 * prev);
}

TEST(VarianceEvolution, Semigroup) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> s0(0.1, 5.0), d(0.0, 1e-2), t(0.0, 2e-5);
  for (int i = 0; i < 1000; ++i) {
    const double a = s0(gen), D = d(gen), t1 = t(gen), t2 = t(gen);
    const double two_step = variance_evolution(variance_evolution(a, D, t1, kLambda), D, t2, kLambda);
    EXPECT_NEAR(two_step, variance_evolution(a, D, t1 + t2, kLambda), 1e-12 * a);
  }
}

TEST(VarianceEvolution, Errors) {
  EXPECT_THROW(variance_evolution(0.0, 1e-4, 1e-6, kLambda), ParameterError);
  EXPECT_THROW(variance_evolution(1.0, -1e-4, 1e-6, kLambda), ParameterError);
  EXPECT_THROW(variance_evolution(1.0, 1e-4, -1e-6, kLambda), ParameterError);
}

TEST(CoincidenceDecay, SharesSurvivalFormula) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> th(-20.0, 20.0), d(0.0, 1e-3), t(0.0, 1e-5);
  for (int i = 0; i < 200; ++i) {
    const Angle2D a{th(gen), th(gen)};
    const double D = d(gen), tau = t(gen);
    EXPECT_EQ(coincidence_decay(7.0, a, D, tau, kLambda),
              7.0 * storage_survival(wavevector_from_angle(a, kLambda), D, tau));
  }
  EXPECT_EQ(coincidence_decay(3.0, {0.0, 0.0}, 1e-3, 1e-5, kLambda), 3.0);
}

TEST(CoincidenceDecay, HalvingTime) {
  const double k = 2.0 * std::numbers::pi * 10e-3 / 795e-9;
  const double t_half = std::log(2.0) / (2.0 * 1e-4 * k * k);
  EXPECT_NEAR(t_half, 0.56e-6, 0.01e-6);
  EXPECT_NEAR(coincidence_decay(1.0, {10.0, 0.0}, 1e-4, t_half, kLambda), 0.5, 1e-12);
}

TEST(ConvolvedWidth, Examples) {
  EXPECT_DOUBLE_EQ(convolved_width(0.7, 0.0), 0.7);
  EXPECT_DOUBLE_EQ(convolved_width(0.4, 0.4), std::sqrt(2.0) * 0.4);
  // Kernel-dominated sum width barely moves while the atomic part halves.
  const double k = 0.3;
  EXPECT_LT(convolved_width(0.1, k) / convolved_width(0.05, k) - 1.0, 0.10);
  EXPECT_THROW(convolved_width(-1.0, 0.1), ParameterError);
}

TEST(PredictModeCount, PaperLikeSchedule) {
  auto c = paper_like();
  EXPECT_NEAR(predict_mode_count(c, 0.0), 58.0, 1.0);
  c.D_m2_per_s = diffusion_for_mode_count(c, 2e-6, 12.0);
  EXPECT_GT(c.D_m2_per_s, 0.0);
  EXPECT_NEAR(predict_mode_count(c, 2e-6), 12.0, 1e-9);
  EXPECT_NEAR(predict_mode_count(c, 1.0), 2.0, 1e-3);
  double prev = predict_mode_count(c, 0.0);
  for (double t = 0.0; t <= 20e-6; t += 0.25e-6) {
    const double m = predict_mode_count(c, t);
    EXPECT_LE(m, prev + 1e-12);
    EXPECT_GE(m, 2.0);
    prev = m;
  }
  // The floor is approached as 1/t: about 3 modes remain at 20 us.
  EXPECT_LT(predict_mode_count(c, 20e-6), 3.5);
}

TEST(PredictModeCount, ZeroDiffusionIsConstant) {
  const auto c = paper_like();
  EXPECT_DOUBLE_EQ(predict_mode_count(c, 0.0), predict_mode_count(c, 1e-3));
}

TEST(PredictModeCount, MatchesMonteCarloWidths) {
  // Truth-linked pairs from the simulator against the closed-form widths.
  auto c = paper_like();
  c.zeta = 0.05;
  c.eta_T = 1.0;
  c.QE = 1.0;
  c.eta_read = 1.0;
  const double tau = 2e-6;
  c.D_m2_per_s = diffusion_for_mode_count(c, tau, 12.0);
  c.tau_us = tau * 1e6;
  const auto grid = build_mode_grid(c);
  double su = 0.0, sv = 0.0, n = 0.0;
  for (int s = 0; s < 40000; ++s) {
    const auto shot = run_shot(c, grid, s, 77);
    for (const auto& t : shot.truth) {
      const double x = shot.stokes_events[t.stokes_index].angle.theta_x;
      const double y = shot.antistokes_events[t.antistokes_index].angle.theta_x;
      su += 0.5 * (x + y) * (x + y);
      sv += 0.5 * (x - y) * (x - y);
      n += 1.0;
    }
  }
  ASSERT_GT(n, 5000.0);
  const auto [ps, pd] = predict_widths(initial_widths(c), c.D_m2_per_s, tau, c.lambda_m());
  EXPECT_NEAR(std::sqrt(su / n), ps, 0.02 * ps);
  EXPECT_NEAR(std::sqrt(sv / n), pd, 0.04 * pd);
}

TEST(FitD, RecoversInjectedD) {
  // 3% width noise on a 0-50 us schedule; the estimator scatters by about 2%.
  const ModeWidths w{0.0, 1.6, 0.3};
  const double D = 1.2e-4;
  int within = 0;
  double bias = 0.0;
  const int replicas = 40;
  for (int seed = 0; seed < replicas; ++seed) {
    const auto r = fit_D(noisy_series(w, D, 50.0, 0.5, 0.03, seed), kLambda, 0.3);
    within += std::abs(r.D / D - 1.0) <= 0.05;
    bias += (r.D / D - 1.0) / replicas;
    EXPECT_FALSE(r.clamped);
    EXPECT_NEAR(r.sigma0_diff, 1.6, 0.05 * 1.6);
  }
  EXPECT_GE(within, 38);
  EXPECT_NEAR(bias, 0.0, 0.01);
}

TEST(FitD, NoiseFreeIsExact) {
  const ModeWidths w{0.25, 1.4, 0.11};
  auto s = noisy_series(w, 3e-4, 20.0, 1.0, 0.0, 0);
  for (auto& e : s.entries) e.sigma_sum_err = e.sigma_diff_err = 0.01;
  const auto r = fit_D(s, kLambda, 0.11);
  EXPECT_NEAR(r.D, 3e-4, 1e-9);
  EXPECT_NEAR(r.sigma0_sum, 0.25, 1e-6);
  EXPECT_NEAR(r.sigma0_diff, 1.4, 1e-6);
}

TEST(FitD, ZeroDiffusionIsConsistentWithZero) {
  const ModeWidths w{0.0, 1.6, 0.3};
  int consistent = 0;
  for (int seed = 0; seed < 20; ++seed) {
    const auto r = fit_D(noisy_series(w, 0.0, 50.0, 1.0, 0.03, seed + 100), kLambda, 0.3);
    EXPECT_GE(r.D, 0.0);
    EXPECT_GT(r.D_err, 0.0);
    consistent += r.D <= 3.0 * r.D_err;
    if (r.clamped) {
      EXPECT_EQ(r.D, 0.0);
    }
  }
  EXPECT_GE(consistent, 19);
}

TEST(FitD, Preconditions) {
  WidthSeries s;
  s.entries = {{0.0, 0.3, 0.01, 1.6, 0.05}, {1.0, 0.3, 0.01, 1.5, 0.05}};
  EXPECT_THROW(fit_D(s, kLambda, 0.1), ParameterError);
  s.entries.push_back({1.0, 0.3, 0.01, 1.4, 0.05});
  EXPECT_THROW(fit_D(s, kLambda, 0.1), ParameterError);
}

TEST(WidthsCsv, RoundTripAndErrors) {
  const auto s = noisy_series({0.0, 1.6, 0.3}, 1e-3, 5.0, 0.5, 0.03, 1);
  std::stringstream ss;
  write_widths_csv(ss, s);
  const auto back = read_widths_csv(ss);
  ASSERT_EQ(back.entries.size(), s.entries.size());
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    EXPECT_NEAR(back.entries[i].sigma_diff, s.entries[i].sigma_diff, 1e-5 * s.entries[i].sigma_diff);
  }
  std::stringstream bad("tau_us,sigma_sum_mrad,sigma_sum_err,sigma_diff_mrad,sigma_diff_err\n1,0.3,0.01,1.6,0.05\n0,0.3,0.01,1.6,0.05\n");
  EXPECT_THROW(read_widths_csv(bad), FormatError);
  std::stringstream header("tau,sigma\n");
  EXPECT_THROW(read_widths_csv(header), FormatError);
}
