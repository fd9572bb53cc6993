#include <gtest/gtest.h>

#include <cmath>

#include "photoion/emg.hpp"
#include "photoion/rng.hpp"

using namespace photoion;

namespace {

std::vector<double> emg_sample(double mu, double sigma, double tau, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = mu + sigma * rng.normal() + (tau > 0 ? rng.exponential(1.0 / tau) : 0.0);
  return v;
}

}  // namespace

TEST(Emg, DensityIntegratesToOne) {
  for (double tau : {0.05, 1.0, 20.0}) {
    double acc = 0;
    const double h = 1e-3;
    for (double x = -20; x < 200; x += h) acc += std::exp(emg_log_pdf(x, 0.0, 1.0, tau)) * h;
    EXPECT_NEAR(acc, 1.0, 1e-4) << tau;
  }
}

TEST(Emg, DensityStableInTails) {
  EXPECT_TRUE(std::isfinite(emg_log_pdf(-40.0, 0.0, 1.0, 0.01)));
  EXPECT_TRUE(std::isfinite(emg_log_pdf(500.0, 0.0, 1.0, 0.01)));
  EXPECT_NEAR(erfcx(30.0), 0.018795888861416751, 1e-12);
  EXPECT_NEAR(erfcx(2.0), 0.25539567631050574, 1e-14);
}

TEST(Emg, RecoversExponentialComponent) {
  const auto d = emg_sample(10e-6, 2e-6, 0.72e-6, 10000, 720);
  const auto f = fit_emg(d);
  EXPECT_NEAR(f.tau, 0.72e-6, 0.10e-6);
  EXPECT_NEAR(f.mu, 10e-6, 0.3e-6);
  EXPECT_NEAR(f.sigma, 2e-6, 0.1e-6);
  EXPECT_TRUE(f.prefers_emg());
  EXPECT_GT(f.tau_error, 0.0);
}

TEST(Emg, TranslationEquivariance) {
  const auto d = emg_sample(10e-6, 2e-6, 0.72e-6, 2000, 3);
  auto shifted = d;
  for (auto& x : shifted) x += 1e-3;
  const auto a = fit_emg(d), b = fit_emg(shifted);
  EXPECT_NEAR(b.mu - 1e-3, a.mu, 1e-4 * a.sigma);
  EXPECT_NEAR(b.sigma, a.sigma, 1e-4 * a.sigma);
  EXPECT_NEAR(b.tau, a.tau, 1e-4 * a.sigma);
  EXPECT_NEAR(b.log_likelihood, a.log_likelihood, 1e-3);
}

TEST(Emg, PureGaussianCollapsesTail) {
  const double sigma = 5e-6;
  const std::size_t n = 10000;
  const auto d = emg_sample(50e-6, sigma, 0.0, n, 55);
  const auto f = fit_emg(d);
  const double bound = sigma * std::cbrt(1.5 * std::sqrt(6.0 / n));
  EXPECT_LE(f.tau, bound);
  EXPECT_FALSE(f.prefers_emg());
}

TEST(Emg, RoundTripsRandomParametersWithinStatedErrors) {
  Rng draw(99);
  int outside = 0;
  const int trials = 24;
  for (int t = 0; t < trials; ++t) {
    const double sigma = 1e-6 * (0.5 + 4.0 * draw.uniform());
    const double tau = sigma * (0.3 + 2.5 * draw.uniform());
    const double mu = 1e-5 * (1.0 + 10.0 * draw.uniform());
    const auto f = fit_emg(emg_sample(mu, sigma, tau, 5000, draw.next_u64()));
    ASSERT_TRUE(std::isfinite(f.tau_error));
    if (std::abs(f.mu - mu) > 3 * f.mu_error) ++outside;
    if (std::abs(f.sigma - sigma) > 3 * f.sigma_error) ++outside;
    if (std::abs(f.tau - tau) > 3 * f.tau_error) ++outside;
  }
  // 72 comparisons at 3 sigma: expect ~0.2 outliers
  EXPECT_LE(outside, 2);
}

TEST(Emg, NeedsFiftySamples) {
  const auto d = emg_sample(1.0, 0.1, 0.1, 49, 1);
  EXPECT_THROW(fit_emg(d), InsufficientData);
}
