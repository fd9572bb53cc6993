#include <gtest/gtest.h>

#include <cmath>

#include "photoion/protocols.hpp"
#include "photoion/rng.hpp"
#include "photoion/spectroscopy.hpp"

using namespace photoion;

TEST(PulseResponse, ForwardOracleValue) {
  // high-precision reference, frozen
  EXPECT_NEAR(eq1_forward(294.0, 929.0, 4e-6), 0.001173128188875141, 1e-15);
  EXPECT_NEAR(eq1_forward(10.0, 500.0, 4e-6), 3.995922772985633e-05, 1e-18);
}

TEST(PulseResponse, ForwardLimits) {
  EXPECT_EQ(eq1_forward(294.0, 929.0, 0.0), 0.0);
  EXPECT_NEAR(eq1_forward(294.0, 929.0, 1.0), 294.0 / 1223.0, 1e-15);
  EXPECT_NEAR(eq1_forward(100.0, 0.0, 1e-3), -std::expm1(-0.1), 1e-15);
  EXPECT_THROW(eq1_forward(-1.0, 929.0, 4e-6), DomainError);
  EXPECT_THROW(eq1_forward(1.0, 929.0, -4e-6), DomainError);
  EXPECT_THROW(eq1_forward(0.0, 0.0, 4e-6), DomainError);
}

TEST(PulseResponse, MonotoneInIonisationRate) {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double nr = std::pow(10.0, 1 + 4 * rng.uniform());
    const double tp = std::pow(10.0, -7 + 4 * rng.uniform());
    const double a = std::pow(10.0, 6 * rng.uniform());
    const double b = a * (1.0 + 1e-3 + rng.uniform());
    ASSERT_LT(eq1_forward(a, nr, tp), eq1_forward(b, nr, tp));
    ASSERT_GT(eq1_derivative(a, nr, tp), 0.0);
  }
}

TEST(PulseResponse, DerivativeMatchesFiniteDifference) {
  for (double nu : {1.0, 300.0, 1e5}) {
    const double h = 1e-6 * nu;
    const double fd = (eq1_forward(nu + h, 929.0, 4e-6) - eq1_forward(nu - h, 929.0, 4e-6)) / (2 * h);
    EXPECT_NEAR(eq1_derivative(nu, 929.0, 4e-6), fd, 1e-6 * fd);
  }
}

TEST(PulseResponse, InverseOfOracle) {
  const auto inv = eq1_invert(0.001173128188875141, 929.0, 4e-6);
  EXPECT_FALSE(inv.zero_count);
  EXPECT_NEAR(inv.nu_i, 294.0, 294.0 * 1e-6);
}

TEST(PulseResponse, RoundTripOverSixDecades) {
  for (double tp : {1e-6, 4e-6, 1e-4}) {
    for (double nr : {199.0, 929.0, 2e4}) {
      for (double nu = 1.0; nu <= 1e6; nu *= 1.7) {
        const double R = eq1_forward(nu, nr, tp);
        if (R >= 1.0 - 1e-9) continue;
        const double back = eq1_invert(R, nr, tp).nu_i;
        ASSERT_NEAR(back, nu, 1e-9 * nu) << nu << " " << nr << " " << tp;
      }
    }
  }
}

TEST(PulseResponse, SmallProbabilityApproximation) {
  // R << nu_r t_p << 1: nu_i ~ (R / t_p) (1 + nu_r t_p / 2)
  const double tp = 4e-6, nr = 929.0;
  for (double R : {1e-7, 1e-6, 1e-5}) {
    const double nu = eq1_invert(R, nr, tp).nu_i;
    const double approx = R / tp * (1.0 + 0.5 * nr * tp);
    const double x = (nr + nu) * tp;
    EXPECT_NEAR(nu / approx, 1.0, x * x);
  }
}

TEST(PulseResponse, InverseDomain) {
  const auto zero = eq1_invert(0.0, 929.0, 4e-6);
  EXPECT_TRUE(zero.zero_count);
  EXPECT_EQ(zero.nu_i, 0.0);
  EXPECT_THROW(eq1_invert(-0.1, 929.0, 4e-6), DomainError);
  EXPECT_THROW(eq1_invert(1.0, 929.0, 4e-6), DomainError);
  EXPECT_THROW(eq1_invert(1.5, 929.0, 4e-6), DomainError);
  EXPECT_THROW(eq1_invert(0.1, 929.0, 0.0), DomainError);
  // above the saturation ceiling nu_i / (nu_i + nu_r) -> 1 is still invertible
  EXPECT_GT(eq1_invert(0.9, 929.0, 1.0).nu_i, 0.0);
}

TEST(EffectivePower, WorkedExampleAndLinearity) {
  EXPECT_NEAR(effective_power(41.0, 0.496, 85e6, 32e6), 7.6559, 1e-4);
  EXPECT_DOUBLE_EQ(effective_power(5.0, 1.0, 32e6, 32e6), 5.0);
  EXPECT_DOUBLE_EQ(effective_power(2.0 * 41.0, 0.496, 85e6, 32e6), 2.0 * effective_power(41.0, 0.496, 85e6, 32e6));
  EXPECT_DOUBLE_EQ(effective_power(41.0, 0.25, 85e6, 32e6), 0.5 * effective_power(41.0, 0.5, 85e6, 32e6));
  EXPECT_THROW(effective_power(1.0, 0.5, 30e6, 32e6), DomainError);
  EXPECT_THROW(effective_power(1.0, 0.5, 30e6, 0.0), DomainError);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<SpectrumPoint> sample_line(double c, double w, double a, double o, std::size_t n, double span,
                                       double rel_err) {
  std::vector<SpectrumPoint> pts;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = c - span + 2.0 * span * static_cast<double>(k) / static_cast<double>(n - 1);
    const double v = lorentzian(d, c, w, a, o);
    pts.push_back({d, v, rel_err * v});
  }
  return pts;
}

void expect_rel(double got, double want, double tol, const char* what) {
  EXPECT_NEAR(got, want, tol * std::max(std::abs(want), 1.0)) << what;
}

}  // namespace

TEST(FitLorentzian, ExactRecoveryOfNoiselessLines) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const double w = std::pow(10.0, 6.0 + 2.5 * rng.uniform());
    const double c = (rng.uniform() - 0.5) * w;
    const double a = std::pow(10.0, 1.0 + 4.0 * rng.uniform());
    const double o = a * 0.2 * rng.uniform();
    const bool weighted = trial % 2 == 0;
    const auto pts = sample_line(c, w, a, o, 25, 2.5 * w, weighted ? 0.05 : 0.0);
    const auto f = fit_lorentzian(pts);
    EXPECT_EQ(f.weighted, weighted);
    EXPECT_NEAR(f.center, c, 1e-8 * w);
    expect_rel(f.fwhm, w, 1e-8, "fwhm");
    expect_rel(f.amplitude, a, 1e-8, "amplitude");
    EXPECT_NEAR(f.offset, o, 1e-8 * a);
    EXPECT_EQ(f.dof, 21u);
  }
}

TEST(FitLorentzian, TranslationAndScaleEquivariance) {
  Rng rng(6);
  auto pts = sample_line(3e6, 40e6, 900.0, 30.0, 25, 100e6, 0.0);
  for (auto& p : pts) {
    p.nu_i *= 1.0 + 0.08 * rng.normal();
    p.std_error = 0.08 * p.nu_i;
  }
  const auto base = fit_lorentzian(pts);

  auto shifted = pts;
  for (auto& p : shifted) p.detuning += 250e6;
  const auto fs = fit_lorentzian(shifted);
  EXPECT_NEAR(fs.center, base.center + 250e6, 1e-9 * base.fwhm);
  EXPECT_NEAR(fs.fwhm, base.fwhm, 1e-9 * base.fwhm);
  EXPECT_NEAR(fs.amplitude, base.amplitude, 1e-9 * base.amplitude);
  EXPECT_NEAR(fs.fwhm_error, base.fwhm_error, 1e-6 * base.fwhm_error);

  auto scaled = pts;
  for (auto& p : scaled) {
    p.nu_i *= 7.5;
    p.std_error *= 7.5;
  }
  const auto fk = fit_lorentzian(scaled);
  EXPECT_NEAR(fk.center, base.center, 1e-9 * base.fwhm);
  EXPECT_NEAR(fk.fwhm, base.fwhm, 1e-9 * base.fwhm);
  EXPECT_NEAR(fk.amplitude, 7.5 * base.amplitude, 1e-9 * 7.5 * base.amplitude);
  EXPECT_NEAR(fk.offset, 7.5 * base.offset, 1e-9 * 7.5 * base.amplitude);
  EXPECT_NEAR(fk.chi2, base.chi2, 1e-9 * base.chi2);
}

TEST(FitLorentzian, CenterWithinTenthWidthUnderTenPercentNoise) {
  Rng rng(10);
  const double w = 32e6;
  int good = 0;
  const int trials = 400;
  for (int t = 0; t < trials; ++t) {
    auto pts = sample_line(0.0, w, 500.0, 0.0, 25, 2.5 * w, 0.0);
    for (auto& p : pts) {
      p.nu_i *= 1.0 + 0.1 * rng.normal();
      p.std_error = 0.1 * std::abs(p.nu_i);
    }
    try {
      const auto f = fit_lorentzian(pts);
      if (std::abs(f.center) <= w / 10.0) ++good;
    } catch (const LorentzianFitFailure&) {
    }
  }
  EXPECT_GE(good, static_cast<int>(0.95 * trials));
}

TEST(FitLorentzian, StatedErrorsAreCalibrated) {
  Rng rng(11);
  const double w = 32e6;
  int covered = 0;
  const int trials = 400;
  for (int t = 0; t < trials; ++t) {
    auto pts = sample_line(0.0, w, 500.0, 20.0, 25, 2.5 * w, 0.0);
    for (auto& p : pts) {
      p.std_error = 0.05 * 520.0;
      p.nu_i += p.std_error * rng.normal();
    }
    const auto f = fit_lorentzian(pts);
    if (std::abs(f.fwhm - w) <= f.fwhm_error) ++covered;
  }
  // one-sigma coverage near 68%
  EXPECT_NEAR(covered / static_cast<double>(trials), 0.683, 0.07);
}

TEST(FitLorentzian, FailuresAreReported) {
  std::vector<SpectrumPoint> few{{0, 1, 0.1}, {1, 2, 0.1}, {2, 1, 0.1}, {3, 1, 0.1}};
  EXPECT_THROW(fit_lorentzian(few), InsufficientData);
  std::vector<SpectrumPoint> ramp;
  for (int k = 0; k < 25; ++k) ramp.push_back({k * 1e6, 100.0 + k, 1.0});
  try {
    fit_lorentzian(ramp);
    FAIL() << "monotone data should not fit a peak";
  } catch (const LorentzianFitFailure& e) {
    EXPECT_FALSE(std::string(e.what()).empty());
  }
  std::vector<SpectrumPoint> flat;
  for (int k = 0; k < 25; ++k) flat.push_back({(k - 12) * 1e6, 100.0, 1.0});
  EXPECT_THROW(fit_lorentzian(flat), LorentzianFitFailure);
}

// ---------------------------------------------------------------------------

TEST(Broadening, ReducesToLorentzianAndConservesArea) {
  for (double d : {0.0, 10e6, 50e6}) EXPECT_DOUBLE_EQ(broadened_lineshape(d, 32e6, 0.0), lorentzian(d, 0, 32e6, 1, 0));
  const double sigma = 20e6;
  double a0 = 0, a1 = 0;
  const double h = 0.5e6;
  for (double d = -3e9; d <= 3e9; d += h) {
    a0 += lorentzian(d, 0, 32e6, 1, 0) * h;
    a1 += broadened_lineshape(d, 32e6, sigma) * h;
  }
  EXPECT_NEAR(a1 / a0, 1.0, 1e-3);
  EXPECT_NEAR(voigt_fwhm_estimate(32e6, 0.0), 32e6, 1e-4 * 32e6);
}

TEST(Broadening, DefaultDiffusionCoefficientReproducesAnchor) {
  const double s = calibrate_sigma_per_power(32e6, 41.0, 85e6, 2.5, 25);
  EXPECT_NEAR(s, kDefaultSigmaPerPower, 1e-6 * kDefaultSigmaPerPower);
  EXPECT_NEAR(lorentz_fit_width_of_broadened(32e6, s * 41.0, 2.5, 25), 85e6, 1e3);
  // low powers stay near the homogeneous width
  const double w58 = lorentz_fit_width_of_broadened(32e6, s * 5.8, 2.5, 25);
  EXPECT_GT(w58, 32e6);
  EXPECT_LT(w58, 36e6);
}

TEST(Broadening, CountingWeightsNarrowTheFittedVoigt) {
  // wing points carry small absolute errors and pull the Lorentzian in
  for (double sigma : {5e6, 20e6, 40e6}) {
    const double u = lorentz_fit_width_of_broadened(32e6, sigma, 2.5, 25, FitWeighting::Unweighted);
    const double c = lorentz_fit_width_of_broadened(32e6, sigma, 2.5, 25, FitWeighting::Counting);
    EXPECT_LT(c, u) << sigma;
    EXPECT_GT(c, 32e6) << sigma;
  }
  EXPECT_NEAR(lorentz_fit_width_of_broadened(32e6, 0.0, 2.5, 25, FitWeighting::Unweighted), 32e6, 1.0);
  EXPECT_NEAR(lorentz_fit_width_of_broadened(32e6, 0.0, 2.5, 25, FitWeighting::Counting), 32e6, 1.0);
}

TEST(Calibration, ExcitationCoefficientInverses) {
  RateParams r;
  const double g = calibrate_excitation_coefficient(r, 0.496, 1030.0);
  EXPECT_NEAR(g * 0.496 * r.ionising_fraction(), 1030.0, 1e-9);
  const double ge = excitation_for_ionisation_rate(r, 294.0);
  EXPECT_NEAR(ge * r.gamma_i / (ge + r.total_decay()), 294.0, 1e-9);
  EXPECT_THROW(excitation_for_ionisation_rate(r, r.gamma_i), DomainError);
}

TEST(Fits, LinearAndProportionalWorkedExamples) {
  const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  const auto lf = linear_fit(x, y);
  EXPECT_NEAR(lf.slope, 2.0, 1e-12);
  EXPECT_NEAR(lf.intercept, 1.0, 1e-12);
  EXPECT_NEAR(lf.r_squared, 1.0, 1e-12);
  const std::vector<double> x2{1, 2, 4}, y2{2, 4, 8};
  const auto pf = proportional_fit(x2, y2);
  EXPECT_DOUBLE_EQ(pf.slope, 2.0);
  EXPECT_DOUBLE_EQ(pf.r_squared, 1.0);
  EXPECT_THROW(linear_fit(std::vector<double>{1}, std::vector<double>{1}), InsufficientData);
}
