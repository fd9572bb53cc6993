#ifndef PHOTOION_EMG_HPP
#define PHOTOION_EMG_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "photoion/errors.hpp"
#include "photoion/optimize.hpp"

namespace photoion {

/// Scaled complementary error function exp(x^2) erfc(x) for x >= 0.
inline double erfcx(double x) {
  if (x < 26.0) return std::exp(x * x) * std::erfc(x);
  const double inv2 = 1.0 / (x * x);
  return (1.0 - 0.5 * inv2 + 0.75 * inv2 * inv2 - 1.875 * inv2 * inv2 * inv2) /
         (x * std::sqrt(std::numbers::pi));
}

/// Log-density of the exponentially modified Gaussian: N(mu, sigma^2)
/// convolved with an exponential of mean tau.
inline double emg_log_pdf(double x, double mu, double sigma, double tau) {
  const double z = (x - mu) / sigma;
  const double u = (sigma / tau - z) / std::numbers::sqrt2;
  const double base = -std::log(2.0 * tau) - 0.5 * z * z;
  if (u >= 0.0) return base + std::log(erfcx(u));
  return base + u * u + std::log(std::erfc(u));
}

struct EmgFit {
  double mu = 0.0;     ///< s
  double sigma = 0.0;  ///< s
  double tau = 0.0;    ///< s
  double log_likelihood = 0.0;
  double gaussian_mu = 0.0;
  double gaussian_sigma = 0.0;
  double gaussian_log_likelihood = 0.0;
  double mu_error = 0.0;  ///< from the observed information; NaN if singular
  double sigma_error = 0.0;
  double tau_error = 0.0;
  std::size_t n = 0;
  int iterations = 0;

  double aic() const noexcept { return 6.0 - 2.0 * log_likelihood; }
  double gaussian_aic() const noexcept { return 4.0 - 2.0 * gaussian_log_likelihood; }
  /// Akaike comparison: the exponential tail earns its extra parameter.
  bool prefers_emg() const noexcept { return aic() < gaussian_aic(); }
};

class EmgFitFailure : public std::runtime_error {
 public:
  EmgFitFailure(const std::string& what, EmgFit best) : std::runtime_error(what), best_(best) {}
  const EmgFit& best() const noexcept { return best_; }

 private:
  EmgFit best_;
};

/// Maximum-likelihood EMG fit of switching times, started from the moment
/// estimates and refined with Nelder-Mead over (mu, log sigma, log tau) on
/// standardised data. Also reports the Gaussian MLE for model comparison.
inline EmgFit fit_emg(std::span<const double> times) {
  const std::size_t n = times.size();
  if (n < 50) throw InsufficientData("fit_emg: need at least 50 samples");
  const double nd = static_cast<double>(n);
  double mean = 0.0;
  for (double t : times) mean += t;
  mean /= nd;
  double m2 = 0.0, m3 = 0.0;
  for (double t : times) {
    const double d = t - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= nd;
  m3 /= nd;
  const double sd = std::sqrt(m2);
  if (!(sd > 0.0)) throw DomainError("fit_emg: zero spread");

  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = (times[i] - mean) / sd;

  const double skew = m3 / (sd * sd * sd);
  double tau0 = skew > 0.0 ? std::cbrt(skew / 2.0) : 0.1;
  tau0 = std::clamp(tau0, 0.05, 0.9);
  const double sigma0 = std::sqrt(1.0 - tau0 * tau0);

  const double log_tau_min = std::log(1e-4);
  const double log_sigma_min = std::log(1e-6);
  auto nll = [&](const std::array<double, 3>& p) {
    if (p[1] < log_sigma_min || p[2] < log_tau_min || p[1] > 5.0 || p[2] > 5.0)
      return std::numeric_limits<double>::infinity();
    const double s = std::exp(p[1]);
    const double t = std::exp(p[2]);
    double acc = 0.0;
    for (double v : z) acc -= emg_log_pdf(v, p[0], s, t);
    return acc;
  };

  NelderMeadOptions opt;
  opt.f_tolerance = 1e-9;
  opt.x_tolerance = 1e-7;
  auto res = nelder_mead<3>(nll, {-tau0, std::log(sigma0), std::log(tau0)}, {0.1, 0.1, 0.3}, opt);
  // restart from the optimum to escape a collapsed simplex
  auto res2 = nelder_mead<3>(nll, res.x, {0.02, 0.02, 0.1}, opt);
  res2.iterations += res.iterations;

  EmgFit fit;
  fit.n = n;
  fit.mu = mean + sd * res2.x[0];
  fit.sigma = sd * std::exp(res2.x[1]);
  fit.tau = sd * std::exp(res2.x[2]);
  fit.log_likelihood = -res2.f - nd * std::log(sd);
  fit.gaussian_mu = mean;
  fit.gaussian_sigma = sd;
  fit.gaussian_log_likelihood = -0.5 * nd * (std::log(2.0 * std::numbers::pi * m2) + 1.0);
  fit.iterations = res2.iterations;

  // observed information in (mu, sigma, tau), standardised units
  auto nll_direct = [&](const std::array<double, 3>& q) {
    if (!(q[1] > 0.0) || !(q[2] > 0.0)) return std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (double v : z) acc -= emg_log_pdf(v, q[0], q[1], q[2]);
    return acc;
  };
  const std::array<double, 3> q{res2.x[0], std::exp(res2.x[1]), std::exp(res2.x[2])};
  std::array<double, 3> h{};
  for (int i = 0; i < 3; ++i) h[i] = 1e-3 * std::max(std::min(q[1], q[2]), 1e-3);
  Eigen::Matrix3d H;
  const double f0 = nll_direct(q);
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      auto at = [&](double si, double sj) {
        auto x = q;
        x[i] += si * h[i];
        x[j] += sj * h[j];
        return nll_direct(x);
      };
      double v;
      if (i == j) {
        auto xp = q, xm = q;
        xp[i] += h[i];
        xm[i] -= h[i];
        v = (nll_direct(xp) - 2.0 * f0 + nll_direct(xm)) / (h[i] * h[i]);
      } else {
        v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h[i] * h[j]);
      }
      H(i, j) = H(j, i) = v;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::LLT<Eigen::Matrix3d> llt(H);
  if (H.allFinite() && llt.info() == Eigen::Success) {
    const Eigen::Matrix3d cov = llt.solve(Eigen::Matrix3d::Identity());
    fit.mu_error = sd * std::sqrt(cov(0, 0));
    fit.sigma_error = sd * std::sqrt(cov(1, 1));
    fit.tau_error = sd * std::sqrt(cov(2, 2));
  } else {
    fit.mu_error = fit.sigma_error = fit.tau_error = nan;
  }
  if (!res2.converged || !std::isfinite(res2.f)) throw EmgFitFailure("fit_emg: no convergence", fit);
  return fit;
}

}  // namespace photoion

#endif  // PHOTOION_EMG_HPP
