#ifndef PHOTOION_SPECTROSCOPY_HPP
#define PHOTOION_SPECTROSCOPY_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "photoion/ctmc.hpp"
#include "photoion/errors.hpp"
#include "photoion/optimize.hpp"

namespace photoion {

// ---------------------------------------------------------------------------
// Two-state pulse response

/// Probability that the trap is ionised at the end of a pulse of length t_p,
/// starting occupied, for ionisation rate nu_i and reset rate nu_r:
///   R = nu_i / (nu_i + nu_r) * (1 - exp(-(nu_i + nu_r) t_p)).
inline double eq1_forward(double nu_i, double nu_r, double t_p) {
  if (!(nu_i >= 0.0) || !(nu_r >= 0.0) || !(t_p >= 0.0))
    throw DomainError("eq1_forward: rates and pulse length must be >= 0");
  const double s = nu_i + nu_r;
  if (!(s > 0.0)) throw DomainError("eq1_forward: nu_i + nu_r must be > 0");
  return nu_i / s * -std::expm1(-s * t_p);
}

/// dR/dnu_i of eq1_forward.
inline double eq1_derivative(double nu_i, double nu_r, double t_p) {
  const double s = nu_i + nu_r;
  if (s == 0.0) return t_p;
  const double e = std::exp(-s * t_p);
  return nu_r / (s * s) * -std::expm1(-s * t_p) + nu_i / s * t_p * e;
}

struct InvertedRate {
  double nu_i = 0.0;
  bool zero_count = false;  ///< R was exactly 0; nu_i = 0 by convention
};

/// Solves eq1_forward(nu_i, nu_r, t_p) = R for nu_i. Bisection brackets the
/// root (R is strictly increasing in nu_i), Newton polishes it to 1e-12
/// relative.
inline InvertedRate eq1_invert(double R, double nu_r, double t_p) {
  if (!(t_p > 0.0)) throw DomainError("eq1_invert: t_p must be > 0");
  if (!(nu_r >= 0.0)) throw DomainError("eq1_invert: nu_r must be >= 0");
  if (R == 0.0) return {0.0, true};
  if (!(R > 0.0 && R < 1.0)) throw DomainError("eq1_invert: R must be in (0, 1)");

  auto f = [&](double nu) { return eq1_forward(nu, nu_r, t_p) - R; };
  double lo = 0.0;
  double hi = std::max(R / t_p, 1e-300);
  while (f(hi) < 0.0) {
    lo = hi;
    hi *= 2.0;
    if (!std::isfinite(hi)) throw DomainError("eq1_invert: no bracket");
  }
  while (hi - lo > 1e-6 * hi) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0.0 ? lo : hi) = mid;
  }
  double nu = 0.5 * (lo + hi);
  for (int i = 0; i < 60; ++i) {
    const double step = f(nu) / eq1_derivative(nu, nu_r, t_p);
    double next = nu - step;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    (f(next) < 0.0 ? lo : hi) = next;
    const bool done = std::abs(next - nu) <= 1e-15 * next;
    nu = next;
    if (done || hi - lo <= 1e-13 * hi) break;
  }
  return {nu, false};
}

/// Resonant power discounted by spectral broadening: alpha * P * W_min / W.
inline double effective_power(double power, double alpha, double width, double min_width) {
  if (!(min_width > 0.0)) throw DomainError("effective_power: W_min must be > 0");
  if (width < min_width) throw DomainError("effective_power: W below W_min");
  return alpha * power * min_width / width;
}

// ---------------------------------------------------------------------------
// Lorentzian lineshape fitting

struct SpectrumPoint {
  double detuning = 0.0;  ///< Hz
  double nu_i = 0.0;      ///< Hz
  double std_error = 0.0; ///< Hz
};

struct LorentzianFit {
  double center = 0.0;
  double fwhm = 0.0;
  double amplitude = 0.0;  ///< peak ionisation rate above offset
  double offset = 0.0;
  double center_error = 0.0;
  double fwhm_error = 0.0;
  double amplitude_error = 0.0;
  double offset_error = 0.0;
  double chi2 = 0.0;
  std::size_t dof = 0;
  int iterations = 0;
  bool weighted = false;
};

inline double lorentzian(double detuning, double center, double fwhm, double amplitude,
                         double offset) noexcept {
  const double hw = 0.5 * fwhm;
  const double d = detuning - center;
  return offset + amplitude * hw * hw / (d * d + hw * hw);
}

class LorentzianFitFailure : public std::runtime_error {
 public:
  LorentzianFitFailure(const std::string& what, LorentzianFit best)
      : std::runtime_error(what), best_(best) {}
  const LorentzianFit& best() const noexcept { return best_; }

 private:
  LorentzianFit best_;
};

/// Starting values: centre at the maximum, amplitude = max - min,
/// offset = min, FWHM from the interpolated half-maximum crossings.
inline std::array<double, 4> lorentzian_initial_guess(std::vector<SpectrumPoint> pts) {
  std::sort(pts.begin(), pts.end(),
            [](const SpectrumPoint& a, const SpectrumPoint& b) { return a.detuning < b.detuning; });
  std::size_t imax = 0, imin = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].nu_i > pts[imax].nu_i) imax = i;
    if (pts[i].nu_i < pts[imin].nu_i) imin = i;
  }
  const double top = pts[imax].nu_i, bottom = pts[imin].nu_i;
  const double half = 0.5 * (top + bottom);
  const double span = pts.back().detuning - pts.front().detuning;

  std::optional<double> left, right;
  for (std::size_t i = imax; i > 0; --i) {
    if (pts[i - 1].nu_i < half) {
      const double f = (pts[i].nu_i - half) / (pts[i].nu_i - pts[i - 1].nu_i);
      left = pts[i].detuning - f * (pts[i].detuning - pts[i - 1].detuning);
      break;
    }
  }
  for (std::size_t i = imax; i + 1 < pts.size(); ++i) {
    if (pts[i + 1].nu_i < half) {
      const double f = (pts[i].nu_i - half) / (pts[i].nu_i - pts[i + 1].nu_i);
      right = pts[i].detuning + f * (pts[i + 1].detuning - pts[i].detuning);
      break;
    }
  }
  const double c = pts[imax].detuning;
  double fwhm = 0.5 * span;
  if (left && right)
    fwhm = *right - *left;
  else if (left)
    fwhm = 2.0 * (c - *left);
  else if (right)
    fwhm = 2.0 * (*right - c);
  if (!(fwhm > 0.0)) fwhm = 0.5 * span;
  return {c, fwhm, top - bottom, bottom};
}

/// Weighted least-squares Lorentzian + constant fit (Levenberg-Marquardt).
/// Points are weighted by 1/stderr^2 when every stderr is positive,
/// otherwise unweighted. Parameter errors come from the curvature matrix,
/// scaled by the reduced chi^2 (never scaled down when weighted).
inline LorentzianFit fit_lorentzian(std::span<const SpectrumPoint> points) {
  const std::size_t m = points.size();
  if (m < 5) throw InsufficientData("fit_lorentzian: need at least 5 points");
  std::vector<SpectrumPoint> pts(points.begin(), points.end());
  bool weighted = true;
  for (const auto& p : pts) weighted = weighted && p.std_error > 0.0 && std::isfinite(p.std_error);

  double dmin = pts[0].detuning, dmax = pts[0].detuning;
  for (const auto& p : pts) {
    dmin = std::min(dmin, p.detuning);
    dmax = std::max(dmax, p.detuning);
  }
  const double span = dmax - dmin;
  if (!(span > 0.0)) throw DomainError("fit_lorentzian: detunings do not span a range");

  const auto g = lorentzian_initial_guess(pts);
  // Work in scaled units so the normal matrix is well conditioned.
  double yscale = 0.0;
  for (const auto& p : pts) yscale = std::max(yscale, std::abs(p.nu_i));
  if (!(yscale > 0.0)) throw DomainError("fit_lorentzian: spectrum is identically zero");
  const double xscale = span;
  const double xmid = 0.5 * (dmin + dmax);

  std::vector<double> x(m), y(m), w(m);
  for (std::size_t k = 0; k < m; ++k) {
    x[k] = (pts[k].detuning - xmid) / xscale;
    y[k] = pts[k].nu_i / yscale;
    w[k] = weighted ? yscale / pts[k].std_error : 1.0;
  }
  const double fwhm_max = 10.0;  // in units of the scan span

  auto residuals = [&](const Vec<4>& p, Eigen::VectorXd& r, Eigen::Matrix<double, Eigen::Dynamic, 4>& J) {
    const double c = p(0), fw = p(1), a = p(2), o = p(3);
    if (!(fw > 0.0) || fw > fwhm_max || !std::isfinite(c) || !std::isfinite(a) || !std::isfinite(o))
      return false;
    const double hw = 0.5 * fw;
    for (std::size_t k = 0; k < m; ++k) {
      const double d = x[k] - c;
      const double den = d * d + hw * hw;
      const double shape = hw * hw / den;
      r(static_cast<Eigen::Index>(k)) = w[k] * (o + a * shape - y[k]);
      const auto kk = static_cast<Eigen::Index>(k);
      J(kk, 0) = w[k] * a * 2.0 * d * hw * hw / (den * den);
      J(kk, 1) = w[k] * a * (hw * d * d) / (den * den);
      J(kk, 2) = w[k] * shape;
      J(kk, 3) = w[k];
    }
    return true;
  };

  Vec<4> p0;
  p0 << (g[0] - xmid) / xscale, g[1] / xscale, g[2] / yscale, g[3] / yscale;
  p0(1) = std::clamp(p0(1), 1e-6, fwhm_max * 0.5);
  if (!(p0(2) > 0.0)) p0(2) = 1e-3;
  const auto res = levenberg_marquardt<4>(residuals, p0, m);

  LorentzianFit fit;
  fit.weighted = weighted;
  fit.center = xmid + xscale * res.params(0);
  fit.fwhm = xscale * res.params(1);
  fit.amplitude = yscale * res.params(2);
  fit.offset = yscale * res.params(3);
  fit.chi2 = weighted ? res.chi2 : res.chi2 * yscale * yscale;
  fit.dof = m > 4 ? m - 4 : 0;
  fit.iterations = res.iterations;
  double scale = 1.0;
  if (fit.dof > 0) {
    const double red = res.chi2 / static_cast<double>(fit.dof);
    scale = weighted ? std::max(1.0, red) : red;
  }
  auto err = [&](int i, double unit) {
    const double v = res.covariance(i, i) * scale;
    return v > 0.0 && std::isfinite(v) ? unit * std::sqrt(v) : 0.0;
  };
  fit.center_error = err(0, xscale);
  fit.fwhm_error = err(1, xscale);
  fit.amplitude_error = err(2, yscale);
  fit.offset_error = err(3, yscale);

  if (!res.converged) throw LorentzianFitFailure("fit_lorentzian: no convergence", fit);
  if (res.params(1) >= 0.999 * fwhm_max) throw LorentzianFitFailure("fit_lorentzian: FWHM at bound", fit);
  if (!(fit.amplitude > 0.0)) throw LorentzianFitFailure("fit_lorentzian: non-positive amplitude", fit);
  return fit;
}

// ---------------------------------------------------------------------------
// Broadened lineshape model and calibration

/// Olivero-Longbothum estimate of the Voigt FWHM from the Lorentzian FWHM
/// and Gaussian sigma.
inline double voigt_fwhm_estimate(double lorentz_fwhm, double gauss_sigma) {
  const double fg = 2.0 * std::sqrt(2.0 * std::numbers::ln2) * gauss_sigma;
  return 0.5346 * lorentz_fwhm + std::sqrt(0.2166 * lorentz_fwhm * lorentz_fwhm + fg * fg);
}

/// Mean of a unit-peak Lorentzian (FWHM `lorentz_fwhm`) over a Gaussian
/// centre offset of standard deviation `gauss_sigma`, by trapezoid
/// quadrature on +-10 sigma. This is the time-averaged excitation lineshape
/// when diffusion is fast compared with excitation.
inline double broadened_lineshape(double detuning, double lorentz_fwhm, double gauss_sigma) {
  const double hw = 0.5 * lorentz_fwhm;
  if (gauss_sigma <= 0.0) return hw * hw / (detuning * detuning + hw * hw);
  const double step = std::min(gauss_sigma, hw) / 40.0;
  const int n = static_cast<int>(std::ceil(10.0 * gauss_sigma / step));
  double acc = 0.0;
  for (int k = -n; k <= n; ++k) {
    const double x = k * step;
    const double g = std::exp(-0.5 * x * x / (gauss_sigma * gauss_sigma));
    const double d = detuning - x;
    acc += (k == -n || k == n ? 0.5 : 1.0) * g * hw * hw / (d * d + hw * hw);
  }
  return acc * step / (gauss_sigma * std::sqrt(2.0 * std::numbers::pi));
}

/// Symmetric detuning grid of `points` values spanning +-span_widths * width.
inline std::vector<double> detuning_grid(double width, double span_widths, std::size_t points) {
  std::vector<double> grid(points);
  if (points == 1) {
    grid[0] = 0.0;
    return grid;
  }
  for (std::size_t k = 0; k < points; ++k)
    grid[k] = -span_widths * width +
              2.0 * span_widths * width * static_cast<double>(k) / static_cast<double>(points - 1);
  return grid;
}

/// Error model assumed when fitting the noise-free lineshape: none, or
/// counting statistics (error proportional to sqrt(y)) as in a measured
/// spectrum. The two give different widths for a Voigt profile.
enum class FitWeighting { Unweighted, Counting };

/// FWHM returned by a Lorentzian fit of the noise-free broadened lineshape
/// sampled on the standard detuning grid.
inline double lorentz_fit_width_of_broadened(double lorentz_fwhm, double gauss_sigma, double span_widths,
                                             std::size_t points, FitWeighting weighting = FitWeighting::Counting) {
  const double w = voigt_fwhm_estimate(lorentz_fwhm, gauss_sigma);
  std::vector<SpectrumPoint> pts;
  for (double d : detuning_grid(w, span_widths, points)) {
    const double y = broadened_lineshape(d, lorentz_fwhm, gauss_sigma);
    pts.push_back({d, y, weighting == FitWeighting::Counting ? 1e-2 * std::sqrt(y) : 0.0});
  }
  return fit_lorentzian(pts).fwhm;
}

/// sigma_per_power such that a spectrum at `anchor_power` fits to a
/// Lorentzian of FWHM `anchor_fwhm`, with sigma = sigma_per_power * P.
inline double calibrate_sigma_per_power(double lorentz_fwhm, double anchor_power, double anchor_fwhm,
                                        double span_widths = 2.5, std::size_t points = 25,
                                        FitWeighting weighting = FitWeighting::Counting) {
  if (!(anchor_fwhm > lorentz_fwhm)) throw DomainError("calibrate_sigma_per_power: anchor not broadened");
  double lo = 0.0, hi = 4.0 * anchor_fwhm;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    (lorentz_fit_width_of_broadened(lorentz_fwhm, mid, span_widths, points, weighting) < anchor_fwhm ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi) / anchor_power;
}

/// gamma_e_per_power giving a peak-ionisation slope `peak_slope` (Hz per uW
/// of total power) in the linear regime.
inline double calibrate_excitation_coefficient(const RateParams& rates, double alpha, double peak_slope) {
  if (!(alpha > 0.0)) throw DomainError("calibrate_excitation_coefficient: alpha must be > 0");
  return peak_slope / (alpha * rates.ionising_fraction());
}

/// Excitation rate for which the reduced ionisation rate equals nu_i.
inline double excitation_for_ionisation_rate(const RateParams& rates, double nu_i) {
  if (!(nu_i >= 0.0 && nu_i < rates.gamma_i))
    throw DomainError("excitation_for_ionisation_rate: nu_i must be in [0, gamma_i)");
  return nu_i * rates.total_decay() / (rates.gamma_i - nu_i);
}

}  // namespace photoion

#endif  // PHOTOION_SPECTROSCOPY_HPP
