#ifndef PHOTOION_OPTIMIZE_HPP
#define PHOTOION_OPTIMIZE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "photoion/errors.hpp"

namespace photoion {

template <int N>
using Vec = Eigen::Matrix<double, N, 1>;
template <int N>
using Mat = Eigen::Matrix<double, N, N>;

struct LmOptions {
  int max_iterations = 500;
  double step_tolerance = 1e-13;  ///< relative parameter change
  double lambda0 = 1e-3;
};

template <int N>
struct LmResult {
  Vec<N> params;
  Mat<N> covariance;  ///< (J^T J)^-1 of the weighted residuals at the solution
  double chi2 = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Levenberg-Marquardt minimisation of sum r_k^2.
///
/// `residuals(p, r, J)` fills r (size m, already divided by the point
/// uncertainties) and the Jacobian J (m x N) for parameters p, and returns
/// false when p is outside the admissible region.
template <int N, class Residuals>
LmResult<N> levenberg_marquardt(Residuals&& residuals, Vec<N> p, std::size_t m,
                                const LmOptions& opt = {}) {
  Eigen::VectorXd r(m), r_try(m);
  Eigen::Matrix<double, Eigen::Dynamic, N> J(m, N), J_try(m, N);
  LmResult<N> out;
  if (!residuals(p, r, J)) throw DomainError("levenberg_marquardt: infeasible start");
  double chi2 = r.squaredNorm();
  double lambda = opt.lambda0;

  int iter = 0;
  bool converged = false;
  for (; iter < opt.max_iterations && !converged; ++iter) {
    const Mat<N> A = J.transpose() * J;
    const Vec<N> g = J.transpose() * r;
    bool accepted = false;
    while (lambda < 1e20) {
      Mat<N> A_damped = A;
      for (int i = 0; i < N; ++i) A_damped(i, i) += lambda * std::max(A(i, i), 1e-300);
      const Vec<N> step = A_damped.ldlt().solve(-g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Vec<N> p_try = p + step;
      if (!residuals(p_try, r_try, J_try)) {
        lambda *= 10.0;
        continue;
      }
      const double chi2_try = r_try.squaredNorm();
      if (chi2_try <= chi2) {
        bool small = true;
        for (int i = 0; i < N; ++i)
          small = small && std::abs(step(i)) <= opt.step_tolerance * (std::abs(p_try(i)) + opt.step_tolerance);
        p = p_try;
        r.swap(r_try);
        J.swap(J_try);
        converged = small || chi2_try == 0.0 || (chi2 - chi2_try) <= 1e-15 * chi2;
        chi2 = chi2_try;
        lambda = std::max(lambda * 0.1, 1e-15);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      // No downhill step at any damping: p is a local minimum to working precision.
      converged = true;
    }
  }
  out.params = p;
  out.chi2 = chi2;
  out.iterations = iter;
  out.converged = converged;
  const Mat<N> A = J.transpose() * J;
  out.covariance = A.inverse();
  return out;
}

struct NelderMeadOptions {
  int max_iterations = 5000;
  double f_tolerance = 1e-10;  ///< absolute spread of f over the simplex
  double x_tolerance = 1e-9;   ///< simplex extent per coordinate
};

template <int N>
struct NelderMeadResult {
  std::array<double, N> x{};
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Derivative-free simplex minimisation (standard reflection/expansion/
/// contraction/shrink coefficients 1, 2, 1/2, 1/2).
template <int N, class F>
NelderMeadResult<N> nelder_mead(F&& f, std::array<double, N> x0, std::array<double, N> scale,
                                const NelderMeadOptions& opt = {}) {
  using Point = std::array<double, N>;
  std::array<Point, N + 1> simplex;
  std::array<double, N + 1> value;
  simplex[0] = x0;
  for (int i = 0; i < N; ++i) {
    simplex[i + 1] = x0;
    simplex[i + 1][i] += scale[i];
  }
  for (int i = 0; i <= N; ++i) value[i] = f(simplex[i]);

  auto combine = [](const Point& a, const Point& b, double t) {
    Point out;
    for (int i = 0; i < N; ++i) out[i] = a[i] + t * (b[i] - a[i]);
    return out;
  };

  NelderMeadResult<N> res;
  int iter = 0;
  for (; iter < opt.max_iterations; ++iter) {
    std::array<int, N + 1> order;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return value[a] < value[b]; });
    {
      auto s2 = simplex;
      auto v2 = value;
      for (int i = 0; i <= N; ++i) {
        simplex[i] = s2[order[i]];
        value[i] = v2[order[i]];
      }
    }
    double extent = 0.0;
    for (int i = 1; i <= N; ++i)
      for (int j = 0; j < N; ++j) extent = std::max(extent, std::abs(simplex[i][j] - simplex[0][j]));
    if (std::abs(value[N] - value[0]) <= opt.f_tolerance && extent <= opt.x_tolerance) {
      res.converged = true;
      break;
    }

    Point centroid{};
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) centroid[j] += simplex[i][j] / N;

    const Point reflected = combine(centroid, simplex[N], -1.0);
    const double fr = f(reflected);
    if (fr < value[0]) {
      const Point expanded = combine(centroid, simplex[N], -2.0);
      const double fe = f(expanded);
      if (fe < fr) {
        simplex[N] = expanded;
        value[N] = fe;
      } else {
        simplex[N] = reflected;
        value[N] = fr;
      }
    } else if (fr < value[N - 1]) {
      simplex[N] = reflected;
      value[N] = fr;
    } else {
      const bool outside = fr < value[N];
      const Point contracted = outside ? combine(centroid, reflected, 0.5) : combine(centroid, simplex[N], 0.5);
      const double fc = f(contracted);
      if (fc < std::min(fr, value[N])) {
        simplex[N] = contracted;
        value[N] = fc;
      } else {
        for (int i = 1; i <= N; ++i) {
          simplex[i] = combine(simplex[0], simplex[i], 0.5);
          value[i] = f(simplex[i]);
        }
      }
    }
  }
  const auto best = std::min_element(value.begin(), value.end()) - value.begin();
  res.x = simplex[best];
  res.f = value[best];
  res.iterations = iter;
  return res;
}

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double intercept_error = 0.0;
  double slope_error = 0.0;
  double chi2 = 0.0;
  double r_squared = 0.0;
  std::size_t n = 0;
};

/// Weighted least squares y = a + b x. With `y_errors` empty (or any error
/// non-positive) the fit is unweighted and the parameter errors come from
/// the residual scatter; otherwise they are the absolute errors, inflated by
/// sqrt(chi2/dof) when the scatter exceeds them.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y,
                            std::span<const double> y_errors = {}) {
  const std::size_t n = x.size();
  if (n != y.size() || (!y_errors.empty() && y_errors.size() != n))
    throw DomainError("linear_fit: size mismatch");
  if (n < 2) throw InsufficientData("linear_fit: need at least 2 points");
  bool weighted = !y_errors.empty();
  if (weighted)
    for (double e : y_errors) weighted = weighted && e > 0.0 && std::isfinite(e);

  double S = 0, Sx = 0, Sy = 0, Sxx = 0, Sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weighted ? 1.0 / (y_errors[i] * y_errors[i]) : 1.0;
    S += w;
    Sx += w * x[i];
    Sy += w * y[i];
    Sxx += w * x[i] * x[i];
    Sxy += w * x[i] * y[i];
  }
  const double det = S * Sxx - Sx * Sx;
  if (!(det > 0.0)) throw DomainError("linear_fit: degenerate abscissae");
  LinearFit fit;
  fit.n = n;
  fit.intercept = (Sxx * Sy - Sx * Sxy) / det;
  fit.slope = (S * Sxy - Sx * Sy) / det;

  double chi2 = 0.0, ss_tot = 0.0;
  const double ybar = Sy / S;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weighted ? 1.0 / (y_errors[i] * y_errors[i]) : 1.0;
    const double res = y[i] - fit.intercept - fit.slope * x[i];
    chi2 += w * res * res;
    ss_tot += w * (y[i] - ybar) * (y[i] - ybar);
  }
  fit.chi2 = chi2;
  fit.r_squared = ss_tot > 0.0 ? 1.0 - chi2 / ss_tot : 1.0;
  double scale = 1.0;
  if (n > 2) {
    const double red = chi2 / static_cast<double>(n - 2);
    scale = weighted ? std::max(1.0, red) : red;
  }
  fit.intercept_error = std::sqrt(scale * Sxx / det);
  fit.slope_error = std::sqrt(scale * S / det);
  return fit;
}

struct ProportionalFit {
  double slope = 0.0;
  double slope_error = 0.0;
  double r_squared = 0.0;           ///< uncentred: 1 - SS_res / sum y^2
  double r_squared_centered = 0.0;  ///< 1 - SS_res / sum (y - ybar)^2
  std::size_t n = 0;
};

/// Unweighted least squares through the origin, y = b x.
inline ProportionalFit proportional_fit(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n != y.size()) throw DomainError("proportional_fit: size mismatch");
  if (n < 2) throw InsufficientData("proportional_fit: need at least 2 points");
  double Sxx = 0, Sxy = 0, Syy = 0, Sy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Sxx += x[i] * x[i];
    Sxy += x[i] * y[i];
    Syy += y[i] * y[i];
    Sy += y[i];
  }
  if (!(Sxx > 0.0)) throw DomainError("proportional_fit: all abscissae zero");
  ProportionalFit fit;
  fit.n = n;
  fit.slope = Sxy / Sxx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - fit.slope * x[i];
    ss_res += r * r;
  }
  const double ybar = Sy / static_cast<double>(n);
  const double ss_tot_c = Syy - static_cast<double>(n) * ybar * ybar;
  fit.r_squared = Syy > 0.0 ? 1.0 - ss_res / Syy : 1.0;
  fit.r_squared_centered = ss_tot_c > 0.0 ? 1.0 - ss_res / ss_tot_c : 1.0;
  fit.slope_error = std::sqrt(ss_res / static_cast<double>(n - 1) / Sxx);
  return fit;
}

}  // namespace photoion

#endif  // PHOTOION_OPTIMIZE_HPP
