#pragma once

// Reference computations used only by tests: direct numerical integration,
// independent of the closed forms in the library.

#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/sinh_sinh.hpp>
#include <boost/math/tools/roots.hpp>

namespace fes::oracle {

inline double t_density(double x, double df) {
  const double log_norm =
      std::lgamma(0.5 * (df + 1)) - std::lgamma(0.5 * df) - 0.5 * std::log(df * std::numbers::pi);
  return std::exp(log_norm - 0.5 * (df + 1) * std::log1p(x * x / df));
}

/// Two-sided Student-t tail 2 * integral_{|t|}^inf density.
inline double t_two_sided_p(double t, double df) {
  boost::math::quadrature::exp_sinh<double> integrator;
  const double a = std::abs(t);
  const double tail = integrator.integrate([&](double u) { return t_density(a + u, df); }, 0.0,
                                           std::numeric_limits<double>::infinity());
  return 2.0 * tail;
}

inline double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi); }
inline double Phi(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// P(range of k iid standard normals <= w).
inline double studentized_range_cdf_inf_df(double w, int k) {
  boost::math::quadrature::sinh_sinh<double> integrator;
  return k * integrator.integrate([&](double z) { return phi(z) * std::pow(Phi(z + w) - Phi(z), k - 1); });
}

/// Nemenyi q at alpha = 0.05: 0.95 quantile of the range, over sqrt 2.
inline double nemenyi_q(int k) {
  auto f = [&](double w) { return studentized_range_cdf_inf_df(w, k) - 0.95; };
  boost::math::tools::eps_tolerance<double> tol(40);
  std::uintmax_t iters = 200;
  const auto [lo, hi] = boost::math::tools::toms748_solve(f, 0.5, 10.0, tol, iters);
  return 0.5 * (lo + hi) / std::numbers::sqrt2;
}

}  // namespace fes::oracle
