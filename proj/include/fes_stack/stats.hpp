#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "fes_stack/error.hpp"
#include "fes_stack/stacker.hpp"

namespace fes {

struct MeanCi {
  double mean = 0.0;
  double halfwidth = 0.0;
};

inline double mean_of(std::span<const double> v) {
  require(!v.empty(), ErrorKind::Invariant, "mean of an empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation with ddof = 1.
inline double sample_std(std::span<const double> v) {
  require(v.size() >= 2, ErrorKind::Invariant, "sample standard deviation needs n >= 2");
  // The rounded mean of identical values can differ from them by an ulp.
  if (std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end()) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Mean with the normal-approximation 95% half-width 1.96 * sd / sqrt(n).
inline MeanCi mean_ci95(std::span<const double> accs) {
  require(accs.size() >= 2, ErrorKind::Invariant, "confidence interval needs at least two values");
  MeanCi out;
  out.mean = mean_of(accs);
  out.halfwidth = 1.96 * sample_std(accs) / std::sqrt(static_cast<double>(accs.size()));
  return out;
}

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  fail(ErrorKind::Numeric, "incomplete beta continued fraction did not converge");
}

}  // namespace detail

/// Regularised incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, ErrorKind::Numeric, "incomplete beta needs positive shape parameters");
  require(x >= 0.0 && x <= 1.0, ErrorKind::Numeric, "incomplete beta argument outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-sided tail probability P(|T| >= |t|) of Student's t with `df` degrees
/// of freedom.
inline double student_t_two_sided_p(double t, double df) {
  require(df > 0.0, ErrorKind::Numeric, "Student t needs positive degrees of freedom");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

/// Regularised upper incomplete gamma Q(a, x).
inline double incomplete_gamma_upper(double a, double x) {
  require(a > 0.0 && x >= 0.0, ErrorKind::Numeric, "incomplete gamma needs a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  const double log_front = a * std::log(x) - x - std::lgamma(a);
  if (x < a + 1.0) {
    // Series for P(a, x).
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n <= 100000; ++n) {
      term *= x / (a + n);
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-16) return 1.0 - sum * std::exp(log_front);
    }
    fail(ErrorKind::Numeric, "incomplete gamma series did not converge");
  }
  // Continued fraction for Q(a, x).
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 100000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) return std::exp(log_front) * h;
  }
  fail(ErrorKind::Numeric, "incomplete gamma continued fraction did not converge");
}

inline double chi_square_upper_p(double stat, double df) {
  return incomplete_gamma_upper(0.5 * df, std::max(stat, 0.0) * 0.5);
}

struct PairedTTest {
  double t = 0.0;
  double p = 1.0;
  std::size_t n = 0;
  double mean_difference = 0.0;
  // Differences have zero variance: t is +-inf with p = 0 for a nonzero mean,
  // and t = 0 with p = 1 when all differences are zero.
  bool degenerate = false;
};

inline PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::DimMismatch, "paired t-test needs equal-length samples");
  require(a.size() >= 2, ErrorKind::Invariant, "paired t-test needs at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];

  PairedTTest out;
  out.n = d.size();
  out.mean_difference = mean_of(d);
  const double sd = sample_std(d);
  if (sd == 0.0) {
    out.degenerate = true;
    if (out.mean_difference == 0.0) {
      out.t = 0.0;
      out.p = 1.0;
    } else {
      out.t = std::copysign(std::numeric_limits<double>::infinity(), out.mean_difference);
      out.p = 0.0;
    }
    return out;
  }
  out.t = out.mean_difference / (sd / std::sqrt(static_cast<double>(out.n)));
  out.p = student_t_two_sided_p(out.t, static_cast<double>(out.n - 1));
  return out;
}

/// Nemenyi critical value q at alpha = 0.05 (studentized range quantile over
/// sqrt 2, infinite degrees of freedom) for k = 2..10 methods.
inline std::optional<double> nemenyi_q05(std::size_t k) {
  static constexpr double table[] = {1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164};
  if (k < 2 || k > 10) return std::nullopt;
  return table[k - 2];
}

inline std::optional<double> nemenyi_cd(std::size_t k, std::size_t n) {
  const auto q = nemenyi_q05(k);
  if (!q || n == 0) return std::nullopt;
  return *q * std::sqrt(static_cast<double>(k * (k + 1)) / (6.0 * static_cast<double>(n)));
}

/// Ranks of one row, 1 = highest value, ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> row) {
  const std::size_t k = row.size();
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return row[x] > row[y]; });
  std::vector<double> ranks(k);
  for (std::size_t i = 0; i < k;) {
    std::size_t j = i;
    while (j + 1 < k && row[order[j + 1]] == row[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

struct FriedmanNemenyi {
  std::vector<double> mean_ranks;
  double statistic = 0.0;
  double p = 1.0;
  std::size_t episodes = 0;
  std::size_t methods = 0;
  std::optional<double> critical_difference;  // only tabulated for k <= 10
  // Maximal groups of methods (by column index, ordered by mean rank) whose
  // mean-rank spread is within the critical difference.
  std::vector<std::vector<std::size_t>> cliques;
};

/// Friedman test and Nemenyi post-hoc on an episodes x methods accuracy matrix.
inline FriedmanNemenyi friedman_nemenyi(const Matrix& acc) {
  const std::size_t n = acc.rows();
  const std::size_t k = acc.cols();
  require(k >= 2, ErrorKind::Invariant, "Friedman test needs at least two methods");
  require(n >= 2, ErrorKind::Invariant, "Friedman test needs at least two episodes");
  for (double v : acc.values())
    require(std::isfinite(v), ErrorKind::NonFinite, "Friedman test input contains non-finite values");

  FriedmanNemenyi out;
  out.episodes = n;
  out.methods = k;
  out.mean_ranks.assign(k, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto ranks = average_ranks(acc.row(r));
    for (std::size_t c = 0; c < k; ++c) out.mean_ranks[c] += ranks[c];
  }
  for (auto& m : out.mean_ranks) m /= static_cast<double>(n);

  const double kd = static_cast<double>(k);
  const double nd = static_cast<double>(n);
  double sum_sq = 0.0;
  for (double m : out.mean_ranks) sum_sq += m * m;
  out.statistic = std::max(0.0, 12.0 * nd / (kd * (kd + 1.0)) * (sum_sq - kd * (kd + 1.0) * (kd + 1.0) / 4.0));
  out.p = chi_square_upper_p(out.statistic, kd - 1.0);
  out.critical_difference = nemenyi_cd(k, n);

  if (out.critical_difference) {
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return out.mean_ranks[x] < out.mean_ranks[y]; });
    std::size_t last_end = 0;
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i;
      while (j + 1 < k && out.mean_ranks[order[j + 1]] - out.mean_ranks[order[i]] <= *out.critical_difference) ++j;
      // Keep only groups not contained in the previous one.
      if (j > i && j + 1 > last_end) {
        out.cliques.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                                 order.begin() + static_cast<std::ptrdiff_t>(j + 1));
        last_end = j + 1;
      }
    }
  }
  return out;
}

}  // namespace fes
