#pragma once

// Property checks shared by the unit tests and the acceptance suite.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fes_stack/fes_stack.hpp"

namespace fes::testing {

/// Fold invariants of a stratified two-fold split: singletons removed and
/// listed, every other class present in both folds and balanced to within
/// one. Returns an empty string or the first violation.
inline std::string check_folds(std::span<const std::uint32_t> labels, const FoldAssignment& a) {
  if (a.fold_of.size() != labels.size()) return "length";
  std::map<std::uint32_t, std::array<std::size_t, 3>> counts;  // fold 0, fold 1, removed
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto f = a.fold_of[i];
    if (f == 0 || f == 1)
      ++counts[labels[i]][f];
    else if (f == kFoldRemoved)
      ++counts[labels[i]][2];
    else
      return "bad fold value";
  }
  std::vector<std::uint32_t> removed;
  for (const auto& [c, n] : counts) {
    const std::size_t total = n[0] + n[1] + n[2];
    if (total == 1) {
      if (n[2] != 1) return "singleton not removed";
      removed.push_back(c);
      continue;
    }
    if (n[2] != 0) return "non-singleton instance removed";
    if (n[0] == 0 || n[1] == 0) return "class missing from a fold";
    if ((n[0] > n[1] ? n[0] - n[1] : n[1] - n[0]) > 1) return "class not balanced";
  }
  if (removed != a.removed_classes) return "removed class list";
  return {};
}

/// Raw weights in +-[0.05, 1], away from the clipping kink.
inline std::vector<double> away_from_kink(std::size_t n, Rng& rng) {
  std::vector<double> x(n);
  for (auto& v : x) {
    const double mag = 0.05 + 0.95 * rng.uniform();
    v = rng.uniform() < 0.3 ? -mag : mag;
  }
  return x;
}

/// ||g - g_fd|| / max(||g||, ||g_fd||) with central differences of step h.
template <class F>
double relative_gradient_error(F& f, std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size()), scratch(x.size());
  f(std::span<const double>(x), std::span<double>(g));
  double diff = 0.0, norm_a = 0.0, norm_fd = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double up = f(std::span<const double>(x), std::span<double>(scratch));
    x[i] = xi - h;
    const double down = f(std::span<const double>(x), std::span<double>(scratch));
    x[i] = xi;
    const double fd = (up - down) / (2 * h);
    diff += (g[i] - fd) * (g[i] - fd);
    norm_a += g[i] * g[i];
    norm_fd += fd * fd;
  }
  return std::sqrt(diff) / std::max(std::sqrt(std::max(norm_a, norm_fd)), 1e-300);
}

/// f(x) = 0.5 (x - a)^T Q (x - a) with Q = M^T M / d + mu I.
struct Quadratic {
  std::size_t dim;
  std::vector<double> q;  // dim x dim
  std::vector<double> a;

  Quadratic(std::size_t d, Rng& rng, double mu) : dim(d), q(d * d, 0.0), a(d) {
    std::vector<double> m(d * d);
    for (auto& v : m) v = rng.normal() / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += m[k * d + i] * m[k * d + j];
        q[i * d + j] = s + (i == j ? mu : 0.0);
      }
    for (auto& v : a) v = rng.normal();
  }

  double operator()(std::span<const double> x, std::span<double> g) const {
    std::vector<double> r(dim);
    for (std::size_t i = 0; i < dim; ++i) r[i] = x[i] - a[i];
    double f = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += q[i * dim + j] * r[j];
      g[i] = s;
      f += 0.5 * r[i] * s;
    }
    return f;
  }
};

}  // namespace fes::testing
