#pragma once

// Limited-memory BFGS with a strong-Wolfe line search (bracketing plus
// safeguarded cubic-interpolation zoom). Full-batch and deterministic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fes_stack/error.hpp"

namespace fes {

struct OptimConfig {
  std::size_t memory_depth = 10;
  std::size_t max_iterations = 200;
  double grad_tol = 1e-8;       // stop when ||g||_inf <= grad_tol
  double loss_rel_tol = 1e-10;  // stop when (f_prev - f) / max(|f_prev|, 1e-300) <= loss_rel_tol
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  std::size_t max_line_search_evals = 25;

  void validate() const {
    require(wolfe_c1 > 0.0 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0, ErrorKind::Config,
            "line search needs 0 < c1 < c2 < 1");
    require(grad_tol > 0.0 && loss_rel_tol > 0.0, ErrorKind::Config, "tolerances must be > 0");
    require(memory_depth >= 1 && max_line_search_evals >= 1, ErrorKind::Config,
            "memory depth and line-search budget must be >= 1");
  }
};

/// f(x) returning the loss and writing the gradient into g.
using Objective = std::function<double(std::span<const double> x, std::span<double> g)>;

enum class Termination { GradientTolerance, LossTolerance, MaxIterations, LineSearchFailure };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::GradientTolerance: return "gradient_tolerance";
    case Termination::LossTolerance: return "loss_tolerance";
    case Termination::MaxIterations: return "max_iterations";
    case Termination::LineSearchFailure: return "line_search_failure";
  }
  return "?";
}

struct OptimResult {
  std::vector<double> params;
  double loss = 0.0;
  double grad_inf_norm = 0.0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  Termination termination = Termination::MaxIterations;
  std::vector<double> loss_history;  // loss at the start and after every accepted step
};

/// Constant initialisation (1e-3)^(1/levels): the product of one weight from
/// each level of the hierarchy starts at 1e-3.
inline std::vector<double> init_params(int levels, std::size_t count) {
  require(levels == 1 || levels == 2, ErrorKind::Config, "kernel hierarchy depth must be 1 or 2");
  return std::vector<double>(count, std::pow(1e-3, 1.0 / levels));
}

namespace detail {

// Four interleaved partial sums in a fixed order, so results do not depend on
// how the compiler schedules the loop.
inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= a.size(); i += 4)
    for (std::size_t u = 0; u < 4; ++u) acc[u] += a[i + u] * b[i + u];
  for (; i < a.size(); ++i) acc[0] += a[i] * b[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

inline double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double l1_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Minimiser of the cubic through (a, fa, da) and (b, fb, db), or NaN.
inline double cubic_minimizer(double a, double fa, double da, double b, double fb, double db) {
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  if (!(disc >= 0.0)) return std::nan("");
  double d2 = std::sqrt(disc);
  if (b < a) d2 = -d2;
  const double denom = db - da + 2.0 * d2;
  if (denom == 0.0) return std::nan("");
  return b - (b - a) * ((db + d2 - d1) / denom);
}

struct TrialPoint {
  double step = 0.0;
  double loss = 0.0;
  double slope = 0.0;  // directional derivative
  std::vector<double> x;
  std::vector<double> grad;
};

class LineSearch {
 public:
  LineSearch(const Objective& f, const OptimConfig& cfg, std::span<const double> x0, double f0,
             std::span<const double> g0, std::span<const double> dir)
      : f_(f), cfg_(cfg), x0_(x0), dir_(dir), f0_(f0), slope0_(dot(g0, dir)) {
    origin_.step = 0.0;
    origin_.loss = f0;
    origin_.slope = slope0_;
    origin_.x.assign(x0.begin(), x0.end());
    origin_.grad.assign(g0.begin(), g0.end());
  }

  std::size_t evaluations() const { return evals_; }

  // Returns true with `out` at an accepted point (strong Wolfe, or at least
  // sufficient decrease with a strict loss reduction).
  bool search(double initial_step, TrialPoint& out) {
    TrialPoint prev = origin_;
    double step = initial_step;
    for (std::size_t i = 0; evals_ < cfg_.max_line_search_evals; ++i) {
      TrialPoint cur = evaluate(step);
      if (cur.loss > f0_ + cfg_.wolfe_c1 * step * slope0_ || (i > 0 && cur.loss >= prev.loss))
        return zoom(std::move(prev), std::move(cur), out);
      if (std::abs(cur.slope) <= -cfg_.wolfe_c2 * slope0_) {
        out = std::move(cur);
        return true;
      }
      if (cur.slope >= 0.0) return zoom(std::move(cur), std::move(prev), out);
      const double next = 2.0 * step;
      prev = std::move(cur);
      step = next;
    }
    return accept_fallback(prev, out);
  }

 private:
  TrialPoint evaluate(double step) {
    TrialPoint t;
    t.step = step;
    t.x.resize(x0_.size());
    t.grad.resize(x0_.size());
    for (std::size_t i = 0; i < x0_.size(); ++i) t.x[i] = x0_[i] + step * dir_[i];
    t.loss = f_(t.x, t.grad);
    ++evals_;
    require(std::isfinite(t.loss) && all_finite(t.grad), ErrorKind::Numeric,
            "objective returned a non-finite loss or gradient during line search");
    t.slope = dot(t.grad, dir_);
    return t;
  }

  bool zoom(TrialPoint lo, TrialPoint hi, TrialPoint& out) {
    while (evals_ < cfg_.max_line_search_evals) {
      const double width = hi.step - lo.step;
      if (std::abs(width) <= 1e-16 * std::max(1.0, std::abs(lo.step))) break;
      double step = cubic_minimizer(lo.step, lo.loss, lo.slope, hi.step, hi.loss, hi.slope);
      const double left = std::min(lo.step, hi.step);
      const double right = std::max(lo.step, hi.step);
      const double margin = 0.1 * (right - left);
      if (!std::isfinite(step) || step < left + margin || step > right - margin)
        step = 0.5 * (lo.step + hi.step);
      TrialPoint cur = evaluate(step);
      if (cur.loss > f0_ + cfg_.wolfe_c1 * step * slope0_ || cur.loss >= lo.loss) {
        hi = std::move(cur);
      } else {
        if (std::abs(cur.slope) <= -cfg_.wolfe_c2 * slope0_) {
          out = std::move(cur);
          return true;
        }
        if (cur.slope * (hi.step - lo.step) >= 0.0) hi = std::move(lo);
        lo = std::move(cur);
      }
    }
    return accept_fallback(lo, out);
  }

  bool accept_fallback(const TrialPoint& best, TrialPoint& out) {
    if (best.step > 0.0 && best.loss < f0_ && best.loss <= f0_ + cfg_.wolfe_c1 * best.step * slope0_) {
      out = best;
      return true;
    }
    return false;
  }

  const Objective& f_;
  const OptimConfig& cfg_;
  std::span<const double> x0_;
  std::span<const double> dir_;
  double f0_;
  double slope0_;
  TrialPoint origin_;
  std::size_t evals_ = 0;
};

}  // namespace detail

/// Minimises `f` from `init`. The accepted loss sequence never increases.
/// Throws ErrorKind::Numeric if the objective yields non-finite values.
inline OptimResult minimize(const Objective& f, std::vector<double> init, const OptimConfig& cfg) {
  cfg.validate();
  const std::size_t dim = init.size();
  OptimResult res;
  res.params = std::move(init);
  std::vector<double> grad(dim);
  res.loss = f(res.params, grad);
  res.evaluations = 1;
  require(std::isfinite(res.loss) && detail::all_finite(grad), ErrorKind::Numeric,
          "objective is not finite at the initial point");
  res.loss_history.push_back(res.loss);
  res.grad_inf_norm = detail::inf_norm(grad);
  if (res.grad_inf_norm <= cfg.grad_tol) {
    res.termination = Termination::GradientTolerance;
    return res;
  }

  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::vector<double> dir(dim), alpha(cfg.memory_depth);

  auto steepest = [&] {
    for (std::size_t i = 0; i < dim; ++i) dir[i] = -grad[i];
  };

  res.termination = Termination::MaxIterations;
  while (res.iterations < cfg.max_iterations) {
    // Two-loop recursion for dir = -H g.
    bool fresh = s_hist.empty();
    if (fresh) {
      steepest();
    } else {
      std::vector<double> q(grad);
      for (std::size_t i = s_hist.size(); i-- > 0;) {
        alpha[i] = rho_hist[i] * detail::dot(s_hist[i], q);
        for (std::size_t d = 0; d < dim; ++d) q[d] -= alpha[i] * y_hist[i][d];
      }
      const auto& s = s_hist.back();
      const auto& y = y_hist.back();
      const double gamma = detail::dot(s, y) / detail::dot(y, y);
      for (std::size_t d = 0; d < dim; ++d) q[d] *= gamma;
      for (std::size_t i = 0; i < s_hist.size(); ++i) {
        const double beta = rho_hist[i] * detail::dot(y_hist[i], q);
        for (std::size_t d = 0; d < dim; ++d) q[d] += s_hist[i][d] * (alpha[i] - beta);
      }
      for (std::size_t d = 0; d < dim; ++d) dir[d] = -q[d];
      if (!(detail::dot(dir, grad) < 0.0)) {
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        fresh = true;
        steepest();
      }
    }

    detail::TrialPoint next;
    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      if (attempt == 1) {
        // Quasi-Newton direction failed; retry once along steepest descent.
        if (fresh) break;
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        fresh = true;
        steepest();
      }
      const double step0 = fresh ? std::min(1.0, 1.0 / std::max(1e-300, detail::l1_norm(grad))) : 1.0;
      detail::LineSearch ls(f, cfg, res.params, res.loss, grad, dir);
      accepted = ls.search(step0, next);
      res.evaluations += ls.evaluations();
    }
    if (!accepted) {
      res.termination = Termination::LineSearchFailure;
      break;
    }

    ++res.iterations;
    std::vector<double> s(dim), y(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      s[d] = next.x[d] - res.params[d];
      y[d] = next.grad[d] - grad[d];
    }
    const double sy = detail::dot(s, y);
    if (sy > 1e-10 * detail::dot(y, y)) {
      if (s_hist.size() == cfg.memory_depth) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }

    const double prev_loss = res.loss;
    res.params = std::move(next.x);
    grad = std::move(next.grad);
    res.loss = next.loss;
    res.loss_history.push_back(res.loss);
    res.grad_inf_norm = detail::inf_norm(grad);

    if (res.grad_inf_norm <= cfg.grad_tol) {
      res.termination = Termination::GradientTolerance;
      break;
    }
    if ((prev_loss - res.loss) / std::max(std::abs(prev_loss), 1e-300) <= cfg.loss_rel_tol) {
      res.termination = Termination::LossTolerance;
      break;
    }
  }
  return res;
}

}  // namespace fes
