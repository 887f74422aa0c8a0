#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "increg/error.hpp"

namespace increg {

/// A twice-differentiable scalar loss L(ω) on [lo, hi].
struct Objective1D {
  std::string name;
  std::function<double(double)> f;
  std::function<double(double)> df;
  std::function<double(double)> d2f;
  double lo = -10.0;
  double hi = 10.0;
  std::vector<double> starts;  // initial points, one per branch of interest
};

struct LocalMinResult {
  double lambda = 0.0;
  double omega_star = 0.0;
  double value = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

/// The regularized objective has no local minimum reachable inside the domain.
class NoMinimum : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// L(ω) = (ω - 1)²; the minimizer of L + λω²/2 is 2 / (2 + λ).
inline Objective1D quadratic_objective() {
  return {"quadratic",
          [](double w) { return (w - 1) * (w - 1); },
          [](double w) { return 2 * (w - 1); },
          [](double) { return 2.0; },
          -10.0, 10.0, {1.0}};
}

/// L(ω) = (ω² - 1)², minima at ±1.
inline Objective1D quartic_objective() {
  return {"quartic",
          [](double w) { return (w * w - 1) * (w * w - 1); },
          [](double w) { return 4 * w * (w * w - 1); },
          [](double w) { return 12 * w * w - 4; },
          -10.0, 10.0, {1.0, -1.0}};
}

/// L(ω) = (ω - 1)² + a·cos(kω): several local minima near ω = 1.
inline Objective1D rippled_objective(double a = 0.1, double k = 8.0) {
  return {"rippled",
          [a, k](double w) { return (w - 1) * (w - 1) + a * std::cos(k * w); },
          [a, k](double w) { return 2 * (w - 1) - a * k * std::sin(k * w); },
          [a, k](double w) { return 2 - a * k * k * std::cos(k * w); },
          -10.0, 10.0, {1.0, 0.4, 1.8}};
}

inline std::vector<Objective1D> objective_library() {
  return {quadratic_objective(), quartic_objective(), rippled_objective()};
}

namespace detail {

struct Regularized {
  const Objective1D& obj;
  double lambda;
  double y(double w) const { return obj.f(w) + 0.5 * lambda * w * w; }
  double dy(double w) const { return obj.df(w) + lambda * w; }
  double d2y(double w) const { return obj.d2f(w) + lambda; }
};

}  // namespace detail

/// Local minimum of Y(ω) = L(ω) + λω²/2 reached from ω_init: damped Newton while
/// the curvature is positive, otherwise a bracketing walk downhill followed by
/// bisection on Y'. Converged means |Y'(ω*)| < tol and Y''(ω*) > 0.
inline LocalMinResult minimize(const Objective1D& obj, double lambda, double omega_init,
                               double tol = 1e-10, std::size_t max_iter = 500) {
  if (!(lambda > 0.0)) throw InvalidArgument("minimize: lambda must be positive");
  if (!(omega_init >= obj.lo && omega_init <= obj.hi))
    throw InvalidArgument("minimize: start point outside the domain of " + obj.name);
  const detail::Regularized Y{obj, lambda};
  double w = omega_init;
  LocalMinResult r{lambda, w, Y.y(w), false, 0};
  auto leave = [&]() {
    throw NoMinimum("minimize: no local minimum of " + obj.name + " + λω²/2 inside [" +
                    std::to_string(obj.lo) + ", " + std::to_string(obj.hi) + "] for λ = " +
                    std::to_string(lambda));
  };

  for (std::size_t it = 0; it < max_iter; ++it) {
    r.iterations = it;
    const double g = Y.dy(w);
    const double h = Y.d2y(w);
    if (std::fabs(g) < tol && h > 0.0) {
      r.omega_star = w;
      r.value = Y.y(w);
      r.converged = true;
      return r;
    }
    if (h > 0.0) {
      const double step = -g / h;
      double t = 1.0;
      bool accepted = false;
      const double y0 = Y.y(w);
      for (int k = 0; k < 60; ++k, t *= 0.5) {
        const double cand = w + t * step;
        if (cand < obj.lo || cand > obj.hi) continue;
        // Near the minimum Y is flat to rounding; fall back to the gradient test.
        if (Y.y(cand) <= y0 + 1e-4 * t * step * g ||
            std::fabs(Y.dy(cand)) < std::fabs(g)) {
          w = cand;
          accepted = true;
          break;
        }
      }
      if (accepted) continue;
    }
    // Bracket a sign change of Y' in the downhill direction, then bisect.
    const double dir = g > 0.0 ? -1.0 : 1.0;
    double a = w, span = std::max(1e-6, std::min(1.0, std::fabs(g)));
    double b = w + dir * span;
    while (dir * Y.dy(b) < 0.0) {
      if (b <= obj.lo || b >= obj.hi) leave();
      a = b;
      span *= 2.0;
      b = std::clamp(w + dir * span, obj.lo, obj.hi);
    }
    for (int k = 0; k < 200 && std::fabs(b - a) > 0.0; ++k) {
      const double m = 0.5 * (a + b);
      if (m == a || m == b) break;
      if (dir * Y.dy(m) < 0.0) a = m; else b = m;
      if (std::fabs(Y.dy(m)) < tol) { a = b = m; break; }
    }
    w = std::fabs(Y.dy(a)) < std::fabs(Y.dy(b)) ? a : b;
  }
  r.omega_star = w;
  r.value = Y.y(w);
  r.converged = std::fabs(Y.dy(w)) < tol && Y.d2y(w) > 0.0;
  return r;
}

/// λ on the stationarity curve L'(ω) + λω = 0.
inline double stationary_lambda(const Objective1D& obj, double omega) {
  if (omega == 0.0) throw InvalidArgument("stationary_lambda: ω = 0 is singular");
  return -obj.df(omega) / omega;
}

/// dλ/dω along the stationarity curve at a stationary pair (λ₀, ω₀):
/// -(L''(ω₀) + λ₀) / ω₀, equal to (L'(ω₀) - ω₀L''(ω₀)) / ω₀² there.
inline double dlambda_domega(const Objective1D& obj, double lambda0, double omega0) {
  if (omega0 == 0.0) throw InvalidArgument("dlambda_domega: ω₀ = 0 is singular");
  const double residual = obj.df(omega0) + lambda0 * omega0;
  const double scale = std::max({1.0, std::fabs(obj.df(omega0)), std::fabs(lambda0 * omega0)});
  if (std::fabs(residual) > 1e-8 * scale)
    throw ContractViolation("dlambda_domega: (λ₀, ω₀) is not stationary (residual " +
                            std::to_string(residual) + ")");
  return -(obj.d2f(omega0) + lambda0) / omega0;
}

struct ContinuationRow {
  std::string objective;
  double start = 0.0;
  double lambda0 = 0.0;
  double omega0 = 0.0;
  double lambda1 = 0.0;
  double omega1 = 0.0;
  bool shrank = false;      // |ω₁| < |ω₀|
  bool basin_jump = false;  // |ω₁ - ω₀| > 10·δλ·|dω/dλ|
  bool passed = false;      // shrank, or flagged as a basin jump
};

/// Re-minimizes from ω₀ after raising λ₀ by `delta`.
inline ContinuationRow continue_minimum(const Objective1D& obj, double lambda0, double omega0,
                                        double delta) {
  ContinuationRow row{obj.name, omega0, lambda0, omega0, lambda0 + delta, omega0};
  const auto m = minimize(obj, lambda0 + delta, omega0);
  if (!m.converged) throw NoMinimum("continuation of " + obj.name + " did not converge");
  row.omega1 = m.omega_star;
  const double slope = 1.0 / dlambda_domega(obj, lambda0, omega0);  // dω/dλ
  row.basin_jump = std::fabs(row.omega1 - omega0) > 10.0 * delta * std::fabs(slope);
  row.shrank = std::fabs(row.omega1) < std::fabs(omega0);
  row.passed = row.shrank || row.basin_jump;
  return row;
}

struct SuiteResult {
  std::vector<ContinuationRow> rows;
  std::size_t skipped = 0;  // (λ₀, ω₀) pairs violating the theorem's hypotheses (ω₀ = 0)

  std::size_t failures() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.passed ? 0 : 1;
    return n;
  }
  std::size_t basin_jumps() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.basin_jump ? 1 : 0;
    return n;
  }
  bool all_passed() const { return failures() == 0 && !rows.empty(); }
};

/// For every objective, start point, λ₀ and δλ: finds ω₀ = argmin from the start,
/// then checks |ω₁| < |ω₀| at λ₀ + δλ. A non-positive δλ entry stands for the
/// default step 1e-3·λ₀.
inline SuiteResult shrinkage_suite(const std::vector<Objective1D>& objectives,
                                  const std::vector<double>& lambdas,
                                  const std::vector<double>& deltas) {
  SuiteResult s;
  for (const auto& obj : objectives) {
    for (double start : obj.starts) {
      for (double l0 : lambdas) {
        const auto m0 = minimize(obj, l0, start);
        if (!m0.converged) throw NoMinimum("shrinkage_suite: " + obj.name + " did not converge");
        if (std::fabs(m0.omega_star) < 1e-12) {
          ++s.skipped;
          continue;
        }
        for (double d : deltas) {
          const double delta = d > 0.0 ? d : 1e-3 * l0;
          auto row = continue_minimum(obj, l0, m0.omega_star, delta);
          row.start = start;
          s.rows.push_back(row);
        }
      }
    }
  }
  return s;
}

inline void write_suite_csv(std::ostream& os, const SuiteResult& s) {
  os.precision(17);
  os << "objective,start,lambda0,omega0,lambda1,omega1,shrank,basin_jump,passed\n";
  for (const auto& r : s.rows)
    os << r.objective << ',' << r.start << ',' << r.lambda0 << ',' << r.omega0 << ','
       << r.lambda1 << ',' << r.omega1 << ',' << r.shrank << ',' << r.basin_jump << ','
       << r.passed << '\n';
}

}  // namespace increg
