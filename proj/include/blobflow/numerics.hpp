#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace blobflow {

// Thrown when an iterative solver fails to reach its tolerance.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace numerics {

inline constexpr int kMaxIterations = 200;
inline constexpr double kRootTolerance = 1e-12;

// Safeguarded Newton iteration for an increasing function g on [lo, hi] with
// g(lo) <= 0 <= g(hi). `eval` returns {g(x), g'(x)}. Falls back to bisection
// whenever the Newton step leaves the bracket. Iterates to a few ulps; `tol`
// is the relative accuracy that must be reached before max_iter.
template <class Eval>
double safeguarded_newton(Eval&& eval, double lo, double hi, double x0,
                          double tol = kRootTolerance, int max_iter = kMaxIterations) {
  constexpr double kTight = 4.0 * std::numeric_limits<double>::epsilon();
  double x = std::clamp(x0, lo, hi);
  double last_step = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    const auto [g, dg] = eval(x);
    if (g == 0.0) return x;
    if (g < 0.0) lo = x; else hi = x;
    const double scale = std::max(1.0, std::abs(x));
    if (hi - lo <= kTight * scale) return 0.5 * (lo + hi);
    const bool usable = dg > 0.0 && std::isfinite(dg);
    if (usable && std::abs(g / dg) <= kTight * scale) return x - g / dg;
    double next = usable ? x - g / dg : lo;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - x);
    if (step <= kTight * scale || next == x) return next;
    // rounding-limited: the step stopped shrinking after reaching tolerance
    if (step <= tol * scale && step >= 0.5 * last_step) return next;
    last_step = step;
    x = next;
  }
  if (hi - lo <= tol * std::max(1.0, std::abs(x))) return x;
  throw SolverError("safeguarded Newton did not converge within " +
                    std::to_string(max_iter) + " iterations");
}

// Bisection for the crossing point of a nondecreasing predicate-like function:
// returns x in [lo, hi] with g(lo) < target <= g(hi) narrowed to tolerance.
template <class G>
double bisect_increasing(G&& g, double target, double lo, double hi,
                         double rel_tol = 1e-14, int max_iter = kMaxIterations) {
  for (int it = 0; it < max_iter; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (hi - lo <= rel_tol * std::max(1.0, std::abs(mid)) || mid == lo || mid == hi)
      return mid;
    if (g(mid) < target) lo = mid; else hi = mid;
  }
  throw SolverError("bisection did not converge within " + std::to_string(max_iter) +
                    " iterations");
}

namespace detail {
template <class F>
double simpson_step(F& f, double a, double b, double fa, double fm, double fb,
                    double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}
}  // namespace detail

// Adaptive Simpson quadrature. The tolerance is relative to a coarse estimate
// of ∫|f|, so integrands with cancelling sign do not force full refinement.
template <class F>
double adaptive_simpson(F&& f, double a, double b, double rel_tol = 1e-10, int max_depth = 30) {
  if (a == b) return 0.0;
  // seed on a few panels so narrow features are not missed
  constexpr int kPanels = 16;
  const double h = (b - a) / kPanels;
  double coarse_abs = 0.0;
  double values[2 * kPanels + 1];
  for (int i = 0; i <= 2 * kPanels; ++i) values[i] = f(a + 0.5 * h * i);
  for (int i = 0; i < kPanels; ++i)
    coarse_abs += std::abs(h) / 6.0 *
                  (std::abs(values[2 * i]) + 4.0 * std::abs(values[2 * i + 1]) +
                   std::abs(values[2 * i + 2]));
  const double tol = rel_tol * std::max(coarse_abs, 1e-300) / kPanels;
  double total = 0.0;
  for (int i = 0; i < kPanels; ++i) {
    const double lo = a + h * i, hi = lo + h;
    const double whole = h / 6.0 * (values[2 * i] + 4.0 * values[2 * i + 1] + values[2 * i + 2]);
    total += detail::simpson_step(f, lo, hi, values[2 * i], values[2 * i + 1], values[2 * i + 2],
                                  whole, tol, max_depth);
  }
  return total;
}

inline constexpr double kGL8Nodes[4] = {0.1834346424956498, 0.5255324099163290, 0.7966664774136267,
                                        0.9602898564975363};
inline constexpr double kGL8Weights[4] = {0.3626837833783620, 0.3137066458778873, 0.2223810344533745,
                                          0.1012285362903763};

// 8-point Gauss-Legendre rule on [a, b].
template <class F>
double gauss_legendre8(F&& f, double a, double b) {
  const double c = 0.5 * (a + b), r = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < 4; ++i) s += kGL8Weights[i] * (f(c - r * kGL8Nodes[i]) + f(c + r * kGL8Nodes[i]));
  return s * r;
}

// Appends the nodes and weights of the 8-point rule on [a, b].
inline void append_gauss_legendre8(double a, double b, std::vector<double>& x, std::vector<double>& w) {
  const double c = 0.5 * (a + b), r = 0.5 * (b - a);
  for (int i = 0; i < 4; ++i) {
    x.push_back(c - r * kGL8Nodes[i]);
    w.push_back(r * kGL8Weights[i]);
    x.push_back(c + r * kGL8Nodes[i]);
    w.push_back(r * kGL8Weights[i]);
  }
}

}  // namespace numerics
}  // namespace blobflow
