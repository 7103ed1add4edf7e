#include "lcgp/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace lcgp {

namespace {

struct Probe {
  double step = 0.0;
  double f = 0.0;
  double slope = 0.0;  // directional derivative
  VectorXd x;
  VectorXd g;
  bool finite() const { return std::isfinite(f) && std::isfinite(slope); }
};

class LineSearch {
 public:
  LineSearch(const Objective& f, const VectorXd& x, const VectorXd& d,
             double f0, double slope0, const LbfgsOptions& opts, int& evals)
      : f_(f), x_(x), d_(d), f0_(f0), slope0_(slope0), opts_(opts),
        evals_(evals) {}

  // Returns true and fills `out` when a strong-Wolfe step is found.
  bool run(double step0, Probe& out) {
    Probe prev{0.0, f0_, slope0_, x_, {}};
    double step = step0;
    for (int it = 0; budget_left(); ++it) {
      Probe cur = eval(step);
      if (!cur.finite()) {
        step = 0.5 * (prev.step + step);
        continue;
      }
      if (cur.f > f0_ + opts_.c1 * step * slope0_ ||
          (it > 0 && cur.f >= prev.f)) {
        return zoom(prev, cur, out);
      }
      if (std::abs(cur.slope) <= -opts_.c2 * slope0_) {
        out = std::move(cur);
        return true;
      }
      if (cur.slope >= 0.0) return zoom(cur, prev, out);
      prev = std::move(cur);
      step *= 2.0;
    }
    return false;
  }

  const Probe* best() const { return best_.x.size() ? &best_ : nullptr; }

 private:
  bool budget_left() const { return used_ < opts_.max_line_search; }

  Probe eval(double step) {
    ++used_;
    ++evals_;
    Probe p;
    p.step = step;
    p.x = x_ + step * d_;
    p.g.resize(p.x.size());
    p.f = f_(p.x, p.g);
    p.slope = std::isfinite(p.f) ? p.g.dot(d_)
                                 : std::numeric_limits<double>::quiet_NaN();
    if (p.finite() && p.f < best_f_) {
      best_f_ = p.f;
      best_ = p;
    }
    return p;
  }

  bool zoom(Probe lo, Probe hi, Probe& out) {
    while (budget_left()) {
      const double width = hi.step - lo.step;
      double step = lo.step + 0.5 * width;
      const double denom = 2.0 * (hi.f - lo.f - lo.slope * width);
      if (std::isfinite(hi.f) && denom > 0.0) {
        const double quad = lo.step - lo.slope * width * width / denom;
        const double a = std::min(lo.step, hi.step);
        const double b = std::max(lo.step, hi.step);
        const double margin = 0.1 * (b - a);
        if (quad > a + margin && quad < b - margin) step = quad;
      }
      Probe cur = eval(step);
      if (!cur.finite()) {
        hi = std::move(cur);
        hi.f = std::numeric_limits<double>::infinity();
        continue;
      }
      if (cur.f > f0_ + opts_.c1 * step * slope0_ || cur.f >= lo.f) {
        hi = std::move(cur);
      } else {
        if (std::abs(cur.slope) <= -opts_.c2 * slope0_) {
          out = std::move(cur);
          return true;
        }
        if (cur.slope * (hi.step - lo.step) >= 0.0) hi = lo;
        lo = std::move(cur);
      }
      if (std::abs(hi.step - lo.step) < 1e-16 * std::max(1.0, lo.step)) break;
    }
    return false;
  }

  const Objective& f_;
  const VectorXd& x_;
  const VectorXd& d_;
  double f0_;
  double slope0_;
  const LbfgsOptions& opts_;
  int& evals_;
  int used_ = 0;
  double best_f_ = std::numeric_limits<double>::infinity();
  Probe best_;
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& f, const VectorXd& x0,
                           const LbfgsOptions& opts) {
  LbfgsResult res;
  res.x = x0;
  VectorXd g(x0.size());
  res.f = f(res.x, g);
  res.evaluations = 1;
  if (!std::isfinite(res.f) || !g.allFinite()) {
    res.line_search_failed = true;
    return res;
  }

  std::deque<VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (res.iterations = 0; res.iterations < opts.max_iters;) {
    if (g.norm() <= opts.grad_tol) {
      res.converged = true;
      break;
    }
    // Two-loop recursion.
    VectorXd d = -g;
    const std::size_t m = s_hist.size();
    std::vector<double> alpha(m);
    for (std::size_t k = m; k-- > 0;) {
      alpha[k] = rho_hist[k] * s_hist[k].dot(d);
      d -= alpha[k] * y_hist[k];
    }
    if (m > 0) {
      d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    }
    for (std::size_t k = 0; k < m; ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(d);
      d += (alpha[k] - beta) * s_hist[k];
    }
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -g;
      slope = -g.squaredNorm();
    }
    const double step0 = m == 0 ? std::min(1.0, 1.0 / d.norm()) : 1.0;

    LineSearch ls(f, res.x, d, res.f, slope, opts, res.evaluations);
    Probe next;
    if (!ls.run(step0, next)) {
      const Probe* best = ls.best();
      if (best && best->f < res.f) {
        res.x = best->x;
        res.f = best->f;
      }
      res.line_search_failed = true;
      ++res.iterations;
      break;
    }
    ++res.iterations;

    VectorXd s = next.x - res.x;
    VectorXd y = next.g - g;
    const double sy = s.dot(y);
    const double f_prev = res.f;
    res.x = std::move(next.x);
    res.f = next.f;
    g = std::move(next.g);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opts.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (std::abs(f_prev - res.f) <=
        opts.f_rel_tol * std::max(1.0, std::abs(res.f))) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace lcgp
