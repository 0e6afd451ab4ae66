#pragma once
// Limited-memory BFGS minimizer with Armijo backtracking line search.
// Small-dimension workhorse for maximum simulated likelihood fits.

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>

namespace dfm {

// Returns the objective value and writes the gradient.
using ObjectiveFn =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 200;
  // Converged when the gradient max-norm falls below tol * max(1, |f|).
  double tol = 1e-6;
  double armijo_c1 = 1e-4;
  double backtrack = 0.5;
  int max_line_search = 40;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
};

inline LbfgsResult lbfgs_minimize(const ObjectiveFn& objective, Eigen::VectorXd x0,
                                  const LbfgsOptions& opts = {}) {
  const Eigen::Index n = x0.size();
  LbfgsResult result;
  result.x = std::move(x0);
  result.grad.resize(n);
  result.value = objective(result.x, result.grad);

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  Eigen::VectorXd q(n), direction(n), x_new(n), grad_new(n);

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    result.iterations = iter;
    if (result.grad.lpNorm<Eigen::Infinity>() <=
        opts.tol * std::max(1.0, std::abs(result.value))) {
      result.converged = true;
      return result;
    }

    // Two-loop recursion for the quasi-Newton direction.
    q = result.grad;
    std::vector<double> alpha(s_hist.size());
    for (int h = static_cast<int>(s_hist.size()) - 1; h >= 0; --h) {
      alpha[h] = rho_hist[h] * s_hist[h].dot(q);
      q -= alpha[h] * y_hist[h];
    }
    if (!s_hist.empty()) {
      const auto& s = s_hist.back();
      const auto& y = y_hist.back();
      q *= s.dot(y) / y.squaredNorm();
    }
    for (std::size_t h = 0; h < s_hist.size(); ++h) {
      const double beta = rho_hist[h] * y_hist[h].dot(q);
      q += (alpha[h] - beta) * s_hist[h];
    }
    direction = -q;

    double slope = result.grad.dot(direction);
    if (!(slope < 0.0)) {  // fall back to steepest descent
      direction = -result.grad;
      slope = -result.grad.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    double step = 1.0;
    bool improved = false;
    double value_new = result.value;
    for (int ls = 0; ls < opts.max_line_search; ++ls) {
      x_new = result.x + step * direction;
      value_new = objective(x_new, grad_new);
      if (std::isfinite(value_new) &&
          value_new <= result.value + opts.armijo_c1 * step * slope) {
        improved = true;
        break;
      }
      step *= opts.backtrack;
    }
    if (!improved) return result;  // line search exhausted; not converged

    const Eigen::VectorXd s = x_new - result.x;
    const Eigen::VectorXd y = grad_new - result.grad;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opts.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    result.x = x_new;
    result.value = value_new;
    result.grad = grad_new;
  }
  result.iterations = opts.max_iterations;
  return result;
}

}  // namespace dfm
