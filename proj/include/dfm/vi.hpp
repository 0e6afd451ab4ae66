#pragma once
// Mean-field Gaussian variational inference: diagonal-Gaussian variational
// state, Monte Carlo ELBO and reparameterized gradients, Adam-style ascent
// with convergence monitoring, and posterior sampling.
//
// The engine optimizes a generic log-joint callback over a flat coordinate
// vector; the dataset-specific fit wires the factor-model likelihood and
// prior into that callback. The Gaussian entropy term is handled in closed
// form, so the callback only supplies log p(data, z).

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/model.hpp"
#include "dfm/rng.hpp"

namespace dfm {

struct VariationalState {
  ParamLayout layout;       // maps (block, unit, factor) to coordinates
  Eigen::VectorXd mu;
  Eigen::VectorXd log_sigma;

  int size() const { return static_cast<int>(mu.size()); }
};

struct FitConfig {
  ModelKind kind = ModelKind::dynamic_factor;
  PriorSpec prior;
  int n_factors = 5;
  int mc_samples = 8;
  double learning_rate = 0.05;
  int max_iterations = 20000;
  double convergence_tol = 1e-4;
  int convergence_window = 100;
  // Observations per stochastic-gradient step; 0 fits the full batch. The
  // subsampled likelihood is rescaled by N/batch so the estimator stays
  // unbiased.
  int minibatch = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FitResult {
  VariationalState state;
  std::vector<double> elbo_trace;  // one Monte Carlo ELBO estimate per iteration
  int iterations_run = 0;
  bool converged = false;
  double wall_time_seconds = 0.0;
};

// Raised when the ELBO or its gradient turns non-finite during optimization.
struct NumericalError : std::runtime_error {
  int iteration = 0;
  int coordinate = -1;  // offending coordinate, -1 when the scalar ELBO broke

  NumericalError(const std::string& what, int iteration_, int coordinate_)
      : std::runtime_error(what), iteration(iteration_), coordinate(coordinate_) {}
};

// mu ~ N(0, 0.1^2) i.i.d., log_sigma = -2 everywhere.
VariationalState init_variational(const Dims& dims, ModelKind kind, const Rng& rng);

// mu + exp(log_sigma) .* eps, reassembled into named blocks.
ParamDraw sample_reparam(const VariationalState& state, const Eigen::VectorXd& eps);

double elbo_estimate(const VariationalState& state, const Dataset& dataset,
                     const FitConfig& config, const Rng& rng);

struct ElboGradient {
  double elbo = 0.0;
  Eigen::VectorXd mu;
  Eigen::VectorXd log_sigma;
};

ElboGradient elbo_gradient(const VariationalState& state, const Dataset& dataset,
                           const FitConfig& config, const Rng& rng);

FitResult fit(const Dataset& dataset, const FitConfig& config);

// S independent reparameterized draws from q; draw s uses its own rng
// substream so the list is order-independent.
std::vector<ParamDraw> posterior_draws(const VariationalState& state, int S, const Rng& rng);

// --- Generic engine --------------------------------------------------------

// Log joint callback: returns log p(data, z) and ADDS its gradient into grad
// (pre-zeroed, same length as z). The iteration index lets stochastic
// callbacks (minibatching) derive per-step randomness.
using LogJointFn = std::function<double(const Eigen::VectorXd& z, Eigen::VectorXd& grad,
                                        int iteration)>;

// Optimizes the ELBO of `log_joint` over a diagonal Gaussian starting from
// `init`; the rng seeds the per-iteration Monte Carlo noise.
FitResult fit_generic(const LogJointFn& log_joint, VariationalState init,
                      const FitConfig& config, const Rng& rng);

// Closed-form entropy of the diagonal Gaussian, sum of log_sigma + log(2*pi*e)/2.
double gaussian_entropy(const Eigen::VectorXd& log_sigma);

}  // namespace dfm
