#pragma once
// Mixed logit benchmark: product fixed effects with normally distributed
// random price and inertia coefficients, estimated one category at a time by
// maximum simulated likelihood over quasi-random (Halton) draws.

#include <Eigen/Dense>
#include <vector>

#include "dfm/core.hpp"

namespace dfm {

enum class MixingDistribution { normal };

struct MixedLogitSpec {
  int n_sim_draws = 200;  // R: coefficient draws per consumer
  MixingDistribution coefficient_distribution = MixingDistribution::normal;
  double tol = 1e-6;       // gradient tolerance, relative to max(1, |loglik|)
  int max_iterations = 200;
  int halton_burn_in = 50;
  double ridge = 1e-4;     // penalty keeping never-chosen product effects finite
};

// Standard-normal quasi-random draws, one (price, inertia) pair per consumer
// and simulation draw. Deterministic: Halton sequences in bases 2 and 3
// mapped through the inverse normal CDF.
struct CoefficientDraws {
  Eigen::MatrixXd eta_eps;  // n_consumers x R
  Eigen::MatrixXd xi_eps;   // n_consumers x R
};

CoefficientDraws halton_normal_draws(int n_consumers, int n_draws, int burn_in = 50);

struct MixedLogitFit {
  int category = 0;
  Eigen::VectorXd alpha;  // product fixed effects, alpha[0] normalized to 0
  double eta_mean = 0.0;  // price coefficient distribution
  double eta_sd = 0.0;
  double xi_mean = 0.0;   // inertia coefficient distribution
  double xi_sd = 0.0;
  double loglik = 0.0;
  bool converged = false;
  double final_grad_norm = 0.0;
  // Products never chosen in the data; their alpha is identified only through
  // the ridge penalty.
  std::vector<int> penalized_products;
};

// Keeps only one category's observations (dims unchanged, consumer indices
// global).
Dataset category_subset(const Dataset& dataset, int category);

// Panel-product simulated log-likelihood: sum over consumers of
// log( (1/R) sum_r prod_t P_it(eta_ir, xi_ir) ), evaluated in log space.
// Draws are fixed data, so repeated evaluations see common random numbers.
double simulated_loglik(const MixedLogitFit& params, const Dataset& dataset_c,
                        const CoefficientDraws& draws);

// Maximum simulated likelihood via L-BFGS on (alpha_2..alpha_J, eta_mean,
// log eta_sd, xi_mean, log xi_sd), with analytic gradients.
MixedLogitFit fit_mixed_logit(const Dataset& dataset_c, const MixedLogitSpec& spec);

// Simulated-average choice probabilities for one observation.
Eigen::VectorXd predict_mixed_logit(const MixedLogitFit& fit, const Observation& obs,
                                    const CoefficientDraws& draws);

}  // namespace dfm
