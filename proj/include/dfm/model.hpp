#pragma once
// Deterministic utilities, multinomial logit probabilities, conditional
// log-likelihood, Gaussian log-prior, and analytic gradients for the dynamic
// and static factor models.
//
// Two equivalent parameter representations exist. Block form (FactorParams)
// is the external one. The flat form concatenates all coordinates into one
// vector laid out by ParamLayout; the optimizer and gradient kernels work on
// it so a single code path serves both model kinds.

#include <Eigen/Dense>
#include <vector>

#include "dfm/core.hpp"

namespace dfm {

enum class ModelKind { dynamic_factor, static_factor };

struct PriorSpec {
  double scale = 1.0;  // standard deviation shared by every latent coordinate
};

// Flat layout: [theta (I*K, row-major by consumer), gamma (P*K, row-major by
// product), lambda (P*K), rho (P*K, dynamic kind only)].
struct ParamLayout {
  int n_consumers = 0;
  int n_factors = 0;
  int n_products = 0;
  bool inertia = false;

  int theta_at(int consumer) const { return consumer * n_factors; }
  int gamma_at(int product) const {
    return (n_consumers + product) * n_factors;
  }
  int lambda_at(int product) const {
    return (n_consumers + n_products + product) * n_factors;
  }
  int rho_at(int product) const {
    return (n_consumers + 2 * n_products + product) * n_factors;
  }
  int size() const {
    return (n_consumers + (inertia ? 3 : 2) * n_products) * n_factors;
  }

  static ParamLayout make(const Dims& dims, ModelKind kind) {
    return {dims.n_consumers, dims.n_factors, dims.n_products_total(),
            kind == ModelKind::dynamic_factor};
  }
};

Eigen::VectorXd pack_params(const FactorParams& params, const ParamLayout& layout);
FactorParams unpack_params(const Eigen::VectorXd& z, const ParamLayout& layout);

// Single-alternative utility theta'gamma - theta'lambda * price
// + theta'rho * delta; pass rho_j = nullptr for the static model.
double utility(const Eigen::VectorXd& theta_i, const Eigen::VectorXd& gamma_j,
               const Eigen::VectorXd& lambda_j, const Eigen::VectorXd* rho_j,
               double price, int delta);

// Utilities for every product in one observation's category.
// category_offset is the global index of the category's first product.
Eigen::VectorXd observation_utilities(const Observation& obs, int category_offset,
                                      const FactorParams& params, ModelKind kind);

// Softmax with max-subtraction.
Eigen::VectorXd choice_probabilities(const Eigen::VectorXd& utilities);

double log_likelihood(const FactorParams& params, const Dataset& dataset, ModelKind kind);

double log_prior(const FactorParams& params, const PriorSpec& prior);

struct LogJointGrad {
  double value = 0.0;
  FactorParams grad;
};

// Exact gradient of log_likelihood + log_prior in block form.
LogJointGrad grad_log_joint(const FactorParams& params, const Dataset& dataset,
                            const PriorSpec& prior, ModelKind kind);

// --- Flat kernels (optimizer path) ----------------------------------------

// Log-likelihood of the observations listed in `subset` (all observations
// when subset is nullptr) at flat parameters z. When grad is non-null it must
// be zero-initialized to layout.size(); likelihood contributions are added
// into it. Per-observation terms are combined with pairwise summation so the
// result does not depend on how callers might chunk the work.
double log_lik_flat(const Dataset& dataset, const Eigen::VectorXd& z,
                    const ParamLayout& layout,
                    const std::vector<std::size_t>* subset = nullptr,
                    Eigen::VectorXd* grad = nullptr);

// Gaussian log-density sum over z; adds -z/scale^2 into grad when given.
double log_prior_flat(const Eigen::VectorXd& z, const PriorSpec& prior,
                      Eigen::VectorXd* grad = nullptr);

}  // namespace dfm
