#include "dfm/model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "dfm/numeric.hpp"

namespace dfm {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Eigen::VectorXd pack_params(const FactorParams& params, const ParamLayout& layout) {
  const int K = layout.n_factors;
  require(params.theta.rows() == layout.n_consumers && params.theta.cols() == K,
          "pack_params: theta shape mismatch");
  require(params.gamma.rows() == K && params.gamma.cols() == layout.n_products,
          "pack_params: gamma shape mismatch");
  require(params.lambda.rows() == K && params.lambda.cols() == layout.n_products,
          "pack_params: lambda shape mismatch");
  if (layout.inertia)
    require(params.rho.rows() == K && params.rho.cols() == layout.n_products,
            "pack_params: rho shape mismatch");

  Eigen::VectorXd z(layout.size());
  for (int i = 0; i < layout.n_consumers; ++i)
    z.segment(layout.theta_at(i), K) = params.theta.row(i).transpose();
  for (int j = 0; j < layout.n_products; ++j) {
    z.segment(layout.gamma_at(j), K) = params.gamma.col(j);
    z.segment(layout.lambda_at(j), K) = params.lambda.col(j);
    if (layout.inertia) z.segment(layout.rho_at(j), K) = params.rho.col(j);
  }
  return z;
}

FactorParams unpack_params(const Eigen::VectorXd& z, const ParamLayout& layout) {
  require(z.size() == layout.size(), "unpack_params: size mismatch");
  const int K = layout.n_factors;
  FactorParams params;
  params.theta.resize(layout.n_consumers, K);
  params.gamma.resize(K, layout.n_products);
  params.lambda.resize(K, layout.n_products);
  params.rho.resize(K, layout.inertia ? layout.n_products : 0);
  for (int i = 0; i < layout.n_consumers; ++i)
    params.theta.row(i) = z.segment(layout.theta_at(i), K).transpose();
  for (int j = 0; j < layout.n_products; ++j) {
    params.gamma.col(j) = z.segment(layout.gamma_at(j), K);
    params.lambda.col(j) = z.segment(layout.lambda_at(j), K);
    if (layout.inertia) params.rho.col(j) = z.segment(layout.rho_at(j), K);
  }
  return params;
}

double utility(const Eigen::VectorXd& theta_i, const Eigen::VectorXd& gamma_j,
               const Eigen::VectorXd& lambda_j, const Eigen::VectorXd* rho_j,
               double price, int delta) {
  require(gamma_j.size() == theta_i.size() && lambda_j.size() == theta_i.size(),
          "utility: loading length mismatch");
  double u = theta_i.dot(gamma_j) - theta_i.dot(lambda_j) * price;
  if (rho_j != nullptr) {
    require(rho_j->size() == theta_i.size(), "utility: rho length mismatch");
    if (delta != 0) u += theta_i.dot(*rho_j);
  }
  return u;
}

Eigen::VectorXd observation_utilities(const Observation& obs, int category_offset,
                                      const FactorParams& params, ModelKind kind) {
  const int n_products = static_cast<int>(obs.prices.size());
  const bool use_rho = kind == ModelKind::dynamic_factor && params.has_inertia();
  const Eigen::VectorXd theta_i = params.theta.row(obs.consumer).transpose();
  Eigen::VectorXd u(n_products);
  for (int j = 0; j < n_products; ++j) {
    const int jj = category_offset + j;
    u[j] = theta_i.dot(params.gamma.col(jj)) -
           theta_i.dot(params.lambda.col(jj)) * obs.prices[j];
    if (use_rho && obs.lag == j) u[j] += theta_i.dot(params.rho.col(jj));
  }
  return u;
}

Eigen::VectorXd choice_probabilities(const Eigen::VectorXd& utilities) {
  const double m = utilities.maxCoeff();
  Eigen::VectorXd p = (utilities.array() - m).exp();
  p /= p.sum();
  return p;
}

double log_likelihood(const FactorParams& params, const Dataset& dataset, ModelKind kind) {
  const std::vector<int> offsets = dataset.dims.product_offsets();
  std::vector<double> terms(dataset.observations.size());
  for (std::size_t n = 0; n < dataset.observations.size(); ++n) {
    const Observation& obs = dataset.observations[n];
    const Eigen::VectorXd u =
        observation_utilities(obs, offsets[obs.category], params, kind);
    terms[n] = u[obs.chosen] - log_sum_exp(u);
  }
  return pairwise_sum(terms);
}

namespace {

double gaussian_log_density_sum(const auto& block, double scale) {
  const double log_norm = std::log(scale) + 0.5 * std::log(2.0 * std::numbers::pi);
  return -0.5 * block.squaredNorm() / (scale * scale) -
         static_cast<double>(block.size()) * log_norm;
}

}  // namespace

double log_prior(const FactorParams& params, const PriorSpec& prior) {
  require(prior.scale > 0.0, "log_prior: scale must be positive");
  return gaussian_log_density_sum(params.theta, prior.scale) +
         gaussian_log_density_sum(params.gamma, prior.scale) +
         gaussian_log_density_sum(params.lambda, prior.scale) +
         gaussian_log_density_sum(params.rho, prior.scale);
}

double log_prior_flat(const Eigen::VectorXd& z, const PriorSpec& prior,
                      Eigen::VectorXd* grad) {
  require(prior.scale > 0.0, "log_prior_flat: scale must be positive");
  if (grad != nullptr) grad->noalias() += -z / (prior.scale * prior.scale);
  return gaussian_log_density_sum(z, prior.scale);
}

double log_lik_flat(const Dataset& dataset, const Eigen::VectorXd& z,
                    const ParamLayout& layout, const std::vector<std::size_t>* subset,
                    Eigen::VectorXd* grad) {
  require(z.size() == layout.size(), "log_lik_flat: parameter size mismatch");
  if (grad != nullptr)
    require(grad->size() == layout.size(), "log_lik_flat: gradient size mismatch");

  const int K = layout.n_factors;
  const std::vector<int> offsets = dataset.dims.product_offsets();
  const std::size_t n_terms =
      subset != nullptr ? subset->size() : dataset.observations.size();
  std::vector<double> terms(n_terms);

  Eigen::VectorXd u(dataset.dims.max_products());
  Eigen::VectorXd p(dataset.dims.max_products());

  for (std::size_t t = 0; t < n_terms; ++t) {
    const std::size_t n = subset != nullptr ? (*subset)[t] : t;
    const Observation& obs = dataset.observations[n];
    const int J = static_cast<int>(obs.prices.size());
    const int off = offsets[obs.category];
    const auto theta_i = z.segment(layout.theta_at(obs.consumer), K);

    for (int j = 0; j < J; ++j) {
      const int jj = off + j;
      double uj = theta_i.dot(z.segment(layout.gamma_at(jj), K)) -
                  theta_i.dot(z.segment(layout.lambda_at(jj), K)) * obs.prices[j];
      if (layout.inertia && obs.lag == j)
        uj += theta_i.dot(z.segment(layout.rho_at(jj), K));
      u[j] = uj;
    }

    const double m = u.head(J).maxCoeff();
    p.head(J) = (u.head(J).array() - m).exp();
    const double denom = p.head(J).sum();
    terms[t] = u[obs.chosen] - m - std::log(denom);

    if (grad == nullptr) continue;
    p.head(J) /= denom;
    auto g_theta = grad->segment(layout.theta_at(obs.consumer), K);
    for (int j = 0; j < J; ++j) {
      const int jj = off + j;
      const double r = (j == obs.chosen ? 1.0 : 0.0) - p[j];
      grad->segment(layout.gamma_at(jj), K) += r * theta_i;
      grad->segment(layout.lambda_at(jj), K) -= r * obs.prices[j] * theta_i;
      g_theta += r * (z.segment(layout.gamma_at(jj), K) -
                      obs.prices[j] * z.segment(layout.lambda_at(jj), K));
      if (layout.inertia && obs.lag == j) {
        grad->segment(layout.rho_at(jj), K) += r * theta_i;
        g_theta += r * z.segment(layout.rho_at(jj), K);
      }
    }
  }

  return pairwise_sum(terms);
}

LogJointGrad grad_log_joint(const FactorParams& params, const Dataset& dataset,
                            const PriorSpec& prior, ModelKind kind) {
  const ParamLayout layout = ParamLayout::make(dataset.dims, kind);
  const Eigen::VectorXd z = pack_params(params, layout);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(layout.size());
  LogJointGrad out;
  out.value = log_lik_flat(dataset, z, layout, nullptr, &g) + log_prior_flat(z, prior, &g);
  out.grad = unpack_params(g, layout);
  return out;
}

}  // namespace dfm
