#include "dfm/mixedlogit.hpp"

#include <cmath>
#include <stdexcept>

#include "dfm/lbfgs.hpp"
#include "dfm/model.hpp"
#include "dfm/numeric.hpp"

namespace dfm {

namespace {

double radical_inverse(std::uint64_t n, int base) {
  double f = 1.0, r = 0.0;
  while (n > 0) {
    f /= base;
    r += f * static_cast<double>(n % base);
    n /= base;
  }
  return r;
}

struct CategoryData {
  int category = 0;
  int n_products = 0;
  std::size_t n_obs = 0;
  // Observation indices grouped by consumer (row = global consumer id).
  std::vector<std::vector<const Observation*>> by_consumer;
  std::vector<int> chosen_count;
};

CategoryData group_by_consumer(const Dataset& dataset_c) {
  CategoryData data;
  if (dataset_c.observations.empty())
    throw std::invalid_argument("mixed logit: empty dataset");
  data.category = dataset_c.observations.front().category;
  data.n_products = dataset_c.dims.products_in(data.category);
  data.by_consumer.resize(dataset_c.dims.n_consumers);
  data.chosen_count.assign(data.n_products, 0);
  for (const Observation& obs : dataset_c.observations) {
    if (obs.category != data.category)
      throw std::invalid_argument("mixed logit: dataset spans multiple categories");
    data.by_consumer[obs.consumer].push_back(&obs);
    ++data.chosen_count[obs.chosen];
    ++data.n_obs;
  }
  return data;
}

// Natural-parameter gradient of the simulated log-likelihood.
struct SllGradient {
  Eigen::VectorXd alpha;
  double eta_mean = 0.0, eta_sd = 0.0, xi_mean = 0.0, xi_sd = 0.0;
};

double eval_simulated_loglik(const Eigen::VectorXd& alpha, double eta_mean,
                             double eta_sd, double xi_mean, double xi_sd,
                             const CategoryData& data, const CoefficientDraws& draws,
                             SllGradient* grad) {
  const int J = data.n_products;
  const int R = static_cast<int>(draws.eta_eps.cols());
  if (alpha.size() != J)
    throw std::invalid_argument("mixed logit: alpha length mismatch");
  if (draws.eta_eps.rows() < static_cast<Eigen::Index>(data.by_consumer.size()))
    throw std::invalid_argument("mixed logit: draw matrix too small");

  if (grad != nullptr) {
    grad->alpha = Eigen::VectorXd::Zero(J);
    grad->eta_mean = grad->eta_sd = grad->xi_mean = grad->xi_sd = 0.0;
  }

  Eigen::VectorXd u(J);
  Eigen::VectorXd s_r(R);
  Eigen::MatrixXd probs;  // (r * n_i + o) x J, reused across consumers
  std::vector<double> consumer_terms;
  consumer_terms.reserve(data.by_consumer.size());

  for (std::size_t i = 0; i < data.by_consumer.size(); ++i) {
    const auto& obs_list = data.by_consumer[i];
    if (obs_list.empty()) continue;
    const int n_i = static_cast<int>(obs_list.size());
    if (grad != nullptr && probs.rows() < static_cast<Eigen::Index>(R) * n_i)
      probs.resize(static_cast<Eigen::Index>(R) * n_i, J);

    for (int r = 0; r < R; ++r) {
      const double eta = eta_mean + eta_sd * draws.eta_eps(i, r);
      const double xi = xi_mean + xi_sd * draws.xi_eps(i, r);
      double s = 0.0;
      for (int o = 0; o < n_i; ++o) {
        const Observation& obs = *obs_list[o];
        for (int j = 0; j < J; ++j) {
          u[j] = alpha[j] - eta * obs.prices[j];
          if (obs.lag == j) u[j] += xi;
        }
        const double m = u.maxCoeff();
        const Eigen::ArrayXd e = (u.array() - m).exp();
        const double denom = e.sum();
        s += u[obs.chosen] - m - std::log(denom);
        if (grad != nullptr) probs.row(r * n_i + o) = (e / denom).matrix().transpose();
      }
      s_r[r] = s;
    }

    const double lse = log_sum_exp(s_r);
    consumer_terms.push_back(lse - std::log(static_cast<double>(R)));

    if (grad == nullptr) continue;
    for (int r = 0; r < R; ++r) {
      const double w = std::exp(s_r[r] - lse);
      const double e1 = draws.eta_eps(i, r);
      const double e2 = draws.xi_eps(i, r);
      for (int o = 0; o < n_i; ++o) {
        const Observation& obs = *obs_list[o];
        double price_part = 0.0;
        for (int j = 0; j < J; ++j) {
          const double res = (j == obs.chosen ? 1.0 : 0.0) - probs(r * n_i + o, j);
          grad->alpha[j] += w * res;
          price_part -= res * obs.prices[j];
          if (obs.lag == j) {
            grad->xi_mean += w * res;
            grad->xi_sd += w * res * e2;
          }
        }
        grad->eta_mean += w * price_part;
        grad->eta_sd += w * price_part * e1;
      }
    }
  }

  return pairwise_sum(consumer_terms);
}

}  // namespace

CoefficientDraws halton_normal_draws(int n_consumers, int n_draws, int burn_in) {
  CoefficientDraws draws;
  draws.eta_eps.resize(n_consumers, n_draws);
  draws.xi_eps.resize(n_consumers, n_draws);
  for (int i = 0; i < n_consumers; ++i)
    for (int r = 0; r < n_draws; ++r) {
      const std::uint64_t index = 1 + static_cast<std::uint64_t>(burn_in) +
                                  static_cast<std::uint64_t>(i) * n_draws + r;
      draws.eta_eps(i, r) = inverse_normal_cdf(radical_inverse(index, 2));
      draws.xi_eps(i, r) = inverse_normal_cdf(radical_inverse(index, 3));
    }
  return draws;
}

Dataset category_subset(const Dataset& dataset, int category) {
  Dataset out;
  out.dims = dataset.dims;
  std::vector<Eigen::Index> rows;
  for (std::size_t n = 0; n < dataset.observations.size(); ++n)
    if (dataset.observations[n].category == category) {
      out.observations.push_back(dataset.observations[n]);
      rows.push_back(static_cast<Eigen::Index>(n));
    }
  if (dataset.true_probs.has_value()) {
    Eigen::MatrixXd probs(rows.size(), dataset.true_probs->cols());
    for (std::size_t k = 0; k < rows.size(); ++k)
      probs.row(static_cast<Eigen::Index>(k)) = dataset.true_probs->row(rows[k]);
    out.true_probs = std::move(probs);
  }
  return out;
}

double simulated_loglik(const MixedLogitFit& params, const Dataset& dataset_c,
                        const CoefficientDraws& draws) {
  const CategoryData data = group_by_consumer(dataset_c);
  return eval_simulated_loglik(params.alpha, params.eta_mean, params.eta_sd,
                               params.xi_mean, params.xi_sd, data, draws, nullptr);
}

MixedLogitFit fit_mixed_logit(const Dataset& dataset_c, const MixedLogitSpec& spec) {
  if (spec.n_sim_draws < 1)
    throw std::invalid_argument("mixed logit: n_sim_draws must be >= 1");
  const CategoryData data = group_by_consumer(dataset_c);
  const int J = data.n_products;
  if (J < 2) throw std::invalid_argument("no within-category variation");

  MixedLogitFit fit;
  fit.category = data.category;
  for (int j = 0; j < J; ++j)
    if (data.chosen_count[j] == 0) fit.penalized_products.push_back(j);

  const CoefficientDraws draws = halton_normal_draws(
      static_cast<int>(data.by_consumer.size()), spec.n_sim_draws, spec.halton_burn_in);

  // Free parameters: alpha_2..alpha_J (alpha_1 pinned to 0), eta_mean,
  // log eta_sd, xi_mean, log xi_sd.
  const int dim = (J - 1) + 4;
  auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(J);
    alpha.tail(J - 1) = x.head(J - 1);
    const double eta_mean = x[J - 1];
    const double eta_sd = std::exp(x[J]);
    const double xi_mean = x[J + 1];
    const double xi_sd = std::exp(x[J + 2]);

    SllGradient sg;
    double value = -eval_simulated_loglik(alpha, eta_mean, eta_sd, xi_mean, xi_sd,
                                          data, draws, &sg);
    g.resize(dim);
    g.head(J - 1) = -sg.alpha.tail(J - 1);
    g[J - 1] = -sg.eta_mean;
    g[J] = -sg.eta_sd * eta_sd;
    g[J + 1] = -sg.xi_mean;
    g[J + 2] = -sg.xi_sd * xi_sd;

    for (int j : fit.penalized_products)
      if (j > 0) {
        value += spec.ridge * alpha[j] * alpha[j];
        g[j - 1] += 2.0 * spec.ridge * alpha[j];
      }
    return value;
  };

  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(dim);
  x0[J] = std::log(0.1);
  x0[J + 2] = std::log(0.1);

  LbfgsOptions opts;
  opts.tol = spec.tol;
  opts.max_iterations = spec.max_iterations;
  const LbfgsResult res = lbfgs_minimize(objective, x0, opts);

  fit.alpha = Eigen::VectorXd::Zero(J);
  fit.alpha.tail(J - 1) = res.x.head(J - 1);
  fit.eta_mean = res.x[J - 1];
  fit.eta_sd = std::exp(res.x[J]);
  fit.xi_mean = res.x[J + 1];
  fit.xi_sd = std::exp(res.x[J + 2]);
  fit.converged = res.converged;
  fit.final_grad_norm = res.grad.lpNorm<Eigen::Infinity>();
  fit.loglik = eval_simulated_loglik(fit.alpha, fit.eta_mean, fit.eta_sd, fit.xi_mean,
                                     fit.xi_sd, data, draws, nullptr);
  return fit;
}

Eigen::VectorXd predict_mixed_logit(const MixedLogitFit& fit, const Observation& obs,
                                    const CoefficientDraws& draws) {
  const int J = static_cast<int>(fit.alpha.size());
  if (obs.prices.size() != J)
    throw std::invalid_argument("predict_mixed_logit: category mismatch");
  const int R = static_cast<int>(draws.eta_eps.cols());
  Eigen::VectorXd u(J);
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(J);
  for (int r = 0; r < R; ++r) {
    const double eta = fit.eta_mean + fit.eta_sd * draws.eta_eps(obs.consumer, r);
    const double xi = fit.xi_mean + fit.xi_sd * draws.xi_eps(obs.consumer, r);
    for (int j = 0; j < J; ++j) {
      u[j] = fit.alpha[j] - eta * obs.prices[j];
      if (obs.lag == j) u[j] += xi;
    }
    avg += choice_probabilities(u);
  }
  return avg / R;
}

}  // namespace dfm
