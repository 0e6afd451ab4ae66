// Mixed logit benchmark: simulated likelihood against quadrature and plain
// logit oracles, parameter recovery on data simulated from the model itself,
// prediction checks, and degenerate-input handling.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <algorithm>
#include <stdexcept>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/mixedlogit.hpp"
#include "dfm/rng.hpp"

namespace {

// Simulates a single-category panel with per-consumer price and inertia
// coefficients supplied by the caller. Lag replays the previous choice.
dfm::Dataset simulate_panel(int I, int J, int T, const Eigen::VectorXd& alpha,
                            const std::vector<double>& eta, const std::vector<double>& xi,
                            dfm::Rng& rng) {
  dfm::Dataset d;
  d.dims = dfm::Dims::uniform(I, 1, J, T, 1);
  for (int i = 0; i < I; ++i) {
    int lag = -1;
    for (int t = 0; t < T; ++t) {
      dfm::Observation obs;
      obs.consumer = i;
      obs.trip = t;
      obs.category = 0;
      obs.prices.resize(J);
      for (int j = 0; j < J; ++j) obs.prices[j] = rng.uniform(1.0, 3.0);
      obs.lag = lag;
      int best = 0;
      double best_u = -1e300;
      for (int j = 0; j < J; ++j) {
        const double u = alpha[j] - eta[i] * obs.prices[j] + (lag == j ? xi[i] : 0.0) +
                         rng.gumbel();
        if (u > best_u) {
          best_u = u;
          best = j;
        }
      }
      obs.chosen = best;
      lag = best;
      d.observations.push_back(std::move(obs));
    }
  }
  return d;
}

// Plain logit log-likelihood at fixed coefficients, written independently of
// the library code.
double plain_logit_loglik(const dfm::Dataset& data, const Eigen::VectorXd& alpha,
                          double eta, double xi) {
  const int J = static_cast<int>(alpha.size());
  double total = 0.0;
  for (const dfm::Observation& obs : data.observations) {
    double max_u = -1e300;
    std::vector<double> u(J);
    for (int j = 0; j < J; ++j) {
      u[j] = alpha[j] - eta * obs.prices[j] + (obs.lag == j ? xi : 0.0);
      max_u = std::max(max_u, u[j]);
    }
    double denom = 0.0;
    for (int j = 0; j < J; ++j) denom += std::exp(u[j] - max_u);
    total += u[obs.chosen] - max_u - std::log(denom);
  }
  return total;
}

// Gauss-Hermite nodes and weights for integrals against exp(-x^2), via the
// eigen-decomposition of the Jacobi matrix.
void gauss_hermite(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = std::sqrt(k / 2.0);
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  nodes = es.eigenvalues();
  weights.resize(n);
  const double mu0 = std::sqrt(M_PI);
  for (int k = 0; k < n; ++k) {
    const double v = es.eigenvectors()(0, k);
    weights[k] = mu0 * v * v;
  }
}

// Exact (to quadrature accuracy) mixing integral of the panel likelihood:
// per consumer, integrate prod_t P_t over the bivariate normal coefficient
// distribution with a 2-D tensor Gauss-Hermite rule.
double quadrature_loglik(const dfm::MixedLogitFit& p, const dfm::Dataset& data_c,
                         int n_nodes) {
  Eigen::VectorXd x, w;
  gauss_hermite(n_nodes, x, w);
  const double root2 = std::sqrt(2.0);
  const Eigen::VectorXd wn = w / std::sqrt(M_PI);

  std::vector<std::vector<const dfm::Observation*>> by_consumer;
  for (const dfm::Observation& obs : data_c.observations) {
    if (obs.consumer >= static_cast<int>(by_consumer.size()))
      by_consumer.resize(obs.consumer + 1);
    by_consumer[obs.consumer].push_back(&obs);
  }

  const int J = static_cast<int>(p.alpha.size());
  double total = 0.0;
  for (const auto& obs_list : by_consumer) {
    if (obs_list.empty()) continue;
    double acc = 0.0;
    for (int k = 0; k < n_nodes; ++k) {
      const double eta = p.eta_mean + p.eta_sd * root2 * x[k];
      for (int l = 0; l < n_nodes; ++l) {
        const double xi = p.xi_mean + p.xi_sd * root2 * x[l];
        double lp = 0.0;
        for (const dfm::Observation* obs : obs_list) {
          double max_u = -1e300;
          std::vector<double> u(J);
          for (int j = 0; j < J; ++j) {
            u[j] = p.alpha[j] - eta * obs->prices[j] + (obs->lag == j ? xi : 0.0);
            max_u = std::max(max_u, u[j]);
          }
          double denom = 0.0;
          for (int j = 0; j < J; ++j) denom += std::exp(u[j] - max_u);
          lp += u[obs->chosen] - max_u - std::log(denom);
        }
        acc += wn[k] * wn[l] * std::exp(lp);
      }
    }
    total += std::log(acc);
  }
  return total;
}

// Quadrature version of the simulated-average choice probabilities.
Eigen::VectorXd quadrature_predict(const dfm::MixedLogitFit& p, const dfm::Observation& obs,
                                   int n_nodes) {
  Eigen::VectorXd x, w;
  gauss_hermite(n_nodes, x, w);
  const double root2 = std::sqrt(2.0);
  const Eigen::VectorXd wn = w / std::sqrt(M_PI);
  const int J = static_cast<int>(p.alpha.size());
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(J);
  for (int k = 0; k < n_nodes; ++k) {
    const double eta = p.eta_mean + p.eta_sd * root2 * x[k];
    for (int l = 0; l < n_nodes; ++l) {
      const double xi = p.xi_mean + p.xi_sd * root2 * x[l];
      Eigen::VectorXd u(J);
      for (int j = 0; j < J; ++j)
        u[j] = p.alpha[j] - eta * obs.prices[j] + (obs.lag == j ? xi : 0.0);
      const double m = u.maxCoeff();
      Eigen::VectorXd e = (u.array() - m).exp();
      avg += wn[k] * wn[l] * (e / e.sum());
    }
  }
  return avg;
}

dfm::MixedLogitFit make_params(const Eigen::VectorXd& alpha, double eta_mean,
                               double eta_sd, double xi_mean, double xi_sd) {
  dfm::MixedLogitFit p;
  p.alpha = alpha;
  p.eta_mean = eta_mean;
  p.eta_sd = eta_sd;
  p.xi_mean = xi_mean;
  p.xi_sd = xi_sd;
  return p;
}

dfm::Dataset tiny_instance() {
  dfm::Rng rng(404);
  Eigen::VectorXd alpha(3);
  alpha << 0.0, 0.4, -0.3;
  std::vector<double> eta(3), xi(3);
  for (int i = 0; i < 3; ++i) {
    eta[i] = 0.4 + 0.2 * rng.normal();
    xi[i] = 0.6 + 0.2 * rng.normal();
  }
  return simulate_panel(3, 3, 2, alpha, eta, xi, rng);
}

}  // namespace

TEST_CASE("halton draws are deterministic, consumer-distinct, and near standard normal") {
  const dfm::CoefficientDraws a = dfm::halton_normal_draws(20, 50);
  const dfm::CoefficientDraws b = dfm::halton_normal_draws(20, 50);
  REQUIRE(a.eta_eps.rows() == 20);
  REQUIRE(a.eta_eps.cols() == 50);
  CHECK(a.eta_eps == b.eta_eps);
  CHECK(a.xi_eps == b.xi_eps);
  CHECK(a.eta_eps.row(0) != a.eta_eps.row(1));

  const dfm::CoefficientDraws big = dfm::halton_normal_draws(10, 2000);
  const double mean = big.eta_eps.mean();
  const double sd = std::sqrt((big.eta_eps.array() - mean).square().mean());
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(sd - 1.0) < 0.01);
  const double mean2 = big.xi_eps.mean();
  CHECK(std::abs(mean2) < 0.01);

  const dfm::CoefficientDraws shifted = dfm::halton_normal_draws(20, 50, 99);
  CHECK(shifted.eta_eps != a.eta_eps);
}

TEST_CASE("zero mixing sds reduce the simulated likelihood to a plain logit") {
  dfm::Rng rng(11);
  Eigen::VectorXd alpha(4);
  alpha << 0.0, 0.3, -0.2, 0.5;
  std::vector<double> eta(6, 0.45), xi(6, 0.7);
  const dfm::Dataset data = simulate_panel(6, 4, 5, alpha, eta, xi, rng);
  const dfm::CoefficientDraws draws = dfm::halton_normal_draws(6, 40);

  const dfm::MixedLogitFit p = make_params(alpha, 0.45, 0.0, 0.7, 0.0);
  const double sll = dfm::simulated_loglik(p, data, draws);
  const double oracle = plain_logit_loglik(data, alpha, 0.45, 0.7);
  CHECK(sll == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("all-zero parameters with two products give -N log 2") {
  dfm::Rng rng(12);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(2);
  std::vector<double> eta(5, 0.4), xi(5, 0.5);
  const dfm::Dataset data = simulate_panel(5, 2, 4, alpha, eta, xi, rng);
  const dfm::CoefficientDraws draws = dfm::halton_normal_draws(5, 25);

  const dfm::MixedLogitFit p = make_params(alpha, 0.0, 0.0, 0.0, 0.0);
  const double sll = dfm::simulated_loglik(p, data, draws);
  const double expected = -static_cast<double>(data.observations.size()) * std::log(2.0);
  CHECK(sll == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("simulated likelihood is invariant to a common intercept shift") {
  const dfm::Dataset data = tiny_instance();
  const dfm::CoefficientDraws draws = dfm::halton_normal_draws(3, 200);
  Eigen::VectorXd alpha(3);
  alpha << 0.0, 0.4, -0.3;
  const dfm::MixedLogitFit p = make_params(alpha, 0.4, 0.25, 0.6, 0.2);
  const dfm::MixedLogitFit shifted =
      make_params(alpha.array() + 1.7, 0.4, 0.25, 0.6, 0.2);
  const double a = dfm::simulated_loglik(p, data, draws);
  const double b = dfm::simulated_loglik(shifted, data, draws);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("simulated likelihood with many Halton draws matches Gauss-Hermite quadrature") {
  const dfm::Dataset data = tiny_instance();
  Eigen::VectorXd alpha(3);
  alpha << 0.0, 0.4, -0.3;
  const dfm::MixedLogitFit p = make_params(alpha, 0.4, 0.3, 0.6, 0.2);

  const dfm::CoefficientDraws draws = dfm::halton_normal_draws(3, 100000);
  const double sll = dfm::simulated_loglik(p, data, draws);
  const double exact = quadrature_loglik(p, data, 64);
  CHECK(sll == doctest::Approx(exact).epsilon(1e-3));
  CHECK(std::abs(sll - exact) < 1e-3);
}

TEST_CASE("prediction with zero sds is the plain logit simplex at the means") {
  Eigen::VectorXd alpha(3);
  alpha << 0.0, 0.5, -0.4;
  const dfm::MixedLogitFit p = make_params(alpha, 0.35, 0.0, 0.8, 0.0);
  dfm::Observation obs;
  obs.consumer = 0;
  obs.prices.resize(3);
  obs.prices << 1.2, 2.0, 1.6;
  obs.lag = 1;
  const dfm::CoefficientDraws draws = dfm::halton_normal_draws(1, 50);
  const Eigen::VectorXd pred = dfm::predict_mixed_logit(p, obs, draws);

  Eigen::VectorXd u(3);
  for (int j = 0; j < 3; ++j)
    u[j] = alpha[j] - 0.35 * obs.prices[j] + (obs.lag == j ? 0.8 : 0.0);
  const Eigen::VectorXd e = (u.array() - u.maxCoeff()).exp();
  const Eigen::VectorXd oracle = e / e.sum();
  CHECK((pred - oracle).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(pred.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("symmetric inputs predict the uniform simplex") {
  const dfm::MixedLogitFit p =
      make_params(Eigen::VectorXd::Zero(4), 0.5, 0.3, 0.7, 0.2);
  dfm::Observation obs;
  obs.consumer = 0;
  obs.prices = Eigen::VectorXd::Constant(4, 1.8);
  obs.lag = -1;
  const dfm::CoefficientDraws draws = dfm::halton_normal_draws(1, 200);
  const Eigen::VectorXd pred = dfm::predict_mixed_logit(p, obs, draws);
  for (int j = 0; j < 4; ++j) CHECK(pred[j] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("prediction with many draws matches the quadrature oracle") {
  Eigen::VectorXd alpha(3);
  alpha << 0.0, 0.4, -0.3;
  const dfm::MixedLogitFit p = make_params(alpha, 0.4, 0.3, 0.6, 0.2);
  dfm::Observation obs;
  obs.consumer = 0;
  obs.prices.resize(3);
  obs.prices << 1.1, 2.4, 1.7;
  obs.lag = 2;
  const dfm::CoefficientDraws draws = dfm::halton_normal_draws(1, 100000);
  const Eigen::VectorXd pred = dfm::predict_mixed_logit(p, obs, draws);
  const Eigen::VectorXd exact = quadrature_predict(p, obs, 64);
  CHECK((pred - exact).lpNorm<Eigen::Infinity>() < 1e-3);
}

TEST_CASE("single-product categories are rejected") {
  dfm::Rng rng(21);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(1);
  std::vector<double> eta(4, 0.4), xi(4, 0.5);
  const dfm::Dataset data = simulate_panel(4, 1, 3, alpha, eta, xi, rng);
  dfm::MixedLogitSpec spec;
  CHECK_THROWS_WITH_AS(dfm::fit_mixed_logit(data, spec),
                       "no within-category variation", std::invalid_argument);
}

TEST_CASE("fitting data from a plain logit recovers near-zero mixing sds") {
  // A true sd of zero sits on the parameter boundary, so any single dataset
  // can place the estimate a little above it; the median over three datasets
  // pins the recovery property without depending on one draw.
  Eigen::VectorXd alpha(3);
  alpha << 0.0, 0.5, -0.3;
  const int I = 1000, T = 20;
  std::vector<double> eta_sds, xi_sds;
  for (std::uint64_t seed : {31ull, 32ull, 33ull}) {
    dfm::Rng rng(seed);
    std::vector<double> eta(I, 0.35), xi(I, 0.7);
    const dfm::Dataset data = simulate_panel(I, 3, T, alpha, eta, xi, rng);

    dfm::MixedLogitSpec spec;
    spec.n_sim_draws = 100;
    const dfm::MixedLogitFit fit = dfm::fit_mixed_logit(data, spec);
    eta_sds.push_back(fit.eta_sd);
    xi_sds.push_back(fit.xi_sd);
    CHECK(fit.eta_sd < 0.25);
    CHECK(fit.xi_sd < 0.25);
    CHECK(std::abs(fit.eta_mean - 0.35) < 0.05);
    CHECK(std::abs(fit.alpha[1] - 0.5) < 0.1);
    CHECK(std::abs(fit.alpha[2] + 0.3) < 0.1);
    CHECK(fit.alpha[0] == 0.0);
  }
  std::sort(eta_sds.begin(), eta_sds.end());
  std::sort(xi_sds.begin(), xi_sds.end());
  CHECK(eta_sds[1] < 0.1);
  CHECK(xi_sds[1] < 0.1);
}

TEST_CASE("fitting data with heterogeneous price coefficients recovers the mean") {
  dfm::Rng rng(32);
  Eigen::VectorXd alpha(3);
  alpha << 0.0, 0.5, -0.3;
  const int I = 1000, T = 20;
  std::vector<double> eta(I), xi(I);
  for (int i = 0; i < I; ++i) {
    eta[i] = 0.35 + 0.1 * rng.normal();
    xi[i] = 0.7 + 0.2 * rng.normal();
  }
  const dfm::Dataset data = simulate_panel(I, 3, T, alpha, eta, xi, rng);

  dfm::MixedLogitSpec spec;
  spec.n_sim_draws = 100;
  const dfm::MixedLogitFit fit = dfm::fit_mixed_logit(data, spec);
  CHECK(std::abs(fit.eta_mean - 0.35) < 0.05);
}

TEST_CASE("fit is deterministic") {
  const dfm::Dataset data = tiny_instance();
  dfm::MixedLogitSpec spec;
  spec.n_sim_draws = 50;
  const dfm::MixedLogitFit a = dfm::fit_mixed_logit(data, spec);
  const dfm::MixedLogitFit b = dfm::fit_mixed_logit(data, spec);
  CHECK(a.alpha == b.alpha);
  CHECK(a.eta_mean == b.eta_mean);
  CHECK(a.eta_sd == b.eta_sd);
  CHECK(a.xi_mean == b.xi_mean);
  CHECK(a.xi_sd == b.xi_sd);
  CHECK(a.loglik == b.loglik);
}

TEST_CASE("never-chosen products are flagged and kept finite by the penalty") {
  dfm::Rng rng(41);
  Eigen::VectorXd alpha(3);
  alpha << 0.0, 0.3, 0.2;
  std::vector<double> eta(30, 0.4), xi(30, 0.5);
  dfm::Dataset data = simulate_panel(30, 3, 6, alpha, eta, xi, rng);
  // Reroute every choice of product 2 to product 0 so product 2 never wins.
  for (dfm::Observation& obs : data.observations) {
    if (obs.chosen == 2) obs.chosen = 0;
    if (obs.lag == 2) obs.lag = 0;
  }

  dfm::MixedLogitSpec spec;
  spec.n_sim_draws = 30;
  const dfm::MixedLogitFit fit = dfm::fit_mixed_logit(data, spec);
  REQUIRE(fit.penalized_products.size() == 1);
  CHECK(fit.penalized_products[0] == 2);
  CHECK(std::isfinite(fit.alpha[2]));
  CHECK(std::isfinite(fit.loglik));
}

TEST_CASE("category subset keeps only the requested category with aligned probabilities") {
  dfm::Dataset data;
  data.dims = dfm::Dims::uniform(2, 2, 2, 2, 1);
  Eigen::MatrixXd probs(4, 2);
  int row = 0;
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 2; ++c) {
      dfm::Observation obs;
      obs.consumer = i;
      obs.trip = 0;
      obs.category = c;
      obs.prices = Eigen::VectorXd::Constant(2, 1.0 + row);
      obs.chosen = 0;
      data.observations.push_back(obs);
      probs.row(row) << 0.1 * row, 1.0 - 0.1 * row;
      ++row;
    }
  data.true_probs = probs;

  const dfm::Dataset sub = dfm::category_subset(data, 1);
  REQUIRE(sub.observations.size() == 2);
  CHECK(sub.observations[0].category == 1);
  CHECK(sub.observations[1].category == 1);
  CHECK(sub.observations[0].prices[0] == doctest::Approx(2.0));
  CHECK(sub.observations[1].prices[0] == doctest::Approx(4.0));
  REQUIRE(sub.true_probs.has_value());
  CHECK(sub.true_probs->rows() == 2);
  CHECK((*sub.true_probs)(0, 0) == doctest::Approx(0.1));
  CHECK((*sub.true_probs)(1, 0) == doctest::Approx(0.3));
}
