#include "dfm/vi.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>

namespace dfm {

void FitConfig::validate() const {
  if (prior.scale <= 0.0) throw std::invalid_argument("prior scale must be positive");
  if (n_factors <= 0) throw std::invalid_argument("n_factors must be positive");
  if (mc_samples <= 0) throw std::invalid_argument("mc_samples must be positive");
  if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
  if (max_iterations <= 0) throw std::invalid_argument("max_iterations must be positive");
  if (convergence_tol <= 0.0) throw std::invalid_argument("convergence_tol must be positive");
  if (convergence_window <= 0)
    throw std::invalid_argument("convergence_window must be positive");
  if (minibatch < 0) throw std::invalid_argument("minibatch must be >= 0");
}

double gaussian_entropy(const Eigen::VectorXd& log_sigma) {
  const double c = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  return log_sigma.sum() + c * static_cast<double>(log_sigma.size());
}

VariationalState init_variational(const Dims& dims, ModelKind kind, const Rng& rng) {
  VariationalState state;
  state.layout = ParamLayout::make(dims, kind);
  const int D = state.layout.size();
  state.mu.resize(D);
  Rng r = rng;
  for (int d = 0; d < D; ++d) state.mu[d] = 0.1 * r.normal();
  state.log_sigma = Eigen::VectorXd::Constant(D, -2.0);
  return state;
}

ParamDraw sample_reparam(const VariationalState& state, const Eigen::VectorXd& eps) {
  if (eps.size() != state.mu.size())
    throw std::invalid_argument("sample_reparam: eps length mismatch");
  const Eigen::VectorXd z =
      state.mu.array() + state.log_sigma.array().exp() * eps.array();
  return unpack_params(z, state.layout);
}

namespace {

// One Monte Carlo ELBO evaluation: M reparameterized draws through the log
// joint plus the closed-form entropy. When grad outputs are given they
// receive the averaged reparameterization-trick gradient (entropy included).
double elbo_pass(const VariationalState& state, const LogJointFn& log_joint,
                 int iteration, int mc_samples, Rng mc, Eigen::VectorXd* grad_mu,
                 Eigen::VectorXd* grad_log_sigma) {
  const int D = state.size();
  const Eigen::ArrayXd sigma = state.log_sigma.array().exp();
  Eigen::VectorXd eps(D), z(D), g(D);
  if (grad_mu != nullptr) {
    grad_mu->setZero(D);
    grad_log_sigma->setZero(D);
  }

  double acc = 0.0;
  for (int s = 0; s < mc_samples; ++s) {
    for (int d = 0; d < D; ++d) eps[d] = mc.normal();
    z = state.mu.array() + sigma * eps.array();
    g.setZero();
    acc += log_joint(z, g, iteration);
    if (grad_mu != nullptr) {
      *grad_mu += g;
      grad_log_sigma->array() += g.array() * eps.array() * sigma;
    }
  }
  acc /= mc_samples;
  if (grad_mu != nullptr) {
    *grad_mu /= mc_samples;
    *grad_log_sigma /= mc_samples;
    grad_log_sigma->array() += 1.0;  // entropy gradient
  }
  return acc + gaussian_entropy(state.log_sigma);
}

int first_non_finite(const Eigen::VectorXd& v) {
  for (int d = 0; d < v.size(); ++d)
    if (!std::isfinite(v[d])) return d;
  return -1;
}

// Factor-model log joint over a dataset, with optional observation
// minibatching (same batch for every MC draw within an iteration, rescaled
// by N/batch to stay unbiased).
struct DatasetLogJoint {
  const Dataset* dataset;
  ParamLayout layout;
  PriorSpec prior;
  int minibatch = 0;
  Rng batch_root{0};

  int cached_iteration = -1;
  std::vector<std::size_t> subset;
  std::vector<std::size_t> order;
  Eigen::VectorXd lik_grad;

  double operator()(const Eigen::VectorXd& z, Eigen::VectorXd& grad, int iteration) {
    const std::size_t N = dataset->n_observations();
    if (minibatch <= 0 || static_cast<std::size_t>(minibatch) >= N) {
      const double ll = log_lik_flat(*dataset, z, layout, nullptr, &grad);
      return ll + log_prior_flat(z, prior, &grad);
    }

    if (iteration != cached_iteration) {
      if (order.size() != N) {
        order.resize(N);
        std::iota(order.begin(), order.end(), std::size_t{0});
      }
      Rng pick = batch_root.stream(static_cast<std::uint64_t>(iteration));
      for (int b = 0; b < minibatch; ++b) {
        const std::size_t j =
            b + pick.uniform_int(static_cast<int>(N) - b);
        std::swap(order[b], order[j]);
      }
      subset.assign(order.begin(), order.begin() + minibatch);
      cached_iteration = iteration;
    }

    const double weight = static_cast<double>(N) / minibatch;
    lik_grad.setZero(layout.size());
    const double ll = log_lik_flat(*dataset, z, layout, &subset, &lik_grad);
    grad += weight * lik_grad;
    return weight * ll + log_prior_flat(z, prior, &grad);
  }
};

LogJointFn make_dataset_log_joint(const Dataset& dataset, const ParamLayout& layout,
                                  const FitConfig& config, const Rng& root) {
  auto joint = std::make_shared<DatasetLogJoint>();
  joint->dataset = &dataset;
  joint->layout = layout;
  joint->prior = config.prior;
  joint->minibatch = config.minibatch;
  joint->batch_root = root.stream("batch");
  return [joint](const Eigen::VectorXd& z, Eigen::VectorXd& grad, int iteration) {
    return (*joint)(z, grad, iteration);
  };
}

ParamLayout fit_layout(const Dataset& dataset, const FitConfig& config) {
  Dims dims = dataset.dims;
  dims.n_factors = config.n_factors;
  return ParamLayout::make(dims, config.kind);
}

}  // namespace

double elbo_estimate(const VariationalState& state, const Dataset& dataset,
                     const FitConfig& config, const Rng& rng) {
  config.validate();
  FitConfig full = config;
  full.minibatch = 0;
  const LogJointFn joint = make_dataset_log_joint(dataset, state.layout, full, rng);
  return elbo_pass(state, joint, 0, config.mc_samples, rng, nullptr, nullptr);
}

ElboGradient elbo_gradient(const VariationalState& state, const Dataset& dataset,
                           const FitConfig& config, const Rng& rng) {
  config.validate();
  FitConfig full = config;
  full.minibatch = 0;
  const LogJointFn joint = make_dataset_log_joint(dataset, state.layout, full, rng);
  ElboGradient out;
  out.elbo = elbo_pass(state, joint, 0, config.mc_samples, rng, &out.mu, &out.log_sigma);
  return out;
}

FitResult fit_generic(const LogJointFn& log_joint, VariationalState init,
                      const FitConfig& config, const Rng& rng) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const int D = init.size();

  FitResult result;
  result.state = std::move(init);
  result.elbo_trace.reserve(config.max_iterations);

  Eigen::VectorXd grad_mu(D), grad_log_sigma(D);
  Eigen::VectorXd m_mu = Eigen::VectorXd::Zero(D), v_mu = Eigen::VectorXd::Zero(D);
  Eigen::VectorXd m_ls = Eigen::VectorXd::Zero(D), v_ls = Eigen::VectorXd::Zero(D);
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  const int half = config.max_iterations / 2;
  const Rng mc_root = rng.stream("mc");

  for (int iteration = 0; iteration < config.max_iterations; ++iteration) {
    const double elbo =
        elbo_pass(result.state, log_joint, iteration, config.mc_samples,
                  mc_root.stream(static_cast<std::uint64_t>(iteration)), &grad_mu,
                  &grad_log_sigma);

    if (!std::isfinite(elbo) || !grad_mu.allFinite() || !grad_log_sigma.allFinite()) {
      int coord = first_non_finite(grad_mu);
      if (coord < 0) coord = first_non_finite(grad_log_sigma);
      std::ostringstream msg;
      msg << "non-finite ELBO at iteration " << iteration;
      if (coord >= 0) msg << ", gradient coordinate " << coord;
      throw NumericalError(msg.str(), iteration, coord);
    }

    const int t = iteration + 1;
    const double decay =
        (half >= 1 && t > half) ? std::sqrt(static_cast<double>(half) / t) : 1.0;
    const double step = config.learning_rate * decay;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);

    auto adam_ascend = [&](Eigen::VectorXd& param, Eigen::VectorXd& m,
                           Eigen::VectorXd& v, const Eigen::VectorXd& g) {
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v.array() + (1.0 - beta2) * g.array().square();
      param.array() +=
          step * (m.array() / bc1) / ((v.array() / bc2).sqrt() + adam_eps);
    };
    adam_ascend(result.state.mu, m_mu, v_mu, grad_mu);
    adam_ascend(result.state.log_sigma, m_ls, v_ls, grad_log_sigma);

    result.elbo_trace.push_back(elbo);

    const int n = static_cast<int>(result.elbo_trace.size());
    const int w = config.convergence_window;
    if (n >= w + 1) {
      const double delta = (result.elbo_trace[n - 1] - result.elbo_trace[n - 1 - w]) / w;
      double denom = 0.0;
      for (int k = n - w; k < n; ++k) denom += std::abs(result.elbo_trace[k]);
      denom /= w;
      if (std::abs(delta) / std::max(denom, 1e-8) < config.convergence_tol) {
        result.converged = true;
        result.iterations_run = n;
        break;
      }
    }
  }
  if (result.iterations_run == 0)
    result.iterations_run = static_cast<int>(result.elbo_trace.size());

  result.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

FitResult fit(const Dataset& dataset, const FitConfig& config) {
  config.validate();
  const ParamLayout layout = fit_layout(dataset, config);
  Dims dims = dataset.dims;
  dims.n_factors = config.n_factors;

  const Rng root(config.seed);
  VariationalState init = init_variational(dims, config.kind, root.stream("init"));
  const LogJointFn joint = make_dataset_log_joint(dataset, layout, config, root);
  return fit_generic(joint, std::move(init), config, root);
}

std::vector<ParamDraw> posterior_draws(const VariationalState& state, int S,
                                       const Rng& rng) {
  const int D = state.size();
  std::vector<ParamDraw> draws;
  draws.reserve(static_cast<std::size_t>(S));
  Eigen::VectorXd eps(D);
  for (int s = 0; s < S; ++s) {
    Rng r = rng.stream(static_cast<std::uint64_t>(s));
    for (int d = 0; d < D; ++d) eps[d] = r.normal();
    draws.push_back(sample_reparam(state, eps));
  }
  return draws;
}

}  // namespace dfm
