#include "dfm/dgp.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "dfm/model.hpp"

namespace dfm {

void SimConfig::validate() const {
  dims.validate();
  auto check_interval = [](const Interval& r, const char* name) {
    if (!(r.lo <= r.hi))
      throw std::invalid_argument(std::string(name) + " must have lo <= hi");
  };
  check_interval(theta_range, "theta_range");
  check_interval(gamma_range, "gamma_range");
  check_interval(lambda_range, "lambda_range");
  check_interval(rho_range, "rho_range");
  check_interval(price_level_range, "price_level_range");
  check_interval(price_dispersion_range, "price_dispersion_range");
  if (price_shock_scale < 0.0)
    throw std::invalid_argument("price_shock_scale must be >= 0");
  if (price_floor <= 0.0) throw std::invalid_argument("price_floor must be > 0");
}

TrueParams draw_true_params(const SimConfig& config, const Rng& rng) {
  config.validate();
  const int I = config.dims.n_consumers;
  const int K = config.dims.n_factors;
  const int P = config.dims.n_products_total();

  auto fill = [](Eigen::MatrixXd& m, int rows, int cols, Interval r, Rng stream) {
    m.resize(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = stream.uniform(r.lo, r.hi);
  };

  TrueParams params;
  fill(params.theta, I, K, config.theta_range, rng.stream("theta"));
  fill(params.gamma, K, P, config.gamma_range, rng.stream("gamma"));
  fill(params.lambda, K, P, config.lambda_range, rng.stream("lambda"));
  fill(params.rho, K, P, config.rho_range, rng.stream("rho"));
  return params;
}

PricePaths draw_price_paths(const SimConfig& config, const Rng& rng) {
  config.validate();
  const int C = config.dims.n_categories();
  const int T = config.dims.n_trips;
  const int P = config.dims.n_products_total();
  const std::vector<int> offsets = config.dims.product_offsets();
  Rng stream = rng.stream("prices");

  PricePaths paths;
  paths.base_prices.resize(P);
  paths.prices.resize(T, P);
  for (int c = 0; c < C; ++c) {
    const double level = stream.uniform(config.price_level_range.lo,
                                        config.price_level_range.hi);
    const double dispersion = stream.uniform(config.price_dispersion_range.lo,
                                             config.price_dispersion_range.hi);
    for (int j = offsets[c]; j < offsets[c + 1]; ++j)
      paths.base_prices[j] = stream.uniform(level, level + dispersion);
  }
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < P; ++j)
      paths.prices(t, j) =
          std::max(config.price_floor,
                   paths.base_prices[j] + config.price_shock_scale * stream.normal());
  return paths;
}

Dataset simulate_choices(const TrueParams& params, const PricePaths& prices,
                         const SimConfig& config, const Rng& rng) {
  config.validate();
  const Dims& dims = config.dims;
  const int I = dims.n_consumers;
  const int C = dims.n_categories();
  const int T = dims.n_trips;
  const int P = dims.n_products_total();
  const int K = dims.n_factors;

  if (params.theta.rows() != I || params.theta.cols() != K)
    throw std::invalid_argument("simulate_choices: theta shape mismatch");
  if (params.gamma.rows() != K || params.gamma.cols() != P ||
      params.lambda.rows() != K || params.lambda.cols() != P ||
      params.rho.rows() != K || params.rho.cols() != P)
    throw std::invalid_argument("simulate_choices: loading shape mismatch");
  if (prices.prices.rows() != T || prices.prices.cols() != P)
    throw std::invalid_argument("simulate_choices: price path shape mismatch");

  const std::vector<int> offsets = dims.product_offsets();
  const int min_incidence = C / 2;
  const Rng init_root = rng.stream("init_lag");
  const Rng choice_root = rng.stream("choices");

  Dataset dataset;
  dataset.dims = dims;
  std::vector<Eigen::VectorXd> prob_rows;
  std::vector<int> category_order(C);

  for (int i = 0; i < I; ++i) {
    // Exogenous initial product per category, independent of preferences.
    std::vector<int> last_product(C, -1);
    if (config.exogenous_init) {
      Rng init = init_root.stream(static_cast<std::uint64_t>(i));
      for (int c = 0; c < C; ++c)
        last_product[c] = static_cast<int>(init.uniform_int(dims.products_in(c)));
    }

    Rng choice = choice_root.stream(static_cast<std::uint64_t>(i));
    for (int t = 0; t < T; ++t) {
      const int n_bought =
          min_incidence + static_cast<int>(choice.uniform_int(C - min_incidence + 1));
      // Partial Fisher-Yates: the first n_bought entries are a uniform subset.
      for (int c = 0; c < C; ++c) category_order[c] = c;
      for (int k = 0; k < n_bought; ++k)
        std::swap(category_order[k],
                  category_order[k + static_cast<int>(choice.uniform_int(C - k))]);
      std::sort(category_order.begin(), category_order.begin() + n_bought);

      for (int b = 0; b < n_bought; ++b) {
        const int c = category_order[b];
        const int J = dims.products_in(c);
        Observation obs;
        obs.consumer = i;
        obs.trip = t;
        obs.category = c;
        obs.prices = prices.prices.row(t).segment(offsets[c], J).transpose();
        obs.lag = last_product[c];

        const Eigen::VectorXd u =
            observation_utilities(obs, offsets[c], params, ModelKind::dynamic_factor);
        prob_rows.push_back(choice_probabilities(u));

        int best = 0;
        double best_value = u[0] + choice.gumbel();
        for (int j = 1; j < J; ++j) {
          const double value = u[j] + choice.gumbel();
          if (value > best_value) {
            best_value = value;
            best = j;
          }
        }
        obs.chosen = best;
        last_product[c] = best;
        dataset.observations.push_back(std::move(obs));
      }
    }
  }

  const int J_max = dims.max_products();
  Eigen::MatrixXd probs =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(prob_rows.size()), J_max);
  for (std::size_t n = 0; n < prob_rows.size(); ++n)
    probs.row(static_cast<Eigen::Index>(n)).head(prob_rows[n].size()) =
        prob_rows[n].transpose();
  dataset.true_probs = std::move(probs);
  return dataset;
}

DatasetBundle simulate(const SimConfig& config) {
  const Rng root(config.seed);
  DatasetBundle bundle;
  bundle.seed = config.seed;
  bundle.truth = draw_true_params(config, root);
  const PricePaths prices = draw_price_paths(config, root);
  bundle.dataset = simulate_choices(*bundle.truth, prices, config, root);
  return bundle;
}

std::vector<CategoryRepurchase> repurchase_diagnostics(const Dataset& dataset) {
  const int C = dataset.dims.n_categories();
  std::vector<int> pairs(C, 0), repeats(C, 0);
  // Previous *observed* purchase per (consumer, category); the exogenous
  // initial state is not an observed purchase and does not form a pair.
  std::map<std::pair<int, int>, int> last_choice;
  for (const Observation& obs : dataset.observations) {
    const auto key = std::make_pair(obs.consumer, obs.category);
    const auto it = last_choice.find(key);
    if (it != last_choice.end()) {
      ++pairs[obs.category];
      if (obs.chosen == it->second) ++repeats[obs.category];
    }
    last_choice[key] = obs.chosen;
  }

  std::vector<CategoryRepurchase> table(C);
  for (int c = 0; c < C; ++c) {
    table[c].category = c;
    table[c].n_pairs = pairs[c];
    if (pairs[c] > 0) {
      const double rep = static_cast<double>(repeats[c]) / pairs[c];
      table[c].repurchase_prob = rep;
      const int J = dataset.dims.products_in(c);
      table[c].mean_switch_prob =
          J > 1 ? (1.0 - rep) / (J - 1) : 0.0;
    }
  }
  return table;
}

}  // namespace dfm
