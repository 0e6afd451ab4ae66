#pragma once
// Simulation of purchase panels from the dynamic factor data-generating
// process: uniform latent parameters, a two-level price process, random
// category incidence per trip, and an inertia state updated after each
// purchase.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/rng.hpp"

namespace dfm {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct SimConfig {
  Dims dims;
  Interval theta_range{0.0, 1.0};
  Interval gamma_range{0.3, 0.4};
  Interval lambda_range{0.3, 0.4};
  Interval rho_range{0.0, 2.0};  // [0,0] disables inertia
  Interval price_level_range{1.0, 10.0};
  Interval price_dispersion_range{0.0, 1.0};
  double price_shock_scale = 0.2;  // standard deviation of the per-trip shock
  double price_floor = 0.1;
  // Draw an exogenous uniform initial product per (consumer, category) so the
  // first observation has a defined lag; when false the first lag is absent.
  bool exogenous_init = true;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct PricePaths {
  Eigen::VectorXd base_prices;  // per product
  Eigen::MatrixXd prices;       // n_trips x n_products
};

// Independent uniforms on the configured ranges; theta is I x K, the loading
// blocks are K x P. rho is drawn (possibly all zero) so the truth always has
// dynamic shape.
TrueParams draw_true_params(const SimConfig& config, const Rng& rng);

PricePaths draw_price_paths(const SimConfig& config, const Rng& rng);

// Simulates every purchase occasion: per (consumer, trip) draws how many and
// which categories are bought, computes utilities with Gumbel noise, records
// the argmax choice and the noise-free logit probabilities, and advances the
// inertia state. Deterministic given the rng; consumers use independent
// substreams.
Dataset simulate_choices(const TrueParams& params, const PricePaths& prices,
                         const SimConfig& config, const Rng& rng);

// Full pipeline from a config: params, prices, choices, all derived from
// config.seed. Returns the dataset together with the truth for the sidecar.
DatasetBundle simulate(const SimConfig& config);

struct CategoryRepurchase {
  int category = 0;
  // Fraction of occasions choosing the same product as the previous occasion
  // in the same (consumer, category); absent when no consecutive pair exists.
  std::optional<double> repurchase_prob;
  // Complementary switch mass split evenly over the other J_c - 1 products.
  std::optional<double> mean_switch_prob;
  int n_pairs = 0;
};

std::vector<CategoryRepurchase> repurchase_diagnostics(const Dataset& dataset);

}  // namespace dfm
