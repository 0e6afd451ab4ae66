#pragma once
// Train/test splitting, posterior predictive probabilities, RMSE and accuracy
// metrics, own-price elasticities with credible intervals, and the
// replication grid driving the headline experiments.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/dgp.hpp"
#include "dfm/mixedlogit.hpp"
#include "dfm/model.hpp"
#include "dfm/rng.hpp"
#include "dfm/vi.hpp"

namespace dfm {

enum class SplitUnit { by_trip, by_observation };

struct SplitSpec {
  double train_fraction = 0.8;
  SplitUnit unit = SplitUnit::by_trip;
};

// by_trip sends each consumer's chronologically last ceil((1-f)*T) trips to
// test, so lags in test observations are always computed from full history;
// by_observation samples test rows uniformly (sensitivity analysis only).
// The rng is used only by by_observation.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, const SplitSpec& spec,
                                          const Rng& rng);

// Per-draw choice probabilities for every observation: one N x J_max matrix
// per draw, rows zero-padded past the observation's category size.
std::vector<Eigen::MatrixXd> predicted_probabilities(const std::vector<ParamDraw>& draws,
                                                     const Dataset& test, ModelKind kind);

struct RmseResult {
  std::vector<double> per_draw;
  double mean = 0.0;
};

// RMSE_s = sqrt( (1/(N*J)) sum_n sum_j (pred - truth)^2 ) per draw.
RmseResult rmse(const std::vector<Eigen::MatrixXd>& pred, const Eigen::MatrixXd& true_probs);

// Mean over draws of the per-draw argmax hit rate; argmax ties break to the
// lowest product index.
double accuracy(const std::vector<Eigen::MatrixXd>& pred, const std::vector<int>& chosen);

struct MetricsReport {
  double rmse_mean = 0.0;
  std::vector<double> rmse_per_draw;
  double accuracy = 0.0;
  int n_test = 0;
  double wall_time_seconds = 0.0;
};

// Streaming evaluation against the dataset's stored true probabilities,
// drawing S posterior samples from the variational state (one substream per
// draw) without materializing the S x N x J tensor.
MetricsReport metrics_from_state(const VariationalState& state, int n_draws,
                                 const Rng& rng, const Dataset& test, ModelKind kind);

struct ElasticityEntry {
  int category = 0;
  int product = 0;     // local index within the category
  double mean = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  int n_obs = 0;       // observations contributing to the pair
};

struct ElasticityReport {
  std::vector<ElasticityEntry> entries;  // ordered by (category, product)
};

// Own-price elasticity -(theta_i'lambda_j) * price * (1 - P) per draw and
// observation, averaged across a category's observations within each
// (category, product) pair, then summarized across draws by the mean and the
// empirical 2.5%/97.5% quantiles.
ElasticityReport own_price_elasticities(const std::vector<ParamDraw>& draws,
                                        const Dataset& dataset, ModelKind kind);

ElasticityReport elasticities_from_state(const VariationalState& state, int n_draws,
                                         const Rng& rng, const Dataset& dataset,
                                         ModelKind kind);

// --- Experiment grid -------------------------------------------------------

inline constexpr const char* kModelDynamic = "dynamic";
inline constexpr const char* kModelStatic = "static";
inline constexpr const char* kModelMixedLogit = "mixed-logit";

struct ExperimentSetting {
  std::string name;
  int n_consumers = 40;
  int n_categories = 10;
  int n_products = 10;  // per category
  int n_trips = 5;
  int n_factors = 5;
  std::vector<std::string> models{kModelDynamic};
  int n_eval_draws = 500;      // posterior draws for metrics
  bool elasticities = false;   // emit interval rows from replication 0
  SimConfig sim;               // dims/seed filled per replication
  FitConfig fit;               // kind/seed filled per model and replication
  MixedLogitSpec mixed;
  SplitSpec split;
};

struct ExperimentConfig {
  std::vector<ExperimentSetting> settings;
  int replications = 10;
  std::uint64_t base_seed = 1;
};

struct ReplicationRow {
  int setting = 0;
  int replication = 0;
  std::string model;
  std::uint64_t seed = 0;  // replication seed feeding simulation and fits
  double rmse = 0.0;
  double accuracy = 0.0;
  int n_train = 0;
  int n_test = 0;
  double fit_seconds = 0.0;
  bool converged = false;
  int iterations = 0;
  bool failed = false;
  std::string error;
};

struct SettingSummary {
  int setting = 0;
  std::string name;
  int n_consumers = 0, n_categories = 0, n_products = 0, n_trips = 0, n_factors = 0;
  std::string model;
  int replications_ok = 0;
  int replications_failed = 0;
  double rmse_mean = 0.0, rmse_sd = 0.0;
  double accuracy_mean = 0.0, accuracy_sd = 0.0;
  double n_train_mean = 0.0, n_test_mean = 0.0;
  double fit_seconds_mean = 0.0;
};

struct RepurchaseRow {
  int setting = 0;
  int replication = 0;
  CategoryRepurchase stats;
};

struct ElasticityGridRow {
  int setting = 0;
  std::string model;
  ElasticityEntry entry;
};

struct ExperimentResult {
  std::vector<SettingSummary> summaries;
  std::vector<ReplicationRow> details;       // ordered (setting, replication, model)
  std::vector<RepurchaseRow> repurchase;     // replication 0 of each setting
  std::vector<ElasticityGridRow> elasticity; // settings with elasticities enabled
};

// Deterministic replication seed derivation from the grid's base seed.
std::uint64_t replication_seed(std::uint64_t base_seed, int setting, int replication);

// Runs every (setting, replication): simulate, split, fit each model, score.
// Replications run on `parallelism` worker threads writing into preassigned
// slots, so the result is identical for any worker count. Failed replications
// carry their error message and are excluded from summaries.
ExperimentResult experiment_run(const ExperimentConfig& config, int parallelism = 1);

}  // namespace dfm
