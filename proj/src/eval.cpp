#include "dfm/eval.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "dfm/numeric.hpp"

namespace dfm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Dataset take_rows(const Dataset& dataset, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.dims = dataset.dims;
  out.observations.reserve(rows.size());
  for (std::size_t n : rows) out.observations.push_back(dataset.observations[n]);
  if (dataset.true_probs.has_value()) {
    Eigen::MatrixXd probs(static_cast<Eigen::Index>(rows.size()),
                          dataset.true_probs->cols());
    for (std::size_t k = 0; k < rows.size(); ++k)
      probs.row(static_cast<Eigen::Index>(k)) =
          dataset.true_probs->row(static_cast<Eigen::Index>(rows[k]));
    out.true_probs = std::move(probs);
  }
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, const SplitSpec& spec,
                                          const Rng& rng) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must lie in (0,1)");
  const std::size_t N = dataset.observations.size();
  std::vector<std::size_t> train_rows, test_rows;

  if (spec.unit == SplitUnit::by_trip) {
    const int T = dataset.dims.n_trips;
    // ceil((1-f)*T) with a guard against float noise at exact multiples
    const int n_test_trips = static_cast<int>(
        std::ceil((1.0 - spec.train_fraction) * T - 1e-9));
    const int first_test_trip = T - n_test_trips;
    if (n_test_trips <= 0 || first_test_trip <= 0)
      throw std::invalid_argument("split leaves an empty side (adjust T or fraction)");
    for (std::size_t n = 0; n < N; ++n)
      (dataset.observations[n].trip >= first_test_trip ? test_rows : train_rows)
          .push_back(n);
  } else {
    const std::size_t n_test = static_cast<std::size_t>(
        std::llround((1.0 - spec.train_fraction) * static_cast<double>(N)));
    if (n_test == 0 || n_test >= N)
      throw std::invalid_argument("split leaves an empty side (adjust N or fraction)");
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng pick = rng;
    for (std::size_t b = 0; b < n_test; ++b) {
      const std::size_t j = b + pick.uniform_int(static_cast<int>(N - b));
      std::swap(order[b], order[j]);
    }
    std::vector<bool> is_test(N, false);
    for (std::size_t b = 0; b < n_test; ++b) is_test[order[b]] = true;
    for (std::size_t n = 0; n < N; ++n)
      (is_test[n] ? test_rows : train_rows).push_back(n);
  }

  if (train_rows.empty() || test_rows.empty())
    throw std::invalid_argument("split leaves an empty side");
  return {take_rows(dataset, train_rows), take_rows(dataset, test_rows)};
}

namespace {

Eigen::MatrixXd probabilities_for_draw(const ParamDraw& draw, const Dataset& dataset,
                                       ModelKind kind, const std::vector<int>& offsets) {
  const Eigen::Index N = static_cast<Eigen::Index>(dataset.observations.size());
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(N, dataset.dims.max_products());
  for (Eigen::Index n = 0; n < N; ++n) {
    const Observation& obs = dataset.observations[static_cast<std::size_t>(n)];
    const Eigen::VectorXd u =
        observation_utilities(obs, offsets[obs.category], draw, kind);
    probs.row(n).head(u.size()) = choice_probabilities(u).transpose();
  }
  return probs;
}

}  // namespace

std::vector<Eigen::MatrixXd> predicted_probabilities(const std::vector<ParamDraw>& draws,
                                                     const Dataset& test, ModelKind kind) {
  if (draws.empty()) throw std::invalid_argument("predicted_probabilities: no draws");
  const std::vector<int> offsets = test.dims.product_offsets();
  std::vector<Eigen::MatrixXd> tensor;
  tensor.reserve(draws.size());
  for (const ParamDraw& draw : draws)
    tensor.push_back(probabilities_for_draw(draw, test, kind, offsets));
  return tensor;
}

RmseResult rmse(const std::vector<Eigen::MatrixXd>& pred,
                const Eigen::MatrixXd& true_probs) {
  RmseResult result;
  result.per_draw.reserve(pred.size());
  for (const Eigen::MatrixXd& p : pred) {
    if (p.rows() != true_probs.rows() || p.cols() != true_probs.cols())
      throw std::invalid_argument("rmse: shape mismatch");
    const double mse =
        (p - true_probs).squaredNorm() / static_cast<double>(p.rows() * p.cols());
    result.per_draw.push_back(std::sqrt(mse));
  }
  result.mean = mean(result.per_draw);
  return result;
}

double accuracy(const std::vector<Eigen::MatrixXd>& pred, const std::vector<int>& chosen) {
  if (pred.empty()) throw std::invalid_argument("accuracy: no draws");
  std::vector<double> per_draw;
  per_draw.reserve(pred.size());
  for (const Eigen::MatrixXd& p : pred) {
    if (p.rows() != static_cast<Eigen::Index>(chosen.size()))
      throw std::invalid_argument("accuracy: shape mismatch");
    int hits = 0;
    for (Eigen::Index n = 0; n < p.rows(); ++n) {
      Eigen::Index argmax = 0;
      p.row(n).maxCoeff(&argmax);
      if (static_cast<int>(argmax) == chosen[static_cast<std::size_t>(n)]) ++hits;
    }
    per_draw.push_back(static_cast<double>(hits) / static_cast<double>(p.rows()));
  }
  return mean(per_draw);
}

MetricsReport metrics_from_state(const VariationalState& state, int n_draws,
                                 const Rng& rng, const Dataset& test, ModelKind kind) {
  if (n_draws < 1) throw std::invalid_argument("metrics_from_state: n_draws must be >= 1");
  if (!test.true_probs.has_value())
    throw std::invalid_argument("metrics_from_state: dataset lacks true probabilities");
  const auto start = std::chrono::steady_clock::now();

  const std::vector<int> offsets = test.dims.product_offsets();
  const int D = state.size();
  Eigen::VectorXd eps(D);
  MetricsReport report;
  report.n_test = static_cast<int>(test.observations.size());
  report.rmse_per_draw.reserve(static_cast<std::size_t>(n_draws));
  std::vector<double> acc_per_draw;
  acc_per_draw.reserve(static_cast<std::size_t>(n_draws));

  for (int s = 0; s < n_draws; ++s) {
    Rng r = rng.stream(static_cast<std::uint64_t>(s));
    for (int d = 0; d < D; ++d) eps[d] = r.normal();
    const ParamDraw draw = sample_reparam(state, eps);
    const Eigen::MatrixXd probs = probabilities_for_draw(draw, test, kind, offsets);

    const double mse = (probs - *test.true_probs).squaredNorm() /
                       static_cast<double>(probs.rows() * probs.cols());
    report.rmse_per_draw.push_back(std::sqrt(mse));

    int hits = 0;
    for (Eigen::Index n = 0; n < probs.rows(); ++n) {
      Eigen::Index argmax = 0;
      probs.row(n).maxCoeff(&argmax);
      if (static_cast<int>(argmax) ==
          test.observations[static_cast<std::size_t>(n)].chosen)
        ++hits;
    }
    acc_per_draw.push_back(static_cast<double>(hits) /
                           static_cast<double>(probs.rows()));
  }

  report.rmse_mean = mean(report.rmse_per_draw);
  report.accuracy = mean(acc_per_draw);
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

// Mean own-price elasticity per global product index for one draw; NaN for
// products whose category has no observations.
Eigen::VectorXd per_pair_elasticities(const ParamDraw& draw, const Dataset& dataset,
                                      ModelKind kind, const std::vector<int>& offsets,
                                      const std::vector<int>& category_obs) {
  const int P = dataset.dims.n_products_total();
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(P);
  for (const Observation& obs : dataset.observations) {
    const int off = offsets[obs.category];
    const Eigen::VectorXd theta_i = draw.theta.row(obs.consumer).transpose();
    const Eigen::VectorXd u = observation_utilities(obs, off, draw, kind);
    const Eigen::VectorXd probs = choice_probabilities(u);
    for (int j = 0; j < obs.prices.size(); ++j) {
      const double sensitivity = theta_i.dot(draw.lambda.col(off + j));
      sums[off + j] += -sensitivity * obs.prices[j] * (1.0 - probs[j]);
    }
  }
  Eigen::VectorXd means(P);
  const std::vector<int> category_starts = offsets;
  for (int c = 0; c < dataset.dims.n_categories(); ++c)
    for (int jj = category_starts[c]; jj < category_starts[c + 1]; ++jj)
      means[jj] = category_obs[c] > 0 ? sums[jj] / category_obs[c] : kNaN;
  return means;
}

std::vector<int> observations_per_category(const Dataset& dataset) {
  std::vector<int> count(dataset.dims.n_categories(), 0);
  for (const Observation& obs : dataset.observations) ++count[obs.category];
  return count;
}

ElasticityReport summarize_elasticities(const Eigen::MatrixXd& per_draw,  // P x S
                                        const Dataset& dataset,
                                        const std::vector<int>& category_obs) {
  const std::vector<int> offsets = dataset.dims.product_offsets();
  ElasticityReport report;
  for (int c = 0; c < dataset.dims.n_categories(); ++c)
    for (int j = 0; j < dataset.dims.products_in(c); ++j) {
      const int jj = offsets[c] + j;
      ElasticityEntry entry;
      entry.category = c;
      entry.product = j;
      entry.n_obs = category_obs[c];
      if (category_obs[c] > 0) {
        std::vector<double> values(per_draw.cols());
        for (Eigen::Index s = 0; s < per_draw.cols(); ++s) values[s] = per_draw(jj, s);
        entry.mean = mean(values);
        entry.q025 = quantile(values, 0.025);
        entry.q975 = quantile(values, 0.975);
      } else {
        entry.mean = entry.q025 = entry.q975 = kNaN;
      }
      report.entries.push_back(entry);
    }
  return report;
}

}  // namespace

ElasticityReport own_price_elasticities(const std::vector<ParamDraw>& draws,
                                        const Dataset& dataset, ModelKind kind) {
  if (draws.empty()) throw std::invalid_argument("own_price_elasticities: no draws");
  const std::vector<int> offsets = dataset.dims.product_offsets();
  const std::vector<int> category_obs = observations_per_category(dataset);
  Eigen::MatrixXd per_draw(dataset.dims.n_products_total(),
                           static_cast<Eigen::Index>(draws.size()));
  for (std::size_t s = 0; s < draws.size(); ++s)
    per_draw.col(static_cast<Eigen::Index>(s)) =
        per_pair_elasticities(draws[s], dataset, kind, offsets, category_obs);
  return summarize_elasticities(per_draw, dataset, category_obs);
}

ElasticityReport elasticities_from_state(const VariationalState& state, int n_draws,
                                         const Rng& rng, const Dataset& dataset,
                                         ModelKind kind) {
  if (n_draws < 1)
    throw std::invalid_argument("elasticities_from_state: n_draws must be >= 1");
  const std::vector<int> offsets = dataset.dims.product_offsets();
  const std::vector<int> category_obs = observations_per_category(dataset);
  const int D = state.size();
  Eigen::VectorXd eps(D);
  Eigen::MatrixXd per_draw(dataset.dims.n_products_total(), n_draws);
  for (int s = 0; s < n_draws; ++s) {
    Rng r = rng.stream(static_cast<std::uint64_t>(s));
    for (int d = 0; d < D; ++d) eps[d] = r.normal();
    per_draw.col(s) = per_pair_elasticities(sample_reparam(state, eps), dataset, kind,
                                            offsets, category_obs);
  }
  return summarize_elasticities(per_draw, dataset, category_obs);
}

// --- Experiment grid -------------------------------------------------------

std::uint64_t replication_seed(std::uint64_t base_seed, int setting, int replication) {
  using detail::splitmix64;
  const std::uint64_t a =
      splitmix64(base_seed ^ splitmix64(0x9E3779B97F4A7C15ULL +
                                        static_cast<std::uint64_t>(setting)));
  return splitmix64(a ^ splitmix64(0xBF58476D1CE4E5B9ULL +
                                   static_cast<std::uint64_t>(replication)));
}

namespace {

struct ReplicationOutput {
  std::vector<ReplicationRow> rows;          // one per model
  std::vector<RepurchaseRow> repurchase;     // replication 0 only
  std::vector<ElasticityGridRow> elasticity; // replication 0 only
};

ModelKind model_kind_of(const std::string& model) {
  return model == kModelStatic ? ModelKind::static_factor : ModelKind::dynamic_factor;
}

void run_replication(const ExperimentSetting& setting, int setting_index,
                     int replication, std::uint64_t base_seed, ReplicationOutput& out) {
  const std::uint64_t seed = replication_seed(base_seed, setting_index, replication);

  out.rows.clear();
  for (const std::string& model : setting.models) {
    ReplicationRow row;
    row.setting = setting_index;
    row.replication = replication;
    row.model = model;
    row.seed = seed;
    out.rows.push_back(std::move(row));
  }

  Dataset train, test;
  DatasetBundle bundle;
  try {
    SimConfig sim = setting.sim;
    sim.dims = Dims::uniform(setting.n_consumers, setting.n_categories,
                             setting.n_products, setting.n_trips, setting.n_factors);
    sim.seed = seed;
    bundle = simulate(sim);
    std::tie(train, test) =
        split_dataset(bundle.dataset, setting.split, Rng(seed).stream("split"));
  } catch (const std::exception& e) {
    for (ReplicationRow& row : out.rows) {
      row.failed = true;
      row.error = std::string("simulation: ") + e.what();
    }
    return;
  }

  if (replication == 0) {
    for (const CategoryRepurchase& stats : repurchase_diagnostics(bundle.dataset))
      out.repurchase.push_back({setting_index, replication, stats});
  }

  for (std::size_t m = 0; m < setting.models.size(); ++m) {
    ReplicationRow& row = out.rows[m];
    row.n_train = static_cast<int>(train.observations.size());
    row.n_test = static_cast<int>(test.observations.size());
    const std::uint64_t fit_seed =
        replication_seed(seed, 100 + static_cast<int>(m), 0);
    try {
      if (row.model == kModelMixedLogit) {
        const auto start = std::chrono::steady_clock::now();
        const CoefficientDraws draws = halton_normal_draws(
            train.dims.n_consumers, setting.mixed.n_sim_draws,
            setting.mixed.halton_burn_in);
        std::vector<MixedLogitFit> fits;
        bool all_converged = true;
        int max_iterations = 0;
        for (int c = 0; c < train.dims.n_categories(); ++c) {
          MixedLogitFit fit_c = fit_mixed_logit(category_subset(train, c), setting.mixed);
          all_converged = all_converged && fit_c.converged;
          fits.push_back(std::move(fit_c));
        }
        row.fit_seconds = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - start)
                              .count();
        row.converged = all_converged;
        row.iterations = max_iterations;

        Eigen::MatrixXd pred = Eigen::MatrixXd::Zero(
            static_cast<Eigen::Index>(test.observations.size()),
            test.dims.max_products());
        for (std::size_t n = 0; n < test.observations.size(); ++n) {
          const Observation& obs = test.observations[n];
          pred.row(static_cast<Eigen::Index>(n))
              .head(obs.prices.size()) =
              predict_mixed_logit(fits[obs.category], obs, draws).transpose();
        }
        const RmseResult r = rmse({pred}, *test.true_probs);
        row.rmse = r.mean;
        std::vector<int> chosen;
        chosen.reserve(test.observations.size());
        for (const Observation& obs : test.observations) chosen.push_back(obs.chosen);
        row.accuracy = accuracy({pred}, chosen);
      } else {
        const ModelKind kind = model_kind_of(row.model);
        FitConfig fc = setting.fit;
        fc.kind = kind;
        fc.n_factors = setting.n_factors;
        fc.seed = fit_seed;
        const FitResult result = fit(train, fc);
        row.fit_seconds = result.wall_time_seconds;
        row.converged = result.converged;
        row.iterations = result.iterations_run;

        const MetricsReport metrics =
            metrics_from_state(result.state, setting.n_eval_draws,
                               Rng(fit_seed).stream("draws"), test, kind);
        row.rmse = metrics.rmse_mean;
        row.accuracy = metrics.accuracy;

        if (setting.elasticities && replication == 0) {
          const ElasticityReport report = elasticities_from_state(
              result.state, setting.n_eval_draws, Rng(fit_seed).stream("elasticity"),
              train, kind);
          for (const ElasticityEntry& entry : report.entries)
            out.elasticity.push_back({setting_index, row.model, entry});
        }
      }
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
  }
}

}  // namespace

ExperimentResult experiment_run(const ExperimentConfig& config, int parallelism) {
  if (config.replications < 1)
    throw std::invalid_argument("experiment: replications must be >= 1");
  if (config.settings.empty())
    throw std::invalid_argument("experiment: no settings");

  struct Task {
    int setting;
    int replication;
  };
  std::vector<Task> tasks;
  for (int s = 0; s < static_cast<int>(config.settings.size()); ++s)
    for (int r = 0; r < config.replications; ++r) tasks.push_back({s, r});

  // Preassigned output slots make the result independent of scheduling.
  std::vector<ReplicationOutput> slots(tasks.size());
  auto run_task = [&](std::size_t index) {
    const Task& task = tasks[index];
    run_replication(config.settings[static_cast<std::size_t>(task.setting)],
                    task.setting, task.replication, config.base_seed, slots[index]);
  };

  const int workers =
      std::max(1, std::min<int>(parallelism, static_cast<int>(tasks.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) run_task(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&]() {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= tasks.size()) return;
          run_task(i);
        }
      });
    for (std::thread& t : pool) t.join();
  }

  ExperimentResult result;
  for (const ReplicationOutput& slot : slots) {
    result.details.insert(result.details.end(), slot.rows.begin(), slot.rows.end());
    result.repurchase.insert(result.repurchase.end(), slot.repurchase.begin(),
                             slot.repurchase.end());
    result.elasticity.insert(result.elasticity.end(), slot.elasticity.begin(),
                             slot.elasticity.end());
  }

  for (int s = 0; s < static_cast<int>(config.settings.size()); ++s) {
    const ExperimentSetting& setting = config.settings[static_cast<std::size_t>(s)];
    for (const std::string& model : setting.models) {
      SettingSummary summary;
      summary.setting = s;
      summary.name = setting.name;
      summary.n_consumers = setting.n_consumers;
      summary.n_categories = setting.n_categories;
      summary.n_products = setting.n_products;
      summary.n_trips = setting.n_trips;
      summary.n_factors = setting.n_factors;
      summary.model = model;

      std::vector<double> rmses, accs, fit_secs, n_train, n_test;
      for (const ReplicationRow& row : result.details) {
        if (row.setting != s || row.model != model) continue;
        if (row.failed) {
          ++summary.replications_failed;
          continue;
        }
        ++summary.replications_ok;
        rmses.push_back(row.rmse);
        accs.push_back(row.accuracy);
        fit_secs.push_back(row.fit_seconds);
        n_train.push_back(row.n_train);
        n_test.push_back(row.n_test);
      }
      if (!rmses.empty()) {
        summary.rmse_mean = mean(rmses);
        summary.accuracy_mean = mean(accs);
        summary.fit_seconds_mean = mean(fit_secs);
        summary.n_train_mean = mean(n_train);
        summary.n_test_mean = mean(n_test);
        summary.rmse_sd = rmses.size() >= 2 ? sample_sd(rmses) : 0.0;
        summary.accuracy_sd = accs.size() >= 2 ? sample_sd(accs) : 0.0;
      }
      result.summaries.push_back(std::move(summary));
    }
  }
  return result;
}

}  // namespace dfm
