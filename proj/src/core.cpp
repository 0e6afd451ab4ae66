#include "dfm/core.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dfm {

using nlohmann::json;

void Dims::validate() const {
  if (n_consumers <= 0) throw std::invalid_argument("n_consumers must be positive");
  if (n_trips <= 0) throw std::invalid_argument("n_trips must be positive");
  if (n_factors <= 0) throw std::invalid_argument("n_factors must be positive");
  if (products_per_category.empty())
    throw std::invalid_argument("products_per_category must be non-empty");
  for (int j : products_per_category)
    if (j <= 0) throw std::invalid_argument("products_per_category entries must be positive");
}

ValidationResult validate_dataset(const Dataset& dataset, double price_floor) {
  ValidationResult result;
  auto flag = [&](std::size_t idx, std::string rule, std::string detail) {
    result.ok = false;
    result.violations.push_back({idx, std::move(rule), std::move(detail)});
  };

  const Dims& dims = dataset.dims;
  try {
    dims.validate();
  } catch (const std::invalid_argument& e) {
    flag(0, "bad dims", e.what());
    return result;
  }

  // last_choice[(consumer, category)] = most recent chosen product, for lag
  // consistency checks.
  std::map<std::pair<int, int>, int> last_choice;
  const Observation* prev = nullptr;

  for (std::size_t idx = 0; idx < dataset.observations.size(); ++idx) {
    const Observation& obs = dataset.observations[idx];
    std::ostringstream at;
    at << "consumer " << obs.consumer << " trip " << obs.trip << " category " << obs.category;

    if (obs.consumer < 0 || obs.consumer >= dims.n_consumers) {
      flag(idx, "consumer out of range", at.str());
      continue;
    }
    if (obs.trip < 0 || obs.trip >= dims.n_trips) {
      flag(idx, "trip out of range", at.str());
      continue;
    }
    if (obs.category < 0 || obs.category >= dims.n_categories()) {
      flag(idx, "category out of range", at.str());
      continue;
    }

    const int n_products = dims.products_in(obs.category);
    if (obs.prices.size() != n_products)
      flag(idx, "price vector length mismatch", at.str());
    for (int j = 0; j < obs.prices.size(); ++j) {
      const double p = obs.prices[j];
      if (!std::isfinite(p) || p < price_floor - 1e-12) {
        std::ostringstream d;
        d << at.str() << " product " << j << " price " << p;
        flag(idx, "price below truncation floor", d.str());
      }
    }

    if (obs.chosen < 0 || obs.chosen >= n_products)
      flag(idx, "chosen product out of range", at.str());
    if (obs.lag < -1 || obs.lag >= n_products)
      flag(idx, "lag product out of range", at.str());

    if (prev != nullptr) {
      const bool ordered =
          std::tie(prev->consumer, prev->trip, prev->category) <
          std::tie(obs.consumer, obs.trip, obs.category);
      if (!ordered) flag(idx, "observations out of order", at.str());
    }
    prev = &obs;

    // Lag must equal the previously recorded choice for this (consumer,
    // category) pair whenever one exists. A lag with no prior occasion is
    // allowed: the simulator seeds an exogenous initial state.
    auto key = std::make_pair(obs.consumer, obs.category);
    auto it = last_choice.find(key);
    if (it != last_choice.end() && obs.lag != it->second) {
      std::ostringstream d;
      d << at.str() << " lag " << obs.lag << " but previous choice " << it->second;
      flag(idx, "lag mismatch", d.str());
    }
    if (obs.chosen >= 0 && obs.chosen < n_products) last_choice[key] = obs.chosen;
  }

  if (dataset.true_probs.has_value()) {
    const Eigen::MatrixXd& probs = *dataset.true_probs;
    if (probs.rows() != static_cast<Eigen::Index>(dataset.observations.size()) ||
        probs.cols() != dims.max_products())
      flag(0, "true_probs shape mismatch", "");
  }

  return result;
}

// --- CSV ------------------------------------------------------------------

void write_dataset_csv(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "consumer,trip,category,product,price,lag,chosen\n";
  char price_buf[32];
  for (const Observation& obs : dataset.observations) {
    for (int j = 0; j < obs.prices.size(); ++j) {
      std::snprintf(price_buf, sizeof(price_buf), "%.6f", obs.prices[j]);
      out << obs.consumer << ',' << obs.trip << ',' << obs.category << ',' << j << ','
          << price_buf << ',' << (obs.lag == j ? 1 : 0) << ',' << (obs.chosen == j ? 1 : 0)
          << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
  if (!rows.is_array()) throw ParseError("expected array of rows");
  const Eigen::Index n_rows = static_cast<Eigen::Index>(rows.size());
  if (n_rows == 0) return Eigen::MatrixXd(0, 0);
  const Eigen::Index n_cols = static_cast<Eigen::Index>(rows.at(0).size());
  Eigen::MatrixXd m(n_rows, n_cols);
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const json& row = rows.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != n_cols)
      throw ParseError("ragged matrix rows");
    for (Eigen::Index c = 0; c < n_cols; ++c)
      m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

}  // namespace

void write_sidecar_json(const DatasetBundle& bundle, const std::string& path) {
  json doc;
  doc["dims"] = {
      {"n_consumers", bundle.dataset.dims.n_consumers},
      {"n_trips", bundle.dataset.dims.n_trips},
      {"n_factors", bundle.dataset.dims.n_factors},
      {"products_per_category", bundle.dataset.dims.products_per_category},
  };
  doc["seed"] = bundle.seed;
  if (bundle.truth.has_value()) {
    doc["true_params"] = {
        {"theta", matrix_to_json(bundle.truth->theta)},
        {"gamma", matrix_to_json(bundle.truth->gamma)},
        {"lambda", matrix_to_json(bundle.truth->lambda)},
        {"rho", matrix_to_json(bundle.truth->rho)},
    };
  }
  if (bundle.dataset.true_probs.has_value())
    doc["true_probs"] = matrix_to_json(*bundle.dataset.true_probs);

  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

void write_bundle(const DatasetBundle& bundle, const std::string& csv_path,
                  const std::string& json_path) {
  write_dataset_csv(bundle.dataset, csv_path);
  write_sidecar_json(bundle, json_path);
}

DatasetBundle read_bundle(const std::string& csv_path, const std::string& json_path) {
  std::ifstream jin(json_path);
  if (!jin) throw IoError("cannot open: " + json_path);
  json doc;
  try {
    jin >> doc;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("bad sidecar json: ") + e.what());
  }

  DatasetBundle bundle;
  try {
    const json& jd = doc.at("dims");
    bundle.dataset.dims.n_consumers = jd.at("n_consumers").get<int>();
    bundle.dataset.dims.n_trips = jd.at("n_trips").get<int>();
    bundle.dataset.dims.n_factors = jd.at("n_factors").get<int>();
    bundle.dataset.dims.products_per_category =
        jd.at("products_per_category").get<std::vector<int>>();
    bundle.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("true_params")) {
      const json& jt = doc.at("true_params");
      TrueParams truth;
      truth.theta = matrix_from_json(jt.at("theta"));
      truth.gamma = matrix_from_json(jt.at("gamma"));
      truth.lambda = matrix_from_json(jt.at("lambda"));
      truth.rho = matrix_from_json(jt.at("rho"));
      bundle.truth = std::move(truth);
    }
    if (doc.contains("true_probs"))
      bundle.dataset.true_probs = matrix_from_json(doc.at("true_probs"));
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad sidecar json: ") + e.what());
  }
  bundle.dataset.dims.validate();

  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open: " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty csv: " + csv_path);
  if (line != "consumer,trip,category,product,price,lag,chosen")
    throw ParseError("unexpected csv header: " + line);

  const Dims& dims = bundle.dataset.dims;
  Observation current;
  bool have_current = false;
  bool have_lag = false, have_chosen = false;
  std::size_t line_no = 1;

  auto finish_observation = [&]() {
    if (!have_current) return;
    if (!have_chosen) {
      std::ostringstream d;
      d << "no chosen product for consumer " << current.consumer << " trip " << current.trip
        << " category " << current.category;
      throw ParseError(d.str());
    }
    if (!have_lag) current.lag = -1;
    bundle.dataset.observations.push_back(current);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    int consumer, trip, category, product, lag_flag, chosen_flag;
    double price;
    const int n = std::sscanf(line.c_str(), "%d,%d,%d,%d,%lf,%d,%d", &consumer, &trip,
                              &category, &product, &price, &lag_flag, &chosen_flag);
    if (n != 7) {
      std::ostringstream d;
      d << csv_path << ":" << line_no << ": malformed row: " << line;
      throw ParseError(d.str());
    }
    if (category < 0 || category >= dims.n_categories()) {
      std::ostringstream d;
      d << csv_path << ":" << line_no << ": category out of range: " << category;
      throw ParseError(d.str());
    }
    const int n_products = dims.products_in(category);
    if (product < 0 || product >= n_products) {
      std::ostringstream d;
      d << csv_path << ":" << line_no << ": product out of range: " << product;
      throw ParseError(d.str());
    }

    const bool new_obs = !have_current || consumer != current.consumer ||
                         trip != current.trip || category != current.category;
    if (new_obs) {
      finish_observation();
      current.consumer = consumer;
      current.trip = trip;
      current.category = category;
      current.prices = Eigen::VectorXd::Zero(n_products);
      current.lag = -1;
      current.chosen = -1;
      have_current = true;
      have_lag = have_chosen = false;
    }
    current.prices[product] = price;
    if (lag_flag) {
      current.lag = product;
      have_lag = true;
    }
    if (chosen_flag) {
      current.chosen = product;
      have_chosen = true;
    }
  }
  finish_observation();

  return bundle;
}

}  // namespace dfm
