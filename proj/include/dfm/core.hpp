#pragma once
// Domain types shared by every module: problem dimensions, latent factor
// parameter blocks, the long-format purchase panel, and dataset validation.
//
// Product indexing is global: category blocks are concatenated, so category c
// owns the half-open global index range [offset(c), offset(c) + J_c). All
// parameter matrices address products by this global index.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dfm {

struct Dims {
  int n_consumers = 0;                     // I
  int n_trips = 0;                         // T
  int n_factors = 0;                       // K
  std::vector<int> products_per_category;  // J_c, one entry per category

  int n_categories() const { return static_cast<int>(products_per_category.size()); }

  int products_in(int category) const { return products_per_category[category]; }

  int product_offset(int category) const {
    int off = 0;
    for (int c = 0; c < category; ++c) off += products_per_category[c];
    return off;
  }

  // Prefix sums of products_per_category, length C+1; entry c is the global
  // index of category c's first product.
  std::vector<int> product_offsets() const {
    std::vector<int> off(products_per_category.size() + 1, 0);
    for (std::size_t c = 0; c < products_per_category.size(); ++c)
      off[c + 1] = off[c] + products_per_category[c];
    return off;
  }

  int n_products_total() const { return product_offset(n_categories()); }

  int max_products() const {
    int m = 0;
    for (int j : products_per_category) m = std::max(m, j);
    return m;
  }

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  static Dims uniform(int I, int C, int J, int T, int K) {
    Dims d;
    d.n_consumers = I;
    d.n_trips = T;
    d.n_factors = K;
    d.products_per_category.assign(static_cast<std::size_t>(C < 0 ? 0 : C), J);
    return d;
  }

  bool operator==(const Dims&) const = default;
};

// Latent factor blocks. theta is I x K (row i = consumer factor vector);
// gamma/lambda/rho are K x P with P the total product count, columns addressed
// by global product index. rho has zero columns for the static model.
struct FactorParams {
  Eigen::MatrixXd theta;
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd lambda;
  Eigen::MatrixXd rho;

  bool has_inertia() const { return rho.cols() > 0; }
};

using TrueParams = FactorParams;
using ParamDraw = FactorParams;

// One purchase occasion: consumer i bought in `category` on `trip`, facing
// `prices` (length J_c), with `lag` the in-category product chosen on the most
// recent previous occasion (-1 when there is none) and `chosen` the product
// bought now. Product indices are local to the category.
struct Observation {
  int consumer = 0;
  int trip = 0;
  int category = 0;
  Eigen::VectorXd prices;
  int lag = -1;
  int chosen = 0;
};

struct Dataset {
  Dims dims;
  std::vector<Observation> observations;  // sorted by (consumer, trip, category)
  // Ground-truth choice probabilities, one row per observation, J_max columns
  // (padded with zeros past J_c). Present on simulator output only.
  std::optional<Eigen::MatrixXd> true_probs;

  std::size_t n_observations() const { return observations.size(); }
};

struct ValidationIssue {
  std::size_t obs_index = 0;
  std::string rule;
  std::string detail;
};

struct ValidationResult {
  bool ok = true;
  std::vector<ValidationIssue> violations;
};

// Checks every Dataset invariant: ordering, index ranges, price floor, the
// at-most-one lag indicator, and lag consistency with the previous choice in
// the same (consumer, category). Violations are data, not faults.
ValidationResult validate_dataset(const Dataset& dataset, double price_floor = 0.1);

// ---------------------------------------------------------------------------
// File formats.
//
// Dataset CSV: one row per (observation, product),
//   consumer,trip,category,product,price,lag,chosen
// with 0-based indices, prices printed with 6 fractional digits, and lag /
// chosen as 0/1 flags. A JSON sidecar carries dims, the simulation seed, and
// (optionally) the true parameters and choice probabilities.

struct DatasetBundle {
  Dataset dataset;
  std::uint64_t seed = 0;
  std::optional<TrueParams> truth;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_dataset_csv(const Dataset& dataset, const std::string& path);
void write_sidecar_json(const DatasetBundle& bundle, const std::string& path);
void write_bundle(const DatasetBundle& bundle, const std::string& csv_path,
                  const std::string& json_path);

// Reading requires the sidecar first (it carries dims).
DatasetBundle read_bundle(const std::string& csv_path, const std::string& json_path);

}  // namespace dfm
