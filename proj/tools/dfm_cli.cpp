// Command-line surface: simulate panels, fit models, evaluate predictions,
// compute elasticities, run replication grids, and print inertia diagnostics.
//
// Configuration precedence: built-in defaults, then the JSON config file,
// then explicit flags. Every command writes its outputs plus a manifest.json
// recording the resolved config hash, seed, input/output digests, and a
// timestamp (the single volatile field, alongside wall-time metrics).
//
// Exit codes: 0 success, 2 config/validation error, 3 I/O error, 4 numerical
// failure, 5 all replications of an experiment setting failed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dfm/core.hpp"
#include "dfm/dgp.hpp"
#include "dfm/eval.hpp"
#include "dfm/mixedlogit.hpp"
#include "dfm/model.hpp"
#include "dfm/rng.hpp"
#include "dfm/vi.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dfm;

namespace {

constexpr const char* kVersion = "1.0.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- Small file helpers ----------------------------------------------------

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << content;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string hex_digest(const std::string& bytes) {
  const std::uint64_t h = fnv1a64(std::string_view(bytes));
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_digest(const fs::path& path) { return hex_digest(read_file(path)); }

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  try {
    json doc;
    in >> doc;
    return doc;
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// --- Typed config field access (errors name the JSON field) ---------------

template <typename T>
T field_or(const json& doc, const std::string& key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field `" + key + "` has the wrong type");
  }
}

int positive_field(const json& doc, const std::string& key, int fallback) {
  const int v = field_or<int>(doc, key, fallback);
  if (v <= 0) throw ConfigError("config field `" + key + "` must be positive");
  return v;
}

Interval interval_field(const json& doc, const std::string& key, Interval fallback) {
  if (!doc.contains(key)) return fallback;
  const auto v = field_or<std::vector<double>>(doc, key, {});
  if (v.size() != 2 || !(v[0] <= v[1]))
    throw ConfigError("config field `" + key + "` must be [lo, hi] with lo <= hi");
  return {v[0], v[1]};
}

// --- Simulation config -----------------------------------------------------

SimConfig sim_config_from_json(const json& doc) {
  SimConfig config;
  const int I = positive_field(doc, "I", 40);
  const int C = positive_field(doc, "C", 10);
  const int T = positive_field(doc, "T", 5);
  const int K = positive_field(doc, "K", 5);
  if (doc.contains("products_per_category")) {
    config.dims.products_per_category =
        field_or<std::vector<int>>(doc, "products_per_category", {});
    for (int j : config.dims.products_per_category)
      if (j <= 0)
        throw ConfigError("config field `products_per_category` must be positive");
    if (static_cast<int>(config.dims.products_per_category.size()) != C)
      throw ConfigError("config field `products_per_category` must have C entries");
    config.dims.n_consumers = I;
    config.dims.n_trips = T;
    config.dims.n_factors = K;
  } else {
    const int J = positive_field(doc, "J", 10);
    config.dims = Dims::uniform(I, C, J, T, K);
  }
  config.theta_range = interval_field(doc, "theta_range", config.theta_range);
  config.gamma_range = interval_field(doc, "gamma_range", config.gamma_range);
  config.lambda_range = interval_field(doc, "lambda_range", config.lambda_range);
  config.rho_range = interval_field(doc, "rho_range", config.rho_range);
  config.price_level_range =
      interval_field(doc, "price_level_range", config.price_level_range);
  config.price_dispersion_range =
      interval_field(doc, "price_dispersion_range", config.price_dispersion_range);
  config.price_shock_scale =
      field_or<double>(doc, "price_shock_scale", config.price_shock_scale);
  if (config.price_shock_scale < 0)
    throw ConfigError("config field `price_shock_scale` must be >= 0");
  config.price_floor = field_or<double>(doc, "price_floor", config.price_floor);
  if (config.price_floor <= 0)
    throw ConfigError("config field `price_floor` must be > 0");
  config.exogenous_init = field_or<bool>(doc, "exogenous_init", config.exogenous_init);
  config.seed = field_or<std::uint64_t>(doc, "seed", config.seed);
  return config;
}

json sim_config_to_json(const SimConfig& c) {
  json doc;
  doc["I"] = c.dims.n_consumers;
  doc["C"] = c.dims.n_categories();
  doc["T"] = c.dims.n_trips;
  doc["K"] = c.dims.n_factors;
  doc["products_per_category"] = c.dims.products_per_category;
  doc["theta_range"] = {c.theta_range.lo, c.theta_range.hi};
  doc["gamma_range"] = {c.gamma_range.lo, c.gamma_range.hi};
  doc["lambda_range"] = {c.lambda_range.lo, c.lambda_range.hi};
  doc["rho_range"] = {c.rho_range.lo, c.rho_range.hi};
  doc["price_level_range"] = {c.price_level_range.lo, c.price_level_range.hi};
  doc["price_dispersion_range"] = {c.price_dispersion_range.lo, c.price_dispersion_range.hi};
  doc["price_shock_scale"] = c.price_shock_scale;
  doc["price_floor"] = c.price_floor;
  doc["exogenous_init"] = c.exogenous_init;
  doc["seed"] = c.seed;
  return doc;
}

// --- Fit config ------------------------------------------------------------

FitConfig fit_config_from_json(const json& doc, FitConfig base) {
  base.prior.scale = field_or<double>(doc, "prior_scale", base.prior.scale);
  if (base.prior.scale <= 0) throw ConfigError("config field `prior_scale` must be > 0");
  base.mc_samples = positive_field(doc, "mc_samples", base.mc_samples);
  base.learning_rate = field_or<double>(doc, "learning_rate", base.learning_rate);
  if (base.learning_rate <= 0)
    throw ConfigError("config field `learning_rate` must be > 0");
  base.max_iterations = positive_field(doc, "max_iterations", base.max_iterations);
  base.convergence_tol = field_or<double>(doc, "convergence_tol", base.convergence_tol);
  if (base.convergence_tol <= 0)
    throw ConfigError("config field `convergence_tol` must be > 0");
  base.convergence_window =
      positive_field(doc, "convergence_window", base.convergence_window);
  base.minibatch = field_or<int>(doc, "minibatch", base.minibatch);
  if (base.minibatch < 0) throw ConfigError("config field `minibatch` must be >= 0");
  base.seed = field_or<std::uint64_t>(doc, "seed", base.seed);
  return base;
}

MixedLogitSpec mixed_spec_from_json(const json& doc, MixedLogitSpec base) {
  base.n_sim_draws = positive_field(doc, "n_sim_draws", base.n_sim_draws);
  base.tol = field_or<double>(doc, "tol", base.tol);
  base.max_iterations = positive_field(doc, "max_iterations", base.max_iterations);
  base.halton_burn_in = field_or<int>(doc, "halton_burn_in", base.halton_burn_in);
  base.ridge = field_or<double>(doc, "ridge", base.ridge);
  return base;
}

SplitSpec split_spec_from_json(const json& doc, SplitSpec base) {
  base.train_fraction = field_or<double>(doc, "train_fraction", base.train_fraction);
  if (!(base.train_fraction > 0.0 && base.train_fraction < 1.0))
    throw ConfigError("config field `train_fraction` must lie in (0,1)");
  const std::string unit =
      field_or<std::string>(doc, "unit", base.unit == SplitUnit::by_trip
                                             ? "by_trip"
                                             : "by_observation");
  if (unit == "by_trip")
    base.unit = SplitUnit::by_trip;
  else if (unit == "by_observation")
    base.unit = SplitUnit::by_observation;
  else
    throw ConfigError("config field `unit` must be by_trip or by_observation");
  return base;
}

// --- Manifest --------------------------------------------------------------

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  json config;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
};

void write_manifest(const Manifest& m, const fs::path& out_dir) {
  json doc;
  doc["artifact_version"] = kVersion;
  doc["command"] = m.command;
  doc["argv"] = m.argv;
  doc["seed"] = m.seed;
  doc["config"] = m.config;
  doc["config_hash"] = hex_digest(m.config.dump());
  doc["created_at"] = now_iso8601();
  json inputs = json::object();
  for (const fs::path& p : m.inputs) inputs[p.string()] = file_digest(p);
  doc["inputs"] = inputs;
  json outputs = json::object();
  for (const fs::path& p : m.outputs)
    outputs[p.filename().string()] = file_digest(p);
  doc["outputs"] = outputs;
  write_file(out_dir / "manifest.json", doc.dump(2) + "\n");
}

fs::path resolve_out_dir(const std::string& flag_value, const char* command) {
  if (!flag_value.empty()) return flag_value;
  const char* root = std::getenv("DFM_OUTPUT_ROOT");
  return fs::path(root != nullptr ? root : "out") / command;
}

// --- Shared serialization --------------------------------------------------

json variational_to_json(const VariationalState& state) {
  json doc;
  doc["layout"] = {{"n_consumers", state.layout.n_consumers},
                   {"n_factors", state.layout.n_factors},
                   {"n_products", state.layout.n_products},
                   {"inertia", state.layout.inertia}};
  doc["mu"] = std::vector<double>(state.mu.begin(), state.mu.end());
  doc["log_sigma"] =
      std::vector<double>(state.log_sigma.begin(), state.log_sigma.end());
  return doc;
}

VariationalState variational_from_json(const json& doc) {
  VariationalState state;
  const json& layout = doc.at("layout");
  state.layout.n_consumers = layout.at("n_consumers").get<int>();
  state.layout.n_factors = layout.at("n_factors").get<int>();
  state.layout.n_products = layout.at("n_products").get<int>();
  state.layout.inertia = layout.at("inertia").get<bool>();
  const auto mu = doc.at("mu").get<std::vector<double>>();
  const auto ls = doc.at("log_sigma").get<std::vector<double>>();
  state.mu = Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size()));
  state.log_sigma =
      Eigen::Map<const Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()));
  if (state.mu.size() != state.layout.size() || state.log_sigma.size() != state.layout.size())
    throw ConfigError("fit file: variational state size mismatch");
  return state;
}

json mixed_fit_to_json(const MixedLogitFit& fit) {
  json doc;
  doc["category"] = fit.category;
  doc["alpha"] = std::vector<double>(fit.alpha.begin(), fit.alpha.end());
  doc["eta_mean"] = fit.eta_mean;
  doc["eta_sd"] = fit.eta_sd;
  doc["xi_mean"] = fit.xi_mean;
  doc["xi_sd"] = fit.xi_sd;
  doc["loglik"] = fit.loglik;
  doc["converged"] = fit.converged;
  doc["final_grad_norm"] = fit.final_grad_norm;
  doc["penalized_products"] = fit.penalized_products;
  return doc;
}

MixedLogitFit mixed_fit_from_json(const json& doc) {
  MixedLogitFit fit;
  fit.category = doc.at("category").get<int>();
  const auto alpha = doc.at("alpha").get<std::vector<double>>();
  fit.alpha = Eigen::Map<const Eigen::VectorXd>(alpha.data(),
                                                static_cast<Eigen::Index>(alpha.size()));
  fit.eta_mean = doc.at("eta_mean").get<double>();
  fit.eta_sd = doc.at("eta_sd").get<double>();
  fit.xi_mean = doc.at("xi_mean").get<double>();
  fit.xi_sd = doc.at("xi_sd").get<double>();
  fit.loglik = doc.at("loglik").get<double>();
  fit.converged = doc.at("converged").get<bool>();
  return fit;
}

std::string format_double(double v, const char* fmt = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

// Splits a dataset the same deterministic way `fit --train-fraction` does;
// fraction 0 means "no split, use everything".
Dataset dataset_side(const Dataset& dataset, double train_fraction, bool test_side) {
  if (train_fraction <= 0.0) return dataset;
  SplitSpec spec;
  spec.train_fraction = train_fraction;
  auto [train, test] = split_dataset(dataset, spec, Rng(0));
  return test_side ? std::move(test) : std::move(train);
}

DatasetBundle load_dataset(const std::string& data_path, const std::string& sidecar_flag) {
  const fs::path csv = data_path;
  fs::path sidecar = sidecar_flag.empty() ? csv.parent_path() / "truth.json"
                                          : fs::path(sidecar_flag);
  const DatasetBundle bundle = read_bundle(csv.string(), sidecar.string());
  const ValidationResult check = validate_dataset(bundle.dataset);
  if (!check.ok) {
    std::ostringstream msg;
    msg << "invalid dataset: " << check.violations.size() << " violation(s); first: "
        << check.violations.front().rule << " (" << check.violations.front().detail
        << ")";
    throw std::invalid_argument(msg.str());
  }
  return bundle;
}

// --- simulate --------------------------------------------------------------

struct SimulateArgs {
  std::string config_path, out_dir;
  std::optional<int> I, C, J, T, K;
  std::optional<std::uint64_t> seed;
  std::optional<double> price_shock_scale, price_floor;
  std::optional<std::vector<double>> rho_range;
  bool no_init = false;
  std::vector<std::string> argv;
};

int cmd_simulate(const SimulateArgs& args) {
  json doc = args.config_path.empty() ? json::object() : load_json_file(args.config_path);
  if (args.I) doc["I"] = *args.I;
  if (args.C) doc["C"] = *args.C;
  if (args.J) doc["J"] = *args.J;
  if (args.T) doc["T"] = *args.T;
  if (args.K) doc["K"] = *args.K;
  if (args.seed) doc["seed"] = *args.seed;
  if (args.price_shock_scale) doc["price_shock_scale"] = *args.price_shock_scale;
  if (args.price_floor) doc["price_floor"] = *args.price_floor;
  if (args.rho_range) doc["rho_range"] = *args.rho_range;
  if (args.no_init) doc["exogenous_init"] = false;
  const SimConfig config = sim_config_from_json(doc);

  const fs::path out = resolve_out_dir(args.out_dir, "simulate");
  fs::create_directories(out);

  const DatasetBundle bundle = simulate(config);
  const ValidationResult check = validate_dataset(bundle.dataset);
  if (!check.ok) throw std::logic_error("simulator produced an invalid dataset");

  write_bundle(bundle, (out / "dataset.csv").string(), (out / "truth.json").string());

  Manifest manifest;
  manifest.command = "simulate";
  manifest.argv = args.argv;
  manifest.seed = config.seed;
  manifest.config = sim_config_to_json(config);
  manifest.outputs = {out / "dataset.csv", out / "truth.json"};
  if (!args.config_path.empty()) manifest.inputs.push_back(args.config_path);
  write_manifest(manifest, out);
  std::printf("simulate: %zu observations -> %s\n", bundle.dataset.n_observations(),
              out.string().c_str());
  return 0;
}

// --- fit -------------------------------------------------------------------

struct FitArgs {
  std::string data_path, sidecar_path, config_path, out_dir;
  std::string model = "dynamic";
  std::optional<double> prior_scale, learning_rate, convergence_tol, train_fraction;
  std::optional<int> mc_samples, max_iterations, convergence_window, minibatch, n_factors;
  std::optional<std::uint64_t> seed;
  int draws = 0;
  std::vector<std::string> argv;
};

int cmd_fit(const FitArgs& args) {
  const json doc =
      args.config_path.empty() ? json::object() : load_json_file(args.config_path);
  const DatasetBundle bundle = load_dataset(args.data_path, args.sidecar_path);

  double train_fraction = field_or<double>(doc, "train_fraction", 0.0);
  if (args.train_fraction) train_fraction = *args.train_fraction;
  if (train_fraction < 0.0 || train_fraction >= 1.0)
    throw ConfigError("config field `train_fraction` must lie in [0,1) (0 = no split)");
  const Dataset train = dataset_side(bundle.dataset, train_fraction, false);

  const fs::path out = resolve_out_dir(args.out_dir, "fit");
  fs::create_directories(out);

  Manifest manifest;
  manifest.command = "fit";
  manifest.argv = args.argv;
  manifest.inputs.push_back(args.data_path);
  if (!args.config_path.empty()) manifest.inputs.push_back(args.config_path);

  if (args.model == "mixed-logit") {
    MixedLogitSpec spec = mixed_spec_from_json(
        doc.contains("mixed") ? doc.at("mixed") : json::object(), MixedLogitSpec{});
    const auto start = std::chrono::steady_clock::now();
    json categories = json::array();
    double total_loglik = 0.0;
    for (int c = 0; c < train.dims.n_categories(); ++c) {
      const MixedLogitFit fit_c = fit_mixed_logit(category_subset(train, c), spec);
      total_loglik += fit_c.loglik;
      categories.push_back(mixed_fit_to_json(fit_c));
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json fit_doc;
    fit_doc["model"] = "mixed-logit";
    fit_doc["n_sim_draws"] = spec.n_sim_draws;
    fit_doc["halton_burn_in"] = spec.halton_burn_in;
    fit_doc["train_fraction"] = train_fraction;
    fit_doc["categories"] = categories;
    fit_doc["total_loglik"] = total_loglik;
    fit_doc["wall_time_seconds"] = seconds;
    write_file(out / "fit.json", fit_doc.dump(2) + "\n");

    manifest.seed = 0;
    manifest.config = {{"model", "mixed-logit"},
                       {"n_sim_draws", spec.n_sim_draws},
                       {"train_fraction", train_fraction}};
    manifest.outputs = {out / "fit.json"};
    write_manifest(manifest, out);
    std::printf("fit: mixed-logit, %d categories, loglik %.3f -> %s\n",
                train.dims.n_categories(), total_loglik, out.string().c_str());
    return 0;
  }

  if (args.model != "dynamic" && args.model != "static")
    throw ConfigError("--model must be dynamic, static, or mixed-logit");

  FitConfig config = fit_config_from_json(doc, FitConfig{});
  config.kind =
      args.model == "dynamic" ? ModelKind::dynamic_factor : ModelKind::static_factor;
  config.n_factors = positive_field(doc, "K", bundle.dataset.dims.n_factors);
  if (args.n_factors) config.n_factors = *args.n_factors;
  if (args.prior_scale) config.prior.scale = *args.prior_scale;
  if (args.mc_samples) config.mc_samples = *args.mc_samples;
  if (args.learning_rate) config.learning_rate = *args.learning_rate;
  if (args.max_iterations) config.max_iterations = *args.max_iterations;
  if (args.convergence_tol) config.convergence_tol = *args.convergence_tol;
  if (args.convergence_window) config.convergence_window = *args.convergence_window;
  if (args.minibatch) config.minibatch = *args.minibatch;
  if (args.seed) config.seed = *args.seed;
  config.validate();

  FitResult result;
  try {
    result = fit(train, config);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    throw;
  }

  json fit_doc;
  fit_doc["model"] = args.model;
  fit_doc["prior_scale"] = config.prior.scale;
  fit_doc["n_factors"] = config.n_factors;
  fit_doc["mc_samples"] = config.mc_samples;
  fit_doc["learning_rate"] = config.learning_rate;
  fit_doc["max_iterations"] = config.max_iterations;
  fit_doc["convergence_tol"] = config.convergence_tol;
  fit_doc["convergence_window"] = config.convergence_window;
  fit_doc["minibatch"] = config.minibatch;
  fit_doc["seed"] = config.seed;
  fit_doc["train_fraction"] = train_fraction;
  fit_doc["variational"] = variational_to_json(result.state);
  fit_doc["elbo_trace"] = result.elbo_trace;
  fit_doc["iterations_run"] = result.iterations_run;
  fit_doc["converged"] = result.converged;
  fit_doc["wall_time_seconds"] = result.wall_time_seconds;
  write_file(out / "fit.json", fit_doc.dump(2) + "\n");

  manifest.outputs = {out / "fit.json"};
  if (args.draws > 0) {
    const std::vector<ParamDraw> draws =
        posterior_draws(result.state, args.draws, Rng(config.seed).stream("draws"));
    const int D = result.state.size();
    std::string blob(static_cast<std::size_t>(args.draws) * D * sizeof(double), '\0');
    const ParamLayout& layout = result.state.layout;
    for (int s = 0; s < args.draws; ++s) {
      const Eigen::VectorXd z = pack_params(draws[static_cast<std::size_t>(s)], layout);
      std::memcpy(blob.data() + static_cast<std::size_t>(s) * D * sizeof(double),
                  z.data(), static_cast<std::size_t>(D) * sizeof(double));
    }
    write_file(out / "draws.bin", blob);
    json meta;
    meta["count"] = args.draws;
    meta["dim"] = D;
    meta["layout"] = variational_to_json(result.state)["layout"];
    meta["format"] = "float64 little-endian, row-major draws x dim";
    write_file(out / "draws_meta.json", meta.dump(2) + "\n");
    manifest.outputs.push_back(out / "draws.bin");
    manifest.outputs.push_back(out / "draws_meta.json");
  }

  manifest.seed = config.seed;
  manifest.config = {{"model", args.model},
                     {"prior_scale", config.prior.scale},
                     {"n_factors", config.n_factors},
                     {"mc_samples", config.mc_samples},
                     {"learning_rate", config.learning_rate},
                     {"max_iterations", config.max_iterations},
                     {"convergence_tol", config.convergence_tol},
                     {"convergence_window", config.convergence_window},
                     {"minibatch", config.minibatch},
                     {"train_fraction", train_fraction},
                     {"seed", config.seed}};
  write_manifest(manifest, out);
  std::printf("fit: %s, %d iterations, converged=%d, final ELBO %.3f -> %s\n",
              args.model.c_str(), result.iterations_run,
              result.converged ? 1 : 0,
              result.elbo_trace.empty() ? 0.0 : result.elbo_trace.back(),
              out.string().c_str());
  return 0;
}

// --- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string data_path, sidecar_path, fit_path, out_dir;
  double train_fraction = 0.8;
  int draws = 500;
  std::uint64_t seed = 0;
  std::vector<std::string> argv;
};

int cmd_evaluate(const EvaluateArgs& args) {
  const DatasetBundle bundle = load_dataset(args.data_path, args.sidecar_path);
  const json fit_doc = load_json_file(args.fit_path);
  const std::string model = fit_doc.at("model").get<std::string>();
  const Dataset test = dataset_side(bundle.dataset, args.train_fraction, true);
  if (!test.true_probs.has_value())
    throw ConfigError("dataset sidecar lacks true_probs; cannot evaluate");

  MetricsReport report;
  if (model == "mixed-logit") {
    const auto start = std::chrono::steady_clock::now();
    std::vector<MixedLogitFit> fits(test.dims.n_categories());
    for (const json& cat : fit_doc.at("categories")) {
      MixedLogitFit fit_c = mixed_fit_from_json(cat);
      const int c = fit_c.category;
      fits[c] = std::move(fit_c);
    }
    const CoefficientDraws draws = halton_normal_draws(
        test.dims.n_consumers, fit_doc.at("n_sim_draws").get<int>(),
        field_or<int>(fit_doc, "halton_burn_in", 50));
    Eigen::MatrixXd pred = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(test.observations.size()), test.dims.max_products());
    std::vector<int> chosen;
    for (std::size_t n = 0; n < test.observations.size(); ++n) {
      const Observation& obs = test.observations[n];
      pred.row(static_cast<Eigen::Index>(n)).head(obs.prices.size()) =
          predict_mixed_logit(fits[obs.category], obs, draws).transpose();
      chosen.push_back(obs.chosen);
    }
    const RmseResult r = rmse({pred}, *test.true_probs);
    report.rmse_mean = r.mean;
    report.rmse_per_draw = r.per_draw;
    report.accuracy = accuracy({pred}, chosen);
    report.n_test = static_cast<int>(test.observations.size());
    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  } else {
    const VariationalState state = variational_from_json(fit_doc.at("variational"));
    const ModelKind kind =
        model == "static" ? ModelKind::static_factor : ModelKind::dynamic_factor;
    report = metrics_from_state(state, args.draws, Rng(args.seed).stream("eval-draws"),
                                test, kind);
  }

  const fs::path out = resolve_out_dir(args.out_dir, "evaluate");
  fs::create_directories(out);
  json doc;
  doc["model"] = model;
  doc["rmse_mean"] = report.rmse_mean;
  doc["rmse_per_draw"] = report.rmse_per_draw;
  doc["accuracy"] = report.accuracy;
  doc["n_test"] = report.n_test;
  doc["train_fraction"] = args.train_fraction;
  doc["eval_draws"] = args.draws;
  doc["wall_time_seconds"] = report.wall_time_seconds;
  write_file(out / "metrics.json", doc.dump(2) + "\n");

  Manifest manifest;
  manifest.command = "evaluate";
  manifest.argv = args.argv;
  manifest.seed = args.seed;
  manifest.config = {{"train_fraction", args.train_fraction}, {"draws", args.draws}};
  manifest.inputs = {args.data_path, args.fit_path};
  manifest.outputs = {out / "metrics.json"};
  write_manifest(manifest, out);
  std::printf("evaluate: %s RMSE %.4f accuracy %.4f over %d test observations -> %s\n",
              model.c_str(), report.rmse_mean, report.accuracy, report.n_test,
              out.string().c_str());
  return 0;
}

// --- elasticity ------------------------------------------------------------

struct ElasticityArgs {
  std::string data_path, sidecar_path, fit_path, out_dir;
  double train_fraction = 0.0;  // 0 = all observations
  int draws = 500;
  std::uint64_t seed = 0;
  std::vector<std::string> argv;
};

int cmd_elasticity(const ElasticityArgs& args) {
  const DatasetBundle bundle = load_dataset(args.data_path, args.sidecar_path);
  const json fit_doc = load_json_file(args.fit_path);
  const std::string model = fit_doc.at("model").get<std::string>();
  if (model == "mixed-logit")
    throw ConfigError("elasticity requires a dynamic or static factor fit");
  const VariationalState state = variational_from_json(fit_doc.at("variational"));
  const ModelKind kind =
      model == "static" ? ModelKind::static_factor : ModelKind::dynamic_factor;
  const Dataset data = dataset_side(bundle.dataset, args.train_fraction, false);

  const ElasticityReport report = elasticities_from_state(
      state, args.draws, Rng(args.seed).stream("elasticity"), data, kind);

  const fs::path out = resolve_out_dir(args.out_dir, "elasticity");
  fs::create_directories(out);
  std::ostringstream csv;
  csv << "category,product,mean,q025,q975,n_obs\n";
  for (const ElasticityEntry& e : report.entries)
    csv << e.category << ',' << e.product << ',' << format_double(e.mean) << ','
        << format_double(e.q025) << ',' << format_double(e.q975) << ',' << e.n_obs
        << '\n';
  write_file(out / "elasticity.csv", csv.str());

  Manifest manifest;
  manifest.command = "elasticity";
  manifest.argv = args.argv;
  manifest.seed = args.seed;
  manifest.config = {{"train_fraction", args.train_fraction},
                     {"draws", args.draws},
                     {"model", model}};
  manifest.inputs = {args.data_path, args.fit_path};
  manifest.outputs = {out / "elasticity.csv"};
  write_manifest(manifest, out);
  std::printf("elasticity: %zu product-category pairs -> %s\n", report.entries.size(),
              out.string().c_str());
  return 0;
}

// --- experiment ------------------------------------------------------------

struct ExperimentArgs {
  std::string grid_path, out_dir;
  int parallel = 1;
  std::optional<int> replications;
  std::optional<std::uint64_t> base_seed;
  std::vector<std::string> argv;
};

ExperimentConfig grid_from_json(const json& doc) {
  ExperimentConfig config;
  config.replications = positive_field(doc, "replications", 10);
  config.base_seed = field_or<std::uint64_t>(doc, "base_seed", 1);
  if (!doc.contains("settings") || !doc.at("settings").is_array() ||
      doc.at("settings").empty())
    throw ConfigError("config field `settings` must be a non-empty array");

  int index = 0;
  for (const json& s : doc.at("settings")) {
    ExperimentSetting& setting = config.settings.emplace_back();
    setting.name = field_or<std::string>(s, "name", "s" + std::to_string(index));
    setting.n_consumers = positive_field(s, "I", setting.n_consumers);
    setting.n_categories = positive_field(s, "C", setting.n_categories);
    setting.n_products = positive_field(s, "J", setting.n_products);
    setting.n_trips = positive_field(s, "T", setting.n_trips);
    setting.n_factors = positive_field(s, "K", setting.n_factors);
    setting.models = field_or<std::vector<std::string>>(s, "models", setting.models);
    if (setting.models.empty())
      throw ConfigError("config field `models` must be non-empty");
    for (const std::string& m : setting.models)
      if (m != kModelDynamic && m != kModelStatic && m != kModelMixedLogit)
        throw ConfigError("config field `models` entries must be dynamic, static, or "
                          "mixed-logit");
    setting.n_eval_draws = positive_field(s, "eval_draws", setting.n_eval_draws);
    setting.elasticities = field_or<bool>(s, "elasticities", setting.elasticities);
    if (s.contains("fit")) setting.fit = fit_config_from_json(s.at("fit"), setting.fit);
    if (s.contains("mixed"))
      setting.mixed = mixed_spec_from_json(s.at("mixed"), setting.mixed);
    if (s.contains("split"))
      setting.split = split_spec_from_json(s.at("split"), setting.split);
    if (s.contains("sim")) setting.sim = sim_config_from_json(s.at("sim"));
    ++index;
  }
  return config;
}

int cmd_experiment(const ExperimentArgs& args) {
  json doc = load_json_file(args.grid_path);
  if (args.replications) doc["replications"] = *args.replications;
  if (args.base_seed) doc["base_seed"] = *args.base_seed;
  const ExperimentConfig config = grid_from_json(doc);

  const ExperimentResult result = experiment_run(config, args.parallel);

  for (const ReplicationRow& row : result.details)
    if (row.failed)
      std::fprintf(stderr, "warning: setting %d replication %d model %s failed: %s\n",
                   row.setting, row.replication, row.model.c_str(), row.error.c_str());

  const fs::path out = resolve_out_dir(args.out_dir, "experiment");
  fs::create_directories(out);

  std::ostringstream summary;
  summary << "setting,name,model,I,C,J,T,K,replications_ok,replications_failed,"
             "rmse_mean,rmse_sd,accuracy_mean,accuracy_sd,n_train_mean,n_test_mean,"
             "fit_seconds_mean\n";
  for (const SettingSummary& s : result.summaries)
    summary << s.setting << ',' << csv_quote(s.name) << ',' << s.model << ','
            << s.n_consumers << ',' << s.n_categories << ',' << s.n_products << ','
            << s.n_trips << ',' << s.n_factors << ',' << s.replications_ok << ','
            << s.replications_failed << ',' << format_double(s.rmse_mean) << ','
            << format_double(s.rmse_sd) << ',' << format_double(s.accuracy_mean) << ','
            << format_double(s.accuracy_sd) << ',' << format_double(s.n_train_mean, "%.1f")
            << ',' << format_double(s.n_test_mean, "%.1f") << ','
            << format_double(s.fit_seconds_mean, "%.3f") << '\n';
  write_file(out / "summary.csv", summary.str());

  std::ostringstream detail;
  detail << "setting,replication,model,seed,rmse,accuracy,n_train,n_test,converged,"
            "iterations,error,fit_seconds\n";
  for (const ReplicationRow& row : result.details)
    detail << row.setting << ',' << row.replication << ',' << row.model << ','
           << row.seed << ',' << format_double(row.rmse) << ','
           << format_double(row.accuracy) << ',' << row.n_train << ',' << row.n_test
           << ',' << (row.converged ? 1 : 0) << ',' << row.iterations << ','
           << csv_quote(row.error) << ',' << format_double(row.fit_seconds, "%.3f")
           << '\n';
  write_file(out / "detail.csv", detail.str());

  std::ostringstream fig1;
  fig1 << "setting,replication,category,n_pairs,repurchase_prob,mean_switch_prob\n";
  for (const RepurchaseRow& row : result.repurchase) {
    fig1 << row.setting << ',' << row.replication << ',' << row.stats.category << ','
         << row.stats.n_pairs << ',';
    if (row.stats.repurchase_prob)
      fig1 << format_double(*row.stats.repurchase_prob);
    fig1 << ',';
    if (row.stats.mean_switch_prob) fig1 << format_double(*row.stats.mean_switch_prob);
    fig1 << '\n';
  }
  write_file(out / "fig1_repurchase.csv", fig1.str());

  std::ostringstream fig2;
  fig2 << "setting,name,model,n_categories,rmse_mean,fit_seconds_mean\n";
  for (const SettingSummary& s : result.summaries)
    fig2 << s.setting << ',' << csv_quote(s.name) << ',' << s.model << ','
         << s.n_categories << ',' << format_double(s.rmse_mean) << ','
         << format_double(s.fit_seconds_mean, "%.3f") << '\n';
  write_file(out / "fig2_scaling.csv", fig2.str());

  std::ostringstream fig3;
  fig3 << "setting,model,category,product,mean,q025,q975,n_obs\n";
  for (const ElasticityGridRow& row : result.elasticity)
    fig3 << row.setting << ',' << row.model << ',' << row.entry.category << ','
         << row.entry.product << ',' << format_double(row.entry.mean) << ','
         << format_double(row.entry.q025) << ',' << format_double(row.entry.q975) << ','
         << row.entry.n_obs << '\n';
  write_file(out / "fig3_elasticity.csv", fig3.str());

  Manifest manifest;
  manifest.command = "experiment";
  manifest.argv = args.argv;
  manifest.seed = config.base_seed;
  manifest.config = doc;
  manifest.inputs = {args.grid_path};
  manifest.outputs = {out / "summary.csv", out / "detail.csv",
                      out / "fig1_repurchase.csv", out / "fig2_scaling.csv",
                      out / "fig3_elasticity.csv"};
  write_manifest(manifest, out);

  // A setting whose replications all failed (for any model) is a total failure.
  for (const SettingSummary& s : result.summaries)
    if (s.replications_ok == 0) {
      std::fprintf(stderr, "error: setting %d (%s, %s) had no successful replication\n",
                   s.setting, s.name.c_str(), s.model.c_str());
      return 5;
    }
  std::printf("experiment: %zu settings x %d replications -> %s\n",
              config.settings.size(), config.replications, out.string().c_str());
  return 0;
}

// --- diagnose-inertia ------------------------------------------------------

struct DiagnoseArgs {
  std::string config_path, out_dir;
  std::optional<int> I, C, J, T, K;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> argv;
};

int cmd_diagnose(const DiagnoseArgs& args) {
  json doc = args.config_path.empty() ? json::object() : load_json_file(args.config_path);
  if (args.I) doc["I"] = *args.I;
  if (args.C) doc["C"] = *args.C;
  if (args.J) doc["J"] = *args.J;
  if (args.T) doc["T"] = *args.T;
  if (args.K) doc["K"] = *args.K;
  if (args.seed) doc["seed"] = *args.seed;
  const SimConfig with_inertia = sim_config_from_json(doc);
  SimConfig without = with_inertia;
  without.rho_range = {0.0, 0.0};

  const fs::path out = resolve_out_dir(args.out_dir, "diagnose-inertia");
  fs::create_directories(out);

  std::ostringstream csv;
  csv << "variant,category,n_pairs,repurchase_prob,mean_switch_prob\n";
  auto emit = [&csv](const char* variant, const SimConfig& config) {
    const DatasetBundle bundle = simulate(config);
    for (const CategoryRepurchase& row : repurchase_diagnostics(bundle.dataset)) {
      csv << variant << ',' << row.category << ',' << row.n_pairs << ',';
      if (row.repurchase_prob) csv << format_double(*row.repurchase_prob);
      csv << ',';
      if (row.mean_switch_prob) csv << format_double(*row.mean_switch_prob);
      csv << '\n';
    }
  };
  emit("inertia", with_inertia);
  emit("no_inertia", without);
  write_file(out / "repurchase.csv", csv.str());

  Manifest manifest;
  manifest.command = "diagnose-inertia";
  manifest.argv = args.argv;
  manifest.seed = with_inertia.seed;
  manifest.config = sim_config_to_json(with_inertia);
  if (!args.config_path.empty()) manifest.inputs.push_back(args.config_path);
  manifest.outputs = {out / "repurchase.csv"};
  write_manifest(manifest, out);
  std::printf("diagnose-inertia -> %s\n", out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic latent-factor demand models: simulation, variational "
               "estimation, benchmarks, experiments"};
  app.require_subcommand(1);
  std::vector<std::string> raw_argv(argv, argv + argc);

  SimulateArgs sim_args;
  sim_args.argv = raw_argv;
  auto* sim = app.add_subcommand("simulate", "Simulate a purchase panel");
  sim->add_option("--config", sim_args.config_path, "Simulation config JSON");
  sim->add_option("--out", sim_args.out_dir, "Output directory");
  sim->add_option("--consumers,--I", sim_args.I, "Number of consumers");
  sim->add_option("--categories,--C", sim_args.C, "Number of categories");
  sim->add_option("--products,--J", sim_args.J, "Products per category");
  sim->add_option("--trips,--T", sim_args.T, "Trips per consumer");
  sim->add_option("--factors,--K", sim_args.K, "Latent factor dimension");
  sim->add_option("--seed", sim_args.seed, "Simulation seed");
  sim->add_option("--price-shock-scale", sim_args.price_shock_scale,
                  "Price shock standard deviation");
  sim->add_option("--price-floor", sim_args.price_floor, "Price truncation floor");
  sim->add_option("--rho-range", sim_args.rho_range,
                  "Inertia loading range LO HI ([0 0] disables inertia)")
      ->expected(2);
  sim->add_flag("--no-init", sim_args.no_init,
                "Disable exogenous initial lag state");

  FitArgs fit_args;
  fit_args.argv = raw_argv;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to a dataset");
  fit_cmd->add_option("--data", fit_args.data_path, "Dataset CSV path")->required();
  fit_cmd->add_option("--sidecar", fit_args.sidecar_path,
                      "Sidecar JSON path (default: truth.json next to the CSV)");
  fit_cmd->add_option("--config", fit_args.config_path, "Fit config JSON");
  fit_cmd->add_option("--out", fit_args.out_dir, "Output directory");
  fit_cmd->add_option("--model", fit_args.model, "dynamic | static | mixed-logit");
  fit_cmd->add_option("--prior-scale", fit_args.prior_scale, "Prior standard deviation");
  fit_cmd->add_option("--factors,--K", fit_args.n_factors, "Latent factor dimension");
  fit_cmd->add_option("--mc-samples", fit_args.mc_samples, "Monte Carlo draws per step");
  fit_cmd->add_option("--learning-rate", fit_args.learning_rate, "Adam step size");
  fit_cmd->add_option("--max-iterations", fit_args.max_iterations, "Iteration cap");
  fit_cmd->add_option("--tol", fit_args.convergence_tol, "Convergence tolerance");
  fit_cmd->add_option("--window", fit_args.convergence_window, "Convergence window");
  fit_cmd->add_option("--minibatch", fit_args.minibatch,
                      "Observations per gradient step (0 = full batch)");
  fit_cmd->add_option("--seed", fit_args.seed, "Fit seed");
  fit_cmd->add_option("--train-fraction", fit_args.train_fraction,
                      "Fit on the chronological train side (0 = use all data)");
  fit_cmd->add_option("--draws", fit_args.draws,
                      "Posterior draws to write (0 = none)")
      ->expected(0, 1)
      ->default_str("0");

  EvaluateArgs eval_args;
  eval_args.argv = raw_argv;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a fit on held-out data");
  eval_cmd->add_option("--data", eval_args.data_path, "Dataset CSV path")->required();
  eval_cmd->add_option("--sidecar", eval_args.sidecar_path, "Sidecar JSON path");
  eval_cmd->add_option("--fit", eval_args.fit_path, "fit.json path")->required();
  eval_cmd->add_option("--out", eval_args.out_dir, "Output directory");
  eval_cmd->add_option("--train-fraction", eval_args.train_fraction,
                       "Split fraction; evaluation uses the test side");
  eval_cmd->add_option("--draws", eval_args.draws, "Posterior draws for metrics");
  eval_cmd->add_option("--seed", eval_args.seed, "Draw seed");

  ElasticityArgs elas_args;
  elas_args.argv = raw_argv;
  auto* elas_cmd = app.add_subcommand("elasticity", "Own-price elasticity intervals");
  elas_cmd->add_option("--data", elas_args.data_path, "Dataset CSV path")->required();
  elas_cmd->add_option("--sidecar", elas_args.sidecar_path, "Sidecar JSON path");
  elas_cmd->add_option("--fit", elas_args.fit_path, "fit.json path")->required();
  elas_cmd->add_option("--out", elas_args.out_dir, "Output directory");
  elas_cmd->add_option("--train-fraction", elas_args.train_fraction,
                       "Split fraction; elasticities use the train side (0 = all)");
  elas_cmd->add_option("--draws", elas_args.draws, "Posterior draws");
  elas_cmd->add_option("--seed", elas_args.seed, "Draw seed");

  ExperimentArgs exp_args;
  exp_args.argv = raw_argv;
  auto* exp_cmd = app.add_subcommand("experiment", "Run a replication grid");
  exp_cmd->add_option("--grid", exp_args.grid_path, "Grid config JSON")->required();
  exp_cmd->add_option("--out", exp_args.out_dir, "Output directory");
  exp_cmd->add_option("--parallel", exp_args.parallel, "Worker threads");
  exp_cmd->add_option("--replications", exp_args.replications, "Replications per setting");
  exp_cmd->add_option("--base-seed", exp_args.base_seed, "Grid base seed");

  DiagnoseArgs diag_args;
  diag_args.argv = raw_argv;
  auto* diag_cmd =
      app.add_subcommand("diagnose-inertia", "Repurchase-probability diagnostics");
  diag_cmd->add_option("--config", diag_args.config_path, "Simulation config JSON");
  diag_cmd->add_option("--out", diag_args.out_dir, "Output directory");
  diag_cmd->add_option("--consumers,--I", diag_args.I, "Number of consumers");
  diag_cmd->add_option("--categories,--C", diag_args.C, "Number of categories");
  diag_cmd->add_option("--products,--J", diag_args.J, "Products per category");
  diag_cmd->add_option("--trips,--T", diag_args.T, "Trips per consumer");
  diag_cmd->add_option("--factors,--K", diag_args.K, "Latent factor dimension");
  diag_cmd->add_option("--seed", diag_args.seed, "Simulation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_args);
    if (fit_cmd->parsed()) return cmd_fit(fit_args);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_args);
    if (elas_cmd->parsed()) return cmd_elasticity(elas_args);
    if (exp_cmd->parsed()) return cmd_experiment(exp_args);
    if (diag_cmd->parsed()) return cmd_diagnose(diag_args);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 4;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
