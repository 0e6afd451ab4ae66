// End-to-end command-line checks: every subcommand is exercised through a
// real subprocess, artifacts are parsed back, reruns are compared byte for
// byte (timing fields masked), and exit codes are pinned per failure class.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* cli_path() { return DFM_CLI_PATH; }

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(cli_path()) + " " + args + " 2>&1";
  RunResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buffer[4096];
  while (std::fgets(buffer, sizeof buffer, pipe) != nullptr) result.output += buffer;
  const int status = pclose(pipe);
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dfm_cli_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

void dump(const fs::path& p, const json& doc) {
  std::ofstream out(p);
  out << doc.dump(2) << '\n';
}

// CSV contents with the trailing field of every row removed; used to compare
// outputs whose last column is a wall-clock time.
std::string drop_last_column(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t comma = line.rfind(',');
    out << (comma == std::string::npos ? line : line.substr(0, comma)) << '\n';
  }
  return out.str();
}

json masked_fit(const fs::path& p) {
  json doc = load(p);
  doc.erase("wall_time_seconds");
  return doc;
}

// One shared tiny dataset for the fit/evaluate/elasticity chain.
const TempDir& base_data() {
  static TempDir dir;
  static bool ready = false;
  if (!ready) {
    const RunResult r = run("simulate --out " + dir.sub("sim") +
                            " --I 5 --C 2 --J 3 --T 5 --K 2 --seed 42");
    REQUIRE(r.code == 0);
    ready = true;
  }
  return dir;
}

std::string data_args() {
  const TempDir& dir = base_data();
  return " --data " + dir.sub("sim") + "/dataset.csv --sidecar " +
         dir.sub("sim") + "/truth.json";
}

}  // namespace

TEST_CASE("simulate writes a reproducible bundle with a manifest") {
  TempDir dir;
  const std::string flags = " --I 4 --C 2 --J 3 --T 3 --K 2 --seed 9";
  REQUIRE(run("simulate --out " + dir.sub("a") + flags).code == 0);
  REQUIRE(run("simulate --out " + dir.sub("b") + flags).code == 0);

  CHECK(slurp(dir.sub("a") + "/dataset.csv") == slurp(dir.sub("b") + "/dataset.csv"));
  CHECK(slurp(dir.sub("a") + "/truth.json") == slurp(dir.sub("b") + "/truth.json"));

  const json manifest = load(dir.sub("a") + "/manifest.json");
  CHECK(manifest.at("command") == "simulate");
  CHECK(manifest.at("artifact_version") == "1.0.0");
  CHECK(manifest.at("seed") == 9);
  CHECK(manifest.at("config").at("I") == 4);
  CHECK(manifest.contains("created_at"));
  CHECK(manifest.at("outputs").size() == 2);

  REQUIRE(run("simulate --out " + dir.sub("c") +
              " --I 4 --C 2 --J 3 --T 3 --K 2 --seed 10")
              .code == 0);
  CHECK(slurp(dir.sub("a") + "/dataset.csv") != slurp(dir.sub("c") + "/dataset.csv"));
}

TEST_CASE("command-line flags override config-file fields") {
  TempDir dir;
  dump(dir.path / "sim.json",
       json{{"I", 3}, {"C", 2}, {"J", 2}, {"T", 3}, {"K", 2}, {"seed", 1}});
  REQUIRE(run("simulate --config " + dir.sub("sim.json") + " --out " + dir.sub("out") +
              " --I 6")
              .code == 0);
  const json manifest = load(dir.sub("out") + "/manifest.json");
  CHECK(manifest.at("config").at("I") == 6);
  CHECK(manifest.at("config").at("C") == 2);
  CHECK(!manifest.at("inputs").empty());
}

TEST_CASE("invalid dimensions exit with the config error code naming the field") {
  TempDir dir;
  const RunResult r = run("simulate --out " + dir.sub("out") +
                          " --I 4 --C 2 --J 3 --T 0 --K 2");
  CHECK(r.code == 2);
  CHECK(r.output.find("T") != std::string::npos);
}

TEST_CASE("fit, evaluate, and elasticity chain on a factor model") {
  TempDir dir;
  const std::string fit_flags =
      " --model dynamic --max-iterations 150 --mc-samples 4 --window 50"
      " --train-fraction 0.8 --seed 2 --draws 25";
  REQUIRE(run("fit" + data_args() + fit_flags + " --out " + dir.sub("fit")).code == 0);

  const json fit = load(dir.sub("fit") + "/fit.json");
  CHECK(fit.at("model") == "dynamic");
  CHECK(fit.at("iterations_run").get<int>() >= 1);
  CHECK(fit.at("elbo_trace").size() == fit.at("iterations_run").get<std::size_t>());
  CHECK(fit.at("train_fraction") == 0.8);
  const std::size_t dim = fit.at("variational").at("mu").size();
  CHECK(fit.at("variational").at("log_sigma").size() == dim);
  // theta 5x2 + (gamma, lambda, rho) each 6x2
  CHECK(dim == 5u * 2u + 3u * 6u * 2u);
  CHECK(fit.contains("wall_time_seconds"));

  // Posterior draw matrix rows x dim, doubles.
  CHECK(fs::exists(dir.sub("fit") + "/draws.bin"));
  const json meta = load(dir.sub("fit") + "/draws_meta.json");
  CHECK(meta.at("count") == 25);
  CHECK(meta.at("dim") == dim);
  CHECK(fs::file_size(dir.sub("fit") + "/draws.bin") == 25u * dim * sizeof(double));

  const RunResult eval = run("evaluate" + data_args() + " --fit " + dir.sub("fit") +
                             "/fit.json --out " + dir.sub("eval") +
                             " --draws 20 --seed 3");
  REQUIRE(eval.code == 0);
  const json metrics = load(dir.sub("eval") + "/metrics.json");
  CHECK(metrics.at("rmse_mean").get<double>() > 0.0);
  CHECK(metrics.at("rmse_mean").get<double>() < 1.0);
  CHECK(metrics.at("accuracy").get<double>() >= 0.0);
  CHECK(metrics.at("accuracy").get<double>() <= 1.0);
  CHECK(metrics.at("n_test").get<int>() > 0);
  CHECK(metrics.at("rmse_per_draw").size() == 20);

  const RunResult elas = run("elasticity" + data_args() + " --fit " + dir.sub("fit") +
                             "/fit.json --out " + dir.sub("elas") +
                             " --draws 20 --seed 4");
  REQUIRE(elas.code == 0);
  const std::string csv = slurp(dir.sub("elas") + "/elasticity.csv");
  CHECK(csv.rfind("category,product,mean,q025,q975,n_obs\n", 0) == 0);
  int lines = 0;
  for (char ch : csv)
    if (ch == '\n') ++lines;
  CHECK(lines == 1 + 2 * 3);
}

TEST_CASE("factor fits are byte-identical across reruns once timing is removed") {
  TempDir dir;
  const std::string fit_flags =
      " --model static --max-iterations 80 --mc-samples 4 --window 30 --seed 5"
      " --draws 10";
  REQUIRE(run("fit" + data_args() + fit_flags + " --out " + dir.sub("a")).code == 0);
  REQUIRE(run("fit" + data_args() + fit_flags + " --out " + dir.sub("b")).code == 0);
  CHECK(masked_fit(dir.sub("a") + "/fit.json") == masked_fit(dir.sub("b") + "/fit.json"));
  CHECK(slurp(dir.sub("a") + "/draws.bin") == slurp(dir.sub("b") + "/draws.bin"));
}

TEST_CASE("mixed logit fit produces per-category results and feeds evaluate") {
  TempDir dir;
  REQUIRE(run("fit" + data_args() +
              " --model mixed-logit --max-iterations 60 --mc-samples 20 --seed 6 "
              "--out " +
              dir.sub("fit"))
              .code == 0);
  const json fit = load(dir.sub("fit") + "/fit.json");
  CHECK(fit.at("model") == "mixed-logit");
  REQUIRE(fit.at("categories").size() == 2);
  for (const json& cat : fit.at("categories")) {
    CHECK(cat.at("alpha").size() == 3);
    CHECK(cat.at("alpha")[0] == 0.0);
    CHECK(cat.at("eta_sd").get<double>() >= 0.0);
  }
  CHECK(fit.contains("total_loglik"));

  const RunResult eval = run("evaluate" + data_args() + " --fit " + dir.sub("fit") +
                             "/fit.json --out " + dir.sub("eval"));
  REQUIRE(eval.code == 0);
  const json metrics = load(dir.sub("eval") + "/metrics.json");
  CHECK(metrics.at("rmse_mean").get<double>() > 0.0);

  const RunResult elas = run("elasticity" + data_args() + " --fit " + dir.sub("fit") +
                             "/fit.json --out " + dir.sub("elas"));
  CHECK(elas.code == 2);
}

TEST_CASE("experiment outputs are identical for any worker count") {
  TempDir dir;
  const json grid{
      {"replications", 2},
      {"base_seed", 7},
      {"settings",
       json::array(
           {json{{"name", "tiny"},
                 {"I", 5},
                 {"C", 2},
                 {"J", 3},
                 {"T", 4},
                 {"K", 2},
                 {"models", json::array({"dynamic", "mixed-logit"})},
                 {"eval_draws", 15},
                 {"elasticities", true},
                 {"fit", json{{"max_iterations", 100}, {"mc_samples", 4},
                              {"convergence_window", 40}}},
                 {"mixed", json{{"n_sim_draws", 15}, {"max_iterations", 40}}}}})}};
  dump(dir.path / "grid.json", grid);

  REQUIRE(run("experiment --grid " + dir.sub("grid.json") + " --out " + dir.sub("p1") +
              " --parallel 1")
              .code == 0);
  REQUIRE(run("experiment --grid " + dir.sub("grid.json") + " --out " + dir.sub("p3") +
              " --parallel 3")
              .code == 0);

  for (const char* name : {"summary.csv", "detail.csv", "fig2_scaling.csv"})
    CHECK(drop_last_column(slurp(dir.path / "p1" / name)) ==
          drop_last_column(slurp(dir.path / "p3" / name)));
  for (const char* name : {"fig1_repurchase.csv", "fig3_elasticity.csv"})
    CHECK(slurp(dir.path / "p1" / name) == slurp(dir.path / "p3" / name));

  const std::string summary = slurp(dir.path / "p1" / "summary.csv");
  CHECK(summary.rfind("setting,name,model,", 0) == 0);
  int lines = 0;
  for (char ch : summary)
    if (ch == '\n') ++lines;
  CHECK(lines == 1 + 2);  // one row per model

  const std::string detail = slurp(dir.path / "p1" / "detail.csv");
  int detail_lines = 0;
  for (char ch : detail)
    if (ch == '\n') ++detail_lines;
  CHECK(detail_lines == 1 + 2 * 2);
}

TEST_CASE("an experiment whose replications all fail exits with the grid error code") {
  TempDir dir;
  const json grid{{"replications", 1},
                  {"settings", json::array({json{{"name", "broken"},
                                                 {"I", 4},
                                                 {"C", 2},
                                                 {"J", 1},
                                                 {"T", 4},
                                                 {"K", 2},
                                                 {"models", json::array({"mixed-logit"})},
                                                 {"mixed", json{{"n_sim_draws", 10}}}}})}};
  dump(dir.path / "grid.json", grid);
  const RunResult r = run("experiment --grid " + dir.sub("grid.json") + " --out " +
                          dir.sub("out"));
  CHECK(r.code == 5);
  CHECK(r.output.find("no successful replication") != std::string::npos);
  CHECK(r.output.find("no within-category variation") != std::string::npos);
}

TEST_CASE("missing inputs and malformed configs map to distinct exit codes") {
  TempDir dir;
  SUBCASE("missing dataset file") {
    const RunResult r = run("fit --data " + dir.sub("absent.csv") + " --out " +
                            dir.sub("out"));
    CHECK(r.code == 3);
  }
  SUBCASE("malformed config JSON") {
    std::ofstream(dir.path / "bad.json") << "{ not json";
    const RunResult r = run("simulate --config " + dir.sub("bad.json") + " --out " +
                            dir.sub("out"));
    CHECK(r.code == 2);
  }
  SUBCASE("missing grid file") {
    const RunResult r = run("experiment --grid " + dir.sub("absent.json") + " --out " +
                            dir.sub("out"));
    CHECK(r.code == 3);
  }
  SUBCASE("unknown subcommand") {
    CHECK(run("frobnicate").code == 2);
  }
  SUBCASE("bad model name") {
    const RunResult r = run("fit" + data_args() + " --model quadratic --out " +
                            dir.sub("out"));
    CHECK(r.code == 2);
  }
}

TEST_CASE("inertia diagnostics write paired-variant repurchase rates") {
  TempDir dir;
  REQUIRE(run("diagnose-inertia --out " + dir.sub("out") +
              " --I 30 --C 3 --J 4 --T 6 --K 2 --seed 8")
              .code == 0);
  const std::string csv = slurp(dir.sub("out") + "/repurchase.csv");
  CHECK(csv.rfind("variant,category,n_pairs,repurchase_prob,mean_switch_prob\n", 0) == 0);
  CHECK(csv.find("inertia,") != std::string::npos);
  CHECK(csv.find("no_inertia,") != std::string::npos);
  int lines = 0;
  for (char ch : csv)
    if (ch == '\n') ++lines;
  CHECK(lines == 1 + 2 * 3);
}
