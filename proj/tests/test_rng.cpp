#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <vector>

#include "dfm/numeric.hpp"
#include "dfm/rng.hpp"

using namespace dfm;

TEST_CASE("same seed reproduces the same sequence") {
  Rng a(42), b(42);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds give different sequences") {
  Rng a(1), b(2);
  int differ = 0;
  for (int i = 0; i < 16; ++i)
    if (a.next_u64() != b.next_u64()) ++differ;
  CHECK(differ >= 15);
}

TEST_CASE("named substreams are reproducible and distinct") {
  const Rng root(7);
  Rng a1 = root.stream("theta");
  Rng a2 = root.stream("theta");
  Rng b = root.stream("gamma");
  const std::uint64_t x1 = a1.next_u64();
  CHECK(x1 == a2.next_u64());
  CHECK(x1 != b.next_u64());
}

TEST_CASE("substream derivation ignores parent consumption") {
  Rng root(99);
  Rng before = root.stream("path");
  for (int i = 0; i < 10; ++i) root.next_u64();
  Rng after = root.stream("path");
  for (int i = 0; i < 8; ++i) CHECK(before.next_u64() == after.next_u64());
}

TEST_CASE("indexed substreams are pairwise distinct") {
  const Rng root(3);
  std::set<std::uint64_t> firsts;
  for (std::uint64_t i = 0; i < 100; ++i)
    firsts.insert(root.stream(i).next_u64());
  CHECK(firsts.size() == 100);
}

TEST_CASE("nested stream paths separate cleanly") {
  const Rng root(5);
  Rng ab = root.stream("a").stream("b");
  Rng ab2 = root.stream("a").stream("b");
  Rng ba = root.stream("b").stream("a");
  const std::uint64_t x = ab.next_u64();
  CHECK(x == ab2.next_u64());
  CHECK(x != ba.next_u64());
}

TEST_CASE("uniform lies in [0,1) with correct moments") {
  Rng rng(11);
  const int n = 1000000;
  std::vector<double> xs(n);
  for (double& x : xs) {
    x = rng.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
  }
  CHECK(mean(xs) == doctest::Approx(0.5).epsilon(0.01));
  CHECK(sample_sd(xs) == doctest::Approx(std::sqrt(1.0 / 12.0)).epsilon(0.01));
}

TEST_CASE("uniform(lo,hi) respects its range") {
  Rng rng(12);
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.uniform(2.5, 3.5);
    REQUIRE(x >= 2.5);
    REQUIRE(x < 3.5);
  }
}

TEST_CASE("uniform_int covers {0..n-1} without visible bias") {
  Rng rng(13);
  const std::uint64_t n = 7;
  const int draws = 700000;
  std::vector<int> counts(n, 0);
  for (int i = 0; i < draws; ++i) {
    const std::uint64_t x = rng.uniform_int(n);
    REQUIRE(x < n);
    ++counts[x];
  }
  const double expected = draws / static_cast<double>(n);
  const double sd = std::sqrt(expected * (1.0 - 1.0 / static_cast<double>(n)));
  for (int c : counts) CHECK(std::abs(c - expected) < 5.0 * sd);
}

TEST_CASE("uniform_int(1) always returns zero") {
  Rng rng(14);
  for (int i = 0; i < 100; ++i) CHECK(rng.uniform_int(1) == 0);
}

TEST_CASE("normal has standard moments") {
  Rng rng(15);
  const int n = 1000000;
  std::vector<double> xs(n);
  for (double& x : xs) x = rng.normal();
  CHECK(std::abs(mean(xs)) < 0.005);
  CHECK(sample_sd(xs) == doctest::Approx(1.0).epsilon(0.005));
  int outside3 = 0;
  for (double x : xs)
    if (std::abs(x) > 3.0) ++outside3;
  // P(|Z|>3) = 0.0027; allow a wide band.
  CHECK(outside3 > 1800);
  CHECK(outside3 < 3700);
}

TEST_CASE("gumbel has the right location and scale") {
  Rng rng(16);
  const int n = 1000000;
  std::vector<double> xs(n);
  for (double& x : xs) {
    x = rng.gumbel();
    REQUIRE(std::isfinite(x));
  }
  const double euler_gamma = 0.57721566490153286;
  CHECK(mean(xs) == doctest::Approx(euler_gamma).epsilon(0.01));
  const double sd = M_PI / std::sqrt(6.0);
  CHECK(sample_sd(xs) == doctest::Approx(sd).epsilon(0.01));
}

TEST_CASE("fnv1a64 matches the published reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("uniformity across 16 bins passes a chi-square check") {
  Rng rng(17);
  const int n = 160000;
  std::vector<int> counts(16, 0);
  for (int i = 0; i < n; ++i)
    ++counts[static_cast<int>(rng.uniform() * 16.0)];
  double chi2 = 0.0;
  const double expected = n / 16.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // df = 15, 0.001 critical value 37.70.
  CHECK(chi2 < 37.70);
}
