#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "survrec/boosting.hpp"
#include "survrec/error.hpp"
#include "survrec/explain.hpp"
#include "survrec/metrics.hpp"

using namespace survrec;

namespace {

BoostedModel random_boosted(std::mt19937_64& rng, std::size_t d) {
  std::vector<double> beta(d);
  std::normal_distribution<double> z;
  for (auto& b : beta) b = z(rng);
  const auto sim = generate_synthetic({.n = 120, .true_coefficients = beta, .nonlinear = d >= 3, .seed = rng()});
  BoostParams p;
  p.rounds = 15;
  p.tree_depth = 3;
  p.min_leaf = 3;
  return fit_boosted(sim.cohort, p);
}

std::vector<double> draw(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> z;
  std::vector<double> x(d);
  for (auto& v : x) v = z(rng);
  return x;
}

}  // namespace

TEST_CASE("additive models get closed-form attributions") {
  auto g = [](std::size_t j, double v) { return std::sin(v * (j + 1)) + 0.3 * v * v * j; };
  const FunctionModel f(5, [&](std::span<const double> x) {
    double s = 0;
    for (std::size_t j = 0; j < x.size(); ++j) s += g(j, x[j]);
    return s;
  });
  std::mt19937_64 rng(1);
  const auto x = draw(rng, 5), b = draw(rng, 5);
  const AttributionVector a = exact_shapley(f, x, b);
  for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(a.phi[j] - (g(j, x[j]) - g(j, b[j]))) < 1e-12);
  CHECK(a.explained_value == f.risk(x));
  CHECK(a.baseline_value == f.risk(b));
}

TEST_CASE("constant model attributes nothing") {
  const FunctionModel f(4, [](std::span<const double>) { return 2.5; });
  const auto a = exact_shapley(f, std::vector<double>{1, 2, 3, 4}, std::vector<double>{0, 0, 0, 0});
  for (double p : a.phi) CHECK(p == 0.0);
}

TEST_CASE("axioms on random boosted models") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t d = 2 + rep % 9;
    const BoostedModel m = random_boosted(rng, d);
    const auto x = draw(rng, d), b = draw(rng, d);
    const AttributionVector a = exact_shapley(m, x, b);
    double sum = 0;
    for (double p : a.phi) sum += p;
    CHECK(std::abs(sum - (m.risk(x) - m.risk(b))) < 1e-9);

    // null player: a feature the model ignores
    const FunctionModel padded(d + 1, [&](std::span<const double> z) { return m.risk(z.first(d)); });
    auto xp = x, bp = b;
    xp.push_back(5.0);
    bp.push_back(-5.0);
    const auto ap = exact_shapley(padded, xp, bp);
    CHECK(std::abs(ap.phi[d]) < 1e-9);

    // symmetry: a model symmetric in features 0 and 1 at a point with x0 = x1, b0 = b1
    const FunctionModel sym(d, [&](std::span<const double> z) {
      std::vector<double> swapped(z.begin(), z.end());
      std::swap(swapped[0], swapped[1]);
      return m.risk(z) + m.risk(swapped);
    });
    auto xs = x, bs = b;
    xs[1] = xs[0];
    bs[1] = bs[0];
    const auto as = exact_shapley(sym, xs, bs);
    CHECK(std::abs(as.phi[0] - as.phi[1]) < 1e-9);
  }
}

TEST_CASE("subset enumeration equals the permutation definition") {
  std::mt19937_64 rng(3);
  for (std::size_t d = 1; d <= 6; ++d) {
    const BoostedModel m = random_boosted(rng, std::max<std::size_t>(d, 2));
    const std::size_t dm = m.n_features();
    const auto x = draw(rng, dm), b = draw(rng, dm);
    const AttributionVector a = exact_shapley(m, x, b);
    const auto oracle_phi = oracle::shapley_by_permutation([&](const std::vector<double>& z) { return m.risk(z); }, x, b);
    for (std::size_t j = 0; j < dm; ++j) CHECK(std::abs(a.phi[j] - oracle_phi[j]) < 1e-12);
  }
}

TEST_CASE("too many features for exact enumeration") {
  const FunctionModel f(15, [](std::span<const double>) { return 0.0; });
  const std::vector<double> x(15, 0.0);
  try {
    exact_shapley(f, x, x);
    FAIL("expected size error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Size);
  }
  CHECK_THROWS_AS(exact_shapley(f, std::vector<double>(3, 0.0), std::vector<double>(3, 0.0)), Error);
}

TEST_CASE("mean absolute SHAP ranks features") {
  const auto sim = generate_synthetic({.n = 200, .true_coefficients = {0.2, -1.5, 0.8}, .seed = 4});
  const FunctionModel lin(3, [](std::span<const double> x) { return 0.2 * x[0] - 1.5 * x[1] + 0.8 * x[2]; });
  const auto bg = feature_medians(sim.cohort);
  const auto ranked = mean_abs_shap(lin, sim.cohort, bg, 3);
  REQUIRE(ranked.size() == 3);
  CHECK(ranked[0].feature == "x2");
  CHECK(ranked[1].feature == "x3");
  CHECK(ranked[2].feature == "x1");
  double expect = 0;
  for (const auto& r : sim.cohort.records()) expect += 1.5 * std::abs(r.features[1] - bg[1]) / 200;
  CHECK(std::abs(ranked[0].value - expect) < 1e-12);
  // thread count does not change the result
  const auto single = mean_abs_shap(lin, sim.cohort, bg, 1);
  for (std::size_t k = 0; k < 3; ++k) CHECK(single[k].value == ranked[k].value);
}

TEST_CASE("feature medians") {
  const Cohort c({"a", "b"}, {{"1", 1, 1, {1, 10}}, {"2", 2, 1, {3, 20}}, {"3", 3, 0, {2, 40}}, {"4", 4, 1, {4, 30}}});
  const auto m = feature_medians(c);
  CHECK(m[0] == 2.5);
  CHECK(m[1] == 25.0);
}

TEST_CASE("permutation importance") {
  const auto sim = generate_synthetic({.n = 1000, .true_coefficients = {1.0, 0.0, 0.0}, .seed = 5});
  // uses only the first feature
  const FunctionModel m(3, [](std::span<const double> x) { return x[0]; });
  const ImportanceReport r = permutation_importance(m, sim.cohort, 20, 11);
  CHECK(r.repeats == 20);
  CHECK(r.seed == 11);
  REQUIRE(r.entries.size() == 3);
  CHECK(r.entries[0].feature == "x1");
  CHECK(r.entries[0].mean_drop > 0.1);
  for (const auto& e : r.entries) {
    CHECK(e.std_drop >= 0.0);
    CHECK(e.completed == 20);
    if (e.feature != "x1") {
      CHECK(e.mean_drop == 0.0);
      CHECK(e.std_drop == 0.0);
    }
  }
  for (std::size_t k = 1; k < r.entries.size(); ++k) CHECK(r.entries[k - 1].mean_drop >= r.entries[k].mean_drop);
  CHECK(r.baseline == c_index(sim.cohort.times(), sim.cohort.events(), sim.cohort.column(0)).c_index);

  const ImportanceReport again = permutation_importance(m, sim.cohort, 20, 11);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(again.entries[k].feature == r.entries[k].feature);
    CHECK(again.entries[k].mean_drop == r.entries[k].mean_drop);
  }
}

TEST_CASE("uninformative feature in a fitted model has negligible importance") {
  const auto sim = generate_synthetic({.n = 1000, .true_coefficients = {1.0, -1.0, 0.0}, .seed = 6});
  BoostParams p;
  p.mode = BoostMode::Componentwise;
  p.rounds = 100;
  const BoostedModel m = fit_boosted(sim.cohort, p);
  const ImportanceReport r = permutation_importance(m, sim.cohort, 20, 3);
  for (const auto& e : r.entries) {
    if (e.feature == "x3") CHECK(std::abs(e.mean_drop) < 0.02);
  }
  CHECK(r.entries.back().feature == "x3");
}

TEST_CASE("undefined metric repeats are skipped and counted") {
  const auto sim = generate_synthetic({.n = 50, .true_coefficients = {1.0, 0.5}, .seed = 7});
  const FunctionModel m(2, [](std::span<const double> x) { return x[0] + x[1]; });
  int calls = 0;
  const RiskMetric flaky = [&](std::span<const double> t, std::span<const int> e, std::span<const double> s) {
    if (calls++ % 2 == 0 && calls > 1) throw Error(ErrorKind::UndefinedMetric, "no pairs");
    return c_index_metric(t, e, s);
  };
  const ImportanceReport r = permutation_importance(m, sim.cohort, 4, 1, flaky);
  int completed = 0, skipped = 0;
  for (const auto& e : r.entries) {
    completed += e.completed;
    skipped += e.skipped;
    CHECK(e.completed + e.skipped == 4);
  }
  CHECK(completed == 4);
  CHECK(skipped == 4);
  CHECK_THROWS_AS(permutation_importance(m, sim.cohort, 0, 1), Error);
}
