#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "survrec/error.hpp"
#include "survrec/metrics.hpp"
#include "survrec/rsf.hpp"

using namespace survrec;

namespace {

std::vector<double> sample_row(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> z;
  std::vector<double> x(d);
  for (auto& v : x) v = 1.5 * z(rng);
  return x;
}

}  // namespace

TEST_CASE("depth-0 tree on the full sample is the Nelson-Aalen estimate") {
  const auto sim = generate_synthetic({.n = 80, .true_coefficients = {1, -1}, .seed = 1});
  ForestParams p;
  p.n_trees = 1;
  p.max_depth = 0;
  p.bootstrap = false;
  const Forest f = fit_rsf(sim.cohort, p);
  const StepFunction na = nelson_aalen(sim.cohort.times(), sim.cohort.events());
  std::mt19937_64 rng(2);
  for (int k = 0; k < 10; ++k) CHECK(predict_chf(f, sample_row(rng, 2)) == na);
  CHECK(f.trees[0].oob_indices.empty());
}

TEST_CASE("depth-0 bootstrap tree is Nelson-Aalen of its bootstrap sample") {
  const auto sim = generate_synthetic({.n = 60, .true_coefficients = {1}, .seed = 2});
  ForestParams p;
  p.n_trees = 1;
  p.max_depth = 0;
  const Forest f = fit_rsf(sim.cohort, p);
  const auto& tree = f.trees[0];
  REQUIRE(tree.bootstrap_indices.size() == 60);
  std::vector<double> t;
  std::vector<int> e;
  for (std::size_t i : tree.bootstrap_indices) {
    t.push_back(sim.cohort[i].time);
    e.push_back(sim.cohort[i].event);
  }
  CHECK(predict_chf(f, std::vector<double>{0.0}) == nelson_aalen(t, e));
  CHECK(tree.terminal_counts[0] == 60);
  // out-of-bag set is exactly the undrawn subjects
  std::set<std::size_t> drawn(tree.bootstrap_indices.begin(), tree.bootstrap_indices.end());
  for (std::size_t i : tree.oob_indices) CHECK(!drawn.count(i));
  CHECK(drawn.size() + tree.oob_indices.size() == 60);
}

TEST_CASE("split scan matches the two-sample log-rank statistic") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 30; ++rep) {
    const auto rc = oracle::random_cohort(rng, 25, 1, rep % 2 == 0);
    std::vector<double> x;
    for (const auto& r : rc.x) x.push_back(std::round(r[0] * 3) / 3);
    const auto scan = logrank_split_scan(rc.times, rc.events, x);
    std::vector<double> distinct(x);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    REQUIRE(scan.size() == distinct.size() - 1);
    for (std::size_t k = 0; k < scan.size(); ++k) {
      CHECK(scan[k].threshold == 0.5 * (distinct[k] + distinct[k + 1]));
      std::vector<double> ta, tb;
      std::vector<int> ea, eb;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] <= scan[k].threshold) {
          ta.push_back(rc.times[i]);
          ea.push_back(rc.events[i]);
        } else {
          tb.push_back(rc.times[i]);
          eb.push_back(rc.events[i]);
        }
      }
      CHECK(scan[k].left_events == static_cast<std::size_t>(std::count(ea.begin(), ea.end(), 1)));
      CHECK(scan[k].right_events == static_cast<std::size_t>(std::count(eb.begin(), eb.end(), 1)));
      double expected = 0.0;
      try {
        expected = log_rank({ta, ea}, {tb, eb}).chi_square;
      } catch (const Error&) {
      }
      CHECK(std::abs(scan[k].statistic - expected) < 1e-9 * std::max(1.0, expected));
    }
  }
}

TEST_CASE("separating binary feature is chosen at the root") {
  std::vector<SurvivalRecord> recs;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  for (int i = 0; i < 40; ++i) {
    const bool early = i < 20;
    recs.push_back({"r" + std::to_string(i), early ? 1.0 + 0.1 * i : 10.0 + i, early ? 1 : i % 2, {z(rng), early ? 1.0 : 0.0, z(rng)}});
  }
  ForestParams p;
  p.n_trees = 1;
  p.mtry = 3;
  p.bootstrap = false;
  const Forest f = fit_rsf(Cohort({"a", "sep", "b"}, recs), p);
  CHECK(f.trees[0].nodes[0].feature == 1);
  CHECK(f.trees[0].nodes[0].threshold == 0.5);
}

TEST_CASE("ensemble averaging") {
  Forest f;
  f.feature_names = {"x"};
  f.max_event_time = 2.0;
  for (double h : {1.0, 3.0}) {
    SurvivalTree t;
    t.nodes.push_back({-1, 0.0, -1, -1, 0});
    t.terminal_chf.push_back(StepFunction({1.0}, {h}, 0.0));
    t.terminal_counts.push_back(1);
    f.trees.push_back(t);
  }
  const std::vector<double> x{0.0};
  const StepFunction chf = predict_chf(f, x);
  CHECK(chf(0.5) == 0.0);
  CHECK(chf(1.0) == 2.0);
  CHECK(risk_score(f, x) == 2.0);
  // tree order does not matter
  std::swap(f.trees[0], f.trees[1]);
  CHECK(predict_chf(f, x) == chf);

  f.trees.resize(1);
  f.trees[0].terminal_chf[0] = StepFunction({1.0}, {std::log(2.0)}, 0.0);
  const StepFunction s = predict_survival(f, x);
  CHECK(s(0.0) == 1.0);
  CHECK(std::abs(s(1.0) - 0.5) < 1e-15);

  f.trees[0].terminal_chf[0] = StepFunction({}, {}, 0.0);
  CHECK(risk_score(f, x) == 0.0);
  CHECK(predict_survival(f, x)(5.0) == 1.0);
  CHECK_THROWS_AS(predict_chf(f, std::vector<double>{1.0, 2.0}), Error);
}

TEST_CASE("forest predictions are monotone, consistent and informative") {
  const auto sim = generate_synthetic({.n = 1000, .true_coefficients = {1, -1, 0}, .seed = 5});
  ForestParams p;
  p.n_trees = 200;
  const Forest f = fit_rsf(sim.cohort, p);
  std::mt19937_64 rng(6);
  for (int k = 0; k < 100; ++k) {
    const auto x = sample_row(rng, 3);
    const StepFunction chf = predict_chf(f, x);
    const StepFunction s = predict_survival(f, x);
    double prev = 0.0;
    for (std::size_t i = 0; i < chf.size(); ++i) {
      CHECK(chf.values()[i] >= prev);
      prev = chf.values()[i];
      CHECK(std::abs(-std::log(s.values()[i]) - chf.values()[i]) < 1e-12);
      CHECK(s.values()[i] > 0.0);
    }
    CHECK(risk_score(f, x) == chf(f.max_event_time));
  }

  const auto test = generate_synthetic({.n = 500, .true_coefficients = {1, -1, 0}, .seed = 7});
  std::vector<double> scores;
  for (const auto& r : test.cohort.records()) scores.push_back(risk_score(f, r.features));
  // frozen from the first verified run
  CHECK(c_index(test.cohort.times(), test.cohort.events(), scores).c_index > 0.65);
}

TEST_CASE("out-of-bag concordance tracks held-out concordance") {
  const auto train = generate_synthetic({.n = 400, .true_coefficients = {1, -1}, .seed = 8});
  const auto test = generate_synthetic({.n = 400, .true_coefficients = {1, -1}, .seed = 9});
  ForestParams p;
  p.n_trees = 150;
  const Forest f = fit_rsf(train.cohort, p);
  const auto oob = oob_risk_scores(f, train.cohort);
  std::vector<double> t, s;
  std::vector<int> e;
  for (std::size_t i = 0; i < oob.size(); ++i) {
    if (std::isnan(oob[i])) continue;
    t.push_back(train.cohort[i].time);
    e.push_back(train.cohort[i].event);
    s.push_back(oob[i]);
  }
  CHECK(s.size() == 400);
  std::vector<double> held;
  for (const auto& r : test.cohort.records()) held.push_back(risk_score(f, r.features));
  const double c_oob = c_index(t, e, s).c_index;
  const double c_test = c_index(test.cohort.times(), test.cohort.events(), held).c_index;
  CHECK(std::abs(c_oob - c_test) < 0.05);
}

TEST_CASE("forest is identical across thread counts and runs") {
  const auto sim = generate_synthetic({.n = 200, .true_coefficients = {1, -1}, .seed = 10});
  ForestParams p;
  p.n_trees = 40;
  p.n_threads = 1;
  const Forest a = fit_rsf(sim.cohort, p);
  p.n_threads = 4;
  const Forest b = fit_rsf(sim.cohort, p);
  CHECK(a.trees == b.trees);
  CHECK(a.to_json().dump() == b.to_json().dump());
  const Forest back = Forest::from_json(a.to_json());
  CHECK(back.to_json() == a.to_json());
  for (const auto& r : sim.cohort.records()) CHECK(risk_score(back, r.features) == risk_score(a, r.features));
}

TEST_CASE("min_node_events is respected in every split") {
  const auto sim = generate_synthetic({.n = 300, .true_coefficients = {1, -1}, .seed = 11});
  ForestParams p;
  p.n_trees = 10;
  p.min_node_events = 8;
  const Forest f = fit_rsf(sim.cohort, p);
  for (const auto& tree : f.trees) {
    for (const auto& chf : tree.terminal_chf) {
      // terminal CHF has one knot per distinct event time, at least one event each
      CHECK(chf.size() >= 1);
    }
    for (std::size_t k = 0; k < tree.terminal_chf.size(); ++k) CHECK(tree.terminal_counts[k] >= 8);
  }
}

TEST_CASE("invalid inputs") {
  const auto sim = generate_synthetic({.n = 50, .true_coefficients = {1, -1}, .seed = 12});
  ForestParams p;
  p.n_trees = 0;
  CHECK_THROWS_AS(fit_rsf(sim.cohort, p), Error);
  p = {};
  p.mtry = 3;
  CHECK_THROWS_AS(fit_rsf(sim.cohort, p), Error);
  std::vector<SurvivalRecord> recs{{"a", 1, 0, {1}}, {"b", 2, 0, {2}}};
  CHECK_THROWS_AS(fit_rsf(Cohort({"x"}, recs), ForestParams{}), Error);
}
