#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "survrec/data_model.hpp"
#include "survrec/error.hpp"
#include "survrec/metrics.hpp"

using namespace survrec;

namespace {

Cohort parse(const std::string& text, CohortSchema schema = {}) {
  std::istringstream in(text);
  return read_cohort(in, schema);
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an exception");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("one-row file transcribes directly") {
  const Cohort c = parse("id,t,e,x\np1,12.0,1,0.5\n", {"id", "t", "e", {}});
  REQUIRE(c.size() == 1);
  CHECK(c[0].id == "p1");
  CHECK(c[0].time == 12.0);
  CHECK(c[0].event == 1);
  CHECK(c.feature_names() == std::vector<std::string>{"x"});
  CHECK(c[0].features == std::vector<double>{0.5});
}

TEST_CASE("bad event value names the row and column") {
  try {
    parse("id,t,e,x\np1,12.0,2,0.5\n", {"id", "t", "e", {}});
    FAIL("no error");
  } catch (const ParseError& e) {
    CHECK(e.row() == 1);
    CHECK(e.column() == "e");
  }
}

TEST_CASE("ingestion errors") {
  CHECK(kind_of([] { parse(""); }) == ErrorKind::EmptyCohort);
  CHECK(kind_of([] { parse("id,time,event,x\n"); }) == ErrorKind::EmptyCohort);
  CHECK(kind_of([] { parse("id,event,x\na,1,2\n"); }) == ErrorKind::Schema);
  CHECK(kind_of([] { parse("id,time,event,x\na,0,1,2\n"); }) == ErrorKind::Parse);
  CHECK(kind_of([] { parse("id,time,event,x\na,3,1,\n"); }) == ErrorKind::Parse);
  CHECK(kind_of([] { parse("id,time,event,x\na,3,1,abc\n"); }) == ErrorKind::Parse);
  CHECK(kind_of([] { parse("id,time,event,x\na,3,1,1\n", {"id", "time", "event", {"y"}}); }) == ErrorKind::Schema);
  CHECK(kind_of([] { Cohort({"a", "a"}, {{"r", 1.0, 1, {1.0, 2.0}}}); }) == ErrorKind::Schema);
}

TEST_CASE("schema selects and orders features") {
  const Cohort c = parse("id,time,event,a,b,c\nr1,1,0,1,2,3\nr2,2,1,4,5,6\n", {"id", "time", "event", {"c", "a"}});
  CHECK(c.feature_names() == std::vector<std::string>{"c", "a"});
  CHECK(c[1].features == std::vector<double>{6, 4});
}

TEST_CASE("write then read reproduces the cohort") {
  const auto sim = generate_synthetic({.n = 40, .true_coefficients = {0.5, -0.25, 1.0}, .seed = 3});
  std::ostringstream out;
  write_cohort(out, sim.cohort);
  const Cohort back = parse(out.str());
  REQUIRE(back.size() == sim.cohort.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == sim.cohort[i].id);
    CHECK(back[i].time == sim.cohort[i].time);
    CHECK(back[i].event == sim.cohort[i].event);
    CHECK(back[i].features == sim.cohort[i].features);
  }
  std::ostringstream again;
  write_cohort(again, back);
  CHECK(again.str() == out.str());
}

TEST_CASE("z-score of [1,2,3] uses the n-1 denominator") {
  const Cohort c({"x"}, {{"a", 1, 1, {1}}, {"b", 2, 1, {2}}, {"c", 3, 0, {3}}});
  const Cohort z = zscore_normalize(c);
  CHECK(z[0].features[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(z[1].features[0] == doctest::Approx(0.0));
  CHECK(z[2].features[0] == doctest::Approx(1.0).epsilon(1e-15));
  REQUIRE(z.normalization());
  CHECK((*z.normalization())[0].mean == 2.0);
  CHECK((*z.normalization())[0].stddev == 1.0);
}

TEST_CASE("constant columns are dropped with a warning") {
  const Cohort c({"x", "k"}, {{"a", 1, 1, {1, 5}}, {"b", 2, 1, {2, 5}}, {"c", 3, 0, {4, 5}}});
  const Cohort z = zscore_normalize(c);
  CHECK(z.feature_names() == std::vector<std::string>{"x"});
  REQUIRE(z.warnings().size() == 1);
  CHECK(z.warnings()[0].find("k") != std::string::npos);
  const Cohort all_constant({"k"}, {{"a", 1, 1, {5}}, {"b", 2, 1, {5}}});
  CHECK(kind_of([&] { zscore_normalize(all_constant); }) == ErrorKind::NoInformativeFeatures);
}

TEST_CASE("normalized columns have mean 0 and sd 1; renormalizing is idempotent") {
  const auto sim = generate_synthetic({.n = 300, .true_coefficients = {1, 2, 3, 4}, .seed = 9});
  const Cohort z = zscore_normalize(sim.cohort);
  for (std::size_t j = 0; j < z.n_features(); ++j) {
    const auto col = z.column(j);
    double mean = 0, ss = 0;
    for (double v : col) mean += v;
    mean /= col.size();
    for (double v : col) ss += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(std::sqrt(ss / (col.size() - 1)) - 1.0) < 1e-9);
  }
  const Cohort zz = zscore_normalize(z);
  for (std::size_t i = 0; i < z.size(); ++i) {
    for (std::size_t j = 0; j < z.n_features(); ++j) CHECK(std::abs(zz[i].features[j] - z[i].features[j]) < 1e-12);
  }
}

TEST_CASE("train-fitted normalization standardizes the train split and keeps held-out ranks") {
  const auto sim = generate_synthetic({.n = 200, .true_coefficients = {1, -1}, .seed = 5});
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < 200; ++i) (i % 4 == 0 ? test : train).push_back(i);
  const Cohort tr = sim.cohort.subset(train);
  const Cohort te = sim.cohort.subset(test);
  const ZScoreFit fit = fit_zscore(tr);
  const Cohort trz = apply_zscore(tr, fit);
  const Cohort tez = apply_zscore(te, fit);
  for (std::size_t j = 0; j < 2; ++j) {
    double mean = 0;
    for (double v : trz.column(j)) mean += v;
    CHECK(std::abs(mean / trz.size()) < 1e-12);
    const auto raw = te.column(j);
    const auto nz = tez.column(j);
    for (std::size_t a = 0; a < raw.size(); ++a) {
      for (std::size_t b = 0; b < raw.size(); ++b) CHECK((raw[a] < raw[b]) == (nz[a] < nz[b]));
    }
  }
}

TEST_CASE("synthetic generator is deterministic") {
  const SyntheticSpec spec{.n = 100, .true_coefficients = {1, -1}, .seed = 42};
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  std::ostringstream sa, sb;
  write_cohort(sa, a.cohort);
  write_cohort(sb, b.cohort);
  CHECK(sa.str() == sb.str());
  CHECK(a.true_scores == b.true_scores);
}

TEST_CASE("synthetic censoring hits the target and is monotone in it") {
  double previous_event_fraction = 1.1;
  for (double target : {0.1, 0.3, 0.6}) {
    const auto sim = generate_synthetic(
        {.n = 1000, .true_coefficients = {0.5, 0.5}, .censoring_rate_target = target, .seed = 11});
    CHECK(std::abs(sim.censoring_rate - target) <= 0.05);
    const double event_fraction = static_cast<double>(sim.cohort.event_count()) / 1000.0;
    CHECK(event_fraction < previous_event_fraction);
    previous_event_fraction = event_fraction;
  }
}

TEST_CASE("unreachable censoring target raises a calibration error") {
  CHECK(kind_of([] {
          generate_synthetic({.n = 500, .true_coefficients = {1}, .censoring_rate_target = 0.99, .seed = 1});
        }) == ErrorKind::Calibration);
}

TEST_CASE("true scores carry the signal") {
  const auto strong = generate_synthetic({.n = 2000, .true_coefficients = {1, -1}, .weibull_shape = 1.5, .seed = 2});
  const auto c = c_index(strong.cohort.times(), strong.cohort.events(), strong.true_scores);
  // frozen from the first verified run
  CHECK(c.c_index >= 0.70);
  CHECK(c.c_index == doctest::Approx(0.7880).epsilon(0.002));

  const auto null = generate_synthetic({.n = 2000, .true_coefficients = {0, 0}, .seed = 2});
  // With beta = 0 every true score is 0; use a feature as the score instead.
  const auto cn = c_index(null.cohort.times(), null.cohort.events(), null.cohort.column(0));
  CHECK(std::abs(cn.c_index - 0.5) < 0.05);
}

TEST_CASE("synthetic spec JSON round-trips and rejects unknown keys") {
  const SyntheticSpec spec{.n = 50, .true_coefficients = {1, 2}, .nonlinear = true, .seed = 8, .feature_names = {"a", "b"}};
  const nlohmann::json j = spec;
  const auto back = j.get<SyntheticSpec>();
  CHECK(back.n == 50);
  CHECK(back.true_coefficients == spec.true_coefficients);
  CHECK(back.nonlinear);
  CHECK(back.feature_names == spec.feature_names);
  nlohmann::json bad = j;
  bad["bogus"] = 1;
  CHECK_THROWS_AS(bad.get<SyntheticSpec>(), Error);
}

TEST_CASE("bundled demo cohort has 186 subjects") {
  const char* dir = std::getenv("SURVREC_DATA_DIR");
  REQUIRE(dir != nullptr);
  const Cohort c = load_cohort(std::filesystem::path(dir) / "demo_cohort.csv", {});
  CHECK(c.size() == 186);
}
