#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "survrec/error.hpp"
#include "survrec/pipeline.hpp"
#include "survrec/svg.hpp"

using namespace survrec;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("survrec_test_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

PipelineConfig small_config(const fs::path& dir, const Cohort& cohort) {
  write_cohort(dir / "cohort.csv", cohort);
  PipelineConfig c;
  c.cohort = dir / "cohort.csv";
  c.out = dir / "out";
  c.cv_folds = 3;
  c.importance_repeats = 3;
  c.xgboost.rounds = c.gbm.rounds = 30;
  c.coxboost.rounds = 50;
  c.rsf.n_trees = 30;
  return c;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("learner names") {
  CHECK(learner_from_string("XGBoost") == Learner::XGBoost);
  CHECK(learner_from_string("rsf") == Learner::RSF);
  CHECK(learner_from_string("coxph") == Learner::CoxPH);
  CHECK(std::string(to_string(Learner::Temporal)) == "Temporal");
  CHECK_THROWS_AS(learner_from_string("svm"), Error);
}

TEST_CASE("hashing") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hex64(0xaf63dc4c8601ec8cULL) == "af63dc4c8601ec8c");
  CHECK(hex64(1) == "0000000000000001");
}

TEST_CASE("stratified folds") {
  std::vector<int> events;
  for (int i = 0; i < 103; ++i) events.push_back(i % 3 == 0 ? 0 : 1);
  const auto folds = stratified_folds(events, 5, 42);
  REQUIRE(folds.size() == 103);
  std::vector<int> size(5, 0), ev(5, 0);
  for (std::size_t i = 0; i < folds.size(); ++i) {
    REQUIRE(folds[i] >= 0);
    REQUIRE(folds[i] < 5);
    ++size[folds[i]];
    ev[folds[i]] += events[i];
  }
  CHECK(*std::max_element(size.begin(), size.end()) - *std::min_element(size.begin(), size.end()) <= 1);
  CHECK(*std::max_element(ev.begin(), ev.end()) - *std::min_element(ev.begin(), ev.end()) <= 1);
  CHECK(stratified_folds(events, 5, 42) == folds);
  CHECK(stratified_folds(events, 5, 43) != folds);
  CHECK_THROWS_AS(stratified_folds(events, 1, 1), Error);
  CHECK_THROWS_AS(stratified_folds(std::vector<int>{1, 0}, 3, 1), Error);
}

TEST_CASE("median stratification") {
  Stratification s = stratify_by_median(std::vector<double>{1, 2, 3, 4});
  CHECK(s.cutoff == 2.5);
  CHECK(s.low == std::vector<std::size_t>{0, 1});
  CHECK(s.high == std::vector<std::size_t>{2, 3});

  s = stratify_by_median(std::vector<double>{3, 2, 1, 2});
  CHECK(s.cutoff == 2.0);
  CHECK(s.low == std::vector<std::size_t>{1, 2, 3});
  CHECK(s.high == std::vector<std::size_t>{0});

  try {
    stratify_by_median(std::vector<double>{1, 1, 1});
    FAIL("expected degenerate stratification");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateStratification);
  }
  // median equals the maximum: nobody is above it
  CHECK_THROWS_AS(stratify_by_median(std::vector<double>{1, 2, 2, 2}), Error);
}

TEST_CASE("preprocessing uses training statistics only") {
  const auto sim = generate_synthetic({.n = 300, .true_coefficients = {1.0, -0.8, 0.0, 0.0}, .seed = 3});
  std::vector<SurvivalRecord> recs = sim.cohort.records();
  for (auto& r : recs) r.features[0] = 50 + 10 * r.features[0];
  const Cohort raw(sim.cohort.feature_names(), recs);
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < 300; ++i) (i < 200 ? train : test).push_back(i);
  PipelineConfig config;
  const Preprocessing pre = fit_preprocessing(raw.subset(train), config);
  CHECK(std::find(pre.features.begin(), pre.features.end(), "x1") != pre.features.end());
  CHECK(std::find(pre.features.begin(), pre.features.end(), "x2") != pre.features.end());

  const Cohort applied = pre.apply(raw.subset(test));
  const auto fi = applied.feature_index("x1");
  REQUIRE(fi);
  const std::size_t k = static_cast<std::size_t>(
      std::find(pre.zscore.kept_features.begin(), pre.zscore.kept_features.end(), "x1") - pre.zscore.kept_features.begin());
  const auto stat = pre.zscore.stats[k];
  CHECK(std::abs(applied[0].features[*fi] - (raw[200].features[0] - stat.mean) / stat.stddev) < 1e-12);
  double mean = 0;
  for (std::size_t i : train) mean += raw[i].features[0] / 200;
  CHECK(std::abs(stat.mean - mean) < 1e-9);

  // nothing survives screening
  const auto noise = generate_synthetic({.n = 100, .true_coefficients = {0.0}, .seed = 4});
  PipelineConfig strict;
  strict.alpha = 1e-12;
  try {
    fit_preprocessing(noise.cohort, strict);
    FAIL("expected pipeline error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Pipeline);
  }
}

TEST_CASE("test-fold outcomes never influence a fold") {
  const fs::path dir = scratch("leak");
  const auto sim = generate_synthetic({.n = 150, .true_coefficients = {1.0, -1.0, 0.0}, .seed = 5});
  const PipelineConfig config = small_config(dir, sim.cohort);
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < 150; ++i) (i % 3 == 0 ? test : train).push_back(i);

  std::vector<double> times = sim.cohort.times();
  std::vector<int> events = sim.cohort.events();
  std::mt19937_64 rng(6);
  std::vector<double> test_times;
  std::vector<int> test_events;
  for (std::size_t i : test) {
    test_times.push_back(times[i]);
    test_events.push_back(events[i]);
  }
  std::shuffle(test_times.begin(), test_times.end(), rng);
  for (std::size_t k = 0; k < test.size(); ++k) {
    times[test[k]] = test_times[k] * 1.7 + 3;
    events[test[k]] = 1 - test_events[k];
  }
  const Cohort tampered = sim.cohort.with_outcomes(times, events);

  const FoldOutcome a = run_fold(config, sim.cohort, nullptr, train, test, 1);
  const FoldOutcome b = run_fold(config, tampered, nullptr, train, test, 1);
  CHECK(a.features == b.features);
  REQUIRE(a.fitted.size() == 5);
  REQUIRE(a.fitted.size() == b.fitted.size());
  for (std::size_t m = 0; m < a.fitted.size(); ++m) CHECK(a.fitted[m].second.model_hash == b.fitted[m].second.model_hash);
  for (std::size_t m = 0; m < a.predictions.size(); ++m) {
    CHECK(a.predictions[m].second.risk == b.predictions[m].second.risk);
    CHECK(a.predictions[m].second.survival == b.predictions[m].second.survival);
  }
}

TEST_CASE("a failing learner is isolated") {
  const fs::path dir = scratch("isolate");
  const auto sim = generate_synthetic({.n = 120, .true_coefficients = {1.0, -1.0}, .seed = 7});
  PipelineConfig config = small_config(dir, sim.cohort);
  config.rsf.mtry = 50;
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < 120; ++i) (i % 4 == 0 ? test : train).push_back(i);
  const FoldOutcome f = run_fold(config, sim.cohort, nullptr, train, test, 1);
  REQUIRE(f.failures.size() == 1);
  CHECK(f.failures[0].first == Learner::RSF);
  CHECK(f.failures[0].second.find("parameter") == 0);
  CHECK(f.predictions.size() == 4);
}

TEST_CASE("pure-noise cross-validated concordance is near one half") {
  double mean = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const fs::path dir = scratch("noise" + std::to_string(seed));
    const auto sim = generate_synthetic({.n = 200, .true_coefficients = {0.0, 0.0, 0.0}, .seed = seed});
    PipelineConfig config = small_config(dir, sim.cohort);
    config.alpha = 1.0;
    config.learners = {Learner::CoxPH};
    config.seed = seed;
    const auto cv = cross_validate(config, sim.cohort);
    mean += cv.models[0].concordance.c_index / 4;
  }
  CHECK(std::abs(mean - 0.5) < 0.05);
}

TEST_CASE("config parsing") {
  const fs::path dir = scratch("config");
  nlohmann::json j{{"cohort", "data/c.csv"}, {"learners", {"coxph", "RSF"}}, {"rsf", {{"n_trees", 7}}}, {"seed", 9}};
  const PipelineConfig c = parse_config(j, dir);
  CHECK(c.cohort == dir / "data/c.csv");
  CHECK(c.learners == std::vector<Learner>{Learner::CoxPH, Learner::RSF});
  CHECK(c.rsf.n_trees == 7);
  CHECK(c.seed == 9);
  CHECK(c.coxboost.mode == BoostMode::Componentwise);
  CHECK(c.gbm.mode == BoostMode::Gbm);
  CHECK(c.xgboost.mode == BoostMode::Xgboost);
  CHECK(c.thresholds().size() == 12);
  CHECK(std::abs(c.thresholds().front() - 0.05) < 1e-15);
  CHECK(std::abs(c.thresholds().back() - 0.60) < 1e-15);

  nlohmann::json bad = j;
  bad["colour"] = "red";
  try {
    parse_config(bad, dir);
    FAIL("expected schema error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Schema);
  }
  CHECK_THROWS_AS(parse_config(nlohmann::json{{"alpha", 0.1}}, dir), Error);
  nlohmann::json folds = j;
  folds["cv_folds"] = 1;
  CHECK_THROWS_AS(parse_config(folds, dir), Error);

  // the output location is not part of the configuration identity
  PipelineConfig moved = c;
  moved.out = dir / "elsewhere";
  CHECK(config_to_json(moved) == config_to_json(c));
  PipelineConfig reseeded = c;
  reseeded.seed = 10;
  CHECK(config_to_json(reseeded) != config_to_json(c));
}

TEST_CASE("Kaplan-Meier plot structure") {
  const StepFunction low({1, 3, 5}, {0.9, 0.8, 0.6}, 1.0);
  const StepFunction high({1, 2}, {0.5, 0.2}, 1.0);
  const std::string s = svg::km_plot(low, high, 0.0123, 6.0);
  CHECK(s.rfind("<svg", 0) == 0);
  CHECK(count(s, "class=\"step-path\"") == 2);
  CHECK(count(s, "class=\"p-value\"") == 1);
  CHECK(s.find("log-rank p = ") != std::string::npos);
  CHECK(s == svg::km_plot(low, high, 0.0123, 6.0));
  // three-decimal coordinates only
  CHECK(!std::regex_search(s, std::regex(R"(="[^"]*\d\.\d{4})")));
}

TEST_CASE("end-to-end run is deterministic and writes every artifact") {
  const fs::path dir = scratch("e2e");
  const auto sim = generate_synthetic({.n = 160, .true_coefficients = {1.0, -0.8, 0.6, 0.0, 0.0}, .seed = 8});
  PipelineConfig config = small_config(dir, sim.cohort);
  config.horizons = {10, 20};
  const PipelineResult a = run_pipeline(config, true);
  config.out = dir / "out2";
  const PipelineResult b = run_pipeline(config, true);
  CHECK(a.report.dump() == b.report.dump());
  CHECK(a.report.at("schema_version") == kReportSchemaVersion);
  CHECK(a.report.at("models").size() == 5);

  for (const char* f : {"report.json", "screen.csv", "vif_removed.csv", "oof_predictions.csv", "shap_importance.csv",
                        "permutation_importance.csv", "auc_curves.csv", "calibration.csv", "dca.csv", "km_low.csv",
                        "km_high.csv", "km.svg", "auc.svg", "calibration.svg", "dca.svg", "chosen_model.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(dir / "out" / f));
    CHECK(slurp(dir / "out" / f) == slurp(dir / "out2" / f));
  }
  const std::string km = slurp(dir / "out" / "km.svg");
  CHECK(count(km, "class=\"step-path\"") == 2);
  CHECK(slurp(dir / "out" / "screen.csv").rfind("feature,HR,CI_low,CI_high,p\n", 0) == 0);

  // chosen model has the best concordance among the tabular learners
  double best = -1;
  for (const auto& m : a.cv.models) {
    if (!m.failed && m.learner != Learner::Temporal) best = std::max(best, m.concordance.c_index);
  }
  for (const auto& m : a.cv.models) {
    if (m.learner == a.chosen) CHECK(m.concordance.c_index == best);
  }
  CHECK(a.strata.low.size() + a.strata.high.size() == 160);
  CHECK(a.log_rank.p_value < 0.05);
  CHECK(a.report.at("provenance").at("config_hash").get<std::string>().size() == 16);
}

TEST_CASE("longitudinal input adds the temporal learner") {
  const fs::path dir = scratch("temporal");
  LongitudinalSpec spec;
  spec.base.n = 120;
  spec.base.true_coefficients = {1.0, -1.0};
  spec.base.seed = 9;
  const auto data = generate_longitudinal(spec);
  PipelineConfig config = small_config(dir, data.cohort.last_snapshot_cohort());
  {
    std::ofstream out(dir / "long.csv");
    write_longitudinal(out, data.cohort);
  }
  config.longitudinal = dir / "long.csv";
  config.learners = {Learner::CoxPH, Learner::Temporal};
  config.temporal.epochs = 20;
  const PipelineResult r = run_pipeline(config, false);
  REQUIRE(r.cv.models.size() == 2);
  CHECK(r.cv.models[1].learner == Learner::Temporal);
  CHECK(!r.cv.models[1].failed);
  CHECK(r.chosen == Learner::CoxPH);
}
