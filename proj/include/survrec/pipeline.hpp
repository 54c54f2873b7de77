#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "survrec/boosting.hpp"
#include "survrec/coxph.hpp"
#include "survrec/data_model.hpp"
#include "survrec/explain.hpp"
#include "survrec/metrics.hpp"
#include "survrec/rsf.hpp"
#include "survrec/temporal.hpp"

namespace survrec {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

// Learners in report order; this order also breaks C-index ties when
// choosing the final model.
enum class Learner { XGBoost, RSF, CoxBoost, GBM, CoxPH, Temporal };

const char* to_string(Learner learner);
Learner learner_from_string(const std::string& name);

struct PipelineConfig {
  std::filesystem::path cohort;
  std::optional<std::filesystem::path> longitudinal;
  std::optional<std::filesystem::path> voxel_dir;  // <id>.grid / <id>.mask pairs
  std::size_t radiomics_levels = 32;
  double alpha = 0.05;
  double vif_threshold = 5.0;
  int cv_folds = 5;
  std::vector<double> horizons{12.0, 24.0};
  std::size_t calibration_bins = 10;
  std::vector<double> dca_thresholds;  // empty: 0.05, 0.10, ..., 0.60
  double net_benefit_threshold = 0.25;
  int importance_repeats = 20;
  bool shap = true;
  std::vector<Learner> learners{Learner::XGBoost, Learner::RSF, Learner::CoxBoost, Learner::GBM, Learner::CoxPH};
  CoxOptions cox;
  BoostParams xgboost{.mode = BoostMode::Xgboost};
  BoostParams coxboost{.rounds = 200, .learning_rate = 0.1, .mode = BoostMode::Componentwise};
  BoostParams gbm{.mode = BoostMode::Gbm};
  ForestParams rsf;
  TemporalOptions temporal;
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";
  unsigned threads = 0;

  void validate() const;
  std::vector<double> thresholds() const;
};

// Relative paths are resolved against `base_dir`; unknown keys are rejected.
PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const PipelineConfig& config);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);

// Event-stratified fold labels in [0, k): events and censored subjects are
// each shuffled (seeded) and dealt round-robin.
std::vector<int> stratified_folds(std::span<const int> events, int k, std::uint64_t seed);

struct Stratification {
  std::vector<std::size_t> high;
  std::vector<std::size_t> low;
  double cutoff = 0.0;
};

// Median cut-off: score > median is high risk, score <= median is low risk.
Stratification stratify_by_median(std::span<const double> scores);

// Preprocessing fitted on one training set: z-score, univariate screen and
// VIF filter.
struct Preprocessing {
  ZScoreFit zscore;
  ScreenResult screen;
  VifResult vif;
  std::vector<std::string> features;  // final modelling features

  Cohort apply(const Cohort& raw) const;
};

Preprocessing fit_preprocessing(const Cohort& raw_train, const PipelineConfig& config);

// Out-of-fold predictions of one learner for the subjects of one fold.
struct FoldPredictions {
  std::vector<double> risk;
  std::vector<std::vector<double>> survival;  // [horizon][subject]
};

struct FittedLearner {
  std::string model_hash;
  nlohmann::json model;
};

struct FoldOutcome {
  int fold = 0;
  std::vector<std::string> features;
  std::vector<std::string> learners_failed;
  std::vector<std::pair<Learner, FittedLearner>> fitted;
  std::vector<std::pair<Learner, FoldPredictions>> predictions;
  std::vector<std::pair<Learner, std::string>> failures;
};

// Fits preprocessing and every configured learner on the training rows and
// predicts the test rows. Test-row outcomes are never read.
FoldOutcome run_fold(const PipelineConfig& config, const Cohort& raw, const LongitudinalCohort* longitudinal,
                     std::span<const std::size_t> train_rows, std::span<const std::size_t> test_rows, int fold);

struct ModelEvaluation {
  Learner learner = Learner::CoxPH;
  bool failed = false;
  std::string failure;
  std::vector<double> oof_risk;
  std::vector<std::vector<double>> oof_survival;  // [horizon][subject]
  ConcordanceResult concordance;
  std::vector<AucSummary> auc;  // per horizon
  std::vector<double> brier;    // per horizon
  CalibrationTable calibration;  // at the last horizon
  std::vector<DCAPoint> dca;     // at the last horizon
  DCAPoint net_benefit_at_threshold;
  std::vector<std::string> fold_hashes;
};

struct CrossValidation {
  std::vector<int> folds;
  std::vector<FoldOutcome> fold_outcomes;
  std::vector<ModelEvaluation> models;  // report order
};

CrossValidation cross_validate(const PipelineConfig& config, const Cohort& raw,
                               const LongitudinalCohort* longitudinal = nullptr);

struct GroupSummary {
  std::size_t size = 0;
  std::size_t events = 0;
  double median_rfs = 0.0;  // +inf when the curve never reaches 0.5
  StepFunction km;
};

struct PipelineResult {
  nlohmann::json report;
  CrossValidation cv;
  Learner chosen = Learner::XGBoost;
  Stratification strata;
  GroupSummary low, high;
  LogRankResult log_rank;
  ScreenResult full_screen;
  VifResult full_vif;
  std::vector<FeatureScore> shap;
  std::optional<ImportanceReport> importance;
};

// Loads inputs, cross-validates, picks the best model, explains it and
// stratifies the cohort. Artifacts are written when `write_outputs` is set.
PipelineResult run_pipeline(const PipelineConfig& config, bool write_outputs = true);

// Fits the given learner on the full (preprocessed) cohort.
std::unique_ptr<RiskModel> fit_learner(Learner learner, const PipelineConfig& config, const Cohort& train,
                                       std::uint64_t seed, nlohmann::json* serialized = nullptr);

// Raw cohort with radiomic features from config.voxel_dir appended.
Cohort load_pipeline_cohort(const PipelineConfig& config);

}  // namespace survrec
