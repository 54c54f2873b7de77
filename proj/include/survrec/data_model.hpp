#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace survrec {

// One subject: observed time (months), event flag and feature values.
struct SurvivalRecord {
  std::string id;
  double time = 0.0;
  int event = 0;
  std::vector<double> features;
};

struct NormalizationStat {
  double mean = 0.0;
  double stddev = 1.0;
};

class Cohort {
 public:
  Cohort() = default;
  Cohort(std::vector<std::string> feature_names, std::vector<SurvivalRecord> records);

  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<SurvivalRecord>& records() const { return records_; }
  const SurvivalRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  std::size_t n_features() const { return feature_names_.size(); }

  // Per-feature (mean, stddev) set by z-score normalization, aligned with
  // feature_names().
  const std::optional<std::vector<NormalizationStat>>& normalization() const {
    return normalization_;
  }
  const std::vector<std::string>& warnings() const { return warnings_; }

  std::vector<double> times() const;
  std::vector<int> events() const;
  std::vector<double> column(std::size_t feature) const;
  std::size_t event_count() const;
  // Row-major n x d design matrix.
  Eigen::MatrixXd design_matrix() const;

  std::optional<std::size_t> feature_index(const std::string& name) const;

  // Subset of rows in the given order.
  Cohort subset(std::span<const std::size_t> rows) const;
  // Restriction to the named features, in the given order.
  Cohort select_features(std::span<const std::string> names) const;

  // Replaces the outcome of every record (used by leakage checks).
  Cohort with_outcomes(std::span<const double> times, std::span<const int> events) const;

  void set_normalization(std::vector<NormalizationStat> stats) { normalization_ = std::move(stats); }
  void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

 private:
  void validate() const;

  std::vector<std::string> feature_names_;
  std::vector<SurvivalRecord> records_;
  std::optional<std::vector<NormalizationStat>> normalization_;
  std::vector<std::string> warnings_;
};

// Maps CSV columns to roles. An empty feature list means "every column that
// is not the id, time or event column", in file order.
struct CohortSchema {
  std::string id_column = "id";
  std::string time_column = "time";
  std::string event_column = "event";
  std::vector<std::string> feature_columns;
};

Cohort read_cohort(std::istream& in, const CohortSchema& schema);
Cohort load_cohort(const std::filesystem::path& path, const CohortSchema& schema);
void write_cohort(std::ostream& out, const Cohort& cohort);
void write_cohort(const std::filesystem::path& path, const Cohort& cohort);

// Statistics fitted on one cohort that can be applied to another.
struct ZScoreFit {
  std::vector<std::string> kept_features;
  std::vector<NormalizationStat> stats;
  std::vector<std::string> dropped_constant;
};

ZScoreFit fit_zscore(const Cohort& cohort);
Cohort apply_zscore(const Cohort& cohort, const ZScoreFit& fit);
// fit_zscore followed by apply_zscore on the same data. Constant columns are
// dropped with a warning; stddev uses the n-1 denominator.
Cohort zscore_normalize(const Cohort& cohort);

struct SyntheticSpec {
  std::size_t n = 200;
  std::vector<double> true_coefficients;
  double weibull_shape = 1.5;
  double weibull_scale = 20.0;
  double censoring_rate_target = 0.3;
  bool nonlinear = false;
  std::uint64_t seed = 1;
  // Optional; defaults to x1..xd.
  std::vector<std::string> feature_names;

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& spec);
void from_json(const nlohmann::json& j, SyntheticSpec& spec);

struct SyntheticCohort {
  Cohort cohort;
  std::vector<double> true_scores;  // true log-hazard ratio per record
  double censoring_rate = 0.0;      // realized fraction
};

// Weibull proportional-hazards cohort: standard-normal features, event times
// by inverse transform of S(t|x) = exp(-(t/scale)^shape * exp(eta)), and
// exponential censoring whose rate is bisected to hit the target fraction.
SyntheticCohort generate_synthetic(const SyntheticSpec& spec);

// The nonlinear term added to the linear predictor when spec.nonlinear is set.
double synthetic_nonlinear_term(std::span<const double> x);

}  // namespace survrec
