#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "survrec/data_model.hpp"
#include "survrec/risk_model.hpp"

namespace survrec {

inline constexpr std::size_t kMaxExactShapleyFeatures = 14;

struct AttributionVector {
  std::vector<double> phi;
  double baseline_value = 0.0;   // f(background)
  double explained_value = 0.0;  // f(x)
};

// Exact Shapley values by enumerating all 2^d coalitions; features outside a
// coalition take their background value.
AttributionVector exact_shapley(const RiskModel& model, std::span<const double> x,
                                std::span<const double> background);

// Feature-wise median of the cohort.
std::vector<double> feature_medians(const Cohort& cohort);

struct FeatureScore {
  std::string feature;
  double value = 0.0;
};

// Mean |phi_j| over the sample, sorted descending (ties keep column order).
std::vector<FeatureScore> mean_abs_shap(const RiskModel& model, const Cohort& sample,
                                        std::span<const double> background, unsigned n_threads = 0);

using RiskMetric =
    std::function<double(std::span<const double> times, std::span<const int> events, std::span<const double> scores)>;

// Harrell's C of the scores.
double c_index_metric(std::span<const double> times, std::span<const int> events, std::span<const double> scores);

struct ImportanceEntry {
  std::string feature;
  double mean_drop = 0.0;
  double std_drop = 0.0;
  int completed = 0;  // repeats that produced a defined metric
  int skipped = 0;
};

struct ImportanceReport {
  double baseline = 0.0;
  int repeats = 0;
  std::uint64_t seed = 0;
  std::vector<ImportanceEntry> entries;  // descending mean_drop
};

ImportanceReport permutation_importance(const RiskModel& model, const Cohort& cohort, int repeats,
                                        std::uint64_t seed, const RiskMetric& metric = c_index_metric);

}  // namespace survrec
