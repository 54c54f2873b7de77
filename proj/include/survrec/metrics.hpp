#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "survrec/nonparametric.hpp"

namespace survrec {

struct ConcordanceResult {
  std::int64_t concordant = 0;
  std::int64_t discordant = 0;
  std::int64_t tied_score = 0;
  double c_index = 0.5;

  friend bool operator==(const ConcordanceResult&, const ConcordanceResult&) = default;
};

// Harrell's C: pair (i, j) is comparable when t_i < t_j and subject i had
// the event; concordant when score_i > score_j; score ties count one half.
// O(n log n) with a Fenwick tree over score ranks.
ConcordanceResult c_index(std::span<const double> times, std::span<const int> events,
                          std::span<const double> scores);
// Quadratic pair enumeration with identical semantics.
ConcordanceResult c_index_pairwise(std::span<const double> times, std::span<const int> events,
                                   std::span<const double> scores);

// Kaplan-Meier of the censoring distribution (event indicator flipped).
StepFunction censoring_survival(std::span<const double> times, std::span<const int> events);

// Incident/dynamic AUC at an observed event time t: cases have an event at
// exactly t, controls are still event-free after t. Case weights 1/G(t-) and
// control weights 1/G(t) are applied.
double auc_t(std::span<const double> times, std::span<const int> events,
             std::span<const double> scores, double t, const StepFunction& censor_survival);

struct AucPoint {
  double time = 0.0;
  double auc = 0.5;
  std::size_t cases = 0;
  std::size_t controls = 0;
};

struct AucSummary {
  std::vector<AucPoint> curve;        // evaluable event times in (0, horizon]
  std::vector<double> skipped_times;  // event times with no controls
  double mean_auc = 0.5;              // case-count-weighted mean over curve
};

AucSummary auc_summary(std::span<const double> times, std::span<const int> events,
                       std::span<const double> scores, double horizon,
                       const StepFunction& censor_survival);

// Graf's IPCW Brier score at t. survival_at_t[i] is S(t | x_i).
double brier(double t, std::span<const double> survival_at_t, std::span<const double> times,
             std::span<const int> events, const StepFunction& censor_survival);

struct CalibrationBin {
  double mean_predicted = 0.0;
  double observed = 0.0;      // 1 - KM(t) inside the bin
  double observed_se = 0.0;   // Greenwood standard error
  std::size_t count = 0;
};

struct CalibrationTable {
  std::vector<CalibrationBin> bins;
  std::size_t merged_bins = 0;  // requested bins lost to ties or small n
};

// Quantile bins over predicted risk at t. Tied predictions never straddle a
// bin boundary; bins that would be empty are merged.
CalibrationTable calibration_table(std::span<const double> predicted_risk,
                                   std::span<const double> times, std::span<const int> events,
                                   double t, std::size_t n_bins = 10);

// Status of a subject at a horizon: event by t, event-free past t, or
// censored before t (outcome unknown, excluded from decision curves).
enum class HorizonOutcome : std::int8_t { Unknown = -1, EventFree = 0, Event = 1 };

std::vector<HorizonOutcome> horizon_outcomes(std::span<const double> times,
                                             std::span<const int> events, double t);

struct DCAPoint {
  double threshold = 0.0;
  double net_benefit = 0.0;
  double treat_all_benefit = 0.0;
  double treat_none_benefit = 0.0;
};

DCAPoint net_benefit(std::span<const HorizonOutcome> outcome, std::span<const double> predicted_prob,
                     double p);

std::vector<DCAPoint> decision_curve(std::span<const HorizonOutcome> outcome,
                                     std::span<const double> predicted_prob,
                                     std::span<const double> thresholds);

}  // namespace survrec
