#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "survrec/data_model.hpp"
#include "survrec/nonparametric.hpp"
#include "survrec/risk_model.hpp"

namespace survrec {

struct ForestParams {
  int n_trees = 200;
  int mtry = 0;              // 0 selects ceil(sqrt(d))
  int min_node_events = 3;   // per child
  int max_depth = -1;        // -1 is unlimited
  std::uint64_t seed = 1;
  bool bootstrap = true;     // false grows every tree on the full sample
  int n_threads = 0;         // 0 uses hardware concurrency

  void validate(std::size_t n_features) const;
};

void to_json(nlohmann::json& j, const ForestParams& p);
void from_json(const nlohmann::json& j, ForestParams& p);

struct SurvivalTree {
  struct Node {
    int feature = -1;  // -1 marks a terminal node
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int terminal = -1;  // index into terminal_chf
    friend bool operator==(const Node&, const Node&) = default;
  };
  std::vector<Node> nodes;
  std::vector<StepFunction> terminal_chf;    // Nelson-Aalen per terminal node
  std::vector<std::size_t> terminal_counts;  // in-node (bootstrap) subjects
  std::vector<std::size_t> bootstrap_indices;
  std::vector<std::size_t> oob_indices;

  const StepFunction& chf(std::span<const double> x) const;
  friend bool operator==(const SurvivalTree&, const SurvivalTree&) = default;
};

class Forest final : public RiskModel {
 public:
  std::vector<std::string> feature_names;
  std::vector<SurvivalTree> trees;
  double max_event_time = 0.0;

  std::size_t n_features() const override { return feature_names.size(); }
  // Ensemble CHF evaluated at the training cohort's largest event time.
  double risk(std::span<const double> x) const override;
  std::optional<StepFunction> survival_curve(std::span<const double> x) const override;

  nlohmann::json to_json() const;
  static Forest from_json(const nlohmann::json& j);
};

// Bootstrap trees grown with the log-rank splitting rule; tree b draws from
// an Rng seeded with seed + b, so the forest is independent of thread count.
Forest fit_rsf(const Cohort& cohort, const ForestParams& params);

// Pointwise mean of the per-tree terminal CHFs on the union of their knots.
StepFunction predict_chf(const Forest& forest, std::span<const double> x);
StepFunction predict_survival(const Forest& forest, std::span<const double> x);
double risk_score(const Forest& forest, std::span<const double> x);

// Mean of the given step functions on the union of their knots.
StepFunction average_step_functions(std::span<const StepFunction* const> functions);

// Risk score per training subject using only trees for which that subject
// was out of bag; NaN for subjects that were never out of bag.
std::vector<double> oob_risk_scores(const Forest& forest, const Cohort& training);

// Log-rank chi-square for every split "x <= midpoint" between consecutive
// distinct values of x, in ascending threshold order. Exposed for testing
// the incremental scan used during tree growth.
struct SplitCandidate {
  double threshold = 0.0;
  double statistic = 0.0;
  std::size_t left_events = 0;
  std::size_t right_events = 0;
};
std::vector<SplitCandidate> logrank_split_scan(std::span<const double> times,
                                               std::span<const int> events,
                                               std::span<const double> x);

}  // namespace survrec
