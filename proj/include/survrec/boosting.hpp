#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "survrec/data_model.hpp"
#include "survrec/risk_model.hpp"

namespace survrec {

// Per-subject first and diagonal second derivatives of the negative Breslow
// partial log-likelihood with respect to each subject's score.
struct CoxGradients {
  std::vector<double> gradient;
  std::vector<double> hessian;
};

CoxGradients cox_gradients(std::span<const double> scores, std::span<const double> times,
                           std::span<const int> events);

// -sum_{events} (f_i - log sum_{t_j >= t_i} exp f_j), Breslow ties.
double cox_negative_loglik(std::span<const double> scores, std::span<const double> times,
                           std::span<const int> events);

enum class BoostMode { Componentwise, Gbm, Xgboost };

const char* to_string(BoostMode mode);

struct BoostParams {
  int rounds = 200;
  double learning_rate = 0.1;
  int tree_depth = 3;
  int min_leaf = 5;
  double l2_lambda = 1.0;
  BoostMode mode = BoostMode::Xgboost;
  std::uint64_t seed = 1;
  double row_subsample = 1.0;  // < 1 draws a seeded subsample each round

  void validate() const;
};

void to_json(nlohmann::json& j, const BoostParams& p);
void from_json(const nlohmann::json& j, BoostParams& p);

struct ComponentwiseLearner {
  std::size_t feature = 0;
  double slope = 0.0;
  double intercept = 0.0;

  double operator()(std::span<const double> x) const { return intercept + slope * x[feature]; }
};

struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  double operator()(std::span<const double> x) const;
  std::size_t leaf_count() const;
};

using BaseLearner = std::variant<ComponentwiseLearner, RegressionTree>;

class BoostedModel final : public RiskModel {
 public:
  BoostMode mode = BoostMode::Xgboost;
  double learning_rate = 0.1;
  std::vector<std::string> feature_names;
  std::vector<BaseLearner> learners;
  double initial_loss = 0.0;
  std::vector<double> training_loss_trace;  // -partial loglik after each accepted round
  bool stopped_early = false;
  std::string stop_reason;
  StepFunction baseline_chf;  // Breslow, at the training scores

  std::size_t n_features() const override { return feature_names.size(); }
  double risk(std::span<const double> x) const override;
  std::optional<StepFunction> survival_curve(std::span<const double> x) const override;

  nlohmann::json to_json() const;
  static BoostedModel from_json(const nlohmann::json& j);
};

// Gradient boosting on the negative Cox partial log-likelihood.
//   componentwise: one-feature least-squares fit to -g per round
//   gbm:           depth-limited regression tree on -g, mean leaves
//   xgboost:       Newton tree, leaf weight -G/(H + lambda), gain splits
// Each round's contribution is halved until the training loss does not
// increase; rows are processed in a canonical order so the fit does not
// depend on the order of the input cohort.
BoostedModel fit_boosted(const Cohort& cohort, const BoostParams& params);

double predict_risk(const BoostedModel& model, std::span<const double> x);

}  // namespace survrec
