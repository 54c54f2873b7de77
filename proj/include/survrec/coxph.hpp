#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "survrec/data_model.hpp"
#include "survrec/nonparametric.hpp"
#include "survrec/risk_model.hpp"

namespace survrec {

enum class TieMethod { Breslow, Efron };

struct PartialLikelihood {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

// Cox partial log-likelihood over a fixed design. Subjects are sorted once
// by time so repeated evaluations (Newton iterations, finite differences)
// only pay for the risk-set sweep.
class CoxProblem {
 public:
  CoxProblem(Eigen::MatrixXd x, std::span<const double> times, std::span<const int> events,
             TieMethod ties = TieMethod::Efron);
  explicit CoxProblem(const Cohort& cohort, TieMethod ties = TieMethod::Efron);

  PartialLikelihood evaluate(const Eigen::VectorXd& beta, bool with_hessian = true) const;

  std::size_t n_subjects() const { return static_cast<std::size_t>(x_.rows()); }
  std::size_t n_features() const { return static_cast<std::size_t>(x_.cols()); }
  std::size_t n_events() const { return n_events_; }
  const Eigen::MatrixXd& design() const { return x_; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<int>& events() const { return events_; }

 private:
  Eigen::MatrixXd x_;  // rows in descending time order
  std::vector<double> times_;
  std::vector<int> events_;
  // [begin, end) row ranges sharing one time, latest first.
  std::vector<std::pair<std::size_t, std::size_t>> groups_;
  std::size_t n_events_ = 0;
  TieMethod ties_;
};

PartialLikelihood partial_loglik(const Eigen::VectorXd& beta, const Cohort& cohort,
                                 TieMethod ties = TieMethod::Efron);

// Breslow estimate of the baseline cumulative hazard for given linear
// predictors.
StepFunction breslow_baseline(std::span<const double> linear_predictor,
                              std::span<const double> times, std::span<const int> events);

struct CoxOptions {
  TieMethod ties = TieMethod::Efron;
  int max_iter = 100;
  double tol = 1e-9;
  double ridge = 0.0;
};

void to_json(nlohmann::json& j, const CoxOptions& o);
void from_json(const nlohmann::json& j, CoxOptions& o);

class CoxModel final : public RiskModel {
 public:
  std::vector<std::string> feature_names;
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;
  StepFunction baseline_chf;
  bool converged = false;
  int iterations = 0;
  double final_loglik = 0.0;

  std::size_t n_features() const override { return static_cast<std::size_t>(coefficients.size()); }
  double risk(std::span<const double> x) const override;
  std::optional<StepFunction> survival_curve(std::span<const double> x) const override;

  nlohmann::json to_json() const;
};

// Newton-Raphson from beta = 0 with step halving. Throws NonConvergenceError
// (carrying the last iterate) when any |beta_j| exceeds 50 or max_iter is hit,
// and a conditioning error when the information matrix is singular.
CoxModel fit_cox(const Cohort& cohort, const CoxOptions& options = {});

struct ScreenRow {
  std::string feature;
  double coefficient = 0.0;  // per original unit
  double std_error = 0.0;
  double hazard_ratio = 1.0;
  double ci_low = 1.0;
  double ci_high = 1.0;
  double p_value = 1.0;
  bool failed = false;
  std::string failure;
};

struct ScreenResult {
  std::vector<ScreenRow> rows;  // ascending p; failed rows last
  std::vector<std::string> retained;
};

// One single-feature Cox fit per column with Wald p-values. When the cohort
// carries normalization statistics, coefficients and hazard ratios are
// converted back to original units.
ScreenResult univariate_screen(const Cohort& cohort, double alpha = 0.05,
                               const CoxOptions& options = {});

void write_screen_csv(std::ostream& out, const ScreenResult& screen);

struct VifRemoval {
  std::string feature;
  double vif = 0.0;
};

struct VifResult {
  std::vector<std::string> kept;
  std::vector<VifRemoval> removed;  // in removal order
};

// Variance inflation factor of each named column against the others
// (least squares with intercept). Exact collinearity yields +inf.
std::vector<double> variance_inflation(const Cohort& cohort, std::span<const std::string> features);

VifResult vif_filter(const Cohort& cohort, std::span<const std::string> retained,
                     double threshold = 5.0);

// Two-sided standard normal tail, 2 * Phi(-|z|).
double wald_p_value(double z);

}  // namespace survrec
