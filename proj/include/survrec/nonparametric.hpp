#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <vector>

namespace survrec {

// Right-continuous piecewise-constant function of time. Evaluation at t
// returns the value of the last knot <= t, or initial_value before the first.
class StepFunction {
 public:
  StepFunction() = default;
  StepFunction(std::vector<double> knots, std::vector<double> values, double initial_value);

  double operator()(double t) const;
  // Limit from the left, f(t-).
  double left_limit(double t) const;

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& values() const { return values_; }
  double initial_value() const { return initial_value_; }
  std::size_t size() const { return knots_.size(); }

  // Writes "time,value" rows, starting with (0, initial_value).
  void write_csv(std::ostream& out) const;

  friend bool operator==(const StepFunction&, const StepFunction&) = default;

 private:
  std::vector<double> knots_;
  std::vector<double> values_;
  double initial_value_ = 0.0;
};

struct KaplanMeierFit {
  StepFunction survival;
  std::vector<double> at_risk;            // per knot
  std::vector<double> events;             // per knot
  std::vector<double> greenwood_variance; // Var S(t) per knot
  std::vector<double> lower;              // 95% log-log band
  std::vector<double> upper;
};

// Product-limit estimator with Greenwood variance. Events at t are counted
// before censorings at t.
KaplanMeierFit kaplan_meier_fit(std::span<const double> times, std::span<const int> events);
StepFunction kaplan_meier(std::span<const double> times, std::span<const int> events);

StepFunction nelson_aalen(std::span<const double> times, std::span<const int> events);

// First time the survival curve drops to 0.5 or below; +inf if it never does.
double median_survival(const StepFunction& survival);

struct SurvivalSample {
  std::span<const double> times;
  std::span<const int> events;
};

struct LogRankResult {
  double chi_square = 0.0;
  double p_value = 1.0;
  std::array<double, 2> observed{};
  std::array<double, 2> expected{};
  double variance = 0.0;
};

LogRankResult log_rank(SurvivalSample group_a, SurvivalSample group_b);

// Upper tail of the chi-square distribution with one degree of freedom.
double chi_square_1df_upper(double x);

}  // namespace survrec
