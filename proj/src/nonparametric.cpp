#include "survrec/nonparametric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "survrec/error.hpp"

namespace survrec {

StepFunction::StepFunction(std::vector<double> knots, std::vector<double> values,
                           double initial_value)
    : knots_(std::move(knots)), values_(std::move(values)), initial_value_(initial_value) {
  if (knots_.size() != values_.size()) {
    throw Error(ErrorKind::Shape, "step function: knot and value counts differ");
  }
  for (std::size_t i = 1; i < knots_.size(); ++i) {
    if (!(knots_[i] > knots_[i - 1])) {
      throw Error(ErrorKind::Parameter, "step function: knots must be strictly increasing");
    }
  }
}

double StepFunction::operator()(double t) const {
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  if (it == knots_.begin()) return initial_value_;
  return values_[static_cast<std::size_t>(it - knots_.begin()) - 1];
}

double StepFunction::left_limit(double t) const {
  auto it = std::lower_bound(knots_.begin(), knots_.end(), t);
  if (it == knots_.begin()) return initial_value_;
  return values_[static_cast<std::size_t>(it - knots_.begin()) - 1];
}

void StepFunction::write_csv(std::ostream& out) const {
  out << "time,value\n";
  out << 0 << ',' << initial_value_ << '\n';
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    out << knots_[i] << ',' << values_[i] << '\n';
  }
}

namespace {

struct RiskTable {
  std::vector<double> times;   // distinct event times
  std::vector<double> at_risk;
  std::vector<double> events;
};

void check_sample(std::span<const double> times, std::span<const int> events) {
  if (times.empty()) throw Error(ErrorKind::EmptyCohort, "survival estimator: empty input");
  if (times.size() != events.size()) {
    throw Error(ErrorKind::Shape, "survival estimator: times and events differ in length");
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] > 0.0) || !std::isfinite(times[i])) {
      throw Error(ErrorKind::NumericInput, "survival estimator: times must be positive");
    }
    if (events[i] != 0 && events[i] != 1) {
      throw Error(ErrorKind::NumericInput, "survival estimator: events must be 0 or 1");
    }
  }
}

RiskTable risk_table(std::span<const double> times, std::span<const int> events) {
  check_sample(times, events);
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  RiskTable table;
  double remaining = static_cast<double>(times.size());
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = times[order[i]];
    double deaths = 0.0;
    double leaving = 0.0;
    while (i < order.size() && times[order[i]] == t) {
      deaths += events[order[i]];
      leaving += 1.0;
      ++i;
    }
    if (deaths > 0.0) {
      table.times.push_back(t);
      table.at_risk.push_back(remaining);
      table.events.push_back(deaths);
    }
    remaining -= leaving;
  }
  return table;
}

}  // namespace

KaplanMeierFit kaplan_meier_fit(std::span<const double> times, std::span<const int> events) {
  const RiskTable table = risk_table(times, events);
  const std::size_t k = table.times.size();
  std::vector<double> surv(k);
  KaplanMeierFit fit;
  fit.at_risk = table.at_risk;
  fit.events = table.events;
  fit.greenwood_variance.resize(k);
  fit.lower.resize(k);
  fit.upper.resize(k);

  double s = 1.0;
  double greenwood_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double n = table.at_risk[i];
    const double d = table.events[i];
    s *= 1.0 - d / n;
    surv[i] = s;
    if (n > d) {
      greenwood_sum += d / (n * (n - d));
    } else {
      greenwood_sum = std::numeric_limits<double>::infinity();
    }
    fit.greenwood_variance[i] = std::isfinite(greenwood_sum) ? s * s * greenwood_sum : 0.0;

    // log(-log S) transformed band; degenerate at S in {0, 1}.
    if (s > 0.0 && s < 1.0 && std::isfinite(greenwood_sum)) {
      const double log_s = std::log(s);
      const double se = std::sqrt(greenwood_sum) / std::abs(log_s);
      const double z = 1.959963984540054;
      fit.lower[i] = std::pow(s, std::exp(z * se));
      fit.upper[i] = std::pow(s, std::exp(-z * se));
    } else {
      fit.lower[i] = s;
      fit.upper[i] = s;
    }
  }
  fit.survival = StepFunction(table.times, std::move(surv), 1.0);
  return fit;
}

StepFunction kaplan_meier(std::span<const double> times, std::span<const int> events) {
  return kaplan_meier_fit(times, events).survival;
}

StepFunction nelson_aalen(std::span<const double> times, std::span<const int> events) {
  const RiskTable table = risk_table(times, events);
  std::vector<double> chf(table.times.size());
  double h = 0.0;
  for (std::size_t i = 0; i < chf.size(); ++i) {
    h += table.events[i] / table.at_risk[i];
    chf[i] = h;
  }
  return StepFunction(table.times, std::move(chf), 0.0);
}

double median_survival(const StepFunction& survival) {
  if (survival.initial_value() <= 0.5) return 0.0;
  for (std::size_t i = 0; i < survival.size(); ++i) {
    if (survival.values()[i] <= 0.5) return survival.knots()[i];
  }
  return std::numeric_limits<double>::infinity();
}

double chi_square_1df_upper(double x) {
  if (!(x > 0.0)) return 1.0;
  return std::erfc(std::sqrt(x / 2.0));
}

LogRankResult log_rank(SurvivalSample group_a, SurvivalSample group_b) {
  check_sample(group_a.times, group_a.events);
  check_sample(group_b.times, group_b.events);

  struct Entry {
    double time;
    int event;
    int group;
  };
  std::vector<Entry> pooled;
  pooled.reserve(group_a.times.size() + group_b.times.size());
  for (std::size_t i = 0; i < group_a.times.size(); ++i) {
    pooled.push_back({group_a.times[i], group_a.events[i], 0});
  }
  for (std::size_t i = 0; i < group_b.times.size(); ++i) {
    pooled.push_back({group_b.times[i], group_b.events[i], 1});
  }
  std::sort(pooled.begin(), pooled.end(),
            [](const Entry& a, const Entry& b) { return a.time < b.time; });

  LogRankResult result;
  std::array<double, 2> at_risk{static_cast<double>(group_a.times.size()),
                                static_cast<double>(group_b.times.size())};
  double numerator = 0.0;
  double variance = 0.0;
  double total_events = 0.0;
  std::size_t i = 0;
  while (i < pooled.size()) {
    const double t = pooled[i].time;
    std::array<double, 2> deaths{0.0, 0.0};
    std::array<double, 2> leaving{0.0, 0.0};
    while (i < pooled.size() && pooled[i].time == t) {
      deaths[pooled[i].group] += pooled[i].event;
      leaving[pooled[i].group] += 1.0;
      ++i;
    }
    const double d = deaths[0] + deaths[1];
    const double n = at_risk[0] + at_risk[1];
    if (d > 0.0) {
      const double expected_a = d * at_risk[0] / n;
      result.observed[0] += deaths[0];
      result.observed[1] += deaths[1];
      result.expected[0] += expected_a;
      result.expected[1] += d - expected_a;
      numerator += deaths[0] - expected_a;
      if (n > 1.0) {
        variance += d * (at_risk[0] / n) * (1.0 - at_risk[0] / n) * (n - d) / (n - 1.0);
      }
      total_events += d;
    }
    at_risk[0] -= leaving[0];
    at_risk[1] -= leaving[1];
  }

  if (total_events == 0.0) {
    throw Error(ErrorKind::UndefinedMetric, "log-rank: no events in either group");
  }
  result.variance = variance;
  if (variance <= 0.0) {
    throw Error(ErrorKind::UndefinedMetric, "log-rank: zero variance");
  }
  result.chi_square = numerator * numerator / variance;
  result.p_value = chi_square_1df_upper(result.chi_square);
  return result;
}

}  // namespace survrec
