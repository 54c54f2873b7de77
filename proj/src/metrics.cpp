#include "survrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "survrec/error.hpp"

namespace survrec {

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t c, const char* what) {
  if (a != b || a != c) throw Error(ErrorKind::Shape, std::string(what) + ": length mismatch");
}

ConcordanceResult finish(ConcordanceResult r) {
  const std::int64_t total = r.concordant + r.discordant + r.tied_score;
  if (total == 0) throw Error(ErrorKind::UndefinedMetric, "c-index: no comparable pairs");
  r.c_index = (static_cast<double>(r.concordant) + 0.5 * static_cast<double>(r.tied_score)) /
              static_cast<double>(total);
  return r;
}

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Count of inserted ranks < i.
  std::int64_t prefix(std::size_t i) const {
    std::int64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::int64_t> tree_;
};

}  // namespace

ConcordanceResult c_index_pairwise(std::span<const double> times, std::span<const int> events,
                                   std::span<const double> scores) {
  check_lengths(times.size(), events.size(), scores.size(), "c-index");
  ConcordanceResult r;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i] != 1) continue;
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (!(times[i] < times[j])) continue;
      if (scores[i] > scores[j]) {
        ++r.concordant;
      } else if (scores[i] < scores[j]) {
        ++r.discordant;
      } else {
        ++r.tied_score;
      }
    }
  }
  return finish(r);
}

ConcordanceResult c_index(std::span<const double> times, std::span<const int> events,
                          std::span<const double> scores) {
  check_lengths(times.size(), events.size(), scores.size(), "c-index");
  const std::size_t n = times.size();
  for (double s : scores) {
    if (std::isnan(s)) throw Error(ErrorKind::NumericInput, "c-index: NaN score");
  }

  std::vector<double> distinct(scores.begin(), scores.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    rank[i] = static_cast<std::size_t>(
        std::lower_bound(distinct.begin(), distinct.end(), scores[i]) - distinct.begin());
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

  // Walk from the latest time backwards; the tree holds every subject with a
  // strictly later time than the current group.
  Fenwick tree(distinct.size());
  std::int64_t inserted = 0;
  ConcordanceResult r;
  std::size_t i = 0;
  while (i < n) {
    std::size_t group_end = i;
    while (group_end < n && times[order[group_end]] == times[order[i]]) ++group_end;
    for (std::size_t k = i; k < group_end; ++k) {
      const std::size_t s = order[k];
      if (events[s] != 1) continue;
      const std::int64_t below = tree.prefix(rank[s]);
      const std::int64_t at_or_below = tree.prefix(rank[s] + 1);
      r.concordant += below;
      r.tied_score += at_or_below - below;
      r.discordant += inserted - at_or_below;
    }
    for (std::size_t k = i; k < group_end; ++k) {
      tree.add(rank[order[k]]);
      ++inserted;
    }
    i = group_end;
  }
  return finish(r);
}

StepFunction censoring_survival(std::span<const double> times, std::span<const int> events) {
  std::vector<int> flipped(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) flipped[i] = 1 - events[i];
  return kaplan_meier(times, flipped);
}

double auc_t(std::span<const double> times, std::span<const int> events,
             std::span<const double> scores, double t, const StepFunction& censor_survival) {
  check_lengths(times.size(), events.size(), scores.size(), "auc(t)");
  const double g_case = censor_survival.left_limit(t);
  const double g_control = censor_survival(t);
  if (!(g_case > 0.0) || !(g_control > 0.0)) {
    throw Error(ErrorKind::UndefinedMetric, "auc(t): censoring survival is zero");
  }
  const double w_case = 1.0 / g_case;
  const double w_control = 1.0 / g_control;

  std::vector<double> case_scores;
  std::vector<double> control_scores;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] == t && events[i] == 1) case_scores.push_back(scores[i]);
    if (times[i] > t) control_scores.push_back(scores[i]);
  }
  if (case_scores.empty() || control_scores.empty()) {
    throw Error(ErrorKind::UndefinedMetric, "auc(t): no cases or no controls at t");
  }
  std::sort(control_scores.begin(), control_scores.end());
  double correct = 0.0;
  for (double s : case_scores) {
    const auto lo = std::lower_bound(control_scores.begin(), control_scores.end(), s);
    const auto hi = std::upper_bound(control_scores.begin(), control_scores.end(), s);
    correct += static_cast<double>(lo - control_scores.begin()) +
               0.5 * static_cast<double>(hi - lo);
  }
  const double pair_weight = w_case * w_control;
  const double total = pair_weight * static_cast<double>(case_scores.size()) *
                       static_cast<double>(control_scores.size());
  return pair_weight * correct / total;
}

AucSummary auc_summary(std::span<const double> times, std::span<const int> events,
                       std::span<const double> scores, double horizon,
                       const StepFunction& censor_survival) {
  check_lengths(times.size(), events.size(), scores.size(), "auc summary");
  std::vector<double> event_times;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i] == 1 && times[i] <= horizon) event_times.push_back(times[i]);
  }
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

  AucSummary summary;
  double weighted = 0.0;
  double weight = 0.0;
  for (double t : event_times) {
    std::size_t cases = 0;
    std::size_t controls = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] == t && events[i] == 1) ++cases;
      if (times[i] > t) ++controls;
    }
    if (controls == 0 || !(censor_survival(t) > 0.0)) {
      summary.skipped_times.push_back(t);
      continue;
    }
    const double auc = auc_t(times, events, scores, t, censor_survival);
    summary.curve.push_back({t, auc, cases, controls});
    weighted += static_cast<double>(cases) * auc;
    weight += static_cast<double>(cases);
  }
  if (weight == 0.0) {
    throw Error(ErrorKind::UndefinedMetric, "auc summary: no evaluable event times before horizon");
  }
  summary.mean_auc = weighted / weight;
  return summary;
}

double brier(double t, std::span<const double> survival_at_t, std::span<const double> times,
             std::span<const int> events, const StepFunction& censor_survival) {
  check_lengths(times.size(), events.size(), survival_at_t.size(), "brier");
  if (times.empty()) throw Error(ErrorKind::UndefinedMetric, "brier: empty input");
  const double g_t = censor_survival(t);
  if (!(g_t > 0.0)) throw Error(ErrorKind::UndefinedMetric, "brier: censoring survival G(t) = 0");
  double total = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double s = survival_at_t[i];
    if (times[i] <= t && events[i] == 1) {
      const double g = censor_survival.left_limit(times[i]);
      if (!(g > 0.0)) throw Error(ErrorKind::UndefinedMetric, "brier: G(t_i-) = 0");
      total += s * s / g;
    } else if (times[i] > t) {
      total += (1.0 - s) * (1.0 - s) / g_t;
    }
  }
  return total / static_cast<double>(times.size());
}

CalibrationTable calibration_table(std::span<const double> predicted_risk,
                                   std::span<const double> times, std::span<const int> events,
                                   double t, std::size_t n_bins) {
  check_lengths(times.size(), events.size(), predicted_risk.size(), "calibration");
  if (n_bins < 2) throw Error(ErrorKind::Parameter, "calibration: n_bins must be >= 2");
  const std::size_t n = times.size();
  if (n == 0) throw Error(ErrorKind::UndefinedMetric, "calibration: empty input");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predicted_risk[a] < predicted_risk[b];
  });

  // Nominal quantile cut points, each pushed forward past a run of ties.
  std::vector<std::size_t> cuts{0};
  for (std::size_t b = 1; b < n_bins; ++b) {
    std::size_t cut = b * n / n_bins;
    while (cut > 0 && cut < n && predicted_risk[order[cut]] == predicted_risk[order[cut - 1]]) {
      ++cut;
    }
    if (cut > cuts.back() && cut < n) cuts.push_back(cut);
  }
  cuts.push_back(n);

  CalibrationTable table;
  for (std::size_t b = 0; b + 1 < cuts.size(); ++b) {
    std::vector<double> bt;
    std::vector<int> be;
    double sum = 0.0;
    for (std::size_t k = cuts[b]; k < cuts[b + 1]; ++k) {
      bt.push_back(times[order[k]]);
      be.push_back(events[order[k]]);
      sum += predicted_risk[order[k]];
    }
    const KaplanMeierFit km = kaplan_meier_fit(bt, be);
    CalibrationBin bin;
    bin.count = bt.size();
    bin.mean_predicted = sum / static_cast<double>(bin.count);
    bin.observed = 1.0 - km.survival(t);
    const auto& knots = km.survival.knots();
    const auto it = std::upper_bound(knots.begin(), knots.end(), t);
    if (it != knots.begin()) {
      bin.observed_se = std::sqrt(km.greenwood_variance[static_cast<std::size_t>(it - knots.begin()) - 1]);
    }
    table.bins.push_back(bin);
  }
  table.merged_bins = n_bins - table.bins.size();
  return table;
}

std::vector<HorizonOutcome> horizon_outcomes(std::span<const double> times,
                                             std::span<const int> events, double t) {
  if (times.size() != events.size()) throw Error(ErrorKind::Shape, "horizon outcomes: length mismatch");
  std::vector<HorizonOutcome> out(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] <= t && events[i] == 1) {
      out[i] = HorizonOutcome::Event;
    } else if (times[i] > t) {
      out[i] = HorizonOutcome::EventFree;
    } else {
      out[i] = HorizonOutcome::Unknown;
    }
  }
  return out;
}

DCAPoint net_benefit(std::span<const HorizonOutcome> outcome, std::span<const double> predicted_prob,
                     double p) {
  if (outcome.size() != predicted_prob.size()) {
    throw Error(ErrorKind::Shape, "net benefit: length mismatch");
  }
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::Parameter, "net benefit: threshold outside (0,1)");
  std::size_t n = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < outcome.size(); ++i) {
    if (outcome[i] == HorizonOutcome::Unknown) continue;
    ++n;
    const bool event = outcome[i] == HorizonOutcome::Event;
    if (event) ++positives;
    if (predicted_prob[i] >= p) {
      if (event) {
        ++tp;
      } else {
        ++fp;
      }
    }
  }
  if (n == 0) throw Error(ErrorKind::UndefinedMetric, "net benefit: no subjects with known outcome");
  const double nn = static_cast<double>(n);
  const double odds = p / (1.0 - p);
  const double prevalence = static_cast<double>(positives) / nn;
  DCAPoint point;
  point.threshold = p;
  point.net_benefit = static_cast<double>(tp) / nn - static_cast<double>(fp) / nn * odds;
  point.treat_all_benefit = prevalence - (1.0 - prevalence) * odds;
  point.treat_none_benefit = 0.0;
  return point;
}

std::vector<DCAPoint> decision_curve(std::span<const HorizonOutcome> outcome,
                                     std::span<const double> predicted_prob,
                                     std::span<const double> thresholds) {
  std::vector<DCAPoint> curve;
  curve.reserve(thresholds.size());
  for (double p : thresholds) curve.push_back(net_benefit(outcome, predicted_prob, p));
  return curve;
}

}  // namespace survrec
