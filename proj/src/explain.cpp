#include "survrec/explain.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <numeric>
#include <mutex>
#include <thread>

#include "survrec/error.hpp"
#include "survrec/metrics.hpp"
#include "survrec/rng.hpp"

namespace survrec {

AttributionVector exact_shapley(const RiskModel& model, std::span<const double> x,
                                std::span<const double> background) {
  const std::size_t d = x.size();
  if (background.size() != d) throw Error(ErrorKind::Shape, "background and x differ in length");
  if (d > kMaxExactShapleyFeatures) {
    throw Error(ErrorKind::Size, "exact Shapley supports at most " + std::to_string(kMaxExactShapleyFeatures) +
                                     " features (got " + std::to_string(d) + "); use permutation importance");
  }
  const std::size_t subsets = std::size_t{1} << d;
  std::vector<double> value(subsets);
  std::vector<double> probe(background.begin(), background.end());
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    for (std::size_t j = 0; j < d; ++j) probe[j] = (mask >> j) & 1U ? x[j] : background[j];
    value[mask] = model.risk(probe);
  }

  // weight[s] = s! (d-s-1)! / d! = 1 / (d * C(d-1, s))
  std::vector<double> weight(d);
  for (std::size_t s = 0; s < d; ++s) {
    double binom = 1.0;
    for (std::size_t k = 0; k < s; ++k) binom = binom * static_cast<double>(d - 1 - k) / static_cast<double>(k + 1);
    weight[s] = 1.0 / (static_cast<double>(d) * binom);
  }

  AttributionVector out;
  out.phi.assign(d, 0.0);
  out.baseline_value = value.front();
  out.explained_value = value.back();
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t bit = std::size_t{1} << j;
    double phi = 0.0;
    for (std::size_t mask = 0; mask < subsets; ++mask) {
      if (mask & bit) continue;
      phi += weight[static_cast<std::size_t>(std::popcount(mask))] * (value[mask | bit] - value[mask]);
    }
    out.phi[j] = phi;
  }
  return out;
}

std::vector<double> feature_medians(const Cohort& cohort) {
  if (cohort.size() == 0) throw Error(ErrorKind::EmptyCohort, "cannot take medians of an empty cohort");
  std::vector<double> out;
  for (std::size_t j = 0; j < cohort.n_features(); ++j) {
    std::vector<double> col = cohort.column(j);
    std::sort(col.begin(), col.end());
    const std::size_t mid = col.size() / 2;
    out.push_back(col.size() % 2 ? col[mid] : 0.5 * (col[mid - 1] + col[mid]));
  }
  return out;
}

std::vector<FeatureScore> mean_abs_shap(const RiskModel& model, const Cohort& sample,
                                        std::span<const double> background, unsigned n_threads) {
  if (sample.size() == 0) throw Error(ErrorKind::EmptyCohort, "mean |SHAP| needs at least one subject");
  const std::size_t d = sample.n_features();
  if (d > kMaxExactShapleyFeatures) {
    throw Error(ErrorKind::Size, "exact Shapley supports at most " + std::to_string(kMaxExactShapleyFeatures) +
                                     " features; use permutation importance");
  }
  std::vector<std::vector<double>> per_subject(sample.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < sample.size(); i = next++) {
      try {
        per_subject[i] = exact_shapley(model, sample[i].features, background).phi;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  unsigned threads = n_threads ? n_threads : std::max(1U, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, sample.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<FeatureScore> out;
  for (std::size_t j = 0; j < d; ++j) {
    double total = 0.0;
    for (const auto& phi : per_subject) total += std::abs(phi[j]);
    out.push_back({sample.feature_names()[j], total / static_cast<double>(sample.size())});
  }
  std::stable_sort(out.begin(), out.end(), [](const FeatureScore& a, const FeatureScore& b) { return a.value > b.value; });
  return out;
}

double c_index_metric(std::span<const double> times, std::span<const int> events, std::span<const double> scores) {
  return c_index(times, events, scores).c_index;
}

namespace {

std::vector<double> score_rows(const RiskModel& model, const std::vector<std::vector<double>>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(model.risk(r));
  return out;
}

}  // namespace

ImportanceReport permutation_importance(const RiskModel& model, const Cohort& cohort, int repeats,
                                        std::uint64_t seed, const RiskMetric& metric) {
  if (repeats < 1) throw Error(ErrorKind::Parameter, "permutation importance needs repeats >= 1");
  const std::vector<double> times = cohort.times();
  const std::vector<int> events = cohort.events();
  std::vector<std::vector<double>> rows;
  for (const auto& r : cohort.records()) rows.push_back(r.features);

  ImportanceReport report;
  report.repeats = repeats;
  report.seed = seed;
  report.baseline = metric(times, events, score_rows(model, rows));

  for (std::size_t j = 0; j < cohort.n_features(); ++j) {
    Rng rng(mix_seed(seed, j));
    std::vector<double> drops;
    ImportanceEntry entry{cohort.feature_names()[j]};
    std::vector<double> column = cohort.column(j);
    for (int r = 0; r < repeats; ++r) {
      rng.shuffle(std::span<double>(column));
      std::vector<std::vector<double>> shuffled = rows;
      for (std::size_t i = 0; i < rows.size(); ++i) shuffled[i][j] = column[i];
      try {
        drops.push_back(report.baseline - metric(times, events, score_rows(model, shuffled)));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::UndefinedMetric) throw;
        ++entry.skipped;
      }
    }
    entry.completed = static_cast<int>(drops.size());
    if (!drops.empty()) {
      entry.mean_drop = std::accumulate(drops.begin(), drops.end(), 0.0) / static_cast<double>(drops.size());
      double ss = 0.0;
      for (double v : drops) ss += (v - entry.mean_drop) * (v - entry.mean_drop);
      entry.std_drop = drops.size() > 1 ? std::sqrt(ss / static_cast<double>(drops.size() - 1)) : 0.0;
    }
    report.entries.push_back(std::move(entry));
  }
  std::stable_sort(report.entries.begin(), report.entries.end(),
                   [](const ImportanceEntry& a, const ImportanceEntry& b) { return a.mean_drop > b.mean_drop; });
  return report;
}

}  // namespace survrec
