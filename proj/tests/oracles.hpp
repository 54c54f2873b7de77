#pragma once

// Slow, direct reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "survrec/data_model.hpp"

namespace oracle {

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

struct PairCounts {
  std::int64_t concordant = 0, discordant = 0, tied = 0;
};

inline PairCounts harrell_pairs(std::span<const double> t, std::span<const int> e, std::span<const double> s) {
  PairCounts c;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!e[i]) continue;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (!(t[i] < t[j])) continue;
      if (s[i] > s[j]) ++c.concordant;
      else if (s[i] < s[j]) ++c.discordant;
      else ++c.tied;
    }
  }
  return c;
}

// Product-limit estimate evaluated at t.
inline double km_at(std::span<const double> times, std::span<const int> events, double t) {
  std::set<double> event_times;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i] && times[i] <= t) event_times.insert(times[i]);
  }
  double s = 1.0;
  for (double u : event_times) {
    double d = 0, n = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] >= u) n += 1;
      if (times[i] == u && events[i]) d += 1;
    }
    s *= 1.0 - d / n;
  }
  return s;
}

inline double na_at(std::span<const double> times, std::span<const int> events, double t) {
  std::set<double> event_times;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i] && times[i] <= t) event_times.insert(times[i]);
  }
  double h = 0.0;
  for (double u : event_times) {
    double d = 0, n = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] >= u) n += 1;
      if (times[i] == u && events[i]) d += 1;
    }
    h += d / n;
  }
  return h;
}

// Breslow partial log-likelihood written straight from the definition.
inline double cox_loglik(std::span<const double> lp, std::span<const double> times, std::span<const int> events) {
  double ll = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (!events[i]) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j) {
      if (times[j] >= times[i]) denom += std::exp(lp[j]);
    }
    ll += lp[i] - std::log(denom);
  }
  return ll;
}

// Efron partial log-likelihood from the definition.
inline double cox_loglik_efron(std::span<const double> lp, std::span<const double> times, std::span<const int> events) {
  std::set<double> event_times;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (events[i]) event_times.insert(times[i]);
  }
  double ll = 0.0;
  for (double u : event_times) {
    double risk = 0.0, tied = 0.0, d = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j) {
      if (times[j] >= u) risk += std::exp(lp[j]);
      if (times[j] == u && events[j]) {
        tied += std::exp(lp[j]);
        d += 1;
        ll += lp[j];
      }
    }
    for (int l = 0; l < static_cast<int>(d); ++l) ll -= std::log(risk - l / d * tied);
  }
  return ll;
}

// Central differences of f at x.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double keep = x[k];
    x[k] = keep + h;
    const double up = f(x);
    x[k] = keep - h;
    const double down = f(x);
    x[k] = keep;
    g[k] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

// Shapley value as the average marginal contribution over all d! orderings.
inline std::vector<double> shapley_by_permutation(const std::function<double(const std::vector<double>&)>& f,
                                                  const std::vector<double>& x, const std::vector<double>& background) {
  const std::size_t d = x.size();
  std::vector<std::size_t> order = iota(d);
  std::vector<double> phi(d, 0.0);
  double count = 0.0;
  do {
    std::vector<double> z = background;
    double prev = f(z);
    for (std::size_t j : order) {
      z[j] = x[j];
      const double next = f(z);
      phi[j] += next - prev;
      prev = next;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& p : phi) p /= count;
  return phi;
}

struct RandomCohort {
  std::vector<double> times;
  std::vector<int> events;
  std::vector<std::vector<double>> x;
};

// Small random survival sample with optional tied times.
inline RandomCohort random_cohort(std::mt19937_64& rng, std::size_t n, std::size_t d, bool ties) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  RandomCohort c;
  for (std::size_t i = 0; i < n; ++i) {
    double t = ties ? std::ceil(u(rng) * 8.0) : 0.1 + 10.0 * u(rng);
    c.times.push_back(t);
    c.events.push_back(u(rng) < 0.7 ? 1 : 0);
    std::vector<double> row;
    for (std::size_t j = 0; j < d; ++j) row.push_back(z(rng));
    c.x.push_back(row);
  }
  if (std::count(c.events.begin(), c.events.end(), 1) == 0) c.events[0] = 1;
  return c;
}

inline survrec::Cohort to_cohort(const RandomCohort& rc) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < (rc.x.empty() ? 0 : rc.x[0].size()); ++j) names.push_back("f" + std::to_string(j));
  std::vector<survrec::SurvivalRecord> recs;
  for (std::size_t i = 0; i < rc.times.size(); ++i) {
    recs.push_back({"r" + std::to_string(i), rc.times[i], rc.events[i], rc.x[i]});
  }
  return survrec::Cohort(names, recs);
}

}  // namespace oracle
