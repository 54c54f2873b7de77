#include "survrec/rsf.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "survrec/error.hpp"
#include "survrec/metrics.hpp"
#include "survrec/rng.hpp"
#include "detail/json_keys.hpp"

namespace survrec {

void ForestParams::validate(std::size_t n_features) const {
  if (n_trees < 1) throw Error(ErrorKind::Parameter, "rsf: n_trees must be >= 1");
  if (mtry < 0 || static_cast<std::size_t>(mtry) > n_features) {
    throw Error(ErrorKind::Parameter, "rsf: mtry must be in [1, d] (0 for default)");
  }
  if (min_node_events < 1) throw Error(ErrorKind::Parameter, "rsf: min_node_events must be >= 1");
  if (max_depth < -1) throw Error(ErrorKind::Parameter, "rsf: max_depth must be >= -1");
}

void to_json(nlohmann::json& j, const ForestParams& p) {
  j = nlohmann::json{{"n_trees", p.n_trees},   {"mtry", p.mtry},           {"min_node_events", p.min_node_events},
                     {"max_depth", p.max_depth}, {"seed", p.seed},         {"bootstrap", p.bootstrap}};
}

void from_json(const nlohmann::json& j, ForestParams& p) {
  detail::reject_unknown_keys(
      j, {"n_trees", "mtry", "min_node_events", "max_depth", "seed", "bootstrap", "n_threads"}, "forest params");
  ForestParams d;
  d.n_trees = j.value("n_trees", d.n_trees);
  d.mtry = j.value("mtry", d.mtry);
  d.min_node_events = j.value("min_node_events", d.min_node_events);
  d.max_depth = j.value("max_depth", d.max_depth);
  d.seed = j.value("seed", d.seed);
  d.bootstrap = j.value("bootstrap", d.bootstrap);
  d.n_threads = j.value("n_threads", d.n_threads);
  p = d;
}

const StepFunction& SurvivalTree::chf(std::span<const double> x) const {
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const Node& nd = nodes[static_cast<std::size_t>(node)];
    node = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
  }
  return terminal_chf[static_cast<std::size_t>(nodes[static_cast<std::size_t>(node)].terminal)];
}

namespace {

// Fenwick tree over event-time prefix indices 0..K holding a count and a
// running sum per slot.
class PrefixTree {
 public:
  explicit PrefixTree(std::size_t n) : count_(n + 1, 0.0), sum_(n + 1, 0.0) {}
  void reset() {
    std::fill(count_.begin(), count_.end(), 0.0);
    std::fill(sum_.begin(), sum_.end(), 0.0);
  }
  void add(std::size_t i, double value) {
    for (++i; i < count_.size(); i += i & (~i + 1)) {
      count_[i] += 1.0;
      sum_[i] += value;
    }
  }
  // Count and value sum over slots < i.
  std::pair<double, double> prefix(std::size_t i) const {
    double c = 0.0;
    double s = 0.0;
    for (; i > 0; i -= i & (~i + 1)) {
      c += count_[i];
      s += sum_[i];
    }
    return {c, s};
  }

 private:
  std::vector<double> count_;
  std::vector<double> sum_;
};

// Incremental two-sample log-rank statistic for all "x <= c" splits of a
// node. With K distinct event times tau_k in the node, a sample with time t
// is at risk at tau_1..tau_a where a = #{tau_k <= t}. Moving a sample into
// the left child changes O-E by (delta - D(a)) and the hypergeometric
// variance sum_k c_k n_Lk (n_k - n_Lk) through prefix sums of c_k, so each
// move costs O(log K).
class LogRankScanner {
 public:
  LogRankScanner(std::span<const double> times, std::span<const int> events,
                 std::span<const std::size_t> samples)
      : times_(times), events_(events) {
    for (std::size_t s : samples) {
      if (events[s] == 1) event_times_.push_back(times[s]);
      total_events_ += static_cast<std::size_t>(events[s]);
    }
    std::sort(event_times_.begin(), event_times_.end());
    event_times_.erase(std::unique(event_times_.begin(), event_times_.end()), event_times_.end());
    const std::size_t k = event_times_.size();
    std::vector<double> at_risk(k, 0.0);
    std::vector<double> deaths(k, 0.0);
    for (std::size_t s : samples) {
      const std::size_t a = static_cast<std::size_t>(
          std::upper_bound(event_times_.begin(), event_times_.end(), times[s]) - event_times_.begin());
      if (a > 0) {
        // at risk at tau_1..tau_a: accumulate via difference array below
        at_risk[a - 1] += 1.0;
        if (events[s] == 1) deaths[a - 1] += 1.0;
      }
    }
    for (std::size_t i = k; i-- > 1;) at_risk[i - 1] += at_risk[i];
    hazard_prefix_.assign(k + 1, 0.0);
    cn_prefix_.assign(k + 1, 0.0);
    c_prefix_.assign(k + 1, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      const double n = at_risk[i];
      const double d = deaths[i];
      const double c = n > 1.0 ? d * (n - d) / ((n - 1.0) * n * n) : 0.0;
      hazard_prefix_[i + 1] = hazard_prefix_[i] + d / n;
      cn_prefix_[i + 1] = cn_prefix_[i] + c * n;
      c_prefix_[i + 1] = c_prefix_[i] + c;
    }
  }

  std::size_t total_events() const { return total_events_; }

  // Visits each split between distinct consecutive x values in ascending
  // order of x. `sorted` holds the node samples ordered by x.
  template <typename Visit>
  void scan(std::span<const std::size_t> sorted, std::span<const double> x_of, PrefixTree& tree,
            Visit&& visit) const {
    tree.reset();
    double num = 0.0;
    double lin = 0.0;
    double quad = 0.0;
    std::size_t left_events = 0;
    double left_count = 0.0;
    for (std::size_t pos = 0; pos + 1 < sorted.size(); ++pos) {
      const std::size_t s = sorted[pos];
      const std::size_t a = prefix_of(s);
      const auto [below_count, below_sum] = tree.prefix(a);
      const double cross = c_prefix_[a] * (left_count - below_count) + below_sum;
      quad += c_prefix_[a] + 2.0 * cross;
      num += events_[s] - hazard_prefix_[a];
      lin += cn_prefix_[a];
      tree.add(a, c_prefix_[a]);
      left_count += 1.0;
      left_events += static_cast<std::size_t>(events_[s]);

      const double v = x_of[s];
      const double next = x_of[sorted[pos + 1]];
      if (v == next) continue;
      const double variance = lin - quad;
      const double stat = variance > 1e-12 ? num * num / variance : 0.0;
      visit(0.5 * (v + next), stat, left_events, total_events_ - left_events);
    }
  }

  std::size_t prefix_of(std::size_t s) const {
    return static_cast<std::size_t>(
        std::upper_bound(event_times_.begin(), event_times_.end(), times_[s]) - event_times_.begin());
  }
  std::size_t event_time_count() const { return event_times_.size(); }

 private:
  std::span<const double> times_;
  std::span<const int> events_;
  std::vector<double> event_times_;
  std::vector<double> hazard_prefix_;
  std::vector<double> cn_prefix_;
  std::vector<double> c_prefix_;
  std::size_t total_events_ = 0;
};

struct TreeGrower {
  const std::vector<std::vector<double>>& columns;  // feature-major
  std::span<const double> times;
  std::span<const int> events;
  const ForestParams& params;
  std::size_t mtry;
  Rng rng;
  SurvivalTree tree;

  int grow(std::vector<std::size_t>& samples, int depth) {
    const int index = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_stat = 0.0;
    const bool depth_ok = params.max_depth < 0 || depth < params.max_depth;
    const auto min_events = static_cast<std::size_t>(params.min_node_events);
    if (depth_ok) {
      LogRankScanner scanner(times, events, samples);
      if (scanner.total_events() >= 2 * min_events) {
        std::vector<std::size_t> features(columns.size());
        std::iota(features.begin(), features.end(), 0);
        rng.shuffle(std::span<std::size_t>(features));
        features.resize(mtry);
        std::sort(features.begin(), features.end());

        PrefixTree prefix(scanner.event_time_count() + 1);
        std::vector<std::size_t> sorted = samples;
        for (std::size_t f : features) {
          const auto& col = columns[f];
          std::stable_sort(sorted.begin(), sorted.end(),
                           [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
          scanner.scan(sorted, col, prefix,
                       [&](double threshold, double stat, std::size_t le, std::size_t re) {
                         if (le < min_events || re < min_events) return;
                         if (stat > best_stat) {
                           best_stat = stat;
                           best_feature = static_cast<int>(f);
                           best_threshold = threshold;
                         }
                       });
        }
      }
    }

    if (best_feature < 0) {
      std::vector<double> t(samples.size());
      std::vector<int> e(samples.size());
      for (std::size_t k = 0; k < samples.size(); ++k) {
        t[k] = times[samples[k]];
        e[k] = events[samples[k]];
      }
      tree.nodes[static_cast<std::size_t>(index)].terminal = static_cast<int>(tree.terminal_chf.size());
      tree.terminal_chf.push_back(nelson_aalen(t, e));
      tree.terminal_counts.push_back(samples.size());
      return index;
    }

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    const auto& col = columns[static_cast<std::size_t>(best_feature)];
    for (std::size_t s : samples) (col[s] <= best_threshold ? left : right).push_back(s);
    samples.clear();
    samples.shrink_to_fit();
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(index)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return index;
  }
};

}  // namespace

std::vector<SplitCandidate> logrank_split_scan(std::span<const double> times,
                                               std::span<const int> events,
                                               std::span<const double> x) {
  if (times.size() != events.size() || times.size() != x.size()) {
    throw Error(ErrorKind::Shape, "split scan: length mismatch");
  }
  std::vector<std::size_t> samples(times.size());
  std::iota(samples.begin(), samples.end(), 0);
  LogRankScanner scanner(times, events, samples);
  std::stable_sort(samples.begin(), samples.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  PrefixTree prefix(scanner.event_time_count() + 1);
  std::vector<SplitCandidate> out;
  scanner.scan(samples, x, prefix, [&](double threshold, double stat, std::size_t le, std::size_t re) {
    out.push_back({threshold, stat, le, re});
  });
  return out;
}

Forest fit_rsf(const Cohort& cohort, const ForestParams& params) {
  params.validate(cohort.n_features());
  if (cohort.event_count() == 0) throw Error(ErrorKind::Training, "rsf: cohort has no events");

  const std::size_t n = cohort.size();
  const std::size_t d = cohort.n_features();
  std::vector<std::vector<double>> columns(d);
  for (std::size_t j = 0; j < d; ++j) columns[j] = cohort.column(j);
  const std::vector<double> times = cohort.times();
  const std::vector<int> events = cohort.events();
  const std::size_t mtry = params.mtry > 0
                               ? static_cast<std::size_t>(params.mtry)
                               : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));

  Forest forest;
  forest.feature_names = cohort.feature_names();
  forest.max_event_time = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (events[i] == 1) forest.max_event_time = std::max(forest.max_event_time, times[i]);
  }
  forest.trees.resize(static_cast<std::size_t>(params.n_trees));

  auto grow_tree = [&](std::size_t b) {
    TreeGrower grower{columns, times, events, params, mtry, Rng(params.seed + b), {}};
    std::vector<std::size_t> samples(n);
    if (params.bootstrap) {
      std::vector<char> drawn(n, 0);
      for (std::size_t k = 0; k < n; ++k) {
        samples[k] = static_cast<std::size_t>(grower.rng.below(n));
        drawn[samples[k]] = 1;
      }
      std::sort(samples.begin(), samples.end());
      for (std::size_t i = 0; i < n; ++i) {
        if (!drawn[i]) grower.tree.oob_indices.push_back(i);
      }
    } else {
      std::iota(samples.begin(), samples.end(), 0);
    }
    grower.tree.bootstrap_indices = samples;
    grower.grow(samples, 0);
    forest.trees[b] = std::move(grower.tree);
  };

  std::size_t threads = params.n_threads > 0 ? static_cast<std::size_t>(params.n_threads)
                                             : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, forest.trees.size());
  if (threads <= 1) {
    for (std::size_t b = 0; b < forest.trees.size(); ++b) grow_tree(b);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t b = next++; b < forest.trees.size(); b = next++) grow_tree(b);
      });
    }
    for (auto& th : pool) th.join();
  }
  return forest;
}

StepFunction average_step_functions(std::span<const StepFunction* const> functions) {
  if (functions.empty()) throw Error(ErrorKind::Parameter, "average of zero step functions");
  std::vector<double> knots;
  for (const StepFunction* f : functions) knots.insert(knots.end(), f->knots().begin(), f->knots().end());
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());

  std::vector<double> sums(knots.size(), 0.0);
  double initial = 0.0;
  for (const StepFunction* f : functions) {
    initial += f->initial_value();
    std::size_t pos = 0;
    double current = f->initial_value();
    for (std::size_t k = 0; k < knots.size(); ++k) {
      while (pos < f->size() && f->knots()[pos] <= knots[k]) current = f->values()[pos++];
      sums[k] += current;
    }
  }
  const double b = static_cast<double>(functions.size());
  for (double& s : sums) s /= b;
  return StepFunction(std::move(knots), std::move(sums), initial / b);
}

StepFunction predict_chf(const Forest& forest, std::span<const double> x) {
  if (x.size() != forest.n_features()) throw Error(ErrorKind::Shape, "rsf: feature dimension mismatch");
  std::vector<const StepFunction*> chfs;
  chfs.reserve(forest.trees.size());
  for (const auto& tree : forest.trees) chfs.push_back(&tree.chf(x));
  return average_step_functions(chfs);
}

StepFunction predict_survival(const Forest& forest, std::span<const double> x) {
  const StepFunction chf = predict_chf(forest, x);
  std::vector<double> values(chf.size());
  for (std::size_t k = 0; k < values.size(); ++k) values[k] = std::exp(-chf.values()[k]);
  return StepFunction(chf.knots(), std::move(values), std::exp(-chf.initial_value()));
}

double risk_score(const Forest& forest, std::span<const double> x) {
  if (x.size() != forest.n_features()) throw Error(ErrorKind::Shape, "rsf: feature dimension mismatch");
  double total = 0.0;
  for (const auto& tree : forest.trees) total += tree.chf(x)(forest.max_event_time);
  return total / static_cast<double>(forest.trees.size());
}

double Forest::risk(std::span<const double> x) const { return risk_score(*this, x); }

std::optional<StepFunction> Forest::survival_curve(std::span<const double> x) const {
  return predict_survival(*this, x);
}

std::vector<double> oob_risk_scores(const Forest& forest, const Cohort& training) {
  const std::size_t n = training.size();
  std::vector<double> total(n, 0.0);
  std::vector<std::size_t> count(n, 0);
  for (const auto& tree : forest.trees) {
    for (std::size_t i : tree.oob_indices) {
      if (i >= n) throw Error(ErrorKind::Shape, "rsf: OOB index outside training cohort");
      total[i] += tree.chf(training[i].features)(forest.max_event_time);
      ++count[i];
    }
  }
  std::vector<double> scores(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < n; ++i) {
    if (count[i] > 0) scores[i] = total[i] / static_cast<double>(count[i]);
  }
  return scores;
}

nlohmann::json Forest::to_json() const {
  nlohmann::json j;
  j["features"] = feature_names;
  j["max_event_time"] = max_event_time;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& tree : trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : tree.nodes) {
      nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left},
                       {"right", n.right}, {"terminal", n.terminal}});
    }
    nlohmann::json terminals = nlohmann::json::array();
    for (std::size_t t = 0; t < tree.terminal_chf.size(); ++t) {
      terminals.push_back({{"knots", tree.terminal_chf[t].knots()},
                           {"values", tree.terminal_chf[t].values()},
                           {"count", tree.terminal_counts[t]}});
    }
    list.push_back({{"nodes", nodes}, {"terminals", terminals}, {"oob", tree.oob_indices}});
  }
  j["trees"] = list;
  return j;
}

Forest Forest::from_json(const nlohmann::json& j) {
  Forest f;
  f.feature_names = j.at("features").get<std::vector<std::string>>();
  f.max_event_time = j.at("max_event_time").get<double>();
  for (const auto& jt : j.at("trees")) {
    SurvivalTree tree;
    for (const auto& n : jt.at("nodes")) {
      tree.nodes.push_back({n.at("feature").get<int>(), n.at("threshold").get<double>(),
                            n.at("left").get<int>(), n.at("right").get<int>(), n.at("terminal").get<int>()});
    }
    for (const auto& t : jt.at("terminals")) {
      tree.terminal_chf.emplace_back(t.at("knots").get<std::vector<double>>(),
                                     t.at("values").get<std::vector<double>>(), 0.0);
      tree.terminal_counts.push_back(t.at("count").get<std::size_t>());
    }
    tree.oob_indices = jt.value("oob", std::vector<std::size_t>{});
    f.trees.push_back(std::move(tree));
  }
  return f;
}

}  // namespace survrec
