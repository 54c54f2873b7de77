#include "survrec/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "survrec/coxph.hpp"
#include "survrec/error.hpp"
#include "survrec/rng.hpp"
#include "detail/json_keys.hpp"

namespace survrec {

namespace {

void check_outcomes(std::span<const double> scores, std::span<const double> times,
                    std::span<const int> events) {
  if (scores.size() != times.size() || scores.size() != events.size()) {
    throw Error(ErrorKind::Shape, "cox gradients: length mismatch");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorKind::NumericInput, "cox gradients: non-finite score");
  }
}

// Distinct times ascending, with the risk-set sum exp(f - shift) over t_j >= t.
struct RiskSets {
  std::vector<std::size_t> order;      // subjects by ascending time
  std::vector<std::size_t> group_of;   // subject -> distinct-time index
  std::vector<double> risk_sum;        // per distinct time
  std::vector<double> deaths;          // per distinct time
  std::vector<double> weight;          // exp(f - shift) per subject
  double shift = 0.0;
};

RiskSets risk_sets(std::span<const double> scores, std::span<const double> times,
                   std::span<const int> events) {
  const std::size_t n = scores.size();
  RiskSets rs;
  rs.shift = n ? *std::max_element(scores.begin(), scores.end()) : 0.0;
  rs.weight.resize(n);
  for (std::size_t i = 0; i < n; ++i) rs.weight[i] = std::exp(scores[i] - rs.shift);
  rs.order.resize(n);
  std::iota(rs.order.begin(), rs.order.end(), 0);
  std::stable_sort(rs.order.begin(), rs.order.end(),
                   [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  rs.group_of.resize(n);
  std::size_t i = 0;
  while (i < n) {
    const double t = times[rs.order[i]];
    double w = 0.0;
    double d = 0.0;
    const std::size_t g = rs.risk_sum.size();
    while (i < n && times[rs.order[i]] == t) {
      rs.group_of[rs.order[i]] = g;
      w += rs.weight[rs.order[i]];
      d += events[rs.order[i]];
      ++i;
    }
    rs.risk_sum.push_back(w);
    rs.deaths.push_back(d);
  }
  for (std::size_t g = rs.risk_sum.size(); g-- > 1;) rs.risk_sum[g - 1] += rs.risk_sum[g];
  return rs;
}

}  // namespace

CoxGradients cox_gradients(std::span<const double> scores, std::span<const double> times,
                           std::span<const int> events) {
  check_outcomes(scores, times, events);
  const RiskSets rs = risk_sets(scores, times, events);
  const std::size_t groups = rs.risk_sum.size();
  std::vector<double> first(groups);
  std::vector<double> second(groups);
  double a = 0.0;
  double b = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    if (rs.deaths[g] > 0.0) {
      a += rs.deaths[g] / rs.risk_sum[g];
      b += rs.deaths[g] / (rs.risk_sum[g] * rs.risk_sum[g]);
    }
    first[g] = a;
    second[g] = b;
  }
  CoxGradients out;
  out.gradient.resize(scores.size());
  out.hessian.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double w = rs.weight[i];
    const std::size_t g = rs.group_of[i];
    out.gradient[i] = -events[i] + w * first[g];
    out.hessian[i] = std::max(0.0, w * first[g] - w * w * second[g]);
  }
  return out;
}

double cox_negative_loglik(std::span<const double> scores, std::span<const double> times,
                           std::span<const int> events) {
  check_outcomes(scores, times, events);
  const RiskSets rs = risk_sets(scores, times, events);
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (events[i] != 1) continue;
    loss += std::log(rs.risk_sum[rs.group_of[i]]) + rs.shift - scores[i];
  }
  return loss;
}

const char* to_string(BoostMode mode) {
  switch (mode) {
    case BoostMode::Componentwise: return "componentwise";
    case BoostMode::Gbm: return "gbm";
    case BoostMode::Xgboost: return "xgboost";
  }
  return "unknown";
}

namespace {

BoostMode parse_mode(const std::string& s) {
  if (s == "componentwise") return BoostMode::Componentwise;
  if (s == "gbm") return BoostMode::Gbm;
  if (s == "xgboost") return BoostMode::Xgboost;
  throw Error(ErrorKind::Schema, "unknown boosting mode \"" + s + "\"");
}

}  // namespace

void BoostParams::validate() const {
  if (rounds < 0) throw Error(ErrorKind::Parameter, "boosting: rounds must be >= 0");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
    throw Error(ErrorKind::Parameter, "boosting: learning_rate must be in (0, 1]");
  }
  if (tree_depth < 1) throw Error(ErrorKind::Parameter, "boosting: tree_depth must be >= 1");
  if (min_leaf < 1) throw Error(ErrorKind::Parameter, "boosting: min_leaf must be >= 1");
  if (l2_lambda < 0.0) throw Error(ErrorKind::Parameter, "boosting: l2_lambda must be >= 0");
  if (!(row_subsample > 0.0 && row_subsample <= 1.0)) {
    throw Error(ErrorKind::Parameter, "boosting: row_subsample must be in (0, 1]");
  }
}

void to_json(nlohmann::json& j, const BoostParams& p) {
  j = nlohmann::json{{"rounds", p.rounds},       {"learning_rate", p.learning_rate},
                     {"tree_depth", p.tree_depth}, {"min_leaf", p.min_leaf},
                     {"l2_lambda", p.l2_lambda},   {"mode", to_string(p.mode)},
                     {"seed", p.seed},             {"row_subsample", p.row_subsample}};
}

void from_json(const nlohmann::json& j, BoostParams& p) {
  detail::reject_unknown_keys(
      j, {"rounds", "learning_rate", "tree_depth", "min_leaf", "l2_lambda", "mode", "seed", "row_subsample"},
      "boosting params");
  BoostParams d;
  d.rounds = j.value("rounds", d.rounds);
  d.learning_rate = j.value("learning_rate", d.learning_rate);
  d.tree_depth = j.value("tree_depth", d.tree_depth);
  d.min_leaf = j.value("min_leaf", d.min_leaf);
  d.l2_lambda = j.value("l2_lambda", d.l2_lambda);
  if (j.contains("mode")) d.mode = parse_mode(j.at("mode").get<std::string>());
  d.seed = j.value("seed", d.seed);
  d.row_subsample = j.value("row_subsample", d.row_subsample);
  d.validate();
  p = d;
}

double RegressionTree::operator()(std::span<const double> x) const {
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const Node& nd = nodes[static_cast<std::size_t>(node)];
    node = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(node)].value;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.feature < 0; }));
}

namespace {

double evaluate_learner(const BaseLearner& learner, std::span<const double> x) {
  return std::visit([&](const auto& l) { return l(x); }, learner);
}

void scale_learner(BaseLearner& learner, double factor) {
  if (auto* c = std::get_if<ComponentwiseLearner>(&learner)) {
    c->slope *= factor;
    c->intercept *= factor;
  } else {
    for (auto& node : std::get<RegressionTree>(learner).nodes) node.value *= factor;
  }
}

struct TreeBuilder {
  const std::vector<std::vector<double>>& rows;
  std::span<const double> grad;
  std::span<const double> hess;
  const BoostParams& params;
  RegressionTree tree;

  bool second_order() const { return params.mode == BoostMode::Xgboost; }

  // Score of a node: the loss reduction its optimal constant achieves.
  double node_score(double g, double h, double count) const {
    if (second_order()) return g * g / (h + params.l2_lambda);
    return g * g / count;
  }

  double leaf_value(double g, double h, double count) const {
    if (second_order()) return -g / (h + params.l2_lambda);
    return -g / count;
  }

  int build(std::vector<std::size_t>& members, int depth) {
    double g = 0.0;
    double h = 0.0;
    for (std::size_t i : members) {
      g += grad[i];
      h += hess[i];
    }
    const double count = static_cast<double>(members.size());
    const int index = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.back().value = leaf_value(g, h, count);
    if (depth >= params.tree_depth) return index;

    const double parent = node_score(g, h, count);
    const std::size_t min_leaf = static_cast<std::size_t>(params.min_leaf);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    const std::size_t d = rows.empty() ? 0 : rows[0].size();
    std::vector<std::size_t> sorted = members;
    for (std::size_t f = 0; f < d; ++f) {
      std::stable_sort(sorted.begin(), sorted.end(),
                       [&](std::size_t a, std::size_t b) { return rows[a][f] < rows[b][f]; });
      double gl = 0.0;
      double hl = 0.0;
      for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
        gl += grad[sorted[k]];
        hl += hess[sorted[k]];
        const double v = rows[sorted[k]][f];
        const double next = rows[sorted[k + 1]][f];
        if (v == next) continue;
        const std::size_t nl = k + 1;
        const std::size_t nr = sorted.size() - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        const double gain = node_score(gl, hl, static_cast<double>(nl)) +
                            node_score(g - gl, h - hl, static_cast<double>(nr)) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (v + next);
        }
      }
    }
    if (best_feature < 0) return index;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (std::size_t i : members) {
      (rows[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? left : right).push_back(i);
    }
    const int l = build(left, depth + 1);
    const int r = build(right, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(index)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return index;
  }
};

std::optional<ComponentwiseLearner> fit_componentwise(const std::vector<std::vector<double>>& rows,
                                                      std::span<const std::size_t> members,
                                                      std::span<const double> target) {
  const std::size_t d = rows[0].size();
  const double n = static_cast<double>(members.size());
  double tbar = 0.0;
  for (std::size_t i : members) tbar += target[i];
  tbar /= n;
  std::optional<ComponentwiseLearner> best;
  double best_reduction = 0.0;
  for (std::size_t f = 0; f < d; ++f) {
    double xbar = 0.0;
    for (std::size_t i : members) xbar += rows[i][f];
    xbar /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i : members) {
      const double dx = rows[i][f] - xbar;
      sxx += dx * dx;
      sxy += dx * (target[i] - tbar);
    }
    if (sxx <= 0.0) continue;
    const double slope = sxy / sxx;
    const double reduction = slope * sxy;  // drop in residual sum of squares
    if (reduction > best_reduction) {
      best_reduction = reduction;
      best = ComponentwiseLearner{f, slope, tbar - slope * xbar};
    }
  }
  return best;
}

// Lexicographic order on (time, event, features) so the fit is a function
// of the multiset of rows only.
std::vector<std::size_t> canonical_order(const Cohort& cohort) {
  std::vector<std::size_t> order(cohort.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = cohort[a];
    const auto& rb = cohort[b];
    if (ra.time != rb.time) return ra.time < rb.time;
    if (ra.event != rb.event) return ra.event < rb.event;
    return ra.features < rb.features;
  });
  return order;
}

}  // namespace

double BoostedModel::risk(std::span<const double> x) const {
  check_dimension(x);
  double f = 0.0;
  for (const auto& learner : learners) f += learning_rate * evaluate_learner(learner, x);
  return f;
}

std::optional<StepFunction> BoostedModel::survival_curve(std::span<const double> x) const {
  const double hr = std::exp(risk(x));
  std::vector<double> values(baseline_chf.size());
  for (std::size_t k = 0; k < values.size(); ++k) values[k] = std::exp(-baseline_chf.values()[k] * hr);
  return StepFunction(baseline_chf.knots(), std::move(values), 1.0);
}

double predict_risk(const BoostedModel& model, std::span<const double> x) { return model.risk(x); }

nlohmann::json BoostedModel::to_json() const {
  nlohmann::json j;
  j["mode"] = to_string(mode);
  j["learning_rate"] = learning_rate;
  j["features"] = feature_names;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& learner : learners) {
    if (const auto* c = std::get_if<ComponentwiseLearner>(&learner)) {
      list.push_back({{"feature", c->feature}, {"slope", c->slope}, {"intercept", c->intercept}});
    } else {
      nlohmann::json nodes = nlohmann::json::array();
      for (const auto& n : std::get<RegressionTree>(learner).nodes) {
        nodes.push_back({{"feature", n.feature},
                         {"threshold", n.threshold},
                         {"left", n.left},
                         {"right", n.right},
                         {"value", n.value}});
      }
      list.push_back({{"nodes", nodes}});
    }
  }
  j["learners"] = list;
  j["initial_loss"] = initial_loss;
  j["loss_trace"] = training_loss_trace;
  j["stopped_early"] = stopped_early;
  j["stop_reason"] = stop_reason;
  j["baseline_chf"] = {{"knots", baseline_chf.knots()}, {"values", baseline_chf.values()}};
  return j;
}

BoostedModel BoostedModel::from_json(const nlohmann::json& j) {
  BoostedModel m;
  m.mode = parse_mode(j.at("mode").get<std::string>());
  m.learning_rate = j.at("learning_rate").get<double>();
  m.feature_names = j.at("features").get<std::vector<std::string>>();
  for (const auto& l : j.at("learners")) {
    if (l.contains("nodes")) {
      RegressionTree tree;
      for (const auto& n : l.at("nodes")) {
        tree.nodes.push_back({n.at("feature").get<int>(), n.at("threshold").get<double>(),
                              n.at("left").get<int>(), n.at("right").get<int>(),
                              n.at("value").get<double>()});
      }
      m.learners.emplace_back(std::move(tree));
    } else {
      m.learners.emplace_back(ComponentwiseLearner{l.at("feature").get<std::size_t>(),
                                                   l.at("slope").get<double>(),
                                                   l.at("intercept").get<double>()});
    }
  }
  m.initial_loss = j.value("initial_loss", 0.0);
  m.training_loss_trace = j.value("loss_trace", std::vector<double>{});
  m.stopped_early = j.value("stopped_early", false);
  m.stop_reason = j.value("stop_reason", std::string());
  if (j.contains("baseline_chf")) {
    m.baseline_chf = StepFunction(j["baseline_chf"].at("knots").get<std::vector<double>>(),
                                  j["baseline_chf"].at("values").get<std::vector<double>>(), 0.0);
  }
  return m;
}

BoostedModel fit_boosted(const Cohort& cohort, const BoostParams& params) {
  params.validate();
  if (cohort.event_count() == 0) throw Error(ErrorKind::Training, "boosting: no events");

  const std::vector<std::size_t> order = canonical_order(cohort);
  const std::size_t n = cohort.size();
  std::vector<std::vector<double>> rows(n);
  std::vector<double> times(n);
  std::vector<int> events(n);
  for (std::size_t r = 0; r < n; ++r) {
    rows[r] = cohort[order[r]].features;
    times[r] = cohort[order[r]].time;
    events[r] = cohort[order[r]].event;
  }

  BoostedModel model;
  model.mode = params.mode;
  model.learning_rate = params.learning_rate;
  model.feature_names = cohort.feature_names();

  std::vector<double> scores(n, 0.0);
  double loss = cox_negative_loglik(scores, times, events);
  model.initial_loss = loss;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  const auto sample_size = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(params.row_subsample * static_cast<double>(n))));

  std::vector<double> contribution(n);
  std::vector<double> candidate(n);
  for (int round = 0; round < params.rounds; ++round) {
    const CoxGradients gh = cox_gradients(scores, times, events);
    std::vector<std::size_t> members = all;
    if (sample_size < n) {
      Rng rng(mix_seed(params.seed, static_cast<std::uint64_t>(round)));
      rng.shuffle(std::span<std::size_t>(members));
      members.resize(sample_size);
      std::sort(members.begin(), members.end());
    }

    BaseLearner learner;
    if (params.mode == BoostMode::Componentwise) {
      std::vector<double> target(n);
      for (std::size_t i = 0; i < n; ++i) target[i] = -gh.gradient[i];
      auto fitted = fit_componentwise(rows, members, target);
      if (!fitted) {
        model.stopped_early = true;
        model.stop_reason = "round " + std::to_string(round) + ": no feature reduces the residual";
        break;
      }
      learner = *fitted;
    } else {
      TreeBuilder builder{rows, gh.gradient, gh.hessian, params, {}};
      builder.build(members, 0);
      if (builder.tree.nodes.size() == 1) {
        model.stopped_early = true;
        model.stop_reason = "round " + std::to_string(round) + ": no split improves the gain";
        break;
      }
      learner = std::move(builder.tree);
    }

    for (std::size_t i = 0; i < n; ++i) contribution[i] = evaluate_learner(learner, rows[i]);
    double factor = 1.0;
    double next_loss = std::numeric_limits<double>::infinity();
    int halvings = 0;
    for (; halvings <= 30; ++halvings) {
      for (std::size_t i = 0; i < n; ++i) {
        candidate[i] = scores[i] + params.learning_rate * (factor * contribution[i]);
      }
      next_loss = cox_negative_loglik(candidate, times, events);
      if (next_loss <= loss) break;
      factor *= 0.5;
    }
    if (!(next_loss <= loss)) {
      model.stopped_early = true;
      model.stop_reason = "round " + std::to_string(round) + ": step halving found no descent";
      break;
    }
    if (factor != 1.0) scale_learner(learner, factor);
    // Re-accumulate from the stored learner so training scores match predict_risk.
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] += params.learning_rate * evaluate_learner(learner, rows[i]);
    }
    loss = cox_negative_loglik(scores, times, events);
    model.learners.push_back(std::move(learner));
    model.training_loss_trace.push_back(loss);
  }

  std::vector<double> eta(n);
  for (std::size_t i = 0; i < n; ++i) eta[i] = model.risk(rows[i]);
  model.baseline_chf = breslow_baseline(eta, times, events);
  return model;
}

}  // namespace survrec
