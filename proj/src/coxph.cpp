#include "survrec/coxph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "survrec/error.hpp"
#include "detail/json_keys.hpp"

namespace survrec {

CoxProblem::CoxProblem(Eigen::MatrixXd x, std::span<const double> times,
                       std::span<const int> events, TieMethod ties)
    : ties_(ties) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (times.size() != n || events.size() != n) {
    throw Error(ErrorKind::Shape, "cox: design rows and outcome length differ");
  }
  if (n == 0) throw Error(ErrorKind::EmptyCohort, "cox: no subjects");
  if (!x.allFinite()) throw Error(ErrorKind::NumericInput, "cox: non-finite feature value");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });
  x_.resize(x.rows(), x.cols());
  times_.resize(n);
  events_.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    x_.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(order[r]));
    times_[r] = times[order[r]];
    events_[r] = events[order[r]];
    n_events_ += events_[r] == 1 ? 1 : 0;
  }
  std::size_t begin = 0;
  while (begin < n) {
    std::size_t end = begin;
    while (end < n && times_[end] == times_[begin]) ++end;
    groups_.emplace_back(begin, end);
    begin = end;
  }
}

CoxProblem::CoxProblem(const Cohort& cohort, TieMethod ties)
    : CoxProblem(cohort.design_matrix(), cohort.times(), cohort.events(), ties) {}

PartialLikelihood CoxProblem::evaluate(const Eigen::VectorXd& beta, bool with_hessian) const {
  const Eigen::Index d = x_.cols();
  if (beta.size() != d) throw Error(ErrorKind::Shape, "cox: coefficient length mismatch");
  if (!beta.allFinite()) throw Error(ErrorKind::NumericInput, "cox: non-finite coefficient");
  const Eigen::VectorXd eta = x_ * beta;
  if (!eta.allFinite()) throw Error(ErrorKind::NumericInput, "cox: non-finite linear predictor");

  PartialLikelihood out;
  out.gradient = Eigen::VectorXd::Zero(d);
  if (with_hessian) out.hessian = Eigen::MatrixXd::Zero(d, d);

  // Risk-set sums are kept relative to exp(shift) and rescaled whenever a
  // larger linear predictor enters, so no exponent ever exceeds zero.
  double shift = -std::numeric_limits<double>::infinity();
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(with_hessian ? d : 0, with_hessian ? d : 0);
  Eigen::VectorXd d1(d);
  Eigen::MatrixXd d2(with_hessian ? d : 0, with_hessian ? d : 0);

  for (const auto& [begin, end] : groups_) {
    double group_max = -std::numeric_limits<double>::infinity();
    for (std::size_t r = begin; r < end; ++r) group_max = std::max(group_max, eta[static_cast<Eigen::Index>(r)]);
    if (group_max > shift) {
      const double scale = std::isinf(shift) ? 0.0 : std::exp(shift - group_max);
      s0 *= scale;
      s1 *= scale;
      if (with_hessian) s2 *= scale;
      shift = group_max;
    }

    double d0 = 0.0;
    d1.setZero();
    if (with_hessian) d2.setZero();
    int tied_events = 0;
    for (std::size_t r = begin; r < end; ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      const double w = std::exp(eta[ri] - shift);
      const auto row = x_.row(ri).transpose();
      s0 += w;
      s1 += w * row;
      if (with_hessian) s2.noalias() += w * row * row.transpose();
      if (events_[r] == 1) {
        ++tied_events;
        d0 += w;
        d1 += w * row;
        if (with_hessian) d2.noalias() += w * row * row.transpose();
        out.value += eta[ri];
        out.gradient += row;
      }
    }
    if (tied_events == 0) continue;

    for (int l = 0; l < tied_events; ++l) {
      const double frac = ties_ == TieMethod::Efron ? static_cast<double>(l) / tied_events : 0.0;
      const double r0 = s0 - frac * d0;
      const Eigen::VectorXd mean = (s1 - frac * d1) / r0;
      out.value -= std::log(r0) + shift;
      out.gradient -= mean;
      if (with_hessian) {
        out.hessian -= (s2 - frac * d2) / r0 - mean * mean.transpose();
      }
    }
  }
  return out;
}

PartialLikelihood partial_loglik(const Eigen::VectorXd& beta, const Cohort& cohort,
                                 TieMethod ties) {
  return CoxProblem(cohort, ties).evaluate(beta);
}

StepFunction breslow_baseline(std::span<const double> linear_predictor,
                              std::span<const double> times, std::span<const int> events) {
  const std::size_t n = times.size();
  if (linear_predictor.size() != n || events.size() != n) {
    throw Error(ErrorKind::Shape, "breslow: length mismatch");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

  std::vector<double> knots;
  std::vector<double> increments;
  double risk_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const double t = times[order[i]];
    double deaths = 0.0;
    while (i < n && times[order[i]] == t) {
      risk_sum += std::exp(linear_predictor[order[i]]);
      deaths += events[order[i]];
      ++i;
    }
    if (deaths > 0.0) {
      knots.push_back(t);
      increments.push_back(deaths / risk_sum);
    }
  }
  std::reverse(knots.begin(), knots.end());
  std::reverse(increments.begin(), increments.end());
  std::partial_sum(increments.begin(), increments.end(), increments.begin());
  return StepFunction(std::move(knots), std::move(increments), 0.0);
}

void to_json(nlohmann::json& j, const CoxOptions& o) {
  j = nlohmann::json{{"ties", o.ties == TieMethod::Efron ? "efron" : "breslow"},
                     {"max_iter", o.max_iter},
                     {"tol", o.tol},
                     {"ridge", o.ridge}};
}

void from_json(const nlohmann::json& j, CoxOptions& o) {
  detail::reject_unknown_keys(j, {"ties", "max_iter", "tol", "ridge"}, "cox options");
  o = CoxOptions{};
  const std::string ties = j.value("ties", std::string("efron"));
  if (ties == "efron") {
    o.ties = TieMethod::Efron;
  } else if (ties == "breslow") {
    o.ties = TieMethod::Breslow;
  } else {
    throw Error(ErrorKind::Schema, "cox options: ties must be \"efron\" or \"breslow\"");
  }
  o.max_iter = j.value("max_iter", o.max_iter);
  o.tol = j.value("tol", o.tol);
  o.ridge = j.value("ridge", o.ridge);
  if (o.ridge < 0.0) throw Error(ErrorKind::Parameter, "cox options: ridge must be >= 0");
}

double CoxModel::risk(std::span<const double> x) const {
  check_dimension(x);
  double eta = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) eta += coefficients[static_cast<Eigen::Index>(j)] * x[j];
  return eta;
}

std::optional<StepFunction> CoxModel::survival_curve(std::span<const double> x) const {
  const double hr = std::exp(risk(x));
  std::vector<double> values(baseline_chf.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    values[k] = std::exp(-baseline_chf.values()[k] * hr);
  }
  return StepFunction(baseline_chf.knots(), std::move(values), 1.0);
}

nlohmann::json CoxModel::to_json() const {
  nlohmann::json j;
  j["features"] = feature_names;
  j["coefficients"] = std::vector<double>(coefficients.data(), coefficients.data() + coefficients.size());
  nlohmann::json cov = nlohmann::json::array();
  for (Eigen::Index r = 0; r < covariance.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(covariance.cols()));
    for (Eigen::Index c = 0; c < covariance.cols(); ++c) row[static_cast<std::size_t>(c)] = covariance(r, c);
    cov.push_back(row);
  }
  j["covariance"] = cov;
  j["baseline_chf"] = {{"knots", baseline_chf.knots()}, {"values", baseline_chf.values()}};
  j["converged"] = converged;
  j["iterations"] = iterations;
  j["final_loglik"] = final_loglik;
  return j;
}

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

// Negative Hessian plus ridge; throws when it is not safely positive definite.
Eigen::MatrixXd information(const PartialLikelihood& pl, double ridge) {
  Eigen::MatrixXd info = -pl.hessian;
  info.diagonal().array() += ridge;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = std::max(eig.eigenvalues().maxCoeff(), 1e-300);
  if (!(lo > 1e-12 * hi)) {
    throw Error(ErrorKind::Conditioning,
                "cox: information matrix is singular (smallest eigenvalue " + std::to_string(lo) +
                    "); add a ridge penalty");
  }
  return info;
}

}  // namespace

CoxModel fit_cox(const Cohort& cohort, const CoxOptions& options) {
  if (options.ridge < 0.0) throw Error(ErrorKind::Parameter, "cox: ridge must be >= 0");
  const CoxProblem problem(cohort, options.ties);
  const auto d = static_cast<Eigen::Index>(problem.n_features());
  if (problem.n_events() == 0) throw Error(ErrorKind::Training, "cox: no events");
  if (problem.n_features() >= problem.n_events() && options.ridge <= 0.0) {
    throw Error(ErrorKind::Conditioning,
                "cox: feature count must be below the event count unless ridge > 0");
  }

  auto penalized = [&](const PartialLikelihood& pl, const Eigen::VectorXd& b) {
    return pl.value - 0.5 * options.ridge * b.squaredNorm();
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  PartialLikelihood pl = problem.evaluate(beta);
  double objective = penalized(pl, beta);
  bool converged = false;
  int iter = 0;
  while (iter < options.max_iter) {
    ++iter;
    Eigen::MatrixXd info;
    try {
      info = information(pl, options.ridge);
    } catch (const Error&) {
      // singular only after moving away from zero: the likelihood is flattening out
      if (iter == 1) throw;
      throw NonConvergenceError("cox: information vanished while coefficients grew, likely separation",
                                to_std(beta));
    }
    const Eigen::VectorXd score = pl.gradient - options.ridge * beta;
    Eigen::VectorXd step = info.ldlt().solve(score);

    Eigen::VectorXd candidate = beta + step;
    PartialLikelihood next = problem.evaluate(candidate);
    double next_objective = penalized(next, candidate);
    for (int halving = 0; halving < 40 && !(next_objective >= objective); ++halving) {
      step *= 0.5;
      candidate = beta + step;
      next = problem.evaluate(candidate);
      next_objective = penalized(next, candidate);
    }
    if (candidate.cwiseAbs().maxCoeff() > 50.0) {
      throw NonConvergenceError("cox: coefficients diverged (|beta| > 50), likely separation",
                                to_std(candidate));
    }
    beta = candidate;
    pl = std::move(next);
    objective = next_objective;
    if (step.cwiseAbs().maxCoeff() < options.tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw NonConvergenceError("cox: no convergence within " + std::to_string(options.max_iter) +
                                  " iterations",
                              to_std(beta));
  }

  CoxModel model;
  model.feature_names = cohort.feature_names();
  model.coefficients = beta;
  model.covariance = information(pl, options.ridge).inverse();
  model.converged = true;
  model.iterations = iter;
  model.final_loglik = pl.value;
  const std::vector<double> times = cohort.times();
  const std::vector<int> events = cohort.events();
  const Eigen::VectorXd eta = cohort.design_matrix() * beta;
  model.baseline_chf = breslow_baseline(to_std(eta), times, events);
  return model;
}

double wald_p_value(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

ScreenResult univariate_screen(const Cohort& cohort, double alpha, const CoxOptions& options) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::Parameter, "screen: alpha outside (0,1]");
  if (cohort.event_count() == 0) throw Error(ErrorKind::Training, "screen: no events");
  constexpr double z975 = 1.959963984540054;

  ScreenResult result;
  for (std::size_t j = 0; j < cohort.n_features(); ++j) {
    ScreenRow row;
    row.feature = cohort.feature_names()[j];
    const std::string name = row.feature;
    try {
      const CoxModel fit = fit_cox(cohort.select_features(std::span<const std::string>(&name, 1)), options);
      double beta = fit.coefficients[0];
      double se = std::sqrt(fit.covariance(0, 0));
      row.p_value = wald_p_value(beta / se);
      if (cohort.normalization()) {
        const double sd = (*cohort.normalization())[j].stddev;
        beta /= sd;
        se /= sd;
      }
      row.coefficient = beta;
      row.std_error = se;
      row.hazard_ratio = std::exp(beta);
      row.ci_low = std::exp(beta - z975 * se);
      row.ci_high = std::exp(beta + z975 * se);
    } catch (const Error& e) {
      row.failed = true;
      row.failure = e.what();
      row.p_value = std::numeric_limits<double>::quiet_NaN();
    }
    result.rows.push_back(std::move(row));
  }
  std::stable_sort(result.rows.begin(), result.rows.end(), [](const ScreenRow& a, const ScreenRow& b) {
    if (a.failed != b.failed) return !a.failed;
    if (a.failed) return false;
    return a.p_value < b.p_value;
  });
  // Retained features keep the cohort's column order.
  for (const auto& name : cohort.feature_names()) {
    for (const auto& row : result.rows) {
      if (row.feature == name && !row.failed && row.p_value < alpha) result.retained.push_back(name);
    }
  }
  return result;
}

void write_screen_csv(std::ostream& out, const ScreenResult& screen) {
  out << "feature,HR,CI_low,CI_high,p\n";
  for (const auto& row : screen.rows) {
    if (row.failed) {
      out << row.feature << ",NA,NA,NA,NA\n";
    } else {
      out << row.feature << ',' << row.hazard_ratio << ',' << row.ci_low << ',' << row.ci_high
          << ',' << row.p_value << '\n';
    }
  }
}

std::vector<double> variance_inflation(const Cohort& cohort, std::span<const std::string> features) {
  std::vector<std::vector<double>> cols;
  for (const auto& name : features) {
    auto j = cohort.feature_index(name);
    if (!j) throw Error(ErrorKind::Schema, "vif: unknown feature \"" + name + "\"");
    cols.push_back(cohort.column(*j));
  }
  const auto n = static_cast<Eigen::Index>(cohort.size());
  const std::size_t k = cols.size();
  std::vector<double> vif(k);
  for (std::size_t j = 0; j < k; ++j) {
    Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(cols[j].data(), n);
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(k));
    x.col(0).setOnes();
    Eigen::Index c = 1;
    for (std::size_t m = 0; m < k; ++m) {
      if (m == j) continue;
      x.col(c++) = Eigen::Map<const Eigen::VectorXd>(cols[m].data(), n);
    }
    const double sst = (y.array() - y.mean()).square().sum();
    if (sst <= 0.0) {
      vif[j] = std::numeric_limits<double>::infinity();
      continue;
    }
    const Eigen::VectorXd coef = x.colPivHouseholderQr().solve(y);
    const double ssr = (y - x * coef).squaredNorm();
    const double one_minus_r2 = ssr / sst;
    vif[j] = one_minus_r2 <= 1e-10 ? std::numeric_limits<double>::infinity() : 1.0 / one_minus_r2;
  }
  return vif;
}

VifResult vif_filter(const Cohort& cohort, std::span<const std::string> retained, double threshold) {
  if (retained.size() < 2) throw Error(ErrorKind::Parameter, "vif: at least two features required");
  if (!(threshold >= 1.0)) throw Error(ErrorKind::Parameter, "vif: threshold must be >= 1");
  VifResult result;
  result.kept.assign(retained.begin(), retained.end());
  while (result.kept.size() > 1) {
    const std::vector<double> vif = variance_inflation(cohort, result.kept);
    std::size_t worst = 0;
    for (std::size_t j = 1; j < vif.size(); ++j) {
      if (vif[j] > vif[worst]) worst = j;
    }
    if (!(vif[worst] > threshold)) break;
    result.removed.push_back({result.kept[worst], vif[worst]});
    result.kept.erase(result.kept.begin() + static_cast<long>(worst));
  }
  return result;
}

}  // namespace survrec
