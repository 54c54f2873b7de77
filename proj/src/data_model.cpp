#include "survrec/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "detail/csv.hpp"
#include "survrec/error.hpp"
#include "survrec/rng.hpp"

namespace survrec {

Cohort::Cohort(std::vector<std::string> feature_names, std::vector<SurvivalRecord> records)
    : feature_names_(std::move(feature_names)), records_(std::move(records)) {
  validate();
}

void Cohort::validate() const {
  if (records_.empty()) throw Error(ErrorKind::EmptyCohort, "cohort has no records");
  std::set<std::string> seen;
  for (const auto& name : feature_names_) {
    if (!seen.insert(name).second) {
      throw Error(ErrorKind::Schema, "duplicate feature name \"" + name + "\"");
    }
  }
  for (const auto& r : records_) {
    if (!(r.time > 0.0) || !std::isfinite(r.time)) {
      throw Error(ErrorKind::NumericInput, "record " + r.id + ": time must be positive");
    }
    if (r.event != 0 && r.event != 1) {
      throw Error(ErrorKind::NumericInput, "record " + r.id + ": event must be 0 or 1");
    }
    if (r.features.size() != feature_names_.size()) {
      throw Error(ErrorKind::Shape, "record " + r.id + ": feature count mismatch");
    }
  }
}

std::vector<double> Cohort::times() const {
  std::vector<double> out(records_.size());
  std::transform(records_.begin(), records_.end(), out.begin(),
                 [](const SurvivalRecord& r) { return r.time; });
  return out;
}

std::vector<int> Cohort::events() const {
  std::vector<int> out(records_.size());
  std::transform(records_.begin(), records_.end(), out.begin(),
                 [](const SurvivalRecord& r) { return r.event; });
  return out;
}

std::vector<double> Cohort::column(std::size_t feature) const {
  std::vector<double> out(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) out[i] = records_[i].features[feature];
  return out;
}

std::size_t Cohort::event_count() const {
  return static_cast<std::size_t>(std::count_if(
      records_.begin(), records_.end(), [](const SurvivalRecord& r) { return r.event == 1; }));
}

Eigen::MatrixXd Cohort::design_matrix() const {
  Eigen::MatrixXd x(records_.size(), feature_names_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    for (std::size_t j = 0; j < feature_names_.size(); ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = records_[i].features[j];
    }
  }
  return x;
}

std::optional<std::size_t> Cohort::feature_index(const std::string& name) const {
  auto it = std::find(feature_names_.begin(), feature_names_.end(), name);
  if (it == feature_names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - feature_names_.begin());
}

Cohort Cohort::subset(std::span<const std::size_t> rows) const {
  std::vector<SurvivalRecord> picked;
  picked.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= records_.size()) throw Error(ErrorKind::Shape, "subset: row index out of range");
    picked.push_back(records_[r]);
  }
  Cohort out(feature_names_, std::move(picked));
  out.normalization_ = normalization_;
  out.warnings_ = warnings_;
  return out;
}

Cohort Cohort::select_features(std::span<const std::string> names) const {
  std::vector<std::size_t> idx;
  for (const auto& name : names) {
    auto j = feature_index(name);
    if (!j) throw Error(ErrorKind::Schema, "unknown feature \"" + name + "\"");
    idx.push_back(*j);
  }
  std::vector<SurvivalRecord> recs = records_;
  for (auto& r : recs) {
    std::vector<double> f(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) f[k] = r.features[idx[k]];
    r.features = std::move(f);
  }
  Cohort out(std::vector<std::string>(names.begin(), names.end()), std::move(recs));
  if (normalization_) {
    std::vector<NormalizationStat> stats;
    for (std::size_t j : idx) stats.push_back((*normalization_)[j]);
    out.normalization_ = std::move(stats);
  }
  out.warnings_ = warnings_;
  return out;
}

Cohort Cohort::with_outcomes(std::span<const double> times, std::span<const int> events) const {
  if (times.size() != records_.size() || events.size() != records_.size()) {
    throw Error(ErrorKind::Shape, "with_outcomes: length mismatch");
  }
  std::vector<SurvivalRecord> recs = records_;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].time = times[i];
    recs[i].event = events[i];
  }
  Cohort out(feature_names_, std::move(recs));
  out.normalization_ = normalization_;
  out.warnings_ = warnings_;
  return out;
}

// --- CSV ------------------------------------------------------------------

using csv::format_double;
using csv::parse_double;
using csv::split_csv_line;
using csv::trim;

Cohort read_cohort(std::istream& in, const CohortSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::EmptyCohort, "cohort file is empty");
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

  auto locate = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };

  const auto time_col = locate(schema.time_column);
  if (!time_col) throw Error(ErrorKind::Schema, "missing time column \"" + schema.time_column + "\"");
  const auto event_col = locate(schema.event_column);
  if (!event_col) {
    throw Error(ErrorKind::Schema, "missing event column \"" + schema.event_column + "\"");
  }
  std::optional<std::size_t> id_col;
  if (!schema.id_column.empty()) id_col = locate(schema.id_column);

  std::vector<std::string> feature_names = schema.feature_columns;
  std::vector<std::size_t> feature_cols;
  if (feature_names.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == *time_col || c == *event_col || (id_col && c == *id_col)) continue;
      feature_names.push_back(header[c]);
      feature_cols.push_back(c);
    }
  } else {
    for (const auto& name : feature_names) {
      auto c = locate(name);
      if (!c) throw Error(ErrorKind::Schema, "missing feature column \"" + name + "\"");
      feature_cols.push_back(*c);
    }
  }
  if (feature_names.empty()) throw Error(ErrorKind::Schema, "schema names no feature columns");

  std::vector<SurvivalRecord> records;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(row, "*", "expected " + std::to_string(header.size()) + " fields, found " +
                                     std::to_string(cells.size()));
    }
    for (auto& c : cells) c = trim(c);

    SurvivalRecord rec;
    rec.id = id_col ? cells[*id_col] : std::to_string(row);
    const auto t = parse_double(cells[*time_col]);
    if (!t) throw ParseError(row, header[*time_col], "non-numeric or missing time");
    if (!(*t > 0.0)) throw ParseError(row, header[*time_col], "time must be > 0");
    rec.time = *t;
    const std::string& e = cells[*event_col];
    if (e == "1" || e == "1.0") {
      rec.event = 1;
    } else if (e == "0" || e == "0.0") {
      rec.event = 0;
    } else {
      throw ParseError(row, header[*event_col], "event must be 0 or 1, found \"" + e + "\"");
    }
    rec.features.reserve(feature_cols.size());
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      const auto v = parse_double(cells[feature_cols[k]]);
      if (!v) {
        throw ParseError(row, header[feature_cols[k]],
                         cells[feature_cols[k]].empty() ? "missing value"
                                                        : "non-numeric value \"" +
                                                              cells[feature_cols[k]] + "\"");
      }
      rec.features.push_back(*v);
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw Error(ErrorKind::EmptyCohort, "cohort file has no data rows");
  return Cohort(std::move(feature_names), std::move(records));
}

Cohort load_cohort(const std::filesystem::path& path, const CohortSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open cohort file " + path.string());
  return read_cohort(in, schema);
}

void write_cohort(std::ostream& out, const Cohort& cohort) {
  out << "id,time,event";
  for (const auto& name : cohort.feature_names()) out << ',' << name;
  out << '\n';
  for (const auto& r : cohort.records()) {
    out << r.id << ',' << format_double(r.time) << ',' << r.event;
    for (double v : r.features) out << ',' << format_double(v);
    out << '\n';
  }
}

void write_cohort(const std::filesystem::path& path, const Cohort& cohort) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  write_cohort(out, cohort);
}

// --- normalization --------------------------------------------------------

ZScoreFit fit_zscore(const Cohort& cohort) {
  ZScoreFit fit;
  const double n = static_cast<double>(cohort.size());
  for (std::size_t j = 0; j < cohort.n_features(); ++j) {
    const std::vector<double> col = cohort.column(j);
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    if (*lo == *hi) {
      fit.dropped_constant.push_back(cohort.feature_names()[j]);
      continue;
    }
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    fit.kept_features.push_back(cohort.feature_names()[j]);
    fit.stats.push_back({mean, sd});
  }
  if (fit.kept_features.empty()) {
    throw Error(ErrorKind::NoInformativeFeatures, "every feature column is constant");
  }
  return fit;
}

Cohort apply_zscore(const Cohort& cohort, const ZScoreFit& fit) {
  Cohort selected = cohort.select_features(fit.kept_features);
  std::vector<SurvivalRecord> recs = selected.records();
  for (auto& r : recs) {
    for (std::size_t j = 0; j < fit.stats.size(); ++j) {
      r.features[j] = (r.features[j] - fit.stats[j].mean) / fit.stats[j].stddev;
    }
  }
  Cohort out(fit.kept_features, std::move(recs));
  out.set_normalization(fit.stats);
  for (const auto& w : cohort.warnings()) out.add_warning(w);
  for (const auto& name : fit.dropped_constant) {
    out.add_warning("dropped constant feature \"" + name + "\"");
  }
  return out;
}

Cohort zscore_normalize(const Cohort& cohort) { return apply_zscore(cohort, fit_zscore(cohort)); }

// --- synthetic cohorts ----------------------------------------------------

void SyntheticSpec::validate() const {
  if (n < 2) throw Error(ErrorKind::Parameter, "synthetic spec: n must be >= 2");
  if (true_coefficients.empty()) {
    throw Error(ErrorKind::Parameter, "synthetic spec: at least one coefficient required");
  }
  if (!(weibull_shape > 0.0) || !(weibull_scale > 0.0)) {
    throw Error(ErrorKind::Parameter, "synthetic spec: Weibull shape and scale must be > 0");
  }
  if (!(censoring_rate_target >= 0.0 && censoring_rate_target < 1.0)) {
    throw Error(ErrorKind::Parameter, "synthetic spec: censoring_rate_target must be in [0,1)");
  }
  if (!feature_names.empty() && feature_names.size() != true_coefficients.size()) {
    throw Error(ErrorKind::Parameter, "synthetic spec: feature_names length mismatch");
  }
}

void to_json(nlohmann::json& j, const SyntheticSpec& spec) {
  j = nlohmann::json{{"n", spec.n},
                     {"true_coefficients", spec.true_coefficients},
                     {"weibull_shape", spec.weibull_shape},
                     {"weibull_scale", spec.weibull_scale},
                     {"censoring_rate_target", spec.censoring_rate_target},
                     {"nonlinear", spec.nonlinear},
                     {"seed", spec.seed}};
  if (!spec.feature_names.empty()) j["feature_names"] = spec.feature_names;
}

void from_json(const nlohmann::json& j, SyntheticSpec& spec) {
  static const std::set<std::string> known = {"n",          "true_coefficients",
                                              "weibull_shape", "weibull_scale",
                                              "censoring_rate_target", "nonlinear",
                                              "seed",       "feature_names"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error(ErrorKind::Schema, "synthetic spec: unknown key \"" + key + "\"");
  }
  spec = SyntheticSpec{};
  spec.n = j.at("n").get<std::size_t>();
  spec.true_coefficients = j.at("true_coefficients").get<std::vector<double>>();
  spec.weibull_shape = j.value("weibull_shape", spec.weibull_shape);
  spec.weibull_scale = j.value("weibull_scale", spec.weibull_scale);
  spec.censoring_rate_target = j.value("censoring_rate_target", spec.censoring_rate_target);
  spec.nonlinear = j.value("nonlinear", spec.nonlinear);
  spec.seed = j.value("seed", spec.seed);
  if (j.contains("feature_names")) {
    spec.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  }
  spec.validate();
}

double synthetic_nonlinear_term(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double term = 0.8 * (x[0] * x[0] - 1.0);
  if (x.size() >= 2) term += 0.8 * x[0] * x[1];
  return term;
}

namespace {

// Upper end of the censoring-rate search range, relative to the median event
// time. Targets above what this rate can produce are reported as unreachable.
constexpr double kMaxCensoringRateFactor = 4.0;
constexpr double kCensoringTolerance = 0.05;

double censored_fraction(std::span<const double> event_times,
                         std::span<const double> censor_draws, double log_rate) {
  const double rate = std::exp(log_rate);
  std::size_t censored = 0;
  for (std::size_t i = 0; i < event_times.size(); ++i) {
    if (censor_draws[i] / rate < event_times[i]) ++censored;
  }
  return static_cast<double>(censored) / static_cast<double>(event_times.size());
}

}  // namespace

SyntheticCohort generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t d = spec.true_coefficients.size();
  Rng rng(spec.seed);

  std::vector<std::vector<double>> features(spec.n, std::vector<double>(d));
  std::vector<double> eta(spec.n);
  std::vector<double> event_times(spec.n);
  std::vector<double> censor_draws(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    double lp = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      features[i][j] = rng.normal();
      lp += spec.true_coefficients[j] * features[i][j];
    }
    if (spec.nonlinear) lp += synthetic_nonlinear_term(features[i]);
    eta[i] = lp;
    const double u = rng.uniform();
    event_times[i] =
        spec.weibull_scale * std::pow(-std::log(u) * std::exp(-lp), 1.0 / spec.weibull_shape);
    censor_draws[i] = -std::log(rng.uniform());
  }

  double realized = 0.0;
  double log_rate = -std::numeric_limits<double>::infinity();
  if (spec.censoring_rate_target > 0.0) {
    std::vector<double> sorted = event_times;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2),
                     sorted.end());
    const double median = sorted[sorted.size() / 2];
    double lo = std::log(1e-6 / median);
    double hi = std::log(kMaxCensoringRateFactor / median);
    for (int step = 0; step < 100; ++step) {
      const double mid = 0.5 * (lo + hi);
      if (censored_fraction(event_times, censor_draws, mid) < spec.censoring_rate_target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double f_lo = censored_fraction(event_times, censor_draws, lo);
    const double f_hi = censored_fraction(event_times, censor_draws, hi);
    if (std::abs(f_lo - spec.censoring_rate_target) <= std::abs(f_hi - spec.censoring_rate_target)) {
      log_rate = lo;
      realized = f_lo;
    } else {
      log_rate = hi;
      realized = f_hi;
    }
    if (std::abs(realized - spec.censoring_rate_target) > kCensoringTolerance) {
      throw Error(ErrorKind::Calibration,
                  "censoring target " + std::to_string(spec.censoring_rate_target) +
                      " unreachable; closest realized fraction " + std::to_string(realized));
    }
  }

  std::vector<std::string> names = spec.feature_names;
  if (names.empty()) {
    for (std::size_t j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
  }
  const double rate = std::exp(log_rate);
  std::vector<SurvivalRecord> records(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double censor_time = spec.censoring_rate_target > 0.0
                                   ? censor_draws[i] / rate
                                   : std::numeric_limits<double>::infinity();
    auto& r = records[i];
    r.id = "s" + std::to_string(i + 1);
    r.event = event_times[i] <= censor_time ? 1 : 0;
    r.time = r.event ? event_times[i] : censor_time;
    r.features = std::move(features[i]);
  }
  SyntheticCohort out{Cohort(std::move(names), std::move(records)), std::move(eta), realized};
  return out;
}

}  // namespace survrec
