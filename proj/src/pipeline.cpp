#include "survrec/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "survrec/error.hpp"
#include "survrec/radiomics.hpp"
#include "survrec/rng.hpp"
#include "survrec/svg.hpp"

namespace survrec {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Learner learner) {
  switch (learner) {
    case Learner::XGBoost: return "XGBoost";
    case Learner::RSF: return "RSF";
    case Learner::CoxBoost: return "CoxBoost";
    case Learner::GBM: return "GBM";
    case Learner::CoxPH: return "CoxPH";
    case Learner::Temporal: return "Temporal";
  }
  return "unknown";
}

Learner learner_from_string(const std::string& name) {
  for (Learner l : {Learner::XGBoost, Learner::RSF, Learner::CoxBoost, Learner::GBM, Learner::CoxPH,
                    Learner::Temporal}) {
    const std::string canonical = to_string(l);
    if (std::ranges::equal(name, canonical, [](char a, char b) {
          return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
        })) {
      return l;
    }
  }
  throw Error(ErrorKind::Parameter, "unknown learner \"" + name + "\"");
}

// --- configuration --------------------------------------------------------

void PipelineConfig::validate() const {
  if (cv_folds < 2) throw Error(ErrorKind::Parameter, "cv_folds must be >= 2");
  if (horizons.empty()) throw Error(ErrorKind::Parameter, "at least one horizon is required");
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (!(horizons[i] > 0.0)) throw Error(ErrorKind::Parameter, "horizons must be positive");
    if (i > 0 && !(horizons[i] > horizons[i - 1])) throw Error(ErrorKind::Parameter, "horizons must ascend");
  }
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::Parameter, "alpha must lie in (0, 1]");
  if (!(vif_threshold > 1.0)) throw Error(ErrorKind::Parameter, "vif_threshold must exceed 1");
  if (calibration_bins < 2) throw Error(ErrorKind::Parameter, "calibration_bins must be >= 2");
  if (!(net_benefit_threshold > 0.0 && net_benefit_threshold < 1.0)) {
    throw Error(ErrorKind::Parameter, "net_benefit_threshold must lie in (0, 1)");
  }
  for (double p : dca_thresholds) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::Parameter, "dca thresholds must lie in (0, 1)");
  }
  if (importance_repeats < 0) throw Error(ErrorKind::Parameter, "importance_repeats must be >= 0");
  if (learners.empty()) throw Error(ErrorKind::Parameter, "no learners configured");
  xgboost.validate();
  coxboost.validate();
  gbm.validate();
  temporal.validate();
}

std::vector<double> PipelineConfig::thresholds() const {
  if (!dca_thresholds.empty()) return dca_thresholds;
  std::vector<double> out;
  for (int k = 1; k <= 12; ++k) out.push_back(k / 20.0);
  return out;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

PipelineConfig parse_config(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorKind::Schema, "config must be a JSON object");
  static const std::set<std::string> known{
      "cohort",        "longitudinal", "voxel_dir",           "radiomics_levels",   "alpha",
      "vif_threshold", "cv_folds",     "horizons",            "calibration_bins",   "dca_thresholds",
      "net_benefit_threshold",         "importance_repeats",  "shap",               "learners",
      "cox",           "xgboost",      "coxboost",            "gbm",                "rsf",
      "temporal",      "seed",         "out",                 "threads"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error(ErrorKind::Schema, "unknown config key \"" + key + "\"");
  }
  PipelineConfig c;
  try {
    if (!j.contains("cohort")) throw Error(ErrorKind::Schema, "config needs a \"cohort\" path");
    c.cohort = resolve(base_dir, j.at("cohort").get<std::string>());
    if (j.contains("longitudinal") && !j["longitudinal"].is_null()) {
      c.longitudinal = resolve(base_dir, j["longitudinal"].get<std::string>());
    }
    if (j.contains("voxel_dir") && !j["voxel_dir"].is_null()) {
      c.voxel_dir = resolve(base_dir, j["voxel_dir"].get<std::string>());
    }
    c.radiomics_levels = j.value("radiomics_levels", c.radiomics_levels);
    c.alpha = j.value("alpha", c.alpha);
    c.vif_threshold = j.value("vif_threshold", c.vif_threshold);
    c.cv_folds = j.value("cv_folds", c.cv_folds);
    c.horizons = j.value("horizons", c.horizons);
    c.calibration_bins = j.value("calibration_bins", c.calibration_bins);
    c.dca_thresholds = j.value("dca_thresholds", c.dca_thresholds);
    c.net_benefit_threshold = j.value("net_benefit_threshold", c.net_benefit_threshold);
    c.importance_repeats = j.value("importance_repeats", c.importance_repeats);
    c.shap = j.value("shap", c.shap);
    if (j.contains("learners")) {
      c.learners.clear();
      for (const auto& name : j["learners"]) c.learners.push_back(learner_from_string(name.get<std::string>()));
    }
    if (j.contains("cox")) c.cox = j["cox"].get<CoxOptions>();
    if (j.contains("xgboost")) c.xgboost = j["xgboost"].get<BoostParams>();
    if (j.contains("coxboost")) c.coxboost = j["coxboost"].get<BoostParams>();
    if (j.contains("gbm")) c.gbm = j["gbm"].get<BoostParams>();
    if (j.contains("rsf")) c.rsf = j["rsf"].get<ForestParams>();
    if (j.contains("temporal")) c.temporal = j["temporal"].get<TemporalOptions>();
    c.seed = j.value("seed", c.seed);
    if (j.contains("out")) c.out = resolve(base_dir, j["out"].get<std::string>());
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("config: ") + e.what());
  }
  c.xgboost.mode = BoostMode::Xgboost;
  c.coxboost.mode = BoostMode::Componentwise;
  c.gbm.mode = BoostMode::Gbm;
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, "config " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

// Everything that influences results; output location excluded.
json config_to_json(const PipelineConfig& c) {
  json learners = json::array();
  for (Learner l : c.learners) learners.push_back(to_string(l));
  json j{{"cohort", c.cohort.filename().string()},
         {"radiomics_levels", c.radiomics_levels},
         {"alpha", c.alpha},
         {"vif_threshold", c.vif_threshold},
         {"cv_folds", c.cv_folds},
         {"horizons", c.horizons},
         {"calibration_bins", c.calibration_bins},
         {"dca_thresholds", c.thresholds()},
         {"net_benefit_threshold", c.net_benefit_threshold},
         {"importance_repeats", c.importance_repeats},
         {"shap", c.shap},
         {"learners", learners},
         {"cox", c.cox},
         {"xgboost", c.xgboost},
         {"coxboost", c.coxboost},
         {"gbm", c.gbm},
         {"rsf", c.rsf},
         {"temporal", c.temporal},
         {"seed", c.seed}};
  j["longitudinal"] = c.longitudinal ? json(c.longitudinal->filename().string()) : json(nullptr);
  j["voxel_dir"] = c.voxel_dir ? json(c.voxel_dir->filename().string()) : json(nullptr);
  j["rsf"].erase("n_threads");
  return j;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

// --- folds and stratification --------------------------------------------

std::vector<int> stratified_folds(std::span<const int> events, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::Parameter, "need at least 2 folds");
  if (events.size() < static_cast<std::size_t>(k)) throw Error(ErrorKind::Parameter, "fewer subjects than folds");
  std::vector<std::size_t> with_event;
  std::vector<std::size_t> censored;
  for (std::size_t i = 0; i < events.size(); ++i) (events[i] ? with_event : censored).push_back(i);
  Rng rng(mix_seed(seed, 0xF01D));
  rng.shuffle(std::span<std::size_t>(with_event));
  rng.shuffle(std::span<std::size_t>(censored));
  std::vector<int> fold(events.size());
  std::size_t counter = 0;
  for (std::size_t i : with_event) fold[i] = static_cast<int>(counter++ % static_cast<std::size_t>(k));
  for (std::size_t i : censored) fold[i] = static_cast<int>(counter++ % static_cast<std::size_t>(k));
  return fold;
}

Stratification stratify_by_median(std::span<const double> scores) {
  if (scores.size() < 2) throw Error(ErrorKind::Parameter, "stratification needs >= 2 subjects");
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorKind::NumericInput, "stratification scores must be finite");
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) {
    throw Error(ErrorKind::DegenerateStratification, "all risk scores are identical");
  }
  const std::size_t mid = sorted.size() / 2;
  Stratification s;
  s.cutoff = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  for (std::size_t i = 0; i < scores.size(); ++i) (scores[i] > s.cutoff ? s.high : s.low).push_back(i);
  if (s.high.empty()) {
    throw Error(ErrorKind::DegenerateStratification, "no score exceeds the median cut-off");
  }
  return s;
}

// --- preprocessing and learners -------------------------------------------

Cohort Preprocessing::apply(const Cohort& raw) const {
  return apply_zscore(raw, zscore).select_features(features);
}

Preprocessing fit_preprocessing(const Cohort& raw_train, const PipelineConfig& config) {
  Preprocessing p;
  p.zscore = fit_zscore(raw_train);
  const Cohort normalized = apply_zscore(raw_train, p.zscore);
  p.screen = univariate_screen(normalized, config.alpha, config.cox);
  if (p.screen.retained.empty()) {
    throw Error(ErrorKind::Pipeline, "univariate screening retained no features (alpha " +
                                         std::to_string(config.alpha) + ")");
  }
  if (p.screen.retained.size() >= 2) {
    p.vif = vif_filter(normalized, p.screen.retained, config.vif_threshold);
  } else {
    p.vif.kept = p.screen.retained;
  }
  p.features = p.vif.kept;
  return p;
}

namespace {

std::uint64_t learner_seed(const PipelineConfig& config, Learner learner, int fold) {
  return mix_seed(config.seed, 1000 * static_cast<std::uint64_t>(learner) + static_cast<std::uint64_t>(fold));
}

std::string hash_json(const json& j) { return hex64(fnv1a(j.dump())); }

// Model outputs for one fold of the temporal learner, including the
// snapshot normalization fitted on the training subjects.
struct TemporalFit {
  TemporalModel model;
  std::vector<NormalizationStat> stats;
  StepFunction baseline;
};

std::vector<SnapshotSequence> normalize_sequences(const LongitudinalCohort& cohort, std::span<const std::size_t> rows,
                                                  const std::vector<NormalizationStat>& stats) {
  std::vector<SnapshotSequence> out;
  for (std::size_t r : rows) {
    SnapshotSequence s = cohort.subjects.at(r);
    for (auto& snap : s.snapshots) {
      for (std::size_t k = 0; k < snap.features.size(); ++k) {
        snap.features[k] = (snap.features[k] - stats[k].mean) / stats[k].stddev;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

TemporalFit fit_temporal_fold(const PipelineConfig& config, const LongitudinalCohort& cohort,
                              std::span<const std::size_t> train_rows, std::uint64_t seed) {
  const std::size_t p = cohort.feature_names.size();
  std::vector<NormalizationStat> stats(p);
  for (std::size_t k = 0; k < p; ++k) {
    double sum = 0.0;
    double count = 0.0;
    for (std::size_t r : train_rows) {
      for (const auto& snap : cohort.subjects[r].snapshots) {
        sum += snap.features[k];
        count += 1.0;
      }
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (std::size_t r : train_rows) {
      for (const auto& snap : cohort.subjects[r].snapshots) ss += (snap.features[k] - mean) * (snap.features[k] - mean);
    }
    const double sd = count > 1.0 ? std::sqrt(ss / (count - 1.0)) : 0.0;
    stats[k] = {mean, sd > 0.0 ? sd : 1.0};
  }
  const std::vector<SnapshotSequence> train = normalize_sequences(cohort, train_rows, stats);
  TemporalOptions options = config.temporal;
  options.seed = seed;
  TemporalModel model = train_temporal(train, options);
  std::vector<double> lp;
  std::vector<double> times;
  std::vector<int> events;
  for (const auto& s : train) {
    lp.push_back(model.risk(s));
    times.push_back(s.time);
    events.push_back(s.event);
  }
  StepFunction baseline = breslow_baseline(lp, times, events);
  return {std::move(model), std::move(stats), std::move(baseline)};
}

}  // namespace

std::unique_ptr<RiskModel> fit_learner(Learner learner, const PipelineConfig& config, const Cohort& train,
                                       std::uint64_t seed, json* serialized) {
  auto boosted = [&](BoostParams params) {
    params.seed = seed;
    auto m = std::make_unique<BoostedModel>(fit_boosted(train, params));
    if (serialized) *serialized = m->to_json();
    return std::unique_ptr<RiskModel>(std::move(m));
  };
  switch (learner) {
    case Learner::XGBoost: return boosted(config.xgboost);
    case Learner::CoxBoost: return boosted(config.coxboost);
    case Learner::GBM: return boosted(config.gbm);
    case Learner::RSF: {
      ForestParams params = config.rsf;
      params.seed = seed;
      if (config.threads) params.n_threads = static_cast<int>(config.threads);
      auto m = std::make_unique<Forest>(fit_rsf(train, params));
      if (serialized) *serialized = m->to_json();
      return m;
    }
    case Learner::CoxPH: {
      auto m = std::make_unique<CoxModel>(fit_cox(train, config.cox));
      if (serialized) *serialized = m->to_json();
      return m;
    }
    case Learner::Temporal: break;
  }
  throw Error(ErrorKind::Parameter, "the temporal learner needs longitudinal sequences");
}

FoldOutcome run_fold(const PipelineConfig& config, const Cohort& raw, const LongitudinalCohort* longitudinal,
                     std::span<const std::size_t> train_rows, std::span<const std::size_t> test_rows, int fold) {
  FoldOutcome out;
  out.fold = fold;
  const Cohort raw_train = raw.subset(train_rows);
  const Preprocessing pre = fit_preprocessing(raw_train, config);
  out.features = pre.features;
  const Cohort train = pre.apply(raw_train);
  // Test rows carry their outcomes in the Cohort type, but only features are read.
  const Cohort test = pre.apply(raw.subset(test_rows));

  for (Learner learner : config.learners) {
    try {
      FoldPredictions pred;
      json serialized;
      if (learner == Learner::Temporal) {
        if (!longitudinal) throw Error(ErrorKind::Parameter, "temporal learner configured without longitudinal data");
        TemporalFit tf = fit_temporal_fold(config, *longitudinal, train_rows, learner_seed(config, learner, fold));
        serialized = tf.model.to_json();
        json stats = json::array();
        for (const auto& s : tf.stats) stats.push_back({s.mean, s.stddev});
        serialized["normalization"] = stats;
        const std::vector<SnapshotSequence> seqs = normalize_sequences(*longitudinal, test_rows, tf.stats);
        pred.survival.assign(config.horizons.size(), {});
        for (const auto& s : seqs) {
          const double f = tf.model.risk(s);
          pred.risk.push_back(f);
          for (std::size_t h = 0; h < config.horizons.size(); ++h) {
            pred.survival[h].push_back(std::exp(-tf.baseline(config.horizons[h]) * std::exp(f)));
          }
        }
      } else {
        auto model = fit_learner(learner, config, train, learner_seed(config, learner, fold), &serialized);
        pred.survival.assign(config.horizons.size(), {});
        for (const auto& r : test.records()) {
          pred.risk.push_back(model->risk(r.features));
          const auto curve = model->survival_curve(r.features);
          for (std::size_t h = 0; h < config.horizons.size(); ++h) {
            pred.survival[h].push_back((*curve)(config.horizons[h]));
          }
        }
      }
      out.fitted.push_back({learner, {hash_json(serialized), std::move(serialized)}});
      out.predictions.push_back({learner, std::move(pred)});
    } catch (const Error& e) {
      out.learners_failed.push_back(to_string(learner));
      out.failures.push_back({learner, std::string(to_string(e.kind())) + ": " + e.what()});
    }
  }
  return out;
}

// --- cross-validation and metrics -----------------------------------------

namespace {

template <typename T>
const T* find_for(const std::vector<std::pair<Learner, T>>& items, Learner learner) {
  for (const auto& [l, v] : items) {
    if (l == learner) return &v;
  }
  return nullptr;
}

void evaluate_model(ModelEvaluation& m, const PipelineConfig& config, std::span<const double> times,
                    std::span<const int> events, const StepFunction& censor) {
  m.concordance = c_index(times, events, m.oof_risk);
  for (std::size_t h = 0; h < config.horizons.size(); ++h) {
    m.auc.push_back(auc_summary(times, events, m.oof_risk, config.horizons[h], censor));
    double bs = std::numeric_limits<double>::quiet_NaN();
    try {
      bs = brier(config.horizons[h], m.oof_survival[h], times, events, censor);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UndefinedMetric) throw;
    }
    m.brier.push_back(bs);
  }
  const double t = config.horizons.back();
  std::vector<double> risk_at_t;
  for (double s : m.oof_survival.back()) risk_at_t.push_back(1.0 - s);
  m.calibration = calibration_table(risk_at_t, times, events, t, config.calibration_bins);
  const std::vector<HorizonOutcome> outcome = horizon_outcomes(times, events, t);
  m.dca = decision_curve(outcome, risk_at_t, config.thresholds());
  m.net_benefit_at_threshold = net_benefit(outcome, risk_at_t, config.net_benefit_threshold);
}

}  // namespace

CrossValidation cross_validate(const PipelineConfig& config, const Cohort& raw, const LongitudinalCohort* longitudinal) {
  config.validate();
  CrossValidation cv;
  const std::vector<double> times = raw.times();
  const std::vector<int> events = raw.events();
  cv.folds = stratified_folds(events, config.cv_folds, config.seed);
  const std::size_t n = raw.size();

  for (Learner l : config.learners) {
    ModelEvaluation m;
    m.learner = l;
    m.oof_risk.assign(n, 0.0);
    m.oof_survival.assign(config.horizons.size(), std::vector<double>(n, 0.0));
    cv.models.push_back(std::move(m));
  }

  for (int k = 0; k < config.cv_folds; ++k) {
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
    for (std::size_t i = 0; i < n; ++i) (cv.folds[i] == k ? test_rows : train_rows).push_back(i);
    FoldOutcome fo;
    try {
      fo = run_fold(config, raw, longitudinal, train_rows, test_rows, k);
    } catch (const Error& e) {
      throw Error(e.kind(), "fold " + std::to_string(k + 1) + ": " + e.what());
    }
    for (auto& m : cv.models) {
      if (m.failed) continue;
      if (const std::string* why = find_for(fo.failures, m.learner)) {
        m.failed = true;
        m.failure = "fold " + std::to_string(k + 1) + ": " + *why;
        continue;
      }
      const FoldPredictions& p = *find_for(fo.predictions, m.learner);
      for (std::size_t r = 0; r < test_rows.size(); ++r) {
        m.oof_risk[test_rows[r]] = p.risk[r];
        for (std::size_t h = 0; h < config.horizons.size(); ++h) m.oof_survival[h][test_rows[r]] = p.survival[h][r];
      }
      m.fold_hashes.push_back(find_for(fo.fitted, m.learner)->model_hash);
    }
    cv.fold_outcomes.push_back(std::move(fo));
  }

  const StepFunction censor = censoring_survival(times, events);
  for (auto& m : cv.models) {
    if (m.failed) continue;
    try {
      evaluate_model(m, config, times, events, censor);
    } catch (const Error& e) {
      m.failed = true;
      m.failure = std::string("evaluation: ") + e.what();
    }
  }
  return cv;
}

// --- full pipeline --------------------------------------------------------

Cohort load_pipeline_cohort(const PipelineConfig& config) {
  Cohort raw = load_cohort(config.cohort, CohortSchema{});
  if (!config.voxel_dir) return raw;
  std::vector<std::string> names = raw.feature_names();
  std::vector<SurvivalRecord> records = raw.records();
  std::vector<std::string> radiomic_names;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const fs::path grid_path = *config.voxel_dir / (records[i].id + ".grid");
    const fs::path mask_path = *config.voxel_dir / (records[i].id + ".mask");
    const FeatureMap f = extract_radiomics(read_voxel_grid(grid_path), read_region_mask(mask_path), config.radiomics_levels);
    if (i == 0) {
      for (const auto& [name, _] : f) radiomic_names.push_back("rad_" + name);
    }
    for (const auto& [_, value] : f) records[i].features.push_back(value);
  }
  names.insert(names.end(), radiomic_names.begin(), radiomic_names.end());
  return Cohort(std::move(names), std::move(records));
}

namespace {

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string horizon_key(double h) {
  std::ostringstream s;
  s << h;
  return s.str();
}

LongitudinalCohort align_longitudinal(const LongitudinalCohort& lc, const Cohort& raw) {
  LongitudinalCohort out{lc.feature_names, {}};
  for (const auto& r : raw.records()) {
    auto it = std::find_if(lc.subjects.begin(), lc.subjects.end(), [&](const SnapshotSequence& s) { return s.id == r.id; });
    if (it == lc.subjects.end()) throw Error(ErrorKind::Pipeline, "longitudinal data has no subject " + r.id);
    if (it->time != r.time || it->event != r.event) {
      throw Error(ErrorKind::Pipeline, "longitudinal outcome of subject " + r.id + " differs from the cohort");
    }
    out.subjects.push_back(*it);
  }
  return out;
}

GroupSummary summarize_group(const Cohort& raw, const std::vector<std::size_t>& rows) {
  std::vector<double> t;
  std::vector<int> e;
  for (std::size_t r : rows) {
    t.push_back(raw[r].time);
    e.push_back(raw[r].event);
  }
  GroupSummary g;
  g.size = rows.size();
  g.events = static_cast<std::size_t>(std::count(e.begin(), e.end(), 1));
  g.km = kaplan_meier(t, e);
  g.median_rfs = median_survival(g.km);
  return g;
}

json screen_json(const ScreenResult& s) {
  json rows = json::array();
  for (const auto& r : s.rows) {
    json row{{"feature", r.feature}};
    if (r.failed) {
      row["failed"] = r.failure;
    } else {
      row["coefficient"] = r.coefficient;
      row["std_error"] = r.std_error;
      row["hazard_ratio"] = r.hazard_ratio;
      row["ci_low"] = r.ci_low;
      row["ci_high"] = r.ci_high;
      row["p_value"] = r.p_value;
    }
    rows.push_back(row);
  }
  return rows;
}

json model_json(const ModelEvaluation& m, const PipelineConfig& config) {
  json j{{"name", to_string(m.learner)}, {"status", m.failed ? "failed" : "ok"}};
  if (m.failed) {
    j["failure"] = m.failure;
    return j;
  }
  j["c_index"] = m.concordance.c_index;
  j["concordant_pairs"] = m.concordance.concordant;
  j["discordant_pairs"] = m.concordance.discordant;
  j["tied_pairs"] = m.concordance.tied_score;
  json auc = json::object();
  json brier_j = json::object();
  for (std::size_t h = 0; h < config.horizons.size(); ++h) {
    const auto& a = m.auc[h];
    auc[horizon_key(config.horizons[h])] = {{"mean_auc", finite_or_null(a.mean_auc)},
                                            {"evaluable_times", a.curve.size()},
                                            {"skipped_times", a.skipped_times.size()}};
    brier_j[horizon_key(config.horizons[h])] = finite_or_null(m.brier[h]);
  }
  j["auc"] = auc;
  j["brier"] = brier_j;
  json bins = json::array();
  for (const auto& b : m.calibration.bins) {
    bins.push_back({{"mean_predicted", b.mean_predicted},
                    {"observed", b.observed},
                    {"observed_se", b.observed_se},
                    {"count", b.count}});
  }
  j["calibration"] = {{"horizon", config.horizons.back()}, {"bins", bins}, {"merged_bins", m.calibration.merged_bins}};
  json dca = json::array();
  for (const auto& p : m.dca) {
    dca.push_back({{"threshold", p.threshold},
                   {"net_benefit", p.net_benefit},
                   {"treat_all", p.treat_all_benefit},
                   {"treat_none", p.treat_none_benefit}});
  }
  j["decision_curve"] = {{"horizon", config.horizons.back()}, {"points", dca}};
  const auto& nb = m.net_benefit_at_threshold;
  j["net_benefit"] = {{"threshold", nb.threshold},
                      {"model", nb.net_benefit},
                      {"treat_all", nb.treat_all_benefit},
                      {"treat_none", nb.treat_none_benefit}};
  j["fold_model_hashes"] = m.fold_hashes;
  return j;
}

json group_json(const GroupSummary& g) {
  return {{"n", g.size}, {"events", g.events}, {"median_rfs", finite_or_null(g.median_rfs)}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void write_outputs(const PipelineResult& r, const PipelineConfig& config, const Cohort& raw) {
  std::error_code ec;
  fs::create_directories(config.out, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create output directory " + config.out.string() + ": " + ec.message());

  write_text(config.out / "report.json", r.report.dump(2) + "\n");

  {
    std::ostringstream s;
    write_screen_csv(s, r.full_screen);
    write_text(config.out / "screen.csv", s.str());
  }
  {
    std::ostringstream s;
    s << "feature,VIF\n";
    for (const auto& v : r.full_vif.removed) s << v.feature << ',' << fmt(v.vif) << '\n';
    write_text(config.out / "vif_removed.csv", s.str());
  }
  {
    std::ostringstream s;
    s << "id,time,event,fold";
    for (const auto& m : r.cv.models) s << ',' << to_string(m.learner);
    s << '\n';
    for (std::size_t i = 0; i < raw.size(); ++i) {
      s << raw[i].id << ',' << fmt(raw[i].time) << ',' << raw[i].event << ',' << r.cv.folds[i] + 1;
      for (const auto& m : r.cv.models) s << ',' << (m.failed ? "NA" : fmt(m.oof_risk[i]));
      s << '\n';
    }
    write_text(config.out / "oof_predictions.csv", s.str());
  }
  {
    std::ostringstream s;
    s << "feature,mean_abs_shap\n";
    for (const auto& f : r.shap) s << f.feature << ',' << fmt(f.value) << '\n';
    write_text(config.out / "shap_importance.csv", s.str());
  }
  if (r.importance) {
    std::ostringstream s;
    s << "feature,mean_drop,std_drop,completed,skipped\n";
    for (const auto& e : r.importance->entries) {
      s << e.feature << ',' << fmt(e.mean_drop) << ',' << fmt(e.std_drop) << ',' << e.completed << ',' << e.skipped << '\n';
    }
    write_text(config.out / "permutation_importance.csv", s.str());
  }
  {
    std::ostringstream s;
    s << "model,horizon,time,auc,cases,controls\n";
    for (const auto& m : r.cv.models) {
      if (m.failed) continue;
      for (std::size_t h = 0; h < config.horizons.size(); ++h) {
        for (const auto& p : m.auc[h].curve) {
          s << to_string(m.learner) << ',' << fmt(config.horizons[h]) << ',' << fmt(p.time) << ',' << fmt(p.auc) << ','
            << p.cases << ',' << p.controls << '\n';
        }
      }
    }
    write_text(config.out / "auc_curves.csv", s.str());
  }
  {
    std::ostringstream s;
    s << "model,bin,mean_predicted,observed,observed_se,count\n";
    for (const auto& m : r.cv.models) {
      if (m.failed) continue;
      for (std::size_t b = 0; b < m.calibration.bins.size(); ++b) {
        const auto& bin = m.calibration.bins[b];
        s << to_string(m.learner) << ',' << b + 1 << ',' << fmt(bin.mean_predicted) << ',' << fmt(bin.observed) << ','
          << fmt(bin.observed_se) << ',' << bin.count << '\n';
      }
    }
    write_text(config.out / "calibration.csv", s.str());
  }
  {
    std::ostringstream s;
    s << "model,threshold,net_benefit,treat_all,treat_none\n";
    for (const auto& m : r.cv.models) {
      if (m.failed) continue;
      for (const auto& p : m.dca) {
        s << to_string(m.learner) << ',' << fmt(p.threshold) << ',' << fmt(p.net_benefit) << ','
          << fmt(p.treat_all_benefit) << ',' << fmt(p.treat_none_benefit) << '\n';
      }
    }
    write_text(config.out / "dca.csv", s.str());
  }
  {
    std::ostringstream low;
    std::ostringstream high;
    r.low.km.write_csv(low);
    r.high.km.write_csv(high);
    write_text(config.out / "km_low.csv", low.str());
    write_text(config.out / "km_high.csv", high.str());
  }

  // plots
  const std::vector<double> all_times = raw.times();
  const double x_max = *std::max_element(all_times.begin(), all_times.end());
  write_text(config.out / "km.svg", svg::km_plot(r.low.km, r.high.km, r.log_rank.p_value, x_max));

  std::vector<svg::Series> auc_series;
  for (const auto& m : r.cv.models) {
    if (m.failed) continue;
    svg::Series s{to_string(m.learner), "auc-curve", {}, {}};
    for (const auto& p : m.auc.back().curve) {
      s.x.push_back(p.time);
      s.y.push_back(p.auc);
    }
    auc_series.push_back(std::move(s));
  }
  write_text(config.out / "auc.svg",
             svg::line_plot({"Time-dependent AUC (out of fold)", "Months", "AUC(t)", 0.0, config.horizons.back(), 0.0, 1.0},
                            auc_series));

  const ModelEvaluation* chosen = nullptr;
  for (const auto& m : r.cv.models) {
    if (m.learner == r.chosen) chosen = &m;
  }
  svg::Series ideal{"Ideal", "reference", {0.0, 1.0}, {0.0, 1.0}, true};
  svg::Series cal{to_string(r.chosen), "calibration-curve", {}, {}};
  for (const auto& b : chosen->calibration.bins) {
    cal.x.push_back(b.mean_predicted);
    cal.y.push_back(b.observed);
  }
  write_text(config.out / "calibration.svg",
             svg::line_plot({"Calibration at " + horizon_key(config.horizons.back()) + " months", "Predicted risk",
                             "Observed risk (1 - KM)", 0.0, 1.0, 0.0, 1.0},
                            {cal, ideal}));

  svg::Series model_nb{to_string(r.chosen), "model-curve", {}, {}};
  svg::Series treat_all{"Treat all", "treat-all", {}, {}, true};
  svg::Series treat_none{"Treat none", "treat-none", {}, {}, true};
  double lo = 0.0;
  double hi = 0.0;
  for (const auto& p : chosen->dca) {
    model_nb.x.push_back(p.threshold);
    model_nb.y.push_back(p.net_benefit);
    treat_all.x.push_back(p.threshold);
    treat_all.y.push_back(p.treat_all_benefit);
    treat_none.x.push_back(p.threshold);
    treat_none.y.push_back(p.treat_none_benefit);
    lo = std::min({lo, p.net_benefit, p.treat_all_benefit});
    hi = std::max({hi, p.net_benefit, p.treat_all_benefit});
  }
  const auto thresholds = config.thresholds();
  write_text(config.out / "dca.svg",
             svg::line_plot({"Decision curve at " + horizon_key(config.horizons.back()) + " months", "Threshold probability",
                             "Net benefit", thresholds.front(), thresholds.back(), std::max(lo, -0.1), std::max(hi, 0.05)},
                            {model_nb, treat_all, treat_none}));
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, bool write) {
  config.validate();
  const Cohort raw = load_pipeline_cohort(config);
  std::optional<LongitudinalCohort> longitudinal;
  if (config.longitudinal) longitudinal = align_longitudinal(load_longitudinal(*config.longitudinal), raw);
  const bool wants_temporal =
      std::find(config.learners.begin(), config.learners.end(), Learner::Temporal) != config.learners.end();
  if (wants_temporal && !longitudinal) {
    throw Error(ErrorKind::Pipeline, "temporal learner requested but no longitudinal file configured");
  }

  PipelineResult r;
  r.cv = cross_validate(config, raw, longitudinal ? &*longitudinal : nullptr);

  const ModelEvaluation* best = nullptr;
  for (const auto& m : r.cv.models) {
    if (m.failed || m.learner == Learner::Temporal) continue;
    if (!best || m.concordance.c_index > best->concordance.c_index) best = &m;
  }
  if (!best) throw Error(ErrorKind::Pipeline, "every tabular learner failed during cross-validation");
  r.chosen = best->learner;

  // Importance on a full-data refit of the chosen learner.
  const Preprocessing pre = fit_preprocessing(raw, config);
  r.full_screen = pre.screen;
  r.full_vif = pre.vif;
  const Cohort full = pre.apply(raw);
  json chosen_model;
  auto model = fit_learner(r.chosen, config, full, learner_seed(config, r.chosen, config.cv_folds), &chosen_model);
  std::string shap_note;
  if (config.shap) {
    if (full.n_features() <= kMaxExactShapleyFeatures) {
      r.shap = mean_abs_shap(*model, full, feature_medians(full), config.threads);
    } else {
      shap_note = "skipped: more than " + std::to_string(kMaxExactShapleyFeatures) + " features";
    }
  }
  if (config.importance_repeats > 0) {
    r.importance = permutation_importance(*model, full, config.importance_repeats, mix_seed(config.seed, 0x1A9));
  }

  r.strata = stratify_by_median(best->oof_risk);
  r.low = summarize_group(raw, r.strata.low);
  r.high = summarize_group(raw, r.strata.high);
  auto outcomes = [&](const std::vector<std::size_t>& rows, std::vector<double>& t, std::vector<int>& e) {
    for (std::size_t i : rows) {
      t.push_back(raw[i].time);
      e.push_back(raw[i].event);
    }
  };
  std::vector<double> low_t, high_t;
  std::vector<int> low_e, high_e;
  outcomes(r.strata.low, low_t, low_e);
  outcomes(r.strata.high, high_t, high_e);
  const SurvivalSample low_s{low_t, low_e};
  const SurvivalSample high_s{high_t, high_e};
  r.log_rank = log_rank(low_s, high_s);

  json& rep = r.report;
  const json cfg = config_to_json(config);
  rep["schema_version"] = kReportSchemaVersion;
  rep["provenance"] = {{"config_hash", hash_json(cfg)}, {"seed", config.seed}, {"version", kVersion}, {"config", cfg}};
  const std::vector<int> ev = raw.events();
  rep["cohort"] = {{"n", raw.size()},
                   {"events", raw.event_count()},
                   {"censored_fraction", 1.0 - static_cast<double>(raw.event_count()) / static_cast<double>(raw.size())},
                   {"features", raw.feature_names()}};
  json folds = json::array();
  for (const auto& fo : r.cv.fold_outcomes) {
    json hashes = json::object();
    for (const auto& [l, f] : fo.fitted) hashes[to_string(l)] = f.model_hash;
    json failures = json::object();
    for (const auto& [l, why] : fo.failures) failures[to_string(l)] = why;
    const auto size = static_cast<std::size_t>(std::count(r.cv.folds.begin(), r.cv.folds.end(), fo.fold));
    folds.push_back({{"fold", fo.fold + 1},
                     {"test_size", size},
                     {"features", fo.features},
                     {"model_hashes", hashes},
                     {"failures", failures}});
  }
  rep["cross_validation"] = {{"folds", config.cv_folds}, {"stratified_by", "event"}, {"per_fold", folds}};
  json models = json::array();
  json table = json::array();
  for (const auto& m : r.cv.models) {
    models.push_back(model_json(m, config));
    json row{{"model", to_string(m.learner)}};
    if (m.failed) {
      row["status"] = "failed";
    } else {
      row["c_index"] = m.concordance.c_index;
      for (std::size_t h = 0; h < config.horizons.size(); ++h) {
        row["auc@" + horizon_key(config.horizons[h])] = finite_or_null(m.auc[h].mean_auc);
        row["brier@" + horizon_key(config.horizons[h])] = finite_or_null(m.brier[h]);
      }
    }
    table.push_back(row);
  }
  rep["models"] = models;
  rep["performance_table"] = table;
  rep["chosen_model"] = to_string(r.chosen);
  json removed = json::array();
  for (const auto& v : r.full_vif.removed) removed.push_back({{"feature", v.feature}, {"vif", finite_or_null(v.vif)}});
  rep["feature_selection"] = {{"screen", screen_json(r.full_screen)},
                              {"retained", r.full_screen.retained},
                              {"vif_removed", removed},
                              {"final_features", pre.features},
                              {"dropped_constant", pre.zscore.dropped_constant}};
  json importance = json::object();
  json shap = json::array();
  for (const auto& f : r.shap) shap.push_back({{"feature", f.feature}, {"mean_abs_shap", f.value}});
  importance["model"] = to_string(r.chosen);
  importance["background"] = "feature medians";
  importance["mean_abs_shap"] = shap;
  if (!shap_note.empty()) importance["shap_note"] = shap_note;
  if (r.importance) {
    json entries = json::array();
    for (const auto& e : r.importance->entries) {
      entries.push_back({{"feature", e.feature},
                         {"mean_drop", e.mean_drop},
                         {"std_drop", e.std_drop},
                         {"completed", e.completed},
                         {"skipped", e.skipped}});
    }
    importance["permutation"] = {{"metric", "c_index"},
                                 {"baseline", r.importance->baseline},
                                 {"repeats", r.importance->repeats},
                                 {"entries", entries}};
  }
  rep["importance"] = importance;
  rep["chosen_model_hash"] = hash_json(chosen_model);
  rep["stratification"] = {{"model", to_string(r.chosen)},
                           {"scores", "out of fold"},
                           {"cutoff", r.strata.cutoff},
                           {"low", group_json(r.low)},
                           {"high", group_json(r.high)},
                           {"log_rank", {{"chi_square", r.log_rank.chi_square}, {"p_value", r.log_rank.p_value}}}};
  json warnings = json::array();
  for (const auto& w : full.warnings()) warnings.push_back(w);
  rep["warnings"] = warnings;

  if (write) {
    write_outputs(r, config, raw);
    write_text(config.out / "chosen_model.json", chosen_model.dump(2) + "\n");
  }
  return r;
}

}  // namespace survrec
