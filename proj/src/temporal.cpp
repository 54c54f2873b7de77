#include "survrec/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "detail/csv.hpp"
#include "survrec/boosting.hpp"
#include "survrec/error.hpp"
#include "survrec/rng.hpp"
#include "detail/json_keys.hpp"

namespace survrec {

void SnapshotSequence::validate() const {
  if (snapshots.empty()) throw Error(ErrorKind::Shape, "subject " + id + " has no snapshots");
  const std::size_t p = snapshots.front().features.size();
  for (std::size_t t = 0; t < snapshots.size(); ++t) {
    if (snapshots[t].features.size() != p) {
      throw Error(ErrorKind::Shape, "subject " + id + ": snapshot feature dimension varies");
    }
    if (t > 0 && snapshots[t].index <= snapshots[t - 1].index) {
      throw Error(ErrorKind::Shape, "subject " + id + ": snapshot indices must increase");
    }
  }
  if (!(time > 0.0)) throw Error(ErrorKind::Parameter, "subject " + id + ": time must be > 0");
  if (event != 0 && event != 1) throw Error(ErrorKind::Parameter, "subject " + id + ": event must be 0 or 1");
}

void LongitudinalCohort::validate() const {
  if (subjects.empty()) throw Error(ErrorKind::EmptyCohort, "longitudinal cohort has no subjects");
  for (const auto& s : subjects) {
    s.validate();
    if (s.snapshots.front().features.size() != feature_names.size()) {
      throw Error(ErrorKind::Shape, "subject " + s.id + ": feature count does not match header");
    }
  }
}

std::vector<double> LongitudinalCohort::times() const {
  std::vector<double> out;
  for (const auto& s : subjects) out.push_back(s.time);
  return out;
}

std::vector<int> LongitudinalCohort::events() const {
  std::vector<int> out;
  for (const auto& s : subjects) out.push_back(s.event);
  return out;
}

LongitudinalCohort LongitudinalCohort::subset(std::span<const std::size_t> rows) const {
  LongitudinalCohort out{feature_names, {}};
  for (std::size_t r : rows) out.subjects.push_back(subjects.at(r));
  return out;
}

Cohort LongitudinalCohort::last_snapshot_cohort() const {
  std::vector<SurvivalRecord> records;
  for (const auto& s : subjects) records.push_back({s.id, s.time, s.event, s.snapshots.back().features});
  return Cohort(feature_names, std::move(records));
}

LongitudinalCohort read_longitudinal(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::EmptyCohort, "longitudinal file is empty");
  std::vector<std::string> header = csv::split_csv_line(line);
  for (auto& h : header) h = csv::trim(h);
  const std::vector<std::string> required{"id", "snapshot_index", "time", "event"};
  if (header.size() <= required.size() || !std::equal(required.begin(), required.end(), header.begin())) {
    throw Error(ErrorKind::Schema, "longitudinal header must start with id,snapshot_index,time,event");
  }
  LongitudinalCohort cohort;
  cohort.feature_names.assign(header.begin() + 4, header.end());

  std::map<std::string, std::size_t> position;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (csv::trim(line).empty()) continue;
    ++row;
    std::vector<std::string> cells = csv::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(row, "*", "expected " + std::to_string(header.size()) + " fields");
    }
    for (auto& c : cells) c = csv::trim(c);
    const auto index = csv::parse_double(cells[1]);
    if (!index || *index != std::floor(*index) || *index < 1) {
      throw ParseError(row, "snapshot_index", "expected a positive integer");
    }
    const auto time = csv::parse_double(cells[2]);
    if (!time || !(*time > 0.0)) throw ParseError(row, "time", "time must be a number > 0");
    if (cells[3] != "0" && cells[3] != "1") throw ParseError(row, "event", "event must be 0 or 1");
    const int event = cells[3] == "1" ? 1 : 0;

    Snapshot snap{static_cast<int>(*index), {}};
    for (std::size_t c = 4; c < cells.size(); ++c) {
      const auto v = csv::parse_double(cells[c]);
      if (!v) throw ParseError(row, header[c], "non-numeric or missing value");
      snap.features.push_back(*v);
    }
    auto [it, inserted] = position.try_emplace(cells[0], cohort.subjects.size());
    if (inserted) {
      cohort.subjects.push_back({cells[0], {}, *time, event});
    } else {
      const auto& s = cohort.subjects[it->second];
      if (s.time != *time || s.event != event) {
        throw ParseError(row, "time", "outcome differs between snapshots of subject " + cells[0]);
      }
    }
    cohort.subjects[it->second].snapshots.push_back(std::move(snap));
  }
  if (cohort.subjects.empty()) throw Error(ErrorKind::EmptyCohort, "longitudinal file has no rows");
  for (auto& s : cohort.subjects) {
    std::stable_sort(s.snapshots.begin(), s.snapshots.end(),
                     [](const Snapshot& a, const Snapshot& b) { return a.index < b.index; });
  }
  cohort.validate();
  return cohort;
}

LongitudinalCohort load_longitudinal(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return read_longitudinal(in);
}

void write_longitudinal(std::ostream& out, const LongitudinalCohort& cohort) {
  out << "id,snapshot_index,time,event";
  for (const auto& name : cohort.feature_names) out << ',' << name;
  out << '\n';
  for (const auto& s : cohort.subjects) {
    for (const auto& snap : s.snapshots) {
      out << s.id << ',' << snap.index << ',' << csv::format_double(s.time) << ',' << s.event;
      for (double v : snap.features) out << ',' << csv::format_double(v);
      out << '\n';
    }
  }
}

// --- synthetic ------------------------------------------------------------

void LongitudinalSpec::validate() const {
  base.validate();
  if (max_snapshots < 1) throw Error(ErrorKind::Parameter, "max_snapshots must be >= 1");
  if (!std::isfinite(drift)) throw Error(ErrorKind::Parameter, "drift must be finite");
  if (!(noise >= 0.0)) throw Error(ErrorKind::Parameter, "noise must be >= 0");
}

void to_json(nlohmann::json& j, const LongitudinalSpec& spec) {
  j = spec.base;
  j["max_snapshots"] = spec.max_snapshots;
  j["drift"] = spec.drift;
  j["noise"] = spec.noise;
}

void from_json(const nlohmann::json& j, LongitudinalSpec& spec) {
  nlohmann::json base = j;
  for (const char* key : {"max_snapshots", "drift", "noise"}) base.erase(key);
  spec.base = base.get<SyntheticSpec>();
  spec.max_snapshots = j.value("max_snapshots", spec.max_snapshots);
  spec.drift = j.value("drift", spec.drift);
  spec.noise = j.value("noise", spec.noise);
}

SyntheticLongitudinal generate_longitudinal(const LongitudinalSpec& spec) {
  spec.validate();
  SyntheticCohort base = generate_synthetic(spec.base);
  const auto& beta = spec.base.true_coefficients;
  double norm = 0.0;
  for (double b : beta) norm += b * b;
  norm = std::sqrt(norm);

  Rng rng(mix_seed(spec.base.seed, 1));
  SyntheticLongitudinal out;
  out.cohort.feature_names = base.cohort.feature_names();
  out.true_scores = base.true_scores;
  out.censoring_rate = base.censoring_rate;
  for (std::size_t i = 0; i < base.cohort.size(); ++i) {
    const auto& rec = base.cohort[i];
    const int T = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_snapshots)));
    SnapshotSequence seq{rec.id, {}, rec.time, rec.event};
    for (int t = 1; t <= T; ++t) {
      Snapshot snap{t, rec.features};
      for (std::size_t k = 0; k < snap.features.size(); ++k) {
        const double direction = norm > 0.0 ? beta[k] / norm : 0.0;
        snap.features[k] += spec.drift * (t - 1) * base.true_scores[i] * direction + spec.noise * rng.normal();
      }
      seq.snapshots.push_back(std::move(snap));
    }
    out.cohort.subjects.push_back(std::move(seq));
  }
  return out;
}

// --- model ----------------------------------------------------------------

Eigen::MatrixXd sinusoidal_pe(std::size_t T, std::size_t d) {
  if (d == 0 || d % 2 != 0) throw Error(ErrorKind::Parameter, "positional encoding width must be even");
  if (T == 0) throw Error(ErrorKind::Parameter, "positional encoding needs T >= 1");
  Eigen::MatrixXd pe(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(d));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; 2 * k < d; ++k) {
      const double angle =
          static_cast<double>(t) / std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(d));
      pe(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(2 * k)) = std::sin(angle);
      pe(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(2 * k + 1)) = std::cos(angle);
    }
  }
  return pe;
}

void TemporalOptions::validate() const {
  if (model_dim % 2 != 0) throw Error(ErrorKind::Parameter, "model_dim must be even");
  if (hidden == 0) throw Error(ErrorKind::Parameter, "hidden width must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::Parameter, "learning_rate must be > 0");
  if (epochs < 0) throw Error(ErrorKind::Parameter, "epochs must be >= 0");
}

void to_json(nlohmann::json& j, const TemporalOptions& o) {
  j = {{"model_dim", o.model_dim}, {"hidden", o.hidden}, {"learning_rate", o.learning_rate},
       {"epochs", o.epochs},       {"seed", o.seed},     {"use_pe", o.use_pe}};
}

void from_json(const nlohmann::json& j, TemporalOptions& o) {
  detail::reject_unknown_keys(j, {"model_dim", "hidden", "learning_rate", "epochs", "seed", "use_pe"},
                              "temporal options");
  o.model_dim = j.value("model_dim", o.model_dim);
  o.hidden = j.value("hidden", o.hidden);
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.epochs = j.value("epochs", o.epochs);
  o.seed = j.value("seed", o.seed);
  o.use_pe = j.value("use_pe", o.use_pe);
  o.validate();
}

std::size_t TemporalParameters::size() const {
  return static_cast<std::size_t>(wq.size() + wk.size() + wv.size() + w1.size() + b1.size() + w2.size() + 1);
}

Eigen::VectorXd TemporalParameters::flatten() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(size()));
  Eigen::Index at = 0;
  auto put = [&](const auto& m) {
    flat.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    at += m.size();
  };
  put(wq);
  put(wk);
  put(wv);
  put(w1);
  put(b1);
  put(w2);
  flat(at) = b2;
  return flat;
}

void TemporalParameters::assign(const Eigen::VectorXd& flat) {
  if (flat.size() != static_cast<Eigen::Index>(size())) throw Error(ErrorKind::Shape, "parameter vector size mismatch");
  Eigen::Index at = 0;
  auto take = [&](auto& m) {
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = flat.segment(at, m.size());
    at += m.size();
  };
  take(wq);
  take(wk);
  take(wv);
  take(w1);
  take(b1);
  take(w2);
  b2 = flat(at);
}

TemporalParameters TemporalParameters::zeros(std::size_t d, std::size_t h) {
  const auto D = static_cast<Eigen::Index>(d);
  const auto H = static_cast<Eigen::Index>(h);
  return {Eigen::MatrixXd::Zero(D, D), Eigen::MatrixXd::Zero(D, D), Eigen::MatrixXd::Zero(D, D),
          Eigen::MatrixXd::Zero(H, D), Eigen::VectorXd::Zero(H),    Eigen::VectorXd::Zero(H),
          0.0};
}

TemporalModel::TemporalModel(std::size_t n_features, TemporalParameters params, bool use_pe)
    : n_features_(n_features), params_(std::move(params)), use_pe_(use_pe) {
  const Eigen::Index d = params_.wq.rows();
  const Eigen::Index h = params_.w1.rows();
  if (d == 0 || d % 2 != 0) throw Error(ErrorKind::Parameter, "model dimension must be even and positive");
  if (static_cast<std::size_t>(d) < n_features_) throw Error(ErrorKind::Shape, "model dimension below feature count");
  auto square = [d](const Eigen::MatrixXd& m) { return m.rows() == d && m.cols() == d; };
  if (!square(params_.wq) || !square(params_.wk) || !square(params_.wv) || params_.w1.cols() != d ||
      params_.b1.size() != h || params_.w2.size() != h) {
    throw Error(ErrorKind::Shape, "temporal parameter shapes are inconsistent");
  }
  if (!params_.flatten().allFinite()) throw Error(ErrorKind::NumericInput, "temporal parameters must be finite");
}

Eigen::MatrixXd TemporalModel::inputs(const SnapshotSequence& seq) const {
  seq.validate();
  if (seq.snapshots.front().features.size() != n_features_) {
    throw Error(ErrorKind::Shape, "subject " + seq.id + " has " +
                                      std::to_string(seq.snapshots.front().features.size()) +
                                      " features, model expects " + std::to_string(n_features_));
  }
  const auto T = static_cast<Eigen::Index>(seq.length());
  const Eigen::Index d = params_.wq.rows();
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto& f = seq.snapshots[static_cast<std::size_t>(t)].features;
    for (std::size_t k = 0; k < f.size(); ++k) x(t, static_cast<Eigen::Index>(k)) = f[k];
  }
  if (use_pe_) x += sinusoidal_pe(seq.length(), static_cast<std::size_t>(d));
  return x;
}

namespace {

Eigen::RowVectorXd project(const Eigen::MatrixXd& x, Eigen::Index row, const Eigen::MatrixXd& w) {
  Eigen::RowVectorXd out(w.cols());
  for (Eigen::Index c = 0; c < w.cols(); ++c) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < w.rows(); ++k) s += x(row, k) * w(k, c);
    out(c) = s;
  }
  return out;
}

// Row visiting order by input content, so sums over keys do not depend on
// where equal rows sit in the sequence.
std::vector<Eigen::Index> canonical_rows(const Eigen::MatrixXd& x) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      if (x(a, k) != x(b, k)) return x(a, k) < x(b, k);
    }
    return false;
  });
  return order;
}

struct QueryPass {
  Eigen::RowVectorXd q;
  Eigen::MatrixXd k, v;
  Eigen::VectorXd weights;  // attention of the query row over all rows
  Eigen::RowVectorXd z;
};

struct Projections {
  Eigen::MatrixXd k, v;
  std::vector<Eigen::Index> order;
};

Projections project_all(const Eigen::MatrixXd& x, const TemporalParameters& p) {
  Projections out{Eigen::MatrixXd(x.rows(), x.cols()), Eigen::MatrixXd(x.rows(), x.cols()), canonical_rows(x)};
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    out.k.row(t) = project(x, t, p.wk);
    out.v.row(t) = project(x, t, p.wv);
  }
  return out;
}

QueryPass attend_row(const Eigen::MatrixXd& x, Eigen::Index row, const Projections& pr, const TemporalParameters& p) {
  QueryPass out;
  out.q = project(x, row, p.wq);
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  const Eigen::Index T = x.rows();
  Eigen::VectorXd logits(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) s += out.q(c) * pr.k(t, c);
    logits(t) = s * scale;
  }
  const double top = logits.maxCoeff();
  out.weights.resize(T);
  double total = 0.0;
  for (Eigen::Index t : pr.order) {
    out.weights(t) = std::exp(logits(t) - top);
    total += out.weights(t);
  }
  out.weights /= total;
  out.z = Eigen::RowVectorXd::Zero(x.cols());
  for (Eigen::Index t : pr.order) out.z += out.weights(t) * pr.v.row(t);
  return out;
}

void check_finite(const Eigen::MatrixXd& x) {
  if (!x.allFinite()) throw Error(ErrorKind::NumericInput, "attention input contains non-finite values");
}

}  // namespace

AttentionOutput TemporalModel::attend(const Eigen::MatrixXd& x) const {
  if (x.rows() < 1) throw Error(ErrorKind::Shape, "attention needs at least one row");
  if (x.cols() != params_.wq.rows()) throw Error(ErrorKind::Shape, "attention input width mismatch");
  check_finite(x);
  const Projections pr = project_all(x, params_);
  AttentionOutput out{Eigen::MatrixXd(x.rows(), x.cols()), Eigen::MatrixXd(x.rows(), x.rows())};
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    QueryPass pass = attend_row(x, t, pr, params_);
    out.z.row(t) = pass.z;
    out.attention.row(t) = pass.weights.transpose();
  }
  return out;
}

double TemporalModel::risk(const SnapshotSequence& seq) const {
  const Eigen::MatrixXd x = inputs(seq);
  check_finite(x);
  const Projections pr = project_all(x, params_);
  const QueryPass pass = attend_row(x, x.rows() - 1, pr, params_);
  const Eigen::VectorXd hidden = (params_.w1 * pass.z.transpose() + params_.b1).array().tanh();
  return params_.w2.dot(hidden) + params_.b2;
}

void TemporalModel::accumulate_gradient(const SnapshotSequence& seq, double upstream, TemporalParameters& grad) const {
  const Eigen::MatrixXd x = inputs(seq);
  check_finite(x);
  const Projections pr = project_all(x, params_);
  const Eigen::Index last = x.rows() - 1;
  const QueryPass pass = attend_row(x, last, pr, params_);
  const Eigen::VectorXd z = pass.z.transpose();
  const Eigen::VectorXd hidden = (params_.w1 * z + params_.b1).array().tanh();

  grad.b2 += upstream;
  grad.w2 += upstream * hidden;
  const Eigen::VectorXd dpre = upstream * params_.w2.cwiseProduct((1.0 - hidden.array().square()).matrix());
  grad.w1 += dpre * z.transpose();
  grad.b1 += dpre;
  const Eigen::RowVectorXd dz = (params_.w1.transpose() * dpre).transpose();

  const Eigen::Index T = x.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  Eigen::VectorXd da(T);
  for (Eigen::Index t = 0; t < T; ++t) da(t) = dz.dot(pr.v.row(t));
  const double mean_da = pass.weights.dot(da);
  const Eigen::VectorXd dlogit = pass.weights.cwiseProduct((da.array() - mean_da).matrix()) * scale;

  Eigen::RowVectorXd dq = Eigen::RowVectorXd::Zero(x.cols());
  for (Eigen::Index t : pr.order) {
    dq += dlogit(t) * pr.k.row(t);
    grad.wk += x.row(t).transpose() * (dlogit(t) * pass.q);
    grad.wv += x.row(t).transpose() * (pass.weights(t) * dz);
  }
  grad.wq += x.row(last).transpose() * dq;
}

nlohmann::json TemporalModel::to_json() const {
  auto matrix = [](const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
      rows.push_back(row);
    }
    return rows;
  };
  auto vector = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"kind", "temporal"},
          {"n_features", n_features_},
          {"use_pe", use_pe_},
          {"wq", matrix(params_.wq)},
          {"wk", matrix(params_.wk)},
          {"wv", matrix(params_.wv)},
          {"w1", matrix(params_.w1)},
          {"b1", vector(params_.b1)},
          {"w2", vector(params_.w2)},
          {"b2", params_.b2},
          {"training_loss_trace", training_loss_trace}};
}

TemporalModel TemporalModel::from_json(const nlohmann::json& j) {
  auto matrix = [](const nlohmann::json& rows) {
    const auto r = static_cast<Eigen::Index>(rows.size());
    const auto c = r ? static_cast<Eigen::Index>(rows[0].size()) : 0;
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != c) {
        throw Error(ErrorKind::Shape, "ragged matrix in temporal model");
      }
      for (Eigen::Index k = 0; k < c; ++k) m(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
    return m;
  };
  auto vector = [](const nlohmann::json& v) {
    const auto values = v.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
  };
  TemporalParameters p{matrix(j.at("wq")), matrix(j.at("wk")), matrix(j.at("wv")), matrix(j.at("w1")),
                       vector(j.at("b1")), vector(j.at("w2")), j.at("b2").get<double>()};
  TemporalModel model(j.at("n_features").get<std::size_t>(), std::move(p), j.at("use_pe").get<bool>());
  model.training_loss_trace = j.value("training_loss_trace", std::vector<double>{});
  return model;
}

AttentionOutput self_attention(const Eigen::MatrixXd& inputs, const TemporalModel& model) {
  return model.attend(inputs);
}

double temporal_risk(const SnapshotSequence& seq, const TemporalModel& model) { return model.risk(seq); }

namespace {

// Subjects in (time, event, id) order so that input order never matters.
std::vector<std::size_t> subject_order(std::span<const SnapshotSequence> subjects) {
  std::vector<std::size_t> order(subjects.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = subjects[a];
    const auto& y = subjects[b];
    if (x.time != y.time) return x.time < y.time;
    if (x.event != y.event) return x.event > y.event;
    return x.id < y.id;
  });
  return order;
}

struct Batch {
  std::vector<std::size_t> order;
  std::vector<double> times;
  std::vector<int> events;
  double n_events = 0.0;
};

Batch make_batch(std::span<const SnapshotSequence> subjects) {
  if (subjects.size() < 2) throw Error(ErrorKind::Parameter, "temporal training needs >= 2 subjects");
  Batch b;
  b.order = subject_order(subjects);
  for (std::size_t i : b.order) {
    b.times.push_back(subjects[i].time);
    b.events.push_back(subjects[i].event);
    b.n_events += subjects[i].event;
  }
  if (b.n_events == 0.0) throw Error(ErrorKind::Parameter, "temporal training needs >= 1 event");
  return b;
}

std::vector<double> batch_scores(const TemporalModel& model, std::span<const SnapshotSequence> subjects,
                                 const Batch& b) {
  std::vector<double> scores;
  scores.reserve(b.order.size());
  for (std::size_t i : b.order) scores.push_back(model.risk(subjects[i]));
  return scores;
}

}  // namespace

double temporal_loss(const TemporalModel& model, std::span<const SnapshotSequence> subjects) {
  const Batch b = make_batch(subjects);
  return cox_negative_loglik(batch_scores(model, subjects, b), b.times, b.events) / b.n_events;
}

TemporalParameters temporal_loss_gradient(const TemporalModel& model, std::span<const SnapshotSequence> subjects) {
  const Batch b = make_batch(subjects);
  const CoxGradients g = cox_gradients(batch_scores(model, subjects, b), b.times, b.events);
  TemporalParameters grad = TemporalParameters::zeros(model.model_dim(), model.hidden());
  for (std::size_t k = 0; k < b.order.size(); ++k) {
    model.accumulate_gradient(subjects[b.order[k]], g.gradient[k] / b.n_events, grad);
  }
  return grad;
}

TemporalModel init_temporal(std::size_t n_features, const TemporalOptions& options) {
  options.validate();
  std::size_t d = options.model_dim;
  if (d == 0) d = n_features + n_features % 2;
  if (d == 0) d = 2;
  if (d < n_features) throw Error(ErrorKind::Parameter, "model_dim is smaller than the feature count");
  TemporalParameters p = TemporalParameters::zeros(d, options.hidden);
  Rng rng(options.seed);
  Eigen::VectorXd flat(static_cast<Eigen::Index>(p.size()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = rng.uniform(-0.1, 0.1);
  p.assign(flat);
  return TemporalModel(n_features, std::move(p), options.use_pe);
}

TemporalModel train_temporal(std::span<const SnapshotSequence> subjects, const TemporalOptions& options) {
  if (subjects.empty()) throw Error(ErrorKind::Parameter, "temporal training needs >= 2 subjects");
  TemporalModel model = init_temporal(subjects.front().snapshots.at(0).features.size(), options);
  std::vector<double> trace;
  int rising = 0;
  for (int epoch = 0; epoch <= options.epochs; ++epoch) {
    const double loss = temporal_loss(model, subjects);
    if (!std::isfinite(loss)) {
      trace.push_back(loss);
      throw TrainingError("temporal loss became non-finite at epoch " + std::to_string(epoch), trace);
    }
    if (!trace.empty() && loss > trace.back()) {
      if (++rising >= 10) {
        trace.push_back(loss);
        throw TrainingError("temporal loss increased for 10 consecutive epochs", trace);
      }
    } else {
      rising = 0;
    }
    trace.push_back(loss);
    if (epoch == options.epochs) break;
    const TemporalParameters grad = temporal_loss_gradient(model, subjects);
    Eigen::VectorXd flat = model.parameters().flatten() - options.learning_rate * grad.flatten();
    model.parameters().assign(flat);
  }
  model.training_loss_trace = std::move(trace);
  return model;
}

}  // namespace survrec
