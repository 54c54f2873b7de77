#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "survrec/data_model.hpp"

namespace survrec {

struct Snapshot {
  int index = 1;  // follow-up index, 1-based
  std::vector<double> features;
};

struct SnapshotSequence {
  std::string id;
  std::vector<Snapshot> snapshots;  // ascending index
  double time = 0.0;
  int event = 0;

  std::size_t length() const { return snapshots.size(); }
  void validate() const;
};

struct LongitudinalCohort {
  std::vector<std::string> feature_names;
  std::vector<SnapshotSequence> subjects;

  void validate() const;
  std::vector<double> times() const;
  std::vector<int> events() const;
  LongitudinalCohort subset(std::span<const std::size_t> rows) const;
  // One record per subject holding the final snapshot.
  Cohort last_snapshot_cohort() const;
};

// Columns id, snapshot_index, time, event, then features. Rows of one subject
// must share time and event.
LongitudinalCohort read_longitudinal(std::istream& in);
LongitudinalCohort load_longitudinal(const std::filesystem::path& path);
void write_longitudinal(std::ostream& out, const LongitudinalCohort& cohort);

struct LongitudinalSpec {
  SyntheticSpec base;
  int max_snapshots = 4;
  double drift = 0.25;  // per-snapshot shift along beta, scaled by the true score
  double noise = 0.1;

  void validate() const;
};

void to_json(nlohmann::json& j, const LongitudinalSpec& spec);
void from_json(const nlohmann::json& j, LongitudinalSpec& spec);

struct SyntheticLongitudinal {
  LongitudinalCohort cohort;
  std::vector<double> true_scores;
  double censoring_rate = 0.0;
};

SyntheticLongitudinal generate_longitudinal(const LongitudinalSpec& spec);

// PE[t, 2k] = sin(t / 10000^(2k/d)), PE[t, 2k+1] = cos(...), t from 0.
Eigen::MatrixXd sinusoidal_pe(std::size_t T, std::size_t d);

struct TemporalOptions {
  std::size_t model_dim = 0;  // 0: smallest even width holding the features
  std::size_t hidden = 8;
  double learning_rate = 0.05;
  int epochs = 200;
  std::uint64_t seed = 1;
  bool use_pe = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const TemporalOptions& o);
void from_json(const nlohmann::json& j, TemporalOptions& o);

struct AttentionOutput {
  Eigen::MatrixXd z;          // T x d contextual embeddings
  Eigen::MatrixXd attention;  // T x T, rows sum to 1
};

struct TemporalParameters {
  Eigen::MatrixXd wq, wk, wv;  // d x d
  Eigen::MatrixXd w1;          // h x d
  Eigen::VectorXd b1;          // h
  Eigen::VectorXd w2;          // h
  double b2 = 0.0;

  std::size_t size() const;
  // Flat view in the order wq, wk, wv, w1, b1, w2, b2 (matrices column-major).
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  static TemporalParameters zeros(std::size_t d, std::size_t h);
};

class TemporalModel {
 public:
  TemporalModel(std::size_t n_features, TemporalParameters params, bool use_pe);

  std::size_t n_features() const { return n_features_; }
  std::size_t model_dim() const { return static_cast<std::size_t>(params_.wq.rows()); }
  std::size_t hidden() const { return static_cast<std::size_t>(params_.w1.rows()); }
  bool use_pe() const { return use_pe_; }
  const TemporalParameters& parameters() const { return params_; }
  TemporalParameters& parameters() { return params_; }

  // Padded snapshot features plus PE (when enabled), T x d.
  Eigen::MatrixXd inputs(const SnapshotSequence& seq) const;
  AttentionOutput attend(const Eigen::MatrixXd& inputs) const;
  double risk(const SnapshotSequence& seq) const;

  // Gradient of the scalar output with respect to every parameter, scaled by
  // `upstream` and added into `grad`.
  void accumulate_gradient(const SnapshotSequence& seq, double upstream, TemporalParameters& grad) const;

  std::vector<double> training_loss_trace;

  nlohmann::json to_json() const;
  static TemporalModel from_json(const nlohmann::json& j);

 private:
  std::size_t n_features_;
  TemporalParameters params_;
  bool use_pe_;
};

AttentionOutput self_attention(const Eigen::MatrixXd& inputs, const TemporalModel& model);
double temporal_risk(const SnapshotSequence& seq, const TemporalModel& model);

// Negative Breslow partial log-likelihood of the model scores divided by the
// number of events.
double temporal_loss(const TemporalModel& model, std::span<const SnapshotSequence> subjects);
TemporalParameters temporal_loss_gradient(const TemporalModel& model, std::span<const SnapshotSequence> subjects);

TemporalModel init_temporal(std::size_t n_features, const TemporalOptions& options);
TemporalModel train_temporal(std::span<const SnapshotSequence> subjects, const TemporalOptions& options);

}  // namespace survrec
