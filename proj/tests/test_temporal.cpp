#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "survrec/error.hpp"
#include "survrec/temporal.hpp"

using namespace survrec;

namespace {

SnapshotSequence random_sequence(std::mt19937_64& rng, std::size_t T, std::size_t p, const std::string& id) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(1, 30);
  SnapshotSequence s;
  s.id = id;
  s.time = u(rng);
  s.event = z(rng) > -0.5 ? 1 : 0;
  for (std::size_t t = 0; t < T; ++t) {
    Snapshot snap;
    snap.index = static_cast<int>(t + 1);
    for (std::size_t j = 0; j < p; ++j) snap.features.push_back(z(rng));
    s.snapshots.push_back(snap);
  }
  return s;
}

TemporalModel random_model(std::mt19937_64& rng, std::size_t p, std::size_t d, std::size_t h, bool pe,
                           double scale = 0.5) {
  TemporalParameters w = TemporalParameters::zeros(d, h);
  Eigen::VectorXd flat = w.flatten();
  std::normal_distribution<double> z(0.0, scale);
  for (Eigen::Index k = 0; k < flat.size(); ++k) flat(k) = z(rng);
  w.assign(flat);
  return TemporalModel(p, w, pe);
}

}  // namespace

TEST_CASE("sinusoidal positional encoding") {
  const Eigen::MatrixXd pe = sinusoidal_pe(5, 6);
  for (int k = 0; k < 6; ++k) CHECK(pe(0, k) == (k % 2 == 0 ? 0.0 : 1.0));
  CHECK((pe.array().abs() <= 1.0).all());
  for (std::size_t d : {2, 4, 8, 16}) CHECK(std::abs(sinusoidal_pe(2, d)(1, 0) - std::sin(1.0)) < 1e-15);
  CHECK(std::abs(pe(3, 3) - std::cos(3.0 / std::pow(10000.0, 2.0 / 6.0))) < 1e-15);
  CHECK_THROWS_AS(sinusoidal_pe(3, 5), Error);
  CHECK_THROWS_AS(sinusoidal_pe(0, 4), Error);
}

TEST_CASE("attention rows are distributions") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const TemporalModel m = random_model(rng, 3, 4, 5, true, 2.0);
    const auto seq = random_sequence(rng, 1 + rep % 5, 3, "s");
    const AttentionOutput a = self_attention(m.inputs(seq), m);
    for (Eigen::Index r = 0; r < a.attention.rows(); ++r) {
      CHECK(std::abs(a.attention.row(r).sum() - 1.0) < 1e-12);
      CHECK((a.attention.row(r).array() >= 0.0).all());
    }
  }
}

TEST_CASE("attention degenerate cases") {
  std::mt19937_64 rng(2);
  TemporalModel m = random_model(rng, 4, 4, 3, true);
  SUBCASE("single snapshot") {
    const auto seq = random_sequence(rng, 1, 4, "a");
    const Eigen::MatrixXd x = m.inputs(seq);
    const AttentionOutput a = self_attention(x, m);
    CHECK(a.attention(0, 0) == 1.0);
    CHECK(((a.z - x * m.parameters().wv).array().abs() < 1e-14).all());
  }
  SUBCASE("zero query and key weights give uniform attention") {
    m.parameters().wq.setZero();
    m.parameters().wk.setZero();
    const auto seq = random_sequence(rng, 4, 4, "b");
    const Eigen::MatrixXd x = m.inputs(seq);
    const AttentionOutput a = self_attention(x, m);
    CHECK(((a.attention.array() - 0.25).abs() < 1e-15).all());
    const Eigen::RowVectorXd mean = (x * m.parameters().wv).colwise().mean();
    for (Eigen::Index t = 0; t < 4; ++t) CHECK((a.z.row(t) - mean).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("zero MLP weights output the final bias") {
    m.parameters().w2.setZero();
    m.parameters().b2 = 0.37;
    CHECK(temporal_risk(random_sequence(rng, 3, 4, "c"), m) == 0.37);
  }
}

TEST_CASE("inputs are zero-padded features plus positional encoding") {
  std::mt19937_64 rng(3);
  const TemporalModel m = random_model(rng, 3, 4, 2, true);
  const auto seq = random_sequence(rng, 3, 3, "a");
  const Eigen::MatrixXd x = m.inputs(seq);
  const Eigen::MatrixXd pe = sinusoidal_pe(3, 4);
  for (int t = 0; t < 3; ++t) {
    for (int j = 0; j < 3; ++j) CHECK(x(t, j) == seq.snapshots[t].features[j] + pe(t, j));
    CHECK(x(t, 3) == pe(t, 3));
  }
  const TemporalModel off(3, m.parameters(), false);
  CHECK(off.inputs(seq)(1, 3) == 0.0);
  CHECK_THROWS_AS(m.risk(random_sequence(rng, 2, 2, "b")), Error);
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(4);
  std::vector<SnapshotSequence> subjects;
  for (int i = 0; i < 4; ++i) subjects.push_back(random_sequence(rng, 1 + i % 3, 4, "s" + std::to_string(i)));
  subjects[0].event = 1;
  for (bool pe : {true, false}) {
    TemporalModel m = random_model(rng, 4, 4, 5, pe);
    const Eigen::VectorXd analytic = temporal_loss_gradient(m, subjects).flatten();
    const Eigen::VectorXd base = m.parameters().flatten();
    double worst = 0.0;
    for (Eigen::Index k = 0; k < base.size(); ++k) {
      Eigen::VectorXd up = base, down = base;
      up(k) += 1e-5;
      down(k) -= 1e-5;
      m.parameters().assign(up);
      const double lu = temporal_loss(m, subjects);
      m.parameters().assign(down);
      const double ld = temporal_loss(m, subjects);
      const double numeric = (lu - ld) / 2e-5;
      // the output bias gradient is exactly zero, so floor the scale
      worst = std::max(worst, std::abs(analytic(k) - numeric) /
                                  std::max(1e-6, std::max(std::abs(analytic(k)), std::abs(numeric))));
    }
    m.parameters().assign(base);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("per-sequence output gradient matches central differences") {
  std::mt19937_64 rng(5);
  TemporalModel m = random_model(rng, 3, 4, 6, true);
  const auto seq = random_sequence(rng, 3, 3, "x");
  TemporalParameters g = TemporalParameters::zeros(4, 6);
  m.accumulate_gradient(seq, 1.0, g);
  const Eigen::VectorXd analytic = g.flatten();
  const Eigen::VectorXd base = m.parameters().flatten();
  for (Eigen::Index k = 0; k < base.size(); ++k) {
    Eigen::VectorXd up = base, down = base;
    up(k) += 1e-5;
    down(k) -= 1e-5;
    m.parameters().assign(up);
    const double fu = m.risk(seq);
    m.parameters().assign(down);
    const double fd = m.risk(seq);
    CHECK(oracle::rel_err(analytic(k), (fu - fd) / 2e-5) < 1e-7);
  }
}

TEST_CASE("without positional encoding earlier snapshots form a set") {
  std::mt19937_64 rng(6);
  int broken_with_pe = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const TemporalModel off = random_model(rng, 3, 4, 5, false, 1.0);
    const TemporalModel on(3, off.parameters(), true);
    auto seq = random_sequence(rng, 5, 3, "p");
    auto perm = seq;
    // shuffle the feature vectors of the first T - 1 snapshots, keep indices
    std::vector<std::vector<double>> head;
    for (int t = 0; t < 4; ++t) head.push_back(seq.snapshots[t].features);
    std::rotate(head.begin(), head.begin() + 1 + rep % 3, head.end());
    for (int t = 0; t < 4; ++t) perm.snapshots[t].features = head[t];
    CHECK(off.risk(seq) == off.risk(perm));
    if (std::abs(on.risk(seq) - on.risk(perm)) > 1e-9) ++broken_with_pe;
  }
  CHECK(broken_with_pe >= 1);
}

TEST_CASE("truncating a sequence changes the output") {
  std::mt19937_64 rng(7);
  int changed = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const TemporalModel m = random_model(rng, 3, 4, 5, true);
    auto seq = random_sequence(rng, 4, 3, "t");
    auto cut = seq;
    cut.snapshots.pop_back();
    if (std::abs(m.risk(seq) - m.risk(cut)) > 1e-6) ++changed;
  }
  CHECK(changed >= 1);
}

TEST_CASE("loss is invariant to a shift of every score") {
  std::mt19937_64 rng(8);
  std::vector<SnapshotSequence> subjects;
  for (int i = 0; i < 10; ++i) subjects.push_back(random_sequence(rng, 1 + i % 4, 3, "s" + std::to_string(i)));
  subjects[0].event = 1;
  TemporalModel m = random_model(rng, 3, 4, 5, true);
  const double before = temporal_loss(m, subjects);
  m.parameters().b2 += 2.5;
  CHECK(std::abs(temporal_loss(m, subjects) - before) < 1e-12);
  CHECK(std::abs(temporal_loss_gradient(m, subjects).b2) < 1e-12);
}

TEST_CASE("training reduces the loss and ignores subject order") {
  LongitudinalSpec spec;
  spec.base.n = 120;
  spec.base.true_coefficients = {1.0, -1.0, 0.5};
  spec.base.seed = 9;
  const auto data = generate_longitudinal(spec);
  TemporalOptions opt;
  opt.epochs = 50;
  const TemporalModel m = train_temporal(data.cohort.subjects, opt);
  REQUIRE(m.training_loss_trace.size() == 51);
  CHECK(m.training_loss_trace.back() < m.training_loss_trace.front());
  // frozen from the first verified run
  CHECK(m.training_loss_trace.back() == doctest::Approx(3.86816).epsilon(1e-4));

  std::vector<SnapshotSequence> reversed(data.cohort.subjects.rbegin(), data.cohort.subjects.rend());
  const TemporalModel r = train_temporal(reversed, opt);
  CHECK(r.to_json() == m.to_json());

  const TemporalModel back = TemporalModel::from_json(m.to_json());
  for (const auto& s : data.cohort.subjects) CHECK(back.risk(s) == m.risk(s));
}

TEST_CASE("divergent training raises with the trace") {
  LongitudinalSpec spec;
  spec.base.n = 60;
  spec.base.true_coefficients = {1.0, -1.0};
  spec.base.seed = 10;
  const auto data = generate_longitudinal(spec);
  TemporalOptions opt;
  opt.learning_rate = 500.0;
  opt.epochs = 200;
  try {
    train_temporal(data.cohort.subjects, opt);
    FAIL("expected training error");
  } catch (const TrainingError& e) {
    CHECK(!e.trace().empty());
  }
}

TEST_CASE("training preconditions") {
  std::mt19937_64 rng(11);
  std::vector<SnapshotSequence> one{random_sequence(rng, 2, 2, "a")};
  CHECK_THROWS_AS(train_temporal(one, TemporalOptions{}), Error);
  auto a = random_sequence(rng, 2, 2, "a"), b = random_sequence(rng, 2, 2, "b");
  a.event = b.event = 0;
  std::vector<SnapshotSequence> none{a, b};
  CHECK_THROWS_AS(train_temporal(none, TemporalOptions{}), Error);
}

TEST_CASE("longitudinal CSV round-trip and validation") {
  LongitudinalSpec spec;
  spec.base.n = 20;
  spec.base.true_coefficients = {1.0, -1.0};
  spec.base.seed = 12;
  const auto data = generate_longitudinal(spec);
  for (const auto& s : data.cohort.subjects) {
    CHECK(s.length() >= 1);
    CHECK(s.length() <= 4);
  }
  std::stringstream io;
  write_longitudinal(io, data.cohort);
  const LongitudinalCohort back = read_longitudinal(io);
  REQUIRE(back.subjects.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(back.subjects[i].id == data.cohort.subjects[i].id);
    CHECK(back.subjects[i].length() == data.cohort.subjects[i].length());
    CHECK(back.subjects[i].time == data.cohort.subjects[i].time);
    CHECK(back.subjects[i].snapshots.back().features == data.cohort.subjects[i].snapshots.back().features);
  }
  const Cohort last = data.cohort.last_snapshot_cohort();
  CHECK(last.size() == 20);
  CHECK(last[3].features == data.cohort.subjects[3].snapshots.back().features);

  std::istringstream bad("id,snapshot_index,time,event,x\na,1,5,1,0.1\na,2,6,1,0.2\n");
  CHECK_THROWS_AS(read_longitudinal(bad), Error);
  std::istringstream header("id,time,event,x\na,5,1,0.1\n");
  CHECK_THROWS_AS(read_longitudinal(header), Error);
}

TEST_CASE("options reject unknown keys") {
  nlohmann::json j = TemporalOptions{};
  CHECK_NOTHROW(j.get<TemporalOptions>());
  j["heads"] = 2;
  CHECK_THROWS_AS(j.get<TemporalOptions>(), Error);
}
