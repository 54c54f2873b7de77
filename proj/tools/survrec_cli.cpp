#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "survrec/data_model.hpp"
#include "survrec/error.hpp"
#include "survrec/explain.hpp"
#include "survrec/metrics.hpp"
#include "survrec/pipeline.hpp"
#include "survrec/radiomics.hpp"
#include "survrec/rng.hpp"
#include "survrec/temporal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace survrec;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

fs::path prepare_out(const Common& c, const fs::path& fallback) {
  fs::path out = c.out.empty() ? fallback : fs::path(c.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + out.string() + ": " + ec.message());
  return out;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  return out;
}

PipelineConfig pipeline_config(const Common& c) {
  PipelineConfig config = load_config(c.config);
  if (c.seed) config.seed = *c.seed;
  if (!c.out.empty()) config.out = c.out;
  return config;
}

int cmd_simulate(const Common& c) {
  json j = read_json(c.config);
  const fs::path out = prepare_out(c, "simulated");
  const bool longitudinal = j.contains("max_snapshots") || j.contains("drift");
  if (longitudinal) {
    LongitudinalSpec spec = j.get<LongitudinalSpec>();
    if (c.seed) spec.base.seed = *c.seed;
    const SyntheticLongitudinal sim = generate_longitudinal(spec);
    write_cohort(out / "cohort.csv", sim.cohort.last_snapshot_cohort());
    auto lf = open_out(out / "longitudinal.csv");
    write_longitudinal(lf, sim.cohort);
    auto ts = open_out(out / "true_scores.csv");
    ts << "id,true_score\n";
    for (std::size_t i = 0; i < sim.true_scores.size(); ++i) {
      ts << sim.cohort.subjects[i].id << ',' << sim.true_scores[i] << '\n';
    }
    if (!c.quiet) {
      std::cout << "simulated " << sim.cohort.subjects.size() << " subjects with snapshots, censoring "
                << sim.censoring_rate << " -> " << out.string() << '\n';
    }
    return 0;
  }
  SyntheticSpec spec = j.get<SyntheticSpec>();
  if (c.seed) spec.seed = *c.seed;
  const SyntheticCohort sim = generate_synthetic(spec);
  write_cohort(out / "cohort.csv", sim.cohort);
  auto ts = open_out(out / "true_scores.csv");
  ts << "id,true_score\n";
  for (std::size_t i = 0; i < sim.true_scores.size(); ++i) ts << sim.cohort[i].id << ',' << sim.true_scores[i] << '\n';
  if (!c.quiet) {
    std::cout << "simulated " << sim.cohort.size() << " subjects, censoring " << sim.censoring_rate << " -> "
              << out.string() << '\n';
  }
  return 0;
}

int cmd_extract(const Common& c) {
  const fs::path config_path(c.config);
  const json j = read_json(config_path);
  if (!j.contains("voxel_dir")) throw Error(ErrorKind::Schema, "extract-features config needs \"voxel_dir\"");
  fs::path dir = j["voxel_dir"].get<std::string>();
  if (dir.is_relative()) dir = config_path.parent_path() / dir;
  const std::size_t levels = j.value("levels", std::size_t{32});
  std::vector<fs::path> grids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".grid") grids.push_back(entry.path());
  }
  std::sort(grids.begin(), grids.end());
  if (grids.empty()) throw Error(ErrorKind::Io, "no .grid files in " + dir.string());
  const fs::path out = prepare_out(c, "features");
  auto csv = open_out(out / "features.csv");
  bool header = false;
  for (const auto& g : grids) {
    fs::path mask_path = g;
    mask_path.replace_extension(".mask");
    const FeatureMap f = extract_radiomics(read_voxel_grid(g), read_region_mask(mask_path), levels);
    if (!header) {
      csv << "id";
      for (const auto& [name, _] : f) csv << ',' << name;
      csv << '\n';
      header = true;
    }
    csv << g.stem().string();
    for (const auto& [_, v] : f) csv << ',' << v;
    csv << '\n';
    if (!c.quiet) std::cout << g.stem().string() << ": " << f.size() << " features\n";
  }
  return 0;
}

int cmd_run(const Common& c) {
  const PipelineConfig config = pipeline_config(c);
  const PipelineResult r = run_pipeline(config, true);
  if (!c.quiet) {
    std::cout << "model        C-index";
    for (double h : config.horizons) std::cout << "  AUC@" << h;
    std::cout << '\n';
    for (const auto& m : r.cv.models) {
      std::cout << to_string(m.learner);
      for (std::size_t k = std::string(to_string(m.learner)).size(); k < 13; ++k) std::cout << ' ';
      if (m.failed) {
        std::cout << "failed (" << m.failure << ")\n";
        continue;
      }
      std::printf("%.3f", m.concordance.c_index);
      for (const auto& a : m.auc) std::printf("    %.3f", a.mean_auc);
      std::cout << '\n';
    }
    std::cout << "chosen: " << to_string(r.chosen) << "; log-rank p = " << r.log_rank.p_value << '\n';
    std::cout << "report: " << (config.out / "report.json").string() << '\n';
  }
  return 0;
}

// id -> score from a CSV with an "id" column and the named score column.
std::map<std::string, double> read_scores(const fs::path& path, const std::string& column) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open score file " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    return cells;
  };
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  const auto id_col = std::find(header.begin(), header.end(), "id") - header.begin();
  const auto score_col = std::find(header.begin(), header.end(), column) - header.begin();
  if (id_col == static_cast<std::ptrdiff_t>(header.size()) || score_col == static_cast<std::ptrdiff_t>(header.size())) {
    throw Error(ErrorKind::Schema, "score file needs \"id\" and \"" + column + "\" columns");
  }
  std::map<std::string, double> scores;
  for (std::size_t row = 2; std::getline(in, line); ++row) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw ParseError(row, column, "wrong number of cells");
    try {
      std::size_t used = 0;
      const double v = std::stod(cells[score_col], &used);
      if (used != cells[score_col].size() || !std::isfinite(v)) throw std::invalid_argument("x");
      scores[cells[id_col]] = v;
    } catch (const std::logic_error&) {
      throw ParseError(row, column, "not a number");
    }
  }
  return scores;
}

int cmd_evaluate(const Common& c) {
  const fs::path config_path(c.config);
  const json j = read_json(config_path);
  for (const auto& [key, _] : j.items()) {
    if (key != "scores" && key != "cohort" && key != "horizons" && key != "score_column") {
      throw Error(ErrorKind::Schema, "evaluate config: unknown key \"" + key + "\"");
    }
  }
  if (!j.contains("scores")) throw Error(ErrorKind::Schema, "evaluate config needs \"scores\"");
  auto resolve = [&](const std::string& p) {
    fs::path path = p;
    return path.is_relative() ? config_path.parent_path() / path : path;
  };
  const fs::path scores_path = resolve(j["scores"].get<std::string>());
  const std::vector<double> horizons = j.value("horizons", std::vector<double>{12.0, 24.0});
  const std::string score_column = j.value("score_column", std::string("score"));

  Cohort cohort;
  if (j.contains("cohort")) {
    // outcomes from the cohort file, scores joined by id
    const Cohort outcomes = load_cohort(resolve(j["cohort"].get<std::string>()), CohortSchema{});
    const std::map<std::string, double> by_id = read_scores(scores_path, score_column);
    std::vector<SurvivalRecord> recs;
    for (const auto& r : outcomes.records()) {
      const auto it = by_id.find(r.id);
      if (it == by_id.end()) throw Error(ErrorKind::Schema, "no score for subject \"" + r.id + "\"");
      recs.push_back({r.id, r.time, r.event, {it->second}});
    }
    cohort = Cohort({score_column}, std::move(recs));
  } else {
    CohortSchema schema;
    schema.feature_columns = {score_column};
    cohort = load_cohort(scores_path, schema);
  }
  const std::vector<double> times = cohort.times();
  const std::vector<int> events = cohort.events();
  const std::vector<double> scores = cohort.column(0);

  json report{{"schema_version", kReportSchemaVersion}, {"n", cohort.size()}, {"events", cohort.event_count()}};
  const ConcordanceResult ci = c_index(times, events, scores);
  report["c_index"] = ci.c_index;
  report["concordant_pairs"] = ci.concordant;
  report["discordant_pairs"] = ci.discordant;
  report["tied_pairs"] = ci.tied_score;
  const StepFunction censor = censoring_survival(times, events);
  json auc = json::object();
  for (double h : horizons) {
    const AucSummary s = auc_summary(times, events, scores, h, censor);
    std::ostringstream key;
    key << h;
    auc[key.str()] = {{"mean_auc", s.mean_auc}, {"evaluable_times", s.curve.size()}};
  }
  report["auc"] = auc;
  const Stratification strata = stratify_by_median(scores);
  std::vector<double> lt, ht;
  std::vector<int> le, he;
  for (std::size_t i : strata.low) {
    lt.push_back(times[i]);
    le.push_back(events[i]);
  }
  for (std::size_t i : strata.high) {
    ht.push_back(times[i]);
    he.push_back(events[i]);
  }
  const LogRankResult lr = log_rank({lt, le}, {ht, he});
  auto median_or_null = [](double m) { return std::isfinite(m) ? json(m) : json(nullptr); };
  report["stratification"] = {{"cutoff", strata.cutoff},
                              {"low", {{"n", lt.size()}, {"median_rfs", median_or_null(median_survival(kaplan_meier(lt, le)))}}},
                              {"high", {{"n", ht.size()}, {"median_rfs", median_or_null(median_survival(kaplan_meier(ht, he)))}}},
                              {"log_rank", {{"chi_square", lr.chi_square}, {"p_value", lr.p_value}}}};
  const fs::path out = prepare_out(c, "evaluation");
  auto f = open_out(out / "metrics.json");
  f << report.dump(2) << '\n';
  if (!c.quiet) std::cout << "C-index " << ci.c_index << "; metrics -> " << (out / "metrics.json").string() << '\n';
  return 0;
}

int cmd_explain(const Common& c) {
  const PipelineConfig config = pipeline_config(c);
  const Cohort raw = load_pipeline_cohort(config);
  const Preprocessing pre = fit_preprocessing(raw, config);
  const Cohort full = pre.apply(raw);
  const Learner learner = config.learners.front();
  auto model = fit_learner(learner, config, full, mix_seed(config.seed, 0xE1));
  const fs::path out = prepare_out(c, config.out);

  json report{{"schema_version", kReportSchemaVersion}, {"model", to_string(learner)}, {"features", full.feature_names()}};
  if (full.n_features() <= kMaxExactShapleyFeatures) {
    const std::vector<double> background = feature_medians(full);
    auto attributions = open_out(out / "attributions.csv");
    attributions << "id,baseline,explained";
    for (const auto& name : full.feature_names()) attributions << ',' << name;
    attributions << '\n';
    for (const auto& r : full.records()) {
      const AttributionVector a = exact_shapley(*model, r.features, background);
      attributions << r.id << ',' << a.baseline_value << ',' << a.explained_value;
      for (double p : a.phi) attributions << ',' << p;
      attributions << '\n';
    }
    json shap = json::array();
    for (const auto& f : mean_abs_shap(*model, full, background, config.threads)) {
      shap.push_back({{"feature", f.feature}, {"mean_abs_shap", f.value}});
    }
    report["mean_abs_shap"] = shap;
  } else {
    report["mean_abs_shap"] = nullptr;
  }
  const int repeats = std::max(1, config.importance_repeats);
  const ImportanceReport imp = permutation_importance(*model, full, repeats, mix_seed(config.seed, 0x1A9));
  json entries = json::array();
  for (const auto& e : imp.entries) {
    entries.push_back({{"feature", e.feature}, {"mean_drop", e.mean_drop}, {"std_drop", e.std_drop}, {"skipped", e.skipped}});
  }
  report["permutation"] = {{"baseline_c_index", imp.baseline}, {"repeats", imp.repeats}, {"entries", entries}};
  auto f = open_out(out / "explain.json");
  f << report.dump(2) << '\n';
  if (!c.quiet) {
    std::cout << to_string(learner) << " attributions -> " << out.string() << '\n';
    if (report["mean_abs_shap"].is_array()) {
      for (const auto& s : report["mean_abs_shap"]) {
        std::printf("  %-28s %.3f\n", s["feature"].get<std::string>().c_str(), s["mean_abs_shap"].get<double>());
      }
    }
  }
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool with_seed = true) {
  sub->add_option("--config", c.config, "JSON configuration")->required()->check(CLI::ExistingFile);
  if (with_seed) sub->add_option("--seed", c.seed, "override the configured seed");
  sub->add_option("--out", c.out, "output directory");
  sub->add_flag("--quiet", c.quiet, "suppress progress output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"survrec: survival modelling for recurrence prediction"};
  app.require_subcommand(1);
  Common c;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic Weibull-Cox cohort");
  auto* extract = app.add_subcommand("extract-features", "radiomic features from voxel grids");
  auto* run = app.add_subcommand("run", "cross-validated pipeline with report and plots");
  auto* evaluate = app.add_subcommand("evaluate", "metrics for an external score file");
  auto* explain = app.add_subcommand("explain", "Shapley and permutation importance");
  add_common(simulate, c);
  add_common(extract, c, false);
  add_common(run, c);
  add_common(evaluate, c, false);
  add_common(explain, c);
  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) return cmd_simulate(c);
    if (*extract) return cmd_extract(c);
    if (*run) return cmd_run(c);
    if (*evaluate) return cmd_evaluate(c);
    if (*explain) return cmd_explain(c);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
