/*
 * Copyright 2026 The pdir Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pdir/config.hpp"
#include "pdir/core.hpp"
#include "pdir/error.hpp"
#include "pdir/evaluate.hpp"
#include "pdir/imputer.hpp"
#include "pdir/io.hpp"
#include "pdir/simulator.hpp"

namespace pdir::cli {

enum ExitCode : int { kOk = 0, kInvalidInput = 2, kEstimationFailure = 3 };

/// One command-line invocation: config file, flag overrides, positional inputs.
struct Invocation {
  std::optional<std::filesystem::path> config;
  std::vector<std::pair<std::string, std::string>> overrides;  // applied after the file
  std::vector<std::filesystem::path> inputs;
  std::optional<std::filesystem::path> model;
};

// ---------------------------------------------------------------------------
// Model artifact (model.json)
// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

inline json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json to_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
  return a;
}

inline Eigen::VectorXd vector_from_json(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const json& a) {
  if (a.empty()) return Eigen::MatrixXd();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(a[0].size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != a[0].size()) throw ParseError("model matrix rows differ in length");
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i][j].get<double>();
    }
  }
  return m;
}

inline json kernel_spec_json(const KernelSpec& s) {
  switch (s.family()) {
    case KernelFamily::Gaussian: return {{"family", "gaussian"}, {"rho", s.rho()}};
    case KernelFamily::Matern: return {{"family", "matern"}, {"c", s.c()}, {"nu", s.shape()}};
    case KernelFamily::GeneralizedCauchy:
      return {{"family", "cauchy"}, {"c", s.c()}, {"alpha", s.alpha()}, {"tau", s.shape()}};
    case KernelFamily::PoweredExponential:
      return {{"family", "powexp"}, {"c", s.c()}, {"alpha", s.alpha()}};
  }
  return {};
}

inline KernelSpec kernel_spec_from_json(const json& j) {
  const std::string family = j.at("family").get<std::string>();
  if (family == "gaussian") return KernelSpec::gaussian(j.at("rho").get<double>());
  if (family == "matern") return KernelSpec::matern(j.at("c").get<double>(), j.at("nu").get<double>());
  if (family == "cauchy") {
    return KernelSpec::generalized_cauchy(j.at("c").get<double>(), j.at("alpha").get<double>(),
                                          j.at("tau").get<double>());
  }
  if (family == "powexp") {
    return KernelSpec::powered_exponential(j.at("c").get<double>(), j.at("alpha").get<double>());
  }
  throw ParseError("unknown kernel family '" + family + "' in model");
}

}  // namespace detail

/// A trained rule plus the schema it was trained on.
struct SavedModel {
  std::string study;
  OutcomeKind outcome_kind = OutcomeKind::Continuous;
  std::vector<std::string> covariate_names;
  Method method = Method::Linear;
  bool optimized = false;
  TreatmentRule rule;
};

inline std::string serialize_model(const FittedPipeline& fitted, const TrialDataset& train) {
  using detail::json;
  json j;
  j["format"] = "pdir-model";
  j["version"] = 1;
  j["study"] = train.study_label();
  j["outcome_kind"] = train.kind() == OutcomeKind::Survival ? "survival" : "continuous";
  j["covariate_names"] = train.covariate_names();
  j["method"] = to_string(fitted.method);
  j["rule"] = {{"k", fitted.rule.k},
               {"polarity", fitted.rule.polarity == Polarity::GreaterTreats ? "greater" : "lesser"}};
  if (const auto* lin = std::get_if<LinearScorer>(&fitted.rule.scorer)) {
    const auto& m = lin->model;
    json dirs = json::array();
    for (const auto& d : m.directions) dirs.push_back(detail::to_json(d));
    j["linear"] = {{"mu", detail::to_json(m.mu)},
                   {"whitener", detail::to_json(m.whitener)},
                   {"theta", detail::to_json(m.theta)},
                   {"eigenvalues", detail::to_json(m.eigenvalues)},
                   {"directions", dirs},
                   {"n_slices", m.n_slices},
                   {"ridge", m.ridge},
                   {"which", lin->which},
                   {"offset", lin->offset},
                   {"slope", lin->slope}};
  } else if (const auto* km = std::get_if<KernelModel>(&fitted.rule.scorer)) {
    j["kernel"] = {{"spec", detail::kernel_spec_json(km->spec)},
                   {"lambda", km->lambda},
                   {"intercept", km->intercept},
                   {"alpha", detail::to_json(km->alpha)},
                   {"training_inputs", detail::to_json(km->training_inputs)}};
    if (fitted.tuning) {
      j["kernel"]["tuning"] = {{"cv_mse", fitted.tuning->cv_mse},
                               {"best_index", fitted.tuning->best_index},
                               {"holdout_mse", fitted.tuning->holdout_mse}};
    }
  }
  return j.dump(1) + "\n";
}

inline SavedModel load_model(const std::filesystem::path& path) {
  using detail::json;
  std::string text;
  for (const auto& line : io::read_lines(path)) text += line + "\n";
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError("model '" + path.string() + "': " + e.what());
  }
  try {
    if (j.value("format", "") != "pdir-model") throw ParseError("'" + path.string() + "' is not a pdir model");
    const std::string method = j.at("method").get<std::string>();
    const auto& rule = j.at("rule");
    const Polarity polarity =
        rule.at("polarity").get<std::string>() == "greater" ? Polarity::GreaterTreats : Polarity::LesserTreats;
    const double k = rule.at("k").get<double>();
    auto names = j.at("covariate_names").get<std::vector<std::string>>();
    const OutcomeKind kind = j.at("outcome_kind").get<std::string>() == "survival" ? OutcomeKind::Survival
                                                                                   : OutcomeKind::Continuous;
    if (method == "linear") {
      const auto& l = j.at("linear");
      DirectionModel m;
      m.covariate_names = names;
      m.mu = detail::vector_from_json(l.at("mu"));
      m.whitener = detail::matrix_from_json(l.at("whitener"));
      m.theta = detail::matrix_from_json(l.at("theta"));
      m.eigenvalues = detail::vector_from_json(l.at("eigenvalues"));
      for (const auto& d : l.at("directions")) m.directions.push_back(detail::vector_from_json(d));
      m.n_slices = l.at("n_slices").get<int>();
      m.ridge = l.at("ridge").get<double>();
      if (m.directions.empty() || static_cast<std::size_t>(m.mu.size()) != names.size()) {
        throw ParseError("model directions do not match the covariate schema");
      }
      LinearScorer s{std::move(m), l.at("which").get<std::size_t>(), l.at("offset").get<double>(),
                     l.at("slope").get<double>()};
      return SavedModel{j.at("study").get<std::string>(), kind, std::move(names), Method::Linear, false,
                        TreatmentRule{std::move(s), k, polarity}};
    }
    if (method == "kernel") {
      const auto& kj = j.at("kernel");
      KernelModel m{detail::kernel_spec_from_json(kj.at("spec")),
                    detail::matrix_from_json(kj.at("training_inputs")),
                    detail::vector_from_json(kj.at("alpha")),
                    kj.at("intercept").get<double>(),
                    kj.at("lambda").get<double>(),
                    Eigen::VectorXd()};
      if (m.training_inputs.rows() != m.alpha.size() ||
          static_cast<std::size_t>(m.training_inputs.cols()) != names.size()) {
        throw ParseError("kernel model inputs do not match the covariate schema");
      }
      const bool optimized = kj.contains("tuning");
      return SavedModel{j.at("study").get<std::string>(), kind, std::move(names), Method::Kernel, optimized,
                        TreatmentRule{std::move(m), k, polarity}};
    }
    throw ParseError("unknown method '" + method + "' in model");
  } catch (const json::exception& e) {
    throw ParseError("model '" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace detail {

inline KeyValueConfig merged_config(const Invocation& inv) {
  KeyValueConfig cfg = inv.config ? KeyValueConfig::load(*inv.config) : KeyValueConfig();
  for (const auto& [key, value] : inv.overrides) cfg.set(key, value);
  return cfg;
}

inline std::filesystem::path require_out_dir(const KeyValueConfig& cfg) {
  return cfg.require("out_dir");
}

inline int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const EstimationError& e) {
    err << "error: estimation failed in " << e.what() << "\n";
    return kEstimationFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kEstimationFailure;
  }
}

inline std::string scores_csv(const TrialDataset& data, const std::vector<double>& scores) {
  std::string out = "id,score\n";
  for (std::size_t i = 0; i < data.n(); ++i) out += data[i].id + "," + io::format_double(scores[i]) + "\n";
  return out;
}

inline std::string summary_line(const std::string& study, const RuleEvaluation& ev, OutcomeKind kind) {
  if (!ev.ok()) return study + " & -- & (unable to compute: " + ev.failure_reason + ")";
  if (kind == OutcomeKind::Survival) {
    return study + " & " + format_hr_row(ev.effect->estimate, ev.effect->ci_low, ev.effect->ci_high);
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.2f & (%.2f,%.2f)", ev.effect->estimate, ev.effect->ci_low,
                ev.effect->ci_high);
  return study + " & " + buf;
}

}  // namespace detail

/// simulate: writes <out_dir>/dataset.csv and <out_dir>/truth.csv.
inline int cmd_simulate(const Invocation& inv, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto cfg = detail::merged_config(inv);
    const ScenarioSpec spec = parse_scenario(cfg);
    const auto dir = detail::require_out_dir(cfg);
    const auto sim = simulate(spec);
    write_dataset(dir / "dataset.csv", sim.data);
    io::write_file_atomic(dir / "truth.csv", serialize_truth(sim.data, sim.truth));
    out << "wrote " << (dir / "dataset.csv").string() << " and " << (dir / "truth.csv").string()
        << " (n=" << sim.data.n() << ", p=" << sim.data.p() << ")\n";
    return int{kOk};
  });
}

/// fit: writes model.json, scores.csv, imputed.csv, fit.log and (linear) directions.csv.
inline int cmd_fit(const Invocation& inv, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto cfg = detail::merged_config(inv);
    const RunConfig rc = parse_run_config(cfg, /*require_seed=*/true);
    const auto dir = detail::require_out_dir(cfg);
    if (inv.inputs.size() != 1) throw ValidationError("fit takes exactly one training dataset");
    const TrialDataset train = load_dataset(inv.inputs.front());

    std::ostringstream log;
    const auto fitted = fit_pipeline(train, rc.pipeline, &log);
    err << log.str();

    io::write_file_atomic(dir / "model.json", serialize_model(fitted, train));
    io::write_file_atomic(dir / "scores.csv", detail::scores_csv(train, fitted.training_scores));
    write_imputed_csv(dir / "imputed.csv", train, fitted.imputed);
    io::write_file_atomic(dir / "fit.log", log.str());
    if (fitted.directions) write_directions_csv(dir / "directions.csv", *fitted.directions);
    out << "fitted " << to_string(fitted.method) << " model on '" << train.study_label() << "' (n="
        << train.n() << "); outputs in " << dir.string() << "\n";
    return int{kOk};
  });
}

/// evaluate: applies a saved rule to a test trial; writes <out_dir>/effects.csv.
inline int cmd_evaluate(const Invocation& inv, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto cfg = detail::merged_config(inv);
    cfg.check_known(run_config_keys());
    const auto dir = detail::require_out_dir(cfg);
    if (!inv.model) throw ValidationError("evaluate needs --model");
    if (inv.inputs.size() != 1) throw ValidationError("evaluate takes exactly one test dataset");
    SavedModel model = load_model(*inv.model);
    const TrialDataset test = load_dataset(inv.inputs.front());
    if (test.covariate_names() != model.covariate_names) {
      throw ValidationError("schema mismatch: test covariates do not match the model's training covariates");
    }
    if (cfg.has("rule.k")) model.rule.k = cfg.require_double("rule.k");
    if (const auto pol = cfg.get("rule.polarity"); pol && *pol != "auto") {
      if (*pol == "greater") model.rule.polarity = Polarity::GreaterTreats;
      else if (*pol == "lesser") model.rule.polarity = Polarity::LesserTreats;
      else throw ValidationError("field 'rule.polarity' must be greater, lesser or auto");
    }
    const auto ev = evaluate_rule(model.rule, test);
    io::write_file_atomic(dir / "effects.csv",
                          effects_header() + effects_row(model.study, model.method, model.optimized,
                                                         test.kind(), ev));
    out << detail::summary_line(model.study, ev, test.kind()) << "\n";
    return int{kOk};
  });
}

/// meta: every study trains, the pooled rest test. Writes directions.csv,
/// effects.csv, scores_by_study.csv and concordance_matrix.csv.
inline int cmd_meta(const Invocation& inv, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto cfg = detail::merged_config(inv);
    const RunConfig rc = parse_run_config(cfg, /*require_seed=*/true);
    const auto dir = detail::require_out_dir(cfg);
    if (inv.inputs.size() < 2) throw ValidationError("meta needs at least two datasets");
    std::vector<TrialDataset> studies;
    for (const auto& path : inv.inputs) studies.push_back(load_dataset(path));

    std::ostringstream log;
    std::vector<MetaResult> runs;
    if (rc.pipeline.method == Method::Kernel && rc.pipeline.optimize) {
      PipelineConfig plain = rc.pipeline;
      plain.optimize = false;
      runs.push_back(run_meta(studies, plain, &log));
    }
    runs.push_back(run_meta(studies, rc.pipeline, &log));
    err << log.str();

    const OutcomeKind kind = studies.front().kind();
    std::string effects = effects_header();
    for (const auto& r : runs) effects += meta_effects_rows(r, kind);
    const MetaResult& primary = runs.back();
    io::write_file_atomic(dir / "effects.csv", effects);
    io::write_file_atomic(dir / "directions.csv", meta_directions_csv(primary));
    io::write_file_atomic(dir / "concordance_matrix.csv", concordance_matrix_csv(primary));
    io::write_file_atomic(dir / "scores_by_study.csv", scores_by_study_csv(primary));
    for (const auto& r : runs) {
      out << "# " << to_string(r.method) << (r.optimized ? ", with optimization" : ", without optimization")
          << "\n";
      for (const auto& row : r.per_training_study) {
        out << detail::summary_line(row.study, row.evaluation, kind) << "\n";
      }
    }
    return int{kOk};
  });
}

}  // namespace pdir::cli
