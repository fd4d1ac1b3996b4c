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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "pdir/core.hpp"
#include "pdir/error.hpp"
#include "pdir/imputer.hpp"
#include "pdir/io.hpp"
#include "pdir/kernel.hpp"
#include "pdir/rng.hpp"
#include "pdir/sir.hpp"
#include "pdir/survival.hpp"

namespace pdir {

enum class Polarity {
  GreaterTreats,  // treat when score > k
  LesserTreats,   // treat when score < k
};

/// Calibrated linear index: offset + slope * (direction[which] . z).
///
/// offset and slope are the least-squares fit of the training contrast on the
/// raw direction score, which puts the score on the contrast scale so that a
/// threshold of 0 separates predicted benefit from predicted harm.
struct LinearScorer {
  DirectionModel model;
  std::size_t which = 0;
  double offset = 0.0;
  double slope = 1.0;
};

using ScoreFunction = std::function<double(std::span<const double>)>;
using Scorer = std::variant<LinearScorer, KernelModel, ScoreFunction>;

struct TreatmentRule {
  Scorer scorer;
  double k = 0.0;
  Polarity polarity = Polarity::GreaterTreats;
};

inline double rule_score(const TreatmentRule& rule, std::span<const double> z) {
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, LinearScorer>) {
          return s.offset + s.slope * score_linear(s.model, z, s.which);
        } else if constexpr (std::is_same_v<T, KernelModel>) {
          return score_nonlinear(s, z);
        } else {
          return s(z);
        }
      },
      rule.scorer);
}

/// Strict inequality in both polarities: a score equal to k is never treated.
inline int assign_treatment(const TreatmentRule& rule, std::span<const double> z) {
  const double s = rule_score(rule, z);
  return rule.polarity == Polarity::GreaterTreats ? (s > rule.k ? 1 : 0) : (s < rule.k ? 1 : 0);
}

enum class EffectMeasure { HazardRatio, MeanDifference };

inline const char* to_string(EffectMeasure m) {
  return m == EffectMeasure::HazardRatio ? "hazard_ratio" : "mean_difference";
}

/// Treated-vs-control comparison. For hazard ratios `se` is on the log scale.
struct EffectReport {
  EffectMeasure measure = EffectMeasure::MeanDifference;
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double se = 0.0;
  std::size_t n_treated = 0;
  std::size_t n_control = 0;
  std::size_t n_events = 0;

  /// True when the 95% interval contains the no-effect value.
  bool covers_null() const {
    const double null_value = measure == EffectMeasure::HazardRatio ? 1.0 : 0.0;
    return ci_low <= null_value && null_value <= ci_high;
  }
};

struct RuleEvaluation {
  std::size_t n_test = 0;
  std::size_t n_concordant = 0;
  std::size_t n_treated = 0;  // concordant subjects with T = 1
  std::size_t n_control = 0;  // concordant subjects with T = 0
  std::optional<EffectReport> effect;
  std::string failure_reason;

  bool ok() const { return effect.has_value(); }
};

namespace detail {

inline RuleEvaluation estimate_effect(const TrialDataset& data, const std::vector<std::size_t>& rows) {
  RuleEvaluation out;
  out.n_test = data.n();
  out.n_concordant = rows.size();
  for (std::size_t i : rows) (data[i].treatment ? out.n_treated : out.n_control) += 1;
  if (out.n_treated == 0 || out.n_control == 0) {
    out.failure_reason = std::string("concordance subgroup has an empty ") +
                         (out.n_treated == 0 ? "treated" : "control") + " arm";
    return out;
  }

  if (data.kind() == OutcomeKind::Survival) {
    std::vector<double> t;
    std::vector<int> e, g;
    for (std::size_t i : rows) {
      const auto& st = std::get<SurvivalTime>(data[i].outcome);
      t.push_back(st.time);
      e.push_back(st.event);
      g.push_back(data[i].treatment);
    }
    try {
      const auto hr = fit_cox_two_group(t, e, g);
      out.effect = EffectReport{EffectMeasure::HazardRatio, hr.hr, hr.ci_low, hr.ci_high,
                                hr.se_log_hr, out.n_treated, out.n_control, hr.n_events};
    } catch (const EstimationError& err) {
      out.failure_reason = err.what();
    }
    return out;
  }

  if (out.n_treated < 2 || out.n_control < 2) {
    out.failure_reason = "mean difference needs at least two subjects per arm";
    return out;
  }
  double s1 = 0.0, s0 = 0.0;
  for (std::size_t i : rows) (data[i].treatment ? s1 : s0) += std::get<double>(data[i].outcome);
  const double m1 = s1 / out.n_treated, m0 = s0 / out.n_control;
  double v1 = 0.0, v0 = 0.0;
  for (std::size_t i : rows) {
    const double y = std::get<double>(data[i].outcome);
    if (data[i].treatment) v1 += (y - m1) * (y - m1); else v0 += (y - m0) * (y - m0);
  }
  v1 /= static_cast<double>(out.n_treated - 1);
  v0 /= static_cast<double>(out.n_control - 1);
  // Welch standard error.
  const double se = std::sqrt(v1 / out.n_treated + v0 / out.n_control);
  const double diff = m1 - m0;
  out.effect = EffectReport{EffectMeasure::MeanDifference, diff, diff - kNormalQuantile975 * se,
                            diff + kNormalQuantile975 * se, se, out.n_treated, out.n_control, 0};
  return out;
}

}  // namespace detail

/// Concordance-subgroup effect of a rule on an independent randomized trial.
///
/// Assignments are computed from covariates alone; outcomes are read only
/// for the subjects whose assignment matches their randomized arm.
inline RuleEvaluation evaluate_rule(const TreatmentRule& rule, const TrialDataset& test) {
  std::vector<std::size_t> concordant;
  for (std::size_t i = 0; i < test.n(); ++i) {
    if (assign_treatment(rule, test[i].covariates) == test[i].treatment) concordant.push_back(i);
  }
  return detail::estimate_effect(test, concordant);
}

/// Unfiltered treated-vs-control effect over the whole trial.
inline RuleEvaluation overall_effect(const TrialDataset& data) {
  std::vector<std::size_t> all(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) all[i] = i;
  return detail::estimate_effect(data, all);
}

struct TuningCandidate {
  KernelSpec spec;
  double lambda;
};

struct TuneResult {
  std::size_t best_index = 0;
  std::vector<double> cv_mse;  // per grid entry, on half A
  double holdout_mse = 0.0;    // winner refit on half A, scored on half B
  std::vector<std::size_t> half_a;
  std::vector<std::size_t> half_b;
};

inline constexpr int kTuneFolds = 5;

namespace detail {

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& z, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), z.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(r) = z.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

inline std::vector<double> take(std::span<const double> v, const std::vector<std::size_t>& rows) {
  std::vector<double> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = v[rows[r]];
  return out;
}

inline double prediction_mse(const KernelModel& model, const Eigen::MatrixXd& z,
                             std::span<const double> y) {
  const Eigen::MatrixXd k = gram_cross(model.spec, z, model.training_inputs);
  const Eigen::VectorXd pred = (k * model.alpha).array() + model.intercept;
  double s = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) s += (pred(i) - y[i]) * (pred(i) - y[i]);
  return s / static_cast<double>(pred.size());
}

}  // namespace detail

/// Split-sample tuning: a seeded half split, 5-fold CV within half A to pick
/// the grid entry (first minimum wins), then a held-out check on half B.
inline TuneResult split_tune(const Eigen::MatrixXd& z, std::span<const double> contrast,
                             std::span<const TuningCandidate> grid, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(z.rows());
  if (grid.empty()) throw ValidationError("tuning grid is non-empty");
  if (n < 20) throw ValidationError("split-sample tuning needs n ≥ 20");
  if (contrast.size() != n) throw ValidationError("contrast length equals n");

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  TuneResult out;
  out.half_a.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n / 2));
  out.half_b.assign(perm.begin() + static_cast<std::ptrdiff_t>(n / 2), perm.end());

  const Eigen::MatrixXd za = detail::take_rows(z, out.half_a);
  const std::vector<double> ya = detail::take(contrast, out.half_a);
  const std::size_t na = out.half_a.size();

  out.cv_mse.assign(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double sse = 0.0;
    for (int fold = 0; fold < kTuneFolds; ++fold) {
      std::vector<std::size_t> fit_rows, val_rows;
      for (std::size_t i = 0; i < na; ++i) {
        (static_cast<int>(i % kTuneFolds) == fold ? val_rows : fit_rows).push_back(i);
      }
      const auto model = fit_kernel_machine(detail::take_rows(za, fit_rows),
                                            detail::take(ya, fit_rows), grid[g].spec, grid[g].lambda);
      const auto yv = detail::take(ya, val_rows);
      sse += detail::prediction_mse(model, detail::take_rows(za, val_rows), yv) *
             static_cast<double>(val_rows.size());
    }
    out.cv_mse[g] = sse / static_cast<double>(na);
    if (out.cv_mse[g] < out.cv_mse[out.best_index]) out.best_index = g;
  }

  const auto& best = grid[out.best_index];
  const auto refit = fit_kernel_machine(za, ya, best.spec, best.lambda);
  out.holdout_mse = detail::prediction_mse(refit, detail::take_rows(z, out.half_b),
                                           detail::take(contrast, out.half_b));
  return out;
}

inline const std::vector<double>& default_grid_lambdas() {
  static const std::vector<double> lambdas{0.1, 1.0, 10.0};
  return lambdas;
}

/// Gaussian rho in {1/4, 1, 4} x median heuristic, crossed with the lambdas.
inline std::vector<TuningCandidate> default_tuning_grid(
    const Eigen::MatrixXd& z, const std::vector<double>& lambdas = default_grid_lambdas()) {
  const double rho = median_heuristic_rho(z);
  std::vector<TuningCandidate> grid;
  for (double scale : {0.25, 1.0, 4.0}) {
    for (double lambda : lambdas) grid.push_back({KernelSpec::gaussian(scale * rho), lambda});
  }
  return grid;
}

enum class Method { Linear, Kernel };

inline const char* to_string(Method m) { return m == Method::Linear ? "linear" : "kernel"; }

struct PipelineConfig {
  Method method = Method::Linear;
  ForestConfig forest;
  ImputeMode impute_mode = ImputeMode::Joint;
  int slices = kDefaultSlices;
  std::optional<double> ridge;        // default 1e-8 * trace / p
  std::optional<KernelSpec> kernel;   // default Gaussian with median-heuristic rho
  double lambda = 1.0;
  bool optimize = false;
  std::vector<TuningCandidate> grid;  // empty selects default_tuning_grid(z, grid_lambdas)
  std::vector<double> grid_lambdas = default_grid_lambdas();
  double k = 0.0;
  std::optional<Polarity> polarity;   // default depends on the outcome kind
  std::uint64_t seed = 0;
};

/// Continuous outcomes: larger is better, so a positive contrast favours
/// treatment. Survival pseudo-outcomes are martingale residuals, where larger
/// means more observed events than expected, so a negative contrast favours it.
inline Polarity default_polarity(OutcomeKind kind) {
  return kind == OutcomeKind::Continuous ? Polarity::GreaterTreats : Polarity::LesserTreats;
}

struct FittedPipeline {
  Method method;
  TreatmentRule rule;
  std::optional<DirectionModel> directions;
  std::optional<KernelModel> kernel;
  std::optional<TuneResult> tuning;
  std::optional<TuningCandidate> tuned;
  ImputedContrasts imputed;
  std::vector<double> training_scores;
  bool used_martingale_residuals = false;
};

/// Imputation, then SIR or a kernel machine on the contrast, then a rule.
/// Survival data is first reduced to null-model martingale residuals.
inline FittedPipeline fit_pipeline(const TrialDataset& train, const PipelineConfig& config,
                                   std::ostream* log = nullptr) {
  const bool survival = train.kind() == OutcomeKind::Survival;
  std::optional<TrialDataset> transformed;
  if (survival) {
    transformed.emplace(train.with_continuous_outcome(martingale_residuals(train)));
    if (log) *log << "[" << train.study_label() << "] pre-step: martingale residuals (null model)\n";
  }
  const TrialDataset& data = survival ? *transformed : train;

  auto imputed = impute_contrasts(data, config.forest, config.impute_mode, derive_seed(config.seed, 0));
  const Eigen::MatrixXd z = data.covariates();
  const Polarity polarity = config.polarity.value_or(default_polarity(train.kind()));

  if (config.method == Method::Linear) {
    auto model = fit_sir(z, imputed.contrast, config.slices, config.ridge, data.covariate_names());
    // Least-squares calibration of the contrast on the leading direction score.
    std::vector<double> raw(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) raw[i] = score_linear(model, data[i].covariates, 0);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      mx += raw[i];
      my += imputed.contrast[i];
    }
    mx /= static_cast<double>(raw.size());
    my /= static_cast<double>(raw.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      sxy += (raw[i] - mx) * (imputed.contrast[i] - my);
      sxx += (raw[i] - mx) * (raw[i] - mx);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    LinearScorer scorer{model, 0, my - slope * mx, slope};
    std::vector<double> scores(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) scores[i] = scorer.offset + scorer.slope * raw[i];
    if (log) {
      *log << "[" << train.study_label() << "] sir: leading eigenvalue "
           << io::format_double(model.eigenvalues(0)) << ", " << config.slices << " slices\n";
    }
    return FittedPipeline{Method::Linear, TreatmentRule{std::move(scorer), config.k, polarity},
                          std::move(model), std::nullopt, std::nullopt, std::nullopt,
                          std::move(imputed), std::move(scores), survival};
  }

  std::optional<TuneResult> tuning;
  TuningCandidate chosen{config.kernel.value_or(KernelSpec::gaussian(median_heuristic_rho(z))),
                         config.lambda};
  if (config.optimize) {
    const auto grid = config.grid.empty() ? default_tuning_grid(z, config.grid_lambdas) : config.grid;
    tuning = split_tune(z, imputed.contrast, grid, derive_seed(config.seed, 1));
    chosen = grid[tuning->best_index];
    if (log) {
      *log << "[" << train.study_label() << "] tuned: " << chosen.spec.describe()
           << " lambda=" << io::format_double(chosen.lambda)
           << " cv_mse=" << io::format_double(tuning->cv_mse[tuning->best_index])
           << " holdout_mse=" << io::format_double(tuning->holdout_mse) << "\n";
    }
  }
  auto model = fit_kernel_machine(z, imputed.contrast, chosen.spec, chosen.lambda);
  std::vector<double> scores(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) scores[i] = model.intercept + model.fitted(i);
  if (log) {
    *log << "[" << train.study_label() << "] kernel machine: " << chosen.spec.describe()
         << " lambda=" << io::format_double(chosen.lambda) << "\n";
  }
  std::optional<TuningCandidate> tuned;
  if (tuning) tuned = chosen;
  return FittedPipeline{Method::Kernel, TreatmentRule{model, config.k, polarity}, std::nullopt,
                        std::move(model), std::move(tuning), std::move(tuned),
                        std::move(imputed), std::move(scores), survival};
}

struct StudyResult {
  std::string study;
  RuleEvaluation evaluation;  // failure_reason set when training or evaluation failed

  bool ok() const { return evaluation.ok(); }
};

struct MetaResult {
  Method method = Method::Linear;
  bool optimized = false;
  std::vector<std::string> covariate_names;
  std::vector<StudyResult> per_training_study;  // input order, one entry per study
  std::vector<std::string> direction_studies;
  std::vector<Eigen::VectorXd> directions_table;
  std::vector<double> direction_eigenvalues;
  std::vector<std::pair<std::string, std::vector<double>>> scores_by_study;
  std::vector<std::vector<std::string>> score_ids;

  std::vector<std::pair<std::string, std::string>> failure_reasons() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& r : per_training_study) {
      if (!r.ok()) out.emplace_back(r.study, r.evaluation.failure_reason);
    }
    return out;
  }
};

/// Each study trains a rule that is evaluated on the pooled remaining studies.
/// Per-study failures are recorded and never abort the run.
inline MetaResult run_meta(std::span<const TrialDataset> studies, const PipelineConfig& config,
                           std::ostream* log = nullptr) {
  if (studies.size() < 2) throw ValidationError("meta-analysis needs at least two studies");
  std::set<std::string> labels;
  for (const auto& s : studies) {
    if (s.covariate_names() != studies.front().covariate_names() ||
        s.kind() != studies.front().kind()) {
      throw ValidationError("studies share one covariate schema and outcome kind (study '" +
                            s.study_label() + "')");
    }
    if (!labels.insert(s.study_label()).second) {
      throw ValidationError("study labels are unique ('" + s.study_label() + "' repeats)");
    }
  }

  MetaResult result;
  result.method = config.method;
  result.optimized = config.method == Method::Kernel && config.optimize;
  result.covariate_names = studies.front().covariate_names();
  for (std::size_t s = 0; s < studies.size(); ++s) {
    const TrialDataset& train = studies[s];
    StudyResult row{train.study_label(), {}};
    std::vector<const TrialDataset*> rest;
    for (std::size_t o = 0; o < studies.size(); ++o) {
      if (o != s) rest.push_back(&studies[o]);
    }
    const TrialDataset test = TrialDataset::pooled(rest, "pooled-without-" + train.study_label());
    PipelineConfig study_config = config;
    study_config.seed = derive_seed(config.seed, 1000 + s);
    try {
      const auto fitted = fit_pipeline(train, study_config, log);
      if (fitted.directions) {
        result.direction_studies.push_back(train.study_label());
        result.directions_table.push_back(fitted.directions->directions.front());
        result.direction_eigenvalues.push_back(fitted.directions->eigenvalues(0));
      }
      result.scores_by_study.emplace_back(train.study_label(), fitted.training_scores);
      std::vector<std::string> ids;
      for (const auto& subj : train.subjects()) ids.push_back(subj.id);
      result.score_ids.push_back(std::move(ids));
      row.evaluation = evaluate_rule(fitted.rule, test);
    } catch (const std::exception& err) {
      row.evaluation = RuleEvaluation{};
      row.evaluation.n_test = test.n();
      row.evaluation.failure_reason = std::string("training failed: ") + err.what();
    }
    if (log && !row.ok()) *log << "[" << train.study_label() << "] failure: " << row.evaluation.failure_reason << "\n";
    result.per_training_study.push_back(std::move(row));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Report emitters
// ---------------------------------------------------------------------------

inline std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

inline std::string effects_header() {
  return "study,method,mode,measure,estimate,ci_low,ci_high,se,n_test,n_concordant,n_treated,"
         "n_control,status,reason\n";
}

inline std::string effects_row(const std::string& study, Method method, bool optimized,
                               OutcomeKind kind, const RuleEvaluation& ev) {
  const EffectMeasure measure =
      kind == OutcomeKind::Survival ? EffectMeasure::HazardRatio : EffectMeasure::MeanDifference;
  std::string out = csv_safe(study) + "," + to_string(method) + "," +
                    (optimized ? "with_optimization" : "without_optimization") + "," +
                    to_string(measure) + ",";
  if (ev.effect) {
    out += io::format_double(ev.effect->estimate) + "," + io::format_double(ev.effect->ci_low) + "," +
           io::format_double(ev.effect->ci_high) + "," + io::format_double(ev.effect->se) + ",";
  } else {
    out += ",,,,";
  }
  out += std::to_string(ev.n_test) + "," + std::to_string(ev.n_concordant) + "," +
         std::to_string(ev.n_treated) + "," + std::to_string(ev.n_control) + ",";
  out += ev.ok() ? "ok," : "failed," + csv_safe(ev.failure_reason);
  return out + "\n";
}

inline std::string meta_effects_rows(const MetaResult& r, OutcomeKind kind) {
  std::string out;
  for (const auto& row : r.per_training_study) {
    out += effects_row(row.study, r.method, r.optimized, kind, row.evaluation);
  }
  return out;
}

inline std::string meta_directions_csv(const MetaResult& r) {
  return directions_csv("study", r.covariate_names, r.direction_studies, r.directions_table,
                        r.direction_eigenvalues);
}

inline std::string concordance_matrix_csv(const MetaResult& r) {
  std::string out = "study";
  for (const auto& c : r.covariate_names) out += "," + c;
  out += "\n";
  for (std::size_t k = 0; k < r.directions_table.size(); ++k) {
    out += r.direction_studies[k];
    for (Eigen::Index j = 0; j < r.directions_table[k].size(); ++j) {
      out += "," + io::format_double(r.directions_table[k](j));
    }
    out += "\n";
  }
  return out;
}

inline std::string scores_by_study_csv(const MetaResult& r) {
  std::string out = "study,id,score\n";
  for (std::size_t s = 0; s < r.scores_by_study.size(); ++s) {
    const auto& [study, scores] = r.scores_by_study[s];
    for (std::size_t i = 0; i < scores.size(); ++i) {
      out += study + "," + r.score_ids[s][i] + "," + io::format_double(scores[i]) + "\n";
    }
  }
  return out;
}

}  // namespace pdir
