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

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pdir/error.hpp"
#include "pdir/evaluate.hpp"
#include "pdir/io.hpp"
#include "pdir/simulator.hpp"

namespace pdir {

/// Flat `key = value` configuration with dotted section keys.
///
/// Blank lines and lines starting with '#' are ignored. A later assignment
/// to the same key replaces the earlier one, which is how command-line flags
/// override file values.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& source = "config") {
    KeyValueConfig cfg;
    std::size_t line_no = 0, start = 0;
    while (start < text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      const std::string_view line = io::trim(text.substr(start, end - start));
      ++line_no;
      start = end + 1;
      if (line.empty() || line.front() == '#') continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ParseError(source + " line " + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key(io::trim(line.substr(0, eq)));
      if (key.empty()) throw ParseError(source + " line " + std::to_string(line_no) + ": empty key");
      cfg.values_[key] = std::string(io::trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::string text;
    for (const auto& line : io::read_lines(path)) text += line + "\n";
    return parse(text, path.string());
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::optional<std::string> get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string require(const std::string& key) const {
    auto v = get(key);
    if (!v) throw ValidationError("missing required field '" + key + "'");
    return *v;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? require_double(key) : fallback;
  }

  double require_double(const std::string& key) const {
    const auto v = io::parse_double(require(key));
    if (!v || !std::isfinite(*v)) throw ValidationError("field '" + key + "' must be a finite number");
    return *v;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string s = require(key);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ValidationError("field '" + key + "' must be an integer");
    }
    return v;
  }

  std::uint64_t require_seed(const std::string& key = "seed") const {
    const std::string s = require(key);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ValidationError("field '" + key + "' must be a non-negative integer");
    }
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string s = require(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ValidationError("field '" + key + "' must be true or false");
  }

  std::vector<double> get_list(const std::string& key) const {
    std::vector<double> out;
    if (!has(key)) return out;
    for (auto field : io::split_csv_line(require(key))) {
      const auto v = io::parse_double(field);
      if (!v) throw ValidationError("field '" + key + "' must be a comma-separated list of numbers");
      out.push_back(*v);
    }
    return out;
  }

  /// Rejects keys outside `known`, naming the first offender.
  void check_known(const std::set<std::string>& known) const {
    for (const auto& [key, value] : values_) {
      if (!known.count(key)) throw ValidationError("unknown configuration field '" + key + "'");
    }
  }

 private:
  std::map<std::string, std::string> values_;
};

inline const std::set<std::string>& run_config_keys() {
  static const std::set<std::string> keys{
      "method",         "seed",          "optimize",     "out_dir",      "forest.n_trees",
      "forest.mtry",    "forest.min_node", "forest.mode", "forest.bootstrap", "forest.threads",
      "sir.slices",     "sir.ridge",     "kernel.family", "kernel.rho",   "kernel.c",
      "kernel.nu",      "kernel.alpha",  "kernel.tau",   "kernel.lambda", "tune.rho",
      "tune.lambda",    "rule.k",        "rule.polarity"};
  return keys;
}

/// Text for --help: every run-configuration key with its default.
inline std::string run_config_help() {
  return R"(Configuration keys (file `key = value`; flags override the file):
  method            linear | kernel                         [linear]
  seed              non-negative integer                     [required for fit, meta]
  optimize          split-sample kernel tuning               [false]
  out_dir           output directory                         [required]
  forest.n_trees    trees per imputation forest              [500]
  forest.mtry       features tried per split (0 = ceil(m/3)) [0]
  forest.min_node   minimum node size                        [5]
  forest.mode       joint | per_arm                          [joint]
  forest.bootstrap  resample rows per tree                   [true]
  forest.threads    worker threads (0 = all cores)           [0]
  sir.slices        number of slices d                       [10]
  sir.ridge         covariance ridge                         [1e-8 * trace / p]
  kernel.family     gaussian | matern | cauchy | powexp      [gaussian]
  kernel.rho        Gaussian rho                             [median heuristic]
  kernel.c          scale c (matern, cauchy, powexp)         [1]
  kernel.nu         Matern order: 0.5 | 1.5 | 2.5            [1.5]
  kernel.alpha      shape alpha (cauchy, powexp)             [1]
  kernel.tau        Cauchy tau                               [1]
  kernel.lambda     regularization lambda                    [1]
  tune.rho          Gaussian rho grid for tuning             [{0.25, 1, 4} x median heuristic]
  tune.lambda       lambda grid for tuning                   [0.1, 1, 10]
  rule.k            treatment threshold k                    [0]
  rule.polarity     greater | lesser | auto                  [auto: greater for continuous,
                                                              lesser for survival]
)";
}

struct RunConfig {
  PipelineConfig pipeline;
  std::optional<std::filesystem::path> out_dir;
  bool has_seed = false;
};

inline RunConfig parse_run_config(const KeyValueConfig& cfg, bool require_seed) {
  cfg.check_known(run_config_keys());
  RunConfig rc;
  auto& pc = rc.pipeline;

  const std::string method = cfg.get("method").value_or("linear");
  if (method == "linear") pc.method = Method::Linear;
  else if (method == "kernel") pc.method = Method::Kernel;
  else throw ValidationError("field 'method' must be linear or kernel");

  if (require_seed || cfg.has("seed")) {
    pc.seed = cfg.require_seed("seed");
    rc.has_seed = true;
  }
  pc.optimize = cfg.get_bool("optimize", false);
  if (auto dir = cfg.get("out_dir")) rc.out_dir = *dir;

  pc.forest.n_trees = static_cast<int>(cfg.get_int("forest.n_trees", 500));
  pc.forest.mtry = static_cast<int>(cfg.get_int("forest.mtry", 0));
  pc.forest.min_node = static_cast<int>(cfg.get_int("forest.min_node", 5));
  pc.forest.bootstrap = cfg.get_bool("forest.bootstrap", true);
  pc.forest.threads = static_cast<int>(cfg.get_int("forest.threads", 0));
  const std::string mode = cfg.get("forest.mode").value_or("joint");
  if (mode == "joint") pc.impute_mode = ImputeMode::Joint;
  else if (mode == "per_arm") pc.impute_mode = ImputeMode::PerArm;
  else throw ValidationError("field 'forest.mode' must be joint or per_arm");

  pc.slices = static_cast<int>(cfg.get_int("sir.slices", kDefaultSlices));
  if (cfg.has("sir.ridge")) pc.ridge = cfg.require_double("sir.ridge");

  const std::string family = cfg.get("kernel.family").value_or("gaussian");
  const double c = cfg.get_double("kernel.c", 1.0);
  const double alpha = cfg.get_double("kernel.alpha", 1.0);
  if (family == "gaussian") {
    if (cfg.has("kernel.rho")) pc.kernel = KernelSpec::gaussian(cfg.require_double("kernel.rho"));
  } else if (family == "matern") {
    pc.kernel = KernelSpec::matern(c, cfg.get_double("kernel.nu", 1.5));
  } else if (family == "cauchy") {
    pc.kernel = KernelSpec::generalized_cauchy(c, alpha, cfg.get_double("kernel.tau", 1.0));
  } else if (family == "powexp") {
    pc.kernel = KernelSpec::powered_exponential(c, alpha);
  } else {
    throw ValidationError("field 'kernel.family' must be gaussian, matern, cauchy or powexp");
  }
  pc.lambda = cfg.get_double("kernel.lambda", 1.0);
  if (!(pc.lambda > 0.0)) throw ValidationError("field 'kernel.lambda' must be > 0");

  const auto tune_lambda = cfg.get_list("tune.lambda");
  if (!tune_lambda.empty()) pc.grid_lambdas = tune_lambda;
  for (double rho : cfg.get_list("tune.rho")) {
    for (double lambda : pc.grid_lambdas) pc.grid.push_back({KernelSpec::gaussian(rho), lambda});
  }
  pc.k = cfg.get_double("rule.k", 0.0);
  const std::string polarity = cfg.get("rule.polarity").value_or("auto");
  if (polarity == "greater") pc.polarity = Polarity::GreaterTreats;
  else if (polarity == "lesser") pc.polarity = Polarity::LesserTreats;
  else if (polarity != "auto") throw ValidationError("field 'rule.polarity' must be greater, lesser or auto");
  return rc;
}

inline const std::set<std::string>& scenario_keys() {
  static const std::set<std::string> keys{
      "seed", "out_dir", "scenario.n", "scenario.p", "scenario.covariates", "scenario.main_effect",
      "scenario.tau", "scenario.beta", "scenario.tau_value", "scenario.outcome", "scenario.sigma",
      "scenario.base_rate", "scenario.censor_rate", "scenario.label"};
  return keys;
}

inline std::string scenario_help() {
  return R"(Scenario keys for `simulate`:
  seed                  non-negative integer                          [required]
  out_dir               output directory                              [required]
  scenario.n            subjects                                      [required]
  scenario.p            covariates                                    [required]
  scenario.covariates   normal | elliptical | lognormal               [normal]
  scenario.main_effect  p comma-separated coefficients                [zeros]
  scenario.tau          null | linear | quadratic | sine | step | constant   [null]
  scenario.beta         p coefficients for tau = linear
  scenario.tau_value    value for tau = constant
  scenario.outcome      gaussian | survival                           [gaussian]
  scenario.sigma        noise sd (gaussian)                           [1]
  scenario.base_rate    baseline hazard (survival)                    [0.1]
  scenario.censor_rate  target censored fraction (survival)           [0.3]
  scenario.label        study label                                   [sim]
)";
}

inline ScenarioSpec parse_scenario(const KeyValueConfig& cfg) {
  cfg.check_known(scenario_keys());
  ScenarioSpec s;
  s.seed = cfg.require_seed("seed");
  const auto n = cfg.get_int("scenario.n", -1);
  const auto p = cfg.get_int("scenario.p", -1);
  if (!cfg.has("scenario.n")) throw ValidationError("missing required field 'scenario.n'");
  if (!cfg.has("scenario.p")) throw ValidationError("missing required field 'scenario.p'");
  if (n < 2) throw ValidationError("field 'scenario.n' must be ≥ 2");
  if (p < 1) throw ValidationError("field 'scenario.p' must be ≥ 1");
  s.n = static_cast<std::size_t>(n);
  s.p = static_cast<std::size_t>(p);

  const std::string law = cfg.get("scenario.covariates").value_or("normal");
  if (law == "normal") s.covariate_law = CovariateLaw::StandardNormal;
  else if (law == "elliptical") s.covariate_law = CovariateLaw::Elliptical;
  else if (law == "lognormal") s.covariate_law = CovariateLaw::SkewedLognormal;
  else throw ValidationError("field 'scenario.covariates' must be normal, elliptical or lognormal");

  s.main_effect = cfg.get_list("scenario.main_effect");
  const std::string tau = cfg.get("scenario.tau").value_or("null");
  if (tau == "null") s.interaction = NullTau{};
  else if (tau == "linear") s.interaction = LinearTau{cfg.get_list("scenario.beta")};
  else if (tau == "quadratic") s.interaction = NonlinearTau{NonlinearForm::Quadratic};
  else if (tau == "sine") s.interaction = NonlinearTau{NonlinearForm::Sine};
  else if (tau == "step") s.interaction = NonlinearTau{NonlinearForm::Step};
  else if (tau == "constant") s.interaction = ConstantTau{cfg.require_double("scenario.tau_value")};
  else throw ValidationError("field 'scenario.tau' must be null, linear, quadratic, sine, step or constant");

  const std::string outcome = cfg.get("scenario.outcome").value_or("gaussian");
  if (outcome == "gaussian") {
    s.outcome = ContinuousGaussian{cfg.get_double("scenario.sigma", 1.0)};
  } else if (outcome == "survival") {
    s.outcome = ExponentialSurvival{cfg.get_double("scenario.base_rate", 0.1),
                                    cfg.get_double("scenario.censor_rate", 0.3)};
  } else {
    throw ValidationError("field 'scenario.outcome' must be gaussian or survival");
  }
  s.study_label = cfg.get("scenario.label").value_or("sim");
  s.validate();
  return s;
}

}  // namespace pdir
