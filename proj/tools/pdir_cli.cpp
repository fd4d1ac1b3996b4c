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

// Command-line front end: simulate, fit, evaluate, meta.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdir/commands.hpp"
#include "pdir/io.hpp"

namespace {

struct Flags {
  std::string config;
  std::string method;
  std::string seed;
  std::string out_dir;
  std::string kernel;
  std::optional<double> k;
  std::optional<int> slices;
  std::optional<double> rho;
  std::optional<double> lambda;
  std::optional<bool> optimize;
  std::string model;
  std::vector<std::string> inputs;
};

void add_common(CLI::App* cmd, Flags& f, bool run_flags) {
  cmd->add_option("--config", f.config, "key = value configuration file");
  cmd->add_option("--seed", f.seed, "master seed (overrides 'seed')");
  cmd->add_option("--out-dir", f.out_dir, "output directory (overrides 'out_dir')");
  if (!run_flags) return;
  cmd->add_option("--method", f.method, "linear | kernel (overrides 'method')");
  cmd->add_flag("--optimize,!--no-optimize", f.optimize, "split-sample kernel tuning (overrides 'optimize')");
  cmd->add_option("--k", f.k, "treatment threshold (overrides 'rule.k')");
  cmd->add_option("--slices", f.slices, "SIR slices (overrides 'sir.slices')");
  cmd->add_option("--kernel", f.kernel, "gaussian | matern | cauchy | powexp (overrides 'kernel.family')");
  cmd->add_option("--rho", f.rho, "Gaussian rho (overrides 'kernel.rho')");
  cmd->add_option("--lambda", f.lambda, "kernel lambda (overrides 'kernel.lambda')");
}

pdir::cli::Invocation to_invocation(const Flags& f) {
  using pdir::io::format_double;
  pdir::cli::Invocation inv;
  if (!f.config.empty()) inv.config = f.config;
  auto& o = inv.overrides;
  if (!f.seed.empty()) o.emplace_back("seed", f.seed);
  if (!f.out_dir.empty()) o.emplace_back("out_dir", f.out_dir);
  if (!f.method.empty()) o.emplace_back("method", f.method);
  if (f.optimize) o.emplace_back("optimize", *f.optimize ? "true" : "false");
  if (f.k) o.emplace_back("rule.k", format_double(*f.k));
  if (f.slices) o.emplace_back("sir.slices", std::to_string(*f.slices));
  if (!f.kernel.empty()) o.emplace_back("kernel.family", f.kernel);
  if (f.rho) o.emplace_back("kernel.rho", format_double(*f.rho));
  if (f.lambda) o.emplace_back("kernel.lambda", format_double(*f.lambda));
  if (!f.model.empty()) inv.model = f.model;
  for (const auto& p : f.inputs) inv.inputs.emplace_back(p);
  return inv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pdir: predictive directions for individualized treatment selection"};
  app.require_subcommand(1);
  app.footer(pdir::run_config_help() + "\n" + pdir::scenario_help() +
             "\nExit codes: 0 success, 2 input or configuration error, 3 estimation failure.");

  Flags sim_flags, fit_flags, eval_flags, meta_flags;
  auto* sim = app.add_subcommand("simulate", "draw a synthetic randomized trial with known truth");
  add_common(sim, sim_flags, false);

  auto* fit = app.add_subcommand("fit", "impute contrasts and fit a linear or kernel direction model");
  add_common(fit, fit_flags, true);
  fit->add_option("dataset", fit_flags.inputs, "training dataset CSV")->required();

  auto* eval = app.add_subcommand("evaluate", "apply a fitted rule to a test trial");
  add_common(eval, eval_flags, true);
  eval->add_option("--model", eval_flags.model, "model.json written by fit")->required();
  eval->add_option("dataset", eval_flags.inputs, "test dataset CSV")->required();

  auto* meta = app.add_subcommand("meta", "train on each study, test on the pooled rest");
  add_common(meta, meta_flags, true);
  meta->add_option("datasets", meta_flags.inputs, "study dataset CSVs (two or more)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pdir::cli::kInvalidInput;
  }

  if (*sim) return pdir::cli::cmd_simulate(to_invocation(sim_flags), std::cout, std::cerr);
  if (*fit) return pdir::cli::cmd_fit(to_invocation(fit_flags), std::cout, std::cerr);
  if (*eval) return pdir::cli::cmd_evaluate(to_invocation(eval_flags), std::cout, std::cerr);
  return pdir::cli::cmd_meta(to_invocation(meta_flags), std::cout, std::cerr);
}
