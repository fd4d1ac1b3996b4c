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

// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <sys/wait.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>

#include "pdir/pdir.hpp"
#include "test_support.hpp"

namespace {

using namespace pdir;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

int g_failures = 0;

void Report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << ". " << name << ": " << detail << std::endl;
  if (!pass) ++g_failures;
}

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

std::string Fmt(const char* fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), fmt, a, b, c);
  return buf;
}

Eigen::VectorXd E1(int p) {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
  e(0) = 1.0;
  return e;
}

void SirRecovery() {
  const auto start = Clock::now();
  int hits = 0;
  double worst = 1.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    ScenarioSpec spec;
    spec.n = 2000;
    spec.p = 5;
    spec.interaction = LinearTau{{1, 0, 0, 0, 0}};
    spec.outcome = ContinuousGaussian{0.5};
    spec.seed = seed;
    const auto sim = simulate(spec);
    PipelineConfig config;
    config.method = Method::Linear;
    config.slices = 10;
    config.seed = seed;
    const auto fitted = fit_pipeline(sim.data, config);
    const double c = testing::abs_cos(fitted.directions->directions[0], E1(5));
    worst = std::min(worst, c);
    hits += c >= 0.95;
  }
  const double secs = Seconds(start);
  Report(1, "SIR recovery", hits >= 18 && secs < 30.0,
         Fmt("%.0f/20 seeds with |cos| >= 0.95 (min %.4f), %.1f s", hits, worst, secs));
}

void KernelOracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Eigen::MatrixXd z = testing::random_normal(30, 3, seed);
    const Eigen::MatrixXd yz = testing::random_normal(30, 1, 1000 + seed);
    std::vector<double> y(yz.data(), yz.data() + 30);
    const double lambda = std::pow(10.0, -2.0 + 0.2 * static_cast<double>(seed));
    const KernelSpec specs[] = {KernelSpec::gaussian(1.5), KernelSpec::matern(1.0, 1.5),
                                KernelSpec::generalized_cauchy(1.0, 1.5, 2.0),
                                KernelSpec::powered_exponential(1.0, 1.0)};
    const KernelSpec& spec = specs[seed % 4];
    const auto model = fit_kernel_machine(z, y, spec, lambda);
    const Eigen::MatrixXd k = gram(spec, z);
    const Eigen::VectorXd yc = yz.col(0).array() - yz.col(0).mean();
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(30, 30) + k / lambda;
    const Eigen::VectorXd h = (k / lambda) * (testing::gauss_jordan_inverse(a) * yc);
    worst = std::max(worst, (model.fitted - h).cwiseAbs().maxCoeff());
  }
  Report(2, "kernel-machine oracle", worst <= 1e-8,
         Fmt("max |h - dense-inverse h| over 20 problems = %.3g (tol 1e-8)", worst));
}

void KernelValidity() {
  const std::vector<KernelSpec> specs{
      KernelSpec::gaussian(0.5),        KernelSpec::gaussian(1.0),
      KernelSpec::gaussian(4.0),        KernelSpec::matern(0.5, 0.5),
      KernelSpec::matern(1.0, 1.5),     KernelSpec::matern(2.0, 2.5),
      KernelSpec::generalized_cauchy(1.0, 1.0, 1.0), KernelSpec::generalized_cauchy(0.5, 2.0, 3.0),
      KernelSpec::generalized_cauchy(2.0, 0.5, 0.5), KernelSpec::powered_exponential(1.0, 0.5),
      KernelSpec::powered_exponential(0.5, 1.5),     KernelSpec::powered_exponential(2.0, 2.0)};
  const Eigen::MatrixXd z = testing::random_normal(100, 3, 7);
  double min_eig = std::numeric_limits<double>::infinity();
  for (const auto& spec : specs) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram(spec, z), Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, eig.eigenvalues().minCoeff());
  }
  double matern_err = 0.0;
  for (int k = 1; k <= 10; ++k) {
    const double c = 1.7, d = 0.37 * k;
    matern_err = std::max(matern_err, std::abs(KernelSpec::matern(c, 0.5).from_distance(d) - std::exp(-d / c)));
  }
  Report(3, "kernel validity", min_eig >= -1e-8 && matern_err <= 1e-12,
         Fmt("min Gram eigenvalue over 12 specs = %.3g; max |Matern(1/2) - exp(-d/c)| = %.3g", min_eig,
             matern_err));
}

void MartingaleResiduals() {
  double worst_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    ScenarioSpec spec;
    spec.n = 20 + 37 * seed;
    spec.p = 2;
    spec.interaction = LinearTau{{0.5, -0.5}};
    spec.outcome = ExponentialSurvival{0.05 * static_cast<double>(1 + seed % 5), 0.1 * static_cast<double>(seed % 7)};
    spec.seed = seed;
    const auto sim = simulate(spec);
    double sum = 0.0;
    for (double r : martingale_residuals(sim.data)) sum += r;
    worst_sum = std::max(worst_sum, std::abs(sum));
  }
  const std::vector<double> t{1.0, 2.0};
  const std::vector<int> e{1, 1};
  const auto r = martingale_residuals(t, e);
  const double hand_err = std::max(std::abs(r[0] - 0.5), std::abs(r[1] + 0.5));
  Report(4, "martingale residuals", worst_sum <= 1e-10 && hand_err <= 1e-12,
         Fmt("max |sum| over 50 datasets = %.3g; n=2 example (%.17g, %.17g)", worst_sum, r[0], r[1]));
}

void CoxOracle() {
  double worst_beta = 0.0, worst_swap = 0.0;
  int checked = 0, skipped = 0;
  Rng rng(99);
  while (checked < 10) {
    const std::size_t n = 6 + rng.uniform_index(7);
    std::vector<double> t(n);
    std::vector<int> ev(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = static_cast<int>(rng.uniform_index(2));
      t[i] = rng.exponential() * (g[i] ? 0.7 : 1.0);  // continuous draws: tie-free
      ev[i] = rng.uniform() < 0.8 ? 1 : 0;
    }
    HazardRatioReport fit;
    try {
      fit = fit_cox_two_group(t, ev, g);
    } catch (const EstimationError&) {
      ++skipped;  // no finite maximizer (monotone likelihood or one-group events)
      continue;
    }
    const double oracle = testing::grid_argmax(
        [&](double b) { return testing::partial_loglik(t, ev, g, b); }, -10.0, 10.0, 1e-4);
    worst_beta = std::max(worst_beta, std::abs(fit.log_hr - oracle));
    std::vector<int> swapped(n);
    for (std::size_t i = 0; i < n; ++i) swapped[i] = 1 - g[i];
    const auto back = fit_cox_two_group(t, ev, swapped);
    worst_swap = std::max(worst_swap, std::abs(fit.hr - 1.0 / back.hr));
    ++checked;
  }
  Report(5, "Cox oracle", worst_beta <= 1e-4 && worst_swap <= 1e-8,
         Fmt("max |beta - grid argmax| = %.3g over 10 datasets; max |HR - 1/HR_swapped| = %.3g (%.0f "
             "degenerate draws skipped)",
             worst_beta, worst_swap, skipped));
}

Simulation SurvivalTrial(Interaction tau, std::size_t n, std::uint64_t seed) {
  ScenarioSpec spec;
  spec.n = n;
  spec.p = 5;
  spec.interaction = std::move(tau);
  spec.outcome = ExponentialSurvival{0.1, 0.3};
  spec.seed = seed;
  return simulate(spec);
}

void EndToEndRuleQuality() {
  const auto start = Clock::now();
  int hits = 0, failed = 0;
  double mean_gain = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto train = SurvivalTrial(LinearTau{{1, 0, 0, 0, 0}}, 2000, derive_seed(seed, 0));
    const auto test = SurvivalTrial(LinearTau{{1, 0, 0, 0, 0}}, 2000, derive_seed(seed, 1));
    PipelineConfig config;
    config.method = Method::Kernel;
    config.seed = seed;
    const auto fitted = fit_pipeline(train.data, config);
    const auto sub = evaluate_rule(fitted.rule, test.data);
    const auto all = overall_effect(test.data);
    if (!sub.ok() || !all.ok()) {
      ++failed;
      continue;
    }
    const double gain = std::log(all.effect->estimate) - std::log(sub.effect->estimate);
    mean_gain += gain / 20.0;
    hits += gain >= 0.15;
  }
  const double secs = Seconds(start);
  Report(6, "end-to-end rule quality", hits >= 16 && secs < 300.0,
         Fmt("%.0f/20 seeds with subgroup log-HR >= 0.15 below overall (mean gap %.3f), %.1f s", hits,
             mean_gain, secs) +
             (failed ? " (" + std::to_string(failed) + " failed evaluations)" : ""));
}

void NullCalibration() {
  const auto start = Clock::now();
  int covered = 0, failed = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto train = SurvivalTrial(NullTau{}, 1000, derive_seed(seed, 10));
    const auto test = SurvivalTrial(NullTau{}, 1000, derive_seed(seed, 11));
    PipelineConfig config;
    config.method = Method::Kernel;
    config.seed = seed;
    const auto ev = evaluate_rule(fit_pipeline(train.data, config).rule, test.data);
    if (!ev.ok()) {
      ++failed;
      continue;
    }
    covered += ev.effect->covers_null();
  }
  Report(7, "null calibration", covered >= 85,
         Fmt("%.0f/100 concordance-subgroup CIs cover HR = 1 (%.0f failed), %.1f s", covered, failed,
             Seconds(start)));
}

void FailurePath() {
  // A uniformly protective treatment makes the rule treat everyone, so the
  // concordance subgroup of any test trial has no controls.
  bool pass = true;
  std::string detail;
  try {
    std::vector<TrialDataset> studies;
    for (int s = 0; s < 3; ++s) {
      ScenarioSpec spec;
      spec.n = 600;
      spec.p = 3;
      spec.outcome = ExponentialSurvival{0.1, 0.3};
      spec.interaction = s == 0 ? Interaction{ConstantTau{std::log(0.05)}} : Interaction{LinearTau{{1, 0, 0}}};
      spec.seed = 500 + s;
      spec.study_label = "study" + std::to_string(s + 1);
      studies.push_back(simulate(spec).data);
    }
    PipelineConfig config;
    config.method = Method::Linear;
    config.seed = 5;
    const auto result = run_meta(studies, config);
    const auto failures = result.failure_reasons();
    const std::string rows = meta_effects_rows(result, OutcomeKind::Survival);
    pass = failures.size() == 1 && failures[0].first == "study1" &&
           failures[0].second.find("empty control arm") != std::string::npos &&
           rows.find("study1,linear,without_optimization,hazard_ratio,,,,,") == 0 &&
           result.per_training_study.size() == 3 && result.per_training_study[1].ok() &&
           result.per_training_study[2].ok();
    detail = failures.empty() ? "no failure recorded"
                              : failures[0].first + " -> \"" + failures[0].second + "\"; other studies ok";
  } catch (const std::exception& e) {
    pass = false;
    detail = std::string("threw: ") + e.what();
  }
  Report(8, "failure-path fidelity", pass, detail);
}

int System(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Runs `args` twice into the same fresh dir/name/run1 (stdout names the paths);
// true when exit codes, stdout and every written file are byte-identical.
bool RerunIdentical(const fs::path& dir, const std::string& name, const std::string& args, std::string& why) {
  std::string outputs[2];
  const fs::path out = dir / name / "run1";
  const fs::path log = dir / name / "stdout.txt";
  for (int k = 0; k < 2; ++k) {
    fs::remove_all(out);
    fs::create_directories(out);
    const int code = System(std::string(PDIR_CLI_PATH) + " " + args + " --out-dir " + out.string() + " > " +
                            log.string() + " 2> /dev/null");
    if (code != 0) {
      why = name + " exited " + std::to_string(code);
      return false;
    }
    outputs[k] = testing::read_file(log);
    std::vector<fs::path> files(fs::directory_iterator(out), fs::directory_iterator{});
    std::sort(files.begin(), files.end());
    for (const auto& f : files) outputs[k] += "\n--" + f.filename().string() + "--\n" + testing::read_file(f);
  }
  if (outputs[0] != outputs[1]) {
    why = name + " outputs differ";
    return false;
  }
  return true;
}

void Determinism() {
  const auto start = Clock::now();
  const fs::path dir = testing::scratch_dir("acceptance_determinism");
  testing::write_text(dir / "cont.cfg",
                      "scenario.n = 400\nscenario.p = 3\nscenario.tau = linear\nscenario.beta = 1, 0, 0\n");
  testing::write_text(dir / "surv.cfg",
                      "scenario.n = 300\nscenario.p = 3\nscenario.tau = sine\nscenario.outcome = survival\n");
  testing::write_text(dir / "run.cfg", "forest.n_trees = 100\n");
  std::string why;
  bool pass = true;
  std::vector<std::string> studies;
  for (int s = 1; s <= 3 && pass; ++s) {
    const std::string label = "S" + std::to_string(s);
    pass = RerunIdentical(dir, "sim" + label,
                          "simulate --config " + (dir / "surv.cfg").string() + " --seed " + std::to_string(s), why);
    if (pass) {
      const fs::path data = dir / ("sim" + label) / (label + ".csv");
      fs::copy_file(dir / ("sim" + label) / "run1" / "dataset.csv", data, fs::copy_options::overwrite_existing);
      studies.push_back(data.string());
    }
  }
  pass = pass && RerunIdentical(dir, "simC", "simulate --config " + (dir / "cont.cfg").string() + " --seed 9", why);
  const std::string cont = (dir / "simC" / "run1" / "dataset.csv").string();
  const std::string cfg = " --config " + (dir / "run.cfg").string();
  pass = pass && RerunIdentical(dir, "fitLinear", "fit" + cfg + " --seed 4 " + cont, why);
  pass = pass && RerunIdentical(dir, "fitKernel", "fit" + cfg + " --seed 4 --method kernel --optimize " + cont, why);
  pass = pass && RerunIdentical(dir, "fitSurvival", "fit" + cfg + " --seed 4 --method kernel " + studies[0], why);
  pass = pass && RerunIdentical(dir, "evaluate",
                                "evaluate --model " + (dir / "fitLinear" / "run1" / "model.json").string() + " " + cont,
                                why);
  pass = pass && RerunIdentical(dir, "evaluateKernel",
                                "evaluate --model " + (dir / "fitSurvival" / "run1" / "model.json").string() + " " +
                                    studies[1],
                                why);
  pass = pass && RerunIdentical(dir, "metaLinear", "meta" + cfg + " --seed 2 " + studies[0] + " " + studies[1] + " " +
                                                       studies[2],
                                why);
  pass = pass && RerunIdentical(dir, "metaKernel", "meta" + cfg + " --seed 2 --method kernel --optimize " +
                                                       studies[0] + " " + studies[1] + " " + studies[2],
                                why);
  Report(9, "determinism", pass,
         pass ? Fmt("simulate, fit (linear, kernel, survival), evaluate and meta reruns byte-identical, %.1f s",
                    Seconds(start))
              : why);
}

}  // namespace

// With arguments, runs only the listed criteria (e.g. `acceptance 6 9`).
int main(int argc, char** argv) {
  void (*const criteria[])() = {SirRecovery,         KernelOracle,    KernelValidity,
                                MartingaleResiduals, CoxOracle,       EndToEndRuleQuality,
                                NullCalibration,     FailurePath,     Determinism};
  std::vector<bool> selected(9, argc == 1);
  for (int a = 1; a < argc; ++a) {
    const int id = std::atoi(argv[a]);
    if (id < 1 || id > 9) {
      std::cerr << "unknown criterion '" << argv[a] << "'\n";
      return 2;
    }
    selected[id - 1] = true;
  }
  std::cout << "acceptance suite" << std::endl;
  for (int c = 0; c < 9; ++c) {
    if (selected[c]) criteria[c]();
  }
  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed")
            << std::endl;
  return g_failures == 0 ? 0 : 1;
}
