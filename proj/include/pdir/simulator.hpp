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
#include <limits>
#include <span>
#include <type_traits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pdir/core.hpp"
#include "pdir/error.hpp"
#include "pdir/io.hpp"
#include "pdir/rng.hpp"

namespace pdir {

enum class CovariateLaw {
  StandardNormal,
  Elliptical,       // multivariate t with 5 degrees of freedom (normal scale mixture)
  SkewedLognormal,  // exp(N(0,1)) - exp(1/2), independent columns
};

enum class NonlinearForm {
  Quadratic,  // z1^2 - 1
  Sine,       // 2 sin(z1)
  Step,       // +1 if z1 > 0 else -1
};

struct LinearTau {
  std::vector<double> beta;
};
struct NonlinearTau {
  NonlinearForm form;
};
struct NullTau {};
struct ConstantTau {
  double value;
};
using Interaction = std::variant<LinearTau, NonlinearTau, NullTau, ConstantTau>;

struct ContinuousGaussian {
  double sigma = 1.0;
};
/// Hazard base_rate * exp(main'z + t tau(z)); censoring exponential, its
/// rate bisected so the censored fraction is censor_rate.
struct ExponentialSurvival {
  double base_rate = 0.1;
  double censor_rate = 0.3;
};
using OutcomeModel = std::variant<ContinuousGaussian, ExponentialSurvival>;

struct ScenarioSpec {
  std::size_t n = 0;
  std::size_t p = 0;
  CovariateLaw covariate_law = CovariateLaw::StandardNormal;
  std::vector<double> main_effect;  // empty means zeros
  Interaction interaction = NullTau{};
  OutcomeModel outcome = ContinuousGaussian{};
  std::uint64_t seed = 0;
  std::string study_label = "sim";

  void validate() const {
    if (n < 2) throw ValidationError("scenario n ≥ 2");
    if (p < 1) throw ValidationError("scenario p ≥ 1");
    if (!main_effect.empty() && main_effect.size() != p) {
      throw ValidationError("scenario main_effect has p entries");
    }
    if (const auto* lin = std::get_if<LinearTau>(&interaction); lin && lin->beta.size() != p) {
      throw ValidationError("scenario beta has p entries");
    }
    if (const auto* g = std::get_if<ContinuousGaussian>(&outcome); g && !(g->sigma >= 0.0)) {
      throw ValidationError("scenario sigma ≥ 0");
    }
    if (const auto* s = std::get_if<ExponentialSurvival>(&outcome)) {
      if (!(s->base_rate > 0.0)) throw ValidationError("scenario base_rate > 0");
      if (!(s->censor_rate >= 0.0 && s->censor_rate < 1.0)) {
        throw ValidationError("scenario censor_rate in [0, 1)");
      }
    }
  }
};

struct SimulationTruth {
  std::vector<double> tau;                 // per subject
  std::optional<std::vector<double>> beta;  // linear interaction only
  std::vector<double> y1;                  // continuous potential outcomes (empty for survival)
  std::vector<double> y0;
  double censor_hazard = 0.0;              // survival only
};

struct Simulation {
  TrialDataset data;
  SimulationTruth truth;
};

inline double evaluate_tau(const Interaction& interaction, std::span<const double> z) {
  return std::visit(
      [&](const auto& form) -> double {
        using T = std::decay_t<decltype(form)>;
        if constexpr (std::is_same_v<T, LinearTau>) {
          double s = 0.0;
          for (std::size_t j = 0; j < z.size(); ++j) s += form.beta[j] * z[j];
          return s;
        } else if constexpr (std::is_same_v<T, NonlinearTau>) {
          switch (form.form) {
            case NonlinearForm::Quadratic: return z[0] * z[0] - 1.0;
            case NonlinearForm::Sine: return 2.0 * std::sin(z[0]);
            case NonlinearForm::Step: return z[0] > 0.0 ? 1.0 : -1.0;
          }
          return 0.0;
        } else if constexpr (std::is_same_v<T, ConstantTau>) {
          return form.value;
        } else {
          return 0.0;
        }
      },
      interaction);
}

namespace detail {

inline std::vector<double> draw_covariates(Rng& rng, CovariateLaw law, std::size_t p) {
  std::vector<double> z(p);
  for (auto& v : z) v = rng.normal();
  if (law == CovariateLaw::Elliptical) {
    constexpr int df = 5;
    double chi2 = 0.0;
    for (int k = 0; k < df; ++k) {
      const double g = rng.normal();
      chi2 += g * g;
    }
    const double scale = std::sqrt(df / chi2);
    for (auto& v : z) v *= scale;
  } else if (law == CovariateLaw::SkewedLognormal) {
    for (auto& v : z) v = std::exp(v) - std::exp(0.5);
  }
  return z;
}

}  // namespace detail

/// Draws a randomized trial with known treatment-effect structure.
///
/// Per subject, in order: covariates, treatment (fair coin), then the outcome
/// draw (one normal, or one event exponential and one censoring exponential).
inline Simulation simulate(const ScenarioSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n = spec.n, p = spec.p;
  const bool survival = std::holds_alternative<ExponentialSurvival>(spec.outcome);

  std::vector<SubjectRecord> subjects(n);
  SimulationTruth truth;
  truth.tau.resize(n);
  if (const auto* lin = std::get_if<LinearTau>(&spec.interaction)) truth.beta = lin->beta;
  std::vector<double> event_time(n), censor_draw(n);

  for (std::size_t i = 0; i < n; ++i) {
    auto& s = subjects[i];
    s.id = "s" + std::to_string(i + 1);
    s.covariates = detail::draw_covariates(rng, spec.covariate_law, p);
    s.treatment = rng.uniform() < 0.5 ? 1 : 0;
    double main = 0.0;
    for (std::size_t j = 0; j < spec.main_effect.size(); ++j) main += spec.main_effect[j] * s.covariates[j];
    const double tau = evaluate_tau(spec.interaction, s.covariates);
    truth.tau[i] = tau;
    if (!survival) {
      const double sigma = std::get<ContinuousGaussian>(spec.outcome).sigma;
      const double noise = sigma * rng.normal();
      const double y1 = main + tau + noise;
      const double y0 = main + noise;
      truth.y1.push_back(y1);
      truth.y0.push_back(y0);
      s.outcome = s.treatment ? y1 : y0;
    } else {
      const auto& surv = std::get<ExponentialSurvival>(spec.outcome);
      const double rate = surv.base_rate * std::exp(main + s.treatment * tau);
      event_time[i] = rng.exponential() / rate;
      censor_draw[i] = rng.exponential();
    }
  }

  if (survival) {
    const double target = std::get<ExponentialSurvival>(spec.outcome).censor_rate;
    auto censored_fraction = [&](double hazard) {
      std::size_t c = 0;
      for (std::size_t i = 0; i < n; ++i) c += censor_draw[i] / hazard < event_time[i];
      return static_cast<double>(c) / static_cast<double>(n);
    };
    double hazard = 0.0;
    if (target > 0.0) {
      // Bisection on log(hazard); the censored fraction is non-decreasing in it.
      double lo = std::log(1e-12), hi = std::log(1e12);
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (censored_fraction(std::exp(mid)) < target ? lo : hi) = mid;
      }
      hazard = std::exp(hi);
    }
    truth.censor_hazard = hazard;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = hazard > 0.0 ? censor_draw[i] / hazard : INFINITY;
      const bool event = event_time[i] <= c;
      double t = event ? event_time[i] : c;
      if (!(t > 0.0)) t = std::numeric_limits<double>::min();
      subjects[i].outcome = SurvivalTime{t, event ? 1 : 0};
    }
  }

  std::vector<std::string> names(p);
  for (std::size_t j = 0; j < p; ++j) names[j] = "z" + std::to_string(j + 1);
  std::size_t treated = 0;
  for (const auto& s : subjects) treated += static_cast<std::size_t>(s.treatment);
  if (treated == 0 || treated == n) {
    throw ValidationError("simulated trial has an empty arm; increase n or change the seed");
  }
  return Simulation{TrialDataset(std::move(subjects), std::move(names),
                                 survival ? OutcomeKind::Survival : OutcomeKind::Continuous,
                                 spec.study_label),
                    std::move(truth)};
}

/// truth.csv: optional "# beta=b1,...,bp" line, then id,tau rows.
inline std::string serialize_truth(const TrialDataset& data, const SimulationTruth& truth) {
  std::string out;
  if (truth.beta) {
    out += "# beta=";
    for (std::size_t j = 0; j < truth.beta->size(); ++j) {
      out += (j ? "," : "") + io::format_double((*truth.beta)[j]);
    }
    out += "\n";
  }
  out += "id,tau\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    out += data[i].id + "," + io::format_double(truth.tau[i]) + "\n";
  }
  return out;
}

}  // namespace pdir
