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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pdir/core.hpp"
#include "pdir/error.hpp"

namespace pdir {

inline constexpr double kNormalQuantile975 = 1.96;

/// Nelson-Aalen cumulative hazard of a pooled sample.
struct NullHazardModel {
  std::vector<double> event_times;  // ascending, distinct
  std::vector<double> cumhaz;

  /// Right-continuous step lookup: includes the jump at t itself.
  double at(double t) const {
    const auto it = std::upper_bound(event_times.begin(), event_times.end(), t);
    if (it == event_times.begin()) return 0.0;
    return cumhaz[static_cast<std::size_t>(it - event_times.begin()) - 1];
  }
};

inline NullHazardModel fit_nelson_aalen(std::span<const double> times, std::span<const int> events) {
  if (times.size() != events.size()) throw ValidationError("times and events have equal length");
  const std::size_t n = times.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] < times[b]; });

  NullHazardModel model;
  double cum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const double t = times[order[i]];
    const std::size_t at_risk = n - i;
    std::size_t deaths = 0, j = i;
    for (; j < n && times[order[j]] == t; ++j) deaths += static_cast<std::size_t>(events[order[j]]);
    if (deaths > 0) {
      cum += static_cast<double>(deaths) / static_cast<double>(at_risk);
      model.event_times.push_back(t);
      model.cumhaz.push_back(cum);
    }
    i = j;
  }
  return model;
}

/// Null-model martingale residuals M_i = event_i - Lambda(time_i).
inline std::vector<double> martingale_residuals(std::span<const double> times,
                                                std::span<const int> events) {
  const auto model = fit_nelson_aalen(times, events);
  if (model.event_times.empty()) {
    throw EstimationError("survival", "martingale residuals need at least one event");
  }
  std::vector<double> r(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) r[i] = events[i] - model.at(times[i]);
  return r;
}

inline std::vector<double> martingale_residuals(const TrialDataset& data) {
  if (data.kind() != OutcomeKind::Survival) {
    throw ValidationError("martingale residuals need a survival outcome");
  }
  return martingale_residuals(data.times(), data.events());
}

struct HazardRatioReport {
  double hr = 1.0;
  double ci_low = 1.0;
  double ci_high = 1.0;
  double log_hr = 0.0;
  double se_log_hr = 0.0;
  std::size_t n_used = 0;
  std::size_t n_events = 0;
  int iterations = 0;
};

namespace detail {

// Risk-set summary at one distinct event time for a binary covariate.
struct CoxEventTime {
  double at_risk0;
  double at_risk1;
  double deaths;
  double deaths1;
};

inline std::vector<CoxEventTime> cox_event_times(std::span<const double> times,
                                                 std::span<const int> events,
                                                 std::span<const int> group) {
  const std::size_t n = times.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] > times[b]; });
  // Walk from the largest time down so the risk set only grows.
  std::vector<CoxEventTime> out;
  double r0 = 0.0, r1 = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const double t = times[order[i]];
    double d = 0.0, d1 = 0.0;
    std::size_t j = i;
    for (; j < n && times[order[j]] == t; ++j) {
      const std::size_t s = order[j];
      (group[s] ? r1 : r0) += 1.0;
      if (events[s]) {
        d += 1.0;
        d1 += group[s];
      }
    }
    if (d > 0.0) out.push_back({r0, r1, d, d1});
    i = j;
  }
  return out;
}

struct CoxTerms {
  double loglik = 0.0;
  double score = 0.0;
  double information = 0.0;
};

// Breslow partial likelihood and its first two derivatives.
inline CoxTerms cox_terms(const std::vector<CoxEventTime>& ets, double beta) {
  CoxTerms out;
  const double eb = std::exp(beta);
  for (const auto& e : ets) {
    const double s0 = e.at_risk0 + e.at_risk1 * eb;
    const double frac = e.at_risk1 * eb / s0;
    out.loglik += beta * e.deaths1 - e.deaths * std::log(s0);
    out.score += e.deaths1 - e.deaths * frac;
    out.information += e.deaths * frac * (1.0 - frac);
  }
  return out;
}

}  // namespace detail

inline constexpr int kCoxMaxIterations = 50;
inline constexpr double kCoxScoreTolerance = 1e-10;

/// Two-group Cox model (group 1 vs group 0), Breslow ties, Newton-Raphson from 0.
inline HazardRatioReport fit_cox_two_group(std::span<const double> times, std::span<const int> events,
                                           std::span<const int> group) {
  const std::size_t n = times.size();
  if (events.size() != n || group.size() != n) {
    throw ValidationError("times, events and group have equal length");
  }
  std::size_t events0 = 0, events1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(times[i] > 0.0) || !std::isfinite(times[i])) throw ValidationError("time > 0");
    if ((events[i] != 0 && events[i] != 1) || (group[i] != 0 && group[i] != 1)) {
      throw ValidationError("event and group are binary");
    }
    if (events[i]) (group[i] ? events1 : events0) += 1;
  }
  if (events0 == 0 || events1 == 0) {
    throw EstimationError("survival", "hazard ratio needs at least one event in each group");
  }

  const auto ets = detail::cox_event_times(times, events, group);
  // The score is decreasing in beta; a finite maximizer exists iff its limits
  // at -inf and +inf straddle zero.
  double score_low = 0.0, score_high = 0.0;
  for (const auto& e : ets) {
    score_low += e.deaths1 - (e.at_risk0 == 0.0 ? e.deaths : 0.0);
    score_high += e.deaths1 - (e.at_risk1 > 0.0 ? e.deaths : 0.0);
  }
  if (!(score_low > 0.0 && score_high < 0.0)) {
    throw EstimationError("survival",
                          "monotone partial likelihood: hazard ratio cannot be computed");
  }

  double beta = 0.0;
  auto terms = detail::cox_terms(ets, beta);
  int iter = 0;
  bool converged = false;
  for (; iter <= kCoxMaxIterations; ++iter) {
    if (std::abs(terms.score) < kCoxScoreTolerance) {
      converged = true;
      break;
    }
    if (iter == kCoxMaxIterations) break;
    double step = terms.score / terms.information;
    auto next = detail::cox_terms(ets, beta + step);
    // Near the optimum the log-likelihood change is at rounding level.
    const double slack = 1e-12 * (1.0 + std::abs(terms.loglik));
    for (int h = 0; h < 40 && !(next.loglik >= terms.loglik - slack); ++h) {
      step *= 0.5;
      next = detail::cox_terms(ets, beta + step);
    }
    beta += step;
    terms = next;
    if (!std::isfinite(beta) || !std::isfinite(terms.information)) break;
  }
  if (!converged) {
    throw EstimationError("survival", "Cox Newton-Raphson did not converge in " +
                                          std::to_string(kCoxMaxIterations) + " iterations");
  }

  HazardRatioReport r;
  r.log_hr = beta;
  r.se_log_hr = 1.0 / std::sqrt(terms.information);
  r.hr = std::exp(beta);
  r.ci_low = std::exp(beta - kNormalQuantile975 * r.se_log_hr);
  r.ci_high = std::exp(beta + kNormalQuantile975 * r.se_log_hr);
  r.n_used = n;
  r.n_events = events0 + events1;
  r.iterations = iter;
  return r;
}

/// Table-row style: "0.75 & (0.69,0.82)".
inline std::string format_hr_row(double hr, double ci_low, double ci_high) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.2f & (%.2f,%.2f)", hr, ci_low, ci_high);
  return buf;
}

inline std::string format_hr_row(const HazardRatioReport& r) {
  return format_hr_row(r.hr, r.ci_low, r.ci_high);
}

}  // namespace pdir
