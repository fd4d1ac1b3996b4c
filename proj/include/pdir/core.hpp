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
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "pdir/error.hpp"
#include "pdir/io.hpp"

namespace pdir {

enum class OutcomeKind { Continuous, Survival };

struct SurvivalTime {
  double time = 0.0;
  int event = 0;
};

/// Continuous outcome value or right-censored (time, event) pair.
using Outcome = std::variant<double, SurvivalTime>;

struct SubjectRecord {
  std::string id;
  int treatment = 0;
  std::vector<double> covariates;
  Outcome outcome;
};

/// Contrast between potential outcomes: g(y1, y0) = y1 - y0.
inline double contrast(double y1, double y0) { return y1 - y0; }

namespace detail {

// Returns the name of the first violated invariant, if any.
inline std::optional<std::string> subject_violation(const SubjectRecord& s, std::size_t p,
                                                    OutcomeKind kind) {
  if (s.covariates.size() != p) return "covariate dimension p is identical for all subjects";
  for (double v : s.covariates) {
    if (!std::isfinite(v)) return "covariates are finite";
  }
  if (s.treatment != 0 && s.treatment != 1) return "treatment ∈ {0,1}";
  if (kind == OutcomeKind::Continuous) {
    const double* y = std::get_if<double>(&s.outcome);
    if (y == nullptr) return "outcome kind matches dataset (continuous)";
    if (!std::isfinite(*y)) return "continuous outcome is finite";
  } else {
    const SurvivalTime* st = std::get_if<SurvivalTime>(&s.outcome);
    if (st == nullptr) return "outcome kind matches dataset (survival)";
    if (!(st->time > 0.0) || !std::isfinite(st->time)) return "time > 0";
    if (st->event != 0 && st->event != 1) return "event ∈ {0,1}";
  }
  return std::nullopt;
}

}  // namespace detail

/// Randomized-trial data: one record per subject, fixed covariate schema.
///
/// Immutable after construction. The constructor enforces every invariant and
/// throws ValidationError naming the first one violated. Subject order is
/// preserved and is the index used by every per-subject vector elsewhere.
class TrialDataset {
 public:
  TrialDataset(std::vector<SubjectRecord> subjects, std::vector<std::string> covariate_names,
               OutcomeKind kind, std::string study_label)
      : subjects_(std::move(subjects)),
        covariate_names_(std::move(covariate_names)),
        kind_(kind),
        study_label_(std::move(study_label)) {
    const std::size_t p = covariate_names_.size();
    if (p < 1) throw ValidationError("p ≥ 1 (at least one covariate column)");
    std::size_t treated = 0;
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
      if (auto v = detail::subject_violation(subjects_[i], p, kind_)) {
        throw ValidationError(*v + " (subject '" + subjects_[i].id + "', index " +
                              std::to_string(i) + ")");
      }
      treated += static_cast<std::size_t>(subjects_[i].treatment);
    }
    if (treated == 0 || treated == subjects_.size()) {
      throw ValidationError("both treatment arms are non-empty");
    }
  }

  std::size_t n() const { return subjects_.size(); }
  std::size_t p() const { return covariate_names_.size(); }
  OutcomeKind kind() const { return kind_; }
  const std::string& study_label() const { return study_label_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }
  const std::vector<SubjectRecord>& subjects() const { return subjects_; }
  const SubjectRecord& operator[](std::size_t i) const { return subjects_[i]; }

  /// n x p covariate matrix.
  Eigen::MatrixXd covariates() const {
    Eigen::MatrixXd z(n(), p());
    for (std::size_t i = 0; i < n(); ++i) {
      for (std::size_t j = 0; j < p(); ++j) z(i, j) = subjects_[i].covariates[j];
    }
    return z;
  }

  std::vector<int> treatments() const {
    std::vector<int> t(n());
    for (std::size_t i = 0; i < n(); ++i) t[i] = subjects_[i].treatment;
    return t;
  }

  std::vector<double> outcomes() const {
    require(OutcomeKind::Continuous, "outcomes()");
    std::vector<double> y(n());
    for (std::size_t i = 0; i < n(); ++i) y[i] = std::get<double>(subjects_[i].outcome);
    return y;
  }

  std::vector<double> times() const {
    require(OutcomeKind::Survival, "times()");
    std::vector<double> t(n());
    for (std::size_t i = 0; i < n(); ++i) t[i] = std::get<SurvivalTime>(subjects_[i].outcome).time;
    return t;
  }

  std::vector<int> events() const {
    require(OutcomeKind::Survival, "events()");
    std::vector<int> e(n());
    for (std::size_t i = 0; i < n(); ++i) e[i] = std::get<SurvivalTime>(subjects_[i].outcome).event;
    return e;
  }

  /// Copy with the outcome replaced by a continuous pseudo-outcome.
  TrialDataset with_continuous_outcome(std::span<const double> y) const {
    if (y.size() != n()) throw ValidationError("pseudo-outcome length equals n");
    std::vector<SubjectRecord> out = subjects_;
    for (std::size_t i = 0; i < n(); ++i) out[i].outcome = y[i];
    return TrialDataset(std::move(out), covariate_names_, OutcomeKind::Continuous, study_label_);
  }

  /// Concatenates studies sharing one schema, in the given order.
  static TrialDataset pooled(std::span<const TrialDataset* const> parts, std::string label) {
    if (parts.empty()) throw ValidationError("pooling needs at least one dataset");
    std::vector<SubjectRecord> all;
    for (const TrialDataset* d : parts) {
      if (d->covariate_names() != parts.front()->covariate_names() ||
          d->kind() != parts.front()->kind()) {
        throw ValidationError("pooled studies share one covariate schema and outcome kind");
      }
      all.insert(all.end(), d->subjects().begin(), d->subjects().end());
    }
    return TrialDataset(std::move(all), parts.front()->covariate_names(), parts.front()->kind(),
                        std::move(label));
  }

 private:
  void require(OutcomeKind k, const char* what) const {
    if (kind_ != k) throw ValidationError(std::string(what) + " called on a dataset of the other outcome kind");
  }

  std::vector<SubjectRecord> subjects_;
  std::vector<std::string> covariate_names_;
  OutcomeKind kind_;
  std::string study_label_;
};

inline std::vector<std::string> outcome_columns(OutcomeKind kind) {
  if (kind == OutcomeKind::Continuous) return {"id", "treatment", "outcome"};
  return {"id", "treatment", "time", "event"};
}

/// Infers the outcome kind from the header's leading columns.
inline OutcomeKind detect_outcome_kind(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw ParseError("'" + path.string() + "' is empty (row 1: missing header)");
  const auto header = io::split_csv_line(lines.front());
  if (header.size() >= 3 && header[0] == "id" && header[1] == "treatment") {
    if (header[2] == "outcome") return OutcomeKind::Continuous;
    if (header.size() >= 4 && header[2] == "time" && header[3] == "event") return OutcomeKind::Survival;
  }
  throw ParseError("row 1: header must begin 'id,treatment,outcome' or 'id,treatment,time,event'");
}

/// Loads a trial CSV. Rows are numbered from 1 (the header) in error messages.
inline TrialDataset load_dataset(const std::filesystem::path& path, OutcomeKind kind,
                                 std::optional<std::string> study_label = std::nullopt) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw ParseError("'" + path.string() + "' is empty (row 1: missing header)");

  const auto header = io::split_csv_line(lines.front());
  const auto fixed = outcome_columns(kind);
  for (std::size_t j = 0; j < fixed.size(); ++j) {
    if (j >= header.size() || header[j] != fixed[j]) {
      throw ParseError("row 1: expected column '" + fixed[j] + "' at position " +
                       std::to_string(j + 1));
    }
  }
  if (header.size() <= fixed.size()) throw ParseError("row 1: at least one covariate column is required");
  std::vector<std::string> names;
  for (std::size_t j = fixed.size(); j < header.size(); ++j) {
    if (header[j].empty()) throw ParseError("row 1: empty covariate name at column " + std::to_string(j + 1));
    names.emplace_back(header[j]);
  }
  const std::size_t p = names.size();

  std::vector<SubjectRecord> subjects;
  subjects.reserve(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::string row = "row " + std::to_string(r + 1);
    const auto fields = io::split_csv_line(lines[r]);
    if (fields.size() != header.size()) {
      throw ParseError(row + ": expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    auto number = [&](std::size_t j) {
      auto v = io::parse_double(fields[j]);
      if (!v) {
        throw ParseError(row + ": " + (fields[j].empty() ? "missing value" : "non-numeric value '" +
                         std::string(fields[j]) + "'") + " in column '" + std::string(header[j]) + "'");
      }
      return *v;
    };
    auto binary = [&](std::size_t j, const char* invariant) {
      const double v = number(j);
      if (v != 0.0 && v != 1.0) throw ValidationError(std::string(invariant) + " (" + row + ")");
      return static_cast<int>(v);
    };

    SubjectRecord s;
    s.id = std::string(fields[0]);
    if (s.id.empty()) throw ParseError(row + ": missing value in column 'id'");
    s.treatment = binary(1, "treatment ∈ {0,1}");
    if (kind == OutcomeKind::Continuous) {
      s.outcome = number(2);
    } else {
      const double t = number(2);
      const int e = binary(3, "event ∈ {0,1}");
      s.outcome = SurvivalTime{t, e};
    }
    s.covariates.resize(p);
    for (std::size_t j = 0; j < p; ++j) s.covariates[j] = number(fixed.size() + j);
    if (auto v = detail::subject_violation(s, p, kind)) throw ValidationError(*v + " (" + row + ")");
    subjects.push_back(std::move(s));
  }
  return TrialDataset(std::move(subjects), std::move(names), kind,
                      study_label.value_or(path.stem().string()));
}

/// Loads a trial CSV, inferring the outcome kind from the header.
inline TrialDataset load_dataset(const std::filesystem::path& path) {
  return load_dataset(path, detect_outcome_kind(path));
}

/// CSV text for a dataset; load_dataset(serialize_dataset(d)) reproduces d bit-exactly.
inline std::string serialize_dataset(const TrialDataset& d) {
  std::string out;
  const auto fixed = outcome_columns(d.kind());
  for (std::size_t j = 0; j < fixed.size(); ++j) out += (j ? "," : "") + fixed[j];
  for (const auto& name : d.covariate_names()) out += "," + name;
  out += '\n';
  for (const auto& s : d.subjects()) {
    out += s.id;
    out += s.treatment ? ",1" : ",0";
    if (const double* y = std::get_if<double>(&s.outcome)) {
      out += "," + io::format_double(*y);
    } else {
      const auto& st = std::get<SurvivalTime>(s.outcome);
      out += "," + io::format_double(st.time) + (st.event ? ",1" : ",0");
    }
    for (double v : s.covariates) out += "," + io::format_double(v);
    out += '\n';
  }
  return out;
}

inline void write_dataset(const std::filesystem::path& path, const TrialDataset& d) {
  io::write_file_atomic(path, serialize_dataset(d));
}

}  // namespace pdir
