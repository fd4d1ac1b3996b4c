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
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pdir/core.hpp"
#include "pdir/error.hpp"
#include "pdir/io.hpp"
#include "pdir/linalg.hpp"

namespace pdir {

inline constexpr int kDefaultSlices = 10;
inline constexpr double kWhitenEigenFloor = 1e-12;

struct Whitening {
  Eigen::VectorXd mu;
  Eigen::MatrixXd covariance;  // sample covariance (divisor n - 1) plus ridge * I
  Eigen::MatrixXd whitener;    // covariance^{-1/2}
  Eigen::MatrixXd ztilde;      // n x p whitened rows
};

inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& z, const Eigen::VectorXd& mu) {
  const Eigen::MatrixXd centered = z.rowwise() - mu.transpose();
  return centered.transpose() * centered / static_cast<double>(z.rows() - 1);
}

/// 1e-8 * trace(sample covariance) / p.
inline double default_ridge(const Eigen::MatrixXd& z) {
  if (z.rows() < 2) throw ValidationError("covariance needs n ≥ 2");
  const Eigen::VectorXd mu = z.colwise().mean();
  return 1e-8 * sample_covariance(z, mu).trace() / static_cast<double>(z.cols());
}

/// Standardizes rows as covariance^{-1/2} (z_i - mu).
inline Whitening whiten(const Eigen::MatrixXd& z, double ridge) {
  if (z.rows() < 2) throw ValidationError("covariance needs n ≥ 2");
  if (!(ridge >= 0.0)) throw ValidationError("ridge ≥ 0");
  Whitening w;
  w.mu = z.colwise().mean();
  w.covariance = sample_covariance(z, w.mu);
  w.covariance.diagonal().array() += ridge;
  const auto eig = jacobi_eigen(w.covariance);
  const double smallest = eig.values(eig.values.size() - 1);
  if (!(smallest >= kWhitenEigenFloor)) {
    throw EstimationError("sir", "covariance is numerically singular (smallest eigenvalue " +
                                     io::format_double(smallest) + "); use a larger ridge");
  }
  const Eigen::VectorXd inv_sqrt = eig.values.array().rsqrt();
  w.whitener = eig.vectors * inv_sqrt.asDiagonal() * eig.vectors.transpose();
  w.ztilde = (z.rowwise() - w.mu.transpose()) * w.whitener;  // whitener is symmetric
  return w;
}

struct SliceAssignment {
  std::vector<int> slice_of;  // per subject, 0-based
  std::vector<int> sizes;     // per slice
};

/// Sorts contrasts ascending (stable) and cuts them into d near-equal slices;
/// the first n mod d slices take one extra member.
inline SliceAssignment slice(std::span<const double> contrast, int d) {
  const auto n = static_cast<int>(contrast.size());
  if (d < 2) throw ValidationError("number of slices d ≥ 2");
  if (d > n) throw ValidationError("number of slices d ≤ n");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return contrast[a] < contrast[b]; });
  SliceAssignment out;
  out.slice_of.resize(n);
  out.sizes.resize(d);
  const int base = n / d, extra = n % d;
  int pos = 0;
  for (int j = 0; j < d; ++j) {
    out.sizes[j] = base + (j < extra ? 1 : 0);
    for (int k = 0; k < out.sizes[j]; ++k) out.slice_of[order[pos++]] = j;
  }
  return out;
}

/// Fitted sliced inverse regression.
struct DirectionModel {
  std::vector<std::string> covariate_names;
  Eigen::VectorXd mu;
  Eigen::MatrixXd whitener;
  Eigen::MatrixXd theta;
  Eigen::VectorXd eigenvalues;             // non-increasing
  std::vector<Eigen::VectorXd> directions;  // unit norm, original coordinates
  int n_slices = 0;
  double ridge = 0.0;

  std::size_t p() const { return static_cast<std::size_t>(mu.size()); }
};

/// Flips v so its largest-magnitude component (first on ties) is positive.
inline void fix_sign(Eigen::VectorXd& v) {
  Eigen::Index arg = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
  }
  if (v(arg) < 0.0) v = -v;
}

inline DirectionModel fit_sir(const Eigen::MatrixXd& z, std::span<const double> contrast, int d,
                              std::optional<double> ridge = std::nullopt,
                              std::vector<std::string> covariate_names = {}) {
  const auto n = static_cast<std::size_t>(z.rows());
  const auto p = z.cols();
  if (contrast.size() != n) throw ValidationError("contrast length equals n");
  for (double c : contrast) {
    if (!std::isfinite(c)) throw ValidationError("contrast values are finite");
  }
  const double r = ridge ? *ridge : default_ridge(z);
  const Whitening w = whiten(z, r);
  const SliceAssignment slices = slice(contrast, d);

  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(d, p);
  for (std::size_t i = 0; i < n; ++i) means.row(slices.slice_of[i]) += w.ztilde.row(i);
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(p, p);
  for (int j = 0; j < d; ++j) {
    const Eigen::VectorXd m = means.row(j).transpose() / slices.sizes[j];
    const double weight = static_cast<double>(slices.sizes[j]) / static_cast<double>(n);
    for (int a = 0; a < p; ++a) {
      for (int b = 0; b <= a; ++b) theta(a, b) += weight * (m(a) * m(b));
    }
  }
  for (int a = 0; a < p; ++a) {
    for (int b = a + 1; b < p; ++b) theta(a, b) = theta(b, a);
  }

  const auto eig = jacobi_eigen(theta);
  DirectionModel model;
  model.covariate_names = covariate_names.empty() ? std::vector<std::string>() : std::move(covariate_names);
  if (model.covariate_names.empty()) {
    for (Eigen::Index j = 0; j < p; ++j) model.covariate_names.push_back("z" + std::to_string(j + 1));
  }
  model.mu = w.mu;
  model.whitener = w.whitener;
  model.theta = theta;
  model.eigenvalues = eig.values;
  model.n_slices = d;
  model.ridge = r;
  for (Eigen::Index k = 0; k < p; ++k) {
    Eigen::VectorXd dir = w.whitener * eig.vectors.col(k);
    dir /= dir.norm();
    fix_sign(dir);
    model.directions.push_back(std::move(dir));
  }
  return model;
}

inline DirectionModel fit_sir(const TrialDataset& data, std::span<const double> contrast,
                              int d = kDefaultSlices, std::optional<double> ridge = std::nullopt) {
  return fit_sir(data.covariates(), contrast, d, ridge, data.covariate_names());
}

/// Linear risk score: direction[which] . z.
inline double score_linear(const DirectionModel& model, std::span<const double> z,
                           std::size_t which = 0) {
  if (which >= model.directions.size()) {
    throw ValidationError("direction index " + std::to_string(which) + " out of range");
  }
  if (z.size() != model.p()) throw ValidationError("score input has p entries");
  const auto& dir = model.directions[which];
  double s = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) s += dir(static_cast<Eigen::Index>(j)) * z[j];
  return s;
}

/// Directions CSV: label column, one column per covariate, eigenvalue.
inline std::string directions_csv(const std::string& label_column,
                                  const std::vector<std::string>& covariate_names,
                                  const std::vector<std::string>& labels,
                                  const std::vector<Eigen::VectorXd>& rows,
                                  const std::vector<double>& eigenvalues) {
  std::string out = label_column;
  for (const auto& c : covariate_names) out += "," + c;
  out += ",eigenvalue\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += labels[r];
    for (Eigen::Index j = 0; j < rows[r].size(); ++j) out += "," + io::format_double(rows[r](j));
    out += "," + io::format_double(eigenvalues[r]) + "\n";
  }
  return out;
}

inline void write_directions_csv(const std::filesystem::path& path, const DirectionModel& model) {
  std::vector<std::string> labels;
  std::vector<double> values;
  for (std::size_t k = 0; k < model.directions.size(); ++k) {
    labels.push_back(std::to_string(k + 1));
    values.push_back(model.eigenvalues(static_cast<Eigen::Index>(k)));
  }
  io::write_file_atomic(path, directions_csv("direction", model.covariate_names, labels,
                                             model.directions, values));
}

}  // namespace pdir
