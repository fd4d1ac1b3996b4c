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

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pdir/core.hpp"
#include "pdir/forest.hpp"
#include "pdir/io.hpp"

namespace pdir {

enum class ImputeMode {
  Joint,   // one forest on (T, Z, T*Z)
  PerArm,  // one forest per arm on Z
};

/// Imputed potential outcomes and their contrast, indexed like the dataset.
struct ImputedContrasts {
  std::vector<double> yhat1;
  std::vector<double> yhat0;
  std::vector<double> contrast;

  /// Accepts predictions from an external imputer.
  static ImputedContrasts from_predictions(std::vector<double> yhat1, std::vector<double> yhat0) {
    if (yhat1.size() != yhat0.size()) throw ValidationError("yhat1 and yhat0 have equal length");
    ImputedContrasts out;
    out.contrast.resize(yhat1.size());
    for (std::size_t i = 0; i < yhat1.size(); ++i) out.contrast[i] = pdir::contrast(yhat1[i], yhat0[i]);
    out.yhat1 = std::move(yhat1);
    out.yhat0 = std::move(yhat0);
    return out;
  }
};

/// Joint-mode design row: [t, z, t*z].
inline std::vector<double> joint_design_row(int t, std::span<const double> z) {
  std::vector<double> row(1 + 2 * z.size());
  row[0] = t;
  for (std::size_t j = 0; j < z.size(); ++j) {
    row[1 + j] = z[j];
    row[1 + z.size() + j] = t * z[j];
  }
  return row;
}

inline std::vector<std::string> joint_design_names(const std::vector<std::string>& covariates) {
  std::vector<std::string> names{"treatment"};
  names.insert(names.end(), covariates.begin(), covariates.end());
  for (const auto& c : covariates) names.push_back("treatment*" + c);
  return names;
}

inline ImputedContrasts impute_contrasts(const TrialDataset& data, const ForestConfig& config,
                                         ImputeMode mode, std::uint64_t seed) {
  if (data.kind() != OutcomeKind::Continuous) {
    throw ValidationError(
        "imputation needs a continuous outcome; transform survival data with martingale_residuals first");
  }
  const std::size_t n = data.n();
  const std::size_t p = data.p();
  const std::vector<double> y = data.outcomes();
  std::vector<double> yhat1(n), yhat0(n);

  if (mode == ImputeMode::Joint) {
    Eigen::MatrixXd design(n, 1 + 2 * p);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = joint_design_row(data[i].treatment, data[i].covariates);
      for (std::size_t j = 0; j < row.size(); ++j) design(i, j) = row[j];
    }
    const auto forest = fit_forest(design, y, config, seed, joint_design_names(data.covariate_names()));
    for (int t = 0; t <= 1; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = joint_design_row(t, data[i].covariates);
        for (std::size_t j = 0; j < row.size(); ++j) design(i, j) = row[j];
      }
      (t == 1 ? yhat1 : yhat0) = forest.predict(design);
    }
  } else {
    const Eigen::MatrixXd z = data.covariates();
    for (int arm = 0; arm <= 1; ++arm) {
      std::vector<Eigen::Index> rows;
      for (std::size_t i = 0; i < n; ++i) {
        if (data[i].treatment == arm) rows.push_back(static_cast<Eigen::Index>(i));
      }
      if (rows.empty()) throw ValidationError("per-arm imputation needs both arms non-empty");
      Eigen::MatrixXd za(rows.size(), p);
      std::vector<double> ya(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        za.row(r) = z.row(rows[r]);
        ya[r] = y[rows[r]];
      }
      const auto forest = fit_forest(za, ya, config, derive_seed(seed, arm), data.covariate_names());
      auto& target = arm == 1 ? yhat1 : yhat0;
      target = forest.predict(z);
    }
  }
  return ImputedContrasts::from_predictions(std::move(yhat1), std::move(yhat0));
}

/// Audit CSV: id, yhat0, yhat1, contrast.
inline void write_imputed_csv(const std::filesystem::path& path, const TrialDataset& data,
                              const ImputedContrasts& imputed) {
  std::string out = "id,yhat0,yhat1,contrast\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    out += data[i].id + "," + io::format_double(imputed.yhat0[i]) + "," +
           io::format_double(imputed.yhat1[i]) + "," + io::format_double(imputed.contrast[i]) + "\n";
  }
  io::write_file_atomic(path, out);
}

}  // namespace pdir
