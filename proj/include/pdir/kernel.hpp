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
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "pdir/error.hpp"
#include "pdir/io.hpp"

namespace pdir {

enum class KernelFamily { Gaussian, Matern, GeneralizedCauchy, PoweredExponential };

/// Radial kernel K(z, z*) = psi(||z - z*||), normalized so psi(0) = 1.
///
///   Gaussian            exp(-d^2 / rho)                          rho > 0
///   Matern              2^(1-nu)/Gamma(nu) (d/c)^nu K_nu(d/c)    c > 0, nu in {1/2, 3/2, 5/2}
///   Generalized Cauchy  [1 + (d/c)^alpha]^(-tau/alpha)           c, tau > 0, 0 < alpha <= 2
///   Powered exponential exp(-(d/c)^alpha)                         c > 0, 0 < alpha <= 2
///
/// Matern uses the closed forms available at half-integer order:
///   nu = 1/2: exp(-x);  3/2: (1 + x) exp(-x);  5/2: (1 + x + x^2/3) exp(-x).
class KernelSpec {
 public:
  static KernelSpec gaussian(double rho) {
    require(rho > 0.0 && std::isfinite(rho), "Gaussian rho > 0");
    return KernelSpec(KernelFamily::Gaussian, rho, 0.0, 0.0, 0.0);
  }

  static KernelSpec matern(double c, double nu) {
    require(c > 0.0 && std::isfinite(c), "Matern c > 0");
    require(nu == 0.5 || nu == 1.5 || nu == 2.5, "Matern nu ∈ {1/2, 3/2, 5/2}");
    return KernelSpec(KernelFamily::Matern, 0.0, c, 0.0, nu);
  }

  static KernelSpec generalized_cauchy(double c, double alpha, double tau) {
    require(c > 0.0 && std::isfinite(c), "generalized Cauchy c > 0");
    require(tau > 0.0 && std::isfinite(tau), "generalized Cauchy tau > 0");
    require(alpha > 0.0 && alpha <= 2.0, "generalized Cauchy 0 < alpha ≤ 2");
    return KernelSpec(KernelFamily::GeneralizedCauchy, 0.0, c, alpha, tau);
  }

  static KernelSpec powered_exponential(double c, double alpha) {
    require(c > 0.0 && std::isfinite(c), "powered exponential c > 0");
    require(alpha > 0.0 && alpha <= 2.0, "powered exponential 0 < alpha ≤ 2");
    return KernelSpec(KernelFamily::PoweredExponential, 0.0, c, alpha, 0.0);
  }

  KernelFamily family() const { return family_; }
  double rho() const { return rho_; }
  double c() const { return c_; }
  double alpha() const { return alpha_; }
  /// Generalized Cauchy tau, or Matern nu.
  double shape() const { return shape_; }

  /// Kernel value from a squared Euclidean distance.
  double from_squared_distance(double d2) const {
    switch (family_) {
      case KernelFamily::Gaussian:
        return std::exp(-d2 / rho_);
      case KernelFamily::Matern: {
        const double x = std::sqrt(d2) / c_;
        if (shape_ == 0.5) return std::exp(-x);
        if (shape_ == 1.5) return (1.0 + x) * std::exp(-x);
        return (1.0 + x + x * x / 3.0) * std::exp(-x);
      }
      case KernelFamily::GeneralizedCauchy: {
        const double x = std::sqrt(d2) / c_;
        return std::pow(1.0 + std::pow(x, alpha_), -shape_ / alpha_);
      }
      case KernelFamily::PoweredExponential: {
        const double x = std::sqrt(d2) / c_;
        return std::exp(-std::pow(x, alpha_));
      }
    }
    return 0.0;
  }

  double from_distance(double d) const { return from_squared_distance(d * d); }

  double operator()(std::span<const double> z, std::span<const double> zstar) const {
    if (z.size() != zstar.size()) throw ValidationError("kernel arguments have equal length");
    double d2 = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double diff = z[j] - zstar[j];
      d2 += diff * diff;
    }
    return from_squared_distance(d2);
  }

  std::string describe() const {
    switch (family_) {
      case KernelFamily::Gaussian:
        return "gaussian(rho=" + io::format_double(rho_) + ")";
      case KernelFamily::Matern:
        return "matern(c=" + io::format_double(c_) + ",nu=" + io::format_double(shape_) + ")";
      case KernelFamily::GeneralizedCauchy:
        return "cauchy(c=" + io::format_double(c_) + ",alpha=" + io::format_double(alpha_) +
               ",tau=" + io::format_double(shape_) + ")";
      case KernelFamily::PoweredExponential:
        return "powexp(c=" + io::format_double(c_) + ",alpha=" + io::format_double(alpha_) + ")";
    }
    return {};
  }

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;

 private:
  KernelSpec(KernelFamily f, double rho, double c, double alpha, double shape)
      : family_(f), rho_(rho), c_(c), alpha_(alpha), shape_(shape) {}

  static void require(bool ok, const char* invariant) {
    if (!ok) throw ValidationError("kernel parameter out of range: " + std::string(invariant));
  }

  KernelFamily family_;
  double rho_;
  double c_;
  double alpha_;
  double shape_;
};

inline double kernel_eval(const KernelSpec& spec, std::span<const double> z,
                          std::span<const double> zstar) {
  return spec(z, zstar);
}

namespace detail {

inline double squared_distance(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b,
                               Eigen::Index j) {
  double d2 = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    const double diff = a(i, k) - b(j, k);
    d2 += diff * diff;
  }
  return d2;
}

}  // namespace detail

/// Gram matrix of the rows of z. Each pair is evaluated once and mirrored.
inline Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& z) {
  if (!z.allFinite()) throw ValidationError("Gram inputs are finite");
  const Eigen::Index n = z.rows();
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    g(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = spec.from_squared_distance(detail::squared_distance(z, i, z, j));
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

/// Cross-kernel matrix: rows of `query` against rows of `train`.
inline Eigen::MatrixXd gram_cross(const KernelSpec& spec, const Eigen::MatrixXd& query,
                                  const Eigen::MatrixXd& train) {
  if (query.cols() != train.cols()) throw ValidationError("kernel arguments have equal dimension");
  Eigen::MatrixXd g(query.rows(), train.rows());
  for (Eigen::Index j = 0; j < train.rows(); ++j) {
    for (Eigen::Index i = 0; i < query.rows(); ++i) {
      g(i, j) = spec.from_squared_distance(detail::squared_distance(query, i, train, j));
    }
  }
  return g;
}

/// Median of squared pairwise distances; default Gaussian rho.
inline double median_heuristic_rho(const Eigen::MatrixXd& z) {
  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(z.rows() * (z.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < z.rows(); ++j) d2.push_back(detail::squared_distance(z, i, z, j));
  }
  if (d2.empty()) throw ValidationError("median heuristic needs n ≥ 2");
  const std::size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + mid, d2.end());
  double med = d2[mid];
  if (d2.size() % 2 == 0) {
    med = 0.5 * (med + *std::max_element(d2.begin(), d2.begin() + mid));
  }
  if (!(med > 0.0)) throw ValidationError("median heuristic: all training points coincide");
  return med;
}

struct KernelModel {
  KernelSpec spec;
  Eigen::MatrixXd training_inputs;
  Eigen::VectorXd alpha;   // dual coefficients, h = K alpha
  double intercept = 0.0;  // mean of the training contrast
  double lambda = 1.0;
  Eigen::VectorXd fitted;  // h at the design points (without intercept)
};

/// Kernel ridge fit from a precomputed Gram matrix.
///
/// Solves (I + K/lambda) u = y_c with y_c the centered response, then
/// h = K u / lambda and alpha = u / lambda. The Cholesky factorization is
/// retried once with 1e-10 added to the diagonal if it fails.
inline KernelModel fit_kernel_machine_gram(const Eigen::MatrixXd& k, const Eigen::MatrixXd& z,
                                           std::span<const double> contrast, const KernelSpec& spec,
                                           double lambda) {
  const Eigen::Index n = k.rows();
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda > 0");
  if (n < 2) throw ValidationError("kernel machine needs n ≥ 2");
  if (k.cols() != n || z.rows() != n || static_cast<Eigen::Index>(contrast.size()) != n) {
    throw ValidationError("Gram matrix, inputs and contrast agree in n");
  }
  KernelModel model{spec, z, Eigen::VectorXd(), 0.0, lambda, Eigen::VectorXd()};
  const Eigen::Map<const Eigen::VectorXd> y(contrast.data(), n);
  model.intercept = y.mean();
  const Eigen::VectorXd yc = y.array() - model.intercept;

  Eigen::MatrixXd a = k / lambda;
  a.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    a.diagonal().array() += 1e-10;
    llt.compute(a);
    if (llt.info() != Eigen::Success) {
      throw EstimationError("kernelmachine", "(I + K/lambda) is not positive definite");
    }
  }
  const Eigen::VectorXd u = llt.solve(yc);
  model.alpha = u / lambda;
  model.fitted = k * model.alpha;
  if (!model.alpha.allFinite() || !model.fitted.allFinite()) {
    throw EstimationError("kernelmachine", "linear solve produced non-finite values");
  }
  return model;
}

inline KernelModel fit_kernel_machine(const Eigen::MatrixXd& z, std::span<const double> contrast,
                                      const KernelSpec& spec, double lambda) {
  return fit_kernel_machine_gram(gram(spec, z), z, contrast, spec, lambda);
}

/// intercept + sum_i alpha_i K(z_i, z).
inline double score_nonlinear(const KernelModel& model, std::span<const double> z) {
  if (static_cast<Eigen::Index>(z.size()) != model.training_inputs.cols()) {
    throw ValidationError("score input has p entries");
  }
  double s = model.intercept;
  for (Eigen::Index i = 0; i < model.training_inputs.rows(); ++i) {
    double d2 = 0.0;
    for (Eigen::Index j = 0; j < model.training_inputs.cols(); ++j) {
      const double diff = model.training_inputs(i, j) - z[j];
      d2 += diff * diff;
    }
    s += model.alpha(i) * model.spec.from_squared_distance(d2);
  }
  return s;
}

}  // namespace pdir
