#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefquery/core.hpp"
#include "prefquery/error.hpp"

namespace prefquery {

struct RidgeConfig {
  double lambda = 1e-8;

  void validate() const {
    require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::validation,
            "ridge lambda must be a finite nonnegative number");
  }
};

struct FitResult {
  LinearUtility coefficients;
  double sse = 0.0;
  std::vector<double> residuals;  // label minus prediction, per row
};

namespace detail {

inline void check_inputs(const FeatureMatrix& x, std::span<const double> labels) {
  require(x.rows() >= 1, ErrorKind::validation, "fit needs at least one row");
  require(labels.size() == x.rows(), ErrorKind::validation,
          "label count " + std::to_string(labels.size()) + " does not match row count " +
              std::to_string(x.rows()));
  require(x.values.allFinite(), ErrorKind::validation, "feature matrix contains non-finite values");
  for (double u : labels) {
    require(std::isfinite(u), ErrorKind::validation, "labels contain non-finite values");
  }
}

// Solves the symmetric positive (semi)definite system a*x = b with one step
// of iterative refinement. A singular system is an error only when
// `allow_singular` is false.
inline Eigen::VectorXd solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                 bool allow_singular) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  bool singular = ldlt.info() != Eigen::Success;
  if (!singular && !allow_singular && a.rows() > 0) {
    const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
    singular = d.minCoeff() <= 1e-13 * std::max(1.0, d.maxCoeff());
  }
  if (singular) {
    fail(ErrorKind::numerical,
         "normal equations are singular (rank-deficient features); use a ridge lambda > 0");
  }
  Eigen::VectorXd x = ldlt.solve(b);
  const Eigen::VectorXd correction = ldlt.solve(b - a * x);
  x += correction;
  if (!x.allFinite()) {
    fail(ErrorKind::numerical, "normal equations produced a non-finite solution; use lambda > 0");
  }
  return x;
}

struct RidgeSolution {
  Eigen::VectorXd beta;
  double intercept = 0.0;
};

// Minimizes ||u - X b - c||^2 + lambda ||b - anchor||^2, with c fixed at 0
// unless `with_intercept`. The intercept is never penalized.
inline RidgeSolution ridge_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& u, double lambda,
                                 const Eigen::VectorXd& anchor, bool with_intercept) {
  const Eigen::Index p = x.cols();
  const Eigen::Index n = x.rows();
  if (!with_intercept) {
    Eigen::MatrixXd a = x.transpose() * x;
    a.diagonal().array() += lambda;
    Eigen::VectorXd b = x.transpose() * u + lambda * anchor;
    return {solve_spd(a, b, lambda > 0.0), 0.0};
  }
  Eigen::MatrixXd a(p + 1, p + 1);
  a.topLeftCorner(p, p) = x.transpose() * x;
  a.topLeftCorner(p, p).diagonal().array() += lambda;
  const Eigen::VectorXd col_sums = x.colwise().sum().transpose();
  a.topRightCorner(p, 1) = col_sums;
  a.bottomLeftCorner(1, p) = col_sums.transpose();
  a(p, p) = static_cast<double>(n);
  Eigen::VectorXd b(p + 1);
  b.head(p) = x.transpose() * u + lambda * anchor;
  b(p) = u.sum();
  Eigen::VectorXd sol = solve_spd(a, b, lambda > 0.0);
  return {sol.head(p), sol(p)};
}

inline FitResult make_fit(LinearUtility coefficients, const FeatureMatrix& x,
                          std::span<const double> labels) {
  FitResult fit{std::move(coefficients), 0.0, {}};
  const std::vector<double> pred = score_rows(fit.coefficients, x);
  fit.residuals.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    fit.residuals[i] = labels[i] - pred[i];
    fit.sse += fit.residuals[i] * fit.residuals[i];
  }
  return fit;
}

inline FitResult fit_block(const FeatureMatrix& x, std::span<const double> labels,
                           const RidgeConfig& cfg, AttributeKind kind) {
  cfg.validate();
  check_inputs(x, labels);
  require(x.layout.width() >= 1, ErrorKind::validation, "fit needs at least one feature column");
  for (const auto& seg : x.layout.segments()) {
    require(seg.kind == kind, ErrorKind::validation,
            "segment '" + seg.name + "' is not " + std::string(to_string(kind)));
  }
  const Eigen::Map<const Eigen::VectorXd> u(labels.data(), static_cast<Eigen::Index>(labels.size()));
  auto sol = ridge_solve(x.values, u, cfg.lambda, Eigen::VectorXd::Zero(x.values.cols()), false);
  return make_fit(utility_from_vector(sol.beta, x.layout), x, labels);
}

}  // namespace detail

// Least squares on scaled numerical features, no intercept.
inline FitResult fit_numerical(const FeatureMatrix& x, std::span<const double> labels,
                               const RidgeConfig& cfg = {}) {
  return detail::fit_block(x, labels, cfg, AttributeKind::numerical);
}

// Least squares on embedding features: one coefficient per embedding dimension.
inline FitResult fit_textual(const FeatureMatrix& h, std::span<const double> labels,
                             const RidgeConfig& cfg = {}) {
  return detail::fit_block(h, labels, cfg, AttributeKind::textual);
}

// Concatenates both coefficient blocks, scaling each attribute's block by its
// rank weight. Intercept is zero.
inline LinearUtility build_synthetic_utility(const FitResult& fit_num, const FitResult& fit_text,
                                             const std::map<std::string, double>& weights) {
  LinearUtility u;
  auto weight_of = [&](const std::string& name) {
    auto it = weights.find(name);
    require(it != weights.end(), ErrorKind::validation, "no rank weight for '" + name + "'");
    return it->second;
  };
  for (const auto* fit : {&fit_num, &fit_text}) {
    for (const auto& [name, coef] : fit->coefficients.numerical) {
      require(u.numerical.count(name) == 0 && u.textual.count(name) == 0, ErrorKind::validation,
              "coefficient '" + name + "' appears in both fits");
      u.numerical[name] = weight_of(name) * coef;
    }
    for (const auto& [name, coefs] : fit->coefficients.textual) {
      require(u.numerical.count(name) == 0 && u.textual.count(name) == 0, ErrorKind::validation,
              "coefficient '" + name + "' appears in both fits");
      auto& block = u.textual[name];
      const double w = weight_of(name);
      for (double c : coefs) block.push_back(w * c);
    }
  }
  return u;
}

// Refits every coefficient plus an intercept against the labels, anchored at
// u_syn: minimizes ||u - X g - d||^2 + lambda ||g - beta_syn||^2.
inline FitResult refine_real_utility(const LinearUtility& u_syn, const FeatureMatrix& x,
                                     std::span<const double> labels, const RidgeConfig& cfg = {}) {
  cfg.validate();
  detail::check_inputs(x, labels);
  const Eigen::VectorXd anchor = coefficient_vector(u_syn, x.layout);
  const Eigen::Map<const Eigen::VectorXd> u(labels.data(), static_cast<Eigen::Index>(labels.size()));
  auto sol = detail::ridge_solve(x.values, u, cfg.lambda, anchor, true);
  LinearUtility real = utility_from_vector(sol.beta, x.layout, sol.intercept);
  FitResult fit = detail::make_fit(std::move(real), x, labels);
  fit.coefficients.epsilon_noise = std::sqrt(fit.sse / static_cast<double>(labels.size()));
  return fit;
}

// delta_i = u_i - u_real(x_i), intercept included.
inline std::vector<double> residual_delta(const LinearUtility& u_real, const FeatureMatrix& x,
                                          std::span<const double> labels) {
  require(labels.size() == x.rows(), ErrorKind::validation, "label count does not match rows");
  std::vector<double> out = score_rows(u_real, x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = labels[i] - out[i];
  return out;
}

struct BoundInputs {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t N = 0;
  std::size_t q = 0;
  double max_x_num = 0.0;
  double max_h_text = 0.0;
  double eps = 0.0;
};

// |delta| <= (m * max_x_num + n * max_h_text) / sqrt(N) + q * eps
inline double compute_error_bound(const BoundInputs& b) {
  require(b.N >= 1, ErrorKind::domain, "error bound needs N >= 1");
  require(b.max_x_num >= 0.0 && b.max_h_text >= 0.0 && b.eps >= 0.0, ErrorKind::domain,
          "error bound inputs must be nonnegative");
  const double attr_term = static_cast<double>(b.m) * b.max_x_num +
                           static_cast<double>(b.n) * b.max_h_text;
  return attr_term / std::sqrt(static_cast<double>(b.N)) + static_cast<double>(b.q) * b.eps;
}

inline double residual_std(std::span<const double> residuals) {
  if (residuals.empty()) return 0.0;
  double s = 0.0;
  for (double r : residuals) s += r * r;
  return std::sqrt(s / static_cast<double>(residuals.size()));
}

}  // namespace prefquery
