#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rentfit/dataset.hpp"

namespace rentfit {

enum class PenaltyKind { none, l2, l1 };

inline std::string to_string(PenaltyKind p) {
  switch (p) {
    case PenaltyKind::none: return "none";
    case PenaltyKind::l2: return "L2";
    case PenaltyKind::l1: return "L1";
  }
  return "?";
}

inline PenaltyKind penalty_kind_from_string(const std::string& s) {
  if (s == "none") return PenaltyKind::none;
  if (s == "L2") return PenaltyKind::l2;
  if (s == "L1") return PenaltyKind::l1;
  throw std::invalid_argument("unknown penalty kind: " + s);
}

struct LinearModel {
  Vector weights;
  double intercept = 0.0;
  double alpha = 0.0;
  PenaltyKind penalty = PenaltyKind::none;
};

inline Vector predict(const LinearModel& model, const Matrix& X) {
  if (X.cols() != model.weights.size())
    throw std::invalid_argument("predict: X has " + std::to_string(X.cols()) +
                                " columns, model expects " +
                                std::to_string(model.weights.size()));
  return (X * model.weights).array() + model.intercept;
}

// --- special functions --------------------------------------------------

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double betacf(double a, double b, double x) {
  constexpr int max_iter = 300;
  constexpr double eps = 3e-16;
  constexpr double fpmin = 1e-300;

  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta function I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log1p(-x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * detail::betacf(a, b, x) / a;
  return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

/// P(T <= t) for Student-t with dof degrees of freedom.
inline double student_t_cdf(double t, double dof) {
  if (dof <= 0.0) throw std::invalid_argument("student_t_cdf: dof must be > 0");
  double ib = regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
  return t >= 0.0 ? 1.0 - ib / 2.0 : ib / 2.0;
}

/// Two-sided p-value for a t statistic.
inline double student_t_two_sided_p(double t, double dof) {
  if (dof <= 0.0) throw std::invalid_argument("student_t_two_sided_p: dof must be > 0");
  return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

// --- ridge ----------------------------------------------------------------

namespace detail {

struct CenteredProblem {
  Matrix Xc;
  Vector yc;
  Vector x_mean;
  double y_mean;
};

inline CenteredProblem center(const Matrix& X, const Vector& y) {
  CenteredProblem p;
  p.x_mean = X.colwise().mean();
  p.y_mean = y.mean();
  p.Xc = X.rowwise() - p.x_mean.transpose();
  p.yc = y.array() - p.y_mean;
  return p;
}

}  // namespace detail

/// Minimizes ||y - X\theta||^2 + alpha ||\theta||^2 with an unpenalized
/// intercept, via the regularized normal equations on centered data.
inline LinearModel fit_ridge(const Matrix& X, const Vector& y, double alpha) {
  if (X.rows() < 1 || X.rows() != y.size())
    throw std::invalid_argument("fit_ridge: bad shapes");
  if (alpha < 0) throw std::invalid_argument("fit_ridge: alpha must be >= 0");
  if (!X.allFinite() || !y.allFinite())
    throw std::invalid_argument("fit_ridge: non-finite input");

  auto p = detail::center(X, y);
  Matrix gram = p.Xc.transpose() * p.Xc;
  gram.diagonal().array() += alpha;
  Eigen::LLT<Matrix> llt(gram);
  Vector rhs = p.Xc.transpose() * p.yc;
  bool singular = llt.info() != Eigen::Success;
  Vector w;
  if (!singular) {
    w = llt.solve(rhs);
    double rhs_norm = rhs.norm();
    if (rhs_norm > 0 && (gram * w - rhs).norm() > 1e-6 * std::max(1.0, rhs_norm))
      singular = true;
  }
  if (singular)
    throw std::runtime_error(
        "fit_ridge: singular normal equations (collinear columns); use alpha > 0");

  LinearModel model;
  model.weights = w;
  model.intercept = p.y_mean - w.dot(p.x_mean);
  model.alpha = alpha;
  model.penalty = alpha == 0.0 ? PenaltyKind::none : PenaltyKind::l2;
  return model;
}

/// Plain least squares used for selection refits and the baseline model:
/// falls back to a 1e-8 ridge jitter when the normal equations are singular.
inline LinearModel fit_ols(const Matrix& X, const Vector& y, bool* jitter_applied = nullptr) {
  if (jitter_applied) *jitter_applied = false;
  try {
    return fit_ridge(X, y, 0.0);
  } catch (const std::runtime_error&) {
    auto p = detail::center(X, y);
    Matrix gram = p.Xc.transpose() * p.Xc;
    gram.diagonal().array() += 1e-8;
    Vector w = Eigen::LLT<Matrix>(gram).solve(p.Xc.transpose() * p.yc);
    if (jitter_applied) *jitter_applied = true;
    LinearModel model;
    model.weights = w;
    model.intercept = p.y_mean - w.dot(p.x_mean);
    model.alpha = 0.0;
    model.penalty = PenaltyKind::none;
    return model;
  }
}

// --- lasso ------------------------------------------------------------

inline double soft_threshold(double z, double alpha) {
  if (z > alpha) return z - alpha;
  if (z < -alpha) return z + alpha;
  return 0.0;
}

struct LassoResult {
  LinearModel model;
  bool converged = false;
  int iterations = 0;
  std::vector<double> objective_history;  // one entry per full cycle
};

/// Cyclic coordinate descent with soft-thresholding on
/// (1/(2m))||y - X\theta - b||^2 + alpha ||\theta||_1, intercept unpenalized.
inline LassoResult fit_lasso(const Matrix& X, const Vector& y, double alpha,
                             int max_iter = 10000, double tol = 1e-6) {
  if (X.rows() < 1 || X.rows() != y.size())
    throw std::invalid_argument("fit_lasso: bad shapes");
  if (alpha <= 0) throw std::invalid_argument("fit_lasso: alpha must be > 0");

  const auto m = static_cast<double>(X.rows());
  const Eigen::Index d = X.cols();
  auto prob = detail::center(X, y);

  Vector col_sq(d);
  for (Eigen::Index j = 0; j < d; ++j)
    col_sq(j) = prob.Xc.col(j).squaredNorm() / m;

  Vector theta = Vector::Zero(d);
  Vector residual = prob.yc;  // y_c - Xc * theta
  LassoResult res;

  auto objective = [&]() {
    return residual.squaredNorm() / (2.0 * m) + alpha * theta.lpNorm<1>();
  };

  for (int it = 0; it < max_iter; ++it) {
    double max_delta = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (col_sq(j) == 0.0) continue;  // constant column stays at zero
      double rho = prob.Xc.col(j).dot(residual) / m + col_sq(j) * theta(j);
      double updated = soft_threshold(rho, alpha) / col_sq(j);
      double delta = updated - theta(j);
      if (delta != 0.0) {
        residual -= prob.Xc.col(j) * delta;
        theta(j) = updated;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    res.iterations = it + 1;
    res.objective_history.push_back(objective());
    if (max_delta < tol) {
      res.converged = true;
      break;
    }
  }

  res.model.weights = theta;
  res.model.intercept = prob.y_mean - theta.dot(prob.x_mean);
  res.model.alpha = alpha;
  res.model.penalty = PenaltyKind::l1;
  return res;
}

// --- OLS inference ------------------------------------------------------

struct OlsDiagnostics {
  Vector std_errors;
  Vector t_stats;
  Vector p_values;
  double residual_variance = 0.0;
  long dof = 0;
  bool jitter_applied = false;
};

/// Classical OLS inference: sigma^2 = RSS/(m-d-1), standard errors from the
/// diagonal of sigma^2 (A^T A)^{-1} with A = [1 X], two-sided Student-t
/// p-values. A 1e-8 ridge jitter is applied (and reported) when the Gram
/// matrix is not invertible.
inline OlsDiagnostics ols_pvalues(const Matrix& X, const Vector& y) {
  const Eigen::Index m = X.rows();
  const Eigen::Index d = X.cols();
  if (m != y.size()) throw std::invalid_argument("ols_pvalues: bad shapes");
  const long dof = static_cast<long>(m) - static_cast<long>(d) - 1;
  if (dof <= 0)
    throw std::invalid_argument("ols_pvalues: dof = m - d - 1 must be > 0");

  Matrix A(m, d + 1);
  A.col(0).setOnes();
  A.rightCols(d) = X;

  Matrix gram = A.transpose() * A;
  Eigen::LLT<Matrix> llt(gram);
  OlsDiagnostics diag;
  if (llt.info() != Eigen::Success) {
    gram.diagonal().array() += 1e-8;
    llt.compute(gram);
    diag.jitter_applied = true;
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("ols_pvalues: Gram matrix not invertible");
  }
  Vector beta = llt.solve(A.transpose() * y);
  double rss = (y - A * beta).squaredNorm();
  diag.residual_variance = rss / static_cast<double>(dof);
  diag.dof = dof;

  Matrix gram_inv = llt.solve(Matrix::Identity(d + 1, d + 1));
  diag.std_errors.resize(d);
  diag.t_stats.resize(d);
  diag.p_values.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    double var_j = diag.residual_variance * gram_inv(j + 1, j + 1);
    double se = var_j > 0 ? std::sqrt(var_j) : 0.0;
    diag.std_errors(j) = se;
    double t = se > 0 ? beta(j + 1) / se : (beta(j + 1) == 0.0 ? 0.0 : 1e30);
    diag.t_stats(j) = t;
    diag.p_values(j) = student_t_two_sided_p(t, static_cast<double>(dof));
  }
  return diag;
}

// --- serialization --------------------------------------------------------

inline nlohmann::json to_json(const LinearModel& model,
                              const std::vector<std::string>& feature_names = {}) {
  nlohmann::json j;
  j["weights"] = std::vector<double>(model.weights.begin(), model.weights.end());
  j["intercept"] = model.intercept;
  j["alpha"] = model.alpha;
  j["penalty_kind"] = to_string(model.penalty);
  if (!feature_names.empty()) j["feature_names"] = feature_names;
  return j;
}

inline LinearModel linear_model_from_json(const nlohmann::json& j) {
  LinearModel model;
  auto w = j.at("weights").get<std::vector<double>>();
  model.weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  model.intercept = j.at("intercept").get<double>();
  model.alpha = j.at("alpha").get<double>();
  model.penalty = penalty_kind_from_string(j.at("penalty_kind").get<std::string>());
  return model;
}

}  // namespace rentfit
