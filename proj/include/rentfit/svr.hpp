#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rentfit/dataset.hpp"

namespace rentfit {

struct KernelParams {
  double sigma = 1.0;  // RBF width
};

inline double rbf_kernel(const Vector& x, const Vector& z, const KernelParams& params) {
  if (x.size() != z.size()) throw std::invalid_argument("rbf_kernel: length mismatch");
  if (params.sigma <= 0.0) throw std::invalid_argument("rbf_kernel: sigma must be > 0");
  return std::exp(-(x - z).squaredNorm() / (2.0 * params.sigma * params.sigma));
}

struct SvrModel {
  Matrix support_vectors;
  Vector dual_coefs;  // beta_i = alpha_i - alpha*_i, one per support vector
  double bias = 0.0;
  double C = 1.0;
  double epsilon = 0.1;
  KernelParams kernel;
  bool converged = false;
  long iterations = 0;
  std::vector<double> objective_history;  // dual objective (min form), if recorded
};

struct SvrConfig {
  double C = 1.0;
  double epsilon = 0.1;
  double sigma = 0.0;  // <= 0 picks sqrt(d/2), i.e. the gamma = 1/d convention
  double tol = 1e-3;
  long max_iter = 1000000;
  std::size_t cache_mb = 64;       // kernel row cache budget
  bool record_objective = false;   // track the dual objective per iteration
};

namespace detail {

// Bounded LRU cache of rows of the training Gram matrix. A row holds
// K(x_r, x_s) for all s, so repeated pair updates touching the same points
// avoid recomputing kernel columns; the budget keeps the footprint far below
// a dense m x m Gram for large m.
class KernelRowCache {
 public:
  KernelRowCache(const Matrix& X, double sigma, std::size_t budget_bytes)
      : X_(X), inv_two_sigma_sq_(1.0 / (2.0 * sigma * sigma)) {
    const std::size_t row_bytes = static_cast<std::size_t>(X.rows()) * sizeof(double);
    max_rows_ = std::max<std::size_t>(2, budget_bytes / std::max<std::size_t>(1, row_bytes));
  }

  const Vector& row(Eigen::Index r) {
    auto it = cache_.find(r);
    if (it != cache_.end()) {
      order_.splice(order_.begin(), order_, it->second.first);
      return it->second.second;
    }
    if (cache_.size() >= max_rows_) {
      cache_.erase(order_.back());
      order_.pop_back();
    }
    Vector k = (-(X_.rowwise() - X_.row(r)).rowwise().squaredNorm() * inv_two_sigma_sq_)
                   .array()
                   .exp();
    order_.push_front(r);
    auto [pos, inserted] = cache_.emplace(r, std::make_pair(order_.begin(), std::move(k)));
    (void)inserted;
    return pos->second.second;
  }

 private:
  const Matrix& X_;
  double inv_two_sigma_sq_;
  std::size_t max_rows_;
  std::list<Eigen::Index> order_;
  std::unordered_map<Eigen::Index, std::pair<std::list<Eigen::Index>::iterator, Vector>> cache_;
};

}  // namespace detail

/// Solves the epsilon-insensitive dual by sequential minimal optimization on
/// the doubled variable vector v = [alpha; alpha*] with signs z = [+1; -1]
/// and linear term p = [eps - y; eps + y], all boxed to [0, C] under the
/// coupling sum(z.*v) = 0. Each iteration picks the maximal violating pair
/// (largest gap between -z_t G_t over the up- and down-feasible index sets),
/// solves that two-variable subproblem exactly, and clips to the box; the
/// clipping preserves the coupling, so sum(beta) = 0 holds to the last bit
/// throughout. A random violating pair is substituted when the greedy pair
/// makes no progress (degenerate kernel rows); repeated stalls end the run
/// with the convergence flag false.
inline SvrModel fit_svr(const Matrix& X, const Vector& y, const SvrConfig& cfg = {}) {
  const Eigen::Index m = X.rows();
  if (m < 2) throw std::invalid_argument("fit_svr: need at least two rows");
  if (X.rows() != y.size()) throw std::invalid_argument("fit_svr: row/label mismatch");
  if (cfg.C <= 0.0) throw std::invalid_argument("fit_svr: C must be > 0");
  if (cfg.epsilon < 0.0) throw std::invalid_argument("fit_svr: epsilon must be >= 0");

  const double C = cfg.C;
  const double sigma = cfg.sigma > 0.0 ? cfg.sigma
                                       : std::sqrt(static_cast<double>(X.cols()) / 2.0);
  detail::KernelRowCache cache(X, sigma, cfg.cache_mb * std::size_t{1024} * 1024);

  const Eigen::Index n = 2 * m;
  Vector v = Vector::Zero(n);
  Vector p(n);
  p.head(m) = Vector::Constant(m, cfg.epsilon) - y;
  p.tail(m) = Vector::Constant(m, cfg.epsilon) + y;
  Vector G = p;  // gradient of the dual at v = 0

  auto z_of = [m](Eigen::Index t) { return t < m ? 1.0 : -1.0; };
  auto in_up = [&](Eigen::Index t) { return t < m ? v(t) < C : v(t) > 0.0; };
  auto in_low = [&](Eigen::Index t) { return t < m ? v(t) > 0.0 : v(t) < C; };
  auto score = [&](Eigen::Index t) { return -z_of(t) * G(t); };

  SvrModel model;
  model.C = C;
  model.epsilon = cfg.epsilon;
  model.kernel.sigma = sigma;

  std::mt19937_64 stall_rng(0x9e3779b97f4a7c15ULL);
  int consecutive_stalls = 0;
  const double kTau = 1e-12;

  long iter = 0;
  for (; iter < cfg.max_iter; ++iter) {
    // maximal violating pair
    Eigen::Index i = -1, j = -1;
    double s_up = -std::numeric_limits<double>::infinity();
    double s_low = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (in_up(t) && score(t) > s_up) {
        s_up = score(t);
        i = t;
      }
      if (in_low(t) && score(t) < s_low) {
        s_low = score(t);
        j = t;
      }
    }
    if (i < 0 || j < 0 || s_up - s_low < cfg.tol) {
      model.converged = true;
      break;
    }

    if (consecutive_stalls > 0) {
      // greedy pair made no progress last time: try a random violating pair
      std::vector<Eigen::Index> ups, lows;
      for (Eigen::Index t = 0; t < n; ++t) {
        if (in_up(t)) ups.push_back(t);
        if (in_low(t)) lows.push_back(t);
      }
      Eigen::Index ri = ups[stall_rng() % ups.size()];
      Eigen::Index rj = lows[stall_rng() % lows.size()];
      if (ri != rj && score(ri) - score(rj) >= cfg.tol) {
        i = ri;
        j = rj;
      }
    }

    const Eigen::Index bi = i % m, bj = j % m;
    const double zi = z_of(i), zj = z_of(j);
    const Vector& Ki = cache.row(bi);
    // careful: fetching Kj may evict Ki only if the cache holds < 2 rows,
    // which the constructor rules out
    const Vector& Kj = cache.row(bj);
    const double Kij = Ki(bj);

    const double old_i = v(i), old_j = v(j);
    if (zi != zj) {
      double quad = 2.0 - 2.0 * Kij;  // Q_ii + Q_jj + 2 Q_ij with Q_ij = -K
      if (quad <= 0.0) quad = kTau;
      const double delta = (-G(i) - G(j)) / quad;
      const double diff = v(i) - v(j);
      v(i) += delta;
      v(j) += delta;
      if (diff > 0.0) {
        if (v(j) < 0.0) {
          v(j) = 0.0;
          v(i) = diff;
        }
      } else {
        if (v(i) < 0.0) {
          v(i) = 0.0;
          v(j) = -diff;
        }
      }
      if (diff > 0.0) {
        if (v(i) > C) {
          v(i) = C;
          v(j) = C - diff;
        }
      } else {
        if (v(j) > C) {
          v(j) = C;
          v(i) = C + diff;
        }
      }
    } else {
      double quad = 2.0 - 2.0 * Kij;  // Q_ii + Q_jj - 2 Q_ij with Q_ij = +K
      if (quad <= 0.0) quad = kTau;
      const double delta = (G(i) - G(j)) / quad;
      const double sum = v(i) + v(j);
      v(i) -= delta;
      v(j) += delta;
      if (sum > C) {
        if (v(i) > C) {
          v(i) = C;
          v(j) = sum - C;
        }
      } else {
        if (v(j) < 0.0) {
          v(j) = 0.0;
          v(i) = sum;
        }
      }
      if (sum > C) {
        if (v(j) > C) {
          v(j) = C;
          v(i) = sum - C;
        }
      } else {
        if (v(i) < 0.0) {
          v(i) = 0.0;
          v(j) = sum;
        }
      }
    }

    const double dvi = v(i) - old_i, dvj = v(j) - old_j;
    if (dvi == 0.0 && dvj == 0.0) {
      if (++consecutive_stalls > 50) break;  // converged stays false
      continue;
    }
    consecutive_stalls = 0;

    // G_k += Q_ik dvi + Q_jk dvj, with Q_tk = z_t z_k K(base_t, base_k)
    Vector u = (zi * dvi) * Ki + (zj * dvj) * Kj;
    G.head(m) += u;
    G.tail(m) -= u;

    if (cfg.record_objective)
      model.objective_history.push_back(0.5 * v.dot(G) + 0.5 * v.dot(p));
  }
  model.iterations = iter;

  // bias from the stationarity conditions: free variables pin b exactly
  // (b = -z_t G_t); otherwise the bound constraints bracket it
  double free_sum = 0.0;
  int free_count = 0;
  double b_low = -std::numeric_limits<double>::infinity();
  double b_high = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < n; ++t) {
    if (v(t) > 0.0 && v(t) < C) {
      free_sum += score(t);
      ++free_count;
    }
    if (in_up(t)) b_low = std::max(b_low, score(t));
    if (in_low(t)) b_high = std::min(b_high, score(t));
  }
  if (free_count > 0)
    model.bias = free_sum / free_count;
  else if (std::isfinite(b_low) && std::isfinite(b_high))
    model.bias = 0.5 * (b_low + b_high);
  else
    model.bias = std::isfinite(b_low) ? b_low : (std::isfinite(b_high) ? b_high : 0.0);

  // keep only rows that actually contribute to the expansion
  std::vector<Eigen::Index> sv;
  for (Eigen::Index r = 0; r < m; ++r)
    if (std::abs(v(r) - v(r + m)) > 1e-12) sv.push_back(r);
  model.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), X.cols());
  model.dual_coefs.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t s = 0; s < sv.size(); ++s) {
    model.support_vectors.row(static_cast<Eigen::Index>(s)) = X.row(sv[s]);
    model.dual_coefs(static_cast<Eigen::Index>(s)) = v(sv[s]) - v(sv[s] + m);
  }
  return model;
}

inline Vector predict(const SvrModel& model, const Matrix& X) {
  if (model.support_vectors.rows() > 0 && X.cols() != model.support_vectors.cols())
    throw std::invalid_argument("predict: feature width mismatch");
  Vector out = Vector::Constant(X.rows(), model.bias);
  if (model.support_vectors.rows() == 0) return out;
  const double inv = 1.0 / (2.0 * model.kernel.sigma * model.kernel.sigma);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Vector k = (-(model.support_vectors.rowwise() - X.row(i)).rowwise().squaredNorm() * inv)
                   .array()
                   .exp();
    out(i) += model.dual_coefs.dot(k);
  }
  return out;
}

// --- serialization ----------------------------------------------------------

inline nlohmann::json to_json(const SvrModel& model) {
  nlohmann::json svs = nlohmann::json::array();
  for (Eigen::Index r = 0; r < model.support_vectors.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < model.support_vectors.cols(); ++c)
      row.push_back(model.support_vectors(r, c));
    svs.push_back(row);
  }
  nlohmann::json coefs = nlohmann::json::array();
  for (Eigen::Index r = 0; r < model.dual_coefs.size(); ++r)
    coefs.push_back(model.dual_coefs(r));
  return {{"support_vectors", svs}, {"dual_coefs", coefs}, {"bias", model.bias},
          {"C", model.C},           {"epsilon", model.epsilon},
          {"sigma", model.kernel.sigma}, {"converged", model.converged}};
}

inline SvrModel svr_from_json(const nlohmann::json& j) {
  SvrModel model;
  model.bias = j.at("bias").get<double>();
  model.C = j.at("C").get<double>();
  model.epsilon = j.at("epsilon").get<double>();
  model.kernel.sigma = j.at("sigma").get<double>();
  model.converged = j.value("converged", true);
  const auto& svs = j.at("support_vectors");
  const auto& coefs = j.at("dual_coefs");
  if (svs.size() != coefs.size())
    throw std::invalid_argument("svr_from_json: support vector / coefficient count mismatch");
  if (!svs.empty()) {
    model.support_vectors.resize(static_cast<Eigen::Index>(svs.size()),
                                 static_cast<Eigen::Index>(svs[0].size()));
    for (std::size_t r = 0; r < svs.size(); ++r)
      for (std::size_t c = 0; c < svs[r].size(); ++c)
        model.support_vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            svs[r][c].get<double>();
  }
  model.dual_coefs.resize(static_cast<Eigen::Index>(coefs.size()));
  for (std::size_t r = 0; r < coefs.size(); ++r)
    model.dual_coefs(static_cast<Eigen::Index>(r)) = coefs[r].get<double>();
  return model;
}

}  // namespace rentfit
