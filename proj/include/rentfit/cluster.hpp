#pragma once

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "rentfit/dataset.hpp"
#include "rentfit/linmod.hpp"

namespace rentfit {

struct KMeansModel {
  Matrix centroids;                    // k x d
  std::vector<int> assignments;        // training-row labels
  double inertia = 0.0;               // sum of squared distances at convergence
  int k = 0;
  std::uint64_t seed = 0;
  int iterations = 0;
  std::vector<double> inertia_history;  // value after each assignment step
  bool converged = false;
};

namespace detail {

inline double sq_dist(const Matrix& X, Eigen::Index row, const Matrix& C, Eigen::Index c) {
  return (X.row(row) - C.row(c)).squaredNorm();
}

// Nearest centroid; ties go to the lower index (operator< keeps the first).
inline int nearest_centroid(const Matrix& X, Eigen::Index row, const Matrix& C) {
  int best = 0;
  double best_d = sq_dist(X, row, C, 0);
  for (Eigen::Index c = 1; c < C.rows(); ++c) {
    double d = sq_dist(X, row, C, c);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

// k-means++: first centroid uniform, the rest drawn with probability
// proportional to squared distance from the nearest centroid so far.
inline Matrix seed_centroids_pp(const Matrix& X, int k, std::mt19937_64& rng) {
  const Eigen::Index m = X.rows();
  Matrix C(k, X.cols());
  std::vector<double> d2(static_cast<std::size_t>(m), 0.0);

  auto first = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(m));
  C.row(0) = X.row(first);
  for (Eigen::Index i = 0; i < m; ++i) d2[static_cast<std::size_t>(i)] = sq_dist(X, i, C, 0);

  for (int c = 1; c < k; ++c) {
    double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index chosen = 0;
    if (total <= 0.0) {
      // all points coincide with existing centroids; fall back to uniform
      chosen = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(m));
    } else {
      double r = uniform01(rng) * total;
      double acc = 0.0;
      chosen = m - 1;
      for (Eigen::Index i = 0; i < m; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc >= r) {
          chosen = i;
          break;
        }
      }
    }
    C.row(c) = X.row(chosen);
    for (Eigen::Index i = 0; i < m; ++i)
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], sq_dist(X, i, C, c));
  }
  return C;
}

inline Matrix seed_centroids_random(const Matrix& X, int k, std::mt19937_64& rng) {
  // sample k distinct rows via a partial shuffle
  const auto m = static_cast<std::size_t>(X.rows());
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = m - 1; i >= 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
    if (m - i >= static_cast<std::size_t>(k)) break;
  }
  Matrix C(k, X.cols());
  for (int c = 0; c < k; ++c) C.row(c) = X.row(static_cast<Eigen::Index>(order[m - 1 - c]));
  return C;
}

}  // namespace detail

/// Lloyd iterations from a k-means++ start (or plain random row sampling when
/// `plus_plus` is false). Assignment ties go to the lower centroid index; an
/// empty cluster is reseeded to the point farthest from its assigned centroid.
/// `inertia_history` records the objective after each assignment step, which
/// makes the non-increase property directly checkable.
inline KMeansModel kmeans_fit(const Matrix& X, int k, std::uint64_t seed,
                              int max_iter = 300, double tol = 1e-7,
                              bool plus_plus = true) {
  const Eigen::Index m = X.rows();
  if (k < 1) throw std::invalid_argument("kmeans_fit: k must be >= 1");
  if (m < k) throw std::invalid_argument("kmeans_fit: need at least k rows");

  std::mt19937_64 rng(seed);
  KMeansModel model;
  model.k = k;
  model.seed = seed;
  model.centroids = plus_plus ? detail::seed_centroids_pp(X, k, rng)
                              : detail::seed_centroids_random(X, k, rng);
  model.assignments.assign(static_cast<std::size_t>(m), 0);

  double prev_inertia = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < max_iter; ++iter) {
    // assignment
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      int c = detail::nearest_centroid(X, i, model.centroids);
      model.assignments[static_cast<std::size_t>(i)] = c;
      inertia += detail::sq_dist(X, i, model.centroids, c);
    }
    model.inertia_history.push_back(inertia);
    model.inertia = inertia;
    model.iterations = iter + 1;

    if (iter > 0 && prev_inertia - inertia <= tol * std::max(1.0, prev_inertia)) {
      model.converged = true;
      break;
    }
    prev_inertia = inertia;

    // update
    Matrix sums = Matrix::Zero(k, X.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < m; ++i) {
      int c = model.assignments[static_cast<std::size_t>(i)];
      sums.row(c) += X.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        model.centroids.row(c) =
            sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // reseed to the point farthest from its own centroid
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < m; ++i) {
          double d = detail::sq_dist(X, i, model.centroids,
                                     model.assignments[static_cast<std::size_t>(i)]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        model.centroids.row(c) = X.row(far);
      }
    }
  }
  return model;
}

inline int kmeans_assign(const KMeansModel& model, const Vector& x) {
  if (x.size() != model.centroids.cols())
    throw std::invalid_argument("kmeans_assign: feature width mismatch");
  int best = 0;
  double best_d = (x.transpose() - model.centroids.row(0)).squaredNorm();
  for (Eigen::Index c = 1; c < model.centroids.rows(); ++c) {
    double d = (x.transpose() - model.centroids.row(c)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

/// k-means over the inputs, then an independent ridge fit per cluster.
/// Clusters smaller than `min_cluster` fall back to a global ridge model so
/// tiny clusters cannot produce wild extrapolations.
struct ClusteredRidgeModel {
  KMeansModel kmeans;
  std::vector<LinearModel> per_cluster;
  LinearModel fallback;
  std::vector<bool> uses_fallback;
  double alpha = 1.0;
};

inline ClusteredRidgeModel fit_clustered_ridge(const Matrix& X, const Vector& y, int k,
                                               double alpha, std::uint64_t seed,
                                               Eigen::Index min_cluster = 50,
                                               bool plus_plus = true) {
  ClusteredRidgeModel model;
  model.alpha = alpha;
  model.kmeans = kmeans_fit(X, k, seed, 300, 1e-7, plus_plus);
  model.fallback = fit_ridge(X, y, alpha);
  model.per_cluster.resize(static_cast<std::size_t>(k));
  model.uses_fallback.assign(static_cast<std::size_t>(k), false);

  for (int c = 0; c < k; ++c) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      if (model.kmeans.assignments[static_cast<std::size_t>(i)] == c) rows.push_back(i);
    if (static_cast<Eigen::Index>(rows.size()) < min_cluster) {
      model.per_cluster[static_cast<std::size_t>(c)] = model.fallback;
      model.uses_fallback[static_cast<std::size_t>(c)] = true;
      continue;
    }
    Matrix Xc(static_cast<Eigen::Index>(rows.size()), X.cols());
    Vector yc(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Xc.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
      yc(static_cast<Eigen::Index>(i)) = y(rows[i]);
    }
    model.per_cluster[static_cast<std::size_t>(c)] = fit_ridge(Xc, yc, alpha);
  }
  return model;
}

inline double predict_one(const ClusteredRidgeModel& model, const Vector& x) {
  int c = kmeans_assign(model.kmeans, x);
  const LinearModel& lm = model.per_cluster[static_cast<std::size_t>(c)];
  return lm.weights.dot(x) + lm.intercept;
}

inline Vector predict(const ClusteredRidgeModel& model, const Matrix& X) {
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = predict_one(model, X.row(i).transpose());
  return out;
}

// --- serialization ---------------------------------------------------------

inline nlohmann::json to_json(const KMeansModel& model) {
  nlohmann::json centroids = nlohmann::json::array();
  for (Eigen::Index c = 0; c < model.centroids.rows(); ++c) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < model.centroids.cols(); ++j) row.push_back(model.centroids(c, j));
    centroids.push_back(row);
  }
  return {{"centroids", centroids}, {"inertia", model.inertia}, {"k", model.k},
          {"seed", model.seed},     {"iterations", model.iterations},
          {"converged", model.converged}};
}

inline KMeansModel kmeans_from_json(const nlohmann::json& j) {
  KMeansModel model;
  model.k = j.at("k").get<int>();
  model.inertia = j.at("inertia").get<double>();
  model.seed = j.at("seed").get<std::uint64_t>();
  model.iterations = j.at("iterations").get<int>();
  model.converged = j.at("converged").get<bool>();
  const auto& centroids = j.at("centroids");
  if (centroids.empty()) throw std::invalid_argument("kmeans_from_json: no centroids");
  model.centroids.resize(static_cast<Eigen::Index>(centroids.size()),
                         static_cast<Eigen::Index>(centroids[0].size()));
  for (std::size_t c = 0; c < centroids.size(); ++c)
    for (std::size_t jj = 0; jj < centroids[c].size(); ++jj)
      model.centroids(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(jj)) =
          centroids[c][jj].get<double>();
  return model;
}

inline nlohmann::json to_json(const ClusteredRidgeModel& model) {
  nlohmann::json cluster_models = nlohmann::json::array();
  for (const auto& lm : model.per_cluster) cluster_models.push_back(to_json(lm));
  return {{"kmeans", to_json(model.kmeans)},
          {"cluster_models", cluster_models},
          {"fallback", to_json(model.fallback)},
          {"uses_fallback", model.uses_fallback},
          {"alpha", model.alpha}};
}

inline ClusteredRidgeModel clustered_ridge_from_json(const nlohmann::json& j) {
  ClusteredRidgeModel model;
  model.kmeans = kmeans_from_json(j.at("kmeans"));
  for (const auto& lm : j.at("cluster_models"))
    model.per_cluster.push_back(linear_model_from_json(lm));
  model.fallback = linear_model_from_json(j.at("fallback"));
  model.uses_fallback = j.at("uses_fallback").get<std::vector<bool>>();
  model.alpha = j.at("alpha").get<double>();
  return model;
}

}  // namespace rentfit
