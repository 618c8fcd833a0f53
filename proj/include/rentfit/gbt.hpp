#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "rentfit/dataset.hpp"

namespace rentfit {

/// One node of a regression tree, stored flat in RegressionTree::nodes.
/// Leaves have feature == -1 and carry `value`; internal nodes route
/// x[feature] < threshold to `left`, the rest to `right`.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
};

inline double predict_one(const RegressionTree& tree, const Vector& x) {
  int node = 0;
  while (tree.nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
    node = x(n.feature) < n.threshold ? n.left : n.right;
  }
  return tree.nodes[static_cast<std::size_t>(node)].value;
}

struct SplitResult {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

namespace detail {

// Best split of `rows` on a single feature, by squared-error reduction.
// With prefix sums S_l over the rows sorted by feature value, the reduction
// simplifies to S_l^2/n_l + S_r^2/n_r - S_p^2/n_p (the constant sum of
// squares cancels). Candidate thresholds are midpoints between consecutive
// distinct values, so equal feature values can never be separated.
inline SplitResult best_split_on_feature(const Matrix& X, const std::vector<double>& targets,
                                         const std::vector<Eigen::Index>& rows, int feature,
                                         Eigen::Index min_leaf) {
  SplitResult best;
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n < 2 * min_leaf) return best;

  std::vector<std::pair<double, double>> vt;  // (feature value, target)
  vt.reserve(rows.size());
  for (Eigen::Index r : rows)
    vt.emplace_back(X(r, feature), targets[static_cast<std::size_t>(r)]);
  std::sort(vt.begin(), vt.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  double total = 0.0;
  for (const auto& [v, t] : vt) total += t;
  const double parent = total * total / static_cast<double>(n);

  double left_sum = 0.0;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    left_sum += vt[static_cast<std::size_t>(i)].second;
    if (vt[static_cast<std::size_t>(i)].first == vt[static_cast<std::size_t>(i + 1)].first)
      continue;  // cannot split between equal values
    const Eigen::Index nl = i + 1, nr = n - nl;
    if (nl < min_leaf || nr < min_leaf) continue;
    const double right_sum = total - left_sum;
    double gain = left_sum * left_sum / static_cast<double>(nl) +
                  right_sum * right_sum / static_cast<double>(nr) - parent;
    if (gain > best.gain) {
      best.found = true;
      best.gain = gain;
      const double lo = vt[static_cast<std::size_t>(i)].first;
      const double hi = vt[static_cast<std::size_t>(i + 1)].first;
      double mid = 0.5 * (lo + hi);
      // for values one ulp apart the midpoint can round down onto `lo`,
      // which would leave `x < threshold` selecting nothing on this side
      if (!(mid > lo)) mid = hi;
      best.feature = feature;
      best.threshold = mid;
    }
  }
  return best;
}

}  // namespace detail

/// Best split across all features. Ties break toward the lowest feature
/// index, then the smallest threshold, so the result is deterministic even
/// under feature permutation.
inline SplitResult best_split(const Matrix& X, const std::vector<double>& targets,
                              const std::vector<Eigen::Index>& rows, Eigen::Index min_leaf) {
  SplitResult best;
  for (int j = 0; j < X.cols(); ++j) {
    SplitResult cand = detail::best_split_on_feature(X, targets, rows, j, min_leaf);
    if (!cand.found) continue;
    if (!best.found || cand.gain > best.gain ||
        (cand.gain == best.gain &&
         (cand.feature < best.feature ||
          (cand.feature == best.feature && cand.threshold < best.threshold)))) {
      best = cand;
    }
  }
  return best;
}

namespace detail {

inline int grow_tree(RegressionTree& tree, const Matrix& X, const std::vector<double>& targets,
                     std::vector<Eigen::Index>& rows, int depth, int max_depth,
                     Eigen::Index min_leaf) {
  double mean = 0.0;
  for (Eigen::Index r : rows) mean += targets[static_cast<std::size_t>(r)];
  mean /= static_cast<double>(rows.size());

  auto node_id = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back({});
  tree.nodes[static_cast<std::size_t>(node_id)].value = mean;

  if (depth >= max_depth) return node_id;
  SplitResult split = best_split(X, targets, rows, min_leaf);
  if (!split.found || split.gain <= 0.0) return node_id;

  std::vector<Eigen::Index> left, right;
  for (Eigen::Index r : rows)
    (X(r, split.feature) < split.threshold ? left : right).push_back(r);
  if (left.empty() || right.empty()) return node_id;  // degenerate threshold: stay a leaf
  rows.clear();
  rows.shrink_to_fit();

  int l = grow_tree(tree, X, targets, left, depth + 1, max_depth, min_leaf);
  int r = grow_tree(tree, X, targets, right, depth + 1, max_depth, min_leaf);
  TreeNode& n = tree.nodes[static_cast<std::size_t>(node_id)];
  n.feature = split.feature;
  n.threshold = split.threshold;
  n.left = l;
  n.right = r;
  return node_id;
}

}  // namespace detail

inline RegressionTree fit_tree(const Matrix& X, const std::vector<double>& targets,
                               int max_depth, Eigen::Index min_leaf) {
  if (X.rows() == 0) throw std::invalid_argument("fit_tree: empty data");
  if (static_cast<std::size_t>(X.rows()) != targets.size())
    throw std::invalid_argument("fit_tree: row/target length mismatch");
  if (max_depth < 0 || min_leaf < 1) throw std::invalid_argument("fit_tree: bad limits");

  RegressionTree tree;
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(X.rows()));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  detail::grow_tree(tree, X, targets, rows, 0, max_depth, min_leaf);
  return tree;
}

// --- boosting ---------------------------------------------------------------

struct GbtConfig {
  int n_iters = 200;
  double learning_rate = 0.1;
  int max_depth = 3;
  Eigen::Index min_leaf = 5;
};

struct GbtEnsemble {
  double f0 = 0.0;  // initial prediction: mean of the targets
  std::vector<RegressionTree> trees;
  double learning_rate = 0.1;
  std::vector<double> train_mse_history;  // after each boosting round
};

inline Vector predict(const GbtEnsemble& model, const Matrix& X) {
  Vector out = Vector::Constant(X.rows(), model.f0);
  for (const auto& tree : model.trees)
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      out(i) += model.learning_rate * predict_one(tree, X.row(i).transpose());
  return out;
}

/// Stagewise squared-error boosting: start from the target mean, fit each
/// tree to the current residuals, and add it scaled by the learning rate.
/// For a rate in (0, 1] the recorded training MSE never increases, because
/// each leaf moves its rows' predictions toward the leaf's residual mean.
inline GbtEnsemble fit_gbt(const Matrix& X, const Vector& y, const GbtConfig& cfg = {}) {
  if (X.rows() != y.size()) throw std::invalid_argument("fit_gbt: row/label mismatch");
  if (X.rows() == 0) throw std::invalid_argument("fit_gbt: empty data");
  if (cfg.n_iters < 1) throw std::invalid_argument("fit_gbt: n_iters must be >= 1");
  if (cfg.learning_rate <= 0.0 || cfg.learning_rate > 1.0)
    throw std::invalid_argument("fit_gbt: learning_rate must be in (0, 1]");

  GbtEnsemble model;
  model.learning_rate = cfg.learning_rate;
  model.f0 = y.mean();

  Vector current = Vector::Constant(y.size(), model.f0);
  std::vector<double> residuals(static_cast<std::size_t>(y.size()));
  for (int it = 0; it < cfg.n_iters; ++it) {
    for (Eigen::Index i = 0; i < y.size(); ++i)
      residuals[static_cast<std::size_t>(i)] = y(i) - current(i);
    RegressionTree tree = fit_tree(X, residuals, cfg.max_depth, cfg.min_leaf);
    for (Eigen::Index i = 0; i < y.size(); ++i)
      current(i) += cfg.learning_rate * predict_one(tree, X.row(i).transpose());
    model.trees.push_back(std::move(tree));
    model.train_mse_history.push_back((y - current).squaredNorm() /
                                      static_cast<double>(y.size()));
  }
  return model;
}

// --- serialization ---------------------------------------------------------

inline nlohmann::json to_json(const RegressionTree& tree) {
  nlohmann::json features = nlohmann::json::array(), thresholds = nlohmann::json::array(),
                 lefts = nlohmann::json::array(), rights = nlohmann::json::array(),
                 values = nlohmann::json::array();
  for (const auto& n : tree.nodes) {
    features.push_back(n.feature);
    thresholds.push_back(n.threshold);
    lefts.push_back(n.left);
    rights.push_back(n.right);
    values.push_back(n.value);
  }
  return {{"feature", features}, {"threshold", thresholds}, {"left", lefts},
          {"right", rights},     {"value", values}};
}

inline RegressionTree tree_from_json(const nlohmann::json& j) {
  RegressionTree tree;
  const auto& features = j.at("feature");
  const auto& thresholds = j.at("threshold");
  const auto& lefts = j.at("left");
  const auto& rights = j.at("right");
  const auto& values = j.at("value");
  for (std::size_t i = 0; i < features.size(); ++i)
    tree.nodes.push_back({features[i].get<int>(), thresholds[i].get<double>(),
                          lefts[i].get<int>(), rights[i].get<int>(), values[i].get<double>()});
  return tree;
}

inline nlohmann::json to_json(const GbtEnsemble& model) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : model.trees) trees.push_back(to_json(t));
  return {{"f0", model.f0},
          {"learning_rate", model.learning_rate},
          {"trees", trees},
          {"train_mse_history", model.train_mse_history}};
}

inline GbtEnsemble gbt_from_json(const nlohmann::json& j) {
  GbtEnsemble model;
  model.f0 = j.at("f0").get<double>();
  model.learning_rate = j.at("learning_rate").get<double>();
  for (const auto& t : j.at("trees")) model.trees.push_back(tree_from_json(t));
  model.train_mse_history = j.at("train_mse_history").get<std::vector<double>>();
  return model;
}

}  // namespace rentfit
