#include <catch2/catch_amalgamated.hpp>

#include <rentfit/gbt.hpp>

#include <cmath>
#include <random>

using namespace rentfit;

namespace {

double u01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Exhaustive reference scan with the library's tie conventions: within a
// feature only a strictly larger gain replaces (so the earliest boundary of
// a tie wins); across features, equal gains prefer the lower feature index,
// then the smaller threshold.
SplitResult reference_split(const Matrix& X, const std::vector<double>& targets,
                            Eigen::Index min_leaf) {
  SplitResult best;
  const Eigen::Index n = X.rows();
  if (n < 2 * min_leaf) return best;
  for (int j = 0; j < X.cols(); ++j) {
    std::vector<std::pair<double, double>> vt;
    for (Eigen::Index i = 0; i < n; ++i)
      vt.emplace_back(X(i, j), targets[static_cast<std::size_t>(i)]);
    std::sort(vt.begin(), vt.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    double total = 0.0;
    for (const auto& [v, t] : vt) total += t;
    const double parent = total * total / static_cast<double>(n);

    SplitResult feature_best;
    double left_sum = 0.0;
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      left_sum += vt[static_cast<std::size_t>(i)].second;
      if (vt[static_cast<std::size_t>(i)].first == vt[static_cast<std::size_t>(i + 1)].first)
        continue;
      const Eigen::Index nl = i + 1, nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double right_sum = total - left_sum;
      double gain = left_sum * left_sum / static_cast<double>(nl) +
                    right_sum * right_sum / static_cast<double>(nr) - parent;
      if (gain > feature_best.gain) {
        const double lo = vt[static_cast<std::size_t>(i)].first;
        const double hi = vt[static_cast<std::size_t>(i + 1)].first;
        double mid = 0.5 * (lo + hi);
        if (!(mid > lo)) mid = hi;
        feature_best = {true, j, mid, gain};
      }
    }
    if (!feature_best.found) continue;
    if (!best.found || feature_best.gain > best.gain ||
        (feature_best.gain == best.gain &&
         (feature_best.feature < best.feature ||
          (feature_best.feature == best.feature && feature_best.threshold < best.threshold))))
      best = feature_best;
  }
  return best;
}

std::vector<Eigen::Index> all_rows(Eigen::Index n) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  return rows;
}

}  // namespace

TEST_CASE("split search agrees with an exhaustive reference scan", "[gbt]") {
  std::mt19937_64 rng(314);
  for (int trial = 0; trial < 40; ++trial) {
    const Eigen::Index n = 4 + static_cast<Eigen::Index>(rng() % 28);
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 4);
    Matrix X(n, d);
    std::vector<double> y(static_cast<std::size_t>(n));
    const bool quantize = trial % 3 == 0;  // force duplicate feature values
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) {
        double v = 2.0 * u01(rng) - 1.0;
        X(i, j) = quantize ? std::round(v * 4.0) / 4.0 : v;
      }
      y[static_cast<std::size_t>(i)] = 2.0 * u01(rng) - 1.0;
    }
    const Eigen::Index min_leaf = 1 + static_cast<Eigen::Index>(rng() % 3);

    SplitResult lib = best_split(X, y, all_rows(n), min_leaf);
    SplitResult ref = reference_split(X, y, min_leaf);
    REQUIRE(lib.found == ref.found);
    if (lib.found) {
      CHECK(lib.feature == ref.feature);
      CHECK(lib.threshold == ref.threshold);
      CHECK_THAT(lib.gain, Catch::Matchers::WithinAbs(ref.gain, 1e-12));
    }
  }
}

TEST_CASE("gain ties break to the lowest feature, then the smallest threshold", "[gbt]") {
  // identical columns: equal gain everywhere, so feature 0 must win
  Matrix X(4, 2);
  X << 0, 0, 0, 0, 1, 1, 1, 1;
  X.col(1) = X.col(0);
  std::vector<double> y{0.0, 0.0, 1.0, 1.0};
  SplitResult s = best_split(X, y, all_rows(4), 1);
  REQUIRE(s.found);
  CHECK(s.feature == 0);
  CHECK(s.threshold == 0.5);

  // two boundaries with identical gain on one feature: earliest wins
  Matrix X2(4, 1);
  X2 << 0, 1, 2, 3;
  std::vector<double> y2{0.0, 1.0, 1.0, 0.0};
  SplitResult s2 = best_split(X2, y2, all_rows(4), 1);
  REQUIRE(s2.found);
  CHECK(s2.threshold == 0.5);
}

TEST_CASE("minimum leaf size restricts candidate boundaries", "[gbt]") {
  Matrix X(4, 1);
  X << 0, 1, 2, 3;
  std::vector<double> y{0.0, 0.0, 1.0, 1.0};
  SplitResult s = best_split(X, y, all_rows(4), 2);
  REQUIRE(s.found);
  CHECK(s.threshold == 1.5);  // only the middle boundary keeps 2 rows per side

  SplitResult none = best_split(X, y, all_rows(4), 3);
  CHECK_FALSE(none.found);
}

TEST_CASE("constant targets and zero depth produce a single leaf", "[gbt]") {
  Matrix X(6, 2);
  std::mt19937_64 rng(9);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) X(i, j) = u01(rng);

  std::vector<double> flat(6, 3.25);
  RegressionTree t1 = fit_tree(X, flat, 4, 1);
  REQUIRE(t1.nodes.size() == 1);
  CHECK(t1.nodes[0].feature == -1);
  CHECK_THAT(t1.nodes[0].value, Catch::Matchers::WithinAbs(3.25, 1e-12));

  std::vector<double> varied{1, 2, 3, 4, 5, 6};
  RegressionTree t2 = fit_tree(X, varied, 0, 1);
  REQUIRE(t2.nodes.size() == 1);
  CHECK_THAT(t2.nodes[0].value, Catch::Matchers::WithinAbs(3.5, 1e-12));
}

TEST_CASE("hand-built trees route the boundary value right", "[gbt]") {
  RegressionTree tree;
  tree.nodes.push_back({0, 0.5, 1, 2, 0.0});
  tree.nodes.push_back({-1, 0.0, -1, -1, 10.0});
  tree.nodes.push_back({-1, 0.0, -1, -1, 20.0});

  Vector x(1);
  x << 0.25;
  CHECK(predict_one(tree, x) == 10.0);
  x << 0.5;  // `<` comparison: the threshold itself goes right
  CHECK(predict_one(tree, x) == 20.0);
  x << 0.75;
  CHECK(predict_one(tree, x) == 20.0);
}

TEST_CASE("tree growth validates its inputs", "[gbt]") {
  Matrix empty(0, 2);
  std::vector<double> none;
  CHECK_THROWS_AS(fit_tree(empty, none, 3, 1), std::invalid_argument);

  Matrix X(3, 1);
  X << 1, 2, 3;
  std::vector<double> y{1, 2};
  CHECK_THROWS_AS(fit_tree(X, y, 3, 1), std::invalid_argument);
  std::vector<double> y3{1, 2, 3};
  CHECK_THROWS_AS(fit_tree(X, y3, -1, 1), std::invalid_argument);
  CHECK_THROWS_AS(fit_tree(X, y3, 3, 0), std::invalid_argument);
}

TEST_CASE("boosting drives training error down monotonically", "[gbt]") {
  std::mt19937_64 rng(271);
  Matrix X(80, 3);
  Vector y(80);
  for (Eigen::Index i = 0; i < 80; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) X(i, j) = 2.0 * u01(rng) - 1.0;
    y(i) = std::sin(3.0 * X(i, 0)) + 0.5 * X(i, 1) * X(i, 2);
  }
  GbtConfig cfg;
  cfg.n_iters = 60;
  cfg.learning_rate = 0.1;
  cfg.max_depth = 3;
  cfg.min_leaf = 2;
  GbtEnsemble model = fit_gbt(X, y, cfg);

  REQUIRE(model.train_mse_history.size() == 60);
  for (std::size_t i = 1; i < model.train_mse_history.size(); ++i)
    CHECK(model.train_mse_history[i] <= model.train_mse_history[i - 1] + 1e-12);
  CHECK_THAT(model.f0, Catch::Matchers::WithinAbs(y.mean(), 1e-12));

  // enough capacity memorizes the sample
  GbtConfig deep = cfg;
  deep.n_iters = 200;
  deep.min_leaf = 1;
  deep.max_depth = 4;
  GbtEnsemble memo = fit_gbt(X, y, deep);
  CHECK(memo.train_mse_history.back() < 1e-3);
  CHECK((predict(memo, X) - y).cwiseAbs().maxCoeff() < 0.2);
}

TEST_CASE("boosting rejects out-of-range settings", "[gbt]") {
  Matrix X(4, 1);
  X << 1, 2, 3, 4;
  Vector y(4);
  y << 1, 2, 3, 4;
  GbtConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(fit_gbt(X, y, cfg), std::invalid_argument);
  cfg.learning_rate = 1.5;
  CHECK_THROWS_AS(fit_gbt(X, y, cfg), std::invalid_argument);
  cfg.learning_rate = 0.1;
  cfg.n_iters = 0;
  CHECK_THROWS_AS(fit_gbt(X, y, cfg), std::invalid_argument);
}

TEST_CASE("ensembles survive JSON round-trips", "[gbt]") {
  std::mt19937_64 rng(555);
  Matrix X(40, 2);
  Vector y(40);
  for (Eigen::Index i = 0; i < 40; ++i) {
    X(i, 0) = u01(rng);
    X(i, 1) = u01(rng);
    y(i) = X(i, 0) * X(i, 1);
  }
  GbtConfig cfg;
  cfg.n_iters = 15;
  GbtEnsemble model = fit_gbt(X, y, cfg);
  GbtEnsemble back = gbt_from_json(nlohmann::json::parse(to_json(model).dump()));
  CHECK(back.f0 == model.f0);
  CHECK(back.learning_rate == model.learning_rate);
  REQUIRE(back.trees.size() == model.trees.size());
  CHECK((predict(back, X) - predict(model, X)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("feature values one ulp apart still split cleanly", "[gbt]") {
  const double lo = 1.0;
  const double hi = std::nextafter(1.0, 2.0);
  REQUIRE(0.5 * (lo + hi) == lo);  // the naive midpoint collapses onto lo

  Matrix X(4, 1);
  X << lo, lo, hi, hi;
  std::vector<double> y{0.0, 0.0, 1.0, 1.0};
  SplitResult s = best_split(X, y, all_rows(4), 1);
  REQUIRE(s.found);
  CHECK(s.threshold == hi);  // nudged up so `x < threshold` keeps the low side

  RegressionTree tree = fit_tree(X, y, 2, 1);
  Vector probe(1);
  probe << lo;
  CHECK(predict_one(tree, probe) == 0.0);
  probe << hi;
  CHECK(predict_one(tree, probe) == 1.0);

  Vector yv(4);
  yv << 0.0, 0.0, 1.0, 1.0;
  GbtConfig cfg;
  cfg.n_iters = 50;
  cfg.max_depth = 2;
  cfg.min_leaf = 1;
  GbtEnsemble model = fit_gbt(X, yv, cfg);
  for (const auto& t : model.trees)
    for (const auto& n : t.nodes) REQUIRE(std::isfinite(n.value));
  CHECK(predict(model, X).allFinite());
  CHECK((predict(model, X) - yv).cwiseAbs().maxCoeff() < 1e-2);
}
