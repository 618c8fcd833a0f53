#pragma once

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rentfit/dataset.hpp"
#include "rentfit/eval.hpp"
#include "rentfit/linmod.hpp"

namespace rentfit {

enum class SelectionMethod { manual, lasso, pvalue };

inline std::string to_string(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::manual: return "manual";
    case SelectionMethod::lasso: return "lasso";
    case SelectionMethod::pvalue: return "pvalue";
  }
  return "?";
}

inline SelectionMethod selection_method_from_string(const std::string& s) {
  if (s == "manual") return SelectionMethod::manual;
  if (s == "lasso") return SelectionMethod::lasso;
  if (s == "pvalue") return SelectionMethod::pvalue;
  throw std::invalid_argument("unknown selection method: " + s);
}

/// Ordered subset of feature indices produced by one selection method,
/// with the validation R^2 it achieved.
struct FeatureMask {
  std::vector<int> indices;  // strictly increasing
  std::vector<std::string> names;
  SelectionMethod method = SelectionMethod::manual;
  double score = 0.0;
};

struct CandidateScore {
  double param = 0.0;  // lasso alpha, or k for the p-value sweep
  int n_features = 0;
  double val_r2 = 0.0;
};

struct SelectionResult {
  FeatureMask mask;
  std::vector<CandidateScore> trace;       // every candidate examined
  std::vector<std::string> unmatched;      // manual selection only
};

/// Column subset of a dataset given a mask.
inline Dataset apply_mask(const Dataset& data, const FeatureMask& mask) {
  Dataset out;
  out.y = data.y;
  out.ids = data.ids;
  out.X.resize(data.rows(), static_cast<Eigen::Index>(mask.indices.size()));
  for (std::size_t j = 0; j < mask.indices.size(); ++j) {
    int idx = mask.indices[j];
    if (idx < 0 || idx >= data.cols())
      throw std::invalid_argument("apply_mask: index out of range");
    out.X.col(static_cast<Eigen::Index>(j)) = data.X.col(idx);
    out.feature_names.push_back(data.feature_names[static_cast<std::size_t>(idx)]);
  }
  return out;
}

namespace detail {

// Validation R^2 of an OLS refit on the masked columns.
inline double masked_ols_val_r2(const Dataset& train, const Dataset& val,
                                const std::vector<int>& indices) {
  Matrix Xt(train.rows(), static_cast<Eigen::Index>(indices.size()));
  Matrix Xv(val.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    Xt.col(static_cast<Eigen::Index>(j)) = train.X.col(indices[j]);
    Xv.col(static_cast<Eigen::Index>(j)) = val.X.col(indices[j]);
  }
  LinearModel model = fit_ols(Xt, train.y);
  return metrics(val.y, predict(model, Xv)).r2;
}

inline std::vector<std::string> names_for(const Dataset& data, const std::vector<int>& idx) {
  std::vector<std::string> names;
  names.reserve(idx.size());
  for (int i : idx) names.push_back(data.feature_names[static_cast<std::size_t>(i)]);
  return names;
}

}  // namespace detail

/// Fits Lasso at each alpha, keeps the nonzero-weight support, scores an OLS
/// refit on the validation split, and returns the best-scoring mask. Ties
/// break toward larger alpha (the sparser model).
inline SelectionResult lasso_select(const Dataset& train, const Dataset& val,
                                    const std::vector<double>& alpha_grid) {
  if (alpha_grid.empty()) throw std::invalid_argument("lasso_select: empty alpha grid");
  for (double a : alpha_grid)
    if (a <= 0) throw std::invalid_argument("lasso_select: alphas must be > 0");

  SelectionResult res;
  bool found = false;
  double best_r2 = 0.0, best_alpha = 0.0;
  std::vector<int> best_indices;

  std::vector<double> grid = alpha_grid;
  std::sort(grid.begin(), grid.end());
  for (double alpha : grid) {
    LassoResult fit = fit_lasso(train.X, train.y, alpha);
    std::vector<int> indices;
    for (Eigen::Index j = 0; j < fit.model.weights.size(); ++j)
      if (fit.model.weights(j) != 0.0) indices.push_back(static_cast<int>(j));
    if (indices.empty()) continue;
    double r2 = detail::masked_ols_val_r2(train, val, indices);
    res.trace.push_back({alpha, static_cast<int>(indices.size()), r2});
    if (!found || r2 > best_r2 || (r2 == best_r2 && alpha > best_alpha)) {
      found = true;
      best_r2 = r2;
      best_alpha = alpha;
      best_indices = indices;
    }
  }
  if (!found)
    throw std::runtime_error(
        "lasso_select: every alpha shrank all weights to zero; use smaller alphas");

  res.mask.indices = best_indices;
  res.mask.names = detail::names_for(train, best_indices);
  res.mask.method = SelectionMethod::lasso;
  res.mask.score = best_r2;
  return res;
}

/// Ranks features by OLS p-value (ties by column order), then sweeps the
/// top-k prefix for the k whose OLS refit scores best on validation.
inline SelectionResult pvalue_select(const Dataset& train, const Dataset& val, int cap = 100) {
  if (cap < 1) throw std::invalid_argument("pvalue_select: cap must be >= 1");
  OlsDiagnostics diag = ols_pvalues(train.X, train.y);

  const auto d = static_cast<int>(train.cols());
  std::vector<int> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return diag.p_values(a) < diag.p_values(b); });

  SelectionResult res;
  bool found = false;
  double best_r2 = 0.0;
  std::vector<int> best_indices;
  int k_max = std::min(cap, d);
  for (int k = 1; k <= k_max; ++k) {
    std::vector<int> indices(order.begin(), order.begin() + k);
    std::sort(indices.begin(), indices.end());
    double r2 = detail::masked_ols_val_r2(train, val, indices);
    res.trace.push_back({static_cast<double>(k), k, r2});
    if (!found || r2 > best_r2) {
      found = true;
      best_r2 = r2;
      best_indices = indices;
    }
  }

  res.mask.indices = best_indices;
  res.mask.names = detail::names_for(train, best_indices);
  res.mask.method = SelectionMethod::pvalue;
  res.mask.score = best_r2;
  return res;
}

/// Mask of features whose names match; unmatched names are reported, not fatal.
inline SelectionResult manual_select(const Dataset& data, const std::vector<std::string>& names) {
  SelectionResult res;
  std::vector<int> indices;
  for (const auto& name : names) {
    auto it = std::find(data.feature_names.begin(), data.feature_names.end(), name);
    if (it == data.feature_names.end())
      res.unmatched.push_back(name);
    else
      indices.push_back(static_cast<int>(it - data.feature_names.begin()));
  }
  if (indices.empty())
    throw std::runtime_error("manual_select: no provided names match the schema");
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());

  res.mask.indices = indices;
  res.mask.names = detail::names_for(data, indices);
  res.mask.method = SelectionMethod::manual;
  res.mask.score = 0.0;
  return res;
}

// --- method comparison ----------------------------------------------------

struct ComparisonRow {
  std::string method;
  int n_features = 0;
  double val_r2 = 0.0;
};

struct SelectionSettings {
  std::vector<double> alpha_grid;
  int pvalue_cap = 100;
  std::vector<std::string> manual_names;
};

/// Default grid when the configuration gives none: 30 points log-spaced
/// in [1e-4, 1].
inline std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  const int n = 30;
  for (int i = 0; i < n; ++i)
    grid.push_back(std::pow(10.0, -4.0 + 4.0 * static_cast<double>(i) / (n - 1)));
  return grid;
}

/// Scores each requested method (validation R^2 of its masked OLS refit)
/// next to the all-features baseline, best first.
inline std::vector<ComparisonRow> compare_selection(const Dataset& train, const Dataset& val,
                                                    const std::vector<SelectionMethod>& methods,
                                                    const SelectionSettings& settings) {
  if (methods.empty()) throw std::invalid_argument("compare_selection: no methods");
  std::vector<ComparisonRow> rows;

  std::vector<int> all(static_cast<std::size_t>(train.cols()));
  std::iota(all.begin(), all.end(), 0);
  rows.push_back({"baseline_all", static_cast<int>(train.cols()),
                  detail::masked_ols_val_r2(train, val, all)});

  for (SelectionMethod method : methods) {
    SelectionResult sel;
    switch (method) {
      case SelectionMethod::lasso:
        sel = lasso_select(train, val,
                           settings.alpha_grid.empty() ? default_alpha_grid()
                                                       : settings.alpha_grid);
        break;
      case SelectionMethod::pvalue:
        sel = pvalue_select(train, val, settings.pvalue_cap);
        break;
      case SelectionMethod::manual:
        sel = manual_select(train, settings.manual_names);
        sel.mask.score = detail::masked_ols_val_r2(train, val, sel.mask.indices);
        break;
    }
    rows.push_back({to_string(method), static_cast<int>(sel.mask.indices.size()),
                    sel.mask.score});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ComparisonRow& a, const ComparisonRow& b) {
                     return a.val_r2 > b.val_r2;
                   });
  return rows;
}

inline void write_selection_csv(const std::vector<ComparisonRow>& rows, std::ostream& out) {
  write_csv_row(out, {"method", "n_features", "val_r2"});
  for (const auto& r : rows)
    write_csv_row(out, {r.method, std::to_string(r.n_features), format_double(r.val_r2)});
}

/// Bar-chart companion to the comparison CSV: labels plus values.
inline nlohmann::json selection_chart_json(const std::vector<ComparisonRow>& rows) {
  nlohmann::json j;
  j["title"] = "Best validation R^2 by selection method";
  nlohmann::json labels = nlohmann::json::array(), values = nlohmann::json::array(),
                 counts = nlohmann::json::array();
  for (const auto& r : rows) {
    labels.push_back(r.method);
    values.push_back(r.val_r2);
    counts.push_back(r.n_features);
  }
  j["labels"] = labels;
  j["val_r2"] = values;
  j["n_features"] = counts;
  return j;
}

// --- mask serialization --------------------------------------------------

inline nlohmann::json to_json(const FeatureMask& mask) {
  return {{"method", to_string(mask.method)},
          {"indices", mask.indices},
          {"names", mask.names},
          {"score", mask.score}};
}

inline FeatureMask feature_mask_from_json(const nlohmann::json& j) {
  FeatureMask mask;
  mask.method = selection_method_from_string(j.at("method").get<std::string>());
  mask.indices = j.at("indices").get<std::vector<int>>();
  mask.names = j.at("names").get<std::vector<std::string>>();
  mask.score = j.at("score").get<double>();
  return mask;
}

}  // namespace rentfit
