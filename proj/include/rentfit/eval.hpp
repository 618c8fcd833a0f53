#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rentfit/csv.hpp"
#include "rentfit/dataset.hpp"

namespace rentfit {

struct MetricsReport {
  std::string model_name;
  std::string split_name;
  double mae = 0.0;
  double mse = 0.0;
  double r2 = 0.0;
};

/// MAE, MSE and R^2 = 1 - RSS/TSS over paired samples on the ln(price) scale.
inline MetricsReport metrics(const Vector& y, const Vector& y_hat,
                             const std::string& model_name = "",
                             const std::string& split_name = "") {
  if (y.size() != y_hat.size() || y.size() < 2)
    throw std::invalid_argument("metrics: need equal lengths >= 2");
  MetricsReport rep;
  rep.model_name = model_name;
  rep.split_name = split_name;
  Vector err = y - y_hat;
  rep.mae = err.array().abs().mean();
  rep.mse = err.array().square().mean();
  double y_mean = y.mean();
  double tss = (y.array() - y_mean).square().sum();
  if (tss == 0.0)
    throw std::invalid_argument("metrics: R^2 undefined, labels have zero variance");
  rep.r2 = 1.0 - err.squaredNorm() / tss;
  return rep;
}

/// Mean absolute error on the back-transformed price scale (dollars).
inline double price_scale_mae(const Vector& y_log, const Vector& y_hat_log) {
  if (y_log.size() != y_hat_log.size() || y_log.size() < 1)
    throw std::invalid_argument("price_scale_mae: bad shapes");
  return (y_log.array().exp() - y_hat_log.array().exp()).abs().mean();
}

struct HistogramPair {
  std::vector<double> bin_edges;        // ascending, length n_bins + 1
  std::vector<long> predicted_counts;   // length n_bins
  std::vector<long> actual_counts;
};

/// Shared-edge histograms of actual vs predicted values spanning the joint
/// range; the final bin is right-inclusive.
inline HistogramPair histogram_pair(const Vector& y, const Vector& y_hat, int n_bins) {
  if (n_bins < 1) throw std::invalid_argument("histogram_pair: n_bins must be >= 1");
  if (y.size() != y_hat.size() || y.size() < 1)
    throw std::invalid_argument("histogram_pair: bad shapes");

  double lo = std::min(y.minCoeff(), y_hat.minCoeff());
  double hi = std::max(y.maxCoeff(), y_hat.maxCoeff());
  if (lo == hi) {  // degenerate range: center a unit-wide span on the value
    lo -= 0.5;
    hi += 0.5;
  }

  HistogramPair h;
  h.bin_edges.resize(static_cast<std::size_t>(n_bins) + 1);
  for (int b = 0; b <= n_bins; ++b)
    h.bin_edges[static_cast<std::size_t>(b)] =
        lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(n_bins);
  h.bin_edges.back() = hi;
  h.predicted_counts.assign(static_cast<std::size_t>(n_bins), 0);
  h.actual_counts.assign(static_cast<std::size_t>(n_bins), 0);

  auto bin_of = [&](double v) {
    auto b = static_cast<long>((v - lo) / (hi - lo) * n_bins);
    return std::clamp(b, 0L, static_cast<long>(n_bins) - 1);
  };
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    ++h.actual_counts[static_cast<std::size_t>(bin_of(y(i)))];
    ++h.predicted_counts[static_cast<std::size_t>(bin_of(y_hat(i)))];
  }
  return h;
}

// --- report writers -----------------------------------------------------

inline void write_metrics_csv(const std::vector<MetricsReport>& reports, std::ostream& out,
                              bool price_scale_column = false,
                              const std::vector<double>& price_maes = {}) {
  std::vector<std::string> row{"model", "split", "mae", "mse", "r2"};
  if (price_scale_column) row.push_back("mae_price");
  write_csv_row(out, row);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    row = {r.model_name, r.split_name, format_double(r.mae), format_double(r.mse),
           format_double(r.r2)};
    if (price_scale_column) row.push_back(format_double(price_maes.at(i)));
    write_csv_row(out, row);
  }
}

inline void write_histogram_csv(const HistogramPair& h, std::ostream& out) {
  write_csv_row(out, {"bin_left", "bin_right", "predicted", "actual"});
  for (std::size_t b = 0; b + 1 < h.bin_edges.size(); ++b)
    write_csv_row(out, {format_double(h.bin_edges[b]), format_double(h.bin_edges[b + 1]),
                        std::to_string(h.predicted_counts[b]),
                        std::to_string(h.actual_counts[b])});
}

}  // namespace rentfit
