#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "rentfit/csv.hpp"

namespace rentfit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense feature matrix with natural-log price labels.
/// ids are optional per-row identifiers used for joining review sentiment.
struct Dataset {
  Matrix X;
  Vector y;
  std::vector<std::string> feature_names;
  std::vector<std::string> ids;

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index cols() const { return X.cols(); }
};

struct SplitDataset {
  Dataset train;
  Dataset val;
  Dataset test;
  std::uint64_t seed = 0;
};

namespace detail {

// Standard-library shuffles and distributions are implementation-defined;
// this Fisher-Yates keeps row assignment identical across toolchains.
template <typename T>
inline void deterministic_shuffle(std::vector<T>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

template <typename T>
inline void deterministic_shuffle(std::vector<T>& idx, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  deterministic_shuffle(idx, rng);
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline Dataset take_rows(const Dataset& data, const std::vector<Eigen::Index>& idx,
                         std::size_t begin, std::size_t end) {
  Dataset out;
  out.feature_names = data.feature_names;
  out.X.resize(static_cast<Eigen::Index>(end - begin), data.X.cols());
  out.y.resize(static_cast<Eigen::Index>(end - begin));
  bool has_ids = !data.ids.empty();
  if (has_ids) out.ids.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    out.X.row(static_cast<Eigen::Index>(i - begin)) = data.X.row(idx[i]);
    out.y(static_cast<Eigen::Index>(i - begin)) = data.y(idx[i]);
    if (has_ids) out.ids.push_back(data.ids[static_cast<std::size_t>(idx[i])]);
  }
  return out;
}

}  // namespace detail

struct IndexSplit {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> val;
  std::vector<Eigen::Index> test;
};

/// Deterministic shuffled three-way index split: first floor(r0*m) indices to
/// train, next floor(r1*m) to val, remainder to test.
inline IndexSplit split_indices(std::size_t m, const std::array<double, 3>& ratios,
                                std::uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split: ratios must sum to 1");
  if (m < 3) throw std::invalid_argument("split: need at least 3 rows");

  std::vector<Eigen::Index> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = static_cast<Eigen::Index>(i);
  detail::deterministic_shuffle(idx, seed);

  const auto n_train = static_cast<std::size_t>(ratios[0] * static_cast<double>(m));
  const auto n_val = static_cast<std::size_t>(ratios[1] * static_cast<double>(m));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= m)
    throw std::invalid_argument("split: a split would be empty");

  IndexSplit out;
  out.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                 idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return out;
}

inline SplitDataset split(const Dataset& data, const std::array<double, 3>& ratios,
                          std::uint64_t seed) {
  IndexSplit idx = split_indices(static_cast<std::size_t>(data.rows()), ratios, seed);
  SplitDataset out;
  out.seed = seed;
  out.train = detail::take_rows(data, idx.train, 0, idx.train.size());
  out.val = detail::take_rows(data, idx.val, 0, idx.val.size());
  out.test = detail::take_rows(data, idx.test, 0, idx.test.size());
  return out;
}

/// Writes a dataset as CSV: id (when present), log_price, then features.
inline void write_dataset_csv(const Dataset& data, std::ostream& out) {
  std::vector<std::string> row;
  bool has_ids = !data.ids.empty();
  if (has_ids) row.push_back("id");
  row.push_back("log_price");
  for (const auto& n : data.feature_names) row.push_back(n);
  write_csv_row(out, row);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    row.clear();
    if (has_ids) row.push_back(data.ids[static_cast<std::size_t>(i)]);
    row.push_back(format_double(data.y(i)));
    for (Eigen::Index j = 0; j < data.cols(); ++j)
      row.push_back(format_double(data.X(i, j)));
    write_csv_row(out, row);
  }
}

inline void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_dataset_csv(data, out);
}

inline Dataset read_dataset_csv(std::istream& in) {
  RawTable t = parse_csv(in);
  if (t.columns.empty()) throw std::runtime_error("dataset csv: no columns");
  Dataset data;
  std::size_t first_feature = 0;
  if (t.columns[0].name == "id") {
    data.ids = t.columns[0].cells;
    first_feature = 1;
  }
  if (first_feature >= t.columns.size() || t.columns[first_feature].name != "log_price")
    throw std::runtime_error("dataset csv: missing log_price column");
  const auto m = static_cast<Eigen::Index>(t.row_count);
  data.y.resize(m);
  for (Eigen::Index i = 0; i < m; ++i)
    data.y(i) = std::strtod(t.columns[first_feature].cells[static_cast<std::size_t>(i)].c_str(), nullptr);
  ++first_feature;
  const auto d = static_cast<Eigen::Index>(t.columns.size() - first_feature);
  data.X.resize(m, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto& col = t.columns[first_feature + static_cast<std::size_t>(j)];
    data.feature_names.push_back(col.name);
    for (Eigen::Index i = 0; i < m; ++i)
      data.X(i, j) = std::strtod(col.cells[static_cast<std::size_t>(i)].c_str(), nullptr);
  }
  return data;
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_dataset_csv(in);
}

}  // namespace rentfit
