#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rentfit/csv.hpp"
#include "rentfit/dataset.hpp"

namespace rentfit {

enum class ColumnKind { numeric, currency, boolean, categorical, text, drop };

inline std::string to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::numeric: return "numeric";
    case ColumnKind::currency: return "currency";
    case ColumnKind::boolean: return "boolean";
    case ColumnKind::categorical: return "categorical";
    case ColumnKind::text: return "text";
    case ColumnKind::drop: return "drop";
  }
  return "?";
}

inline ColumnKind column_kind_from_string(const std::string& s) {
  if (s == "numeric") return ColumnKind::numeric;
  if (s == "currency") return ColumnKind::currency;
  if (s == "boolean") return ColumnKind::boolean;
  if (s == "categorical") return ColumnKind::categorical;
  if (s == "text") return ColumnKind::text;
  if (s == "drop") return ColumnKind::drop;
  throw std::invalid_argument("unknown column kind: " + s);
}

/// Per-column treatment decisions, loaded from a schema config file rather
/// than inferred, so the judgment calls stay explicit and reviewable.
struct Schema {
  std::string label_column;
  std::string id_column;  // optional; "" when absent
  std::map<std::string, ColumnKind> kinds;
  double missing_threshold = 0.5;
  int max_categories = 200;
};

inline Schema load_schema(std::istream& in) {
  nlohmann::json j;
  in >> j;
  Schema s;
  s.label_column = j.at("label").get<std::string>();
  if (j.contains("id")) s.id_column = j.at("id").get<std::string>();
  if (j.contains("missing_threshold")) s.missing_threshold = j.at("missing_threshold").get<double>();
  if (j.contains("max_categories")) s.max_categories = j.at("max_categories").get<int>();
  for (auto& [name, kind] : j.at("columns").items())
    s.kinds[name] = column_kind_from_string(kind.get<std::string>());
  return s;
}

inline Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read schema " + path);
  return load_schema(in);
}

struct FeatureStat {
  std::string name;
  double mean = 0;
  double stddev = 1;
};

/// Frozen, replayable record of every fitted preprocessing decision.
/// Normalization statistics come from training rows only.
struct TransformPlan {
  std::vector<std::string> drops;
  std::vector<std::string> currency_columns;
  std::vector<std::string> boolean_columns;
  std::map<std::string, std::vector<std::string>> categorical_maps;
  std::vector<std::string> fill_zero_columns;
  std::vector<FeatureStat> normalization_stats;
  std::string label_column;
  std::string id_column;
  // Surviving source columns in table order; drives replay and output layout.
  std::vector<std::pair<std::string, ColumnKind>> feature_columns;

  bool is_currency(const std::string& c) const {
    return std::find(currency_columns.begin(), currency_columns.end(), c) != currency_columns.end();
  }
};

namespace detail {

inline std::optional<double> parse_number(const std::string& s) {
  const char* p = s.c_str();
  char* end = nullptr;
  double v = std::strtod(p, &end);
  if (end == p) return std::nullopt;
  while (*end == ' ' || *end == '\t') ++end;
  if (*end != '\0') return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

// "$1,500.00" -> 1500.0; plain numbers pass through.
inline std::optional<double> parse_currency(const std::string& s) {
  std::string clean;
  clean.reserve(s.size());
  for (char c : s)
    if (c != '$' && c != ',' && c != ' ') clean.push_back(c);
  if (clean.empty()) return std::nullopt;
  return parse_number(clean);
}

inline std::string ascii_lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

inline std::optional<double> parse_boolean(const std::string& s) {
  std::string v = ascii_lower(s);
  if (v == "t" || v == "true" || v == "1" || v == "yes") return 1.0;
  if (v == "f" || v == "false" || v == "0" || v == "no") return 0.0;
  return std::nullopt;
}

// Column indices resolved once per (table, plan) pair.
struct PlanIndex {
  std::vector<int> feature;  // aligned with plan.feature_columns
  int label = -1;

  PlanIndex(const RawTable& table, const TransformPlan& plan) {
    for (const auto& [name, kind] : plan.feature_columns) {
      int ci = table.column_index(name);
      if (ci < 0) throw std::invalid_argument("plan column missing from table: " + name);
      feature.push_back(ci);
    }
    label = table.column_index(plan.label_column);
    if (label < 0)
      throw std::invalid_argument("label column missing from table: " + plan.label_column);
  }
};

// Raw (pre-normalization) feature encoding of one row. Returns false when
// a non-empty cell cannot be parsed, which drops the row.
inline bool encode_row_raw(const RawTable& table, const TransformPlan& plan,
                           const PlanIndex& index, std::size_t row,
                           std::vector<double>& out) {
  out.clear();
  for (std::size_t c = 0; c < plan.feature_columns.size(); ++c) {
    const auto& [name, kind] = plan.feature_columns[c];
    const std::string& cell =
        table.columns[static_cast<std::size_t>(index.feature[c])].cells[row];
    switch (kind) {
      case ColumnKind::numeric:
      case ColumnKind::currency: {
        if (cell.empty()) {
          out.push_back(0.0);  // fill_zero column
          break;
        }
        auto v = kind == ColumnKind::currency ? parse_currency(cell) : parse_number(cell);
        if (!v) return false;
        out.push_back(*v);
        break;
      }
      case ColumnKind::boolean: {
        if (cell.empty()) {
          out.push_back(0.0);
          break;
        }
        auto v = parse_boolean(cell);
        if (!v) return false;
        out.push_back(*v);
        break;
      }
      case ColumnKind::categorical: {
        const auto& cats = plan.categorical_maps.at(name);
        std::size_t base = out.size();
        out.resize(base + cats.size(), 0.0);
        if (!cell.empty()) {
          auto it = std::lower_bound(cats.begin(), cats.end(), cell);
          // unseen category stays an all-zero block
          if (it != cats.end() && *it == cell)
            out[base + static_cast<std::size_t>(it - cats.begin())] = 1.0;
        }
        break;
      }
      default:
        break;  // text/drop columns never appear in feature_columns
    }
  }
  return true;
}

inline std::optional<double> parse_label(const RawTable& table, const PlanIndex& index,
                                         std::size_t row) {
  const std::string& cell = table.columns[static_cast<std::size_t>(index.label)].cells[row];
  if (cell.empty()) return std::nullopt;
  auto price = parse_currency(cell);  // strips $ and , for plain numerics too
  if (!price || *price <= 0.0) return std::nullopt;
  return std::log(*price);
}

}  // namespace detail

/// Builds the transform plan from schema kinds and the training row set.
/// Columns whose missing rate exceeds the schema threshold are dropped in
/// addition to columns marked drop. Category maps and normalization stats
/// are computed from training rows only.
inline TransformPlan build_transform_plan(const RawTable& table, const Schema& schema,
                                          const std::vector<std::size_t>& train_rows) {
  for (const auto& col : table.columns) {
    auto it = schema.kinds.find(col.name);
    if (it == schema.kinds.end())
      throw std::invalid_argument("schema does not cover column: " + col.name);
  }
  auto label_it = schema.kinds.find(schema.label_column);
  if (label_it == schema.kinds.end() || table.column_index(schema.label_column) < 0)
    throw std::invalid_argument("label column not present: " + schema.label_column);
  if (label_it->second == ColumnKind::drop)
    throw std::invalid_argument("label column is marked drop: " + schema.label_column);

  TransformPlan plan;
  plan.label_column = schema.label_column;
  plan.id_column = schema.id_column;

  for (const auto& col : table.columns) {
    ColumnKind kind = schema.kinds.at(col.name);
    if (col.name == schema.label_column || col.name == schema.id_column) continue;
    if (kind == ColumnKind::drop) {
      plan.drops.push_back(col.name);
      continue;
    }
    if (kind == ColumnKind::text) continue;  // kept out of the feature matrix
    std::size_t missing = 0;
    for (const auto& cell : col.cells)
      if (cell.empty()) ++missing;
    if (table.row_count > 0 &&
        static_cast<double>(missing) / static_cast<double>(table.row_count) >
            schema.missing_threshold) {
      plan.drops.push_back(col.name);
      continue;
    }
    plan.feature_columns.emplace_back(col.name, kind);
    switch (kind) {
      case ColumnKind::currency:
        plan.currency_columns.push_back(col.name);
        plan.fill_zero_columns.push_back(col.name);
        break;
      case ColumnKind::numeric:
      case ColumnKind::boolean:
        if (kind == ColumnKind::boolean) plan.boolean_columns.push_back(col.name);
        plan.fill_zero_columns.push_back(col.name);
        break;
      case ColumnKind::categorical: {
        std::set<std::string> cats;
        for (std::size_t r : train_rows) {
          const std::string& cell = col.cells[r];
          if (!cell.empty()) cats.insert(cell);
        }
        if (static_cast<int>(cats.size()) > schema.max_categories)
          throw std::runtime_error("categorical column " + col.name + " has " +
                                   std::to_string(cats.size()) + " categories, limit " +
                                   std::to_string(schema.max_categories));
        plan.categorical_maps[col.name] =
            std::vector<std::string>(cats.begin(), cats.end());
        break;
      }
      default:
        break;
    }
  }

  // Output feature names: source column name for scalar kinds, the category
  // value for one-hot blocks (mirrors the study's feature list), de-duplicated.
  std::vector<std::string> names;
  for (const auto& [name, kind] : plan.feature_columns) {
    if (kind == ColumnKind::categorical)
      for (const auto& cat : plan.categorical_maps.at(name)) names.push_back(cat);
    else
      names.push_back(name);
  }
  names = dedup_names(names);

  // Normalization statistics over training rows that survive encoding.
  detail::PlanIndex index(table, plan);
  std::vector<double> sum(names.size(), 0.0), sumsq(names.size(), 0.0);
  std::size_t n = 0;
  std::vector<double> raw;
  for (std::size_t r : train_rows) {
    if (!detail::parse_label(table, index, r)) continue;
    if (!detail::encode_row_raw(table, plan, index, r, raw)) continue;
    ++n;
    for (std::size_t j = 0; j < raw.size(); ++j) {
      sum[j] += raw[j];
      sumsq[j] += raw[j] * raw[j];
    }
  }
  if (n == 0) throw std::runtime_error("no usable training rows for normalization");
  plan.normalization_stats.resize(names.size());
  for (std::size_t j = 0; j < names.size(); ++j) {
    double mean = sum[j] / static_cast<double>(n);
    double var = sumsq[j] / static_cast<double>(n) - mean * mean;
    double sd = var > 0 ? std::sqrt(var) : 0.0;
    plan.normalization_stats[j] = {names[j], mean, sd == 0.0 ? 1.0 : sd};
  }
  return plan;
}

struct ApplyResult {
  Dataset data;
  std::size_t dropped_rows = 0;
};

/// Replays a frozen plan on a subset of table rows (same schema as the plan's
/// source): parse, zero-fill, one-hot expand, z-score with the plan's training
/// statistics, y = ln(price). Rows with unusable labels or unparseable
/// non-empty cells are dropped.
inline ApplyResult apply_transform(const RawTable& table, const TransformPlan& plan,
                                   const std::vector<std::size_t>& row_subset) {
  ApplyResult res;
  const auto d = static_cast<Eigen::Index>(plan.normalization_stats.size());
  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  std::vector<std::string> ids;
  int id_ci = plan.id_column.empty() ? -1 : table.column_index(plan.id_column);

  detail::PlanIndex index(table, plan);
  std::vector<double> raw;
  for (std::size_t r : row_subset) {
    if (r >= table.row_count) throw std::invalid_argument("apply_transform: row out of range");
    auto label = detail::parse_label(table, index, r);
    if (!label || !detail::encode_row_raw(table, plan, index, r, raw)) {
      ++res.dropped_rows;
      continue;
    }
    rows.push_back(raw);
    labels.push_back(*label);
    if (id_ci >= 0) ids.push_back(table.columns[static_cast<std::size_t>(id_ci)].cells[r]);
  }

  Dataset& data = res.data;
  data.X.resize(static_cast<Eigen::Index>(rows.size()), d);
  data.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    data.y(static_cast<Eigen::Index>(i)) = labels[i];
    for (Eigen::Index j = 0; j < d; ++j) {
      const auto& st = plan.normalization_stats[static_cast<std::size_t>(j)];
      data.X(static_cast<Eigen::Index>(i), j) =
          (rows[i][static_cast<std::size_t>(j)] - st.mean) / st.stddev;
    }
  }
  for (const auto& st : plan.normalization_stats) data.feature_names.push_back(st.name);
  data.ids = std::move(ids);
  return res;
}

inline ApplyResult apply_transform(const RawTable& table, const TransformPlan& plan) {
  std::vector<std::size_t> all(table.row_count);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return apply_transform(table, plan, all);
}

// --- plan serialization ------------------------------------------------

inline nlohmann::json to_json(const TransformPlan& plan) {
  nlohmann::json j;
  j["drops"] = plan.drops;
  j["currency_columns"] = plan.currency_columns;
  j["boolean_columns"] = plan.boolean_columns;
  j["categorical_maps"] = plan.categorical_maps;
  j["fill_zero_columns"] = plan.fill_zero_columns;
  j["label_column"] = plan.label_column;
  j["id_column"] = plan.id_column;
  nlohmann::json stats = nlohmann::json::array();
  for (const auto& s : plan.normalization_stats)
    stats.push_back({{"name", s.name}, {"mean", s.mean}, {"stddev", s.stddev}});
  j["normalization_stats"] = stats;
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& [name, kind] : plan.feature_columns)
    cols.push_back({{"name", name}, {"kind", to_string(kind)}});
  j["feature_columns"] = cols;
  return j;
}

inline TransformPlan transform_plan_from_json(const nlohmann::json& j) {
  TransformPlan plan;
  plan.drops = j.at("drops").get<std::vector<std::string>>();
  plan.currency_columns = j.at("currency_columns").get<std::vector<std::string>>();
  plan.boolean_columns = j.at("boolean_columns").get<std::vector<std::string>>();
  plan.categorical_maps =
      j.at("categorical_maps").get<std::map<std::string, std::vector<std::string>>>();
  plan.fill_zero_columns = j.at("fill_zero_columns").get<std::vector<std::string>>();
  plan.label_column = j.at("label_column").get<std::string>();
  plan.id_column = j.at("id_column").get<std::string>();
  for (const auto& s : j.at("normalization_stats"))
    plan.normalization_stats.push_back({s.at("name").get<std::string>(),
                                        s.at("mean").get<double>(),
                                        s.at("stddev").get<double>()});
  for (const auto& c : j.at("feature_columns"))
    plan.feature_columns.emplace_back(c.at("name").get<std::string>(),
                                      column_kind_from_string(c.at("kind").get<std::string>()));
  return plan;
}

}  // namespace rentfit
