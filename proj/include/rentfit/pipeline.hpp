#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rentfit/cluster.hpp"
#include "rentfit/csv.hpp"
#include "rentfit/dataset.hpp"
#include "rentfit/eval.hpp"
#include "rentfit/gbt.hpp"
#include "rentfit/ingest.hpp"
#include "rentfit/linmod.hpp"
#include "rentfit/nn.hpp"
#include "rentfit/select.hpp"
#include "rentfit/sentiment.hpp"
#include "rentfit/svr.hpp"

namespace rentfit {

inline constexpr const char* kToolkitVersion = "0.1.0";

inline const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names{"linear_baseline", "ridge", "gbt",
                                              "kmeans_ridge",    "svr",   "nn"};
  return names;
}

// --- configuration -----------------------------------------------------------

struct SplitSpec {
  std::array<double, 3> ratios{0.90, 0.05, 0.05};
  std::uint64_t seed = 7;
};

struct SelectionSpec {
  SelectionMethod method = SelectionMethod::lasso;
  SelectionSettings settings;
  std::vector<SelectionMethod> compare{SelectionMethod::lasso, SelectionMethod::pvalue};
};

struct RidgeSweepSpec {
  std::vector<double> alpha_grid{0.01, 0.1, 1.0, 10.0, 100.0};
};

struct GbtSweepSpec {
  std::vector<int> n_iters_grid{100, 200};
  std::vector<int> max_depth_grid{2, 3};
  double learning_rate = 0.1;
  Eigen::Index min_leaf = 5;
};

struct KmeansSweepSpec {
  std::vector<int> k_grid{2, 5, 10};
  double alpha = 1.0;
  Eigen::Index min_cluster = 50;
  bool plus_plus = true;
};

struct SvrSweepSpec {
  std::vector<double> c_grid{1.0};
  std::vector<double> epsilon_grid{0.1};
  std::vector<double> sigma_grid{0.0};  // 0 means the sqrt(d/2) default
  double tol = 1e-3;
  long max_iter = 1000000;
  std::size_t cache_mb = 64;
};

struct NnSweepSpec {
  std::vector<double> learning_rate_grid{1e-3};
  int epochs = 200;
  int batch_size = 64;
  int patience = 20;
  std::vector<Eigen::Index> hidden{20, 5};
};

struct EvalSpec {
  int n_bins = 50;
  bool price_scale_mae = false;
};

struct PipelineConfig {
  std::string listings_csv;
  std::string reviews_csv;  // optional; empty disables the sentiment feature
  std::string lexicon;      // required when reviews_csv is set
  std::string schema;
  std::string out_dir = "run_out";
  SplitSpec split;
  bool sentiment_enabled = true;
  SelectionSpec selection;
  RidgeSweepSpec ridge;
  GbtSweepSpec gbt;
  KmeansSweepSpec kmeans;
  SvrSweepSpec svr;
  NnSweepSpec nn;
  EvalSpec evaluation;
};

namespace detail {

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path fp(p);
  return fp.is_absolute() ? fp.string() : (base / fp).lexically_normal().string();
}

template <typename T>
inline std::vector<T> grid_or(const nlohmann::json& j, const char* key,
                              std::vector<T> fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<std::vector<T>>();
}

}  // namespace detail

inline PipelineConfig load_pipeline_config(const nlohmann::json& j,
                                           const std::filesystem::path& base_dir) {
  PipelineConfig cfg;
  cfg.listings_csv = detail::resolve_path(j.at("listings_csv").get<std::string>(), base_dir);
  cfg.reviews_csv = detail::resolve_path(j.value("reviews_csv", std::string{}), base_dir);
  cfg.lexicon = detail::resolve_path(j.value("lexicon", std::string{}), base_dir);
  cfg.schema = detail::resolve_path(j.at("schema").get<std::string>(), base_dir);
  cfg.out_dir = detail::resolve_path(j.value("out_dir", std::string{"run_out"}), base_dir);

  if (j.contains("split")) {
    const auto& s = j.at("split");
    if (s.contains("ratios")) {
      auto r = s.at("ratios").get<std::vector<double>>();
      if (r.size() != 3) throw std::invalid_argument("config: split.ratios needs 3 entries");
      cfg.split.ratios = {r[0], r[1], r[2]};
    }
    cfg.split.seed = s.value("seed", cfg.split.seed);
  }
  if (j.contains("sentiment")) cfg.sentiment_enabled = j.at("sentiment").value("enabled", true);
  if (cfg.reviews_csv.empty()) cfg.sentiment_enabled = false;
  if (cfg.sentiment_enabled && cfg.lexicon.empty())
    throw std::invalid_argument("config: sentiment enabled but no lexicon path given");

  if (j.contains("selection")) {
    const auto& s = j.at("selection");
    if (s.contains("method"))
      cfg.selection.method = selection_method_from_string(s.at("method").get<std::string>());
    cfg.selection.settings.alpha_grid =
        detail::grid_or<double>(s, "alpha_grid", cfg.selection.settings.alpha_grid);
    cfg.selection.settings.pvalue_cap = s.value("pvalue_cap", cfg.selection.settings.pvalue_cap);
    cfg.selection.settings.manual_names = detail::grid_or<std::string>(
        s, "manual_names", cfg.selection.settings.manual_names);
    if (s.contains("compare")) {
      cfg.selection.compare.clear();
      for (const auto& name : s.at("compare"))
        cfg.selection.compare.push_back(selection_method_from_string(name.get<std::string>()));
    }
  }

  const nlohmann::json models = j.value("models", nlohmann::json::object());
  if (models.contains("ridge"))
    cfg.ridge.alpha_grid =
        detail::grid_or<double>(models.at("ridge"), "alpha_grid", cfg.ridge.alpha_grid);
  if (models.contains("gbt")) {
    const auto& g = models.at("gbt");
    cfg.gbt.n_iters_grid = detail::grid_or<int>(g, "n_iters_grid", cfg.gbt.n_iters_grid);
    cfg.gbt.max_depth_grid = detail::grid_or<int>(g, "max_depth_grid", cfg.gbt.max_depth_grid);
    cfg.gbt.learning_rate = g.value("learning_rate", cfg.gbt.learning_rate);
    cfg.gbt.min_leaf = g.value("min_leaf", static_cast<long>(cfg.gbt.min_leaf));
  }
  if (models.contains("kmeans_ridge")) {
    const auto& k = models.at("kmeans_ridge");
    cfg.kmeans.k_grid = detail::grid_or<int>(k, "k_grid", cfg.kmeans.k_grid);
    cfg.kmeans.alpha = k.value("alpha", cfg.kmeans.alpha);
    cfg.kmeans.min_cluster = k.value("min_cluster", static_cast<long>(cfg.kmeans.min_cluster));
    cfg.kmeans.plus_plus = k.value("kmeanspp", cfg.kmeans.plus_plus);
  }
  if (models.contains("svr")) {
    const auto& s = models.at("svr");
    cfg.svr.c_grid = detail::grid_or<double>(s, "c_grid", cfg.svr.c_grid);
    cfg.svr.epsilon_grid = detail::grid_or<double>(s, "epsilon_grid", cfg.svr.epsilon_grid);
    cfg.svr.sigma_grid = detail::grid_or<double>(s, "sigma_grid", cfg.svr.sigma_grid);
    cfg.svr.tol = s.value("tol", cfg.svr.tol);
    cfg.svr.max_iter = s.value("max_iter", cfg.svr.max_iter);
    cfg.svr.cache_mb = s.value("cache_mb", cfg.svr.cache_mb);
  }
  if (models.contains("nn")) {
    const auto& n = models.at("nn");
    cfg.nn.learning_rate_grid =
        detail::grid_or<double>(n, "learning_rate_grid", cfg.nn.learning_rate_grid);
    cfg.nn.epochs = n.value("epochs", cfg.nn.epochs);
    cfg.nn.batch_size = n.value("batch_size", cfg.nn.batch_size);
    cfg.nn.patience = n.value("patience", cfg.nn.patience);
    if (n.contains("hidden")) {
      cfg.nn.hidden.clear();
      for (const auto& h : n.at("hidden")) cfg.nn.hidden.push_back(h.get<long>());
    }
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    cfg.evaluation.n_bins = e.value("n_bins", cfg.evaluation.n_bins);
    cfg.evaluation.price_scale_mae = e.value("price_scale_mae", cfg.evaluation.price_scale_mae);
  }
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  nlohmann::json j;
  in >> j;
  return load_pipeline_config(j, std::filesystem::path(path).parent_path());
}

// --- shared stage plumbing -----------------------------------------------------

struct StageContext {
  PipelineConfig config;
  std::filesystem::path out;
  int jobs = 1;
};

inline StageContext make_context(PipelineConfig cfg, int jobs = 1) {
  StageContext ctx;
  ctx.out = cfg.out_dir;
  ctx.config = std::move(cfg);
  ctx.jobs = jobs < 1 ? 1 : jobs;
  return ctx;
}

namespace detail {

// Index-deterministic parallel loop: results keyed by index are identical
// whatever the thread count.
template <typename F>
inline void parallel_for(int n, int jobs, F&& body) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  const int workers = std::min(jobs, n);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace detail

inline nlohmann::json load_manifest(const std::filesystem::path& out) {
  auto path = out / "manifest.json";
  if (!std::filesystem::exists(path)) {
    nlohmann::json m;
    m["versions"] = {{"toolkit", kToolkitVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)}};
    m["stages"] = nlohmann::json::object();
    m["test_evaluated"] = false;
    return m;
  }
  return detail::read_json_file(path);
}

inline void save_manifest(const std::filesystem::path& out, const nlohmann::json& manifest) {
  detail::write_json_file(out / "manifest.json", manifest);
}

inline void record_stage(const StageContext& ctx, const std::string& stage,
                         nlohmann::json info) {
  nlohmann::json m = load_manifest(ctx.out);
  m["seed"] = ctx.config.split.seed;
  info["status"] = "ok";
  m["stages"][stage] = std::move(info);
  m.erase("failed_stage");
  m.erase("error");
  save_manifest(ctx.out, m);
}

inline void record_failure(const StageContext& ctx, const std::string& stage,
                           const std::string& message) {
  nlohmann::json m = load_manifest(ctx.out);
  m["failed_stage"] = stage;
  m["error"] = message;
  save_manifest(ctx.out, m);
}

/// Path of an artifact a stage depends on; names the producing stage when absent.
inline std::filesystem::path require_artifact(const StageContext& ctx, const std::string& file,
                                              const std::string& producer) {
  auto path = ctx.out / file;
  if (!std::filesystem::exists(path))
    throw std::runtime_error("missing artifact '" + file + "' under " + ctx.out.string() +
                             "; run the '" + producer + "' stage first");
  return path;
}

namespace detail {

inline Dataset concat_rows(const Dataset& a, const Dataset& b) {
  if (a.feature_names != b.feature_names)
    throw std::invalid_argument("concat_rows: feature names differ");
  Dataset out;
  out.feature_names = a.feature_names;
  out.X.resize(a.rows() + b.rows(), a.cols());
  out.X.topRows(a.rows()) = a.X;
  out.X.bottomRows(b.rows()) = b.X;
  out.y.resize(a.rows() + b.rows());
  out.y.head(a.rows()) = a.y;
  out.y.tail(b.rows()) = b.y;
  if (!a.ids.empty() && !b.ids.empty()) {
    out.ids = a.ids;
    out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  }
  return out;
}

inline Dataset masked_view(const Dataset& data, const std::vector<int>& indices) {
  FeatureMask mask;
  mask.indices = indices;
  return apply_mask(data, mask);
}

}  // namespace detail

// --- stages -------------------------------------------------------------------

/// Raw CSV -> transform plan + three normalized splits. Rows are split before
/// the plan is built so every plan statistic (category maps, missing rates,
/// normalization) comes from training rows only.
inline void stage_ingest(const StageContext& ctx) {
  std::filesystem::create_directories(ctx.out);
  Schema schema = load_schema(ctx.config.schema);

  std::ifstream in(ctx.config.listings_csv);
  if (!in) throw std::runtime_error("cannot read listings " + ctx.config.listings_csv);
  RawTable table = parse_csv(in);

  IndexSplit idx = split_indices(table.row_count, ctx.config.split.ratios,
                                 ctx.config.split.seed);
  std::vector<std::size_t> train_rows(idx.train.begin(), idx.train.end());
  TransformPlan plan = build_transform_plan(table, schema, train_rows);

  auto encode = [&](const std::vector<Eigen::Index>& which) {
    return apply_transform(table, plan, std::vector<std::size_t>(which.begin(), which.end()));
  };
  ApplyResult train = encode(idx.train);
  ApplyResult val = encode(idx.val);
  ApplyResult test = encode(idx.test);
  if (train.data.rows() < 2 || val.data.rows() < 1 || test.data.rows() < 1)
    throw std::runtime_error("ingest: too few usable rows after cleaning");

  detail::write_json_file(ctx.out / "plan.json", to_json(plan));
  write_dataset_csv(train.data, (ctx.out / "split_train.csv").string());
  write_dataset_csv(val.data, (ctx.out / "split_val.csv").string());
  write_dataset_csv(test.data, (ctx.out / "split_test.csv").string());

  record_stage(ctx, "ingest",
               {{"rows_read", table.row_count},
                {"features", plan.normalization_stats.size()},
                {"train_rows", train.data.rows()},
                {"val_rows", val.data.rows()},
                {"test_rows", test.data.rows()},
                {"dropped_rows",
                 train.dropped_rows + val.dropped_rows + test.dropped_rows},
                {"artifacts",
                 {"plan.json", "split_train.csv", "split_val.csv", "split_test.csv"}}});
}

/// Review scores joined onto the splits as one extra normalized column; when
/// disabled the split files pass through unchanged so downstream stages read
/// one canonical set of feature files.
inline void stage_sentiment(const StageContext& ctx) {
  SplitDataset splits;
  splits.train = read_dataset_csv(require_artifact(ctx, "split_train.csv", "ingest").string());
  splits.val = read_dataset_csv(require_artifact(ctx, "split_val.csv", "ingest").string());
  splits.test = read_dataset_csv(require_artifact(ctx, "split_test.csv", "ingest").string());

  nlohmann::json stats;
  if (ctx.config.sentiment_enabled) {
    Lexicon lexicon = load_lexicon(ctx.config.lexicon);
    auto scores = score_reviews_csv(ctx.config.reviews_csv, lexicon);
    SentimentAttachment attached = attach_sentiment(splits, scores);
    splits = std::move(attached.data);
    stats = {{"enabled", true},
             {"listings_scored", scores.size()},
             {"column_mean", attached.mean},
             {"column_stddev", attached.stddev}};
  } else {
    stats = {{"enabled", false}};
  }

  write_dataset_csv(splits.train, (ctx.out / "features_train.csv").string());
  write_dataset_csv(splits.val, (ctx.out / "features_val.csv").string());
  write_dataset_csv(splits.test, (ctx.out / "features_test.csv").string());
  detail::write_json_file(ctx.out / "sentiment_stats.json", stats);

  stats["artifacts"] = {"features_train.csv", "features_val.csv", "features_test.csv",
                        "sentiment_stats.json"};
  record_stage(ctx, "sentiment", stats);
}

/// Runs the configured selection method for the working mask and scores the
/// comparison table across all requested methods.
inline void stage_select(const StageContext& ctx) {
  Dataset train =
      read_dataset_csv(require_artifact(ctx, "features_train.csv", "sentiment").string());
  Dataset val =
      read_dataset_csv(require_artifact(ctx, "features_val.csv", "sentiment").string());

  const SelectionSpec& spec = ctx.config.selection;
  SelectionResult sel;
  switch (spec.method) {
    case SelectionMethod::lasso:
      sel = lasso_select(train, val,
                         spec.settings.alpha_grid.empty() ? default_alpha_grid()
                                                          : spec.settings.alpha_grid);
      break;
    case SelectionMethod::pvalue:
      sel = pvalue_select(train, val, spec.settings.pvalue_cap);
      break;
    case SelectionMethod::manual:
      sel = manual_select(train, spec.settings.manual_names);
      sel.mask.score = detail::masked_ols_val_r2(train, val, sel.mask.indices);
      break;
  }

  std::vector<ComparisonRow> rows = compare_selection(train, val, spec.compare, spec.settings);
  detail::write_json_file(ctx.out / "mask.json", to_json(sel.mask));
  {
    std::ostringstream os;
    write_selection_csv(rows, os);
    detail::write_text_file(ctx.out / "selection.csv", os.str());
  }
  detail::write_json_file(ctx.out / "selection_chart.json", selection_chart_json(rows));

  nlohmann::json info{{"method", to_string(sel.mask.method)},
                      {"n_selected", sel.mask.indices.size()},
                      {"val_r2", sel.mask.score},
                      {"artifacts", {"mask.json", "selection.csv", "selection_chart.json"}}};
  if (!sel.unmatched.empty()) info["unmatched_names"] = sel.unmatched;
  record_stage(ctx, "select", info);
}

namespace detail {

struct TrainedArtifact {
  nlohmann::json file;       // complete model_<name>.json payload
  nlohmann::json meta;       // manifest entry
  std::string loss_csv;      // nn only
};

inline double val_r2(const Vector& y_val, const Vector& pred) {
  return metrics(y_val, pred).r2;
}

inline TrainedArtifact train_linear_baseline(const Dataset& train, const Dataset& val) {
  bool jitter = false;
  LinearModel probe = fit_ols(train.X, train.y, &jitter);
  const double r2 = val_r2(val.y, predict(probe, val.X));

  Dataset merged = concat_rows(train, val);
  bool final_jitter = false;
  LinearModel final_model = fit_ols(merged.X, merged.y, &final_jitter);

  TrainedArtifact art;
  art.file = {{"model_type", "linear_baseline"},
              {"uses_mask", false},
              {"hyperparameters", {{"jitter_applied", final_jitter}}},
              {"validation_r2", r2},
              {"model", to_json(final_model, merged.feature_names)}};
  art.meta = {{"validation_r2", r2}, {"n_features", merged.cols()}};
  return art;
}

inline TrainedArtifact train_ridge_model(const StageContext& ctx, const Dataset& train,
                                         const Dataset& val, const std::vector<int>& mask) {
  const Dataset tr = masked_view(train, mask), va = masked_view(val, mask);
  const auto& grid = ctx.config.ridge.alpha_grid;
  std::vector<double> scores(grid.size());
  parallel_for(static_cast<int>(grid.size()), ctx.jobs, [&](int i) {
    LinearModel m = fit_ridge(tr.X, tr.y, grid[static_cast<std::size_t>(i)]);
    scores[static_cast<std::size_t>(i)] = val_r2(va.y, predict(m, va.X));
  });

  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (scores[i] > scores[best] || (scores[i] == scores[best] && grid[i] > grid[best]))
      best = i;

  Dataset merged = concat_rows(tr, va);
  LinearModel final_model = fit_ridge(merged.X, merged.y, grid[best]);

  nlohmann::json sweep = nlohmann::json::array();
  for (std::size_t i = 0; i < grid.size(); ++i)
    sweep.push_back({{"alpha", grid[i]}, {"val_r2", scores[i]}});

  TrainedArtifact art;
  art.file = {{"model_type", "ridge"},
              {"uses_mask", true},
              {"mask_indices", mask},
              {"hyperparameters", {{"alpha", grid[best]}}},
              {"validation_r2", scores[best]},
              {"sweep", sweep},
              {"model", to_json(final_model, merged.feature_names)}};
  art.meta = {{"validation_r2", scores[best]}, {"alpha", grid[best]}};
  return art;
}

inline TrainedArtifact train_gbt_model(const StageContext& ctx, const Dataset& train,
                                       const Dataset& val, const std::vector<int>& mask) {
  const Dataset tr = masked_view(train, mask), va = masked_view(val, mask);
  const GbtSweepSpec& spec = ctx.config.gbt;
  std::vector<int> iters_grid = spec.n_iters_grid;
  std::sort(iters_grid.begin(), iters_grid.end());
  const int max_iters = iters_grid.back();

  // One fit per depth covers every n_iters candidate: validation predictions
  // are accumulated tree by tree and sampled at each grid point.
  struct Point {
    int n_iters, depth;
    double r2;
  };
  std::vector<std::vector<Point>> per_depth(spec.max_depth_grid.size());
  parallel_for(static_cast<int>(spec.max_depth_grid.size()), ctx.jobs, [&](int di) {
    const int depth = spec.max_depth_grid[static_cast<std::size_t>(di)];
    GbtConfig gc{max_iters, spec.learning_rate, depth, spec.min_leaf};
    GbtEnsemble ens = fit_gbt(tr.X, tr.y, gc);
    Vector acc = Vector::Constant(va.rows(), ens.f0);
    std::size_t next_mark = 0;
    for (std::size_t t = 0; t < ens.trees.size(); ++t) {
      for (Eigen::Index i = 0; i < va.rows(); ++i)
        acc(i) += ens.learning_rate * predict_one(ens.trees[t], va.X.row(i).transpose());
      while (next_mark < iters_grid.size() &&
             static_cast<int>(t + 1) == iters_grid[next_mark]) {
        per_depth[static_cast<std::size_t>(di)].push_back(
            {iters_grid[next_mark], depth, val_r2(va.y, acc)});
        ++next_mark;
      }
    }
  });

  Point best{0, 0, -std::numeric_limits<double>::infinity()};
  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& points : per_depth)
    for (const auto& p : points) {
      sweep.push_back({{"n_iters", p.n_iters}, {"max_depth", p.depth}, {"val_r2", p.r2}});
      if (p.r2 > best.r2 ||
          (p.r2 == best.r2 &&
           (p.n_iters < best.n_iters ||
            (p.n_iters == best.n_iters && p.depth < best.depth))))
        best = p;
    }

  Dataset merged = concat_rows(tr, va);
  GbtConfig gc{best.n_iters, spec.learning_rate, best.depth, spec.min_leaf};
  GbtEnsemble final_model = fit_gbt(merged.X, merged.y, gc);

  TrainedArtifact art;
  art.file = {{"model_type", "gbt"},
              {"uses_mask", true},
              {"mask_indices", mask},
              {"hyperparameters",
               {{"n_iters", best.n_iters},
                {"max_depth", best.depth},
                {"learning_rate", spec.learning_rate},
                {"min_leaf", spec.min_leaf}}},
              {"validation_r2", best.r2},
              {"sweep", sweep},
              {"model", to_json(final_model)}};
  art.meta = {{"validation_r2", best.r2},
              {"n_iters", best.n_iters},
              {"max_depth", best.depth}};
  return art;
}

inline TrainedArtifact train_kmeans_model(const StageContext& ctx, const Dataset& train,
                                          const Dataset& val, const std::vector<int>& mask) {
  const Dataset tr = masked_view(train, mask), va = masked_view(val, mask);
  const KmeansSweepSpec& spec = ctx.config.kmeans;
  const std::uint64_t seed = ctx.config.split.seed;

  std::vector<double> scores(spec.k_grid.size());
  parallel_for(static_cast<int>(spec.k_grid.size()), ctx.jobs, [&](int i) {
    ClusteredRidgeModel m =
        fit_clustered_ridge(tr.X, tr.y, spec.k_grid[static_cast<std::size_t>(i)], spec.alpha,
                            seed, spec.min_cluster, spec.plus_plus);
    scores[static_cast<std::size_t>(i)] = val_r2(va.y, predict(m, va.X));
  });

  std::size_t best = 0;
  for (std::size_t i = 1; i < spec.k_grid.size(); ++i)
    if (scores[i] > scores[best] ||
        (scores[i] == scores[best] && spec.k_grid[i] < spec.k_grid[best]))
      best = i;

  Dataset merged = concat_rows(tr, va);
  ClusteredRidgeModel final_model = fit_clustered_ridge(
      merged.X, merged.y, spec.k_grid[best], spec.alpha, seed, spec.min_cluster, spec.plus_plus);

  nlohmann::json sweep = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.k_grid.size(); ++i)
    sweep.push_back({{"k", spec.k_grid[i]}, {"val_r2", scores[i]}});

  TrainedArtifact art;
  art.file = {{"model_type", "kmeans_ridge"},
              {"uses_mask", true},
              {"mask_indices", mask},
              {"hyperparameters",
               {{"k", spec.k_grid[best]}, {"alpha", spec.alpha}, {"seed", seed}}},
              {"validation_r2", scores[best]},
              {"sweep", sweep},
              {"model", to_json(final_model)}};
  art.meta = {{"validation_r2", scores[best]}, {"k", spec.k_grid[best]}};
  return art;
}

inline TrainedArtifact train_svr_model(const StageContext& ctx, const Dataset& train,
                                       const Dataset& val, const std::vector<int>& mask) {
  const Dataset tr = masked_view(train, mask), va = masked_view(val, mask);
  const SvrSweepSpec& spec = ctx.config.svr;

  struct Point {
    double C, eps, sigma, r2;
    bool converged;
  };
  std::vector<Point> points;
  for (double c : spec.c_grid)
    for (double e : spec.epsilon_grid)
      for (double s : spec.sigma_grid) points.push_back({c, e, s, 0.0, false});

  std::vector<Point> results(points.size());
  parallel_for(static_cast<int>(points.size()), ctx.jobs, [&](int i) {
    Point p = points[static_cast<std::size_t>(i)];
    SvrConfig sc;
    sc.C = p.C;
    sc.epsilon = p.eps;
    sc.sigma = p.sigma;
    sc.tol = spec.tol;
    sc.max_iter = spec.max_iter;
    sc.cache_mb = spec.cache_mb;
    SvrModel m = fit_svr(tr.X, tr.y, sc);
    p.r2 = val_r2(va.y, predict(m, va.X));
    p.converged = m.converged;
    results[static_cast<std::size_t>(i)] = p;
  });

  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i)
    if (results[i].r2 > results[best].r2) best = i;

  Dataset merged = concat_rows(tr, va);
  SvrConfig sc;
  sc.C = results[best].C;
  sc.epsilon = results[best].eps;
  sc.sigma = results[best].sigma;
  sc.tol = spec.tol;
  sc.max_iter = spec.max_iter;
  sc.cache_mb = spec.cache_mb;
  SvrModel final_model = fit_svr(merged.X, merged.y, sc);

  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& p : results)
    sweep.push_back({{"C", p.C},
                     {"epsilon", p.eps},
                     {"sigma", p.sigma},
                     {"val_r2", p.r2},
                     {"converged", p.converged}});

  TrainedArtifact art;
  art.file = {{"model_type", "svr"},
              {"uses_mask", true},
              {"mask_indices", mask},
              {"hyperparameters",
               {{"C", results[best].C},
                {"epsilon", results[best].eps},
                {"sigma", final_model.kernel.sigma}}},
              {"validation_r2", results[best].r2},
              {"sweep", sweep},
              {"model", to_json(final_model)}};
  art.meta = {{"validation_r2", results[best].r2},
              {"support_vectors", final_model.dual_coefs.size()},
              {"converged", final_model.converged}};
  return art;
}

inline TrainedArtifact train_nn_model(const StageContext& ctx, const Dataset& train,
                                      const Dataset& val, const std::vector<int>& mask) {
  const Dataset tr = masked_view(train, mask), va = masked_view(val, mask);
  const NnSweepSpec& spec = ctx.config.nn;
  const std::uint64_t seed = ctx.config.split.seed;

  std::vector<TrainResult> runs(spec.learning_rate_grid.size());
  std::vector<double> scores(spec.learning_rate_grid.size());
  parallel_for(static_cast<int>(spec.learning_rate_grid.size()), ctx.jobs, [&](int i) {
    TrainConfig tc;
    tc.epochs = spec.epochs;
    tc.batch_size = spec.batch_size;
    tc.learning_rate = spec.learning_rate_grid[static_cast<std::size_t>(i)];
    tc.seed = seed;
    tc.early_stop_patience = spec.patience;
    NetworkParams start = init_network(tr.cols(), seed, spec.hidden);
    runs[static_cast<std::size_t>(i)] = train_network(start, tr.X, tr.y, va.X, va.y, tc);
    scores[static_cast<std::size_t>(i)] =
        val_r2(va.y, predict(runs[static_cast<std::size_t>(i)].net, va.X));
  });

  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  const double lr = spec.learning_rate_grid[best];
  const int epoch_budget = runs[best].best_epoch + 1;

  // refit on the merged split with the winning epoch budget; no validation
  // set remains, so early stopping is off by construction
  Dataset merged = concat_rows(tr, va);
  TrainConfig tc;
  tc.epochs = epoch_budget;
  tc.batch_size = spec.batch_size;
  tc.learning_rate = lr;
  tc.seed = seed;
  NetworkParams start = init_network(merged.cols(), seed, spec.hidden);
  TrainResult final_run =
      train_network(start, merged.X, merged.y, Matrix(0, merged.cols()), Vector(0), tc);

  nlohmann::json sweep = nlohmann::json::array();
  for (std::size_t i = 0; i < scores.size(); ++i)
    sweep.push_back({{"learning_rate", spec.learning_rate_grid[i]},
                     {"val_r2", scores[i]},
                     {"best_epoch", runs[i].best_epoch}});

  TrainedArtifact art;
  art.file = {{"model_type", "nn"},
              {"uses_mask", true},
              {"mask_indices", mask},
              {"hyperparameters",
               {{"learning_rate", lr},
                {"epochs_trained", epoch_budget},
                {"batch_size", spec.batch_size},
                {"hidden", spec.hidden},
                {"seed", seed}}},
              {"validation_r2", scores[best]},
              {"sweep", sweep},
              {"model", to_json(final_run.net)}};
  art.meta = {{"validation_r2", scores[best]},
              {"learning_rate", lr},
              {"epochs_trained", epoch_budget}};
  std::ostringstream os;
  write_loss_csv(runs[best].history, os);
  art.loss_csv = os.str();
  return art;
}

}  // namespace detail

/// Trains one of the six models: sweeps its hyperparameter grid against the
/// validation split, then refits the winner on train+validation. The baseline
/// uses every feature; all other models train on the selected mask, which is
/// frozen into the model file so later stages need no side lookups.
inline void stage_train(const StageContext& ctx, const std::string& model_name) {
  Dataset train =
      read_dataset_csv(require_artifact(ctx, "features_train.csv", "sentiment").string());
  Dataset val =
      read_dataset_csv(require_artifact(ctx, "features_val.csv", "sentiment").string());

  std::vector<int> mask;
  if (model_name != "linear_baseline") {
    FeatureMask fm =
        feature_mask_from_json(detail::read_json_file(require_artifact(ctx, "mask.json",
                                                                       "select")));
    mask = fm.indices;
  }

  detail::TrainedArtifact art;
  if (model_name == "linear_baseline")
    art = detail::train_linear_baseline(train, val);
  else if (model_name == "ridge")
    art = detail::train_ridge_model(ctx, train, val, mask);
  else if (model_name == "gbt")
    art = detail::train_gbt_model(ctx, train, val, mask);
  else if (model_name == "kmeans_ridge")
    art = detail::train_kmeans_model(ctx, train, val, mask);
  else if (model_name == "svr")
    art = detail::train_svr_model(ctx, train, val, mask);
  else if (model_name == "nn")
    art = detail::train_nn_model(ctx, train, val, mask);
  else
    throw std::invalid_argument("unknown model '" + model_name + "'; expected one of " +
                                "linear_baseline|ridge|gbt|kmeans_ridge|svr|nn");

  const std::string file = "model_" + model_name + ".json";
  detail::write_json_file(ctx.out / file, art.file);
  nlohmann::json meta = art.meta;
  nlohmann::json artifacts = nlohmann::json::array({file});
  if (!art.loss_csv.empty()) {
    detail::write_text_file(ctx.out / ("loss_" + model_name + ".csv"), art.loss_csv);
    artifacts.push_back("loss_" + model_name + ".csv");
  }
  meta["artifacts"] = artifacts;
  record_stage(ctx, "train_" + model_name, meta);
}

namespace detail {

inline Vector predict_model_file(const nlohmann::json& j, const Dataset& full) {
  const std::string type = j.at("model_type").get<std::string>();
  Dataset view = full;
  if (j.value("uses_mask", false))
    view = masked_view(full, j.at("mask_indices").get<std::vector<int>>());
  const nlohmann::json& m = j.at("model");
  if (type == "linear_baseline" || type == "ridge")
    return predict(linear_model_from_json(m), view.X);
  if (type == "gbt") return predict(gbt_from_json(m), view.X);
  if (type == "kmeans_ridge") return predict(clustered_ridge_from_json(m), view.X);
  if (type == "svr") return predict(svr_from_json(m), view.X);
  if (type == "nn") return predict(network_from_json(m), view.X);
  throw std::runtime_error("unknown model_type in model file: " + type);
}

}  // namespace detail

/// Scores every trained model on the merged training split and, once per run
/// unless forced, on the held-out test split.
inline void stage_evaluate(const StageContext& ctx, bool force = false) {
  nlohmann::json manifest = load_manifest(ctx.out);
  if (manifest.value("test_evaluated", false) && !force)
    throw std::runtime_error(
        "test split already evaluated for this run directory; "
        "pass --force to evaluate again");

  Dataset train =
      read_dataset_csv(require_artifact(ctx, "features_train.csv", "sentiment").string());
  Dataset val =
      read_dataset_csv(require_artifact(ctx, "features_val.csv", "sentiment").string());
  Dataset test =
      read_dataset_csv(require_artifact(ctx, "features_test.csv", "sentiment").string());
  Dataset merged = detail::concat_rows(train, val);

  std::vector<MetricsReport> reports;
  std::vector<double> price_maes;
  for (const auto& name : model_names()) {
    nlohmann::json mj =
        detail::read_json_file(require_artifact(ctx, "model_" + name + ".json",
                                                "train " + name));
    Vector pred_train = detail::predict_model_file(mj, merged);
    Vector pred_test = detail::predict_model_file(mj, test);
    reports.push_back(metrics(merged.y, pred_train, name, "train"));
    reports.push_back(metrics(test.y, pred_test, name, "test"));
    if (ctx.config.evaluation.price_scale_mae) {
      price_maes.push_back(price_scale_mae(merged.y, pred_train));
      price_maes.push_back(price_scale_mae(test.y, pred_test));
    }
  }

  std::ostringstream os;
  write_metrics_csv(reports, os, ctx.config.evaluation.price_scale_mae, price_maes);
  detail::write_text_file(ctx.out / "metrics.csv", os.str());

  nlohmann::json info{{"models", model_names()}, {"artifacts", {"metrics.csv"}}};
  record_stage(ctx, "evaluate", info);
  manifest = load_manifest(ctx.out);
  manifest["test_evaluated"] = true;
  save_manifest(ctx.out, manifest);
}

/// Comparative prediction/actual histograms for the top three models by test
/// fit, read back from the metrics table.
inline void stage_report(const StageContext& ctx) {
  auto metrics_path = require_artifact(ctx, "metrics.csv", "evaluate");
  Dataset test =
      read_dataset_csv(require_artifact(ctx, "features_test.csv", "sentiment").string());

  std::ifstream in(metrics_path);
  RawTable table = parse_csv(in);
  int model_ci = table.column_index("model");
  int split_ci = table.column_index("split");
  int r2_ci = table.column_index("r2");
  if (model_ci < 0 || split_ci < 0 || r2_ci < 0)
    throw std::runtime_error("metrics.csv is malformed; re-run the 'evaluate' stage");

  std::vector<std::pair<double, std::string>> ranked;
  for (std::size_t r = 0; r < table.row_count; ++r) {
    if (table.columns[static_cast<std::size_t>(split_ci)].cells[r] != "test") continue;
    const std::string& name = table.columns[static_cast<std::size_t>(model_ci)].cells[r];
    if (!std::filesystem::exists(ctx.out / ("model_" + name + ".json"))) continue;
    double r2 = std::strtod(table.columns[static_cast<std::size_t>(r2_ci)].cells[r].c_str(),
                            nullptr);
    ranked.emplace_back(r2, name);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  if (ranked.empty())
    throw std::runtime_error("metrics.csv holds no test rows; re-run the 'evaluate' stage");

  nlohmann::json top = nlohmann::json::array();
  nlohmann::json artifacts = nlohmann::json::array();
  for (std::size_t i = 0; i < ranked.size() && i < 3; ++i) {
    const std::string& name = ranked[i].second;
    nlohmann::json mj = detail::read_json_file(ctx.out / ("model_" + name + ".json"));
    Vector pred = detail::predict_model_file(mj, test);
    HistogramPair hist = histogram_pair(test.y, pred, ctx.config.evaluation.n_bins);
    std::ostringstream os;
    write_histogram_csv(hist, os);
    const std::string file = "hist_" + name + ".csv";
    detail::write_text_file(ctx.out / file, os.str());
    top.push_back({{"model", name}, {"test_r2", ranked[i].first}});
    artifacts.push_back(file);
  }
  record_stage(ctx, "report", {{"top_models", top}, {"artifacts", artifacts}});
}

/// Full pipeline in stage order. A stage failure is recorded in the manifest
/// (stage name + message) and rethrown; artifacts of completed stages remain.
inline void run_pipeline(const StageContext& ctx, bool force_evaluate = false) {
  std::filesystem::create_directories(ctx.out);
  auto guarded = [&](const std::string& stage, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      record_failure(ctx, stage, e.what());
      throw;
    }
  };
  guarded("ingest", [&] { stage_ingest(ctx); });
  guarded("sentiment", [&] { stage_sentiment(ctx); });
  guarded("select", [&] { stage_select(ctx); });
  for (const auto& name : model_names())
    guarded("train_" + name, [&] { stage_train(ctx, name); });
  guarded("evaluate", [&] { stage_evaluate(ctx, force_evaluate); });
  guarded("report", [&] { stage_report(ctx); });
}

}  // namespace rentfit
