#include <catch2/catch_amalgamated.hpp>

#include <rentfit/pipeline.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>

using namespace rentfit;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("rentfit_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Synthetic rental corpus with a planted log-linear price law. The signal is
// strong and the noise tiny, so every model family lands a sensible fit on
// ~80 rows and the whole pipeline stays fast.
void write_corpus(const fs::path& dir) {
  std::mt19937_64 rng(20240805);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> bed(1, 4), acc(1, 6), coin(0, 1);

  std::ofstream listings(dir / "listings.csv", std::ios::binary);
  write_csv_row(listings, {"id", "price", "bedrooms", "accommodates", "room_type", "superhost"});
  std::ofstream reviews(dir / "reviews.csv", std::ios::binary);
  write_csv_row(reviews, {"listing_id", "comments"});

  for (int i = 0; i < 80; ++i) {
    std::string id = "L" + std::to_string(1000 + i);
    int b = bed(rng), a = acc(rng);
    bool entire = coin(rng) == 1, super = coin(rng) == 1;
    double lp = 3.6 + 0.30 * b + 0.08 * a + (entire ? 0.5 : 0.0) + (super ? 0.2 : 0.0) +
                0.05 * noise(rng);
    std::ostringstream price;
    price << "$" << std::fixed << std::setprecision(2) << std::exp(lp);
    write_csv_row(listings, {id, price.str(), std::to_string(b), std::to_string(a),
                             entire ? "Entire home/apt" : "Private room", super ? "t" : "f"});
    if (i % 3 != 0)  // two thirds of the listings have a review
      write_csv_row(reviews, {id, super ? "great host, really good stay"
                                        : "awful street, noisy at night"});
  }

  std::ofstream lex(dir / "lexicon.txt", std::ios::binary);
  lex << "great\t0.8\ngood\t0.4\nawful\t-1.0\nnoisy\t-0.6\n";

  nlohmann::json schema;
  schema["label"] = "price";
  schema["id"] = "id";
  schema["columns"]["id"] = "text";
  schema["columns"]["price"] = "currency";
  schema["columns"]["bedrooms"] = "numeric";
  schema["columns"]["accommodates"] = "numeric";
  schema["columns"]["room_type"] = "categorical";
  schema["columns"]["superhost"] = "boolean";
  std::ofstream(dir / "schema.json") << schema.dump(2) << "\n";
}

nlohmann::json corpus_config(const std::string& out_name) {
  nlohmann::json j;
  j["listings_csv"] = "listings.csv";
  j["reviews_csv"] = "reviews.csv";
  j["lexicon"] = "lexicon.txt";
  j["schema"] = "schema.json";
  j["out_dir"] = out_name;
  j["split"]["ratios"] = {0.7, 0.15, 0.15};
  j["split"]["seed"] = 11;
  j["sentiment"]["enabled"] = true;
  j["selection"]["method"] = "pvalue";
  j["selection"]["pvalue_cap"] = 6;
  j["selection"]["compare"] = {"lasso", "pvalue"};
  j["models"]["ridge"]["alpha_grid"] = {0.1, 1.0};
  j["models"]["gbt"]["n_iters_grid"] = {25};
  j["models"]["gbt"]["max_depth_grid"] = {2};
  j["models"]["gbt"]["learning_rate"] = 0.1;
  j["models"]["gbt"]["min_leaf"] = 3;
  j["models"]["kmeans_ridge"]["k_grid"] = {2};
  j["models"]["kmeans_ridge"]["alpha"] = 1.0;
  j["models"]["kmeans_ridge"]["min_cluster"] = 5;
  j["models"]["kmeans_ridge"]["kmeanspp"] = true;
  j["models"]["svr"]["c_grid"] = {5.0};
  j["models"]["svr"]["epsilon_grid"] = {0.05};
  j["models"]["svr"]["sigma_grid"] = {2.0};
  j["models"]["nn"]["learning_rate_grid"] = {0.01};
  j["models"]["nn"]["epochs"] = 60;
  j["models"]["nn"]["batch_size"] = 16;
  j["models"]["nn"]["patience"] = 15;
  j["models"]["nn"]["hidden"] = {8, 4};
  j["evaluation"]["n_bins"] = 8;
  j["evaluation"]["price_scale_mae"] = true;
  return j;
}

StageContext corpus_context(const fs::path& dir, const std::string& out_name, int jobs = 1) {
  PipelineConfig cfg = load_pipeline_config(corpus_config(out_name), dir);
  return make_context(std::move(cfg), jobs);
}

}  // namespace

TEST_CASE("config defaults apply and relative paths resolve against the config dir",
          "[pipeline]") {
  nlohmann::json j;
  j["listings_csv"] = "data/l.csv";
  j["schema"] = "/abs/schema.json";
  PipelineConfig cfg = load_pipeline_config(j, "/base/dir");

  CHECK(cfg.listings_csv == fs::path("/base/dir/data/l.csv").lexically_normal().string());
  CHECK(cfg.schema == "/abs/schema.json");
  CHECK(cfg.out_dir == fs::path("/base/dir/run_out").lexically_normal().string());
  CHECK(cfg.reviews_csv.empty());
  CHECK_FALSE(cfg.sentiment_enabled);  // no reviews file means no sentiment column
  CHECK(cfg.split.ratios == std::array<double, 3>{0.90, 0.05, 0.05});
  CHECK(cfg.split.seed == 7);
  CHECK(cfg.ridge.alpha_grid.size() == 5);
  CHECK(cfg.nn.hidden == std::vector<Eigen::Index>{20, 5});
  CHECK(cfg.evaluation.n_bins == 50);
  CHECK_FALSE(cfg.evaluation.price_scale_mae);
}

TEST_CASE("config overrides reach every model's sweep settings", "[pipeline]") {
  PipelineConfig cfg = load_pipeline_config(corpus_config("out"), "/b");

  CHECK(cfg.sentiment_enabled);
  CHECK(cfg.split.ratios == std::array<double, 3>{0.7, 0.15, 0.15});
  CHECK(cfg.split.seed == 11);
  CHECK(cfg.selection.method == SelectionMethod::pvalue);
  CHECK(cfg.selection.settings.pvalue_cap == 6);
  CHECK(cfg.selection.compare ==
        std::vector<SelectionMethod>{SelectionMethod::lasso, SelectionMethod::pvalue});
  CHECK(cfg.ridge.alpha_grid == std::vector<double>{0.1, 1.0});
  CHECK(cfg.gbt.n_iters_grid == std::vector<int>{25});
  CHECK(cfg.gbt.max_depth_grid == std::vector<int>{2});
  CHECK(cfg.gbt.min_leaf == 3);
  CHECK(cfg.kmeans.k_grid == std::vector<int>{2});
  CHECK(cfg.kmeans.min_cluster == 5);
  CHECK(cfg.kmeans.plus_plus);
  CHECK(cfg.svr.c_grid == std::vector<double>{5.0});
  CHECK(cfg.svr.epsilon_grid == std::vector<double>{0.05});
  CHECK(cfg.svr.sigma_grid == std::vector<double>{2.0});
  CHECK(cfg.nn.learning_rate_grid == std::vector<double>{0.01});
  CHECK(cfg.nn.epochs == 60);
  CHECK(cfg.nn.batch_size == 16);
  CHECK(cfg.nn.patience == 15);
  CHECK(cfg.nn.hidden == std::vector<Eigen::Index>{8, 4});
  CHECK(cfg.evaluation.n_bins == 8);
  CHECK(cfg.evaluation.price_scale_mae);

  CHECK(make_context(cfg, -2).jobs == 1);
}

TEST_CASE("config rejects inconsistent settings", "[pipeline]") {
  nlohmann::json j = corpus_config("out");
  j.erase("lexicon");
  CHECK_THROWS_WITH(load_pipeline_config(j, "/b"),
                    Catch::Matchers::ContainsSubstring("no lexicon path given"));

  nlohmann::json bad_split = corpus_config("out");
  bad_split["split"]["ratios"] = {0.5, 0.5};
  CHECK_THROWS_WITH(load_pipeline_config(bad_split, "/b"),
                    Catch::Matchers::ContainsSubstring("split.ratios needs 3 entries"));
}

TEST_CASE("full run emits every artifact, reproducibly, whatever the thread count",
          "[pipeline]") {
  fs::path dir = fresh_dir("e2e");
  write_corpus(dir);
  StageContext a = corpus_context(dir, "run_a");
  StageContext b = corpus_context(dir, "run_b");
  StageContext d = corpus_context(dir, "run_d", 3);
  run_pipeline(a);
  run_pipeline(b);
  run_pipeline(d);

  const char* files[] = {"plan.json",         "split_train.csv",
                         "split_val.csv",     "split_test.csv",
                         "features_train.csv", "features_val.csv",
                         "features_test.csv", "sentiment_stats.json",
                         "mask.json",         "selection.csv",
                         "selection_chart.json", "model_linear_baseline.json",
                         "model_ridge.json",  "model_gbt.json",
                         "model_kmeans_ridge.json", "model_svr.json",
                         "model_nn.json",     "loss_nn.csv",
                         "metrics.csv",       "manifest.json"};
  for (const char* f : files) {
    CAPTURE(f);
    REQUIRE(fs::exists(a.out / f));
    CHECK(slurp(a.out / f) == slurp(b.out / f));
  }
  CHECK(slurp(d.out / "metrics.csv") == slurp(a.out / "metrics.csv"));
  CHECK(slurp(d.out / "model_nn.json") == slurp(a.out / "model_nn.json"));

  int hists = 0;
  for (const auto& e : fs::directory_iterator(a.out)) {
    const std::string name = e.path().filename().string();
    if (name.starts_with("hist_") && name.ends_with(".csv")) ++hists;
  }
  CHECK(hists == 3);

  // metrics table: six models, each scored on the merged training split and
  // once on the held-out one
  std::ifstream min(a.out / "metrics.csv");
  RawTable t = parse_csv(min);
  REQUIRE(t.row_count == 12);
  const auto mc = static_cast<std::size_t>(t.column_index("model"));
  const auto sc = static_cast<std::size_t>(t.column_index("split"));
  const auto rc = static_cast<std::size_t>(t.column_index("r2"));
  REQUIRE(t.column_index("mae_price") >= 0);
  const auto pc = static_cast<std::size_t>(t.column_index("mae_price"));

  std::map<std::string, double> test_r2;
  for (std::size_t r = 0; r < t.row_count; ++r) {
    CHECK(t.columns[mc].cells[r] == model_names()[r / 2]);
    CHECK(t.columns[sc].cells[r] == (r % 2 == 0 ? "train" : "test"));
    double r2 = std::strtod(t.columns[rc].cells[r].c_str(), nullptr);
    double mae_price = std::strtod(t.columns[pc].cells[r].c_str(), nullptr);
    CHECK(std::isfinite(r2));
    CHECK(mae_price > 0.0);
    if (r % 2 == 1) test_r2[t.columns[mc].cells[r]] = r2;
  }
  // the planted law is log-linear, so these four families must fit it well
  CHECK(test_r2.at("linear_baseline") > 0.5);
  CHECK(test_r2.at("ridge") > 0.5);
  CHECK(test_r2.at("svr") > 0.5);
  CHECK(test_r2.at("gbt") > 0.3);

  // manifest records versions, seed, per-stage status and the test-split latch
  nlohmann::json man;
  std::ifstream(a.out / "manifest.json") >> man;
  CHECK(man.at("versions").at("toolkit").get<std::string>() == kToolkitVersion);
  CHECK(man.at("seed").get<std::uint64_t>() == 11);
  CHECK(man.at("test_evaluated").get<bool>() == true);
  for (const char* stage :
       {"ingest", "sentiment", "select", "train_linear_baseline", "train_ridge", "train_gbt",
        "train_kmeans_ridge", "train_svr", "train_nn", "evaluate", "report"}) {
    CAPTURE(stage);
    CHECK(man.at("stages").at(stage).at("status").get<std::string>() == "ok");
  }
  CHECK(man.at("stages").at("ingest").at("train_rows").get<int>() == 56);
  CHECK(man.at("stages").at("ingest").at("val_rows").get<int>() == 12);
  CHECK(man.at("stages").at("ingest").at("test_rows").get<int>() == 12);
  CHECK(man.at("stages").at("ingest").at("dropped_rows").get<int>() == 0);
  CHECK(man.at("stages").at("sentiment").at("enabled").get<bool>() == true);

  // the held-out split is scored once per run directory unless forced
  CHECK_THROWS_WITH(stage_evaluate(a), Catch::Matchers::ContainsSubstring("pass --force"));
  CHECK_NOTHROW(stage_evaluate(a, true));

  CHECK_THROWS_WITH(stage_train(a, "boosted_zebra"),
                    Catch::Matchers::ContainsSubstring("unknown model 'boosted_zebra'"));
}

TEST_CASE("stages demand their upstream artifacts and compose to the full run", "[pipeline]") {
  fs::path dir = fresh_dir("stages");
  write_corpus(dir);
  StageContext ctx = corpus_context(dir, "run_c");
  StageContext whole = corpus_context(dir, "run_whole");

  CHECK_THROWS_WITH(stage_sentiment(ctx),
                    Catch::Matchers::ContainsSubstring("missing artifact 'split_train.csv'") &&
                        Catch::Matchers::ContainsSubstring("run the 'ingest' stage first"));
  CHECK_THROWS_WITH(stage_select(ctx),
                    Catch::Matchers::ContainsSubstring("run the 'sentiment' stage first"));
  CHECK_THROWS_WITH(stage_report(ctx),
                    Catch::Matchers::ContainsSubstring("run the 'evaluate' stage first"));

  stage_ingest(ctx);
  stage_sentiment(ctx);
  stage_select(ctx);
  CHECK_THROWS_WITH(
      stage_evaluate(ctx),
      Catch::Matchers::ContainsSubstring("missing artifact 'model_linear_baseline.json'") &&
          Catch::Matchers::ContainsSubstring("run the 'train linear_baseline' stage first"));
  for (const auto& name : model_names()) stage_train(ctx, name);
  stage_evaluate(ctx);
  stage_report(ctx);

  run_pipeline(whole);
  CHECK(slurp(ctx.out / "metrics.csv") == slurp(whole.out / "metrics.csv"));
  CHECK(slurp(ctx.out / "model_gbt.json") == slurp(whole.out / "model_gbt.json"));
}

TEST_CASE("a failing stage is recorded in the manifest and rethrown", "[pipeline]") {
  fs::path dir = fresh_dir("fail");
  write_corpus(dir);
  nlohmann::json j = corpus_config("run_fail");
  j["listings_csv"] = "nope.csv";
  StageContext ctx = make_context(load_pipeline_config(j, dir));

  CHECK_THROWS_AS(run_pipeline(ctx), std::exception);
  nlohmann::json man;
  std::ifstream(ctx.out / "manifest.json") >> man;
  CHECK(man.at("failed_stage").get<std::string>() == "ingest");
  CHECK(man.at("error").get<std::string>().find("nope.csv") != std::string::npos);
}

TEST_CASE("disabled sentiment passes the splits through unchanged", "[pipeline]") {
  fs::path dir = fresh_dir("nosent");
  write_corpus(dir);
  nlohmann::json j = corpus_config("run_ns");
  j["reviews_csv"] = "";
  StageContext ctx = make_context(load_pipeline_config(j, dir));
  CHECK_FALSE(ctx.config.sentiment_enabled);

  stage_ingest(ctx);
  stage_sentiment(ctx);
  CHECK(slurp(ctx.out / "features_train.csv") == slurp(ctx.out / "split_train.csv"));
  CHECK(slurp(ctx.out / "features_test.csv") == slurp(ctx.out / "split_test.csv"));
  nlohmann::json stats;
  std::ifstream(ctx.out / "sentiment_stats.json") >> stats;
  CHECK(stats.at("enabled").get<bool>() == false);
}

TEST_CASE("command line drives the pipeline end to end", "[pipeline]") {
  fs::path dir = fresh_dir("cli");
  write_corpus(dir);
  std::ofstream(dir / "config.json") << corpus_config("run_cli").dump(2) << "\n";

  const std::string cli = RENTFIT_CLI_PATH;
  REQUIRE(fs::exists(cli));
  auto sh = [&](const std::string& args) {
    std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  const std::string cfg = " --config " + (dir / "config.json").string();

  REQUIRE(sh("run" + cfg) == 0);
  CHECK(fs::exists(dir / "run_cli" / "metrics.csv"));
  CHECK(fs::exists(dir / "run_cli" / "manifest.json"));

  CHECK(sh("evaluate" + cfg) != 0);  // test split already scored
  CHECK(sh("evaluate" + cfg + " --force") == 0);
  CHECK(sh("report" + cfg) == 0);

  REQUIRE(sh("ingest" + cfg + " --out " + (dir / "other_out").string()) == 0);
  CHECK(fs::exists(dir / "other_out" / "plan.json"));

  CHECK(sh("bogus" + cfg) != 0);  // unknown subcommand
  CHECK(sh("run") != 0);          // --config is required
}
