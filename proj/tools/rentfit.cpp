// Pipeline front-end: each stage is independently runnable and resumable,
// reading its inputs from the previous stage's artifacts in the run directory.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <rentfit/pipeline.hpp>

namespace {

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  int jobs = 1;
};

void add_common(CLI::App* sub, CommonOpts& opts) {
  sub->add_option("--config", opts.config_path, "pipeline config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", opts.seed, "override the config's split/model seed")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  sub->add_option("--out", opts.out_dir, "override the config's output directory");
  sub->add_option("--jobs", opts.jobs, "worker threads for hyperparameter sweeps")
      ->check(CLI::PositiveNumber);
}

rentfit::StageContext make_ctx(const CommonOpts& opts) {
  rentfit::PipelineConfig cfg = rentfit::load_pipeline_config(opts.config_path);
  if (opts.seed_set) cfg.split.seed = opts.seed;
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  return rentfit::make_context(std::move(cfg), opts.jobs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rent-price modeling pipeline: ingest, sentiment, feature selection, "
               "six regression models, evaluation reports"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string train_model;
  bool force = false;

  CLI::App* ingest = app.add_subcommand("ingest", "clean, encode and split the listings CSV");
  CLI::App* sentiment =
      app.add_subcommand("sentiment", "score reviews and append the sentiment feature");
  CLI::App* select = app.add_subcommand("select", "run feature selection and comparison");
  CLI::App* train = app.add_subcommand("train", "train one model with its validation sweep");
  train->add_option("model", train_model,
                    "linear_baseline | ridge | gbt | kmeans_ridge | svr | nn")
      ->required();
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "score all trained models on train+val and test");
  evaluate->add_flag("--force", force, "re-evaluate the test split even if already done");
  CLI::App* report =
      app.add_subcommand("report", "histogram CSVs for the top 3 models by test fit");
  CLI::App* run = app.add_subcommand("run", "all stages in order");
  run->add_flag("--force", force, "re-evaluate the test split even if already done");

  for (CLI::App* sub : {ingest, sentiment, select, train, evaluate, report, run})
    add_common(sub, opts);

  CLI11_PARSE(app, argc, argv);

  const std::string stage = app.get_subcommands().front()->get_name();
  rentfit::StageContext ctx;
  try {
    ctx = make_ctx(opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (stage == "ingest") {
      rentfit::stage_ingest(ctx);
    } else if (stage == "sentiment") {
      rentfit::stage_sentiment(ctx);
    } else if (stage == "select") {
      rentfit::stage_select(ctx);
    } else if (stage == "train") {
      rentfit::stage_train(ctx, train_model);
    } else if (stage == "evaluate") {
      rentfit::stage_evaluate(ctx, force);
    } else if (stage == "report") {
      rentfit::stage_report(ctx);
    } else {
      rentfit::run_pipeline(ctx, force);
      std::cout << "artifacts in " << ctx.out.string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    const std::string name = stage == "train" ? "train_" + train_model : stage;
    if (stage != "run") {  // run_pipeline records its own failures
      try {
        rentfit::record_failure(ctx, name, e.what());
      } catch (...) {
        // manifest not writable (e.g. the failure was creating the directory)
      }
    }
    std::cerr << "error [" << name << "]: " << e.what() << "\n";
    return 1;
  }
  std::cout << "stage '" << stage << "' complete; artifacts in " << ctx.out.string() << "\n";
  return 0;
}
