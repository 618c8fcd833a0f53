// Deterministic synthetic-listings generator for the bundled pipeline fixture.
//
// The log-price ground truth mixes linear effects (room type, bedrooms,
// amenities, a mild north/west premium, review sentiment) with pieces no
// linear model can represent: a localized geographic price bump straddling
// two neighbourhood boundaries, a saturating capacity curve, and an
// entire-home x bedrooms interaction. Before any file is written, the
// generator re-encodes its own output through the library's transform plan
// and fits the actual models: generation only succeeds when OLS stays weak
// and the tree/kernel models recover the signal with a comfortable margin
// over the pipeline's acceptance thresholds.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <rentfit/pipeline.hpp>

namespace {

using rentfit::detail::uniform01;

double normal01(std::mt19937_64& rng) {
  double u1 = std::max(uniform01(rng), 1e-12);
  double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return rng() % n; }

struct Listing {
  std::string id;
  std::string name;
  double lat = 0, lon = 0;
  std::string room_type;
  std::string hood;
  int bedrooms = 0;
  double bathrooms = 1;
  int accommodates = 1;
  int amenities = 0;
  int min_nights = 1;
  int availability = 0;
  bool superhost = false;
  double quality = 0;    // latent driver of reviews
  double sentiment = 0;  // realized lexicon score of the generated reviews
  double log_price = 0;
};

const std::vector<std::pair<std::string, std::pair<double, double>>> kHoods = {
    {"Harborview", {40.655, -74.010}}, {"Old Town", {40.690, -73.960}},
    {"Center", {40.735, -74.000}},     {"Uptown", {40.800, -73.960}},
    {"Eastvale", {40.760, -73.870}},   {"Greenfield", {40.860, -73.910}},
};

std::string nearest_hood(double lat, double lon) {
  std::size_t best = 0;
  double best_d = 1e9;
  for (std::size_t i = 0; i < kHoods.size(); ++i) {
    double dl = lat - kHoods[i].second.first, dn = lon - kHoods[i].second.second;
    double d = dl * dl + dn * dn;
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return kHoods[best].first;
}

constexpr double kNoiseSd = 0.12;

// Non-monotone price field over the map: two hot pockets and one cheap zone,
// each straddling a neighbourhood boundary so the one-hot dummies only see a
// blurred average of it.
double price_field(double lat, double lon) {
  auto bump = [](double la, double lo, double cla, double clo, double r) {
    double dl = la - cla, dn = lo - clo;
    return std::exp(-(dl * dl + dn * dn) / (2.0 * r * r));
  };
  return 1.55 * bump(lat, lon, 40.712, -73.982, 0.065) +
         1.00 * bump(lat, lon, 40.795, -73.955, 0.070) -
         1.10 * bump(lat, lon, 40.835, -73.905, 0.080);
}

// additive part: what a linear model could in principle represent
double linear_part(const Listing& l) {
  const bool entire = l.room_type == "Entire home/apt";
  const bool priv = l.room_type == "Private room";
  double y = 0.0;
  y += entire ? 0.15 : (priv ? 0.06 : 0.0);
  y += 0.05 * l.bedrooms + 0.05 * l.bathrooms;
  y += 0.15 * std::tanh((l.accommodates - 3.0) / 2.0);
  y += 0.38 * (l.lat - 40.75);
  y += -0.24 * (l.lon + 73.90);
  y += 0.004 * l.amenities;
  y += 0.14 * l.sentiment;
  return y;
}

// interaction part: products and steps no additive encoding can express
double nonlinear_part(const Listing& l) {
  const bool entire = l.room_type == "Entire home/apt";
  double y = 0.0;
  // the location premium scales with unit size, and studios barely feel it:
  // the modulation crosses zero, so no per-area dummy can absorb the field
  y += (0.12 + 0.55 * (l.bedrooms - 1.5)) * price_field(l.lat, l.lon);
  if (l.min_nights >= 7) y += -0.20;
  if (entire && l.bedrooms >= 2) y += 0.12;
  return y;
}

double ground_truth(const Listing& l) { return 3.20 + linear_part(l) + nonlinear_part(l); }

std::string dollars(double price) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", price);
  std::string digits(buf);
  auto dot = digits.find('.');
  std::string whole = digits.substr(0, dot), frac = digits.substr(dot);
  std::string grouped;
  int count = 0;
  for (auto it = whole.rbegin(); it != whole.rend(); ++it) {
    if (count > 0 && count % 3 == 0) grouped.insert(grouped.begin(), ',');
    grouped.insert(grouped.begin(), *it);
    ++count;
  }
  return "$" + grouped + frac;
}

// --- review text -----------------------------------------------------------

const std::vector<std::string> kNeutralBits = {
    "we walked to the station in ten minutes",
    "check in was at three",
    "the block has a bakery and a market",
    "we came for a weekend trip",
    "the photos match the listing",
    "parking is on the street",
    "would come back for another visit",
    "the stairs go up to the third floor",
};

struct WordBank {
  std::vector<std::string> strong_pos, strong_neg;
};

WordBank build_word_bank(const rentfit::Lexicon& lex) {
  WordBank bank;
  for (const auto& [token, polarity] : lex.entries) {
    if (polarity >= 0.5) bank.strong_pos.push_back(token);
    if (polarity <= -0.5) bank.strong_neg.push_back(token);
  }
  return bank;
}

std::string make_review(std::mt19937_64& rng, const WordBank& bank, double quality) {
  const double p_pos = (1.0 + quality) / 2.0;
  std::ostringstream text;
  const int n_sentiment = 2 + static_cast<int>(pick(rng, 4));
  text << "The place was";
  for (int w = 0; w < n_sentiment; ++w) {
    const bool positive = uniform01(rng) < p_pos;
    const bool negated = uniform01(rng) < 0.12;
    // a negated word is drawn from the opposite bank so the sentence still
    // leans the way the quality latent says
    const auto& words = (positive != negated) ? bank.strong_pos : bank.strong_neg;
    text << (w == 0 ? " " : (w + 1 == n_sentiment ? " and " : ", "));
    if (negated) text << "not ";
    text << words[pick(rng, words.size())];
  }
  text << ". " << kNeutralBits[pick(rng, kNeutralBits.size())];
  if (uniform01(rng) < 0.08) text << ",\nall in all a normal city block";  // embedded newline
  if (uniform01(rng) < 0.06) text << " (the \"deluxe\" room, per the listing)";
  text << ".";
  return text.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"generate the deterministic synthetic listings fixture"};
  std::string lexicon_path = "data/lexicon/polarity.txt";
  std::string out_dir = "data/fixture";
  app.add_option("--lexicon", lexicon_path, "polarity lexicon file");
  app.add_option("--out", out_dir, "output directory");
  CLI11_PARSE(app, argc, argv);

  rentfit::Lexicon lexicon = rentfit::load_lexicon(lexicon_path);
  WordBank bank = build_word_bank(lexicon);
  if (bank.strong_pos.size() < 40 || bank.strong_neg.size() < 40) {
    std::cerr << "lexicon too thin for review generation\n";
    return 1;
  }
  for (const auto& bit : kNeutralBits)
    for (const auto& token : rentfit::detail::tokenize_lower(bit))
      if (lexicon.entries.count(token)) {
        std::cerr << "neutral filler contains lexicon word: " << token << "\n";
        return 1;
      }

  std::mt19937_64 rng(20240817);
  const int n = 1600;
  std::vector<Listing> listings;
  std::map<std::string, std::vector<std::string>> reviews;  // id -> texts

  for (int i = 0; i < n; ++i) {
    Listing l;
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "F%04d", i + 1);
    l.id = idbuf;
    l.lat = 40.60 + 0.30 * uniform01(rng);
    l.lon = -74.05 + 0.30 * uniform01(rng);
    l.hood = nearest_hood(l.lat, l.lon);

    const double rt = uniform01(rng);
    l.room_type = rt < 0.55 ? "Entire home/apt" : (rt < 0.93 ? "Private room" : "Shared room");
    if (l.room_type == "Entire home/apt") {
      l.bedrooms = 1 + static_cast<int>(pick(rng, 4));  // 1..4
      l.accommodates = std::min(8, l.bedrooms + 1 + static_cast<int>(pick(rng, 4)));
      l.bathrooms = 1.0 + 0.5 * static_cast<double>(pick(rng, 4));
    } else {
      l.bedrooms = static_cast<int>(pick(rng, 2));  // 0..1
      l.accommodates = 1 + static_cast<int>(pick(rng, 3));
      l.bathrooms = 1.0 + 0.5 * static_cast<double>(pick(rng, 2));
    }
    l.amenities = 3 + static_cast<int>(pick(rng, 23));
    const int mn_choices[] = {1, 1, 2, 2, 3, 7, 30};
    l.min_nights = mn_choices[pick(rng, 7)];
    l.availability = static_cast<int>(pick(rng, 366));
    l.quality = 2.0 * uniform01(rng) - 1.0;
    l.superhost = uniform01(rng) < 0.15 + 0.25 * (l.quality + 1.0) / 2.0;

    const int n_reviews = 1 + static_cast<int>(pick(rng, 4));
    rentfit::ReviewSet rs;
    rs.listing_id = l.id;
    for (int r = 0; r < n_reviews; ++r) {
      std::string text = make_review(rng, bank, l.quality);
      reviews[l.id].push_back(text);
      rs.reviews.push_back(std::move(text));
    }
    l.sentiment = rentfit::listing_sentiment(rs, lexicon);

    l.log_price = ground_truth(l) + kNoiseSd * normal01(rng);
    std::ostringstream name;
    name << (l.superhost ? "Bright, well kept " : "Simple ") << l.room_type << " in "
         << l.hood << " #" << (i + 1);
    l.name = name.str();
    listings.push_back(std::move(l));
  }

  // --- generation-time oracle: encode through the real plan, fit real models
  rentfit::RawTable table;
  table.columns.reserve(16);  // col() hands out stable pointers into this vector
  auto col = [&](const char* name) {
    table.columns.push_back({name, {}});
    return &table.columns.back().cells;
  };
  auto* c_id = col("id");
  auto* c_name = col("name");
  auto* c_price = col("price");
  auto* c_lat = col("latitude");
  auto* c_lon = col("longitude");
  auto* c_room = col("room_type");
  auto* c_hood = col("neighbourhood");
  auto* c_bed = col("bedrooms");
  auto* c_bath = col("bathrooms");
  auto* c_acc = col("accommodates");
  auto* c_amen = col("amenities_count");
  auto* c_mn = col("minimum_nights");
  auto* c_avail = col("availability_365");
  auto* c_super = col("is_superhost");
  auto* c_junk = col("junk_mostly_missing");

  auto fmt = [](double v) { return rentfit::format_double(v); };
  std::mt19937_64 cell_rng(7151);
  for (const auto& l : listings) {
    c_id->push_back(l.id);
    c_name->push_back(l.name);
    c_price->push_back(dollars(std::exp(l.log_price)));
    c_lat->push_back(fmt(l.lat));
    c_lon->push_back(fmt(l.lon));
    c_room->push_back(l.room_type);
    c_hood->push_back(l.hood);
    // a sprinkle of missing-but-fillable cells in kept numeric columns
    c_bed->push_back(uniform01(cell_rng) < 0.02 ? "" : std::to_string(l.bedrooms));
    c_bath->push_back(fmt(l.bathrooms));
    c_acc->push_back(std::to_string(l.accommodates));
    c_amen->push_back(std::to_string(l.amenities));
    c_mn->push_back(std::to_string(l.min_nights));
    c_avail->push_back(uniform01(cell_rng) < 0.05 ? "" : std::to_string(l.availability));
    c_super->push_back(l.superhost ? "t" : "f");
    c_junk->push_back(uniform01(cell_rng) < 0.85 ? "" : fmt(uniform01(cell_rng)));
  }
  table.row_count = listings.size();

  rentfit::Schema schema;
  schema.label_column = "price";
  schema.id_column = "id";
  schema.kinds = {{"id", rentfit::ColumnKind::text},
                  {"name", rentfit::ColumnKind::text},
                  {"price", rentfit::ColumnKind::currency},
                  {"latitude", rentfit::ColumnKind::numeric},
                  {"longitude", rentfit::ColumnKind::numeric},
                  {"room_type", rentfit::ColumnKind::categorical},
                  {"neighbourhood", rentfit::ColumnKind::categorical},
                  {"bedrooms", rentfit::ColumnKind::numeric},
                  {"bathrooms", rentfit::ColumnKind::numeric},
                  {"accommodates", rentfit::ColumnKind::numeric},
                  {"amenities_count", rentfit::ColumnKind::numeric},
                  {"minimum_nights", rentfit::ColumnKind::numeric},
                  {"availability_365", rentfit::ColumnKind::numeric},
                  {"is_superhost", rentfit::ColumnKind::boolean},
                  {"junk_mostly_missing", rentfit::ColumnKind::numeric}};

  std::vector<std::size_t> all_rows(listings.size());
  std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
  rentfit::TransformPlan plan = rentfit::build_transform_plan(table, schema, all_rows);
  rentfit::Dataset encoded = rentfit::apply_transform(table, plan).data;

  // append the realized sentiment column exactly as the pipeline would
  std::map<std::string, double> scores;
  for (const auto& l : listings) scores[l.id] = l.sentiment;
  encoded = rentfit::append_sentiment_column(encoded, scores);
  {
    Eigen::Index sc = encoded.cols() - 1;
    double mean = encoded.X.col(sc).mean();
    double sd = std::sqrt((encoded.X.col(sc).array() - mean).square().mean());
    encoded.X.col(sc) = (encoded.X.col(sc).array() - mean) / (sd == 0 ? 1.0 : sd);
  }

  rentfit::SplitDataset oracle_split = rentfit::split(encoded, {0.7, 0.15, 0.15}, 99);
  // the same curated list the shipped pipeline config uses
  const std::vector<std::string> curated = {
      "latitude",        "longitude",      "Entire home/apt", "Private room",
      "bedrooms",        "bathrooms",      "accommodates",    "amenities_count",
      "minimum_nights",  "is_superhost",   "review_sentiment"};
  rentfit::SelectionResult sel = rentfit::manual_select(oracle_split.train, curated);
  if (!sel.unmatched.empty()) {
    std::cerr << "curated feature missing from encoded data: " << sel.unmatched[0] << "\n";
    return 1;
  }
  const rentfit::Dataset otr = rentfit::apply_mask(oracle_split.train, sel.mask);
  const rentfit::Dataset ote = rentfit::apply_mask(oracle_split.test, sel.mask);

  const double var_y = (encoded.y.array() - encoded.y.mean()).square().mean();
  const double noise_floor = 1.0 - kNoiseSd * kNoiseSd / var_y;

  {
    Eigen::VectorXd lin(listings.size()), nonlin(listings.size());
    for (std::size_t i = 0; i < listings.size(); ++i) {
      lin(static_cast<Eigen::Index>(i)) = linear_part(listings[i]);
      nonlin(static_cast<Eigen::Index>(i)) = nonlinear_part(listings[i]);
    }
    auto var = [](const Eigen::VectorXd& v) { return (v.array() - v.mean()).square().mean(); };
    std::cout << "  components: var(linear)=" << var(lin) << " var(nonlinear)=" << var(nonlin)
              << " var(noise)=" << kNoiseSd * kNoiseSd << " var(y)=" << var_y << "\n";
  }

  rentfit::LinearModel ols = rentfit::fit_ols(encoded.X, encoded.y);
  const double ols_in = rentfit::metrics(encoded.y, predict(ols, encoded.X)).r2;
  rentfit::LinearModel ols_tr = rentfit::fit_ols(oracle_split.train.X, oracle_split.train.y);
  const double ols_out =
      rentfit::metrics(oracle_split.test.y, predict(ols_tr, oracle_split.test.X)).r2;

  rentfit::GbtConfig gc{400, 0.1, 4, 5};
  rentfit::GbtEnsemble gbt = rentfit::fit_gbt(otr.X, otr.y, gc);
  const double gbt_out = rentfit::metrics(ote.y, predict(gbt, ote.X)).r2;

  double svr_out = -1e9, svr_sigma = 0, svr_c = 0, svr_eps = 0;
  for (double C : {1.0, 10.0, 30.0})
    for (double sigma : {1.2, 1.8, 2.5})
      for (double eps : {0.03, 0.05}) {
      rentfit::SvrConfig sc;
      sc.C = C;
      sc.epsilon = eps;
      sc.sigma = sigma;
      rentfit::SvrModel m = rentfit::fit_svr(otr.X, otr.y, sc);
      double r2 = rentfit::metrics(ote.y, predict(m, ote.X)).r2;
      if (r2 > svr_out) {
        svr_out = r2;
        svr_sigma = sigma;
        svr_c = C;
        svr_eps = eps;
      }
    }

  std::cout << "oracle: var(y)=" << var_y << " noise_floor_r2=" << noise_floor
            << "\n  ols_in=" << ols_in << " ols_holdout=" << ols_out
            << "\n  gbt_holdout=" << gbt_out << "\n  svr_holdout=" << svr_out
            << " (C=" << svr_c << ", sigma=" << svr_sigma << ", eps=" << svr_eps << ")\n";

  bool ok = true;
  auto check = [&](bool cond, const std::string& what) {
    std::cout << (cond ? "  [ok] " : "  [FAIL] ") << what << "\n";
    ok = ok && cond;
  };
  check(noise_floor >= 0.92, "noise floor >= 0.92");
  check(ols_in <= 0.55, "full-feature OLS in-sample r2 <= 0.55");
  check(ols_out <= 0.58, "full-feature OLS holdout r2 <= 0.58");
  check(gbt_out >= 0.87, "gbt holdout r2 >= 0.87");
  check(svr_out >= 0.87, "svr holdout r2 >= 0.87");
  if (!ok) {
    std::cerr << "fixture rejected by generation-time oracle; nothing written\n";
    return 1;
  }

  // --- write files ----------------------------------------------------------
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  {
    std::ofstream out(fs::path(out_dir) / "listings.csv", std::ios::binary);
    std::vector<std::string> header;
    for (const auto& c : table.columns) header.push_back(c.name);
    rentfit::write_csv_row(out, header);
    auto emit = [&](const std::vector<std::string>& row) { rentfit::write_csv_row(out, row); };
    for (std::size_t r = 0; r < table.row_count; ++r) {
      std::vector<std::string> row;
      for (const auto& c : table.columns) row.push_back(c.cells[r]);
      emit(row);
    }
    // rows the cleaning stage must drop: unusable labels or corrupt numerics
    emit({"X1001", "No price given", "", "40.7", "-73.9", "Private room", "Old Town", "1",
          "1", "2", "5", "1", "100", "f", ""});
    emit({"X1002", "Free stay promo", "$0.00", "40.7", "-73.9", "Private room", "Old Town",
          "1", "1", "2", "5", "1", "100", "f", ""});
    emit({"X1003", "Price on request", "call us", "40.7", "-73.9", "Entire home/apt",
          "Center", "2", "1", "4", "8", "2", "200", "t", ""});
    emit({"X1004", "Bad bedrooms field", "$120.00", "40.7", "-73.9", "Entire home/apt",
          "Center", "two", "1", "4", "8", "2", "200", "f", ""});
    emit({"X1005", "Bad accommodates field", "$95.00", "40.8", "-73.95", "Private room",
          "Uptown", "1", "1", "n/a", "6", "1", "150", "f", ""});
    emit({"X1006", "Negative price", "-$45.00", "40.8", "-73.95", "Shared room", "Uptown",
          "0", "1", "1", "4", "1", "300", "f", ""});
  }
  {
    std::ofstream out(fs::path(out_dir) / "reviews.csv", std::ios::binary);
    rentfit::write_csv_row(out, {"listing_id", "comments"});
    for (const auto& [id, texts] : reviews)
      for (const auto& text : texts) rentfit::write_csv_row(out, {id, text});
  }
  {
    nlohmann::json cols;
    for (const auto& [name, kind] : schema.kinds) cols[name] = rentfit::to_string(kind);
    nlohmann::json sj{{"label", "price"},
                      {"id", "id"},
                      {"missing_threshold", 0.5},
                      {"max_categories", 200},
                      {"columns", cols}};
    std::ofstream out(fs::path(out_dir) / "schema.json", std::ios::binary);
    out << sj.dump(2) << "\n";
  }
  {
    nlohmann::json cj{
        {"listings_csv", "listings.csv"},
        {"reviews_csv", "reviews.csv"},
        {"lexicon", "../lexicon/polarity.txt"},
        {"schema", "schema.json"},
        {"out_dir", "../../runs/fixture"},
        {"split", {{"ratios", {0.90, 0.05, 0.05}}, {"seed", 7}}},
        {"sentiment", {{"enabled", true}}},
        {"selection",
         {{"method", "manual"},
          {"manual_names", curated},
          {"alpha_grid", {0.0003, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3}},
          {"compare", {"manual", "lasso", "pvalue"}}}},
        {"models",
         {{"ridge", {{"alpha_grid", {0.1, 1.0, 10.0, 100.0}}}},
          {"gbt",
           {{"n_iters_grid", {150, 400}},
            {"max_depth_grid", {3, 4}},
            {"learning_rate", 0.1},
            {"min_leaf", 5}}},
          {"kmeans_ridge",
           {{"k_grid", {2, 4, 8}}, {"alpha", 1.0}, {"min_cluster", 30}}},
          {"svr",
           {{"c_grid", {10.0}},
            {"epsilon_grid", {0.05, 0.1}},
            {"sigma_grid", {2.5, 3.5}},
            {"tol", 1e-3},
            {"max_iter", 2000000}}},
          {"nn",
           {{"learning_rate_grid", {0.001, 0.003}},
            {"epochs", 300},
            {"batch_size", 64},
            {"patience", 30}}}}},
        {"evaluation", {{"n_bins", 50}, {"price_scale_mae", false}}}};
    std::ofstream out(fs::path(out_dir) / "config.json", std::ios::binary);
    out << cj.dump(2) << "\n";
  }
  std::cout << "fixture written to " << out_dir << "\n";
  return 0;
}
