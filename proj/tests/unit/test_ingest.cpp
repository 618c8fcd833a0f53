#include <catch2/catch_amalgamated.hpp>

#include <rentfit/ingest.hpp>

#include <cmath>
#include <set>
#include <sstream>

using namespace rentfit;

namespace {

RawTable table_from(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

Schema basic_schema() {
  Schema s;
  s.label_column = "price";
  s.id_column = "id";
  s.kinds = {{"id", ColumnKind::text},          {"price", ColumnKind::currency},
             {"bedrooms", ColumnKind::numeric}, {"room_type", ColumnKind::categorical},
             {"superhost", ColumnKind::boolean}, {"note", ColumnKind::text},
             {"junk", ColumnKind::numeric},      {"legacy", ColumnKind::drop}};
  return s;
}

const char* kBasicCsv =
    "id,price,bedrooms,room_type,superhost,note,junk,legacy\n"
    "r1,\"$1,500.00\",1,Entire,t,hi,,x\n"
    "r2,200,2,Private,f,,,x\n"
    "r3,300,3,Entire,t,,,x\n"
    "r4,100,6,Private,f,,7,x\n"
    "r5,250,2,Shared,t,,,x\n"
    "r6,150,4,Entire,f,,,x\n";

}  // namespace

TEST_CASE("cell parsers handle currency, numbers and booleans", "[ingest]") {
  CHECK(detail::parse_currency("$1,234.56").value() == 1234.56);
  CHECK(detail::parse_currency("$0.00").value() == 0.0);
  CHECK(detail::parse_currency("1500").value() == 1500.0);
  CHECK(detail::parse_currency("-$45.00").value() == -45.0);
  CHECK_FALSE(detail::parse_currency("call us").has_value());
  CHECK_FALSE(detail::parse_currency("$").has_value());

  CHECK(detail::parse_number("3.5").value() == 3.5);
  CHECK(detail::parse_number("  2 ").value() == 2.0);
  CHECK_FALSE(detail::parse_number("two").has_value());
  CHECK_FALSE(detail::parse_number("1.5x").has_value());
  CHECK_FALSE(detail::parse_number("nan").has_value());
  CHECK_FALSE(detail::parse_number("inf").has_value());

  for (const char* s : {"t", "T", "true", "yes", "1"})
    CHECK(detail::parse_boolean(s).value() == 1.0);
  for (const char* s : {"f", "False", "no", "0"})
    CHECK(detail::parse_boolean(s).value() == 0.0);
  CHECK_FALSE(detail::parse_boolean("maybe").has_value());
}

TEST_CASE("plan keeps features in table order and one-hot maps from train only", "[ingest]") {
  RawTable t = table_from(kBasicCsv);
  // r5 (Shared) is excluded from training so its category must not be mapped
  std::vector<std::size_t> train_rows{0, 1, 2, 3, 5};
  TransformPlan plan = build_transform_plan(t, basic_schema(), train_rows);

  REQUIRE(plan.feature_columns.size() == 3);
  CHECK(plan.feature_columns[0].first == "bedrooms");
  CHECK(plan.feature_columns[1].first == "room_type");
  CHECK(plan.feature_columns[2].first == "superhost");
  CHECK(plan.categorical_maps.at("room_type") == std::vector<std::string>{"Entire", "Private"});
  // legacy is schema-dropped, junk exceeds the missing threshold (5/6 empty)
  CHECK(std::set<std::string>(plan.drops.begin(), plan.drops.end()) ==
        std::set<std::string>{"legacy", "junk"});

  // expanded names: scalar columns keep their name, one-hot blocks use the category
  REQUIRE(plan.normalization_stats.size() == 4);
  CHECK(plan.normalization_stats[0].name == "bedrooms");
  CHECK(plan.normalization_stats[1].name == "Entire");
  CHECK(plan.normalization_stats[2].name == "Private");
  CHECK(plan.normalization_stats[3].name == "superhost");

  ApplyResult res = apply_transform(t, plan, {0, 1, 2, 3, 4, 5});
  REQUIRE(res.data.rows() == 6);
  CHECK(res.dropped_rows == 0);
  REQUIRE(res.data.ids.size() == 6);
  CHECK(res.data.ids[4] == "r5");

  // unseen category encodes as an all-zero block (pre-normalization)
  Eigen::Index shared_row = 4;
  double z_zero_entire = (0.0 - plan.normalization_stats[1].mean) / plan.normalization_stats[1].stddev;
  double z_zero_private = (0.0 - plan.normalization_stats[2].mean) / plan.normalization_stats[2].stddev;
  CHECK_THAT(res.data.X(shared_row, 1), Catch::Matchers::WithinAbs(z_zero_entire, 1e-12));
  CHECK_THAT(res.data.X(shared_row, 2), Catch::Matchers::WithinAbs(z_zero_private, 1e-12));
}

TEST_CASE("normalization statistics come from training rows alone", "[ingest]") {
  RawTable t = table_from(kBasicCsv);
  std::vector<std::size_t> train_rows{0, 1, 2, 3};  // bedrooms 1,2,3,6
  TransformPlan plan = build_transform_plan(t, basic_schema(), train_rows);

  const FeatureStat& bed = plan.normalization_stats[0];
  CHECK_THAT(bed.mean, Catch::Matchers::WithinAbs(3.0, 1e-9));
  CHECK_THAT(bed.stddev, Catch::Matchers::WithinAbs(std::sqrt(3.5), 1e-9));

  ApplyResult res = apply_transform(t, plan, train_rows);
  // z-scored training column has mean 0, population sd 1
  Eigen::Index m = res.data.rows();
  double mean = res.data.X.col(0).mean();
  double var = (res.data.X.col(0).array() - mean).square().sum() / static_cast<double>(m);
  CHECK_THAT(mean, Catch::Matchers::WithinAbs(0.0, 1e-12));
  CHECK_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("labels are natural-log prices and bad labels drop the row", "[ingest]") {
  RawTable t = table_from(
      "id,price,bedrooms\n"
      "a,\"$1,500.00\",1\n"
      "b,$0.00,2\n"
      "c,,3\n"
      "d,call us,1\n"
      "e,-45,2\n"
      "f,200,3\n");
  Schema s;
  s.label_column = "price";
  s.id_column = "id";
  s.kinds = {{"id", ColumnKind::text},
             {"price", ColumnKind::currency},
             {"bedrooms", ColumnKind::numeric}};
  TransformPlan plan = build_transform_plan(t, s, {0, 5});
  ApplyResult res = apply_transform(t, plan, {0, 1, 2, 3, 4, 5});

  REQUIRE(res.data.rows() == 2);
  CHECK(res.dropped_rows == 4);
  CHECK(res.data.ids == std::vector<std::string>{"a", "f"});
  CHECK_THAT(res.data.y(0), Catch::Matchers::WithinAbs(7.3132203870903014, 1e-15));
  CHECK_THAT(res.data.y(1), Catch::Matchers::WithinAbs(std::log(200.0), 1e-15));
}

TEST_CASE("unparseable non-empty feature cells drop the row, empty cells fill zero", "[ingest]") {
  RawTable t = table_from(
      "id,price,bedrooms\n"
      "a,100,1\n"
      "b,100,two\n"
      "c,100,\n"
      "d,100,3\n");
  Schema s;
  s.label_column = "price";
  s.id_column = "id";
  s.kinds = {{"id", ColumnKind::text},
             {"price", ColumnKind::currency},
             {"bedrooms", ColumnKind::numeric}};
  TransformPlan plan = build_transform_plan(t, s, {0, 3});
  ApplyResult res = apply_transform(t, plan, {0, 1, 2, 3});

  REQUIRE(res.data.rows() == 3);  // "two" dropped, empty kept
  CHECK(res.dropped_rows == 1);
  // train bedrooms 1,3: mean 2, sd 1; filled zero z-scores to -2
  CHECK_THAT(res.data.X(1, 0), Catch::Matchers::WithinAbs(-2.0, 1e-12));
}

TEST_CASE("column exactly at the missing threshold is kept", "[ingest]") {
  RawTable t = table_from(
      "price,half\n"
      "100,1\n"
      "100,\n"
      "100,2\n"
      "100,\n");
  Schema s;
  s.label_column = "price";
  s.kinds = {{"price", ColumnKind::currency}, {"half", ColumnKind::numeric}};
  s.missing_threshold = 0.5;  // missing rate is exactly 0.5
  TransformPlan plan = build_transform_plan(t, s, {0, 1, 2, 3});
  REQUIRE(plan.feature_columns.size() == 1);
  CHECK(plan.feature_columns[0].first == "half");
  CHECK(plan.drops.empty());
}

TEST_CASE("schema gaps and category explosions are rejected", "[ingest]") {
  RawTable t = table_from("price,city\n100,a\n200,b\n300,c\n");
  Schema s;
  s.label_column = "price";
  s.kinds = {{"price", ColumnKind::currency}, {"city", ColumnKind::categorical}};

  Schema missing = s;
  missing.kinds.erase("city");
  CHECK_THROWS_WITH(build_transform_plan(t, missing, {0, 1, 2}),
                    Catch::Matchers::ContainsSubstring("schema does not cover column"));

  Schema tight = s;
  tight.max_categories = 2;
  CHECK_THROWS_WITH(build_transform_plan(t, tight, {0, 1, 2}),
                    Catch::Matchers::ContainsSubstring("categories, limit 2"));

  Schema no_label = s;
  no_label.label_column = "cost";
  CHECK_THROWS_WITH(build_transform_plan(t, no_label, {0, 1, 2}),
                    Catch::Matchers::ContainsSubstring("label column not present"));

  Schema label_dropped = s;
  label_dropped.kinds["price"] = ColumnKind::drop;
  CHECK_THROWS_WITH(build_transform_plan(t, label_dropped, {0, 1, 2}),
                    Catch::Matchers::ContainsSubstring("label column is marked drop"));
}

TEST_CASE("one-hot names colliding with scalar columns are de-duplicated", "[ingest]") {
  RawTable t = table_from(
      "price,kind,flag\n"
      "100,flag,1\n"
      "200,other,2\n"
      "300,flag,3\n");
  Schema s;
  s.label_column = "price";
  s.kinds = {{"price", ColumnKind::currency},
             {"kind", ColumnKind::categorical},
             {"flag", ColumnKind::numeric}};
  TransformPlan plan = build_transform_plan(t, s, {0, 1, 2});
  std::vector<std::string> names;
  for (const auto& st : plan.normalization_stats) names.push_back(st.name);
  CHECK(names == std::vector<std::string>{"flag", "other", "flag.1"});
}

TEST_CASE("plan JSON round-trip replays to identical features", "[ingest]") {
  RawTable t = table_from(kBasicCsv);
  std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};
  TransformPlan plan = build_transform_plan(t, basic_schema(), {0, 1, 2, 5});

  nlohmann::json j = to_json(plan);
  TransformPlan replay = transform_plan_from_json(nlohmann::json::parse(j.dump()));

  CHECK(replay.label_column == plan.label_column);
  CHECK(replay.id_column == plan.id_column);
  CHECK(replay.feature_columns == plan.feature_columns);
  CHECK(replay.categorical_maps == plan.categorical_maps);
  CHECK(replay.drops == plan.drops);

  ApplyResult a = apply_transform(t, plan, all);
  ApplyResult b = apply_transform(t, replay, all);
  REQUIRE(a.data.rows() == b.data.rows());
  CHECK((a.data.X - b.data.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.data.y - b.data.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.data.feature_names == b.data.feature_names);
}

TEST_CASE("schema file loads kinds and limits", "[ingest]") {
  std::istringstream in(R"({
    "label": "price", "id": "id",
    "missing_threshold": 0.4, "max_categories": 10,
    "columns": {"id": "text", "price": "currency", "beds": "numeric"}
  })");
  Schema s = load_schema(in);
  CHECK(s.label_column == "price");
  CHECK(s.id_column == "id");
  CHECK(s.missing_threshold == 0.4);
  CHECK(s.max_categories == 10);
  CHECK(s.kinds.at("beds") == ColumnKind::numeric);
  CHECK_THROWS(column_kind_from_string("weird"));
}

TEST_CASE("index split is sized by floor, disjoint and seeded", "[ingest]") {
  IndexSplit sp = split_indices(100, {0.9, 0.05, 0.05}, 7);
  CHECK(sp.train.size() == 90);
  CHECK(sp.val.size() == 5);
  CHECK(sp.test.size() == 5);

  std::set<Eigen::Index> seen(sp.train.begin(), sp.train.end());
  seen.insert(sp.val.begin(), sp.val.end());
  seen.insert(sp.test.begin(), sp.test.end());
  REQUIRE(seen.size() == 100);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 99);

  IndexSplit again = split_indices(100, {0.9, 0.05, 0.05}, 7);
  CHECK(again.train == sp.train);
  CHECK(again.test == sp.test);
  IndexSplit other = split_indices(100, {0.9, 0.05, 0.05}, 8);
  CHECK(other.train != sp.train);

  // floor semantics: 10 rows at 0.7/0.15/0.15 -> 7/1/2
  IndexSplit ten = split_indices(10, {0.7, 0.15, 0.15}, 1);
  CHECK(ten.train.size() == 7);
  CHECK(ten.val.size() == 1);
  CHECK(ten.test.size() == 2);

  CHECK_THROWS_WITH(split_indices(100, {0.5, 0.4, 0.2}, 1),
                    Catch::Matchers::ContainsSubstring("ratios must sum to 1"));
  CHECK_THROWS_WITH(split_indices(2, {0.34, 0.33, 0.33}, 1),
                    Catch::Matchers::ContainsSubstring("need at least 3 rows"));
  CHECK_THROWS_WITH(split_indices(5, {0.98, 0.01, 0.01}, 1),
                    Catch::Matchers::ContainsSubstring("a split would be empty"));
}

TEST_CASE("dataset CSV round-trips including ids", "[ingest]") {
  Dataset d;
  d.feature_names = {"f1", "f2"};
  d.ids = {"a", "b", "c"};
  d.X.resize(3, 2);
  d.X << 0.25, -1.5, 3.0, 0.1, -0.75, 2.25;
  d.y.resize(3);
  d.y << 4.5, 5.25, 6.0;

  std::ostringstream out;
  write_dataset_csv(d, out);
  std::istringstream in(out.str());
  Dataset back = read_dataset_csv(in);

  CHECK(back.ids == d.ids);
  CHECK(back.feature_names == d.feature_names);
  CHECK((back.X - d.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.y - d.y).cwiseAbs().maxCoeff() == 0.0);

  std::istringstream bad("f1,f2\n1,2\n");
  CHECK_THROWS_WITH(read_dataset_csv(bad),
                    Catch::Matchers::ContainsSubstring("missing log_price"));
}
