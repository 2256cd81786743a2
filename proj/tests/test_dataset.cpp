#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fcmaudit/dataset.hpp"
#include "oracles.hpp"

using namespace fcmaudit;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& content) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream os(p);
  os << content;
  return p;
}

std::vector<FeatureSchema> mixed_schema() {
  return {{"age", FeatureKind::numeric, true, {}, "F1"},
          {"city", FeatureKind::nominal, false, {}, "F2"}};
}

}  // namespace

TEST_CASE("load_csv maps cells and discovers categories in first-seen order") {
  const auto p = write_temp("ds_basic.csv", "30,york,good\n40,leeds,bad\n50,york,good\n");
  const Dataset ds = load_csv(p.string(), mixed_schema());
  REQUIRE(ds.rows() == 3);
  REQUIRE(ds.features() == 2);
  CHECK(ds.value(0, 0) == 30.0);
  CHECK(ds.schema()[1].categories == std::vector<std::string>{"york", "leeds"});
  CHECK(ds.category(1, 1) == 1);
  CHECK(ds.class_names() == std::vector<std::string>{"good", "bad"});
  CHECK(ds.labels() == std::vector<int>{0, 1, 0});
}

TEST_CASE("load_csv rejects an empty file") {
  const auto p = write_temp("ds_empty.csv", "");
  REQUIRE_THROWS_WITH(load_csv(p.string(), mixed_schema()),
                      Catch::Matchers::ContainsSubstring("no rows"));
}

TEST_CASE("load_csv names the offending row on a column-count mismatch") {
  const auto p = write_temp("ds_badrow.csv",
                            "1,a,x\n2,b,x\n3,c,x\n4,d,x\n5,e\n6,f,x\n");
  REQUIRE_THROWS_WITH(load_csv(p.string(), mixed_schema()),
                      Catch::Matchers::ContainsSubstring("row 5"));
}

TEST_CASE("load_csv names row and column for an unparseable numeric") {
  const auto p = write_temp("ds_badnum.csv", "1,a,x\noops,b,x\n");
  REQUIRE_THROWS_WITH(load_csv(p.string(), mixed_schema()),
                      Catch::Matchers::ContainsSubstring("row 2") &&
                          Catch::Matchers::ContainsSubstring("age"));
}

TEST_CASE("load_csv honors declared classes and rejects unknown labels") {
  const auto p = write_temp("ds_classes.csv", "1,a,bad\n2,b,good\n");
  const Dataset ds = load_csv(p.string(), mixed_schema(), {}, {"good", "bad"});
  CHECK(ds.labels() == std::vector<int>{1, 0});
  const auto p2 = write_temp("ds_classes2.csv", "1,a,unheard\n");
  REQUIRE_THROWS_WITH(load_csv(p2.string(), mixed_schema(), {}, {"good", "bad"}),
                      Catch::Matchers::ContainsSubstring("unknown class"));
}

TEST_CASE("load_csv skips a declared header row") {
  const auto p = write_temp("ds_header.csv", "age,city,class\n30,york,good\n40,leeds,bad\n");
  csv::Options opt;
  opt.has_header = true;
  const Dataset ds = load_csv(p.string(), mixed_schema(), opt);
  REQUIRE(ds.rows() == 2);
  CHECK(ds.value(0, 0) == 30.0);

  // Written headers survive a round trip when the reader is told about them.
  const fs::path out = fs::temp_directory_path() / "ds_header_out.csv";
  write_csv_file(ds, out.string(), ',', true);
  const Dataset back = load_csv(out.string(), ds.schema(), opt, ds.class_names());
  CHECK(back == ds);
}

TEST_CASE("load_csv splits on blank runs for space-delimited files") {
  const auto p = write_temp("ds_space.csv", "1 a  good\n2  b bad\n");
  csv::Options opt;
  opt.delimiter = ' ';
  const Dataset ds = load_csv(p.string(), mixed_schema(), opt);
  REQUIRE(ds.rows() == 2);
  CHECK(ds.value(1, 0) == 2.0);
}

TEST_CASE("normalize_numeric min-max scales and leaves nominal columns alone") {
  std::vector<FeatureSchema> schema{{"v", FeatureKind::numeric, false, {}, "F1"},
                                    {"k", FeatureKind::nominal, false, {"a", "b"}, "F2"},
                                    {"c", FeatureKind::numeric, false, {}, "F3"}};
  Dataset ds(schema, {"x", "y"});
  ds.add_row({2, 0, 7}, 0);
  ds.add_row({4, 1, 7}, 1);
  ds.add_row({6, 0, 7}, 0);
  const Dataset norm = normalize_numeric(ds);
  CHECK(norm.value(0, 0) == 0.0);
  CHECK(norm.value(1, 0) == 0.5);
  CHECK(norm.value(2, 0) == 1.0);
  CHECK(norm.category(1, 1) == 1);       // nominal untouched
  CHECK(norm.value(0, 2) == 0.0);        // constant column maps to 0
  CHECK(ds.value(0, 0) == 2.0);          // input unchanged
  CHECK(normalize_numeric(norm) == norm);  // idempotent
}

TEST_CASE("stratified_split partitions with per-class proportions") {
  // 700/300 two-class layout.
  std::vector<FeatureSchema> schema{{"v", FeatureKind::numeric, false, {}, "F1"}};
  Dataset ds(schema, {"good", "bad"});
  for (int i = 0; i < 1000; ++i) ds.add_row({static_cast<double>(i)}, i < 700 ? 0 : 1);

  const SplitIndices s = stratified_split(ds, {0.7, 0.2, 0.1}, 7);
  CHECK(s.train.size() == 700);
  CHECK(s.validation.size() == 200);
  CHECK(s.test.size() == 100);

  auto count_class = [&](const std::vector<int>& part, int label) {
    std::size_t k = 0;
    for (int r : part)
      if (ds.labels()[r] == label) ++k;
    return k;
  };
  CHECK(count_class(s.train, 0) == 490);
  CHECK(count_class(s.validation, 0) == 140);
  CHECK(count_class(s.test, 0) == 70);

  // Partition property.
  std::vector<int> all;
  all.insert(all.end(), s.train.begin(), s.train.end());
  all.insert(all.end(), s.validation.begin(), s.validation.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  REQUIRE(all.size() == 1000);
  for (int i = 0; i < 1000; ++i) REQUIRE(all[i] == i);

  // Determinism.
  const SplitIndices s2 = stratified_split(ds, {0.7, 0.2, 0.1}, 7);
  CHECK(s2.train == s.train);
  CHECK(s2.validation == s.validation);
  CHECK(s2.test == s.test);
  const SplitIndices s3 = stratified_split(ds, {0.7, 0.2, 0.1}, 8);
  CHECK(s3.train != s.train);
}

TEST_CASE("stratified_split stratification bound holds on ragged class sizes") {
  std::vector<FeatureSchema> schema{{"v", FeatureKind::numeric, false, {}, "F1"}};
  Dataset ds(schema, {"a", "b", "c"});
  for (int i = 0; i < 37; ++i) ds.add_row({static_cast<double>(i)}, 0);
  for (int i = 0; i < 101; ++i) ds.add_row({static_cast<double>(i)}, 1);
  for (int i = 0; i < 9; ++i) ds.add_row({static_cast<double>(i)}, 2);
  const double n = static_cast<double>(ds.rows());

  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    const SplitIndices s = stratified_split(ds, {0.7, 0.2, 0.1}, seed);
    for (const auto* part : {&s.train, &s.validation, &s.test}) {
      REQUIRE(!part->empty());
      for (int cls = 0; cls < 3; ++cls) {
        double in_part = 0, global = 0;
        for (int r : *part)
          if (ds.labels()[r] == cls) ++in_part;
        for (std::size_t r = 0; r < ds.rows(); ++r)
          if (ds.labels()[r] == cls) ++global;
        const double lhs =
            std::abs(in_part / static_cast<double>(part->size()) - global / n);
        REQUIRE(lhs <= 1.0 / static_cast<double>(part->size()) + 1e-12);
      }
    }
  }
}

TEST_CASE("stratified_split rejects bad fractions and tiny classes") {
  std::vector<FeatureSchema> schema{{"v", FeatureKind::numeric, false, {}, "F1"}};
  Dataset ds(schema, {"a", "b"});
  for (int i = 0; i < 20; ++i) ds.add_row({static_cast<double>(i)}, 0);
  ds.add_row({99.0}, 1);
  ds.add_row({98.0}, 1);

  REQUIRE_THROWS_WITH(stratified_split(ds, {0.5, 0.5, 0.5}, 1),
                      Catch::Matchers::ContainsSubstring("sum to 1"));
  REQUIRE_THROWS_WITH(stratified_split(ds, {0.7, 0.2, 0.1}, 1),
                      Catch::Matchers::ContainsSubstring("'b'"));
}

TEST_CASE("dataset round-trips through CSV") {
  const Dataset ds = oracles::make_toy_dataset(120, 5);
  const fs::path p = fs::temp_directory_path() / "roundtrip.csv";
  write_csv_file(ds, p.string());
  const Dataset back = load_csv(p.string(), ds.schema(), {}, ds.class_names());
  CHECK(back == ds);
}

TEST_CASE("schema sidecar parses kinds, protection flags and ids") {
  const auto p = write_temp("schema.json", R"({
    "features": [
      {"name": "income", "kind": "numeric"},
      {"name": "group", "kind": "nominal", "protected": true, "id": "G"}
    ],
    "classes": ["no", "yes"],
    "positive_class": "yes"
  })");
  const SchemaFile sf = load_schema(p.string());
  REQUIRE(sf.features.size() == 2);
  CHECK(sf.features[0].id_label == "F1");
  CHECK(sf.features[1].id_label == "G");
  CHECK(sf.features[1].is_protected);
  CHECK(sf.features[1].kind == FeatureKind::nominal);
  CHECK(sf.classes == std::vector<std::string>{"no", "yes"});
  CHECK(sf.positive_class == "yes");

  const auto bad = write_temp("schema_bad.json", R"({"features": [{"name":"x","kind":"blob"}]})");
  REQUIRE_THROWS_WITH(load_schema(bad.string()),
                      Catch::Matchers::ContainsSubstring("unknown kind"));
}

TEST_CASE("subsample is a seeded order-preserving row sample") {
  const Dataset ds = oracles::make_toy_dataset(100, 11);
  const Dataset sub = subsample(ds, 40, 3);
  REQUIRE(sub.rows() == 40);
  CHECK(subsample(ds, 40, 3) == sub);
  CHECK(subsample(ds, 0, 3) == ds);
  CHECK(subsample(ds, 1000, 3) == ds);
}
