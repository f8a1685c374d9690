#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "ebpmse/io.hpp"
#include "ebpmse/ner_model.hpp"
#include "ebpmse/report.hpp"
#include "support.hpp"

using namespace ebpmse;

namespace {

const char* kMinimal =
    "area_id,unit_id,y,x_1,x_2\n"
    "1,1,5.25,1,0.5\n"
    "1,2,,1,1.5\n"
    "2,1,4.75,1,2\n"
    "2,2,,1,-0.25\n";

std::string dataset_text(const SampleDataset& d) {
  std::ostringstream s;
  write_dataset(s, d);
  return s.str();
}

SampleDataset from_text(const std::string& text) {
  std::istringstream in(text);
  return ingest(in);
}

std::string error_of(const std::string& text) {
  try {
    from_text(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

MseReport sample_report(bool infinite) {
  MseReport r;
  if (infinite) {
    r = {3, "pg", 0.25, 0.5, 0.125, 0.0, 0.5, 0.625, 1.125, kInf, 1.125, 0.625,
         std::numeric_limits<double>::quiet_NaN(), false, true, 200};
  } else {
    r = {12, "mean", 5.5, 0.01, 0.002, 0.0125, -0.0025, 0.012, 0.0095, 0.008, 0.009, 0.0095, 0.013, false, false, 200};
  }
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Format, ShortestRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125, 5e-324}) {
    const auto s = format_double(v);
    EXPECT_EQ(*parse_double(s), v) << s;
  }
  EXPECT_EQ(format_double(kInf), "Inf");
  EXPECT_EQ(format_double(-kInf), "-Inf");
  EXPECT_EQ(format_double(std::nan("")), "");
  EXPECT_TRUE(std::isinf(*parse_double("Inf")));
  EXPECT_FALSE(parse_double("1.5x"));
  EXPECT_FALSE(parse_double(""));
  EXPECT_FALSE(parse_integer("7.0"));
}

TEST(Csv, SplitKeepsEmptyFields) {
  using detail::split_csv;
  EXPECT_EQ(split_csv("a,b,").size(), 3u);
  EXPECT_EQ(split_csv("a,,b").size(), 3u);
  EXPECT_EQ(split_csv(",").size(), 2u);
  const auto q = split_csv("1,\"x,y\",");
  ASSERT_EQ(q.size(), 3u);
  EXPECT_EQ(q[1], "x,y");
}

TEST(Ingest, MinimalFileRoundTrips) {
  const auto d = from_text(kMinimal);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.area(0).n(), 1);
  EXPECT_EQ(d.area(0).N(), 2);
  const auto text = dataset_text(d);
  const auto back = from_text(text);
  EXPECT_TRUE(back == d);
  EXPECT_EQ(back.to_records(), d.to_records());
  EXPECT_EQ(dataset_text(back), text);
}

TEST(Ingest, RoundTripIsFieldExactForRandomData) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto [d, pop] = testing_support::informative_with_population(
        30, 40, 0.3 * (1.0 + static_cast<double>(seed) / 2), seed, {{4, 4, 4}, {5, 10, 15}});
    const auto back = from_text(dataset_text(d));
    EXPECT_TRUE(back == d);
    EXPECT_EQ(back.to_records(), d.to_records());
  }
}

TEST(Ingest, ReingestedDatasetGivesIdenticalFit) {
  const auto d = testing_support::simulate_dataset(20, 5, 50, 0.3, 0.3, 41, 2.5);
  const auto back = from_text(dataset_text(d));
  const auto a = fit_ml(d);
  const auto b = fit_ml(back);
  for (Eigen::Index k = 0; k < a.params.beta.size(); ++k) EXPECT_NEAR(a.params.beta(k), b.params.beta(k), 1e-12);
  EXPECT_NEAR(a.params.sigma2_u, b.params.sigma2_u, 1e-12);
  EXPECT_NEAR(a.params.sigma2_e, b.params.sigma2_e, 1e-12);
  EXPECT_NEAR(a.loglik, b.loglik, 1e-12);
}

TEST(Ingest, DuplicateUnitNamesRow) {
  const auto msg = error_of("area_id,unit_id,y,x_1\n1,1,2,1\n1,2,3,1\n1,1,,1\n");
  EXPECT_NE(msg.find("row 4"), std::string::npos) << msg;
  EXPECT_NE(msg.find("duplicate"), std::string::npos) << msg;
}

TEST(Ingest, NegativeWeightRejected) {
  const auto msg = error_of("area_id,unit_id,y,x_1,w_unit\n1,1,2,1,-3\n");
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("w_unit"), std::string::npos) << msg;
  EXPECT_NE(error_of("area_id,unit_id,y,x_1,w_area\n1,1,2,1,0\n").find("w_area"), std::string::npos);
}

TEST(Ingest, SchemaViolationsNameTheRow) {
  EXPECT_NE(error_of("area_id,unit_id,y,x_1\n1,1,abc,1\n").find("row 2"), std::string::npos);
  EXPECT_NE(error_of("area_id,unit_id,y,x_1\n1,1,1,1\n2,1,1\n").find("row 3"), std::string::npos);
  EXPECT_NE(error_of("area_id,unit_id,y,x_1\n1,1,1,\n").find("x_1 is missing"), std::string::npos);
  EXPECT_NE(error_of("area_id,unit_id,y,x_1,is_sampled\n1,1,,1,1\n").find("sampled unit without y"),
            std::string::npos);
  EXPECT_NE(error_of("area_id,unit_id,y\n1,1,1\n").find("x_1"), std::string::npos);
  EXPECT_NE(error_of("area_id,unit_id,y,x_1,x_3\n1,1,1,1,1\n").find("x_3"), std::string::npos);
  EXPECT_NE(error_of("area_id,unit_id,y,x_1,colour\n1,1,1,1,1\n").find("colour"), std::string::npos);
  EXPECT_NE(error_of("").find("empty"), std::string::npos);
}

TEST(Ingest, MissingPopulationAreaIsNamed) {
  const auto d = from_text(kMinimal);
  try {
    require_areas(d, {1, 7});
    FAIL() << "expected an error";
  } catch (const MissingPopulationError& e) {
    EXPECT_EQ(e.area_id(), 7);
    EXPECT_NE(std::string(e.what()).find("area 7"), std::string::npos);
  }
  EXPECT_EQ(select_areas(d, {2}).size(), 1u);
}

TEST(Emit, GoldenColumnOrder) {
  std::ostringstream out;
  emit(out, mse_table({sample_report(true), sample_report(false)}), ReportFormat::kCsv);
  EXPECT_EQ(out.str(), slurp(std::string(EBPMSE_SOURCE_DIR) + "/tests/golden/mse_table.csv"));
}

TEST(Emit, InfinityIsLiteralInf) {
  std::ostringstream csv, jsonl;
  const auto t = mse_table({sample_report(true)});
  emit(csv, t, ReportFormat::kCsv);
  emit(jsonl, t, ReportFormat::kJsonLines);
  EXPECT_NE(csv.str().find(",Inf,"), std::string::npos);
  const auto j = nlohmann::json::parse(jsonl.str());
  EXPECT_EQ(j["mse_mult"], "Inf");
  EXPECT_TRUE(j["mse_standard"].is_null());
  EXPECT_EQ(j["infinite_mult"], true);
}

TEST(Emit, JsonLinesKeepColumnOrder) {
  std::ostringstream out;
  emit(out, mse_table({sample_report(false)}), ReportFormat::kJsonLines);
  const std::string line = out.str();
  EXPECT_LT(line.find("\"area_id\""), line.find("\"parameter\""));
  EXPECT_LT(line.find("\"mse_hm\""), line.find("\"replicates\""));
  EXPECT_EQ(std::count(line.begin(), line.end(), '\n'), 1);
}

TEST(Emit, EmptyReportIsHeaderOnly) {
  std::ostringstream csv, jsonl;
  emit(csv, mse_table({}), ReportFormat::kCsv);
  emit(jsonl, mse_table({}), ReportFormat::kJsonLines);
  const auto golden = slurp(std::string(EBPMSE_SOURCE_DIR) + "/tests/golden/mse_table.csv");
  EXPECT_EQ(csv.str(), golden.substr(0, golden.find('\n') + 1));
  EXPECT_EQ(jsonl.str(), "");
}

TEST(Emit, UnwritablePathFails) {
  EXPECT_THROW(emit("/nonexistent-dir/x.csv", mse_table({}), ReportFormat::kCsv), ValidationError);
}

TEST(Emit, ReadTableInvertsEmit) {
  std::ostringstream out;
  const auto t = mse_table({sample_report(true), sample_report(false)});
  emit(out, t, ReportFormat::kCsv);
  std::istringstream in(out.str());
  const auto back = read_table(in);
  EXPECT_EQ(back.columns, t.columns);
  ASSERT_EQ(back.rows.size(), 2u);
  std::ostringstream again;
  emit(again, back, ReportFormat::kCsv);
  EXPECT_EQ(again.str(), out.str());
}

TEST(ConfigFile, SectionsAndValidation) {
  const auto c = Config::parse("[run]\nseed = 7\nlevels = 0.9, 0.95\nstandard = yes\n[simulate]\nr_sigma=2\n");
  EXPECT_EQ(*c.get_integer("run", "seed"), 7);
  EXPECT_EQ(parse_double_list(*c.get_list("run", "levels"), "levels"), (std::vector<double>{0.9, 0.95}));
  EXPECT_TRUE(*c.get_bool("run", "standard"));
  EXPECT_EQ(*c.get_double("simulate", "r_sigma"), 2.0);
  EXPECT_FALSE(c.get("run", "L"));
  const std::map<std::string, std::set<std::string>> known{{"run", {"seed", "levels", "standard"}},
                                                           {"simulate", {"r_sigma"}}};
  EXPECT_NO_THROW(c.check_known(known));
  EXPECT_THROW(Config::parse("[run]\nsede = 1\n").check_known(known), ValidationError);
  EXPECT_THROW(Config::parse("[other]\nseed = 1\n").check_known(known), ValidationError);
  EXPECT_THROW(Config::parse("seed = 1\n").check_known(known), ValidationError);
  EXPECT_THROW(Config::parse("[run]\nseed = x\n").get_integer("run", "seed"), ValidationError);
}
