#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ebpmse/io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

struct ScratchDir {
  fs::path path = fs::temp_directory_path() / ("ebpmse_cli_test_" + std::to_string(::getpid()));
  ScratchDir() { fs::create_directories(path); }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

const fs::path& scratch() {
  static const ScratchDir dir;
  return dir.path;
}

// Runs the CLI through the shell; stdout goes to a file, stderr is dropped.
Run cli(const std::string& args, const std::string& env = "") {
  const auto out = scratch() / "stdout.txt";
  const std::string cmd = env + " " + EBPMSE_CLI + " " + args + " > " + out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::stringstream s;
  s << in.rdbuf();
  r.out = s.str();
  return r;
}

std::string write_file(const std::string& name, const std::string& text) {
  const auto p = scratch() / name;
  std::ofstream(p) << text;
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

const std::string& sample_csv() {
  static const std::string path = [] {
    const auto d = testing_support::simulate_dataset(12, 5, 30, 0.4, 0.3, 77);
    std::ostringstream s;
    ebpmse::write_dataset(s, d);
    return write_file("sample.csv", s.str());
  }();
  return path;
}

const std::string& informative_csv() {
  static const std::string path = [] {
    const auto d = testing_support::informative_with_population(24, 40, 0.6, 78, {{3, 3, 3}, {5, 10, 15}}).first;
    std::ostringstream s;
    ebpmse::write_dataset(s, d);
    return write_file("informative.csv", s.str());
  }();
  return path;
}

}  // namespace

TEST(Cli, CommandsAreByteIdenticalUnderRepeatsAndThreads) {
  const std::string in = " -i " + sample_csv();
  for (const std::string args : {"fit" + in, "predict -L 100 -p mean gini --seed 4" + in,
                                  "mse -L 100 -B 8 --seed 4 --standard -p mean pg" + in,
                                  "ci -L 200 -B 8 --seed 4 -p q25" + in,
                                  "mse -L 100 -B 6 --seed 4 --format jsonl --pipeline informative -i " + informative_csv()}) {
    const auto a = cli(args, "EBPMSE_THREADS=1");
    const auto b = cli(args, "EBPMSE_THREADS=1");
    const auto c = cli(args, "EBPMSE_THREADS=8");
    ASSERT_EQ(a.code, 0) << args;
    EXPECT_FALSE(a.out.empty()) << args;
    EXPECT_EQ(a.out, b.out) << args;
    EXPECT_EQ(a.out, c.out) << args;
  }
}

TEST(Cli, SeedChangesDraws) {
  const std::string args = "predict -L 100 -i " + sample_csv();
  EXPECT_NE(cli(args + " --seed 1").out, cli(args + " --seed 2").out);
}

TEST(Cli, SimulateIsByteIdenticalUnderThreads) {
  const auto one = scratch() / "sim1", eight = scratch() / "sim8";
  const std::string args = " --design informative -D 18 -M 2 -L 200 -B 4 -p mean pg --seed 3";
  const auto cfg = write_file("sim.ini", "[simulate]\nN_i = 30\nareas_selected = 3, 3, 3\n");
  ASSERT_EQ(cli("simulate -c " + cfg + " --outdir " + one.string() + args, "EBPMSE_THREADS=1").code, 0);
  ASSERT_EQ(cli("simulate -c " + cfg + " --outdir " + eight.string() + args, "EBPMSE_THREADS=8").code, 0);
  for (const char* f : {"rb.csv", "ecp.csv", "ecp_area.csv", "tstat.csv", "summary.csv", "ecp_sampled.svg",
                        "ecp_nonsampled.svg"}) {
    ASSERT_TRUE(fs::exists(one / f)) << f;
    EXPECT_EQ(slurp(one / f), slurp(eight / f)) << f;
  }
  const auto rb = slurp(one / "rb.csv");
  EXPECT_EQ(rb.rfind("scenario,domain,parameter,method,rb\n", 0), 0u);
  const auto conv = cli("report -i " + (one / "ecp_area.csv").string() + " --format jsonl --svg " +
                        (scratch() / "box.svg").string() + " --level 0.95");
  EXPECT_EQ(conv.code, 0);
  EXPECT_NE(conv.out.find("\"area_id\""), std::string::npos);
  for (const char* f : {"box_sampled.svg", "box_nonsampled.svg"}) EXPECT_EQ(slurp(scratch() / f).rfind("<svg", 0), 0u);
}

TEST(Cli, ValidationErrorsExitTwo) {
  const auto bad_header = write_file("bad.csv", "area,unit_id,y,x_1\n1,1,2,1\n");
  const auto dup = write_file("dup.csv", "area_id,unit_id,y,x_1\n1,1,2,1\n1,1,3,1\n");
  const auto unknown = write_file("unknown.ini", "[run]\nsede = 3\n");
  EXPECT_EQ(cli("fit -i " + bad_header).code, 2);
  EXPECT_EQ(cli("fit -i " + dup).code, 2);
  EXPECT_EQ(cli("fit -i /nonexistent/file.csv").code, 2);
  EXPECT_EQ(cli("predict -L 1 -i " + sample_csv()).code, 2);
  EXPECT_EQ(cli("predict --areas 999 -i " + sample_csv()).code, 2);
  EXPECT_EQ(cli("ci -L 100 -B 4 -i " + sample_csv()).code, 2);
  EXPECT_EQ(cli("fit -c " + unknown + " -i " + sample_csv()).code, 2);
  EXPECT_EQ(cli("fit --bogus -i " + sample_csv()).code, 2);
  EXPECT_EQ(cli("predict -p median -i " + sample_csv()).code, 2);
  EXPECT_EQ(cli("").code, 2);
}

TEST(Cli, NumericalFailureExitsThree) {
  const auto collinear =
      write_file("collinear.csv", "area_id,unit_id,y,x_1,x_2\n1,1,5,1,2\n1,2,5.1,1,2\n1,3,,1,2\n"
                                  "2,1,5.2,1,2\n2,2,5.3,1,2\n2,3,,1,2\n");
  EXPECT_EQ(cli("fit -i " + collinear).code, 3);
}

TEST(Cli, InfinityReachesTheReport) {
  const auto c = testing_support::pg_degenerate_case(200, 4, 11);
  std::ostringstream s;
  ebpmse::write_dataset(s, c.data);
  const auto path = write_file("pg.csv", s.str());
  const auto id = c.data.area(c.area).id;
  const auto r = cli("mse -L 200 -B 4 --seed 11 -p pg:" + ebpmse::format_double(c.z) + " --areas " +
                     std::to_string(id) + " -i " + path);
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(",Inf,"), std::string::npos) << r.out;
}
