#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "rdpp/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(RDPP_CLI) + " " + args + " 2>/dev/null";
  RunResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    return result;
  }
  std::array<char, 4096> buffer{};
  std::size_t got = 0;
  while ((got = fread(buffer.data(), 1, buffer.size(), pipe)) > 0) {
    result.out.append(buffer.data(), got);
  }
  const int status = pclose(pipe);
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("rdpp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& contents) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << contents;
    return p.string();
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string gaussian_csv(const std::string& name, int n, int d, std::uint64_t seed) {
    rdpp::Rng rng(seed);
    std::ostringstream csv;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) {
        csv << (j ? "," : "") << rng.normal();
      }
      csv << '\n';
    }
    return write(name, csv.str());
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, PreprocessThreeByTwo) {
  const auto input = write("x.csv", "1,0\n0,1\n1,1\n");
  const auto r = run("preprocess --input " + input + " --state " + path("x.state") + " --mode exact");
  ASSERT_EQ(r.code, 0) << r.out;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["s_tilde"].get<double>(), 1.25, 1e-12);
  EXPECT_EQ(j["q"], 5);
  EXPECT_EQ(j["n"], 3);
  EXPECT_EQ(j["d"], 2);
  EXPECT_EQ(j["mode"], "exact");
  EXPECT_TRUE(j.contains("wall_ms"));
  EXPECT_TRUE(fs::exists(path("x.state")));
}

TEST_F(Cli, PreprocessIdentityMatrixMarket) {
  const auto input = write("i.mtx", "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n2 2 1\n");
  const auto r = run("preprocess --input " + input + " --state " + path("i.state"));
  ASSERT_EQ(r.code, 0) << r.out;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["s_tilde"].get<double>(), 1.0, 1e-12);
  EXPECT_EQ(j["q"], 4);
}

TEST_F(Cli, MissingFileIsExitTwo) {
  const auto r = run("preprocess --input " + path("nope.csv") + " --state " + path("s"));
  EXPECT_EQ(r.code, 2);
  const json j = json::parse(r.out);
  EXPECT_TRUE(j.contains("error"));
  EXPECT_EQ(j["kind"], "format");
}

TEST_F(Cli, UnknownFlagIsUsageError) {
  const auto r = run("preprocess --bogus");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.out)["kind"], "usage");
}

TEST_F(Cli, SampleIsDeterministic) {
  const auto input = gaussian_csv("g.csv", 10, 3, 1);
  ASSERT_EQ(run("preprocess --input " + input + " --state " + path("g.state")).code, 0);
  const std::string base = "sample --input " + input + " --state " + path("g.state") + " --num 300 --seed 9";
  const auto a = run(base);
  const auto b = run(base);
  const auto c = run(base + " --threads 3");
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out, c.out);
  std::istringstream lines(a.out);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const json j = json::parse(line);
    EXPECT_TRUE(j["subset"].is_array());
    EXPECT_GE(j["outer_iters"].get<int>(), 1);
    EXPECT_FALSE(j.contains("wall_us"));
    ++count;
  }
  EXPECT_EQ(count, 300);
  const auto other = run("sample --input " + input + " --state " + path("g.state") + " --num 300 --seed 10");
  EXPECT_NE(a.out, other.out);
}

TEST_F(Cli, SampleTimingAddsWallClock) {
  const auto input = write("x.csv", "1,0\n0,1\n1,1\n");
  ASSERT_EQ(run("preprocess --input " + input + " --state " + path("x.state")).code, 0);
  const auto r = run("sample --input " + input + " --state " + path("x.state") + " --num 1 --timing");
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(json::parse(r.out).contains("wall_us"));
}

TEST_F(Cli, SampleZeroIsUsageError) {
  const auto input = write("x.csv", "1,0\n0,1\n1,1\n");
  ASSERT_EQ(run("preprocess --input " + input + " --state " + path("x.state")).code, 0);
  const auto r = run("sample --input " + input + " --state " + path("x.state") + " --num 0");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.out)["kind"], "usage");
}

TEST_F(Cli, SampleRejectsMismatchedMatrix) {
  const auto input = write("x.csv", "1,0\n0,1\n1,1\n");
  const auto other = write("y.csv", "1,0\n0,1\n");
  ASSERT_EQ(run("preprocess --input " + input + " --state " + path("x.state")).code, 0);
  const auto r = run("sample --input " + other + " --state " + path("x.state") + " --num 2");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(json::parse(r.out)["error"].get<std::string>().find("mismatch"), std::string::npos);
}

TEST_F(Cli, CorruptedScoresAreDetected) {
  const auto input = write("x.csv", "1,0\n0,1\n1,1\n");
  ASSERT_EQ(run("preprocess --input " + input + " --state " + path("x.state")).code, 0);
  std::string bytes;
  {
    std::ifstream in(path("x.state"), std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  // l_tilde follows the 5-byte preamble, six header fields and the 2x2 A
  const std::size_t offset = 5 + 6 * 8 + 4 * 8;
  for (std::size_t i = 0; i < 3; ++i) {
    double v = 0.0;
    std::memcpy(&v, bytes.data() + offset + 8 * i, 8);
    v *= 4.0;
    std::memcpy(bytes.data() + offset + 8 * i, &v, 8);
  }
  std::ofstream(path("bad.state"), std::ios::binary) << bytes;
  const auto r = run("sample --input " + input + " --state " + path("bad.state") + " --num 5");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(json::parse(r.out)["error"].get<std::string>().find("l_tilde"), std::string::npos);
}

TEST_F(Cli, CalibrateIdentity) {
  const auto input = write("i.csv", "1,0\n0,1\n");
  ASSERT_EQ(run("preprocess --input " + input + " --state " + path("i.state")).code, 0);
  const auto r = run("calibrate --state " + path("i.state") + " --target-size 1.5");
  ASSERT_EQ(r.code, 0) << r.out;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["alpha"].get<double>(), 1.7320508, 1e-6);
  EXPECT_NEAR(j["achieved_expected_size"].get<double>(), 1.5, 1e-6);
  const auto one = json::parse(run("calibrate --state " + path("i.state") + " --target-size 1").out);
  EXPECT_NEAR(one["alpha"].get<double>(), 1.0, 1e-6);
  EXPECT_EQ(run("calibrate --state " + path("i.state") + " --target-size 2").code, 2);
}

TEST_F(Cli, ValidateRefusesLargeInput) {
  const auto input = gaussian_csv("big.csv", 13, 2, 2);
  const auto r = run("validate --input " + input);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(json::parse(r.out)["error"].get<std::string>().find("too large"), std::string::npos);
}

TEST_F(Cli, ValidateExactGaussian) {
  const auto input = gaussian_csv("g.csv", 8, 3, 3);
  const auto r = run("validate --input " + input + " --mode exact --seed 4");
  const json j = json::parse(r.out);
  for (const auto& c : j["checks"]) {
    EXPECT_TRUE(c["passed"].get<bool>()) << c.dump();
  }
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(j["checks"].size(), 9U);
}

TEST_F(Cli, ValidateSketchedRelaxesThreshold) {
  const auto input = gaussian_csv("g.csv", 6, 2, 5);
  const auto r = run("validate --input " + input + " --mode sketched --epsilon 0.5 --seed 6 --num 50000");
  const json j = json::parse(r.out);
  ASSERT_TRUE(j.contains("checks")) << r.out;
  for (const auto& c : j["checks"]) {
    if (c["name"] == "dpp_tv") {
      EXPECT_NEAR(c["threshold"].get<double>(), 0.52, 1e-12);
      EXPECT_TRUE(c["passed"].get<bool>()) << c.dump();
    }
  }
}

TEST_F(Cli, BenchSmall) {
  const auto r = run(
      "bench --d 4 --n-small 500 --n-large 1000 --draws 20 --repeats 1 --sparse-n 2000 --nnz-per-row 1");
  ASSERT_EQ(r.code, 0) << r.out;
  const json j = json::parse(r.out);
  EXPECT_GT(j["n_independence_ratio"].get<double>(), 0.0);
  EXPECT_GT(j["nnz_scaling_ratio"].get<double>(), 0.0);
  EXPECT_EQ(j["nnz_large"].get<std::size_t>(), 2 * j["nnz_small"].get<std::size_t>());
}
