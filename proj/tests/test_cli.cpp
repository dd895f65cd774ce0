// Drives the uwbrel binary end to end through the shell.

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + UWBREL_CLI_PATH + "\" " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::directory_iterator(dir)) m[e.path().filename().string()] = slurp(e.path());
  return m;
}

int line_count(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root = fs::temp_directory_path() / (std::string("uwbrel_cli_") + info->name());
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "scenario.json") << R"({"preset": "ugv_three_agent", "seed": 7, "duration_s": 6})";
  }
  void TearDown() override { fs::remove_all(root); }

  std::string p(const std::string& name) const { return "\"" + (root / name).string() + "\""; }

  fs::path root;
};

}  // namespace

TEST_F(Cli, UnknownSubcommandExitsOne) {
  EXPECT_EQ(run_cli("bogus").code, 1);
  EXPECT_EQ(run_cli("").code, 1);
}

TEST_F(Cli, MissingInputsExitOne) {
  EXPECT_EQ(run_cli("estimate " + p("nope") + " -o " + p("est")).code, 1);
  EXPECT_EQ(run_cli("simulate " + p("nope.json") + " -o " + p("b")).code, 1);
  EXPECT_EQ(run_cli("simulate " + p("scenario.json")).code, 1);  // -o is required
}

TEST_F(Cli, HelpAndVersionExitZero) {
  EXPECT_EQ(run_cli("--help").code, 0);
  EXPECT_EQ(run_cli("--version").code, 0);
}

TEST_F(Cli, SimulateTwiceIsByteIdentical) {
  ASSERT_EQ(run_cli("simulate " + p("scenario.json") + " -o " + p("a")).code, 0);
  ASSERT_EQ(run_cli("simulate " + p("scenario.json") + " -o " + p("b")).code, 0);
  const auto a = dir_contents(root / "a");
  const auto b = dir_contents(root / "b");
  for (const char* f : {"manifest.json", "poses.csv", "ranges.csv", "envelopes.csv", "messages.csv", "run_meta.json"}) {
    EXPECT_TRUE(a.count(f)) << f;
  }
  EXPECT_EQ(a, b);
  const auto meta = nlohmann::json::parse(a.at("run_meta.json"));
  EXPECT_EQ(meta.at("seed").get<std::uint64_t>(), 7u);
  EXPECT_EQ(meta.at("command"), "simulate");
  EXPECT_TRUE(meta.contains("config_hash"));
  EXPECT_TRUE(meta.contains("versions"));
}

TEST_F(Cli, SeedOverrideChangesRanges) {
  ASSERT_EQ(run_cli("simulate " + p("scenario.json") + " -o " + p("a")).code, 0);
  ASSERT_EQ(run_cli("simulate " + p("scenario.json") + " --seed 8 -o " + p("b")).code, 0);
  EXPECT_NE(slurp(root / "a" / "ranges.csv"), slurp(root / "b" / "ranges.csv"));
}

TEST_F(Cli, FitBiasFromBundle) {
  ASSERT_EQ(run_cli("simulate " + p("scenario.json") + " -o " + p("bundle")).code, 0);
  ASSERT_EQ(run_cli("fit-bias " + p("bundle/ranges.csv") + " --degree 2 -o " + p("bias.json")).code, 0);
  const auto j = nlohmann::json::parse(slurp(root / "bias.json"));
  EXPECT_TRUE(fs::exists(root / "bias.json.run_meta.json"));
  EXPECT_GT(j.at("fit").at("sample_count").get<int>(), 0);
  EXPECT_EQ(run_cli("fit-bias " + p("bundle/ranges.csv") + " --degree -1 -o " + p("x.json")).code, 1);
}

TEST_F(Cli, FitBiasFromSamples) {
  std::ofstream(root / "samples.csv") << "elevation_deg,error_m\n0,0.1\n10,0.1\n20,0.1\n30,0.1\n";
  ASSERT_EQ(run_cli("fit-bias " + p("samples.csv") + " --degree 0 -o " + p("bias.json")).code, 0);
  const auto j = nlohmann::json::parse(slurp(root / "bias.json"));
  EXPECT_NEAR(j.at("fit").at("rms_residual_m").get<double>(), 0.0, 1e-12);
}

TEST_F(Cli, EstimateThenEvaluate) {
  ASSERT_EQ(run_cli("simulate " + p("scenario.json") + " -o " + p("bundle")).code, 0);
  ASSERT_EQ(run_cli("estimate " + p("bundle") + " --estimate-period 0.5 -o " + p("est")).code, 0);
  for (const char* f : {"estimates.csv", "solver.json", "diagnostics.json", "run_meta.json"}) {
    EXPECT_TRUE(fs::exists(root / "est" / f)) << f;
  }
  EXPECT_GT(line_count(slurp(root / "est" / "estimates.csv")), 1);

  const Result s = run_cli("evaluate " + p("est") + " --truth " + p("bundle") + " -o " + p("summary.csv"));
  ASSERT_EQ(s.code, 0);
  EXPECT_NE(s.out.find("APE mean"), std::string::npos);
  EXPECT_TRUE(fs::exists(root / "summary.csv.run_meta.json"));

  const Result a = run_cli("evaluate " + p("est") + " --truth " + p("bundle") +
                           " --ablation --jobs 2 --estimate-period 0.5 -o " + p("ablation.csv"));
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(line_count(slurp(root / "ablation.csv")), 9);  // header + 8 rows
}

TEST_F(Cli, EstimateFlagOverridesReachSolverJson) {
  ASSERT_EQ(run_cli("simulate " + p("scenario.json") + " --duration 2 -o " + p("bundle")).code, 0);
  ASSERT_EQ(run_cli("estimate " + p("bundle") + " --no-el-bias --no-huber --estimate-period 1 -o " + p("est")).code, 0);
  const auto j = nlohmann::json::parse(slurp(root / "est" / "solver.json"));
  EXPECT_EQ(j.dump().find("\"el_bias\":true"), std::string::npos);
  EXPECT_NE(j.dump().find("\"el_bias\":false"), std::string::npos);
  EXPECT_EQ(run_cli("estimate " + p("bundle") + " --estimate-period -1 -o " + p("est2")).code, 1);
}

TEST_F(Cli, DopReportsTetrahedron) {
  std::ofstream(root / "array.json") << R"({"mounts": [
    {"x": 1, "y": 1, "z": 1, "roll": 0, "pitch": 0, "yaw": 0},
    {"x": 1, "y": -1, "z": -1, "roll": 0, "pitch": 0, "yaw": 0},
    {"x": -1, "y": 1, "z": -1, "roll": 0, "pitch": 0, "yaw": 0},
    {"x": -1, "y": -1, "z": 1, "roll": 0, "pitch": 0, "yaw": 0}]})";
  const Result r = run_cli("dop " + p("array.json") + " --target 0,0,0");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j.at("position_dop").get<double>(), 1.5, 1e-9);
  EXPECT_FALSE(j.at("degenerate").get<bool>());
  EXPECT_FALSE(fs::exists(root / "array.json.run_meta.json"));

  ASSERT_EQ(run_cli("dop " + p("array.json") + " --target 0,0,0 -o " + p("dop.json")).code, 0);
  EXPECT_TRUE(fs::exists(root / "dop.json"));
  EXPECT_TRUE(fs::exists(root / "dop.json.run_meta.json"));
  EXPECT_EQ(run_cli("dop " + p("array.json") + " --target 0,0").code, 1);
}
