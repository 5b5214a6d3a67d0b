#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(GRASSFLOW_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string capture(const std::string& args) {
  const fs::path out = fs::temp_directory_path() / "grassflow_cli_test" / "stderr.txt";
  const std::string cmd = std::string(GRASSFLOW_CLI) + " " + args + " >/dev/null 2>" + out.string();
  if (std::system(cmd.c_str()) == -1) return "";
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path dir() {
  const fs::path d = fs::temp_directory_path() / "grassflow_cli_test";
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("gen-data --solver euler"), 2);
}

TEST(Cli, GenDataWritesCsvAndRejectsBogusNames) {
  const fs::path out = dir() / "spirals.csv";
  ASSERT_EQ(run("gen-data --seed 4 --set data.n=50 --out " + out.string()), 0);
  std::ifstream in(out);
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 51);
  EXPECT_TRUE(fs::exists(out.string() + ".meta.json"));

  EXPECT_EQ(run("gen-data --set data.name=bogus --out " + out.string()), 2);
  EXPECT_NE(capture("gen-data --set data.name=bogus --out " + out.string()).find("swissroll"), std::string::npos);
}

TEST(Cli, ConfigErrorsExitTwo) {
  const fs::path cfg = dir() / "bad.cfg";
  std::ofstream(cfg) << "[train]\nlearning_rate = 3\n";
  EXPECT_EQ(run("train --config " + cfg.string() + " --out " + (dir() / "r").string()), 2);

  const fs::path missing = dir() / "cfg_missing_data.cfg";
  std::ofstream(missing) << "data.name = csv\ndata.path = nowhere.csv\ndata.dim = 4\ndata.rank = 2\n";
  EXPECT_EQ(run("train --config " + missing.string() + " --out " + (dir() / "r").string()), 2);
  EXPECT_NE(capture("train --config " + missing.string()).find("nowhere.csv"), std::string::npos);
}

TEST(Cli, TrainZeroEpochsThenSampleAndGrid) {
  const fs::path run_dir = dir() / "zero";
  fs::remove_all(run_dir);
  ASSERT_EQ(run("train --set train.epochs=0 --set model.widths=3,8,1 --out " + run_dir.string()), 0);
  const fs::path ckpt = run_dir / "last.json";
  ASSERT_TRUE(fs::exists(ckpt));

  const fs::path samples = dir() / "none.csv";
  ASSERT_EQ(run("sample --checkpoint " + ckpt.string() + " -n 0 --out " + samples.string()), 0);
  std::ifstream in(samples);
  std::string header, extra;
  std::getline(in, header);
  EXPECT_EQ(header, "y0_0,y1_0,y2_0");
  EXPECT_FALSE(std::getline(in, extra));

  const fs::path grid = dir() / "grid";
  ASSERT_EQ(run("density-grid --resolution 4 --checkpoint " + ckpt.string() + " --out " + grid.string()), 0);
  EXPECT_TRUE(fs::exists(grid.string() + ".csv"));
  EXPECT_TRUE(fs::exists(grid.string() + ".ppm"));

  ASSERT_EQ(run("eval --checkpoint " + ckpt.string() + " --data " + samples.string()), 1);  // empty dataset
  EXPECT_EQ(run("eval --checkpoint " + ckpt.string() + " --data " + (dir() / "absent.csv").string()), 2);
  EXPECT_EQ(run("sample --checkpoint " + (dir() / "absent.json").string() + " -n 3 --out " + samples.string()), 1);
}
