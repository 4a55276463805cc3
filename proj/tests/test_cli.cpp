#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("adg_cli_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  // Exit status of adg_cli with the output directory pointed at dir_/out.
  int run(const std::string& args) const {
    const std::string cmd = "ADG_OUTPUT_DIR='" + (dir_ / "out").string() + "' '" ADG_CLI_PATH "' " +
                            args + " > '" + (dir_ / "stdout.txt").string() + "' 2> '" +
                            (dir_ / "stderr.txt").string() + "'";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const std::string& name) const {
    std::ifstream f(dir_ / name);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

const char* kClassification =
    "[run]\n"
    "algorithm = adg_bc\n"
    "m = 2\n"
    "max_epochs = 3\n"
    "[data]\n"
    "n = 200\n"
    "d = 5\n";

}  // namespace

TEST_F(CliTest, RunWritesArtifactsAndExitsZero) {
  const auto cfg = write("ok.cfg", kClassification);
  EXPECT_EQ(run("run '" + cfg.string() + "'"), 0) << slurp("stderr.txt");
  for (const char* name : {"metrics.csv", "summary.csv", "trace.jsonl", "model.txt", "config.txt"}) {
    EXPECT_TRUE(fs::exists(dir_ / "out" / name)) << name;
  }
  std::ifstream metrics(dir_ / "out" / "metrics.csv");
  std::string header;
  std::getline(metrics, header);
  EXPECT_EQ(header,
            "wall_seconds,logical_tick,epoch,train_objective,validation_objective,"
            "test_rmse_or_accuracy,comm_sends,comm_time");
  EXPECT_NE(slurp("stdout.txt").find("adg_bc"), std::string::npos);
}

TEST_F(CliTest, OverridesApplyBeforeValidation) {
  const auto cfg = write("ok.cfg", kClassification);
  EXPECT_EQ(run("validate-config '" + cfg.string() + "' --override run.m=3"), 0);
  EXPECT_NE(slurp("stdout.txt").find("m = 3"), std::string::npos);
  EXPECT_EQ(run("validate-config '" + cfg.string() + "' --override run.m=0"), 2);
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
  const auto bad = write("bad.cfg", "[run]\nno_such_key = 1\n");
  EXPECT_EQ(run("validate-config '" + bad.string() + "'"), 2);
  EXPECT_NE(slurp("stderr.txt").find("no_such_key"), std::string::npos);
  EXPECT_EQ(run("run '" + (dir_ / "missing.cfg").string() + "'"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run(""), 2);
}

TEST_F(CliTest, DataErrorsExitFour) {
  const auto data = write("broken.svm", "+1 1:0.5\n+1 2:abc\n");
  const auto cfg = write("file.cfg", "[run]\nalgorithm = adg_bc\n[data]\nkind = libsvm\npath = " +
                                         data.string() + "\n");
  EXPECT_EQ(run("run '" + cfg.string() + "'"), 4);
  EXPECT_NE(slurp("stderr.txt").find("line 2"), std::string::npos) << slurp("stderr.txt");
}

TEST_F(CliTest, DivergenceExitsThree) {
  const auto cfg = write("diverge.cfg",
                         "[run]\nalgorithm = plain_gradient\nm = 2\nmax_epochs = 2000\n"
                         "[data]\nkind = quadratic\n[optim]\ngamma = 1000\n");
  EXPECT_EQ(run("run '" + cfg.string() + "'"), 3) << slurp("stderr.txt");
}

TEST_F(CliTest, SpeedupWritesOneRowPerCount) {
  const auto cfg = write("ok.cfg", kClassification);
  EXPECT_EQ(run("speedup '" + cfg.string() + "' --workers 1,2"), 0) << slurp("stderr.txt");
  std::ifstream f(dir_ / "out" / "speedup.csv");
  std::string line;
  int lines = 0;
  while (std::getline(f, line)) ++lines;
  EXPECT_EQ(lines, 3);
}
