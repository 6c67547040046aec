#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "kplsvm/kplsvm.hpp"

namespace kplsvm {
namespace {

namespace fs = std::filesystem;

const std::string kCli = KPLSVM_CLI_PATH;
const std::string kData = KPLSVM_DATA_DIR;

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + kCli + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string field(const std::string& out, const std::string& key) {
  const auto at = out.find(key + ": ");
  if (at == std::string::npos) return "";
  const auto start = at + key.size() + 2;
  return out.substr(start, out.find('\n', start) - start);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("kplsvm_cli_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
  const std::string monk3_train = kData + "/monks-3.train.csv";
  const std::string monk3_test = kData + "/monks-3.test.csv";
};

TEST_F(Cli, TrainMonk3ThreePieceWithTestSet) {
  const CliRun r = run("train --data " + monk3_train + " --test " + monk3_test +
                    " --c0 0.125 --taus=-0.4,1 --epsilons=0.5,-3.5 --out " + path("m.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NEAR(std::stod(field(r.out, "test accuracy")), 88.889, 2.0);
  EXPECT_FALSE(field(r.out, "training accuracy").empty());
  EXPECT_FALSE(field(r.out, "support vectors").empty());
  EXPECT_LE(std::stod(field(r.out, "kkt max residual")), 1e-6);
  EXPECT_FALSE(field(r.out, "wall time").empty());
  EXPECT_TRUE(fs::exists(path("m.json")));
}

TEST_F(Cli, EmptyShapeListsRejected) {
  const CliRun r = run("train --data " + monk3_train + " --taus \"\" --epsilons \"\" --out " + path("m.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(path("m.json")));
  EXPECT_EQ(run("train --data " + monk3_train + " --taus 0.1,0.2 --epsilons 0").code, 2);
  EXPECT_EQ(run("train --data " + monk3_train + " --bogus").code, 2);
  EXPECT_EQ(run("").code, 2);
}

TEST_F(Cli, PredictAndEvalMatchLibrary) {
  ASSERT_EQ(run("train --data " + monk3_train + " --kernel rbf --q 4 --c0 16 --out " + path("m.json")).code, 0);
  ASSERT_EQ(run("predict --model " + path("m.json") + " --data " + monk3_test + " --out " + path("p.txt")).code,
            0);
  const TrainedModel m = load_model(path("m.json"));
  const Dataset test = load(monk3_test);
  const Eigen::VectorXd expect = predict(m, test.X);
  std::ifstream in(path("p.txt"));
  std::string line;
  Eigen::Index i = 0;
  while (std::getline(in, line)) {
    ASSERT_LT(i, expect.size());
    EXPECT_EQ(std::stod(line), expect(i++));
  }
  EXPECT_EQ(i, expect.size());

  // same model retrained in-process: the saved file round-trips predictions
  TrainParams p;
  p.kernel = KernelSpec::rbf(4.0);
  p.c0 = 16.0;
  EXPECT_EQ(predict(fit(load(monk3_train), p), test.X), expect);

  const CliRun e = run("eval --model " + path("m.json") + " --data " + monk3_test);
  ASSERT_EQ(e.code, 0);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", evaluate(m, test));
  EXPECT_EQ(field(e.out, "accuracy"), buf);
}

TEST_F(Cli, EvalOnSeparableTrainingData) {
  {
    std::ofstream f(path("sep.csv"));
    f << "1,2,2\n1,3,1\n1,2.5,3\n-1,-2,-2\n-1,-3,-1\n-1,-2.5,-3\n";
  }
  ASSERT_EQ(run("train --data " + path("sep.csv") + " --c0 100 --out " + path("m.json")).code, 0);
  const CliRun e = run("eval --model " + path("m.json") + " --data " + path("sep.csv"));
  EXPECT_EQ(field(e.out, "accuracy"), "100.000");
}

TEST_F(Cli, VerifyFreshModel) {
  ASSERT_EQ(run("train --data " + monk3_train + " --c0 0.5 --taus 0.2,-0.6 --epsilons 1,-2 --out " +
                path("m.json"))
                .code,
            0);
  const CliRun v = run("verify --model " + path("m.json") + " --data " + monk3_train);
  EXPECT_EQ(v.code, 0) << v.out;
  EXPECT_FALSE(field(v.out, "complementarity").empty());
  EXPECT_FALSE(field(v.out, "duality_gap").empty());
  EXPECT_EQ(run("verify --model " + path("m.json") + " --data " + monk3_train + " --tol 1e-300").code, 5);
  // a model checked against data it was not trained on
  {
    std::ifstream in(monk3_train);
    std::ofstream out(path("part.csv"));
    std::string line;
    for (int i = 0; i < 40 && std::getline(in, line); ++i) out << line << '\n';
  }
  EXPECT_EQ(run("verify --model " + path("m.json") + " --data " + path("part.csv")).code, 3);
}

TEST_F(Cli, LossCurve) {
  const CliRun r = run("loss-curve --taus 0.4,0 --epsilons 0,0 --range=-1,1 --step 0.5");
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "u,loss");
  EXPECT_EQ(first, "-1,0.4");
  EXPECT_EQ(run("loss-curve --range=1,0").code, 2);
}

TEST_F(Cli, BenchReplayHasOneRowPerDataset) {
  const std::string root = fs::path(kData).parent_path().string();
  const CliRun r = run("bench --manifest " + root + "/benchmarks/manifest.csv --replay " + root +
                    "/benchmarks/replay_linear.csv --family 3-PL-SVM --no-timing");
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "dataset,family,accuracy,time_s,c0,q,tau1,tau2,eps1,eps2,criterion");
  std::set<std::string> names;
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    names.insert(line.substr(0, line.find(',')));
  }
  EXPECT_EQ(rows, 19);
  EXPECT_EQ(names.size(), 19u);
  // deterministic
  EXPECT_EQ(run("bench --manifest " + root + "/benchmarks/manifest.csv --replay " + root +
                "/benchmarks/replay_linear.csv --family 3-PL-SVM --no-timing")
                .out,
            r.out);
}

TEST_F(Cli, EmptyManifest) {
  { std::ofstream(path("empty.csv")) << "# no datasets\n"; }
  const CliRun r = run("bench --manifest " + path("empty.csv"));
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "dataset,family,accuracy,time_s,c0,q,tau1,tau2,eps1,eps2,criterion\n");
}

TEST_F(Cli, BalanceLogsClassRatio) {
  const CliRun r = run("train --data " + kData + "/haberman.csv --n-train 150 --balance");
  ASSERT_EQ(r.code, 0);
  const Dataset ds = split(load(kData + "/haberman.csv"), 150, 0);
  const auto counts = class_counts(ds.train().y);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", static_cast<double>(counts.positive) / static_cast<double>(counts.negative));
  EXPECT_NE(r.out.find(std::string("p = ") + buf), std::string::npos) << r.out;
}

TEST_F(Cli, SeedFromEnvironment) {
  const std::string args = "train --data " + kData + "/haberman.csv --n-train 150";
  const CliRun a = run(args, "KPLSVM_SEED=7");
  const Dataset ds = split(load(kData + "/haberman.csv"), 150, 7);
  const auto counts = class_counts(ds.train().y);
  EXPECT_EQ(field(a.out, "class counts"),
            "+1 " + std::to_string(counts.positive) + ", -1 " + std::to_string(counts.negative));
  EXPECT_EQ(run(args + " --seed 7").out.substr(0, 40), a.out.substr(0, 40));
  EXPECT_EQ(run(args, "KPLSVM_SEED=oops").code, 2);
}

TEST_F(Cli, ErrorExitCodes) {
  EXPECT_EQ(run("train --data " + path("missing.csv")).code, 3);
  EXPECT_EQ(run("eval --model " + path("missing.json") + " --data " + monk3_test).code, 3);
  ASSERT_EQ(run("train --data " + monk3_train + " --out " + path("m.json")).code, 0);
  std::string text = slurp(path("m.json"));
  text.replace(text.find("\"format_version\": 1"), 19, "\"format_version\": 2");
  { std::ofstream(path("v2.json")) << text; }
  EXPECT_EQ(run("eval --model " + path("v2.json") + " --data " + monk3_test).code, 3);
  { std::ofstream(path("one.csv")) << "1,0.5\n1,0.7\n"; }
  EXPECT_EQ(run("train --data " + path("one.csv")).code, 3);
  // linear loss without class balancing on unbalanced data: the dual is infeasible
  EXPECT_EQ(run("train --data " + kData + "/haberman.csv --no-balance --taus=-1 --epsilons 0").code, 4);
}

}  // namespace
}  // namespace kplsvm
