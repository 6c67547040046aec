#include "kplsvm/data.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

namespace kplsvm {
namespace {

const std::string kData = KPLSVM_DATA_DIR;

Dataset parse(const std::string& text, LoadOptions opt = {}) {
  std::istringstream in(text);
  return opt.format == DataFormat::csv ? parse_csv(in, opt, "inline")
                                       : parse_libsvm(in, "inline");
}

TEST(Data, CsvLabelFirst) {
  const Dataset ds = parse("1,0.5,0.5\n-1,0,1\n");
  ASSERT_EQ(ds.rows(), 2);
  ASSERT_EQ(ds.cols(), 2);
  EXPECT_EQ(ds.y, (Eigen::VectorXd(2) << 1, -1).finished());
  EXPECT_EQ(ds.X(1, 1), 1.0);
}

TEST(Data, CsvLabelColumnAndHeader) {
  LoadOptions opt;
  opt.label_column = -1;
  const Dataset ds = parse("a,b,class\n0.1,0.2,yes\n0.3,0.4,no\n0.5,0.6,yes\n", opt);
  ASSERT_EQ(ds.rows(), 3);
  // "no" < "yes" lexicographically, so "no" becomes -1
  EXPECT_EQ(ds.y, (Eigen::VectorXd(3) << 1, -1, 1).finished());
  EXPECT_EQ(ds.X(2, 0), 0.5);
}

TEST(Data, NumericLabelConventions) {
  EXPECT_EQ(parse("0,1\n1,2\n").y, (Eigen::VectorXd(2) << -1, 1).finished());
  EXPECT_EQ(parse("2,1\n1,2\n").y, (Eigen::VectorXd(2) << 1, -1).finished());
  // numeric, not lexicographic: 10 > 9
  EXPECT_EQ(parse("10,1\n9,2\n").y, (Eigen::VectorXd(2) << 1, -1).finished());
}

TEST(Data, LibsvmSparseToDense) {
  LoadOptions opt;
  opt.format = DataFormat::libsvm;
  const Dataset ds = parse("1 1:0.5 3:2\n-1 2:1\n", opt);
  ASSERT_EQ(ds.cols(), 3);
  EXPECT_EQ(ds.X.row(0), (Eigen::RowVector3d() << 0.5, 0, 2).finished());
  EXPECT_EQ(ds.X.row(1), (Eigen::RowVector3d() << 0, 1, 0).finished());
}

TEST(Data, MalformedRowsReportLine) {
  try {
    parse("1,0.5\n-1,abc\n");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("inline:2:"), std::string::npos) << e.what();
  }
  LoadOptions opt;
  opt.format = DataFormat::libsvm;
  EXPECT_THROW(parse("1 3:1 2:1\n-1 1:1\n", opt), DataError);
  EXPECT_THROW(parse("1,0.5\n-1,0.5,0.7\n"), DataError);
}

TEST(Data, ThirdLabelListsObservedValues) {
  try {
    parse("1,0\n2,0\n3,0\n");
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    for (const char* l : {"1", "2", "3"}) EXPECT_NE(msg.find(l), std::string::npos) << msg;
  }
}

TEST(Data, MonkPredefinedSizes) {
  const struct {
    int which;
    Eigen::Index train;
  } cases[] = {{1, 124}, {2, 169}, {3, 122}};
  for (const auto& c : cases) {
    const std::string base = kData + "/monks-" + std::to_string(c.which);
    const Dataset ds = load_predefined(base + ".train.csv", base + ".test.csv");
    EXPECT_TRUE(ds.predefined_split);
    EXPECT_EQ(ds.train().rows(), c.train);
    EXPECT_EQ(ds.test().rows(), 432);
    EXPECT_EQ(ds.cols(), 6);
    // split() keeps a predefined split verbatim
    const Dataset again = split(ds, 10, 99);
    EXPECT_EQ(again.train().X, ds.train().X);
  }
}

TEST(Data, NormalizerAffineAndUnclipped) {
  Eigen::MatrixXd X(3, 2);
  X << 0, 3, 5, 3, 10, 3;
  const NormalizationTransform t = fit_normalizer(X);
  const Eigen::MatrixXd Z = t.apply(X);
  EXPECT_EQ(Z.col(0), (Eigen::Vector3d() << -1, 0, 1).finished());
  EXPECT_EQ(Z.col(1), Eigen::Vector3d::Zero());
  Eigen::MatrixXd test(1, 2);
  test << 12, 4;
  EXPECT_DOUBLE_EQ(t.apply(test)(0, 0), 1.4);
  EXPECT_THROW(t.apply(Eigen::MatrixXd::Zero(1, 3)), DomainError);
}

TEST(Data, NormalizedTrainingDataInRange) {
  const Dataset ds = split(load(kData + "/heart.csv"), 150, 0);
  const Eigen::MatrixXd Z = fit_normalizer(ds.train()).apply(ds.train().X);
  EXPECT_LE(Z.maxCoeff(), 1.0);
  EXPECT_GE(Z.minCoeff(), -1.0);
}

TEST(Data, HabermanSplitIsDeterministic) {
  const Dataset full = load(kData + "/haberman.csv");
  ASSERT_EQ(full.rows(), 306);
  const Dataset a = split(full, 150, 0);
  const Dataset b = split(full, 150, 0);
  EXPECT_EQ(a.train().rows(), 150);
  EXPECT_EQ(a.test().rows(), 156);
  EXPECT_EQ(a.split->train, b.split->train);
  EXPECT_NE(split(full, 150, 1).split->train, a.split->train);
  std::set<Eigen::Index> seen(a.split->train.begin(), a.split->train.end());
  for (auto i : a.split->test) EXPECT_TRUE(seen.insert(i).second);
  EXPECT_EQ(seen.size(), 306u);
  EXPECT_THROW(split(full, 0, 0), DomainError);
  EXPECT_THROW(split(full, 306, 0), DomainError);
}

TEST(Data, ClassRatio) {
  Eigen::VectorXd y(15);
  y << 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, -1, -1, -1, -1, -1;
  EXPECT_DOUBLE_EQ(class_ratio(y), 2.0);
  EXPECT_DOUBLE_EQ(class_ratio((Eigen::VectorXd(4) << 1, -1, 1, -1).finished()), 1.0);
  EXPECT_THROW(class_ratio(Eigen::VectorXd::Ones(3)), DataError);

  const Dataset ds = split(load(kData + "/haberman.csv"), 150, 0);
  const Eigen::VectorXd ytr = ds.train().y;
  const auto pos = std::count(ytr.begin(), ytr.end(), 1.0);
  const auto neg = std::count(ytr.begin(), ytr.end(), -1.0);
  EXPECT_DOUBLE_EQ(class_ratio(ds.train()), static_cast<double>(pos) / static_cast<double>(neg));
}

TEST(Data, LabelMappingRecorded) {
  const Dataset ds = load(kData + "/haberman.csv");
  EXPECT_EQ(ds.label_names.first, "1");
  EXPECT_EQ(ds.label_names.second, "2");
}

TEST(Data, MissingFile) { EXPECT_THROW(load(kData + "/nope.csv"), DataError); }

}  // namespace
}  // namespace kplsvm
