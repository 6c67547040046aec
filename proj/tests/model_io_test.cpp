#include "kplsvm/model_io.hpp"

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

namespace kplsvm {
namespace {

namespace fs = std::filesystem;

Dataset monk3() {
  const std::string base = std::string(KPLSVM_DATA_DIR) + "/monks-3";
  return load_predefined(base + ".train.csv", base + ".test.csv");
}

TrainedModel sample_model(const KernelSpec& kernel) {
  TrainParams p;
  p.c0 = 0.125;
  p.kernel = kernel;
  p.loss = LossSpec({-0.4, 1.0}, {0.5, -3.5});
  return fit(monk3().train(), p);
}

TEST(ModelIo, RoundTripScoresAreBitIdentical) {
  for (const KernelSpec& k : {KernelSpec::linear(), KernelSpec::rbf(4.0, RbfForm::literal)}) {
    const TrainedModel m = sample_model(k);
    const TrainedModel back = deserialize_model(serialize_model(m));
    const Eigen::MatrixXd X = monk3().X;
    const Eigen::VectorXd a = decision_scores(m, X);
    const Eigen::VectorXd b = decision_scores(back, X);
    for (Eigen::Index i = 0; i < a.size(); ++i) ASSERT_EQ(a(i), b(i)) << i;
    EXPECT_EQ(back.kernel.kind, k.kind);
    EXPECT_EQ(back.kernel.rbf_form, k.rbf_form);
    EXPECT_EQ(back.loss.to_string(), m.loss.to_string());
    EXPECT_EQ(back.diagnostics.qp_status, m.diagnostics.qp_status);
    // serializing again yields the same text
    EXPECT_EQ(serialize_model(back), serialize_model(m));
  }
}

TEST(ModelIo, SaveLoadFile) {
  const fs::path dir = fs::temp_directory_path() / "kplsvm_model_io_test";
  fs::create_directories(dir);
  const std::string path = (dir / "m.json").string();
  const TrainedModel m = sample_model(KernelSpec::linear());
  save_model(m, path);
  for (const auto& e : fs::directory_iterator(dir)) {
    EXPECT_EQ(e.path().filename(), "m.json") << "temporary file left behind";
  }
  EXPECT_EQ(predict(load_model(path), monk3().X), predict(m, monk3().X));
  fs::remove_all(dir);
}

TEST(ModelIo, RejectsUnknownVersion) {
  auto j = model_to_json(sample_model(KernelSpec::linear()));
  j["format_version"] = 99;
  try {
    model_from_json(j);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(ModelIo, RejectsMalformedDocuments) {
  EXPECT_THROW(deserialize_model("not json"), FormatError);
  EXPECT_THROW(deserialize_model("{\"format\": \"other\"}"), FormatError);
  auto j = model_to_json(sample_model(KernelSpec::linear()));
  j["beta"].erase(0);
  EXPECT_THROW(model_from_json(j), FormatError);
  j = model_to_json(sample_model(KernelSpec::linear()));
  j.erase("bias");
  EXPECT_THROW(model_from_json(j), FormatError);
  j = model_to_json(sample_model(KernelSpec::linear()));
  j["support_x"][0].push_back(1.0);
  EXPECT_THROW(model_from_json(j), FormatError);
}

TEST(ModelIo, DimensionMismatchOnPredict) {
  const TrainedModel m = deserialize_model(serialize_model(sample_model(KernelSpec::linear())));
  EXPECT_THROW(predict(m, Eigen::MatrixXd::Zero(2, 5)), DomainError);
}

TEST(ModelIo, MissingFile) { EXPECT_THROW(load_model("/nonexistent/model.json"), Error); }

}  // namespace
}  // namespace kplsvm
