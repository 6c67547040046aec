#pragma once

// Versioned JSON model files. Doubles are written in shortest round-trip
// form, so a loaded model scores bit-identically to the saved one.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "kplsvm/errors.hpp"
#include "kplsvm/trainer.hpp"

namespace kplsvm {

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kModelFormatName = "kplsvm-model";

namespace detail {

inline nlohmann::json to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j, const char* field) {
  if (!j.is_array()) throw FormatError(std::string("model field '") + field + "' must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw FormatError(std::string("model field '") + field + "' must hold numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

template <typename T>
T required(const nlohmann::json& j, const char* field) {
  if (!j.contains(field)) throw FormatError(std::string("model file lacks field '") + field + "'");
  try {
    return j.at(field).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("model field '") + field + "' has the wrong type");
  }
}

}  // namespace detail

inline nlohmann::json model_to_json(const TrainedModel& m) {
  using nlohmann::json;
  json j;
  j["format"] = kModelFormatName;
  j["format_version"] = kModelFormatVersion;
  j["kernel"] = {{"kind", to_string(m.kernel.kind)}};
  if (m.kernel.kind == KernelKind::rbf) {
    j["kernel"]["q"] = m.kernel.q;
    j["kernel"]["rbf_form"] = to_string(m.kernel.rbf_form);
  }
  j["loss"] = {{"taus", m.loss.taus()}, {"epsilons", m.loss.epsilons()}};
  j["c0"] = m.c0;
  j["balance_classes"] = m.balance_classes;
  j["qp_tol"] = m.qp_tol;
  j["active_threshold"] = m.active_threshold;
  if (m.normalizer.empty()) {
    j["normalizer"] = nullptr;
  } else {
    j["normalizer"] = {{"min", detail::to_json(m.normalizer.min)},
                       {"max", detail::to_json(m.normalizer.max)}};
  }
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.support_x.rows(); ++r) {
    rows.push_back(detail::to_json(m.support_x.row(r).transpose()));
  }
  j["feature_dims"] = m.support_x.cols();
  j["support_x"] = std::move(rows);
  j["beta"] = detail::to_json(m.beta);
  j["bias"] = m.bias;
  const auto& d = m.diagnostics;
  j["diagnostics"] = {{"bias_candidates_used", d.bias_candidates_used},
                      {"bias_fallback", d.bias_fallback},
                      {"kkt_max_residual", d.kkt_max_residual},
                      {"duality_gap", d.duality_gap},
                      {"qp_iterations", d.qp_iterations},
                      {"qp_status", d.qp_status},
                      {"qp_fallback", d.qp_fallback},
                      {"class_ratio", d.class_ratio},
                      {"train_seconds", d.train_seconds}};
  return j;
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
  using detail::required;
  if (!j.is_object()) throw FormatError("model file is not a JSON object");
  if (required<std::string>(j, "format") != kModelFormatName) {
    throw FormatError("not a kplsvm model file");
  }
  const int version = required<int>(j, "format_version");
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format_version " + std::to_string(version) +
                      " (this build reads version " + std::to_string(kModelFormatVersion) + ")");
  }
  TrainedModel m;
  const auto& kj = j.at("kernel");
  m.kernel.kind = parse_kernel_kind(required<std::string>(kj, "kind"));
  if (m.kernel.kind == KernelKind::rbf) {
    m.kernel.q = required<double>(kj, "q");
    m.kernel.rbf_form = parse_rbf_form(required<std::string>(kj, "rbf_form"));
  }
  m.kernel.validate();
  const auto& lj = j.at("loss");
  m.loss = LossSpec(required<std::vector<double>>(lj, "taus"),
                    required<std::vector<double>>(lj, "epsilons"));
  m.c0 = required<double>(j, "c0");
  m.balance_classes = required<bool>(j, "balance_classes");
  m.qp_tol = required<double>(j, "qp_tol");
  m.active_threshold = required<double>(j, "active_threshold");
  if (!j.contains("normalizer")) throw FormatError("model file lacks field 'normalizer'");
  if (!j["normalizer"].is_null()) {
    m.normalizer.min = detail::vector_from_json(j["normalizer"].at("min"), "normalizer.min");
    m.normalizer.max = detail::vector_from_json(j["normalizer"].at("max"), "normalizer.max");
    if (m.normalizer.min.size() != m.normalizer.max.size()) {
      throw FormatError("normalizer min and max differ in length");
    }
  }
  const auto dims = required<Eigen::Index>(j, "feature_dims");
  const auto& rows = j.at("support_x");
  if (!rows.is_array()) throw FormatError("model field 'support_x' must be an array");
  m.support_x.resize(static_cast<Eigen::Index>(rows.size()), dims);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Eigen::VectorXd row = detail::vector_from_json(rows[r], "support_x");
    if (row.size() != dims) throw FormatError("support point " + std::to_string(r) + " has wrong length");
    m.support_x.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  m.beta = detail::vector_from_json(j.at("beta"), "beta");
  if (m.beta.size() != m.support_x.rows()) throw FormatError("beta and support_x differ in length");
  if (!m.normalizer.empty() && m.normalizer.dims() != dims) {
    throw FormatError("normalizer and support points disagree on the feature count");
  }
  m.bias = required<double>(j, "bias");
  if (j.contains("diagnostics")) {
    const auto& dj = j["diagnostics"];
    auto& d = m.diagnostics;
    d.bias_candidates_used = dj.value("bias_candidates_used", 0);
    d.bias_fallback = dj.value("bias_fallback", false);
    d.kkt_max_residual = dj.value("kkt_max_residual", 0.0);
    d.duality_gap = dj.value("duality_gap", 0.0);
    d.qp_iterations = dj.value("qp_iterations", 0);
    d.qp_status = dj.value("qp_status", std::string());
    d.qp_fallback = dj.value("qp_fallback", false);
    d.class_ratio = dj.value("class_ratio", 1.0);
    d.train_seconds = dj.value("train_seconds", 0.0);
  }
  return m;
}

inline std::string serialize_model(const TrainedModel& m) { return model_to_json(m).dump(2) + "\n"; }

inline TrainedModel deserialize_model(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    return model_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  }
}

/// Writes to a temporary file next to `path` and renames it into place.
inline void save_model(const TrainedModel& m, const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << serialize_model(m);
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw Error("failed writing '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error("cannot move model into '" + path + "': " + ec.message());
  }
}

inline TrainedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace kplsvm
