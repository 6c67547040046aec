#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "kplsvm/errors.hpp"

namespace kplsvm {

enum class KernelKind { linear, rbf };

/// How the RBF exponent treats the distance.
///   squared_distance: exp(-||x-y||^2 / (2 q^2))   (Gaussian)
///   literal:          exp(-||x-y||   / (2 q^2))
enum class RbfForm { squared_distance, literal };

struct KernelSpec {
  KernelKind kind = KernelKind::linear;
  double q = 1.0;
  RbfForm rbf_form = RbfForm::squared_distance;

  static KernelSpec linear() { return {}; }
  static KernelSpec rbf(double width, RbfForm form = RbfForm::squared_distance) {
    return {KernelKind::rbf, width, form};
  }

  void validate() const {
    if (kind == KernelKind::rbf && !(q > 0.0 && std::isfinite(q))) {
      throw DomainError("kernel: rbf width q must be positive and finite");
    }
  }

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

inline std::string to_string(KernelKind kind) {
  return kind == KernelKind::linear ? "linear" : "rbf";
}

inline std::string to_string(RbfForm form) {
  return form == RbfForm::squared_distance ? "squared" : "literal";
}

inline KernelKind parse_kernel_kind(const std::string& s) {
  if (s == "linear") return KernelKind::linear;
  if (s == "rbf") return KernelKind::rbf;
  throw DomainError("kernel: unknown kind '" + s + "' (expected linear or rbf)");
}

inline RbfForm parse_rbf_form(const std::string& s) {
  if (s == "squared") return RbfForm::squared_distance;
  if (s == "literal") return RbfForm::literal;
  throw DomainError("kernel: unknown rbf form '" + s + "' (expected squared or literal)");
}

template <typename DerivedX, typename DerivedY>
double kernel_value(const KernelSpec& spec, const Eigen::MatrixBase<DerivedX>& x,
                    const Eigen::MatrixBase<DerivedY>& y) {
  if (x.size() != y.size()) {
    throw DomainError("kernel: dimension mismatch (" + std::to_string(x.size()) +
                      " vs " + std::to_string(y.size()) + ")");
  }
  if (spec.kind == KernelKind::linear) return x.dot(y);
  const double d2 = (x - y).squaredNorm();
  const double dist = spec.rbf_form == RbfForm::squared_distance ? d2 : std::sqrt(d2);
  return std::exp(-dist / (2.0 * spec.q * spec.q));
}

/// Kernel matrix between the rows of A and the rows of B.
inline Eigen::MatrixXd cross_kernel(const KernelSpec& spec, const Eigen::MatrixXd& A,
                                    const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols()) {
    throw DomainError("kernel: dimension mismatch (" + std::to_string(A.cols()) +
                      " vs " + std::to_string(B.cols()) + ")");
  }
  spec.validate();
  Eigen::MatrixXd K(A.rows(), B.rows());
  for (Eigen::Index j = 0; j < B.rows(); ++j) {
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      K(i, j) = kernel_value(spec, A.row(i), B.row(j));
    }
  }
  return K;
}

/// Symmetric Gram matrix of the rows of X. The upper triangle is computed
/// and mirrored, so G == G^T exactly; the RBF diagonal is exactly one.
inline Eigen::MatrixXd gram_matrix(const KernelSpec& spec, const Eigen::MatrixXd& X) {
  spec.validate();
  const Eigen::Index l = X.rows();
  Eigen::MatrixXd G(l, l);
  for (Eigen::Index j = 0; j < l; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      const double v = i == j && spec.kind == KernelKind::rbf
                           ? 1.0
                           : kernel_value(spec, X.row(i), X.row(j));
      G(i, j) = v;
      G(j, i) = v;
    }
  }
  return G;
}

}  // namespace kplsvm
