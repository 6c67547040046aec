#pragma once

// Training of the k-piece-wise linear loss SVM through its dual, bias
// recovery, prediction and KKT verification.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kplsvm/data.hpp"
#include "kplsvm/errors.hpp"
#include "kplsvm/kernel.hpp"
#include "kplsvm/loss.hpp"
#include "kplsvm/qp.hpp"

namespace kplsvm {

struct TrainParams {
  LossSpec loss = LossSpec::hinge();
  double c0 = 1.0;
  KernelSpec kernel;
  bool balance_classes = true;
  double qp_tol = 1e-12;
  /// Solver results that only reach this tolerance are accepted and flagged.
  double qp_acceptable_tol = 1e-8;
  /// Multipliers above active_threshold * C_i count as positive.
  double active_threshold = 1e-6;
  QpRoute route = QpRoute::automatic;

  void validate() const {
    if (!(c0 > 0.0) || !std::isfinite(c0)) throw DomainError("c0 must be positive and finite");
    if (!(qp_tol > 0.0)) throw DomainError("qp_tol must be positive");
    if (qp_acceptable_tol < 0.0) throw DomainError("qp_acceptable_tol must be non-negative");
    if (!(active_threshold > 0.0 && active_threshold < 1.0)) {
      throw DomainError("active_threshold must lie in (0, 1)");
    }
    if (loss.k() < 2) throw DomainError("training needs a loss with k >= 2 pieces");
    kernel.validate();
  }
};

struct KktReport {
  double stationarity_w = 0.0;   ///< ||beta - y o D z||_inf / (1 + max C)
  double stationarity_b = 0.0;   ///< |sum_i s_i y_i| / (1 + max C)
  double stationarity_xi = 0.0;  ///< max_i |C_i - sum_j z_ij| / (1 + C_i)
  double complementarity_max = 0.0;  ///< max_ij (z_ij / C_i) (xi_i - piece_j(u_i))
  double primal_feasibility_max = 0.0;
  Eigen::VectorXd xi;
  double primal_objective = 0.0;
  double dual_objective = 0.0;  ///< minimum of the negated dual
  double duality_gap = 0.0;     ///< |P + D| / (1 + |D|)

  double max_residual() const {
    return std::max({stationarity_w, stationarity_b, stationarity_xi, complementarity_max,
                     primal_feasibility_max});
  }
};

struct TrainDiagnostics {
  int bias_candidates_used = 0;
  bool bias_fallback = false;
  double kkt_max_residual = 0.0;
  double duality_gap = 0.0;
  int qp_iterations = 0;
  std::string qp_status;
  bool qp_fallback = false;
  double class_ratio = 1.0;
  double train_seconds = 0.0;
};

struct TrainedModel {
  KernelSpec kernel;
  LossSpec loss;
  double c0 = 1.0;
  bool balance_classes = true;
  double qp_tol = 1e-12;
  double active_threshold = 1e-6;
  NormalizationTransform normalizer;  ///< applied to raw inputs before the kernel; empty = identity
  Eigen::MatrixXd support_x;          ///< normalized coordinates
  Eigen::VectorXd beta;
  double bias = 0.0;
  TrainDiagnostics diagnostics;

  Eigen::Index support_count() const { return support_x.rows(); }
  Eigen::Index input_dims() const {
    return normalizer.empty() ? support_x.cols() : normalizer.dims();
  }
};

/// Everything needed to check the dual solution after the fact.
struct DualState {
  Eigen::MatrixXd gram;
  Eigen::VectorXd y;
  Eigen::VectorXd C;
  LossSpec loss;
  Eigen::VectorXd z;  ///< unscaled dual variables, layout j * l + i
  double objective = 0.0;

  Eigen::Index samples() const { return y.size(); }
  Eigen::VectorXd combined() const {
    const Eigen::Index l = samples();
    Eigen::VectorXd s = Eigen::VectorXd::Zero(l);
    for (std::size_t j = 0; j < static_cast<std::size_t>(loss.k()); ++j) {
      s += loss.slope(j) * z.segment(static_cast<Eigen::Index>(j) * l, l);
    }
    return s;
  }
  double multiplier(Eigen::Index i, std::size_t j) const {
    return z(static_cast<Eigen::Index>(j) * samples() + i);
  }
};

struct TrainResult {
  TrainedModel model;
  DualState dual;
  Eigen::VectorXd full_beta;  ///< before pruning
  KktReport kkt;
};

/// C_i = c0 for positives, p * c0 for negatives when balancing.
inline Eigen::VectorXd sample_weights(const Eigen::VectorXd& y, double c0, bool balance) {
  const double p = balance ? class_ratio(y) : 1.0;
  Eigen::VectorXd C(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) C(i) = y(i) > 0 ? c0 : p * c0;
  return C;
}

struct BiasEstimate {
  double bias = 0.0;
  int candidates = 0;
  bool fallback = false;
};

namespace detail {

/// Exact minimizer of P(b) = sum_i C_i L(1 - y_i (g_i + b)). P is convex
/// piecewise linear; its derivative starts at sum_i -y_i C_i L'(y_i * inf)
/// and jumps by C_i (a_r - a_{r-1}) at every b where some sample crosses the
/// kink between envelope slopes a_{r-1} and a_r. The midpoint of the
/// minimizing interval is returned (its finite end when it is a half-line,
/// 0 when P is constant).
inline double minimize_bias(const LossSpec& loss, const Eigen::VectorXd& g,
                            const Eigen::VectorXd& y, const Eigen::VectorXd& C) {
  const Envelope env = upper_envelope(loss);
  if (env.kinks.empty()) return 0.0;
  const double a_lo = env.slopes.front();
  const double a_hi = env.slopes.back();
  std::vector<std::pair<double, double>> events;  // (b, jump)
  double slope = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    slope += y(i) > 0 ? -C(i) * a_hi : C(i) * a_lo;
    for (std::size_t r = 0; r < env.kinks.size(); ++r) {
      events.emplace_back(y(i) * (1.0 - env.kinks[r]) - g(i),
                          C(i) * (env.slopes[r + 1] - env.slopes[r]));
    }
  }
  std::sort(events.begin(), events.end());
  const double tol = 1e-12 * C.sum() * (a_hi - a_lo);
  std::optional<double> lo;
  std::optional<double> hi;
  if (slope >= -tol) lo = events.front().first;
  for (std::size_t e = 0; e < events.size();) {
    const double b = events[e].first;
    for (; e < events.size() && events[e].first == b; ++e) slope += events[e].second;
    if (!lo && slope >= -tol) lo = b;
    if (slope > tol) {
      hi = b;
      break;
    }
  }
  if (!lo) return events.back().first;
  if (!hi) return *lo;
  return 0.5 * (*lo + *hi);
}

}  // namespace detail

/// Bias from samples with two positive multipliers on pieces that intersect;
/// g holds sum_i beta_i k(x_i, x_j) for every training point.
inline BiasEstimate recover_bias(const DualState& dual, const Eigen::VectorXd& g, double threshold) {
  const LossSpec& loss = dual.loss;
  const std::size_t k = static_cast<std::size_t>(loss.k());
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index j = 0; j < dual.samples(); ++j) {
    const double cut = threshold * dual.C(j);
    const double yj = dual.y(j);
    if (dual.multiplier(j, 0) > cut) {
      for (std::size_t m = 1; m < k; ++m) {
        if (dual.multiplier(j, m) <= cut) continue;
        const double tau = loss.tau(m - 1);
        if (std::abs(1.0 + tau) < 1e-9) continue;
        sum += yj * (1.0 - loss.epsilon(m - 1) / (1.0 + tau)) - g(j);
        ++count;
      }
    }
    for (std::size_t m1 = 1; m1 < k; ++m1) {
      if (dual.multiplier(j, m1) <= cut) continue;
      for (std::size_t m2 = m1 + 1; m2 < k; ++m2) {
        if (dual.multiplier(j, m2) <= cut) continue;
        const double dtau = loss.tau(m2 - 1) - loss.tau(m1 - 1);
        if (std::abs(dtau) < 1e-9) continue;
        const double u = (loss.epsilon(m2 - 1) - loss.epsilon(m1 - 1)) / dtau;
        sum += yj * (1.0 - u) - g(j);
        ++count;
      }
    }
  }
  if (count > 0) return {sum / count, count, false};
  return {detail::minimize_bias(loss, g, dual.y, dual.C), 0, true};
}

/// Recomputes every KKT condition of the primal/dual pair. beta is the
/// full-length expansion actually used for scoring (pruned entries zero).
inline KktReport verify_kkt(const DualState& dual, const Eigen::VectorXd& beta, double bias) {
  const Eigen::Index l = dual.samples();
  const std::size_t k = static_cast<std::size_t>(dual.loss.k());
  const double cmax = dual.C.maxCoeff();
  const auto pieces = dual.loss.pieces();
  KktReport r;
  const Eigen::VectorXd s = dual.combined();
  r.stationarity_w = (beta - dual.y.cwiseProduct(s)).lpNorm<Eigen::Infinity>() / (1.0 + cmax);
  r.stationarity_b = std::abs(s.dot(dual.y)) / (1.0 + cmax);

  const Eigen::VectorXd scores = dual.gram * beta;
  r.xi.resize(l);
  for (Eigen::Index i = 0; i < l; ++i) {
    const double u = 1.0 - dual.y(i) * (scores(i) + bias);
    const double xi = eval_loss(dual.loss, u);
    r.xi(i) = xi;
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double zij = dual.multiplier(i, j);
      total += zij;
      r.primal_feasibility_max = std::max(r.primal_feasibility_max, -zij / dual.C(i));
      r.primal_feasibility_max = std::max(r.primal_feasibility_max, pieces[j](u) - xi);
      r.complementarity_max =
          std::max(r.complementarity_max, std::abs(zij / dual.C(i) * (xi - pieces[j](u))));
    }
    r.stationarity_xi = std::max(r.stationarity_xi, std::abs(dual.C(i) - total) / (1.0 + dual.C(i)));
  }
  r.primal_objective = 0.5 * beta.dot(dual.gram * beta) + dual.C.dot(r.xi);
  r.dual_objective = dual.objective;
  r.duality_gap = std::abs(r.primal_objective + r.dual_objective) / (1.0 + std::abs(r.dual_objective));
  return r;
}

namespace detail {

inline void check_training_data(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() != y.size()) throw DomainError("X and y disagree on the number of samples");
  if (X.rows() < 2) throw TrainingError("training needs at least two samples");
  if (!X.allFinite()) throw DomainError("training features must be finite");
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) != 1.0 && y(i) != -1.0) throw DomainError("labels must be +1 or -1");
  }
  const auto counts = class_counts(y);
  if (counts.positive == 0 || counts.negative == 0) {
    throw TrainingError("training data contains a single class");
  }
}

}  // namespace detail

/// Dual solution and bias for a precomputed Gram matrix.
struct DualFit {
  DualState dual;
  Eigen::VectorXd beta;
  BiasEstimate bias;
  QpSolution solution;  ///< in solver units (scaled by 1 / max C)
};

inline DualFit fit_dual(Eigen::MatrixXd gram, const Eigen::VectorXd& y, const TrainParams& params) {
  params.validate();
  if (gram.rows() != y.size() || gram.cols() != y.size()) {
    throw DomainError("Gram matrix and labels disagree on the number of samples");
  }
  DualFit out;
  DualState& dual = out.dual;
  dual.loss = params.loss;
  dual.y = y;
  dual.C = sample_weights(y, params.c0, params.balance_classes);
  dual.gram = std::move(gram);

  // Solve in units of max C so the tolerance is relative to the box size.
  const double kappa = dual.C.maxCoeff();
  const Eigen::MatrixXd H = kappa * (y.asDiagonal() * dual.gram * y.asDiagonal());
  try {
    const QpProblem problem = assemble_structured(H, params.loss, dual.C / kappa, y);
    QpOptions opt;
    opt.tol = params.qp_tol;
    opt.route = params.route;
    opt.acceptable_tol = std::max(params.qp_acceptable_tol, params.qp_tol);
    out.solution = solve(problem, opt);
  } catch (const InfeasibleError& e) {
    throw TrainingError(std::string("dual infeasible for loss ") + params.loss.to_string() + ": " +
                        e.what());
  }
  const QpSolution& sol = out.solution;
  if (sol.status != QpStatus::optimal && sol.status != QpStatus::acceptable) {
    throw TrainingError("dual solver stopped with status " + to_string(sol.status) + " after " +
                        std::to_string(sol.iterations) + " iterations");
  }
  dual.z = kappa * sol.z;
  dual.objective = kappa * sol.objective;
  out.beta = y.cwiseProduct(dual.combined());
  out.bias = recover_bias(dual, dual.gram * out.beta, params.active_threshold);
  return out;
}

/// Trains on X as given (already normalized if desired).
inline TrainResult train_detailed(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  const TrainParams& params) {
  const auto start = std::chrono::steady_clock::now();
  params.validate();
  detail::check_training_data(X, y);
  const Eigen::Index l = X.rows();

  DualFit fit = fit_dual(gram_matrix(params.kernel, X), y, params);
  TrainResult out;
  out.dual = std::move(fit.dual);
  out.full_beta = std::move(fit.beta);
  const DualState& dual = out.dual;
  const QpSolution& sol = fit.solution;
  const BiasEstimate& be = fit.bias;
  const Eigen::VectorXd g = dual.gram * out.full_beta;

  // Prune negligible expansion terms unless that moves a training score.
  std::vector<Eigen::Index> keep;
  Eigen::VectorXd used = Eigen::VectorXd::Zero(l);
  for (Eigen::Index i = 0; i < l; ++i) {
    if (std::abs(out.full_beta(i)) >= params.active_threshold * params.c0) {
      keep.push_back(i);
      used(i) = out.full_beta(i);
    }
  }
  if ((dual.gram * used - g).lpNorm<Eigen::Infinity>() > 1e-6) {
    keep.resize(static_cast<std::size_t>(l));
    for (Eigen::Index i = 0; i < l; ++i) keep[static_cast<std::size_t>(i)] = i;
    used = out.full_beta;
  }

  TrainedModel& m = out.model;
  m.kernel = params.kernel;
  m.loss = params.loss;
  m.c0 = params.c0;
  m.balance_classes = params.balance_classes;
  m.qp_tol = params.qp_tol;
  m.active_threshold = params.active_threshold;
  m.support_x.resize(static_cast<Eigen::Index>(keep.size()), X.cols());
  m.beta.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t r = 0; r < keep.size(); ++r) {
    m.support_x.row(static_cast<Eigen::Index>(r)) = X.row(keep[r]);
    m.beta(static_cast<Eigen::Index>(r)) = out.full_beta(keep[r]);
  }
  m.bias = be.bias;

  out.kkt = verify_kkt(dual, used, be.bias);
  auto& d = m.diagnostics;
  d.bias_candidates_used = be.candidates;
  d.bias_fallback = be.fallback;
  d.kkt_max_residual = out.kkt.max_residual();
  d.duality_gap = out.kkt.duality_gap;
  d.qp_iterations = sol.iterations;
  d.qp_status = to_string(sol.status);
  d.qp_fallback = sol.used_fallback;
  d.class_ratio = params.balance_classes ? class_ratio(y) : 1.0;
  d.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline TrainedModel train(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const TrainParams& params) {
  return train_detailed(X, y, params).model;
}

/// Fits the normalizer on the training rows, trains on normalized features
/// and stores the normalizer in the model.
inline TrainResult fit_detailed(const Dataset& train_set, const TrainParams& params) {
  const NormalizationTransform norm = fit_normalizer(train_set);
  TrainResult r = train_detailed(norm.apply(train_set.X), train_set.y, params);
  r.model.normalizer = norm;
  return r;
}

inline TrainedModel fit(const Dataset& train_set, const TrainParams& params) {
  return fit_detailed(train_set, params).model;
}

/// Raw inputs; the model's normalizer is applied first.
inline Eigen::VectorXd decision_scores(const TrainedModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.input_dims()) {
    throw DomainError("model expects " + std::to_string(model.input_dims()) + " features, got " +
                      std::to_string(X.cols()));
  }
  const Eigen::MatrixXd Xn = model.normalizer.apply(X);
  Eigen::VectorXd scores = Eigen::VectorXd::Constant(X.rows(), model.bias);
  if (model.support_count() > 0) {
    scores += cross_kernel(model.kernel, Xn, model.support_x) * model.beta;
  }
  return scores;
}

/// Score exactly zero predicts +1.
inline Eigen::VectorXd predict(const TrainedModel& model, const Eigen::MatrixXd& X) {
  const Eigen::VectorXd s = decision_scores(model, X);
  return s.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
}

/// Percentage of correct predictions.
inline double accuracy(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth) {
  if (truth.size() == 0) throw DataError("accuracy of an empty set is undefined");
  if (predicted.size() != truth.size()) throw DomainError("prediction count mismatch");
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < truth.size(); ++i) correct += predicted(i) == truth(i) ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(truth.size());
}

struct SpecComparison {
  LossSpec a;
  LossSpec b;
  Eigen::Index prediction_mismatches = 0;
  double objective_a = 0.0;
  double objective_b = 0.0;

  double objective_rel_diff() const {
    return std::abs(objective_a - objective_b) / (1.0 + std::max(std::abs(objective_a), std::abs(objective_b)));
  }
  bool equivalent(double rel_tol = 1e-6) const {
    return prediction_mismatches == 0 && objective_rel_diff() <= rel_tol;
  }
};

/// Trains the same data under two loss specs and compares predictions on
/// `eval` (raw features) and dual objectives.
inline SpecComparison compare_specs(const Dataset& train_set, const Eigen::MatrixXd& eval,
                                    TrainParams params, const LossSpec& a, const LossSpec& b) {
  SpecComparison c{a, b};
  params.loss = a;
  const TrainResult ra = fit_detailed(train_set, params);
  params.loss = b;
  const TrainResult rb = fit_detailed(train_set, params);
  const Eigen::VectorXd pa = predict(ra.model, eval);
  const Eigen::VectorXd pb = predict(rb.model, eval);
  c.prediction_mismatches = (pa.array() != pb.array()).count();
  c.objective_a = ra.dual.objective;
  c.objective_b = rb.dual.objective;
  return c;
}

struct ReductionReport {
  SpecComparison hinge;    ///< k=2 hinge vs k=3 all zeros
  SpecComparison pinball;  ///< k=2 (tau, 0) vs k=3 (tau, 0, 0, 0)
};

/// Checks the hinge and pinball embeddings into the three-piece family.
/// Predictions are compared on training and test rows together.
inline ReductionReport reduction_equivalence(const Dataset& ds, double c0, const KernelSpec& kernel,
                                             double tau, bool balance_classes = true) {
  if (ds.rows() > 300 && !ds.split) throw DomainError("reduction check expects a small dataset");
  const Dataset train_set = ds.split ? ds.train() : ds;
  TrainParams p;
  p.c0 = c0;
  p.kernel = kernel;
  p.balance_classes = balance_classes;
  ReductionReport r;
  r.hinge = compare_specs(train_set, ds.X, p, LossSpec::hinge(), LossSpec({0.0, 0.0}, {0.0, 0.0}));
  r.pinball = compare_specs(train_set, ds.X, p, LossSpec::pinball(tau), LossSpec({tau, 0.0}, {0.0, 0.0}));
  return r;
}

}  // namespace kplsvm
