#pragma once

// Convex QP
//
//   minimize    1/2 z^T Q z + c^T z
//   subject to  A z = b,  z >= 0
//
// solved by a primal-dual interior-point method with Mehrotra
// predictor-corrector steps. Problems built by assemble_structured() carry
// the block structure of the piece-wise linear SVM dual,
//
//   Q = D^T H D,   D = [I, -tau_1 I, ..., -tau_{k-1} I],
//
// with one global row y^T D z = 0 and one simplex row per sample. For those
// the Newton system is reduced to an l x l SPD solve; everything else goes
// through a dense factorization of the full KKT matrix.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kplsvm/errors.hpp"
#include "kplsvm/loss.hpp"

namespace kplsvm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Block layout of the dual: variable (piece j, sample i) lives at j*l + i.
/// Constraint row 0 is the global row sum_i s_i y_i = 0, rows 1..l are the
/// per-sample simplex rows sum_j z_ij = C_i.
struct BlockStructure {
  MatrixXd H;             ///< label-weighted Gram, H_ij = y_i y_j k(x_i, x_j)
  VectorXd piece_coeffs;  ///< 1, -tau_1, ..., -tau_{k-1}
  VectorXd labels;        ///< +-1
  VectorXd weights;       ///< C_i

  Index samples() const { return H.rows(); }
  Index pieces() const { return piece_coeffs.size(); }

  /// s = D z, the combined coefficient of every sample.
  VectorXd combine(const VectorXd& z) const {
    const Index l = samples();
    VectorXd s = VectorXd::Zero(l);
    for (Index j = 0; j < pieces(); ++j) s += piece_coeffs(j) * z.segment(j * l, l);
    return s;
  }

  /// D^T v.
  VectorXd spread(const VectorXd& v) const {
    const Index l = samples();
    VectorXd out(l * pieces());
    for (Index j = 0; j < pieces(); ++j) out.segment(j * l, l) = piece_coeffs(j) * v;
    return out;
  }
};

struct QpProblem {
  MatrixXd Q;  ///< dense quadratic term; empty when `structure` is set
  VectorXd c;
  MatrixXd A;
  VectorXd b;
  /// Added to the diagonal of Q while solving.
  double diag_reg = 0.0;
  std::optional<BlockStructure> structure;

  Index size() const { return c.size(); }
  Index rows() const { return b.size(); }
  std::vector<Index> block_sizes() const {
    if (!structure) return {size()};
    return std::vector<Index>(static_cast<std::size_t>(structure->pieces()),
                              structure->samples());
  }

  /// Q z without the diagonal regularization.
  VectorXd q_times(const VectorXd& z) const {
    if (structure) return structure->spread(structure->H * structure->combine(z));
    return Q * z;
  }

  MatrixXd dense_q() const {
    if (!structure) return Q;
    const auto& st = *structure;
    const Index l = st.samples();
    const Index k = st.pieces();
    MatrixXd out(l * k, l * k);
    for (Index a = 0; a < k; ++a) {
      for (Index b2 = 0; b2 < k; ++b2) {
        out.block(a * l, b2 * l, l, l) = st.piece_coeffs(a) * st.piece_coeffs(b2) * st.H;
      }
    }
    return out;
  }

  double objective(const VectorXd& z) const { return 0.5 * z.dot(q_times(z)) + c.dot(z); }

  void validate() const {
    const Index n = size();
    if (A.cols() != n || A.rows() != b.size()) {
      throw DomainError("qp: inconsistent constraint dimensions");
    }
    if (!structure) {
      if (Q.rows() != n || Q.cols() != n) throw DomainError("qp: Q has wrong shape");
      const double scale = 1.0 + Q.cwiseAbs().maxCoeff();
      if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
        throw DomainError("qp: Q is not symmetric");
      }
    } else if (structure->samples() * structure->pieces() != n) {
      throw DomainError("qp: block structure does not match problem size");
    }
  }
};

/// acceptable: the target tolerance was not reached but QpOptions::acceptable_tol was.
enum class QpStatus { optimal, acceptable, max_iter, numerical_failure };

inline std::string to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::acceptable: return "acceptable";
    case QpStatus::max_iter: return "max_iter";
    case QpStatus::numerical_failure: return "numerical_failure";
  }
  return "unknown";
}

struct KktResiduals {
  double primal_eq = 0.0;          ///< ||A z - b||_inf
  double dual_stationarity = 0.0;  ///< ||Q z + c - A^T nu - mu||_inf
  double complementarity = 0.0;    ///< z^T mu
};

struct QpSolution {
  VectorXd z;
  VectorXd eq_multipliers;  ///< nu
  VectorXd bound_multipliers;  ///< mu >= 0
  double objective = 0.0;
  KktResiduals kkt_residuals;
  int iterations = 0;
  QpStatus status = QpStatus::numerical_failure;
  bool used_fallback = false;
};

enum class QpRoute { automatic, dense, structured, projected_gradient };

struct QpOptions {
  double tol = 1e-8;
  int max_iter = 200;
  QpRoute route = QpRoute::automatic;
  int fallback_max_iter = 200000;
  /// When positive, an interior-point run that misses `tol` but met this
  /// looser tolerance returns its last such iterate instead of failing.
  double acceptable_tol = 0.0;
};

namespace detail {

/// Dense Newton system [[Q + diag(theta), -A^T], [A, 0]].
class DenseNewton {
 public:
  explicit DenseNewton(const QpProblem& p) : p_(p), q_(p.dense_q()) {}

  bool factorize(const VectorXd& theta) {
    const Index n = p_.size();
    const Index m = p_.rows();
    MatrixXd K = MatrixXd::Zero(n + m, n + m);
    K.topLeftCorner(n, n) = q_;
    K.topLeftCorner(n, n).diagonal() += theta;
    K.topRightCorner(n, m) = -p_.A.transpose();
    K.bottomLeftCorner(m, n) = p_.A;
    // Keeps the factorization defined when A has dependent rows.
    K.bottomRightCorner(m, m).diagonal().setConstant(-1e-13);
    lu_.compute(K);
    return std::isfinite(lu_.rcond()) && lu_.rcond() > 1e-300;
  }

  void solve(const VectorXd& r1, const VectorXd& r2, VectorXd& dx, VectorXd& dy) const {
    const Index n = p_.size();
    VectorXd rhs(n + p_.rows());
    rhs << r1, r2;
    const VectorXd sol = lu_.solve(rhs);
    dx = sol.head(n);
    dy = sol.tail(p_.rows());
  }

 private:
  const QpProblem& p_;
  MatrixXd q_;
  Eigen::PartialPivLU<MatrixXd> lu_;
};

/// Newton system for the block-structured dual. Eliminating the variables of
/// each sample leaves, for s = D dx,
///
///   [ G^{-1} + H   -y ] [ s   ]   [ G^{-1} h ]
///   [ -y^T          0 ] [ dnu ] = [ -r_g     ]
///
/// with G diagonal, g_i = sum_j (d_j - dbar_i)^2 / theta_ij. The bordered
/// matrix is symmetrically scaled so rows with tiny g_i stay O(1), then
/// factored by LU (it is indefinite, and H restricted to the free samples is
/// typically singular along y near the optimum).
class StructuredNewton {
 public:
  explicit StructuredNewton(const QpProblem& p)
      : st_(*p.structure),
        l_(st_.samples()),
        k_(st_.pieces()),
        // With equal piece coefficients the global row is a combination of the
        // simplex rows and carries no information.
        global_row_implied_(st_.piece_coeffs.maxCoeff() == st_.piece_coeffs.minCoeff()) {}

  bool factorize(const VectorXd& theta) {
    inv_theta_ = theta.cwiseInverse();
    csum_.resize(l_);
    dbar_.resize(l_);
    g_.resize(l_);
    for (Index i = 0; i < l_; ++i) {
      double c = 0.0;
      double b = 0.0;
      for (Index j = 0; j < k_; ++j) {
        c += inv_theta_(j * l_ + i);
        b += st_.piece_coeffs(j) * inv_theta_(j * l_ + i);
      }
      csum_(i) = c;
      dbar_(i) = b / c;
      double gi = 0.0;
      for (Index j = 0; j < k_; ++j) {
        const double dev = st_.piece_coeffs(j) - dbar_(i);
        gi += dev * dev * inv_theta_(j * l_ + i);
      }
      g_(i) = std::max(gi, std::numeric_limits<double>::min());
    }
    scale_ = g_.cwiseMin(1.0).cwiseSqrt();
    MatrixXd K(l_ + 1, l_ + 1);
    K.topLeftCorner(l_, l_) = scale_.asDiagonal() * st_.H * scale_.asDiagonal();
    K.topLeftCorner(l_, l_).diagonal() += scale_.cwiseAbs2().cwiseQuotient(g_);
    K.topRightCorner(l_, 1) = -scale_.cwiseProduct(st_.labels);
    K.bottomLeftCorner(1, l_) = K.topRightCorner(l_, 1).transpose();
    K(l_, l_) = 0.0;
    if (global_row_implied_) {
      K.row(l_).setZero();
      K.col(l_).setZero();
      K(l_, l_) = 1.0;
    }
    lu_.compute(K);
    return csum_.allFinite() && g_.allFinite() && std::isfinite(lu_.rcond()) &&
           lu_.rcond() > 1e-300;
  }

  // r2 = (r_global, r_simplex_1..l)
  void solve(const VectorXd& r1, const VectorXd& r2, VectorXd& dx, VectorXd& dy) const {
    solve_reduced(r1, r2, dx, dy);
    VectorXd cx, cy;
    for (int pass = 0; pass < refinement_passes; ++pass) {
      const VectorXd e1 = r1 - apply_top(dx, dy);
      const VectorXd e2 = r2 - apply_bottom(dx);
      solve_reduced(e1, e2, cx, cy);
      dx += cx;
      dy += cy;
    }
  }

  static constexpr int refinement_passes = 1;

 private:
  // (Q + Theta) dx - A^T dy
  VectorXd apply_top(const VectorXd& dx, const VectorXd& dy) const {
    VectorXd out = st_.spread(st_.H * st_.combine(dx) - st_.labels * dy(0));
    for (Index j = 0; j < k_; ++j) {
      out.segment(j * l_, l_) += dx.segment(j * l_, l_).cwiseQuotient(
                                     inv_theta_.segment(j * l_, l_)) -
                                 dy.tail(l_);
    }
    return out;
  }

  // A dx
  VectorXd apply_bottom(const VectorXd& dx) const {
    VectorXd out(l_ + 1);
    out(0) = st_.labels.dot(st_.combine(dx));
    out.tail(l_).setZero();
    for (Index j = 0; j < k_; ++j) out.tail(l_) += dx.segment(j * l_, l_);
    return out;
  }

  double inv(Index i, Index j) const { return inv_theta_(j * l_ + i); }

  void solve_reduced(const VectorXd& r1, const VectorXd& r2, VectorXd& dx,
                     VectorXd& dy) const {
    const double r_global = r2(0);
    const auto r_simplex = r2.tail(l_);
    // s_i = h_i - g_i t_i for the per-sample elimination.
    VectorXd h(l_);
    for (Index i = 0; i < l_; ++i) {
      double acc = dbar_(i) * r_simplex(i);
      for (Index j = 0; j < k_; ++j) {
        acc += (st_.piece_coeffs(j) - dbar_(i)) * inv(i, j) * r1(j * l_ + i);
      }
      h(i) = acc;
    }
    VectorXd rhs(l_ + 1);
    rhs.head(l_) = scale_.cwiseProduct(h.cwiseQuotient(g_));
    rhs(l_) = global_row_implied_ ? 0.0 : -r_global;
    const VectorXd sol = lu_.solve(rhs);
    const VectorXd s = scale_.cwiseProduct(sol.head(l_));
    const double dnu = sol(l_);

    const VectorXd hs = st_.H * s - st_.labels * dnu;
    dx.resize(l_ * k_);
    dy.resize(l_ + 1);
    std::vector<double> q(static_cast<std::size_t>(k_));
    for (Index i = 0; i < l_; ++i) {
      const double t = g_(i) >= 1.0 ? (h(i) - s(i)) / g_(i) : hs(i);
      double qbar = 0.0;
      for (Index j = 0; j < k_; ++j) {
        q[j] = r1(j * l_ + i) - st_.piece_coeffs(j) * t;
        qbar += inv(i, j) / csum_(i) * q[j];
      }
      for (Index j = 0; j < k_; ++j) {
        const double w = inv(i, j) / csum_(i);
        double spread = 0.0;
        for (Index m = 0; m < k_; ++m) spread += inv(i, m) / csum_(i) * (q[j] - q[m]);
        dx(j * l_ + i) = w * r_simplex(i) + inv(i, j) * spread;
      }
      dy(1 + i) = (r_simplex(i) - csum_(i) * qbar) / csum_(i);
    }
    dy(0) = dnu;
  }

  const BlockStructure& st_;
  Index l_;
  Index k_;
  bool global_row_implied_;
  VectorXd inv_theta_, csum_, dbar_, g_, scale_;
  Eigen::PartialPivLU<MatrixXd> lu_;
};

inline double max_step(const VectorXd& v, const VectorXd& dv) {
  double step = 1.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (dv(i) < 0.0) step = std::min(step, -v(i) / dv(i));
  }
  return step;
}

inline KktResiduals residuals(const QpProblem& p, const VectorXd& z, const VectorXd& nu,
                              const VectorXd& mu) {
  KktResiduals r;
  r.primal_eq = (p.A * z - p.b).lpNorm<Eigen::Infinity>();
  r.dual_stationarity =
      (p.q_times(z) + p.diag_reg * z + p.c - p.A.transpose() * nu - mu).lpNorm<Eigen::Infinity>();
  r.complementarity = std::abs(z.dot(mu));
  return r;
}

inline bool within_tolerance(const QpProblem& p, const KktResiduals& r, double tol) {
  const double bnorm = p.b.size() ? p.b.lpNorm<Eigen::Infinity>() : 0.0;
  const double cnorm = p.c.size() ? p.c.lpNorm<Eigen::Infinity>() : 0.0;
  return r.primal_eq <= tol * (1.0 + bnorm) && r.dual_stationarity <= tol * (1.0 + cnorm) &&
         r.complementarity <= tol * static_cast<double>(std::max<Index>(1, p.size()));
}

inline VectorXd default_start(const QpProblem& p) {
  if (!p.structure) return VectorXd::Ones(p.size());
  const auto& st = *p.structure;
  const Index l = st.samples();
  VectorXd z(p.size());
  for (Index j = 0; j < st.pieces(); ++j) {
    z.segment(j * l, l) = st.weights / static_cast<double>(st.pieces());
  }
  return z;
}

template <typename Newton>
QpSolution interior_point(const QpProblem& p, Newton& newton, const QpOptions& opt) {
  const Index n = p.size();
  const double step_fraction = 0.995;

  VectorXd x = default_start(p);
  VectorXd y = VectorXd::Zero(p.rows());
  const double cscale = p.c.size() ? std::max(1.0, p.c.lpNorm<Eigen::Infinity>()) : 1.0;
  VectorXd s = VectorXd::Constant(n, cscale);

  QpSolution out;
  out.status = QpStatus::max_iter;
  int stalled = 0;
  VectorXd dx, dy, dx_aff, dy_aff;
  std::optional<std::tuple<VectorXd, VectorXd, VectorXd, int>> acceptable;

  for (int it = 0; it <= opt.max_iter; ++it) {
    const VectorXd rd = p.q_times(x) + p.diag_reg * x + p.c - p.A.transpose() * y - s;
    const VectorXd rp = p.A * x - p.b;
    KktResiduals res{rp.lpNorm<Eigen::Infinity>(), rd.lpNorm<Eigen::Infinity>(),
                     std::abs(x.dot(s))};
    out.iterations = it;
    if (within_tolerance(p, res, opt.tol)) {
      out.status = QpStatus::optimal;
      break;
    }
    if (opt.acceptable_tol > 0.0 && within_tolerance(p, res, opt.acceptable_tol)) {
      acceptable.emplace(x, y, s, it);
    }
    if (it == opt.max_iter) break;

    const double mu = x.dot(s) / static_cast<double>(n);
    const VectorXd theta = s.cwiseQuotient(x).array() + p.diag_reg;
    if (!newton.factorize(theta)) {
      out.status = QpStatus::numerical_failure;
      break;
    }

    // Predictor.
    newton.solve(-rd - s, -rp, dx_aff, dy_aff);
    const VectorXd ds_aff = -s - s.cwiseQuotient(x).cwiseProduct(dx_aff);
    const double ap = max_step(x, dx_aff);
    const double ad = max_step(s, ds_aff);
    const double mu_aff =
        (x + ap * dx_aff).dot(s + ad * ds_aff) / static_cast<double>(n);
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    // Corrector.
    const VectorXd rc =
        (x.cwiseProduct(s) + dx_aff.cwiseProduct(ds_aff)).array() - sigma * mu;
    newton.solve(-rd - rc.cwiseQuotient(x), -rp, dx, dy);
    const VectorXd ds = (-rc - s.cwiseProduct(dx)).cwiseQuotient(x);
    if (!dx.allFinite() || !dy.allFinite() || !ds.allFinite()) {
      out.status = QpStatus::numerical_failure;
      break;
    }
    const double alpha =
        std::min(1.0, step_fraction * std::min(max_step(x, dx), max_step(s, ds)));
    stalled = alpha < 1e-10 ? stalled + 1 : 0;
    if (stalled >= 5) {
      out.status = QpStatus::numerical_failure;
      break;
    }
    x += alpha * dx;
    y += alpha * dy;
    s += alpha * ds;
  }

  if (out.status != QpStatus::optimal && acceptable) {
    std::tie(x, y, s, std::ignore) = *acceptable;
    out.status = QpStatus::acceptable;
  }
  out.z = x;
  out.eq_multipliers = y;
  out.bound_multipliers = s;
  out.objective = p.objective(x);
  out.kkt_residuals = residuals(p, x, y, s);
  return out;
}

/// Euclidean projection of v onto {z >= 0, sum z = total}.
inline void project_simplex(std::vector<double>& v, double total) {
  std::vector<double> u(v);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double shift = 0.0;
  for (std::size_t r = 0; r < u.size(); ++r) {
    cumulative += u[r];
    const double candidate = (cumulative - total) / static_cast<double>(r + 1);
    if (u[r] - candidate > 0.0) shift = candidate;
  }
  for (double& e : v) e = std::max(0.0, e - shift);
}

/// Projection onto the dual feasible set: per-sample simplices intersected
/// with the global row. Bisection on the multiplier of the global row.
inline VectorXd project_feasible(const BlockStructure& st, const VectorXd& v) {
  const Index l = st.samples();
  const Index k = st.pieces();
  std::vector<double> block(static_cast<std::size_t>(k));
  auto project_at = [&](double theta, VectorXd& z) {
    z.resize(l * k);
    for (Index i = 0; i < l; ++i) {
      for (Index j = 0; j < k; ++j) {
        block[static_cast<std::size_t>(j)] =
            v(j * l + i) - theta * st.labels(i) * st.piece_coeffs(j);
      }
      project_simplex(block, st.weights(i));
      for (Index j = 0; j < k; ++j) z(j * l + i) = block[static_cast<std::size_t>(j)];
    }
    return st.labels.dot(st.combine(z));
  };
  VectorXd z;
  double lo = -1.0;
  double hi = 1.0;
  // g(theta) is non-increasing; bracket the root.
  while (project_at(lo, z) < 0.0 && lo > -1e12) lo *= 2.0;
  while (project_at(hi, z) > 0.0 && hi < 1e12) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (project_at(mid, z) > 0.0 ? lo : hi) = mid;
  }
  project_at(0.5 * (lo + hi), z);
  return z;
}

inline double largest_eigenvalue(const MatrixXd& H) {
  if (H.size() == 0) return 0.0;
  VectorXd v = VectorXd::Ones(H.rows()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    VectorXd w = H * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - lambda) <= 1e-10 * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

}  // namespace detail

/// Accelerated projected gradient on the structured dual. Matrix-free: Q is
/// only touched through s = D z.
inline QpSolution solve_projected_gradient(const QpProblem& p, const QpOptions& opt) {
  if (!p.structure) throw DomainError("qp: projected gradient needs a block structure");
  const auto& st = *p.structure;
  const double dnorm2 = st.piece_coeffs.squaredNorm();
  const double lipschitz =
      std::max(1e-12, 1.01 * detail::largest_eigenvalue(st.H) * dnorm2 + p.diag_reg);
  auto gradient = [&](const VectorXd& z) {
    return VectorXd(p.q_times(z) + p.diag_reg * z + p.c);
  };

  VectorXd z = detail::project_feasible(st, detail::default_start(p));
  VectorXd yk = z;
  double t = 1.0;
  QpSolution out;
  out.status = QpStatus::max_iter;
  const double scale = 1.0 + st.weights.maxCoeff();
  double pg = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < opt.fallback_max_iter; ++it) {
    const VectorXd next = detail::project_feasible(st, yk - gradient(yk) / lipschitz);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    // Restart momentum when the objective goes up.
    if (p.objective(next) > p.objective(z)) {
      yk = z;
      t = 1.0;
      continue;
    }
    yk = next + ((t - 1.0) / t_next) * (next - z);
    const double change = (next - z).lpNorm<Eigen::Infinity>();
    z = next;
    t = t_next;
    if (change <= opt.tol * scale * 1e-2) {
      pg = lipschitz *
           (z - detail::project_feasible(st, z - gradient(z) / lipschitz)).lpNorm<Eigen::Infinity>();
      if (pg <= opt.tol * (1.0 + p.c.lpNorm<Eigen::Infinity>())) {
        out.status = QpStatus::optimal;
        break;
      }
    }
  }
  if (!std::isfinite(pg)) {
    pg = lipschitz *
         (z - detail::project_feasible(st, z - gradient(z) / lipschitz)).lpNorm<Eigen::Infinity>();
  }
  out.z = z;
  out.objective = p.objective(z);
  out.iterations = it;
  out.kkt_residuals.primal_eq = (p.A * z - p.b).lpNorm<Eigen::Infinity>();
  out.kkt_residuals.dual_stationarity = pg;
  out.kkt_residuals.complementarity = 0.0;
  out.used_fallback = true;
  return out;
}

/// Solves the QP. Structured problems use the reduced Newton system and fall
/// back to projected gradient on numerical failure.
inline QpSolution solve(const QpProblem& p, const QpOptions& opt = {}) {
  if (!(opt.tol > 0.0)) throw DomainError("qp: tolerance must be positive");
  p.validate();
  QpRoute route = opt.route;
  if (route == QpRoute::automatic) {
    route = p.structure ? QpRoute::structured : QpRoute::dense;
  }
  if (route == QpRoute::projected_gradient) return solve_projected_gradient(p, opt);

  QpSolution sol;
  if (route == QpRoute::structured) {
    if (!p.structure) throw DomainError("qp: structured route needs a block structure");
    detail::StructuredNewton newton(p);
    sol = detail::interior_point(p, newton, opt);
    if (sol.status == QpStatus::numerical_failure) {
      const int ipm_iterations = sol.iterations;
      sol = solve_projected_gradient(p, opt);
      sol.iterations += ipm_iterations;
    }
  } else {
    detail::DenseNewton newton(p);
    sol = detail::interior_point(p, newton, opt);
  }

  if (sol.status != QpStatus::optimal && sol.status != QpStatus::acceptable) {
    const double bnorm = p.b.size() ? p.b.lpNorm<Eigen::Infinity>() : 0.0;
    const double rel = sol.kkt_residuals.primal_eq / (1.0 + bnorm);
    if (rel > std::sqrt(opt.tol)) {
      throw InfeasibleError("qp: equality constraints not satisfiable with z >= 0 "
                            "(relative residual " + std::to_string(rel) + ")",
                            rel);
    }
  }
  return sol;
}

/// Builds the dual of the k-piece-wise linear SVM:
///
///   min 1/2 s^T H s - sum_i s_i - sum_m eps_m sum_i a^(m)_i
///   s.t. sum_i s_i y_i = 0,  a_i + sum_m a^(m)_i = C_i,  all >= 0
///
/// with s_i = a_i - sum_m tau_m a^(m)_i. Throws InfeasibleError when the
/// global row cannot be met on the per-sample simplices.
inline QpProblem assemble_structured(const MatrixXd& H, const LossSpec& loss,
                                     const VectorXd& C, const VectorXd& y) {
  if (loss.k() < 2) {
    throw DomainError("qp: the dual needs k >= 2 pieces (k = 1 is unbounded)");
  }
  const Index l = H.rows();
  if (H.cols() != l || C.size() != l || y.size() != l) {
    throw DomainError("qp: H, C and y sizes disagree");
  }
  if (l == 0) throw DomainError("qp: empty problem");
  for (Index i = 0; i < l; ++i) {
    if (!(C(i) > 0.0) || !std::isfinite(C(i))) throw DomainError("qp: C_i must be positive");
    if (y(i) != 1.0 && y(i) != -1.0) throw DomainError("qp: labels must be +-1");
  }
  const Index k = loss.k();

  BlockStructure st;
  st.H = H;
  st.piece_coeffs.resize(k);
  for (Index j = 0; j < k; ++j) st.piece_coeffs(j) = loss.slope(static_cast<std::size_t>(j));
  st.labels = y;
  st.weights = C;

  // Range of sum_i y_i s_i over the simplices.
  const double dmin = st.piece_coeffs.minCoeff();
  const double dmax = st.piece_coeffs.maxCoeff();
  double lo = 0.0;
  double hi = 0.0;
  for (Index i = 0; i < l; ++i) {
    const double a = y(i) * C(i) * dmin;
    const double b = y(i) * C(i) * dmax;
    lo += std::min(a, b);
    hi += std::max(a, b);
  }
  const double slack = 1e-12 * C.sum() * std::max(1.0, std::max(std::abs(dmin), std::abs(dmax)));
  if (lo > slack || hi < -slack) {
    const double gap = lo > 0.0 ? lo : -hi;
    throw InfeasibleError("qp: the global equality row cannot be met (sum y_i s_i ranges over [" +
                              std::to_string(lo) + ", " + std::to_string(hi) + "])",
                          gap);
  }

  QpProblem p;
  p.c.resize(l * k);
  for (Index j = 0; j < k; ++j) {
    p.c.segment(j * l, l).setConstant(-st.piece_coeffs(j) -
                                      loss.intercept(static_cast<std::size_t>(j)));
  }
  p.A = MatrixXd::Zero(l + 1, l * k);
  p.b = VectorXd::Zero(l + 1);
  for (Index j = 0; j < k; ++j) {
    for (Index i = 0; i < l; ++i) {
      p.A(0, j * l + i) = y(i) * st.piece_coeffs(j);
      p.A(1 + i, j * l + i) = 1.0;
    }
  }
  p.b.tail(l) = C;
  const double trace = H.trace();
  p.diag_reg = trace > 0.0 ? 1e-10 * trace / static_cast<double>(l) : 0.0;
  p.structure = std::move(st);
  return p;
}

}  // namespace kplsvm
