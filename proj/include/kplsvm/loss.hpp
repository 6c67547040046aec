#pragma once

// k-piece-wise linear convex loss
//
//   L(u) = max(u, -tau_1 u + eps_1, ..., -tau_{k-1} u + eps_{k-1})
//
// The identity piece is always present; the remaining k-1 pieces are
// parameterized by (tau_m, eps_m).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kplsvm/errors.hpp"

namespace kplsvm {

struct AffinePiece {
  double slope = 1.0;
  double intercept = 0.0;

  double operator()(double u) const noexcept { return slope * u + intercept; }
  bool is_identity() const noexcept { return slope == 1.0 && intercept == 0.0; }
  friend bool operator==(const AffinePiece&, const AffinePiece&) = default;
};

class LossSpec {
 public:
  /// k = 1, the identity-only loss L(u) = u.
  LossSpec() = default;

  LossSpec(std::vector<double> taus, std::vector<double> epsilons)
      : taus_(std::move(taus)), epsilons_(std::move(epsilons)) {
    if (taus_.size() != epsilons_.size()) {
      throw DomainError("loss: tau and epsilon lists differ in length (" +
                        std::to_string(taus_.size()) + " vs " +
                        std::to_string(epsilons_.size()) + ")");
    }
    for (std::size_t m = 0; m < taus_.size(); ++m) {
      if (!std::isfinite(taus_[m]) || !std::isfinite(epsilons_[m])) {
        throw DomainError("loss: non-finite parameter at piece " +
                          std::to_string(m + 1));
      }
    }
  }

  static LossSpec hinge() { return LossSpec({0.0}, {0.0}); }
  static LossSpec pinball(double tau) { return LossSpec({tau}, {0.0}); }

  /// Number of affine pieces including the identity.
  int k() const noexcept { return static_cast<int>(taus_.size()) + 1; }

  std::span<const double> taus() const noexcept { return taus_; }
  std::span<const double> epsilons() const noexcept { return epsilons_; }
  double tau(std::size_t m) const { return taus_.at(m); }
  double epsilon(std::size_t m) const { return epsilons_.at(m); }

  /// Slope of piece j in the stacked order (identity first): 1, -tau_1, ...
  double slope(std::size_t j) const { return j == 0 ? 1.0 : -taus_.at(j - 1); }
  double intercept(std::size_t j) const {
    return j == 0 ? 0.0 : epsilons_.at(j - 1);
  }

  std::vector<AffinePiece> pieces() const {
    std::vector<AffinePiece> out;
    out.reserve(taus_.size() + 1);
    out.push_back({1.0, 0.0});
    for (std::size_t m = 0; m < taus_.size(); ++m) {
      out.push_back({-taus_[m], epsilons_[m]});
    }
    return out;
  }

  /// Drops exact duplicate (tau, eps) pairs among the non-identity pieces,
  /// keeping first occurrences. The loss function is unchanged.
  LossSpec canonical() const {
    std::vector<double> t;
    std::vector<double> e;
    for (std::size_t m = 0; m < taus_.size(); ++m) {
      bool seen = false;
      for (std::size_t r = 0; r < t.size(); ++r) {
        if (t[r] == taus_[m] && e[r] == epsilons_[m]) {
          seen = true;
          break;
        }
      }
      if (!seen) {
        t.push_back(taus_[m]);
        e.push_back(epsilons_[m]);
      }
    }
    return LossSpec(std::move(t), std::move(e));
  }

  std::string to_string() const {
    std::ostringstream os;
    os << "k=" << k() << " tau=(";
    for (std::size_t m = 0; m < taus_.size(); ++m) os << (m ? "," : "") << taus_[m];
    os << ") eps=(";
    for (std::size_t m = 0; m < epsilons_.size(); ++m) {
      os << (m ? "," : "") << epsilons_[m];
    }
    os << ")";
    return os.str();
  }

  friend bool operator==(const LossSpec&, const LossSpec&) = default;

 private:
  std::vector<double> taus_;
  std::vector<double> epsilons_;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;

  bool contains(double v) const noexcept { return lower <= v && v <= upper; }
  bool contains(const Interval& o) const noexcept {
    return lower <= o.lower && o.upper <= upper;
  }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct LossPropertyReport {
  double lipschitz_constant = 1.0;
  /// Strictly positive right-derivative at u = 1, checked on the piece set.
  bool derivative_condition_holds = true;
  /// The algebraic sufficient condition eps_i / tau_i != 1 (tau_i != 0).
  bool algebraic_derivative_condition = true;
  bool nonnegativity_condition_holds = true;
  /// Pieces with tau = -1 are parallel to the identity and are left out of
  /// the eps_j / (1 + tau_j) criterion.
  int unit_slope_pieces_skipped = 0;
  /// Exact infimum of L over the real line (-inf when unbounded below).
  double loss_minimum = 0.0;
  double influence_lower = 0.0;
  double influence_upper = 1.0;
};

namespace detail {

inline void require_finite(double u, const char* what) {
  if (!std::isfinite(u)) {
    throw DomainError(std::string(what) + ": non-finite argument");
  }
}

// Relative tolerance for deciding that a piece attains the max.
inline double active_tolerance(double value) {
  return 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(value));
}

}  // namespace detail

inline double eval_loss(const LossSpec& spec, double u) {
  detail::require_finite(u, "eval_loss");
  double best = u;
  const auto taus = spec.taus();
  const auto eps = spec.epsilons();
  for (std::size_t m = 0; m < taus.size(); ++m) {
    best = std::max(best, -taus[m] * u + eps[m]);
  }
  return best;
}

/// Subdifferential of L at u: [min, max] of the slopes of the pieces that
/// attain the maximum.
inline Interval eval_subgradient(const LossSpec& spec, double u) {
  const double value = eval_loss(spec, u);
  const double tol = detail::active_tolerance(value);
  Interval out{std::numeric_limits<double>::infinity(),
               -std::numeric_limits<double>::infinity()};
  for (const AffinePiece& p : spec.pieces()) {
    if (p(u) >= value - tol) {
      out.lower = std::min(out.lower, p.slope);
      out.upper = std::max(out.upper, p.slope);
    }
  }
  return out;
}

inline LossPropertyReport check_properties(const LossSpec& spec) {
  LossPropertyReport report;
  const auto taus = spec.taus();
  const auto eps = spec.epsilons();
  const auto pieces = spec.pieces();

  report.influence_lower = 1.0;
  report.influence_upper = 1.0;
  for (double t : taus) {
    report.lipschitz_constant = std::max(report.lipschitz_constant, std::abs(t));
    report.influence_lower = std::min(report.influence_lower, -t);
    report.influence_upper = std::max(report.influence_upper, -t);
  }

  for (std::size_t m = 0; m < taus.size(); ++m) {
    if (taus[m] != 0.0 && eps[m] / taus[m] == 1.0) {
      report.algebraic_derivative_condition = false;
    }
  }
  report.derivative_condition_holds = eval_subgradient(spec, 1.0).upper > 0.0;

  for (std::size_t i = 0; i < taus.size(); ++i) {
    for (std::size_t j = 0; j < taus.size(); ++j) {
      if (i == j || taus[i] == taus[j]) continue;
      const double cross = (eps[i] * taus[j] - eps[j] * taus[i]) / (taus[j] - taus[i]);
      if (cross < 0.0) report.nonnegativity_condition_holds = false;
    }
  }
  for (std::size_t j = 0; j < taus.size(); ++j) {
    if (taus[j] == -1.0) {
      ++report.unit_slope_pieces_skipped;
      continue;
    }
    if (eps[j] / (1.0 + taus[j]) < 0.0) report.nonnegativity_condition_holds = false;
  }

  // A max of affine pieces is bounded below iff some slope is <= 0; the
  // infimum is then attained at a pairwise intersection.
  const bool bounded = std::any_of(pieces.begin(), pieces.end(),
                                   [](const AffinePiece& p) { return p.slope <= 0.0; });
  if (!bounded) {
    report.loss_minimum = -std::numeric_limits<double>::infinity();
  } else {
    double lowest = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < pieces.size(); ++a) {
      for (std::size_t b = a + 1; b < pieces.size(); ++b) {
        if (pieces[a].slope == pieces[b].slope) continue;
        const double u = (pieces[b].intercept - pieces[a].intercept) /
                         (pieces[a].slope - pieces[b].slope);
        lowest = std::min(lowest, eval_loss(spec, u));
      }
    }
    report.loss_minimum = lowest;
  }
  return report;
}

/// Upper envelope of the pieces: L has slope slopes[r] on
/// (kinks[r-1], kinks[r]), with kinks ascending and slopes strictly increasing.
struct Envelope {
  std::vector<double> kinks;
  std::vector<double> slopes;
};

inline Envelope upper_envelope(const LossSpec& spec) {
  std::vector<AffinePiece> lines = spec.pieces();
  std::sort(lines.begin(), lines.end(), [](const AffinePiece& a, const AffinePiece& b) {
    return a.slope != b.slope ? a.slope < b.slope : a.intercept < b.intercept;
  });
  // Equal slopes: only the highest intercept matters.
  std::vector<AffinePiece> distinct;
  for (const AffinePiece& p : lines) {
    if (!distinct.empty() && distinct.back().slope == p.slope) {
      distinct.back() = p;
    } else {
      distinct.push_back(p);
    }
  }
  auto cross = [](const AffinePiece& a, const AffinePiece& b) {
    return (a.intercept - b.intercept) / (b.slope - a.slope);
  };
  std::vector<AffinePiece> hull;
  for (const AffinePiece& p : distinct) {
    while (hull.size() >= 2 &&
           cross(hull[hull.size() - 2], p) <= cross(hull[hull.size() - 2], hull.back())) {
      hull.pop_back();
    }
    hull.push_back(p);
  }
  Envelope env;
  for (std::size_t r = 0; r < hull.size(); ++r) {
    env.slopes.push_back(hull[r].slope);
    if (r > 0) env.kinks.push_back(cross(hull[r - 1], hull[r]));
  }
  return env;
}

/// Builds the LossSpec whose value is the pointwise max of `pieces`.
/// One piece must be the identity (slope 1, intercept 0); exact duplicates
/// are dropped.
inline LossSpec fit_from_pieces(std::span<const AffinePiece> pieces) {
  if (pieces.empty()) throw RepresentationError("fit_from_pieces: no pieces given");
  bool has_identity = false;
  std::vector<AffinePiece> distinct;
  for (const AffinePiece& p : pieces) {
    if (!std::isfinite(p.slope) || !std::isfinite(p.intercept)) {
      throw DomainError("fit_from_pieces: non-finite piece");
    }
    if (p.is_identity()) {
      has_identity = true;
      continue;
    }
    if (std::find(distinct.begin(), distinct.end(), p) == distinct.end()) {
      distinct.push_back(p);
    }
  }
  if (!has_identity) {
    throw RepresentationError(
        "fit_from_pieces: no identity piece (slope 1, intercept 0); the family "
        "only represents functions equal to u on some interval");
  }
  std::vector<double> taus;
  std::vector<double> eps;
  for (const AffinePiece& p : distinct) {
    taus.push_back(-p.slope);
    eps.push_back(p.intercept);
  }
  return LossSpec(std::move(taus), std::move(eps));
}

}  // namespace kplsvm
