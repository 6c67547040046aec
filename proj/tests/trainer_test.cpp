#include "kplsvm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

namespace kplsvm {
namespace {

Dataset load_monk(int which) {
  const std::string base = std::string(KPLSVM_DATA_DIR) + "/monks-" + std::to_string(which);
  return load_predefined(base + ".train.csv", base + ".test.csv");
}

double test_accuracy(const TrainedModel& m, const Dataset& test) {
  return accuracy(predict(m, test.X), test.y);
}

// max over pieces (1, 0), (-tau_m, eps_m), written out independently of loss.hpp
double loss_ref(const std::vector<double>& taus, const std::vector<double>& eps, double u) {
  double v = u;
  for (std::size_t m = 0; m < taus.size(); ++m) v = std::max(v, -taus[m] * u + eps[m]);
  return v;
}

struct Primal {
  Eigen::MatrixXd X;
  Eigen::VectorXd y, C;
  std::vector<double> taus, eps;

  double value(const Eigen::VectorXd& w, double b) const {
    double p = 0.5 * w.squaredNorm();
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      p += C(i) * loss_ref(taus, eps, 1.0 - y(i) * (X.row(i).dot(w) + b));
    }
    return p;
  }

  // The objective in b is convex piecewise linear; its minimum sits on a
  // breakpoint where some sample reaches a kink of the loss.
  std::pair<double, double> best_b(const Eigen::VectorXd& w) const {
    std::vector<double> kinks;
    std::vector<std::pair<double, double>> pieces{{1.0, 0.0}};
    for (std::size_t m = 0; m < taus.size(); ++m) pieces.emplace_back(-taus[m], eps[m]);
    for (std::size_t a = 0; a < pieces.size(); ++a)
      for (std::size_t c = a + 1; c < pieces.size(); ++c)
        if (pieces[a].first != pieces[c].first)
          kinks.push_back((pieces[c].second - pieces[a].second) / (pieces[a].first - pieces[c].first));
    double best = std::numeric_limits<double>::infinity();
    double arg = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      for (double u : kinks) {
        const double b = y(i) * (1.0 - u) - X.row(i).dot(w);
        const double v = value(w, b);
        if (v < best) {
          best = v;
          arg = b;
        }
      }
    }
    return {arg, best};
  }
};

// Golden-section search of a convex function on [lo, hi].
template <typename F>
double golden(F f, double lo, double hi, int iters = 120) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < iters; ++it) {
    if (fc < fd) {
      b = d; d = c; fd = fc;
      c = b - r * (b - a); fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + r * (b - a); fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

// min over (w1, w2) of min_b P, by nested golden sections.
double brute_force_primal(const Primal& P, double box) {
  auto inner = [&](double w1) {
    return P.best_b((Eigen::VectorXd(2) << w1, golden([&](double w2) {
                      return P.best_b((Eigen::VectorXd(2) << w1, w2).finished()).second;
                    }, -box, box)).finished()).second;
  };
  const double w1 = golden(inner, -box, box);
  return inner(w1);
}

struct Candidates {
  std::vector<double> case_a, case_b;
};

Candidates bias_candidates(const DualState& d, const Eigen::VectorXd& g, double thr) {
  Candidates c;
  const auto& L = d.loss;
  for (Eigen::Index j = 0; j < d.samples(); ++j) {
    const double cut = thr * d.C(j);
    for (int m = 1; m < L.k(); ++m) {
      if (d.multiplier(j, 0) > cut && d.multiplier(j, m) > cut) {
        c.case_a.push_back(d.y(j) * (1.0 - L.epsilon(m - 1) / (1.0 + L.tau(m - 1))) - g(j));
      }
      for (int n = m + 1; n < L.k(); ++n) {
        if (d.multiplier(j, m) > cut && d.multiplier(j, n) > cut) {
          const double u = (L.epsilon(n - 1) - L.epsilon(m - 1)) / (L.tau(n - 1) - L.tau(m - 1));
          c.case_b.push_back(d.y(j) * (1.0 - u) - g(j));
        }
      }
    }
  }
  return c;
}

TEST(Trainer, SymmetricPairHasZeroBias) {
  Eigen::MatrixXd X(2, 1);
  X << -1.0, 1.0;
  const Eigen::VectorXd y = (Eigen::VectorXd(2) << -1.0, 1.0).finished();
  TrainParams p;
  p.c0 = 10.0;
  const TrainResult r = train_detailed(X, y, p);
  EXPECT_NEAR(r.model.bias, 0.0, 1e-9);
  EXPECT_EQ(predict(r.model, X), y);
  EXPECT_EQ(predict(r.model, Eigen::MatrixXd::Constant(1, 1, -0.5))(0), -1.0);
  EXPECT_NEAR(decision_scores(r.model, Eigen::MatrixXd::Zero(1, 1))(0), 0.0, 1e-9);
  // hard margin: w = 1
  EXPECT_NEAR(decision_scores(r.model, Eigen::MatrixXd::Constant(1, 1, 1.0))(0), 1.0, 1e-8);
}

TEST(Trainer, ScoreZeroPredictsPositive) {
  TrainedModel m;
  m.support_x.resize(0, 2);
  m.bias = 0.0;
  EXPECT_EQ(predict(m, Eigen::MatrixXd::Zero(3, 2)), Eigen::VectorXd::Ones(3));
}

TEST(Trainer, HingeBiasIsMarginVectorFormula) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd X(30, 2);
  Eigen::VectorXd y(30);
  for (int i = 0; i < 30; ++i) {
    y(i) = i % 2 ? 1.0 : -1.0;
    X(i, 0) = n01(rng) + y(i);
    X(i, 1) = n01(rng);
  }
  TrainParams p;
  p.c0 = 0.5;
  const TrainResult r = train_detailed(X, y, p);
  const Eigen::VectorXd g = r.dual.gram * r.full_beta;
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index j = 0; j < 30; ++j) {
    const double cut = p.active_threshold * r.dual.C(j);
    if (r.dual.multiplier(j, 0) > cut && r.dual.multiplier(j, 1) > cut) {
      sum += y(j) - g(j);
      ++count;
    }
  }
  ASSERT_GT(count, 0);
  EXPECT_EQ(r.model.diagnostics.bias_candidates_used, count);
  EXPECT_NEAR(r.model.bias, sum / count, 1e-12);
}

TEST(Trainer, ThreePieceCandidatesAgreeWithEachOtherAndBruteForce) {
  const std::vector<double> taus{-0.5, 1.0};
  const std::vector<double> eps{0.5, -3.0};
  bool checked = false;
  for (std::uint64_t seed = 0; seed < 200 && !checked; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd X(6, 2);
    Eigen::VectorXd y(6);
    for (int i = 0; i < 6; ++i) {
      y(i) = i < 3 ? 1.0 : -1.0;
      X(i, 0) = 0.8 * n01(rng) + 0.7 * y(i);
      X(i, 1) = 0.8 * n01(rng);
    }
    TrainParams p;
    p.c0 = 2.0;
    p.loss = LossSpec(taus, eps);
    const TrainResult r = train_detailed(X, y, p);
    const Candidates c = bias_candidates(r.dual, r.dual.gram * r.full_beta, p.active_threshold);
    if (c.case_a.empty() || c.case_b.empty()) continue;
    checked = true;
    std::vector<double> all = c.case_a;
    all.insert(all.end(), c.case_b.begin(), c.case_b.end());
    const auto [lo, hi] = std::minmax_element(all.begin(), all.end());
    EXPECT_LE(*hi - *lo, 1e-6) << "seed " << seed;
    EXPECT_EQ(r.model.diagnostics.bias_candidates_used, static_cast<int>(all.size()));

    Primal P{X, y, r.dual.C, taus, eps};
    const Eigen::VectorXd w = X.transpose() * r.full_beta;
    const double oracle = brute_force_primal(P, 10.0);
    const double model_p = P.value(w, r.model.bias);
    EXPECT_NEAR(model_p, oracle, 1e-6 * (1.0 + std::abs(oracle))) << "seed " << seed;
    // b is optimal for the trained w
    EXPECT_LE(model_p - P.best_b(w).second, 1e-7);
  }
  EXPECT_TRUE(checked) << "no instance exercised both candidate cases";
}

TEST(Trainer, KktResidualsSmallOnSeparableData) {
  Eigen::MatrixXd X(8, 2);
  X << 2, 2, 3, 1, 2.5, 3, 4, 2, -2, -2, -3, -1, -2.5, -3, -4, -1;
  Eigen::VectorXd y(8);
  y << 1, 1, 1, 1, -1, -1, -1, -1;
  TrainParams p;
  p.c0 = 100.0;
  const TrainResult r = train_detailed(X, y, p);
  EXPECT_LE(r.kkt.max_residual(), 1e-6);
  EXPECT_LE(r.kkt.duality_gap, 1e-5);
  for (Eigen::Index i = 0; i < 8; ++i) EXPECT_NEAR(r.kkt.xi(i), 0.0, 1e-6);
  EXPECT_EQ(predict(r.model, X), y);
}

TEST(Trainer, PerturbedMultiplierBreaksComplementarity) {
  const Dataset ds = load_monk(3);
  TrainParams p;
  p.c0 = 1.0;
  p.loss = LossSpec({-0.4, 1.0}, {0.5, -3.5});
  const TrainResult r = fit_detailed(ds.train(), p);
  ASSERT_LE(r.kkt.complementarity_max, 1e-6);
  // pick an inactive piece with a clear gap
  const Eigen::VectorXd g = r.dual.gram * r.full_beta;
  const auto pieces = p.loss.pieces();
  const Eigen::Index l = r.dual.samples();
  Eigen::Index at = -1;
  double gap = 0.0;
  for (Eigen::Index i = 0; i < l; ++i) {
    const double u = 1.0 - r.dual.y(i) * (g(i) + r.model.bias);
    for (std::size_t j = 0; j < pieces.size(); ++j) {
      const double gj = r.kkt.xi(i) - pieces[j](u);
      if (gj > gap) {
        gap = gj;
        at = static_cast<Eigen::Index>(j) * l + i;
      }
    }
  }
  ASSERT_GE(at, 0);
  ASSERT_GT(gap, 0.1);
  DualState bad = r.dual;
  bad.z(at) += 0.1;
  const KktReport k = verify_kkt(bad, r.full_beta, r.model.bias);
  EXPECT_GT(k.complementarity_max, 1e-3);
}

TEST(Trainer, SimplexRowsHoldToSolverPrecision) {
  for (int which : {1, 2, 3}) {
    const Dataset ds = load_monk(which);
    TrainParams p;
    p.c0 = 0.5;
    p.loss = LossSpec({0.2, -0.6}, {1.0, -2.0});
    const TrainResult r = fit_detailed(ds.train(), p);
    const Eigen::Index l = r.dual.samples();
    for (Eigen::Index i = 0; i < l; ++i) {
      double total = 0.0;
      for (int j = 0; j < p.loss.k(); ++j) total += r.dual.multiplier(i, static_cast<std::size_t>(j));
      EXPECT_LE(std::abs(r.dual.C(i) - total), 1e-8) << "monk " << which << " row " << i;
    }
    const Eigen::VectorXd s = r.dual.combined();
    EXPECT_LE(std::abs(s.dot(r.dual.y)), 1e-6);
    EXPECT_GE(r.full_beta.dot(r.dual.gram * r.full_beta), 0.0);
  }
}

TEST(Trainer, OutlierCoefficientIsBounded) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  const LossSpec loss({-0.8, 1.5}, {0.5, -2.0});
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd X(40, 2);
    Eigen::VectorXd y(40);
    for (int i = 0; i < 40; ++i) {
      y(i) = i % 2 ? 1.0 : -1.0;
      X(i, 0) = n01(rng) + y(i);
      X(i, 1) = n01(rng);
    }
    X.row(0) << 100.0 * y(0), 50.0;  // far on the wrong side
    X(0, 0) = -X(0, 0);
    TrainParams p;
    p.loss = loss;
    const TrainResult r = train_detailed(X, y, p);
    const double s0 = r.dual.combined()(0);
    EXPECT_LE(std::abs(s0), r.dual.C(0) * 1.5 + 1e-9);
  }
}

TEST(Trainer, PruningKeepsTrainingScores) {
  const Dataset ds = load_monk(1);
  TrainParams p;
  p.c0 = 4.0;
  const TrainResult r = fit_detailed(ds.train(), p);
  const Eigen::VectorXd full = r.dual.gram * r.full_beta +
                               Eigen::VectorXd::Constant(r.dual.samples(), r.model.bias);
  const Eigen::VectorXd stored = decision_scores(r.model, ds.train().X);
  EXPECT_LE((full - stored).lpNorm<Eigen::Infinity>(), 1e-6);
  EXPECT_LE(r.model.support_count(), ds.train().rows());
}

TEST(Trainer, ClassWeights) {
  Eigen::VectorXd y(15);
  y << 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, -1, -1, -1, -1, -1;
  const Eigen::VectorXd C = sample_weights(y, 0.5, true);
  EXPECT_DOUBLE_EQ(C(0), 0.5);
  EXPECT_DOUBLE_EQ(C(14), 1.0);
  EXPECT_EQ(sample_weights(y, 0.5, false), Eigen::VectorXd::Constant(15, 0.5));
}

TEST(Trainer, RejectsBadInput) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(4, 2);
  TrainParams p;
  EXPECT_THROW(train(X, Eigen::VectorXd::Ones(4), p), TrainingError);
  const Eigen::VectorXd y = (Eigen::VectorXd(4) << 1, -1, 1, -1).finished();
  p.loss = LossSpec({}, {});
  EXPECT_THROW(train(X, y, p), DomainError);
  p.loss = LossSpec::hinge();
  p.c0 = 0.0;
  EXPECT_THROW(train(X, y, p), DomainError);
  p.c0 = 1.0;
  const TrainedModel m = train(X, y, p);
  EXPECT_THROW(predict(m, Eigen::MatrixXd::Zero(1, 3)), DomainError);
  X(0, 0) = std::nan("");
  EXPECT_THROW(train(X, y, p), DomainError);
}

TEST(Trainer, FallbackBiasMinimizesPrimal) {
  // tau = -1 with eps = 0 is the linear loss u: no candidate is admissible.
  const Dataset ds = load_monk(2);
  TrainParams p;
  p.c0 = 0.0078125;
  p.loss = LossSpec({-1.0, 0.5}, {0.0, 0.0});
  const TrainResult r = fit_detailed(ds.train(), p);
  const Eigen::VectorXd g = r.dual.gram * r.full_beta;
  auto P = [&](double b) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      v += r.dual.C(i) * loss_ref({-1.0, 0.5}, {0.0, 0.0}, 1.0 - r.dual.y(i) * (g(i) + b));
    }
    return v;
  };
  const double at = P(r.model.bias);
  for (double d : {-1e-3, 1e-3, -0.1, 0.1, -1.0, 1.0}) EXPECT_LE(at, P(r.model.bias + d) + 1e-12);
}

TEST(Trainer, Monk3MatchesReportedAccuracy) {
  const Dataset ds = load_monk(3);
  TrainParams p;
  p.c0 = 0.125;
  EXPECT_NEAR(test_accuracy(fit(ds.train(), p), ds.test()), 82.639, 2.0);
  p.loss = LossSpec({-0.4, 1.0}, {0.5, -3.5});
  EXPECT_NEAR(test_accuracy(fit(ds.train(), p), ds.test()), 88.889, 2.0);
}

TEST(Trainer, ReductionsOnMonk) {
  const ReductionReport r1 = reduction_equivalence(load_monk(1), 0.0625, KernelSpec::linear(), 0.5);
  EXPECT_TRUE(r1.hinge.equivalent()) << r1.hinge.prediction_mismatches;
  const ReductionReport r2 = reduction_equivalence(load_monk(2), 0.0078125, KernelSpec::linear(), -0.6);
  EXPECT_TRUE(r2.hinge.equivalent());
  EXPECT_TRUE(r2.pinball.equivalent()) << r2.pinball.prediction_mismatches << " "
                                       << r2.pinball.objective_rel_diff();
}

}  // namespace
}  // namespace kplsvm
