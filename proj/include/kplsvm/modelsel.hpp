#pragma once

// Staged grid search over (C0, q) with the hinge loss, then over the loss
// shape with (C0, q) fixed, plus the benchmark harness that runs it over a
// manifest of datasets and writes CSV reports.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kplsvm/data.hpp"
#include "kplsvm/errors.hpp"
#include "kplsvm/kernel.hpp"
#include "kplsvm/loss.hpp"
#include "kplsvm/trainer.hpp"

namespace kplsvm {

/// k * step for every integer k with lo <= k * step <= hi; anchored at zero so
/// that 0 belongs to every grid that spans it.
inline std::vector<double> step_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || !(lo <= hi)) throw DomainError("grid needs lo <= hi and a positive step");
  std::vector<double> out;
  const auto first = static_cast<long>(std::ceil(lo / step - 1e-9));
  const auto last = static_cast<long>(std::floor(hi / step + 1e-9));
  for (long k = first; k <= last; ++k) {
    // Round away binary noise so 0.2 * 3 prints as 0.6.
    out.push_back(std::round(static_cast<double>(k) * step * 1e9) / 1e9);
  }
  return out;
}

/// 2^lo, ..., 2^hi.
inline std::vector<double> power_grid(int lo, int hi) {
  std::vector<double> out;
  for (int e = lo; e <= hi; ++e) out.push_back(std::ldexp(1.0, e));
  return out;
}

struct GridSpec {
  std::vector<double> c0_grid = power_grid(-7, 7);
  std::vector<double> q_grid = power_grid(-7, 7);
  std::vector<double> tau_grid = step_grid(-1.0, 1.0, 0.2);
  std::vector<double> eps_grid = step_grid(-5.0, 5.0, 0.5);
  /// Stage 2 reuses the stage-1 (C0, q); otherwise every family searches
  /// (C0, q) jointly with its shape parameters.
  bool staged = true;

  static GridSpec paper() { return {}; }

  static GridSpec with_steps(double tau_step, double eps_step) {
    GridSpec g;
    g.tau_grid = step_grid(-1.0, 1.0, tau_step);
    g.eps_grid = step_grid(-5.0, 5.0, eps_step);
    return g;
  }

  void validate() const {
    auto check = [](const std::vector<double>& v, const char* name) {
      if (v.empty()) throw DomainError(std::string(name) + " is empty");
      for (std::size_t i = 1; i < v.size(); ++i) {
        if (!(v[i] > v[i - 1])) throw DomainError(std::string(name) + " must be strictly increasing");
      }
    };
    check(c0_grid, "c0 grid");
    check(q_grid, "q grid");
    check(tau_grid, "tau grid");
    check(eps_grid, "epsilon grid");
    if (c0_grid.front() <= 0.0) throw DomainError("c0 grid must be positive");
    if (q_grid.front() <= 0.0) throw DomainError("q grid must be positive");
  }
};

enum class Family { c_svm, pin_svm, pl2_svm, pl3_svm };

inline constexpr Family kFamilies[] = {Family::c_svm, Family::pin_svm, Family::pl2_svm,
                                       Family::pl3_svm};

inline std::string to_string(Family f) {
  switch (f) {
    case Family::c_svm: return "C-SVM";
    case Family::pin_svm: return "Pin-SVM";
    case Family::pl2_svm: return "2-PL-SVM";
    case Family::pl3_svm: return "3-PL-SVM";
  }
  return "unknown";
}

inline Family parse_family(const std::string& s) {
  for (Family f : kFamilies) {
    if (s == to_string(f)) return f;
  }
  if (s == "hinge" || s == "svm" || s == "SVM") return Family::c_svm;
  if (s == "pinball" || s == "pin") return Family::pin_svm;
  if (s == "2pl" || s == "2-PL") return Family::pl2_svm;
  if (s == "3pl" || s == "3-PL") return Family::pl3_svm;
  throw DomainError("unknown model family '" + s + "'");
}

enum class Criterion { cross_validation, test_set };

struct SearchOptions {
  Criterion criterion = Criterion::cross_validation;
  int folds = 5;
  std::uint64_t seed = 0;  ///< fold assignment
  unsigned jobs = 0;       ///< 0 = hardware concurrency
  RbfForm rbf_form = RbfForm::squared_distance;
  TrainParams base;        ///< loss, c0 and kernel are overwritten per cell
};

inline std::string criterion_label(const SearchOptions& opt) {
  return opt.criterion == Criterion::test_set ? "test" : "cv" + std::to_string(opt.folds);
}

struct ModelConfig {
  Family family = Family::c_svm;
  double c0 = 1.0;
  std::optional<double> q;  ///< RBF width; empty for the linear kernel
  LossSpec loss = LossSpec::hinge();

  /// Cells with equal keys train identical models.
  std::string cache_key() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a|%a|", c0, q.value_or(0.0));
    return buf + loss.canonical().to_string();
  }
};

struct GridRecord {
  ModelConfig config;
  int stage = 1;
  std::optional<double> score;  ///< criterion value, percent
  std::string error;
  double seconds = 0.0;
};

struct FamilyResult {
  Family family = Family::c_svm;
  bool found = false;
  ModelConfig config;
  double criterion_score = 0.0;
  double test_accuracy = 0.0;
  double train_seconds = 0.0;
};

struct GridSearchReport {
  std::string dataset;
  KernelKind kernel = KernelKind::linear;
  std::string criterion;
  double chosen_c0 = 0.0;
  std::optional<double> chosen_q;
  std::vector<GridRecord> records;
  std::vector<FamilyResult> best;  ///< one per Family, in kFamilies order
  /// Slot for LS-SVM accuracy supplied from outside; never trained here.
  std::optional<double> ls_svm_accuracy;

  const FamilyResult& family(Family f) const {
    for (const auto& r : best) {
      if (r.family == f) return r;
    }
    throw DomainError("no result for family " + to_string(f));
  }
};

namespace detail {

/// Runs fn(i) for i in [0, n) on `jobs` threads; results are written by index
/// so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(n, 1)));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (unsigned t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

/// Stratified folds: each class is shuffled and dealt round-robin.
inline std::vector<int> assign_folds(const Eigen::VectorXd& y, int folds, std::uint64_t seed) {
  std::vector<int> fold(static_cast<std::size_t>(y.size()), 0);
  std::mt19937_64 rng(seed);
  for (double label : {-1.0, 1.0}) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (y(i) == label) idx.push_back(i);
    }
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng() % i)]);
    }
    for (std::size_t r = 0; r < idx.size(); ++r) {
      fold[static_cast<std::size_t>(idx[r])] = static_cast<int>(r % static_cast<std::size_t>(folds));
    }
  }
  return fold;
}

/// Kernel matrices of the normalized training (and test) rows per width.
class KernelCache {
 public:
  KernelCache(const Eigen::MatrixXd& train, const Eigen::MatrixXd& test, RbfForm form, const std::vector<std::optional<double>>& widths, unsigned jobs) {
    std::vector<std::optional<double>> distinct;
    for (const auto& q : widths) {
      if (std::find(distinct.begin(), distinct.end(), q) == distinct.end()) distinct.push_back(q);
    }
    entries_.resize(distinct.size());
    parallel_for(distinct.size(), jobs, [&](std::size_t i) {
      const KernelSpec spec = distinct[i] ? KernelSpec::rbf(*distinct[i], form) : KernelSpec::linear();
      entries_[i] = {distinct[i], spec, gram_matrix(spec, train),
                     test.rows() ? cross_kernel(spec, test, train) : Eigen::MatrixXd()};
    });
  }

  struct Entry {
    std::optional<double> q;
    KernelSpec spec;
    Eigen::MatrixXd gram;   ///< train x train
    Eigen::MatrixXd cross;  ///< test x train
  };

  const Entry& at(const std::optional<double>& q) const {
    for (const auto& e : entries_) {
      if (e.q == q) return e;
    }
    throw DomainError("kernel width not cached");
  }

 private:
  std::vector<Entry> entries_;
};

inline double score_accuracy(const Eigen::VectorXd& scores, const Eigen::VectorXd& y) {
  return accuracy(scores.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; }), y);
}

}  // namespace detail

/// Scores configurations on one dataset under the chosen criterion.
class CellEvaluator {
 public:
  CellEvaluator(const Dataset& ds, const SearchOptions& opt) : opt_(opt) {
    const Dataset train_set = ds.train();
    const Dataset test_set = ds.test();
    const NormalizationTransform norm = fit_normalizer(train_set);
    xtr_ = norm.apply(train_set.X);
    xte_ = norm.apply(test_set.X);
    ytr_ = train_set.y;
    yte_ = test_set.y;
    if (opt.criterion == Criterion::cross_validation) {
      if (opt.folds < 2) throw DomainError("cross-validation needs at least two folds");
      folds_ = detail::assign_folds(ytr_, opt.folds, opt.seed);
    }
  }

  void prepare(const std::vector<std::optional<double>>& widths) {
    cache_.emplace(xtr_, xte_, opt_.rbf_form, widths, opt_.jobs);
  }

  /// Criterion value in percent.
  double score(const ModelConfig& cfg) const {
    const auto& k = cache_->at(cfg.q);
    TrainParams p = opt_.base;
    p.c0 = cfg.c0;
    p.loss = cfg.loss;
    p.kernel = k.spec;
    if (opt_.criterion == Criterion::test_set) {
      const DualFit fit = fit_dual(k.gram, ytr_, p);
      return detail::score_accuracy(k.cross * fit.beta + Eigen::VectorXd::Constant(yte_.size(), fit.bias.bias), yte_);
    }
    Eigen::Index correct = 0;
    for (int f = 0; f < opt_.folds; ++f) {
      std::vector<Eigen::Index> tr;
      std::vector<Eigen::Index> va;
      for (std::size_t i = 0; i < folds_.size(); ++i) {
        (folds_[i] == f ? va : tr).push_back(static_cast<Eigen::Index>(i));
      }
      if (va.empty()) continue;
      const Eigen::VectorXd y_tr = ytr_(tr);
      detail::check_training_data(xtr_(tr, Eigen::all), y_tr);
      const DualFit fit = fit_dual(k.gram(tr, tr), y_tr, p);
      const Eigen::VectorXd s = k.gram(va, tr) * fit.beta;
      for (std::size_t r = 0; r < va.size(); ++r) {
        const double pred = s(static_cast<Eigen::Index>(r)) + fit.bias.bias >= 0.0 ? 1.0 : -1.0;
        correct += pred == ytr_(va[r]) ? 1 : 0;
      }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(ytr_.size());
  }

  /// Trains on the whole training portion and reports test accuracy and time.
  std::pair<double, double> final_fit(const ModelConfig& cfg) const {
    const auto& k = cache_->at(cfg.q);
    TrainParams p = opt_.base;
    p.c0 = cfg.c0;
    p.loss = cfg.loss;
    p.kernel = k.spec;
    const auto start = std::chrono::steady_clock::now();
    const DualFit fit = fit_dual(k.gram, ytr_, p);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (yte_.size() == 0) return {0.0, secs};
    const Eigen::VectorXd s = k.cross * fit.beta + Eigen::VectorXd::Constant(yte_.size(), fit.bias.bias);
    return {detail::score_accuracy(s, yte_), secs};
  }

 private:
  SearchOptions opt_;
  Eigen::MatrixXd xtr_, xte_;
  Eigen::VectorXd ytr_, yte_;
  std::vector<int> folds_;
  std::optional<detail::KernelCache> cache_;
};

namespace detail {

inline std::vector<LossSpec> shapes(Family f, const GridSpec& g) {
  std::vector<LossSpec> out;
  switch (f) {
    case Family::c_svm:
      out.push_back(LossSpec::hinge());
      break;
    case Family::pin_svm:
      for (double t : g.tau_grid) out.push_back(LossSpec::pinball(t));
      break;
    case Family::pl2_svm:
      for (double t : g.tau_grid)
        for (double e : g.eps_grid) out.push_back(LossSpec({t}, {e}));
      break;
    case Family::pl3_svm:
      for (double t1 : g.tau_grid)
        for (double t2 : g.tau_grid)
          for (double e1 : g.eps_grid)
            for (double e2 : g.eps_grid) out.push_back(LossSpec({t1, t2}, {e1, e2}));
      break;
  }
  return out;
}

/// Scores every record, training each distinct cache key once.
inline void evaluate_records(std::vector<GridRecord>& records, const CellEvaluator& eval,
                             unsigned jobs) {
  std::map<std::string, std::size_t> first;
  std::vector<std::size_t> unique;
  std::vector<std::size_t> owner(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto [it, inserted] = first.emplace(records[i].config.cache_key(), i);
    if (inserted) unique.push_back(i);
    owner[i] = it->second;
  }
  parallel_for(unique.size(), jobs, [&](std::size_t u) {
    GridRecord& r = records[unique[u]];
    const auto start = std::chrono::steady_clock::now();
    try {
      r.score = eval.score(r.config);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (owner[i] == i) continue;
    records[i].score = records[owner[i]].score;
    records[i].error = records[owner[i]].error;
    records[i].seconds = records[owner[i]].seconds;
  }
}

/// Highest score; ties go to the smaller C0, then to the earlier record.
inline std::optional<std::size_t> pick_best(const std::vector<GridRecord>& records, Family f, int stage) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.config.family != f || r.stage != stage || !r.score) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = records[*best];
    if (*r.score > *b.score || (*r.score == *b.score && r.config.c0 < b.config.c0)) best = i;
  }
  return best;
}

}  // namespace detail

inline GridSearchReport staged_search(const Dataset& ds, KernelKind kind, const GridSpec& grid,
                                      const SearchOptions& opt) {
  grid.validate();
  if (!ds.split) throw DomainError("dataset '" + ds.name + "' has no train/test split");
  GridSearchReport rep;
  rep.dataset = ds.name;
  rep.kernel = kind;
  rep.criterion = criterion_label(opt);

  std::vector<std::optional<double>> widths;
  if (kind == KernelKind::rbf) {
    for (double q : grid.q_grid) widths.emplace_back(q);
  } else {
    widths.emplace_back(std::nullopt);
  }
  CellEvaluator eval(ds, opt);
  eval.prepare(widths);

  auto add_family = [&](Family f, int stage, const std::vector<double>& c0s,
                        const std::vector<std::optional<double>>& qs) {
    const auto losses = detail::shapes(f, grid);
    for (double c0 : c0s)
      for (const auto& q : qs)
        for (const auto& loss : losses) {
          GridRecord rec;
          rec.config = {f, c0, q, loss};
          rec.stage = stage;
          rep.records.push_back(std::move(rec));
        }
  };

  add_family(Family::c_svm, 1, grid.c0_grid, widths);
  detail::evaluate_records(rep.records, eval, opt.jobs);
  const auto stage1 = detail::pick_best(rep.records, Family::c_svm, 1);
  if (!stage1) throw TrainingError("no hinge model could be trained on '" + ds.name + "'");
  rep.chosen_c0 = rep.records[*stage1].config.c0;
  rep.chosen_q = rep.records[*stage1].config.q;

  const std::size_t stage2_begin = rep.records.size();
  for (Family f : {Family::pin_svm, Family::pl2_svm, Family::pl3_svm}) {
    if (grid.staged) {
      add_family(f, 2, {rep.chosen_c0}, {rep.chosen_q});
    } else {
      add_family(f, 2, grid.c0_grid, widths);
    }
  }
  std::vector<GridRecord> stage2(rep.records.begin() + static_cast<std::ptrdiff_t>(stage2_begin),
                                 rep.records.end());
  // Reuse stage-1 scores for stage-2 cells that are the same model.
  std::map<std::string, std::size_t> known;
  for (std::size_t i = 0; i < stage2_begin; ++i) known.emplace(rep.records[i].config.cache_key(), i);
  std::vector<GridRecord> pending;
  std::vector<std::size_t> pending_at;
  for (std::size_t i = 0; i < stage2.size(); ++i) {
    const auto hit = known.find(stage2[i].config.cache_key());
    if (hit != known.end()) {
      stage2[i].score = rep.records[hit->second].score;
      stage2[i].error = rep.records[hit->second].error;
      stage2[i].seconds = rep.records[hit->second].seconds;
    } else {
      pending.push_back(stage2[i]);
      pending_at.push_back(i);
    }
  }
  detail::evaluate_records(pending, eval, opt.jobs);
  for (std::size_t j = 0; j < pending.size(); ++j) stage2[pending_at[j]] = std::move(pending[j]);
  std::copy(stage2.begin(), stage2.end(), rep.records.begin() + static_cast<std::ptrdiff_t>(stage2_begin));

  for (Family f : kFamilies) {
    FamilyResult fr;
    fr.family = f;
    const auto idx = detail::pick_best(rep.records, f, f == Family::c_svm ? 1 : 2);
    if (idx) {
      const auto& r = rep.records[*idx];
      fr.found = true;
      fr.config = r.config;
      fr.criterion_score = *r.score;
      std::tie(fr.test_accuracy, fr.train_seconds) = eval.final_fit(r.config);
    }
    rep.best.push_back(fr);
  }
  return rep;
}

/// Test accuracy of a model on raw features, in percent.
inline double evaluate(const TrainedModel& model, const Dataset& test_set) {
  if (test_set.rows() == 0) throw DataError("cannot evaluate on an empty test set");
  return accuracy(predict(model, test_set.X), test_set.y);
}

// ---------------------------------------------------------------------------
// Benchmark harness

struct ManifestEntry {
  std::string name;
  std::string path;
  DataFormat format = DataFormat::csv;
  Eigen::Index n_train = 0;
  std::uint64_t seed = 0;
  std::optional<std::string> test_path;  ///< predefined split
};

/// One dataset per line: name,path,format,n_train,seed[,test_path]. Paths are
/// relative to the manifest's directory. '#' starts a comment.
inline std::vector<ManifestEntry> parse_manifest(std::istream& in, const std::string& base_dir) {
  namespace fs = std::filesystem;
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return (path.is_absolute() || base_dir.empty() ? path : fs::path(base_dir) / path).lexically_normal().string();
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(line, ',');
    if (f[0] == "name") continue;
    if (f.size() < 5 || f.size() > 6) {
      throw DataError("manifest line " + std::to_string(lineno) +
                      ": expected name,path,format,n_train,seed[,test_path]");
    }
    ManifestEntry e;
    e.name = f[0];
    e.path = resolve(f[1]);
    e.format = parse_data_format(f[2]);
    try {
      e.n_train = std::stol(f[3]);
      e.seed = std::stoull(f[4]);
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(lineno) + ": n_train and seed must be integers");
    }
    if (f.size() == 6 && !f[5].empty()) e.test_path = resolve(f[5]);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  return parse_manifest(in, std::filesystem::path(path).parent_path().string());
}

inline Dataset load_entry(const ManifestEntry& e, std::optional<std::uint64_t> seed_override = {}) {
  LoadOptions lo;
  lo.format = e.format;
  Dataset ds = e.test_path ? load_predefined(e.path, *e.test_path, lo) : load(e.path, lo);
  ds.name = e.name;
  if (!e.test_path) ds = split(ds, e.n_train, seed_override.value_or(e.seed));
  return ds;
}

/// Fixed parameters for replay; unused shape fields are empty.
struct ReplayEntry {
  std::string dataset;
  KernelKind kernel = KernelKind::linear;
  Family family = Family::c_svm;
  double c0 = 1.0;
  std::optional<double> q;
  std::vector<double> taus;
  std::vector<double> epsilons;
  std::optional<double> reported_accuracy;

  LossSpec loss() const {
    if (family == Family::c_svm) return LossSpec::hinge();
    return LossSpec(taus, epsilons);
  }
};

/// Columns: dataset,kernel,family,q,c0,tau1,tau2,eps1,eps2[,reported_accuracy].
inline std::vector<ReplayEntry> parse_replay(std::istream& in) {
  std::vector<ReplayEntry> out;
  std::string line;
  std::size_t lineno = 0;
  auto opt_num = [&](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    const auto v = detail::parse_double(s);
    if (!v) throw DataError("replay line " + std::to_string(lineno) + ": bad number '" + s + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    auto f = detail::split_fields(line, ',');
    if (f[0] == "dataset") continue;
    if (f.size() < 9) throw DataError("replay line " + std::to_string(lineno) + ": expected 9 or 10 fields");
    ReplayEntry e;
    e.dataset = f[0];
    e.kernel = parse_kernel_kind(f[1]);
    e.family = parse_family(f[2]);
    e.q = opt_num(f[3]);
    const auto c0 = opt_num(f[4]);
    if (!c0) throw DataError("replay line " + std::to_string(lineno) + ": c0 is required");
    e.c0 = *c0;
    for (int m = 0; m < 2; ++m) {
      const auto t = opt_num(f[static_cast<std::size_t>(5 + m)]);
      const auto ep = opt_num(f[static_cast<std::size_t>(7 + m)]);
      if (t.has_value() != ep.has_value()) {
        throw DataError("replay line " + std::to_string(lineno) + ": tau and eps must be given together");
      }
      if (t) {
        e.taus.push_back(*t);
        e.epsilons.push_back(*ep);
      }
    }
    if (e.kernel == KernelKind::rbf && !e.q) {
      throw DataError("replay line " + std::to_string(lineno) + ": rbf rows need q");
    }
    if (f.size() > 9) e.reported_accuracy = opt_num(f[9]);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<ReplayEntry> load_replay(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open replay file '" + path + "'");
  return parse_replay(in);
}

struct ReportRow {
  std::string dataset;
  std::string family;
  std::optional<double> accuracy;
  std::optional<double> time_s;
  std::optional<double> c0;
  std::optional<double> q;
  std::optional<double> tau1, tau2, eps1, eps2;
  std::string criterion;
};

struct BenchOptions {
  KernelKind kernel = KernelKind::linear;
  GridSpec grid;
  SearchOptions search;
  bool replay = false;
  std::vector<ReplayEntry> replay_params;
  std::optional<std::uint64_t> seed_override;
  /// Directory for per-dataset record CSVs; empty = none.
  std::string record_dir;
  bool timing = true;
  /// Restricts the report to one family.
  std::optional<Family> family;
};

struct BenchReport {
  std::vector<ReportRow> rows;
  std::vector<GridSearchReport> searches;
  std::vector<std::string> warnings;
};

namespace detail {

inline ReportRow row_for(const std::string& dataset, Family f, const LossSpec& loss, double c0,
                         std::optional<double> q) {
  ReportRow r;
  r.dataset = dataset;
  r.family = to_string(f);
  r.c0 = c0;
  r.q = q;
  if (loss.k() >= 2 && f != Family::c_svm) {
    r.tau1 = loss.tau(0);
    r.eps1 = loss.epsilon(0);
  }
  if (loss.k() >= 3) {
    r.tau2 = loss.tau(1);
    r.eps2 = loss.epsilon(1);
  }
  return r;
}

inline std::string fmt(const std::optional<double>& v, const char* spec) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, *v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline const char* kReportHeader = "dataset,family,accuracy,time_s,c0,q,tau1,tau2,eps1,eps2,criterion";

/// Fixed column order. With include_timing off, time_s is NA so that reports
/// from identical inputs compare byte for byte.
inline void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows,
                             bool include_timing = true) {
  out << kReportHeader << '\n';
  for (const auto& r : rows) {
    out << detail::csv_field(r.dataset) << ',' << detail::csv_field(r.family) << ','
        << detail::fmt(r.accuracy, "%.3f") << ','
        << (include_timing ? detail::fmt(r.time_s, "%.3f") : std::string("NA")) << ','
        << detail::fmt(r.c0, "%.10g") << ',' << detail::fmt(r.q, "%.10g") << ','
        << detail::fmt(r.tau1, "%.10g") << ',' << detail::fmt(r.tau2, "%.10g") << ','
        << detail::fmt(r.eps1, "%.10g") << ',' << detail::fmt(r.eps2, "%.10g") << ','
        << detail::csv_field(r.criterion) << '\n';
  }
}

/// Every grid cell of a search: family,stage,c0,q,taus,epsilons,score,error.
inline void write_records_csv(std::ostream& out, const GridSearchReport& rep, bool include_timing = true) {
  out << "family,stage,c0,q,tau1,tau2,eps1,eps2,score,time_s,error\n";
  for (const auto& r : rep.records) {
    const ReportRow row = detail::row_for(rep.dataset, r.config.family, r.config.loss, r.config.c0, r.config.q);
    out << row.family << ',' << r.stage << ',' << detail::fmt(row.c0, "%.10g") << ','
        << detail::fmt(row.q, "%.10g") << ',' << detail::fmt(row.tau1, "%.10g") << ','
        << detail::fmt(row.tau2, "%.10g") << ',' << detail::fmt(row.eps1, "%.10g") << ','
        << detail::fmt(row.eps2, "%.10g") << ',' << detail::fmt(r.score, "%.3f") << ','
        << (include_timing ? detail::fmt(r.seconds, "%.4f") : std::string("NA")) << ','
        << detail::csv_field(r.error) << '\n';
  }
}

inline ReportRow replay_row(const Dataset& ds, const ReplayEntry& e, const SearchOptions& opt) {
  TrainParams p = opt.base;
  p.c0 = e.c0;
  p.loss = e.loss();
  p.kernel = e.kernel == KernelKind::rbf ? KernelSpec::rbf(*e.q, opt.rbf_form) : KernelSpec::linear();
  ReportRow row = detail::row_for(ds.name, e.family, p.loss, e.c0, e.q);
  row.criterion = "replay";
  try {
    const TrainResult r = fit_detailed(ds.train(), p);
    row.accuracy = evaluate(r.model, ds.test());
    row.time_s = r.model.diagnostics.train_seconds;
  } catch (const Error& err) {
    row.criterion = std::string("failed: ") + err.what();
  }
  return row;
}

inline BenchReport benchmark_run(const std::vector<ManifestEntry>& manifest, const BenchOptions& opt) {
  BenchReport rep;
  for (const auto& entry : manifest) {
    std::optional<Dataset> ds;
    try {
      ds = load_entry(entry, opt.seed_override);
    } catch (const Error& e) {
      ReportRow warn;
      warn.dataset = entry.name;
      warn.criterion = std::string("skipped: ") + e.what();
      rep.warnings.push_back(entry.name + ": " + e.what());
      rep.rows.push_back(std::move(warn));
      continue;
    }
    if (opt.replay) {
      bool any = false;
      for (const auto& e : opt.replay_params) {
        if (e.dataset != entry.name || e.kernel != opt.kernel) continue;
        if (opt.family && e.family != *opt.family) continue;
        rep.rows.push_back(replay_row(*ds, e, opt.search));
        any = true;
      }
      if (!any) {
        ReportRow warn;
        warn.dataset = entry.name;
        warn.criterion = "skipped: no replay parameters";
        rep.warnings.push_back(entry.name + ": no replay parameters for " + to_string(opt.kernel));
        rep.rows.push_back(std::move(warn));
      }
      continue;
    }
    try {
      GridSearchReport search = staged_search(*ds, opt.kernel, opt.grid, opt.search);
      search.dataset = entry.name;
      for (const auto& fr : search.best) {
        if (opt.family && fr.family != *opt.family) continue;
        ReportRow row = detail::row_for(entry.name, fr.family, fr.config.loss, fr.config.c0, fr.config.q);
        row.criterion = search.criterion;
        if (fr.found) {
          row.accuracy = fr.test_accuracy;
          row.time_s = fr.train_seconds;
        } else {
          row.criterion = "failed: no trainable configuration";
        }
        rep.rows.push_back(std::move(row));
      }
      if (!opt.record_dir.empty()) {
        std::filesystem::create_directories(opt.record_dir);
        std::ofstream out(std::filesystem::path(opt.record_dir) / (entry.name + "_" + to_string(opt.kernel) + ".csv"));
        write_records_csv(out, search, opt.timing);
      }
      rep.searches.push_back(std::move(search));
    } catch (const Error& e) {
      ReportRow warn;
      warn.dataset = entry.name;
      warn.criterion = std::string("failed: ") + e.what();
      rep.warnings.push_back(entry.name + ": " + e.what());
      rep.rows.push_back(std::move(warn));
    }
  }
  return rep;
}

}  // namespace kplsvm
