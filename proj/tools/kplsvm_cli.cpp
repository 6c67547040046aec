// kplsvm command-line front end.
//
// Exit codes: 0 success, 1 unexpected failure, 2 bad flags or parameters,
// 3 unreadable or unwritable data and model files, 4 training/solver failure,
// 5 verify found a residual above --tol.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kplsvm/kplsvm.hpp"

namespace {

using namespace kplsvm;

enum Exit { ok = 0, unexpected = 1, usage = 2, data_error = 3, solver_error = 4, check_failed = 5 };

std::vector<double> parse_list(const std::string& text, const char* flag) {
  std::vector<double> out;
  if (detail::trim(text).empty()) return out;
  for (const auto& field : detail::split_fields(text, ',')) {
    const auto v = detail::parse_double(field);
    if (!v) throw DomainError(std::string(flag) + ": '" + field + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

std::uint64_t default_seed() {
  if (const char* s = std::getenv("KPLSVM_SEED")) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw DomainError(std::string("KPLSVM_SEED='") + s + "' is not an unsigned integer");
    }
  }
  return 0;
}

struct DataFlags {
  std::string path;
  std::string test_path;
  std::string format = "csv";
  int label_col = 0;
  bool header = false;
  long n_train = 0;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app, bool with_split) {
    app->add_option("--data", path, "Data file (training data when --test is given)")->required();
    app->add_option("--format", format, "csv or libsvm")->check(CLI::IsMember({"csv", "libsvm"}));
    app->add_option("--label-col", label_col, "CSV label column, negative counts from the end");
    app->add_flag("--header", header, "CSV has a header row");
    if (with_split) {
      app->add_option("--test", test_path, "Separate test file (predefined split)");
      app->add_option("--n-train", n_train, "Shuffle and keep this many rows for training");
      app->add_option("--seed", seed, "Split seed (default $KPLSVM_SEED or 0)");
    }
  }

  LoadOptions options() const {
    LoadOptions lo;
    lo.format = parse_data_format(format);
    lo.label_column = label_col;
    lo.header = header;
    return lo;
  }

  /// Whole file, predefined split or shuffled split, depending on the flags.
  Dataset load_dataset() const {
    if (!test_path.empty()) {
      if (n_train > 0) throw DomainError("--n-train cannot be combined with --test");
      return load_predefined(path, test_path, options());
    }
    Dataset ds = load(path, options());
    if (n_train > 0) ds = split(ds, n_train, seed.value_or(default_seed()));
    return ds;
  }
};

struct ModelFlags {
  std::string kernel = "linear";
  double q = 1.0;
  std::string rbf_form = "squared";
  double c0 = 1.0;
  std::string taus = "0";
  std::string epsilons = "0";
  bool balance = true;

  void add(CLI::App* app) {
    app->add_option("--kernel", kernel, "linear or rbf")->check(CLI::IsMember({"linear", "rbf"}));
    app->add_option("--q", q, "RBF width");
    app->add_option("--rbf-form", rbf_form, "squared: exp(-|x-y|^2/2q^2); literal: exp(-|x-y|/2q^2)")
        ->check(CLI::IsMember({"squared", "literal"}));
    app->add_option("--c0", c0, "Base box constraint");
    app->add_option("--taus", taus, "Comma-separated tau_1..tau_{k-1}");
    app->add_option("--epsilons", epsilons, "Comma-separated eps_1..eps_{k-1}");
    app->add_flag("--balance,!--no-balance", balance, "Scale negative-class C by n+/n- (default on)");
  }

  TrainParams params() const {
    TrainParams p;
    p.c0 = c0;
    p.balance_classes = balance;
    p.kernel = kernel == "rbf" ? KernelSpec::rbf(q, parse_rbf_form(rbf_form)) : KernelSpec::linear();
    const auto t = parse_list(taus, "--taus");
    const auto e = parse_list(epsilons, "--epsilons");
    if (t.size() != e.size()) {
      throw DomainError("--taus has " + std::to_string(t.size()) + " values but --epsilons has " +
                        std::to_string(e.size()));
    }
    p.loss = LossSpec(t, e);
    p.validate();
    return p;
  }
};

std::ostream* open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return &std::cout;
  file.open(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot write '" + path + "'");
  return &file;
}

void print_kkt(const KktReport& k) {
  std::printf("stationarity_w: %.3e\n", k.stationarity_w);
  std::printf("stationarity_b: %.3e\n", k.stationarity_b);
  std::printf("stationarity_xi: %.3e\n", k.stationarity_xi);
  std::printf("complementarity: %.3e\n", k.complementarity_max);
  std::printf("primal_feasibility: %.3e\n", k.primal_feasibility_max);
  std::printf("primal_objective: %.10g\n", k.primal_objective);
  std::printf("dual_objective: %.10g\n", -k.dual_objective);
  std::printf("duality_gap: %.3e\n", k.duality_gap);
}

int cmd_train(const DataFlags& df, const ModelFlags& mf, const std::string& out) {
  const TrainParams p = mf.params();
  const Dataset ds = df.load_dataset();
  const Dataset tr = ds.split ? ds.train() : ds;
  if (p.balance_classes) {
    const auto counts = class_counts(tr.y);
    const double ratio = class_ratio(tr.y);
    std::printf("class counts: +1 %ld, -1 %ld\n", static_cast<long>(counts.positive),
                static_cast<long>(counts.negative));
    std::printf("p = %.6g, C(+1) = %.6g, C(-1) = %.6g\n", ratio, p.c0, ratio * p.c0);
  }
  const TrainResult r = fit_detailed(tr, p);
  if (!out.empty()) save_model(r.model, out);
  std::printf("loss: %s\n", p.loss.to_string().c_str());
  std::printf("training accuracy: %.3f\n", evaluate(r.model, tr));
  if (ds.split && ds.test().rows() > 0) std::printf("test accuracy: %.3f\n", evaluate(r.model, ds.test()));
  std::printf("support vectors: %ld of %ld\n", static_cast<long>(r.model.support_count()),
              static_cast<long>(tr.rows()));
  std::printf("bias: %.10g (%s)\n", r.model.bias,
              r.model.diagnostics.bias_fallback
                  ? "primal minimization"
                  : (std::to_string(r.model.diagnostics.bias_candidates_used) + " candidates").c_str());
  std::printf("kkt max residual: %.3e\n", r.kkt.max_residual());
  std::printf("duality gap: %.3e\n", r.kkt.duality_gap);
  std::printf("qp: %s, %d iterations\n", r.model.diagnostics.qp_status.c_str(),
              r.model.diagnostics.qp_iterations);
  std::printf("wall time: %.3f s\n", r.model.diagnostics.train_seconds);
  return ok;
}

int cmd_predict(const std::string& model_path, const DataFlags& df, const std::string& out, bool scores) {
  const TrainedModel m = load_model(model_path);
  const Dataset ds = load(df.path, df.options());
  std::ofstream file;
  std::ostream& os = *open_out(out, file);
  const Eigen::VectorXd s = decision_scores(m, ds.X);
  char buf[64];
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (scores) {
      std::snprintf(buf, sizeof buf, "%d,%.17g\n", s(i) >= 0.0 ? 1 : -1, s(i));
    } else {
      std::snprintf(buf, sizeof buf, "%d\n", s(i) >= 0.0 ? 1 : -1);
    }
    os << buf;
  }
  return ok;
}

int cmd_eval(const std::string& model_path, const DataFlags& df) {
  const TrainedModel m = load_model(model_path);
  const Dataset ds = load(df.path, df.options());
  std::printf("accuracy: %.3f\n", evaluate(m, ds));
  return ok;
}

struct SearchFlags {
  bool paper_protocol = false;
  int folds = 5;
  std::optional<std::uint64_t> cv_seed;
  unsigned jobs = 0;
  double tau_step = 0.2;
  double eps_step = 0.5;
  bool joint = false;
  std::string rbf_form = "squared";

  void add(CLI::App* app) {
    app->add_flag("--paper-protocol", paper_protocol, "Tune on test accuracy instead of cross-validation");
    app->add_option("--folds", folds, "Cross-validation folds");
    app->add_option("--cv-seed", cv_seed, "Fold assignment seed (default $KPLSVM_SEED or 0)");
    app->add_option("--jobs", jobs, "Worker threads (0 = all cores)");
    app->add_option("--tau-step", tau_step, "Spacing of the tau grid on [-1, 1]");
    app->add_option("--eps-step", eps_step, "Spacing of the epsilon grid on [-5, 5]");
    app->add_flag("--joint", joint, "Search C0 (and q) jointly with the loss shape");
    app->add_option("--rbf-form", rbf_form, "squared or literal")->check(CLI::IsMember({"squared", "literal"}));
  }

  GridSpec grid() const {
    GridSpec g = GridSpec::with_steps(tau_step, eps_step);
    g.staged = !joint;
    return g;
  }

  SearchOptions options() const {
    SearchOptions o;
    o.criterion = paper_protocol ? Criterion::test_set : Criterion::cross_validation;
    o.folds = folds;
    o.seed = cv_seed.value_or(default_seed());
    o.jobs = jobs;
    o.rbf_form = parse_rbf_form(rbf_form);
    return o;
  }
};

int cmd_grid(const DataFlags& df, const SearchFlags& sf, const std::string& kernel, const std::string& out,
             const std::string& records) {
  Dataset ds = df.load_dataset();
  if (!ds.split) throw DomainError("grid needs a split: pass --test or --n-train");
  const GridSearchReport rep = staged_search(ds, parse_kernel_kind(kernel), sf.grid(), sf.options());
  std::printf("criterion: %s\n", rep.criterion.c_str());
  std::printf("stage 1: c0 = %g", rep.chosen_c0);
  if (rep.chosen_q) std::printf(", q = %g", *rep.chosen_q);
  std::printf("\n");
  std::vector<ReportRow> rows;
  for (const auto& fr : rep.best) {
    ReportRow row = detail::row_for(ds.name, fr.family, fr.config.loss, fr.config.c0, fr.config.q);
    row.criterion = rep.criterion;
    if (fr.found) {
      row.accuracy = fr.test_accuracy;
      row.time_s = fr.train_seconds;
      std::printf("%-9s criterion %.3f  test %.3f  loss %s\n", to_string(fr.family).c_str(),
                  fr.criterion_score, fr.test_accuracy, fr.config.loss.to_string().c_str());
    } else {
      std::printf("%-9s no trainable configuration\n", to_string(fr.family).c_str());
    }
    rows.push_back(std::move(row));
  }
  if (!out.empty()) {
    std::ofstream file;
    write_report_csv(*open_out(out, file), rows);
  }
  if (!records.empty()) {
    std::ofstream file;
    write_records_csv(*open_out(records, file), rep);
  }
  return ok;
}

int cmd_bench(const std::string& manifest, const SearchFlags& sf, const std::string& kernel,
              const std::string& replay, const std::string& family, const std::string& out,
              const std::string& records_dir, bool no_timing, std::optional<std::uint64_t> seed) {
  BenchOptions opt;
  opt.kernel = parse_kernel_kind(kernel);
  opt.grid = sf.grid();
  opt.search = sf.options();
  opt.timing = !no_timing;
  opt.record_dir = records_dir;
  if (seed) {
    opt.seed_override = seed;
  } else if (std::getenv("KPLSVM_SEED")) {
    opt.seed_override = default_seed();
  }
  if (!family.empty()) opt.family = parse_family(family);
  if (!replay.empty()) {
    opt.replay = true;
    opt.replay_params = load_replay(replay);
  }
  const BenchReport rep = benchmark_run(load_manifest(manifest), opt);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  std::ofstream file;
  write_report_csv(*open_out(out, file), rep.rows, opt.timing);
  return ok;
}

int cmd_loss_curve(const std::string& taus, const std::string& eps, const std::string& range, double step,
                   const std::string& out) {
  const LossSpec loss(parse_list(taus, "--taus"), parse_list(eps, "--epsilons"));
  const auto r = parse_list(range, "--range");
  if (r.size() != 2 || !(r[0] <= r[1])) throw DomainError("--range must be 'lo,hi' with lo <= hi");
  if (!(step > 0.0)) throw DomainError("--step must be positive");
  std::ofstream file;
  std::ostream& os = *open_out(out, file);
  os << "u,loss\n";
  const auto n = static_cast<long>(std::floor((r[1] - r[0]) / step + 1e-9));
  char buf[96];
  for (long i = 0; i <= n; ++i) {
    const double u = r[0] + static_cast<double>(i) * step;
    std::snprintf(buf, sizeof buf, "%.10g,%.10g\n", u, eval_loss(loss, u));
    os << buf;
  }
  return ok;
}

int cmd_verify(const std::string& model_path, const DataFlags& df, double tol) {
  const TrainedModel m = load_model(model_path);
  const Dataset ds = load(df.path, df.options());
  TrainParams p;
  p.loss = m.loss;
  p.c0 = m.c0;
  p.kernel = m.kernel;
  p.balance_classes = m.balance_classes;
  p.qp_tol = m.qp_tol;
  p.active_threshold = m.active_threshold;
  const TrainResult r = fit_detailed(ds, p);

  // Support points are a subsequence of the training rows, in order.
  const Eigen::MatrixXd Xn = m.normalizer.apply(ds.X);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(ds.rows());
  Eigen::Index next = 0;
  for (Eigen::Index i = 0; i < ds.rows() && next < m.support_count(); ++i) {
    if (Xn.row(i) == m.support_x.row(next)) beta(i) = m.beta(next++);
  }
  if (next != m.support_count()) throw DataError("the model was not trained on '" + df.path + "'");

  const KktReport k = verify_kkt(r.dual, beta, m.bias);
  print_kkt(k);
  const double worst = std::max(k.max_residual(), k.duality_gap);
  std::printf("max residual: %.3e (tol %.1e)\n", worst, tol);
  if (worst > tol) {
    std::printf("FAIL\n");
    return check_failed;
  }
  std::printf("OK\n");
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"k-piece-wise linear loss SVM: train, evaluate and tune"};
  app.require_subcommand(1);

  DataFlags train_data;
  ModelFlags model;
  std::string model_out;
  auto* train = app.add_subcommand("train", "Train a model and write it to --out");
  train_data.add(train, true);
  model.add(train);
  train->add_option("--out", model_out, "Model file to write");

  std::string model_in;
  std::string pred_out;
  bool with_scores = false;
  DataFlags pred_data;
  auto* predict_cmd = app.add_subcommand("predict", "Write one +1/-1 prediction per line");
  predict_cmd->add_option("--model", model_in, "Model file")->required();
  pred_data.add(predict_cmd, false);
  predict_cmd->add_option("--out", pred_out, "Output file (default stdout)");
  predict_cmd->add_flag("--scores", with_scores, "Also write the decision value");

  DataFlags eval_data;
  auto* eval_cmd = app.add_subcommand("eval", "Print accuracy on labelled data");
  eval_cmd->add_option("--model", model_in, "Model file")->required();
  eval_data.add(eval_cmd, false);

  DataFlags grid_data;
  SearchFlags grid_search;
  std::string grid_kernel = "linear";
  std::string grid_out;
  std::string grid_records;
  auto* grid = app.add_subcommand("grid", "Staged grid search on one dataset");
  grid_data.add(grid, true);
  grid_search.add(grid);
  grid->add_option("--kernel", grid_kernel, "linear or rbf")->check(CLI::IsMember({"linear", "rbf"}));
  grid->add_option("--out", grid_out, "Best-per-family CSV");
  grid->add_option("--records", grid_records, "Every grid cell as CSV");

  std::string manifest;
  SearchFlags bench_search;
  std::string bench_kernel = "linear";
  std::string replay;
  std::string family;
  std::string bench_out;
  std::string records_dir;
  bool no_timing = false;
  std::optional<std::uint64_t> bench_seed;
  auto* bench = app.add_subcommand("bench", "Run every dataset of a manifest");
  bench->add_option("--manifest", manifest, "Manifest file")->required();
  bench_search.add(bench);
  bench->add_option("--kernel", bench_kernel, "linear or rbf")->check(CLI::IsMember({"linear", "rbf"}));
  bench->add_option("--replay", replay, "Train fixed parameters from this CSV instead of searching");
  bench->add_option("--family", family, "Only report this family (C-SVM, Pin-SVM, 2-PL-SVM, 3-PL-SVM)");
  bench->add_option("--out", bench_out, "Consolidated CSV (default stdout)");
  bench->add_option("--records-dir", records_dir, "Directory for per-dataset grid records");
  bench->add_flag("--no-timing", no_timing, "Write NA for wall times so reruns compare byte for byte");
  bench->add_option("--seed", bench_seed, "Override every manifest split seed");

  std::string curve_taus = "0";
  std::string curve_eps = "0";
  std::string curve_range = "-2,2";
  double curve_step = 0.1;
  std::string curve_out;
  auto* curve = app.add_subcommand("loss-curve", "Tabulate L(u) as u,loss CSV");
  curve->add_option("--taus", curve_taus, "Comma-separated taus");
  curve->add_option("--epsilons", curve_eps, "Comma-separated epsilons");
  curve->add_option("--range", curve_range, "lo,hi");
  curve->add_option("--step", curve_step, "Spacing of u");
  curve->add_option("--out", curve_out, "Output file (default stdout)");

  DataFlags verify_data;
  double verify_tol = 1e-5;
  auto* verify = app.add_subcommand("verify", "Check a model against the optimality conditions on its training data");
  verify->add_option("--model", model_in, "Model file")->required();
  verify_data.add(verify, false);
  verify->add_option("--tol", verify_tol, "Largest acceptable residual");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (*train) return cmd_train(train_data, model, model_out);
    if (*predict_cmd) return cmd_predict(model_in, pred_data, pred_out, with_scores);
    if (*eval_cmd) return cmd_eval(model_in, eval_data);
    if (*grid) return cmd_grid(grid_data, grid_search, grid_kernel, grid_out, grid_records);
    if (*bench) {
      return cmd_bench(manifest, bench_search, bench_kernel, replay, family, bench_out, records_dir, no_timing,
                       bench_seed);
    }
    if (*curve) return cmd_loss_curve(curve_taus, curve_eps, curve_range, curve_step, curve_out);
    if (*verify) return cmd_verify(model_in, verify_data, verify_tol);
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const RepresentationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data_error;
  } catch (const FormatError& e) {
    std::cerr << "model file error: " << e.what() << '\n';
    return data_error;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return solver_error;
  } catch (const InfeasibleError& e) {
    std::cerr << "solver failed: " << e.what() << '\n';
    return solver_error;
  } catch (const Error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return data_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return unexpected;
  }
  return unexpected;
}
