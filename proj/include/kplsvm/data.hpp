#pragma once

// Dataset ingestion (CSV and libsvm), [-1, 1] feature scaling fitted on the
// training portion, and seeded train/test splits.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kplsvm/errors.hpp"

namespace kplsvm {

enum class DataFormat { csv, libsvm };

inline std::string to_string(DataFormat f) { return f == DataFormat::csv ? "csv" : "libsvm"; }

inline DataFormat parse_data_format(const std::string& s) {
  if (s == "csv") return DataFormat::csv;
  if (s == "libsvm") return DataFormat::libsvm;
  throw DomainError("unknown data format '" + s + "' (expected csv or libsvm)");
}

struct Split {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};

struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;  ///< +-1
  std::string name;
  std::optional<Split> split;
  /// Original label text for -1 and +1, in that order.
  std::pair<std::string, std::string> label_names{"-1", "+1"};
  /// Splits shipped with the data (separate train/test files) are kept verbatim.
  bool predefined_split = false;

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index cols() const { return X.cols(); }

  Dataset subset(const std::vector<Eigen::Index>& idx) const {
    Dataset out;
    out.X.resize(static_cast<Eigen::Index>(idx.size()), X.cols());
    out.y.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.X.row(static_cast<Eigen::Index>(r)) = X.row(idx[r]);
      out.y(static_cast<Eigen::Index>(r)) = y(idx[r]);
    }
    out.name = name;
    out.label_names = label_names;
    return out;
  }

  Dataset train() const {
    if (!split) throw DataError("dataset '" + name + "' has no split");
    return subset(split->train);
  }
  Dataset test() const {
    if (!split) throw DataError("dataset '" + name + "' has no split");
    return subset(split->test);
  }
};

struct LoadOptions {
  DataFormat format = DataFormat::csv;
  int label_column = 0;  ///< csv only; negative counts from the end
  bool header = false;   ///< csv only; auto-detected when the first row is not numeric
  char delimiter = ',';
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::optional<double> parse_double(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, delim)) out.push_back(trim(cur));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

/// Orders label strings numerically when they all parse, lexicographically otherwise.
inline std::vector<std::string> ordered_labels(const std::vector<std::string>& raw) {
  std::vector<std::string> distinct(raw);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const bool numeric = std::all_of(distinct.begin(), distinct.end(),
                                   [](const std::string& s) { return parse_double(s).has_value(); });
  if (numeric) {
    std::sort(distinct.begin(), distinct.end(), [](const std::string& a, const std::string& b) {
      return *parse_double(a) < *parse_double(b);
    });
    // "1" and "1.0" denote the same class.
    distinct.erase(std::unique(distinct.begin(), distinct.end(),
                               [](const std::string& a, const std::string& b) {
                                 return *parse_double(a) == *parse_double(b);
                               }),
                   distinct.end());
  }
  return distinct;
}

inline Dataset assemble(std::vector<std::vector<double>> rows, const std::vector<std::string>& labels,
                        Eigen::Index dim, const std::string& name) {
  const auto classes = ordered_labels(labels);
  if (classes.size() != 2) {
    std::string seen;
    for (const auto& c : classes) seen += (seen.empty() ? "" : ", ") + c;
    throw DataError(name + ": expected exactly two label values, observed {" + seen + "}");
  }
  const bool numeric = parse_double(classes[0]).has_value();
  Dataset ds;
  ds.name = name;
  ds.label_names = {classes[0], classes[1]};
  ds.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), dim);
  ds.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      ds.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    const bool negative = numeric ? *parse_double(labels[r]) == *parse_double(classes[0])
                                  : labels[r] == classes[0];
    ds.y(static_cast<Eigen::Index>(r)) = negative ? -1.0 : 1.0;
  }
  return ds;
}

inline std::string at_line(const std::string& name, std::size_t line) {
  return name + ":" + std::to_string(line) + ": ";
}

}  // namespace detail

inline Dataset parse_csv(std::istream& in, const LoadOptions& opt, const std::string& name) {
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
  std::string line;
  std::size_t lineno = 0;
  Eigen::Index width = -1;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty() || detail::trim(line)[0] == '#') continue;
    auto fields = detail::split_fields(line, opt.delimiter);
    const auto w = static_cast<Eigen::Index>(fields.size());
    const int lc = opt.label_column < 0 ? static_cast<int>(w) + opt.label_column : opt.label_column;
    if (first) {
      first = false;
      // A header is the first row when asked for, or when any feature is text.
      bool numeric = true;
      for (int c = 0; c < w; ++c) {
        if (c != lc && !detail::parse_double(fields[static_cast<std::size_t>(c)])) numeric = false;
      }
      if (opt.header || !numeric) continue;
    }
    if (width < 0) width = w;
    if (w != width) {
      throw DataError(detail::at_line(name, lineno) + "expected " + std::to_string(width) +
                      " fields, found " + std::to_string(w));
    }
    if (lc < 0 || lc >= w) {
      throw DataError(detail::at_line(name, lineno) + "label column " +
                      std::to_string(opt.label_column) + " out of range");
    }
    std::vector<double> row;
    row.reserve(fields.size() - 1);
    for (int c = 0; c < w; ++c) {
      if (c == lc) continue;
      const auto v = detail::parse_double(fields[static_cast<std::size_t>(c)]);
      if (!v || !std::isfinite(*v)) {
        throw DataError(detail::at_line(name, lineno) + "field " + std::to_string(c + 1) +
                        " is not a finite number: '" + fields[static_cast<std::size_t>(c)] + "'");
      }
      row.push_back(*v);
    }
    if (fields[static_cast<std::size_t>(lc)].empty()) {
      throw DataError(detail::at_line(name, lineno) + "empty label");
    }
    labels.push_back(fields[static_cast<std::size_t>(lc)]);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(name + ": no data rows");
  return detail::assemble(std::move(rows), labels, width - 1, name);
}

inline Dataset parse_libsvm(std::istream& in, const std::string& name) {
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
  std::string line;
  std::size_t lineno = 0;
  Eigen::Index dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string label;
    if (!(ss >> label)) continue;
    std::vector<std::pair<long, double>> entries;
    std::string tok;
    long prev = 0;
    while (ss >> tok) {
      const auto colon = tok.find(':');
      long idx = 0;
      std::optional<double> v;
      if (colon != std::string::npos) {
        const auto [p, ec] = std::from_chars(tok.data(), tok.data() + colon, idx);
        if (ec == std::errc() && p == tok.data() + colon) {
          v = detail::parse_double(std::string_view(tok).substr(colon + 1));
        }
      }
      if (!v || idx < 1 || !std::isfinite(*v)) {
        throw DataError(detail::at_line(name, lineno) + "malformed entry '" + tok + "'");
      }
      if (idx <= prev) {
        throw DataError(detail::at_line(name, lineno) + "feature indices must increase");
      }
      prev = idx;
      entries.emplace_back(idx, *v);
    }
    std::vector<double> row(entries.empty() ? 0 : static_cast<std::size_t>(entries.back().first), 0.0);
    for (const auto& [idx, v] : entries) row[static_cast<std::size_t>(idx - 1)] = v;
    dim = std::max<Eigen::Index>(dim, static_cast<Eigen::Index>(row.size()));
    labels.push_back(label);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(name + ": no data rows");
  return detail::assemble(std::move(rows), labels, dim, name);
}

inline Dataset load(const std::string& path, const LoadOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return opt.format == DataFormat::csv ? parse_csv(in, opt, path) : parse_libsvm(in, path);
}

/// Loads separately provided train and test files as one dataset whose split
/// is fixed. Labels are mapped jointly so both files agree on the sign.
inline Dataset load_predefined(const std::string& train_path, const std::string& test_path,
                               const LoadOptions& opt = {}) {
  Dataset tr = load(train_path, opt);
  Dataset te = load(test_path, opt);
  if (tr.cols() != te.cols()) {
    // libsvm files may leave trailing features implicit.
    const Eigen::Index dim = std::max(tr.cols(), te.cols());
    if (opt.format != DataFormat::libsvm) {
      throw DataError("train and test files disagree on the number of features");
    }
    tr.X.conservativeResize(Eigen::NoChange, dim);
    te.X.conservativeResize(Eigen::NoChange, dim);
  }
  if (tr.label_names != te.label_names) {
    throw DataError("train and test files use different label values");
  }
  Dataset ds;
  ds.name = tr.name;
  ds.label_names = tr.label_names;
  ds.X.resize(tr.rows() + te.rows(), tr.cols());
  ds.X << tr.X, te.X;
  ds.y.resize(tr.rows() + te.rows());
  ds.y << tr.y, te.y;
  Split s;
  s.train.resize(static_cast<std::size_t>(tr.rows()));
  std::iota(s.train.begin(), s.train.end(), Eigen::Index{0});
  s.test.resize(static_cast<std::size_t>(te.rows()));
  std::iota(s.test.begin(), s.test.end(), tr.rows());
  ds.split = std::move(s);
  ds.predefined_split = true;
  return ds;
}

/// Per-feature affine map of the training range onto [-1, 1].
struct NormalizationTransform {
  Eigen::VectorXd min;
  Eigen::VectorXd max;

  bool empty() const { return min.size() == 0; }
  Eigen::Index dims() const { return min.size(); }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
    if (empty()) return X;
    if (X.cols() != dims()) {
      throw DomainError("normalizer expects " + std::to_string(dims()) + " features, got " +
                        std::to_string(X.cols()));
    }
    Eigen::MatrixXd out(X.rows(), X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double range = max(c) - min(c);
      if (range > 0.0) {
        out.col(c) = (2.0 * (X.col(c).array() - min(c)) / range - 1.0).matrix();
      } else {
        out.col(c).setZero();
      }
    }
    return out;
  }
};

inline NormalizationTransform fit_normalizer(const Eigen::MatrixXd& X) {
  if (X.rows() == 0) throw DataError("cannot fit a normalizer on an empty training set");
  return {X.colwise().minCoeff().transpose(), X.colwise().maxCoeff().transpose()};
}

inline NormalizationTransform fit_normalizer(const Dataset& train) { return fit_normalizer(train.X); }

/// Seeded shuffle; the first n_train shuffled rows train. Predefined splits
/// are returned unchanged.
inline Dataset split(const Dataset& ds, Eigen::Index n_train, std::uint64_t seed) {
  if (ds.predefined_split && ds.split) return ds;
  if (n_train < 1 || n_train >= ds.rows()) {
    throw DomainError("n_train must lie in [1, " + std::to_string(ds.rows() - 1) + "], got " +
                      std::to_string(n_train));
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(ds.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  Dataset out = ds;
  Split s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.test.assign(order.begin() + n_train, order.end());
  out.split = std::move(s);
  return out;
}

struct ClassCounts {
  Eigen::Index positive = 0;
  Eigen::Index negative = 0;
};

inline ClassCounts class_counts(const Eigen::VectorXd& y) {
  ClassCounts c;
  for (Eigen::Index i = 0; i < y.size(); ++i) (y(i) > 0 ? c.positive : c.negative) += 1;
  return c;
}

/// p = #(+1) / #(-1).
inline double class_ratio(const Eigen::VectorXd& y) {
  const auto c = class_counts(y);
  if (c.positive == 0 || c.negative == 0) {
    throw DataError("class ratio needs both classes (positives " + std::to_string(c.positive) +
                    ", negatives " + std::to_string(c.negative) + ")");
  }
  return static_cast<double>(c.positive) / static_cast<double>(c.negative);
}

inline double class_ratio(const Dataset& train) { return class_ratio(train.y); }

}  // namespace kplsvm
