#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cwcf/common.hpp"
#include "cwcf/io.hpp"

namespace cwcf {

enum class SplitId { Train, Val, Test };

inline const char* to_string(SplitId s) {
  switch (s) {
    case SplitId::Train: return "train";
    case SplitId::Val: return "val";
    case SplitId::Test: return "test";
  }
  return "?";
}

inline SplitId parse_split(const std::string& s) {
  if (s == "train") return SplitId::Train;
  if (s == "val") return SplitId::Val;
  if (s == "test") return SplitId::Test;
  throw ValidationError("unknown split '" + s + "'");
}

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct Split {
  std::vector<std::size_t> train, val, test;

  const std::vector<std::size_t>& operator[](SplitId id) const {
    switch (id) {
      case SplitId::Train: return train;
      case SplitId::Val: return val;
      case SplitId::Test: return test;
    }
    return train;
  }
};

// Feature matrix is stored normalized with train-split statistics; absent
// entries hold 0, which is the mean-imputed value.
struct Dataset {
  std::vector<std::string> feature_names;
  int n_classes = 0;
  Matrix features;
  std::vector<int> labels;
  std::vector<double> costs;
  ByteMatrix present;
  std::vector<double> means, stds;
  Split split;
  std::uint64_t seed = 0;

  int n_features() const { return static_cast<int>(features.cols()); }
  std::size_t n_samples() const { return static_cast<std::size_t>(features.rows()); }
  int n_actions() const { return n_features() + n_classes; }
  double total_cost() const { return std::accumulate(costs.begin(), costs.end(), 0.0); }
};

using CostTable = std::map<std::string, double>;

namespace detail {

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

inline void validate_costs(const std::vector<double>& costs) {
  for (std::size_t i = 0; i < costs.size(); ++i)
    if (!(costs[i] > 0.0) || !std::isfinite(costs[i]))
      throw ValidationError("cost of feature " + std::to_string(i) + " must be positive, got " +
                            std::to_string(costs[i]));
}

// Two-column CSV: feature,cost. A first row whose cost column is not numeric
// is treated as a header.
inline CostTable read_cost_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open cost file: " + path);
  CostTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != 2) throw ParseError(path + ":" + std::to_string(lineno) + ": expected 2 columns");
    auto cost = detail::parse_double(cells[1]);
    if (!cost) {
      if (lineno == 1) continue;
      throw ParseError(path + ":" + std::to_string(lineno) + ": bad cost '" + cells[1] + "'");
    }
    if (!(*cost > 0.0)) throw ValidationError("non-positive cost for feature '" + cells[0] + "'");
    table[cells[0]] = *cost;
  }
  return table;
}

inline std::vector<double> costs_from_table(const CostTable& table, const std::vector<std::string>& names) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = i;
  for (const auto& [name, cost] : table)
    if (!index.count(name)) throw ValidationError("cost file names unknown feature '" + name + "'");
  std::vector<double> costs(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = table.find(names[i]);
    if (it == table.end()) throw ValidationError("cost file has no entry for feature '" + names[i] + "'");
    costs[i] = it->second;
  }
  validate_costs(costs);
  return costs;
}

// Stratified by class. Indices inside each split are sorted ascending.
inline Split stratified_split(const std::vector<int>& labels, int n_classes, const SplitFractions& f,
                              std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ValidationError("split fractions must be nonnegative and sum to 1");
  Rng rng(seed);
  Split split;
  for (int c = 0; c < n_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = idx.size();
    const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n))));
    const auto n_val =
        std::min(n - n_train, static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n))));
    const auto n_test = f.test == 0.0 ? 0 : n - n_train - n_val;
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + n_train);
    split.val.insert(split.val.end(), idx.begin() + n_train, idx.begin() + n_train + n_val);
    split.test.insert(split.test.end(), idx.begin() + n_train + n_val, idx.begin() + n_train + n_val + n_test);
    // With test=0, rounding leftovers go to train.
    if (f.test == 0.0)
      split.train.insert(split.train.end(), idx.begin() + n_train + n_val, idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  if (split.train.empty()) throw ValidationError("empty train split");
  return split;
}

struct NormalizationStats {
  std::vector<double> means, stds;
};

// Mean and population std over the present entries of the given rows.
// Constant or never-present columns get std = 1.
inline NormalizationStats compute_stats(const Matrix& x, const ByteMatrix& present,
                                        const std::vector<std::size_t>& rows) {
  const auto d = static_cast<std::size_t>(x.cols());
  NormalizationStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    std::size_t count = 0;
    for (auto r : rows)
      if (present(r, j)) {
        sum += x(r, j);
        ++count;
      }
    if (count == 0) continue;
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (auto r : rows)
      if (present(r, j)) ss += (x(r, j) - mean) * (x(r, j) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(count));
    s.means[j] = mean;
    s.stds[j] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

inline void apply_stats(Matrix& x, const ByteMatrix& present, const NormalizationStats& s) {
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      x(i, j) = present(i, j) ? (x(i, j) - s.means[j]) / s.stds[j] : 0.0;
}

// Builds a normalized Dataset from raw values. Used by the CSV loader and the
// synthetic generators.
inline Dataset assemble_dataset(std::vector<std::string> names, Matrix raw, ByteMatrix present,
                                std::vector<int> labels, int n_classes, std::vector<double> costs,
                                const SplitFractions& fractions, std::uint64_t seed) {
  if (raw.rows() != static_cast<Eigen::Index>(labels.size()) || raw.rows() != present.rows() ||
      raw.cols() != present.cols())
    throw ShapeError("dataset matrices disagree in shape");
  if (costs.size() != static_cast<std::size_t>(raw.cols()) || names.size() != costs.size())
    throw ShapeError("one cost and one name per feature required");
  validate_costs(costs);
  for (int y : labels)
    if (y < 0 || y >= n_classes) throw ValidationError("label out of range");

  Dataset d;
  d.feature_names = std::move(names);
  d.n_classes = n_classes;
  d.labels = std::move(labels);
  d.costs = std::move(costs);
  d.present = std::move(present);
  d.seed = seed;
  d.split = stratified_split(d.labels, n_classes, fractions, seed);
  auto stats = compute_stats(raw, d.present, d.split.train);
  apply_stats(raw, d.present, stats);
  d.features = std::move(raw);
  d.means = std::move(stats.means);
  d.stds = std::move(stats.stds);
  return d;
}

// Re-applies normalization using statistics of the current (already
// normalized) train split; composes the stored statistics accordingly.
inline Dataset renormalize(const Dataset& d) {
  Dataset out = d;
  auto s = compute_stats(out.features, out.present, out.split.train);
  apply_stats(out.features, out.present, s);
  for (std::size_t j = 0; j < out.means.size(); ++j) {
    out.means[j] += s.means[j] * out.stds[j];
    out.stds[j] *= s.stds[j];
  }
  return out;
}

// CSV with header row; the label column is named `label`. Empty cells mark
// absent values. Without a cost file every feature costs 1.0.
inline Dataset load_dataset(const std::string& data_path, const std::optional<std::string>& costs_path,
                            const SplitFractions& fractions, std::uint64_t seed) {
  std::ifstream in(data_path);
  if (!in) throw ParseError("cannot open data file: " + data_path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(data_path + ":1: missing header");
  auto header = detail::split_csv_line(line);
  auto label_it = std::find(header.begin(), header.end(), "label");
  if (label_it == header.end()) throw ParseError(data_path + ":1: no 'label' column");
  const auto label_col = static_cast<std::size_t>(label_it - header.begin());
  std::vector<std::string> names;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (i != label_col) names.push_back(header[i]);
  const auto d = names.size();
  if (d == 0) throw ParseError(data_path + ":1: no feature columns");

  std::vector<double> values;
  std::vector<std::uint8_t> mask;
  std::vector<std::string> raw_labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError(data_path + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(cells.size()));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i == label_col) {
        if (cells[i].empty()) throw ParseError(data_path + ":" + std::to_string(lineno) + ": empty label");
        raw_labels.push_back(cells[i]);
        continue;
      }
      if (cells[i].empty()) {
        values.push_back(0.0);
        mask.push_back(0);
        continue;
      }
      auto v = detail::parse_double(cells[i]);
      if (!v)
        throw ParseError(data_path + ":" + std::to_string(lineno) + ": bad number '" + cells[i] + "' in column '" +
                         header[i] + "'");
      values.push_back(*v);
      mask.push_back(1);
    }
  }
  const auto n = raw_labels.size();
  if (n == 0) throw ParseError(data_path + ": no data rows");

  // Integer labels sort numerically, anything else lexicographically.
  std::vector<std::string> distinct(raw_labels);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const bool numeric = std::all_of(distinct.begin(), distinct.end(), [](const std::string& s) {
    long long v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && p == s.data() + s.size();
  });
  if (numeric)
    std::sort(distinct.begin(), distinct.end(),
              [](const std::string& a, const std::string& b) { return std::stoll(a) < std::stoll(b); });
  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < distinct.size(); ++i) class_index[distinct[i]] = static_cast<int>(i);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = class_index[raw_labels[i]];

  Matrix raw = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  ByteMatrix present =
      Eigen::Map<ByteMatrix>(mask.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<double> costs(d, 1.0);
  if (costs_path) costs = costs_from_table(read_cost_table(*costs_path), names);
  return assemble_dataset(std::move(names), std::move(raw), std::move(present), std::move(labels),
                          static_cast<int>(distinct.size()), std::move(costs), fractions, seed);
}

// Marks train entries (and optionally val entries) absent independently with
// probability `rate`. The test split is never touched.
inline Dataset mcar_drop(const Dataset& d, double rate, std::uint64_t seed, bool include_val = false) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("missing rate must lie in [0,1]");
  Dataset out = d;
  Rng rng(seed);
  std::bernoulli_distribution drop(rate);
  auto corrupt = [&](const std::vector<std::size_t>& rows) {
    for (auto r : rows)
      for (int j = 0; j < out.n_features(); ++j)
        if (drop(rng)) {
          out.present(r, j) = 0;
          out.features(r, j) = 0.0;
        }
  };
  corrupt(out.split.train);
  if (include_val) corrupt(out.split.val);
  return out;
}

// Mean-imputation-only view: absent entries keep their imputed value 0 but are
// reported as present, so acquisition of them is allowed during training.
inline Dataset impute_mean(const Dataset& d) {
  Dataset out = d;
  out.present.setOnes();
  return out;
}

inline double missing_fraction(const Dataset& d, SplitId which) {
  const auto& rows = d.split[which];
  if (rows.empty()) return 0.0;
  std::size_t missing = 0;
  for (auto r : rows)
    for (int j = 0; j < d.n_features(); ++j) missing += d.present(r, j) ? 0 : 1;
  return static_cast<double>(missing) / static_cast<double>(rows.size() * static_cast<std::size_t>(d.n_features()));
}

inline int majority_class(const Dataset& d) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(d.n_classes), 0);
  for (auto r : d.split.train) ++counts[static_cast<std::size_t>(d.labels[r])];
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

// Accuracy of always predicting the train-majority class on `which`.
inline double prior_accuracy(const Dataset& d, SplitId which) {
  const auto& rows = d.split[which];
  if (rows.empty()) return 0.0;
  const int maj = majority_class(d);
  std::size_t hit = 0;
  for (auto r : rows) hit += d.labels[r] == maj ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// Synthetic generators

// two-informative:  binary features; label = f0 AND f1 (or XOR); rest noise.
// gaussian-evidence: binary label; x_i = s_i * (2y - 1) + N(0, 1) with
//                    s_i = signal * decay^i, so features are graded in value.
// single-informative: binary features; label = f0; rest noise.
struct SyntheticSpec {
  std::string generator = "two-informative";
  int n_features = 6;
  std::size_t n_samples = 2000;
  std::string rule = "and";  // two-informative only: "and" | "xor"
  double signal = 1.0;
  double decay = 0.85;
  std::vector<double> costs;  // empty = uniform 1.0
  SplitFractions fractions{0.6, 0.2, 0.2};
};

inline Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  const int n = spec.n_features;
  if (n <= 0 || spec.n_samples == 0) throw ValidationError("synthetic dataset needs features and samples");
  if ((spec.generator == "two-informative" && n < 2) || (spec.generator == "single-informative" && n < 1))
    throw ValidationError("too few features for generator " + spec.generator);
  const auto rows = static_cast<Eigen::Index>(spec.n_samples);
  Matrix raw(rows, n);
  std::vector<int> labels(spec.n_samples);
  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> noise(0.0, 1.0);

  if (spec.generator == "two-informative" || spec.generator == "single-informative") {
    if (spec.generator == "two-informative" && spec.rule != "and" && spec.rule != "xor")
      throw ValidationError("unknown label rule '" + spec.rule + "'");
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (int j = 0; j < n; ++j) raw(i, j) = coin(rng) ? 1.0 : 0.0;
      const bool a = raw(i, 0) > 0.5;
      int y = a ? 1 : 0;
      if (spec.generator == "two-informative") {
        const bool b = raw(i, 1) > 0.5;
        y = spec.rule == "and" ? (a && b) : (a != b);
      }
      labels[static_cast<std::size_t>(i)] = y;
    }
  } else if (spec.generator == "gaussian-evidence") {
    for (Eigen::Index i = 0; i < rows; ++i) {
      const int y = coin(rng) ? 1 : 0;
      labels[static_cast<std::size_t>(i)] = y;
      double s = spec.signal;
      for (int j = 0; j < n; ++j, s *= spec.decay) raw(i, j) = s * (2.0 * y - 1.0) + noise(rng);
    }
  } else {
    throw ValidationError("unknown synthetic generator '" + spec.generator + "'");
  }

  std::vector<std::string> names;
  for (int j = 0; j < n; ++j) names.push_back("f" + std::to_string(j));
  std::vector<double> costs = spec.costs.empty() ? std::vector<double>(static_cast<std::size_t>(n), 1.0) : spec.costs;
  ByteMatrix present = ByteMatrix::Ones(rows, n);
  return assemble_dataset(std::move(names), std::move(raw), std::move(present), std::move(labels), 2,
                          std::move(costs), spec.fractions, seed);
}

// ---------------------------------------------------------------------------
// Snapshot: io container with magic "CWCFDATA".

inline constexpr io::Magic kDatasetMagic{'C', 'W', 'C', 'F', 'D', 'A', 'T', 'A'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& d, const std::string& path) {
  nlohmann::json meta{{"feature_names", d.feature_names},
                      {"n_classes", d.n_classes},
                      {"n_samples", d.n_samples()},
                      {"costs", d.costs},
                      {"means", d.means},
                      {"stds", d.stds},
                      {"seed", d.seed},
                      {"split_sizes", {d.split.train.size(), d.split.val.size(), d.split.test.size()}}};
  io::Writer w(path);
  w.header(kDatasetMagic, kDatasetVersion, meta);
  w.block(d.features.data(), static_cast<std::size_t>(d.features.size()));
  std::vector<std::int32_t> labels(d.labels.begin(), d.labels.end());
  w.block(labels);
  w.block(d.present.data(), static_cast<std::size_t>(d.present.size()));
  for (const auto* part : {&d.split.train, &d.split.val, &d.split.test}) {
    std::vector<std::uint64_t> idx(part->begin(), part->end());
    w.block(idx);
  }
  w.close();
}

inline Dataset load_snapshot(const std::string& path) {
  io::Reader r(path);
  const auto meta = r.header(kDatasetMagic, kDatasetVersion);
  Dataset d;
  d.feature_names = meta.at("feature_names").get<std::vector<std::string>>();
  d.n_classes = meta.at("n_classes").get<int>();
  d.costs = meta.at("costs").get<std::vector<double>>();
  d.means = meta.at("means").get<std::vector<double>>();
  d.stds = meta.at("stds").get<std::vector<double>>();
  d.seed = meta.at("seed").get<std::uint64_t>();
  const auto n = meta.at("n_samples").get<std::size_t>();
  const auto f = d.feature_names.size();
  const auto sizes = meta.at("split_sizes").get<std::vector<std::size_t>>();
  d.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
  r.block(d.features.data(), n * f);
  auto labels = r.block<std::int32_t>(n);
  d.labels.assign(labels.begin(), labels.end());
  d.present.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
  r.block(d.present.data(), n * f);
  std::vector<std::size_t>* parts[] = {&d.split.train, &d.split.val, &d.split.test};
  for (std::size_t p = 0; p < 3; ++p) {
    auto idx = r.block<std::uint64_t>(sizes.at(p));
    parts[p]->assign(idx.begin(), idx.end());
  }
  return d;
}

}  // namespace cwcf
