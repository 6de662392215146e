#pragma once

// Datasets and batching: a synthetic latent-factor generator (class
// dictionary + shared-characteristic dictionary + white noise), CSV
// ingestion/export, disjoint zero-shot class splits and the
// m-per-class balanced batch sampler.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dml/matrix.hpp"

namespace dml {

struct Dataset {
  Matrix features;              // N x input_dim
  std::vector<int> labels;      // ground-truth class, contiguous from 0
  std::vector<int> surrogate;   // cluster label, updated during training
  std::vector<int> shared;      // hidden shared factor; synthetic data only

  std::size_t size() const { return features.rows(); }
  std::size_t input_dim() const { return features.cols(); }

  std::size_t num_classes() const {
    int m = -1;
    for (int l : labels) m = std::max(m, l);
    return static_cast<std::size_t>(m + 1);
  }

  std::vector<std::vector<std::size_t>> class_index() const {
    std::vector<std::vector<std::size_t>> idx(num_classes());
    for (std::size_t i = 0; i < labels.size(); ++i)
      idx[static_cast<std::size_t>(labels[i])].push_back(i);
    return idx;
  }

  void validate() const {
    if (size() == 0) throw std::invalid_argument("Dataset: empty");
    if (labels.size() != size())
      throw std::invalid_argument("Dataset: label count mismatch");
    for (int l : labels)
      if (l < 0) throw std::invalid_argument("Dataset: negative class label");
    for (const auto& members : class_index())
      if (members.empty())
        throw std::invalid_argument("Dataset: class labels not contiguous");
    if (!features.all_finite())
      throw std::invalid_argument("Dataset: non-finite feature value");
  }
};

struct SyntheticSpec {
  std::size_t num_classes = 40;   // total; zero-shot split halves them
  std::size_t per_class = 30;
  std::size_t num_shared = 4;
  std::size_t input_dim = 64;
  double noise_std = 0.1;
  double class_scale = 1.0;
  double shared_scale = 1.0;
};

namespace detail {

// Orthonormal dictionary columns via modified Gram-Schmidt on a Gaussian
// draw. dim >= cols is checked by the caller.
inline Matrix random_orthonormal_columns(std::size_t dim, std::size_t cols,
                                         std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(dim, cols);
  for (double& v : m.values()) v = g(rng);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += m(i, c) * m(i, prev);
      for (std::size_t i = 0; i < dim; ++i) m(i, c) -= dot * m(i, prev);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) norm += m(i, c) * m(i, c);
    norm = std::sqrt(norm);
    if (norm < 1e-9)
      throw std::runtime_error("random_orthonormal_columns: degenerate draw");
    for (std::size_t i = 0; i < dim; ++i) m(i, c) /= norm;
  }
  return m;
}

}  // namespace detail

// x = class_scale * M_class[:, y] + shared_scale * M_shared[:, s] + noise,
// with orthonormal dictionaries and the shared factor s drawn independently
// of the class. Samples are laid out class-major, labels contiguous.
inline Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 1 || spec.per_class < 1 || spec.num_shared < 1 ||
      spec.input_dim < 1)
    throw std::invalid_argument("generate_synthetic: counts must be >= 1");
  if (spec.input_dim < spec.num_classes + spec.num_shared)
    throw std::invalid_argument(
        "generate_synthetic: input_dim must be >= num_classes + num_shared "
        "so the dictionaries stay orthogonal");

  std::mt19937_64 rng(seed);
  Matrix dict = detail::random_orthonormal_columns(
      spec.input_dim, spec.num_classes + spec.num_shared, rng);

  const std::size_t n = spec.num_classes * spec.per_class;
  Dataset ds;
  ds.features = Matrix(n, spec.input_dim);
  ds.labels.resize(n);
  ds.surrogate.assign(n, 0);
  ds.shared.resize(n);

  std::uniform_int_distribution<std::size_t> pick_shared(0, spec.num_shared - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t row = 0;
  for (std::size_t y = 0; y < spec.num_classes; ++y) {
    for (std::size_t k = 0; k < spec.per_class; ++k, ++row) {
      const std::size_t s = pick_shared(rng);
      ds.labels[row] = static_cast<int>(y);
      ds.shared[row] = static_cast<int>(s);
      for (std::size_t j = 0; j < spec.input_dim; ++j) {
        double v = spec.class_scale * dict(j, y) +
                   spec.shared_scale * dict(j, spec.num_classes + s);
        if (spec.noise_std > 0.0) v += spec.noise_std * noise(rng);
        ds.features(row, j) = v;
      }
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// CSV ingestion / export. Format: one sample per row, integer class label
// first, feature values after, comma separated. Header row optional.
// ---------------------------------------------------------------------------

namespace detail {

inline double parse_cell(const std::string& cell, std::size_t line_no,
                         const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("csv line " + std::to_string(line_no) +
                             ": cannot parse " + std::string(what) + " '" + cell + "'");
  }
}

}  // namespace detail

inline Dataset load_features_csv(const std::string& path, bool has_header = false) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_features_csv: cannot open " + path);

  std::vector<std::vector<double>> rows;
  std::vector<int> raw_labels;
  std::string line;
  std::size_t line_no = 0;
  std::size_t expected_cols = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (has_header && line_no == 1) continue;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2)
      throw std::runtime_error("csv line " + std::to_string(line_no) +
                               ": need a label and at least one feature");
    if (expected_cols == 0) expected_cols = cells.size();
    if (cells.size() != expected_cols)
      throw std::runtime_error("csv line " + std::to_string(line_no) + ": has " +
                               std::to_string(cells.size()) + " columns, expected " +
                               std::to_string(expected_cols));
    const double label = detail::parse_cell(cells[0], line_no, "label");
    if (label != std::floor(label))
      throw std::runtime_error("csv line " + std::to_string(line_no) +
                               ": label must be an integer");
    raw_labels.push_back(static_cast<int>(label));
    std::vector<double> feat(cells.size() - 1);
    for (std::size_t j = 1; j < cells.size(); ++j)
      feat[j - 1] = detail::parse_cell(cells[j], line_no, "feature");
    rows.push_back(std::move(feat));
  }
  if (rows.empty())
    throw std::runtime_error("load_features_csv: " + path + " has no data rows");

  // remap arbitrary integer labels to contiguous ids in sorted order
  std::vector<int> uniq = raw_labels;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  Dataset ds;
  ds.features = Matrix(rows.size(), rows[0].size());
  ds.labels.resize(rows.size());
  ds.surrogate.assign(rows.size(), 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) ds.features(i, j) = rows[i][j];
    const auto it = std::lower_bound(uniq.begin(), uniq.end(), raw_labels[i]);
    ds.labels[i] = static_cast<int>(it - uniq.begin());
  }
  ds.validate();
  return ds;
}

inline void save_features_csv(const Dataset& ds, const std::string& path,
                              bool with_header = false) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_features_csv: cannot open " + path);
  f.precision(17);
  if (with_header) {
    f << "label";
    for (std::size_t j = 0; j < ds.input_dim(); ++j) f << ",x" << j;
    f << '\n';
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    f << ds.labels[i];
    for (std::size_t j = 0; j < ds.input_dim(); ++j) f << ',' << ds.features(i, j);
    f << '\n';
  }
  if (!f) throw std::runtime_error("save_features_csv: write failed for " + path);
}

// Synthetic-only sidecar so the hidden factor survives a round trip to disk.
inline void save_factors_csv(const Dataset& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_factors_csv: cannot open " + path);
  f << "id,label,shared\n";
  for (std::size_t i = 0; i < ds.size(); ++i)
    f << i << ',' << ds.labels[i] << ','
      << (ds.shared.empty() ? -1 : ds.shared[i]) << '\n';
}

// ---------------------------------------------------------------------------
// Zero-shot splits and subset views
// ---------------------------------------------------------------------------

struct SplitSpec {
  std::vector<int> train_classes;
  std::vector<int> test_classes;

  void validate() const {
    for (int c : train_classes)
      for (int t : test_classes)
        if (c == t)
          throw std::invalid_argument("SplitSpec: class " + std::to_string(c) +
                                      " appears in both train and test");
  }
};

// First half of the classes train, second half test.
inline SplitSpec make_zero_shot_split(std::size_t num_classes) {
  if (num_classes < 2)
    throw std::invalid_argument("make_zero_shot_split: need at least 2 classes");
  SplitSpec s;
  for (std::size_t c = 0; c < num_classes; ++c)
    (c < num_classes / 2 ? s.train_classes : s.test_classes).push_back(static_cast<int>(c));
  return s;
}

struct SubsetView {
  Dataset data;                          // labels remapped to 0..K-1
  std::vector<std::size_t> orig_indices; // position in the parent dataset
};

inline SubsetView subset_by_classes(const Dataset& ds, const std::vector<int>& classes) {
  std::vector<int> sorted = classes;
  std::sort(sorted.begin(), sorted.end());
  SubsetView v;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (std::binary_search(sorted.begin(), sorted.end(), ds.labels[i]))
      v.orig_indices.push_back(i);
  if (v.orig_indices.empty())
    throw std::invalid_argument("subset_by_classes: no samples in requested classes");

  v.data.features = Matrix(v.orig_indices.size(), ds.input_dim());
  v.data.labels.resize(v.orig_indices.size());
  v.data.surrogate.assign(v.orig_indices.size(), 0);
  if (!ds.shared.empty()) v.data.shared.resize(v.orig_indices.size());
  for (std::size_t i = 0; i < v.orig_indices.size(); ++i) {
    const std::size_t src = v.orig_indices[i];
    for (std::size_t j = 0; j < ds.input_dim(); ++j)
      v.data.features(i, j) = ds.features(src, j);
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), ds.labels[src]);
    v.data.labels[i] = static_cast<int>(it - sorted.begin());
    if (!ds.shared.empty()) v.data.shared[i] = ds.shared[src];
  }
  v.data.validate();
  return v;
}

// ---------------------------------------------------------------------------
// Balanced batches: bs/m distinct classes, m samples each
// ---------------------------------------------------------------------------

struct BatchSpec {
  std::size_t batch_size = 112;
  std::size_t per_class = 4;

  void validate(std::size_t num_classes) const {
    if (per_class < 1 || batch_size < 1)
      throw std::invalid_argument("BatchSpec: sizes must be >= 1");
    if (batch_size % per_class != 0)
      throw std::invalid_argument("BatchSpec: batch_size must be a multiple of per_class");
    if (batch_size / per_class > num_classes)
      throw std::invalid_argument("BatchSpec: batch needs " +
                                  std::to_string(batch_size / per_class) +
                                  " distinct classes but only " +
                                  std::to_string(num_classes) + " exist");
  }
};

// Classes drawn uniformly without replacement; within a class, samples
// without replacement when it has at least m members, otherwise with
// replacement (duplicates allowed).
inline std::vector<std::size_t> next_batch(
    const std::vector<std::vector<std::size_t>>& class_index,
    const BatchSpec& spec, std::mt19937_64& rng) {
  spec.validate(class_index.size());
  const std::size_t num_groups = spec.batch_size / spec.per_class;

  std::vector<std::size_t> class_order(class_index.size());
  for (std::size_t i = 0; i < class_order.size(); ++i) class_order[i] = i;
  for (std::size_t i = 0; i < num_groups; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, class_order.size() - 1);
    std::swap(class_order[i], class_order[pick(rng)]);
  }

  std::vector<std::size_t> batch;
  batch.reserve(spec.batch_size);
  std::vector<std::size_t> pool;
  for (std::size_t g = 0; g < num_groups; ++g) {
    const auto& members = class_index[class_order[g]];
    if (members.empty())
      throw std::invalid_argument("next_batch: empty class " +
                                  std::to_string(class_order[g]));
    if (members.size() >= spec.per_class) {
      pool = members;
      for (std::size_t k = 0; k < spec.per_class; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
        std::swap(pool[k], pool[pick(rng)]);
        batch.push_back(pool[k]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      for (std::size_t k = 0; k < spec.per_class; ++k)
        batch.push_back(members[pick(rng)]);
    }
  }
  return batch;
}

}  // namespace dml
