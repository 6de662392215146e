#pragma once

// The surrogate-label pipeline: per-class feature standardization to
// suppress class-specific structure, seeded k-means over the standardized
// space, scheduled relabeling from the auxiliary embedding, and the
// label-switch regularizer.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <vector>

#include "dml/matrix.hpp"
#include "dml/model.hpp"

namespace dml {

inline constexpr double kStdEps = 1e-8;

struct ClassStats {
  std::vector<int> class_ids;        // sorted, one row per class below
  Matrix mean;                       // K x F
  Matrix stddev;                     // K x F, population (ddof 0)
  std::vector<std::size_t> count;

  std::size_t index_of(int class_id) const {
    auto it = std::lower_bound(class_ids.begin(), class_ids.end(), class_id);
    if (it == class_ids.end() || *it != class_id)
      throw std::invalid_argument("ClassStats: unknown class " + std::to_string(class_id));
    return static_cast<std::size_t>(it - class_ids.begin());
  }
};

struct StandardizeResult {
  Matrix z;
  ClassStats stats;
};

// z_i = (x_i - mu_y) / max(sigma_y, eps), elementwise. The max() keeps
// singleton classes and constant dimensions finite and makes the transform
// idempotent to machine precision.
inline StandardizeResult class_standardize(const Matrix& features,
                                           const std::vector<int>& labels,
                                           double eps = kStdEps) {
  const std::size_t n = features.rows();
  const std::size_t f = features.cols();
  if (n == 0) throw std::invalid_argument("class_standardize: empty input");
  if (labels.size() != n)
    throw std::invalid_argument("class_standardize: labels size mismatch");

  StandardizeResult r;
  r.stats.class_ids.assign(labels.begin(), labels.end());
  std::sort(r.stats.class_ids.begin(), r.stats.class_ids.end());
  r.stats.class_ids.erase(
      std::unique(r.stats.class_ids.begin(), r.stats.class_ids.end()),
      r.stats.class_ids.end());
  const std::size_t k = r.stats.class_ids.size();
  r.stats.mean = Matrix(k, f);
  r.stats.stddev = Matrix(k, f);
  r.stats.count.assign(k, 0);

  std::vector<std::size_t> row_class(n);
  for (std::size_t i = 0; i < n; ++i) {
    row_class[i] = r.stats.index_of(labels[i]);
    ++r.stats.count[row_class[i]];
    for (std::size_t j = 0; j < f; ++j) r.stats.mean(row_class[i], j) += features(i, j);
  }
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < f; ++j)
      r.stats.mean(c, j) /= static_cast<double>(r.stats.count[c]);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      const double d = features(i, j) - r.stats.mean(row_class[i], j);
      r.stats.stddev(row_class[i], j) += d * d;
    }
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < f; ++j)
      r.stats.stddev(c, j) = std::sqrt(r.stats.stddev(c, j) / static_cast<double>(r.stats.count[c]));

  r.z = Matrix(n, f);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      const double denom = std::max(r.stats.stddev(row_class[i], j), eps);
      r.z(i, j) = (features(i, j) - r.stats.mean(row_class[i], j)) / denom;
    }
  return r;
}

struct ClusterModel {
  Matrix centroids;              // C x F
  std::vector<int> assignments;  // nearest centroid per sample
  double inertia = 0.0;          // sum of squared distances to assigned centroid
  std::vector<double> inertia_history;  // one entry per Lloyd iteration
};

namespace detail {

inline std::size_t nearest_centroid(const Matrix& points, std::size_t i,
                                    const Matrix& centroids) {
  std::size_t best = 0;
  double best_d = row_sq_distance(points, i, centroids, 0);
  for (std::size_t c = 1; c < centroids.rows(); ++c) {
    const double d = row_sq_distance(points, i, centroids, c);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

inline Matrix kmeanspp_init(const Matrix& z, std::size_t c, std::mt19937_64& rng) {
  const std::size_t n = z.rows();
  Matrix centroids(c, z.cols());
  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, 0.0);

  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = first(rng);
  chosen[pick] = true;
  for (std::size_t j = 0; j < z.cols(); ++j) centroids(0, j) = z(pick, j);

  for (std::size_t k = 1; k < c; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = row_sq_distance(z, i, centroids, 0);
      for (std::size_t cc = 1; cc < k; ++cc)
        best = std::min(best, row_sq_distance(z, i, centroids, cc));
      d2[i] = best;
      total += best;
    }
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      const double target = u(rng);
      double cum = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        cum += d2[i];
        if (target < cum) {
          pick = i;
          break;
        }
      }
    } else {
      // all remaining weight is zero (duplicate points): pick any unchosen index
      pick = 0;
      while (pick < n && chosen[pick]) ++pick;
      if (pick == n) pick = 0;
    }
    chosen[pick] = true;
    for (std::size_t j = 0; j < z.cols(); ++j) centroids(k, j) = z(pick, j);
  }
  return centroids;
}

}  // namespace detail

// Seeded k-means++ plus Lloyd iterations. Empty clusters seize the point
// farthest from its assigned centroid (only from clusters that keep at
// least one member). Inertia is recorded once per iteration and is
// non-increasing. Points are processed in lexicographic row order, so the
// resulting partition does not depend on the caller's sample order.
inline ClusterModel kmeans(const Matrix& points, std::size_t c, std::uint64_t seed,
                           std::size_t max_iter = 100, double tol = 1e-6) {
  const std::size_t n = points.rows();
  if (c < 1) throw std::invalid_argument("kmeans: need at least one cluster");
  if (c > n)
    throw std::invalid_argument("kmeans: " + std::to_string(c) + " clusters for " +
                                std::to_string(n) + " samples");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t j = 0; j < points.cols(); ++j) {
      if (points(a, j) < points(b, j)) return true;
      if (points(a, j) > points(b, j)) return false;
    }
    return false;
  });
  Matrix z(n, points.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < points.cols(); ++j) z(i, j) = points(order[i], j);

  std::mt19937_64 rng(seed);
  ClusterModel cm;
  cm.centroids = detail::kmeanspp_init(z, c, rng);
  cm.assignments.assign(n, 0);
  std::vector<std::size_t> members(c, 0);

  auto assign_and_repair = [&]() {
    std::fill(members.begin(), members.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      cm.assignments[i] = static_cast<int>(detail::nearest_centroid(z, i, cm.centroids));
      ++members[cm.assignments[i]];
    }
    for (std::size_t cc = 0; cc < c; ++cc) {
      if (members[cc] > 0) continue;
      std::size_t worst = n;
      double worst_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (members[cm.assignments[i]] < 2) continue;  // keep donors non-empty
        const double d = row_sq_distance(z, i, cm.centroids,
                                         static_cast<std::size_t>(cm.assignments[i]));
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      if (worst == n) continue;
      --members[cm.assignments[worst]];
      cm.assignments[worst] = static_cast<int>(cc);
      members[cc] = 1;
      for (std::size_t j = 0; j < z.cols(); ++j) cm.centroids(cc, j) = z(worst, j);
    }
  };

  auto current_inertia = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      s += row_sq_distance(z, i, cm.centroids,
                           static_cast<std::size_t>(cm.assignments[i]));
    return s;
  };

  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    assign_and_repair();
    cm.inertia_history.push_back(current_inertia());

    Matrix next(c, z.cols());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < z.cols(); ++j)
        next(static_cast<std::size_t>(cm.assignments[i]), j) += z(i, j);
    double shift = 0.0;
    for (std::size_t cc = 0; cc < c; ++cc) {
      for (std::size_t j = 0; j < z.cols(); ++j)
        next(cc, j) /= static_cast<double>(members[cc]);
      shift = std::max(shift, std::sqrt(row_sq_distance(next, cc, cm.centroids, cc)));
    }
    cm.centroids = std::move(next);
    if (shift < tol) break;
  }

  // settle on a fixed point of the final centroids
  assign_and_repair();
  cm.inertia = current_inertia();
  cm.inertia_history.push_back(cm.inertia);

  // undo the canonical ordering
  std::vector<int> assignments(n);
  for (std::size_t i = 0; i < n; ++i) assignments[order[i]] = cm.assignments[i];
  cm.assignments = std::move(assignments);
  return cm;
}

struct SurrogateMining {
  std::vector<int> labels;
  ClusterModel cluster;
};

// Initial surrogate labels: standardize per ground-truth class, then cluster.
inline SurrogateMining mine_surrogate_labels(const Matrix& features,
                                             const std::vector<int>& labels,
                                             std::size_t c, std::uint64_t seed) {
  StandardizeResult st = class_standardize(features, labels);
  SurrogateMining m;
  m.cluster = kmeans(st.z, c, seed);
  m.labels = m.cluster.assignments;
  return m;
}

// Scheduled refresh: cluster the auxiliary embedding directly. The initial
// mining standardizes; refreshes do not, unless the caller opts in.
inline SurrogateMining update_surrogate_labels(
    const ModelParams& params, const Matrix& x, std::size_t c,
    std::uint64_t seed, bool standardize = false,
    const std::vector<int>* class_labels = nullptr) {
  if (params.dims.d_beta == 0)
    throw std::invalid_argument("update_surrogate_labels: auxiliary branch disabled");
  EmbedBatch eb = embed(params, x);
  SurrogateMining m;
  if (standardize) {
    if (class_labels == nullptr)
      throw std::invalid_argument("update_surrogate_labels: standardize needs class labels");
    m.cluster = kmeans(class_standardize(eb.e_beta, *class_labels).z, c, seed);
  } else {
    m.cluster = kmeans(eb.e_beta, c, seed);
  }
  m.labels = m.cluster.assignments;
  return m;
}

// Each sample, with probability p, swaps its label with a uniformly chosen
// sample currently holding a different label. A sample already swapped this
// round (as trigger or partner) does not trigger again, so a pair at p=1
// swaps exactly once. The label multiset is preserved exactly.
inline std::vector<int> switch_labels(const std::vector<int>& labels, double p,
                                      std::mt19937_64& rng) {
  if (p < 0.0 || p > 1.0)
    throw std::invalid_argument("switch_labels: p must be in [0, 1]");
  std::vector<int> out = labels;
  if (out.empty() || p == 0.0) return out;
  if (std::all_of(out.begin(), out.end(), [&](int l) { return l == out[0]; }))
    return out;

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<bool> touched(out.size(), false);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (u(rng) >= p || touched[i]) continue;
    candidates.clear();
    for (std::size_t j = 0; j < out.size(); ++j)
      if (out[j] != out[i]) candidates.push_back(j);
    if (candidates.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    const std::size_t j = candidates[pick(rng)];
    std::swap(out[i], out[j]);
    touched[i] = true;
    touched[j] = true;
  }
  return out;
}

// Inspection dump: centroid rows followed by per-sample assignments.
inline void dump_cluster_model(const ClusterModel& cm, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("dump_cluster_model: cannot open " + path);
  f.precision(17);
  f << "kind,id,values\n";
  for (std::size_t c = 0; c < cm.centroids.rows(); ++c) {
    f << "centroid," << c;
    for (std::size_t j = 0; j < cm.centroids.cols(); ++j) f << ',' << cm.centroids(c, j);
    f << '\n';
  }
  for (std::size_t i = 0; i < cm.assignments.size(); ++i)
    f << "assignment," << i << ',' << cm.assignments[i] << '\n';
  if (!f) throw std::runtime_error("dump_cluster_model: write failed for " + path);
}

}  // namespace dml
