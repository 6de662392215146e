#pragma once

// Retrieval and clustering metrics: Recall@k with deterministic tie
// handling, normalized mutual information, and the intra/inter class
// variance ratio, plus the embedding CSV dump.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dml/data.hpp"
#include "dml/matrix.hpp"
#include "dml/model.hpp"

namespace dml {

// Fraction of queries with a same-label sample among their k nearest
// neighbors (self excluded, Euclidean, ties broken by lower index).
inline std::map<int, double> recall_at_k(const Matrix& emb,
                                         const std::vector<int>& labels,
                                         const std::vector<int>& ks) {
  const std::size_t n = emb.rows();
  if (n < 2) throw std::invalid_argument("recall_at_k: need at least 2 samples");
  if (labels.size() != n)
    throw std::invalid_argument("recall_at_k: labels size mismatch");
  int max_k = 0;
  for (int k : ks) {
    if (k < 1 || static_cast<std::size_t>(k) >= n)
      throw std::invalid_argument("recall_at_k: k=" + std::to_string(k) +
                                  " out of range for " + std::to_string(n) + " samples");
    max_k = std::max(max_k, k);
  }

  std::map<int, double> hits;
  for (int k : ks) hits[k] = 0.0;

  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t q = 0; q < n; ++q) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != q) order.emplace_back(row_sq_distance(emb, q, emb, j), j);
    std::partial_sort(order.begin(), order.begin() + max_k, order.end());
    int first_hit_rank = -1;
    for (int r = 0; r < max_k; ++r)
      if (labels[order[static_cast<std::size_t>(r)].second] == labels[q]) {
        first_hit_rank = r;
        break;
      }
    if (first_hit_rank >= 0)
      for (int k : ks)
        if (first_hit_rank < k) hits[k] += 1.0;
  }
  for (auto& [k, v] : hits) v /= static_cast<double>(n);
  return hits;
}

// I(A;B) / sqrt(H(A) H(B)) with natural-log entropies from empirical joint
// counts. Both partitions trivial -> 1; exactly one trivial -> 0.
inline double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("nmi: labelings must have equal nonzero length");
  const double n = static_cast<double>(a.size());

  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pj;
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1.0;
    pb[b[i]] += 1.0;
    pj[{a[i], b[i]}] += 1.0;
  }
  auto entropy = [n](const std::map<int, double>& p) {
    double h = 0.0;
    for (const auto& [_, c] : p) h -= (c / n) * std::log(c / n);
    return h;
  };
  const double ha = entropy(pa);
  const double hb = entropy(pb);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  if (ha == 0.0 || hb == 0.0) return 0.0;

  double mi = 0.0;
  for (const auto& [key, c] : pj) {
    const double pxy = c / n;
    mi += pxy * std::log(pxy / ((pa.at(key.first) / n) * (pb.at(key.second) / n)));
  }
  const double v = mi / std::sqrt(ha * hb);
  return std::clamp(v, 0.0, 1.0);
}

enum class InterClassAggregation { kMeanPair, kMinPair };

struct IntraClassVariance {
  double ratio = 0.0;
  double intra = 0.0;      // mean over classes of mean within-class distance
  double inter = 0.0;      // aggregated center-to-center distance
  bool excluded_singletons = false;
};

// Mean within-class pairwise distance (classes with >= 2 samples),
// normalized by the aggregated distance between class centers.
inline IntraClassVariance intra_class_variance_ratio(
    const Matrix& emb, const std::vector<int>& labels,
    InterClassAggregation agg = InterClassAggregation::kMeanPair) {
  if (labels.size() != emb.rows())
    throw std::invalid_argument("intra_class_variance_ratio: labels size mismatch");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.size() < 2)
    throw std::invalid_argument("intra_class_variance_ratio: need at least 2 classes");

  IntraClassVariance r;
  std::size_t populous = 0;
  for (const auto& [cls, members] : by_class) {
    if (members.size() < 2) {
      r.excluded_singletons = true;
      continue;
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        sum += std::sqrt(row_sq_distance(emb, members[i], emb, members[j]));
        ++pairs;
      }
    r.intra += sum / static_cast<double>(pairs);
    ++populous;
  }
  if (populous == 0)
    throw std::invalid_argument("intra_class_variance_ratio: every class is a singleton");
  r.intra /= static_cast<double>(populous);

  Matrix centers(by_class.size(), emb.cols());
  std::size_t c = 0;
  for (const auto& [cls, members] : by_class) {
    for (std::size_t i : members)
      for (std::size_t j = 0; j < emb.cols(); ++j) centers(c, j) += emb(i, j);
    for (std::size_t j = 0; j < emb.cols(); ++j)
      centers(c, j) /= static_cast<double>(members.size());
    ++c;
  }
  if (agg == InterClassAggregation::kMeanPair) {
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < centers.rows(); ++i)
      for (std::size_t j = i + 1; j < centers.rows(); ++j) {
        sum += std::sqrt(row_sq_distance(centers, i, centers, j));
        ++pairs;
      }
    r.inter = sum / static_cast<double>(pairs);
  } else {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < centers.rows(); ++i)
      for (std::size_t j = i + 1; j < centers.rows(); ++j)
        best = std::min(best, std::sqrt(row_sq_distance(centers, i, centers, j)));
    r.inter = best;
  }
  r.ratio = r.intra / r.inter;
  return r;
}

struct EvalReport {
  std::string encoder;  // "alpha" | "beta" | "concat"
  std::map<int, double> recall_at;
  double nmi = 0.0;
  double intra_class_variance_ratio = 0.0;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["encoder"] = r.encoder;
  nlohmann::json rec = nlohmann::json::object();
  for (const auto& [k, v] : r.recall_at) rec["recall@" + std::to_string(k)] = v;
  j["recall"] = std::move(rec);
  j["nmi"] = r.nmi;
  j["intra_class_variance_ratio"] = r.intra_class_variance_ratio;
  return j;
}

// CSV dump of both embeddings: id, class, surrogate label, then the alpha
// and (when present) beta coordinates. Full precision, so re-ingesting
// reproduces metrics exactly.
inline void dump_embeddings(const ModelParams& params, const Dataset& ds,
                            const std::string& path) {
  EmbedBatch eb = embed(params, ds.features);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("dump_embeddings: cannot open " + path);
  f.precision(17);
  f << "id,label,surrogate";
  for (std::size_t j = 0; j < eb.e_alpha.cols(); ++j) f << ",ea_" << j;
  for (std::size_t j = 0; j < eb.e_beta.cols(); ++j) f << ",eb_" << j;
  f << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    f << i << ',' << ds.labels[i] << ','
      << (ds.surrogate.empty() ? 0 : ds.surrogate[i]);
    for (std::size_t j = 0; j < eb.e_alpha.cols(); ++j) f << ',' << eb.e_alpha(i, j);
    for (std::size_t j = 0; j < eb.e_beta.cols(); ++j) f << ',' << eb.e_beta(i, j);
    f << '\n';
  }
  if (!f) throw std::runtime_error("dump_embeddings: write failed for " + path);
}

}  // namespace dml
