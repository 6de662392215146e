#pragma once

// Metric-learning losses and batch miners: squared pairwise distances,
// semihard triplet mining, distance-weighted negative sampling, margin
// loss with a learnable boundary, proxy-based NCA and the adversarial
// encoder-similarity penalty.
//
// Miners run on detached distance values; loss builders assemble tape
// subgraphs from the mined indices. Distance conventions: the triplet
// loss operates on squared distances, the margin loss on plain Euclidean
// distances (the convention of each loss's origin).

#include <cstddef>
#include <random>
#include <stdexcept>
#include <vector>

#include "dml/graph.hpp"
#include "dml/matrix.hpp"

namespace dml {

// Squared Euclidean distances via the inner-product identity, clamped at 0,
// zero diagonal. For unit rows this equals 2 - 2<e_i, e_j>.
inline Matrix pairwise_sq_distances(const Matrix& e) {
  const std::size_t n = e.rows();
  Matrix gram = matmul(e, transpose(e));
  Matrix d2(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = gram(i, i) + gram(j, j) - 2.0 * gram(i, j);
      if (d < 0.0) d = 0.0;
      d2(i, j) = d;
      d2(j, i) = d;
    }
  }
  return d2;
}

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

inline double triplet_hinge(double d_ap, double d_an, double margin) {
  const double v = d_ap - d_an + margin;
  return v > 0.0 ? v : 0.0;
}

// For every ordered same-label (anchor, positive) pair, pick the closest
// negative that is still farther than the positive; if none qualifies,
// fall back to the farthest negative. Ties resolve to the lowest index.
// A batch without a second class yields an empty list.
inline std::vector<Triplet> mine_semihard(const Matrix& d2,
                                          const std::vector<int>& labels) {
  const std::size_t n = d2.rows();
  if (labels.size() != n)
    throw std::invalid_argument("mine_semihard: labels/distances size mismatch");
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const double dap = d2(a, p);
      bool have_semihard = false, have_any = false;
      std::size_t best = 0, hardest = 0;
      double best_d = 0.0, hardest_d = -1.0;
      for (std::size_t neg = 0; neg < n; ++neg) {
        if (labels[neg] == labels[a]) continue;
        const double dan = d2(a, neg);
        if (!have_any || dan > hardest_d) {
          have_any = true;
          hardest = neg;
          hardest_d = dan;
        }
        if (dan > dap && (!have_semihard || dan < best_d)) {
          have_semihard = true;
          best = neg;
          best_d = dan;
        }
      }
      if (!have_any) return {};  // single-class batch
      out.push_back(Triplet{a, p, have_semihard ? best : hardest});
    }
  }
  return out;
}

// Sampling density of pairwise distances between unit vectors in D
// dimensions, up to a constant.
inline double unit_sphere_distance_density(double d, std::size_t dim) {
  const double base = std::max(1.0 - d * d / 4.0, 0.0);
  return std::pow(d, static_cast<double>(dim - 2)) *
         std::pow(base, (static_cast<double>(dim) - 3.0) / 2.0);
}

// One triplet per eligible anchor: positive uniform within the class,
// negative drawn with weight min(1/q(d), 1/lambda) so that near-uniform
// distances are downweighted and the tails are capped.
inline std::vector<Triplet> sample_distance_weighted(
    const Matrix& d2, const std::vector<int>& labels, std::size_t dim,
    double lambda, std::mt19937_64& rng) {
  if (dim < 3)
    throw std::invalid_argument("sample_distance_weighted: dim must be >= 3");
  if (lambda <= 0.0)
    throw std::invalid_argument("sample_distance_weighted: lambda must be > 0");
  const std::size_t n = d2.rows();
  if (labels.size() != n)
    throw std::invalid_argument("sample_distance_weighted: labels size mismatch");

  std::vector<Triplet> out;
  std::vector<std::size_t> positives, negatives;
  std::vector<double> weights;
  for (std::size_t a = 0; a < n; ++a) {
    positives.clear();
    negatives.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (i == a) continue;
      (labels[i] == labels[a] ? positives : negatives).push_back(i);
    }
    if (positives.empty() || negatives.empty()) continue;

    std::uniform_int_distribution<std::size_t> pick_pos(0, positives.size() - 1);
    const std::size_t p = positives[pick_pos(rng)];

    weights.clear();
    double total = 0.0;
    for (std::size_t neg : negatives) {
      const double d = std::sqrt(d2(a, neg));
      const double q = unit_sphere_distance_density(d, dim);
      const double w = std::min(q > 0.0 ? 1.0 / q : 1.0 / lambda, 1.0 / lambda);
      weights.push_back(w);
      total += w;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    const double target = u(rng);
    double cum = 0.0;
    std::size_t chosen = negatives.back();
    for (std::size_t i = 0; i < negatives.size(); ++i) {
      cum += weights[i];
      if (target < cum) {
        chosen = negatives[i];
        break;
      }
    }
    out.push_back(Triplet{a, p, chosen});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss subgraphs
// ---------------------------------------------------------------------------

namespace detail {

struct GatheredPair {
  Var d2;  // T x 1 squared distances
};

inline GatheredPair pair_sq_distance_graph(Tape& t, Var e,
                                           const std::vector<std::size_t>& i,
                                           const std::vector<std::size_t>& j) {
  Var a = t.gather_rows(e, i);
  Var b = t.gather_rows(e, j);
  return GatheredPair{t.row_sum(t.square(t.sub(a, b)))};
}

inline std::vector<std::size_t> anchors_of(const std::vector<Triplet>& ts) {
  std::vector<std::size_t> v(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) v[i] = ts[i].anchor;
  return v;
}
inline std::vector<std::size_t> positives_of(const std::vector<Triplet>& ts) {
  std::vector<std::size_t> v(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) v[i] = ts[i].positive;
  return v;
}
inline std::vector<std::size_t> negatives_of(const std::vector<Triplet>& ts) {
  std::vector<std::size_t> v(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) v[i] = ts[i].negative;
  return v;
}

}  // namespace detail

struct LossResult {
  Var loss;                      // 1x1
  std::size_t active_terms = 0;  // hinge terms contributing gradient
  bool empty_batch = false;      // miner produced no triplets
};

// Mean over triplets of max(d2_ap - d2_an + margin, 0), squared distances.
inline LossResult triplet_loss_graph(Tape& t, Var e,
                                     const std::vector<Triplet>& triplets,
                                     double margin) {
  if (margin <= 0.0)
    throw std::invalid_argument("triplet_loss_graph: margin must be > 0");
  if (triplets.empty())
    return LossResult{t.leaf(Matrix(1, 1, 0.0)), 0, true};
  Var d2ap = detail::pair_sq_distance_graph(t, e, detail::anchors_of(triplets),
                                            detail::positives_of(triplets)).d2;
  Var d2an = detail::pair_sq_distance_graph(t, e, detail::anchors_of(triplets),
                                            detail::negatives_of(triplets)).d2;
  Var hinge = t.relu(t.add_const(t.sub(d2ap, d2an), margin));
  std::size_t active = 0;
  for (double v : t.value(hinge).values())
    if (v > 0.0) ++active;
  return LossResult{t.mean_all(hinge), active, false};
}

// Margin loss on plain Euclidean distances with learnable boundary beta:
// mean over non-zero terms of (alpha + d_ap - beta)+ and (alpha + beta - d_an)+.
// The tiny epsilon inside the square root keeps the derivative finite when a
// replacement-sampled batch pairs a sample with its own duplicate.
inline LossResult margin_loss_graph(Tape& t, Var e, Var margin_beta,
                                    const std::vector<Triplet>& triplets,
                                    double alpha) {
  if (alpha <= 0.0)
    throw std::invalid_argument("margin_loss_graph: alpha must be > 0");
  if (t.value(margin_beta)(0, 0) <= 0.0)
    throw std::invalid_argument("margin_loss_graph: beta must be > 0");
  if (triplets.empty())
    return LossResult{t.leaf(Matrix(1, 1, 0.0)), 0, true};

  Var d2ap = detail::pair_sq_distance_graph(t, e, detail::anchors_of(triplets),
                                            detail::positives_of(triplets)).d2;
  Var d2an = detail::pair_sq_distance_graph(t, e, detail::anchors_of(triplets),
                                            detail::negatives_of(triplets)).d2;
  Var dap = t.sqrt_elem(t.add_const(d2ap, 1e-12));
  Var dan = t.sqrt_elem(t.add_const(d2an, 1e-12));

  Var neg_beta = t.neg(margin_beta);
  Var pos_terms = t.relu(t.add_scalar_var(t.add_const(dap, alpha), neg_beta));
  Var neg_terms = t.relu(t.add_scalar_var(t.add_const(t.neg(dan), alpha), margin_beta));

  std::size_t active = 0;
  for (double v : t.value(pos_terms).values())
    if (v > 0.0) ++active;
  for (double v : t.value(neg_terms).values())
    if (v > 0.0) ++active;

  Var total = t.add(t.sum_all(pos_terms), t.sum_all(neg_terms));
  const double denom = active > 0 ? static_cast<double>(active) : 1.0;
  return LossResult{t.scale(total, 1.0 / denom), active, false};
}

// NCA against per-class proxies: mean over samples of
// d(e, p_y) + log sum_{z != y} exp(-d(e, p_z)), squared distances.
// Proxies enter as raw parameters and are unit-normalized in-graph.
// Distances on the unit sphere stay in [0, 4], so the log-sum-exp needs
// no shifting.
inline LossResult proxynca_loss_graph(Tape& t, Var e, Var proxies,
                                      const std::vector<int>& labels) {
  const std::size_t batch = t.value(e).rows();
  const std::size_t num_proxies = t.value(proxies).rows();
  if (num_proxies < 2)
    throw std::invalid_argument("proxynca_loss_graph: need at least 2 proxies");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_proxies)
      throw std::invalid_argument("proxynca_loss_graph: label " +
                                  std::to_string(y) + " has no proxy");
  if (labels.size() != batch)
    throw std::invalid_argument("proxynca_loss_graph: labels size mismatch");

  Var pn = t.l2_normalize_rows(proxies);
  Var sim = t.matmul(e, t.transpose(pn));          // batch x P
  Var d2 = t.add_const(t.scale(sim, -2.0), 2.0);   // unit rows: d2 = 2 - 2<e,p>

  Matrix pos_mask(batch, num_proxies), neg_mask(batch, num_proxies);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t z = 0; z < num_proxies; ++z)
      (z == static_cast<std::size_t>(labels[i]) ? pos_mask : neg_mask)(i, z) = 1.0;

  Var pos_d = t.row_sum(t.mul(d2, t.leaf(std::move(pos_mask))));
  Var exp_neg = t.mul(t.exp_elem(t.neg(d2)), t.leaf(std::move(neg_mask)));
  Var log_denom = t.log_elem(t.row_sum(exp_neg));
  return LossResult{t.mean_all(t.add(pos_d, log_denom)), batch, batch == 0};
}

// Adversarial encoder-similarity penalty: per sample -sum_k (a_k * r_k)^2,
// averaged over the batch. Callers pass inputs that already went through
// grad_reverse, so minimizing this through the reversed paths pushes the
// encoders apart while the projection chases alignment. Bounded in [-1, 0]
// for unit rows. The reduction (square, sum over dims, mean over batch) is
// centralized here.
inline Var mutual_info_loss_graph(Tape& t, Var e_alpha_rev, Var r_beta_rev) {
  const Matrix& a = t.value(e_alpha_rev);
  const Matrix& r = t.value(r_beta_rev);
  if (!a.same_shape(r))
    throw std::invalid_argument("mutual_info_loss_graph: shape mismatch " +
                                shape_str(a) + " vs " + shape_str(r));
  if (a.rows() == 0)
    throw std::invalid_argument("mutual_info_loss_graph: empty batch");
  Var per_entry = t.square(t.mul(e_alpha_rev, r_beta_rev));
  return t.neg(t.scale(t.sum_all(per_entry), 1.0 / static_cast<double>(a.rows())));
}

// Weighted sum L = l_alpha + l_beta + gamma * l_d. The alternating trainer
// composes the per-step variants l_alpha + gamma*l_d and l_beta + gamma*l_d
// directly on the tape; this is the plain combined form.
inline double total_loss(double l_alpha, double l_beta, double l_d, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("total_loss: gamma must be >= 0");
  return l_alpha + l_beta + gamma * l_d;
}

}  // namespace dml
