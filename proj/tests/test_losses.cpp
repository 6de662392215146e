#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>

#include "dml/losses.hpp"
#include "support/oracles.hpp"

using dml::Matrix;
using dml::Tape;
using dml::Triplet;
using dml::Var;

namespace {

Matrix random_unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(n, d);
  for (double& v : m.values()) v = g(rng);
  return dml::l2_normalize_rows(m).out;
}

// symmetric squared-distance matrix built directly for miner tests
Matrix dist_matrix(std::size_t n, const std::vector<std::tuple<int, int, double>>& entries) {
  Matrix d(n, n);
  for (auto [i, j, v] : entries) {
    d(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = v;
    d(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) = v;
  }
  return d;
}

}  // namespace

TEST_CASE("pairwise distances: identical, antipodal, random vs oracle") {
  Matrix same(3, 4);
  for (std::size_t i = 0; i < 3; ++i) same(i, 0) = 1.0;
  CHECK(dml::pairwise_sq_distances(same) == Matrix(3, 3, 0.0));

  Matrix anti = Matrix::from_rows(2, 2, {1, 0, -1, 0});
  CHECK(dml::pairwise_sq_distances(anti)(0, 1) == Catch::Approx(4.0).margin(1e-12));

  Matrix e = random_unit_rows(10, 6, 3);
  Matrix d2 = dml::pairwise_sq_distances(e);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(d2(i, i) == 0.0);
    for (std::size_t j = 0; j < 10; ++j) {
      const double direct = dml::row_sq_distance(e, i, e, j);
      CHECK(std::abs(d2(i, j) - direct) < 1e-9);
      CHECK(d2(i, j) == d2(j, i));
      CHECK(d2(i, j) >= 0.0);
      // unit rows: d2 = 2 - 2<ei,ej>
      double dot = 0.0;
      for (std::size_t k = 0; k < 6; ++k) dot += e(i, k) * e(j, k);
      if (i != j) CHECK(std::abs(d2(i, j) - (2.0 - 2.0 * dot)) < 1e-9);
    }
  }
}

TEST_CASE("triplet hinge arithmetic") {
  CHECK(dml::triplet_hinge(0.5, 0.9, 0.2) == 0.0);
  CHECK(dml::triplet_hinge(0.9, 0.5, 0.2) == Catch::Approx(0.6));
  CHECK(dml::triplet_hinge(0.7, 0.7, 0.2) == Catch::Approx(0.2));
}

TEST_CASE("semihard miner picks the closest negative beyond the positive") {
  // labels: {0,0} then three negatives; d(a=0, p=1)=0.5, negatives at 0.4/0.6/1.0
  std::vector<int> labels{0, 0, 1, 1, 1};
  Matrix d2 = dist_matrix(5, {{0, 1, 0.5},
                              {0, 2, 0.4},
                              {0, 3, 0.6},
                              {0, 4, 1.0},
                              {1, 2, 0.7},
                              {1, 3, 0.8},
                              {1, 4, 0.9},
                              {2, 3, 0.3},
                              {2, 4, 0.3},
                              {3, 4, 0.3}});
  auto triplets = dml::mine_semihard(d2, labels);
  REQUIRE_FALSE(triplets.empty());
  CHECK(triplets[0].anchor == 0);
  CHECK(triplets[0].positive == 1);
  CHECK(triplets[0].negative == 3);  // d=0.6 smallest above 0.5
}

TEST_CASE("semihard miner falls back to the hardest negative") {
  std::vector<int> labels{0, 0, 1, 1};
  Matrix d2 = dist_matrix(4, {{0, 1, 0.5},
                              {0, 2, 0.1},
                              {0, 3, 0.3},
                              {1, 2, 0.2},
                              {1, 3, 0.2},
                              {2, 3, 0.4}});
  auto triplets = dml::mine_semihard(d2, labels);
  // anchor 0 / positive 1: no negative beyond 0.5 -> hardest is 0.3 at index 3
  REQUIRE_FALSE(triplets.empty());
  CHECK(triplets[0].anchor == 0);
  CHECK(triplets[0].negative == 3);
}

TEST_CASE("semihard output satisfies the predicate everywhere (exhaustive scan)") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Matrix e = random_unit_rows(24, 8, 100 + seed);
    std::vector<int> labels(24);
    for (std::size_t i = 0; i < 24; ++i) labels[i] = static_cast<int>(i / 4);
    Matrix d2 = dml::pairwise_sq_distances(e);
    auto triplets = dml::mine_semihard(d2, labels);

    // one triplet per ordered same-class pair
    CHECK(triplets.size() == 6 * 4 * 3);
    for (const Triplet& t : triplets) {
      CHECK(labels[t.anchor] == labels[t.positive]);
      CHECK(labels[t.anchor] != labels[t.negative]);
      CHECK(t.anchor != t.positive);
      const double dap = d2(t.anchor, t.positive);
      const double dan = d2(t.anchor, t.negative);
      // recompute expected choice by brute force
      bool any_beyond = false;
      double best_beyond = 0.0, hardest = -1.0;
      std::size_t best_idx = 0, hardest_idx = 0;
      for (std::size_t n = 0; n < 24; ++n) {
        if (labels[n] == labels[t.anchor]) continue;
        const double d = d2(t.anchor, n);
        if (d > hardest) {
          hardest = d;
          hardest_idx = n;
        }
        if (d > dap && (!any_beyond || d < best_beyond)) {
          any_beyond = true;
          best_beyond = d;
          best_idx = n;
        }
      }
      CHECK(t.negative == (any_beyond ? best_idx : hardest_idx));
      CHECK(dan == (any_beyond ? best_beyond : hardest));
    }
  }
}

TEST_CASE("semihard miner returns empty for a single-class batch") {
  Matrix e = random_unit_rows(6, 4, 5);
  std::vector<int> labels(6, 0);
  CHECK(dml::mine_semihard(dml::pairwise_sq_distances(e), labels).empty());
}

TEST_CASE("distance-weighted sampling rejects tiny dimensions") {
  Matrix e = random_unit_rows(4, 4, 7);
  std::vector<int> labels{0, 0, 1, 1};
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(dml::sample_distance_weighted(dml::pairwise_sq_distances(e),
                                                labels, 2, 0.5, rng),
                  std::invalid_argument);
}

TEST_CASE("distance-weighted sampling: equidistant negatives are uniform") {
  // anchor + positive at the north pole, negatives in a symmetric orbit
  const std::size_t dim = 4;
  Matrix e(5, dim);
  e(0, 0) = 1.0;
  e(1, 0) = 1.0;
  const double c = std::sqrt(0.5);
  e(2, 0) = c; e(2, 1) = c;
  e(3, 0) = c; e(3, 2) = c;
  e(4, 0) = c; e(4, 3) = c;
  std::vector<int> labels{0, 0, 1, 1, 1};
  Matrix d2 = dml::pairwise_sq_distances(e);

  std::mt19937_64 rng(42);
  std::map<std::size_t, int> counts;
  const int trials = 100000;
  for (int i = 0; i < trials; ++i) {
    auto ts = dml::sample_distance_weighted(d2, labels, dim, 0.5, rng);
    for (const Triplet& t : ts)
      if (t.anchor == 0) counts[t.negative]++;
  }
  const double expected = (counts[2] + counts[3] + counts[4]) / 3.0;
  const double sigma = std::sqrt(expected * (1.0 - 1.0 / 3.0));
  for (std::size_t n : {2, 3, 4})
    CHECK(std::abs(counts[n] - expected) < 3.0 * sigma + 1.0);
}

TEST_CASE("distance-weighted sampling follows inverse density, clip respected") {
  // two negatives at different distances; probabilities from the density
  const std::size_t dim = 6;
  const double d_a = 1.0, d_b = 1.4;
  Matrix d2 = dist_matrix(4, {{0, 1, 0.25},
                              {0, 2, d_a * d_a},
                              {0, 3, d_b * d_b},
                              {1, 2, 1.0},
                              {1, 3, 1.0},
                              {2, 3, 1.0}});
  std::vector<int> labels{0, 0, 1, 1};

  const double qa = std::pow(d_a, dim - 2.0) * std::pow(1 - d_a * d_a / 4, (dim - 3.0) / 2);
  const double qb = std::pow(d_b, dim - 2.0) * std::pow(1 - d_b * d_b / 4, (dim - 3.0) / 2);
  const double lambda = 1e-6;  // no clipping: 1/q << 1/lambda
  REQUIRE(1.0 / qa < 1.0 / lambda);
  REQUIRE(1.0 / qb < 1.0 / lambda);
  const double pa = (1.0 / qa) / (1.0 / qa + 1.0 / qb);

  std::mt19937_64 rng(7);
  int count_a = 0, total = 0;
  const int trials = 100000;
  for (int i = 0; i < trials; ++i) {
    auto ts = dml::sample_distance_weighted(d2, labels, dim, lambda, rng);
    for (const Triplet& t : ts)
      if (t.anchor == 0) {
        ++total;
        if (t.negative == 2) ++count_a;
      }
  }
  const double sigma = std::sqrt(total * pa * (1 - pa));
  CHECK(std::abs(count_a - total * pa) < 3.0 * sigma + 1.0);

  // with a large clip both weights saturate at 1/lambda -> uniform
  const double big_lambda = 1e3;
  std::mt19937_64 rng2(11);
  int ca = 0, tot = 0;
  for (int i = 0; i < trials; ++i) {
    auto ts = dml::sample_distance_weighted(d2, labels, dim, big_lambda, rng2);
    for (const Triplet& t : ts)
      if (t.anchor == 0) {
        ++tot;
        if (t.negative == 2) ++ca;
      }
  }
  const double s2 = std::sqrt(tot * 0.25);
  CHECK(std::abs(ca - tot * 0.5) < 3.0 * s2 + 1.0);
}

TEST_CASE("margin loss values at the reference parameters") {
  // alpha=0.2, beta=1.2; 1-D embeddings give exact distances
  Matrix e = Matrix::from_rows(4, 1, {0.0, 1.5, 5.0, 3.5});
  std::vector<Triplet> ts{{0, 1, 2}};  // d_ap = 1.5, d_an = 5.0
  Tape t;
  Var ev = t.leaf(e);
  Var beta = t.leaf(Matrix(1, 1, 1.2));
  dml::LossResult lr = dml::margin_loss_graph(t, ev, beta, ts, 0.2);
  // positive term (0.2 + 1.5 - 1.2) = 0.5 active; negative term (0.2+1.2-5.0) clipped
  CHECK(t.value(lr.loss)(0, 0) == Catch::Approx(0.5).margin(1e-6));
  CHECK(lr.active_terms == 1);

  // d_an = 1.5 makes the negative term -0.1 -> clipped to 0
  std::vector<Triplet> ts2{{0, 2, 1}};  // d_ap = 5.0, d_an = 1.5
  Tape t2;
  Var ev2 = t2.leaf(e);
  Var beta2 = t2.leaf(Matrix(1, 1, 1.2));
  dml::LossResult lr2 = dml::margin_loss_graph(t2, ev2, beta2, ts2, 0.2);
  // positive term 0.2+5.0-1.2 = 4.0 active, negative term 0.2+1.2-1.5=-0.1 clipped
  CHECK(t2.value(lr2.loss)(0, 0) == Catch::Approx(4.0).margin(1e-6));
}

TEST_CASE("margin loss beta gradient equals the active-term count formula") {
  Matrix e = random_unit_rows(12, 6, 21);
  std::vector<int> labels(12);
  for (std::size_t i = 0; i < 12; ++i) labels[i] = static_cast<int>(i / 4);
  std::mt19937_64 rng(3);
  auto triplets = dml::sample_distance_weighted(dml::pairwise_sq_distances(e),
                                                labels, 6, 0.5, rng);
  REQUIRE_FALSE(triplets.empty());

  Matrix beta_host(1, 1, 1.0);
  auto build = [&](Tape& t, Var& bv) {
    bv = t.leaf(beta_host);
    return dml::margin_loss_graph(t, t.leaf(e), bv, triplets, 0.2);
  };

  Tape t;
  Var bv;
  dml::LossResult lr = build(t, bv);
  t.backward(lr.loss);

  // closed form: (#active negative - #active positive) / #nonzero
  const Matrix d2 = dml::pairwise_sq_distances(e);
  int act_pos = 0, act_neg = 0;
  for (const Triplet& tr : triplets) {
    const double dap = std::sqrt(d2(tr.anchor, tr.positive) + 1e-12);
    const double dan = std::sqrt(d2(tr.anchor, tr.negative) + 1e-12);
    if (0.2 + dap - 1.0 > 0) ++act_pos;
    if (0.2 + 1.0 - dan > 0) ++act_neg;
  }
  const int nonzero = act_pos + act_neg;
  REQUIRE(nonzero > 0);
  CHECK(t.grad(bv)(0, 0) ==
        Catch::Approx(static_cast<double>(act_neg - act_pos) / nonzero).margin(1e-12));

  // and against finite differences
  auto loss_fn = [&] {
    Tape tt;
    Var b2;
    return tt.value(build(tt, b2).loss)(0, 0);
  };
  auto analytic = [&] {
    Tape tt;
    Var b2;
    tt.backward(build(tt, b2).loss);
    return std::vector<Matrix>{tt.grad(b2)};
  };
  CHECK(dml::finite_diff_check({{&beta_host}, loss_fn, analytic}, 1e-5) < 1e-4);
}

TEST_CASE("margin loss on an empty triplet list is zero and flagged") {
  Tape t;
  Var e = t.leaf(random_unit_rows(4, 3, 1));
  Var beta = t.leaf(Matrix(1, 1, 1.2));
  dml::LossResult lr = dml::margin_loss_graph(t, e, beta, {}, 0.2);
  CHECK(lr.empty_batch);
  CHECK(t.value(lr.loss)(0, 0) == 0.0);
}

TEST_CASE("margin and triplet losses are finite and non-negative on unit inputs") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Matrix e = random_unit_rows(16, 5, 300 + seed);
    std::vector<int> labels(16);
    for (std::size_t i = 0; i < 16; ++i) labels[i] = static_cast<int>(i / 4);
    const Matrix d2 = dml::pairwise_sq_distances(e);
    std::mt19937_64 rng(seed);

    Tape t;
    Var ev = t.leaf(e);
    dml::LossResult tl = dml::triplet_loss_graph(t, ev, dml::mine_semihard(d2, labels), 0.2);
    CHECK(std::isfinite(t.value(tl.loss)(0, 0)));
    CHECK(t.value(tl.loss)(0, 0) >= 0.0);

    Var beta = t.leaf(Matrix(1, 1, 1.2));
    dml::LossResult ml = dml::margin_loss_graph(
        t, ev, beta, dml::sample_distance_weighted(d2, labels, 5, 0.5, rng), 0.2);
    CHECK(std::isfinite(t.value(ml.loss)(0, 0)));
    CHECK(t.value(ml.loss)(0, 0) >= 0.0);
  }
}

TEST_CASE("triplet loss gradient matches finite differences") {
  Matrix e_host = random_unit_rows(12, 5, 33);
  std::vector<int> labels(12);
  for (std::size_t i = 0; i < 12; ++i) labels[i] = static_cast<int>(i / 3);
  auto triplets = dml::mine_semihard(dml::pairwise_sq_distances(e_host), labels);
  REQUIRE_FALSE(triplets.empty());

  // kink guard: every hinge argument off zero by a safe margin
  {
    const Matrix d2 = dml::pairwise_sq_distances(e_host);
    for (const Triplet& tr : triplets) {
      const double arg = d2(tr.anchor, tr.positive) - d2(tr.anchor, tr.negative) + 0.2;
      REQUIRE(std::abs(arg) > 1e-3);
    }
  }

  auto build = [&](Tape& t, Var& ev) {
    ev = t.leaf(e_host);
    return dml::triplet_loss_graph(t, ev, triplets, 0.2).loss;
  };
  auto loss = [&] {
    Tape t;
    Var ev;
    return t.value(build(t, ev))(0, 0);
  };
  auto analytic = [&] {
    Tape t;
    Var ev;
    t.backward(build(t, ev));
    return std::vector<Matrix>{t.grad(ev)};
  };
  CHECK(dml::finite_diff_check({{&e_host}, loss, analytic}, 1e-5) < 1e-4);
}

TEST_CASE("proxy NCA values on constructed geometries") {
  // two proxies: aligned (d2=0) and orthogonal (d2=2)
  Matrix e = Matrix::from_rows(1, 2, {1, 0});
  Matrix proxies = Matrix::from_rows(2, 2, {1, 0, 0, 1});
  Tape t;
  dml::LossResult lr = dml::proxynca_loss_graph(t, t.leaf(e), t.leaf(proxies), {0});
  CHECK(t.value(lr.loss)(0, 0) == Catch::Approx(-2.0).margin(1e-12));

  // three equidistant proxies -> log 2
  Matrix e3 = dml::l2_normalize_rows(Matrix::from_rows(1, 3, {1, 1, 1})).out;
  Matrix p3 = Matrix::from_rows(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tape t3;
  dml::LossResult lr3 = dml::proxynca_loss_graph(t3, t3.leaf(e3), t3.leaf(p3), {1});
  CHECK(t3.value(lr3.loss)(0, 0) == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("proxy NCA decreases monotonically when moving toward the true proxy") {
  Matrix proxies = dml::l2_normalize_rows(
      Matrix::from_rows(3, 4, {1, 0.2, 0, 0, 0, 1, 0.3, 0, 0, 0, 1, 0.1})).out;
  Matrix start = dml::l2_normalize_rows(Matrix::from_rows(1, 4, {0.1, 0.9, 0.4, 0.2})).out;

  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 10; ++step) {
    const double w = step / 10.0;
    Matrix e(1, 4);
    for (std::size_t j = 0; j < 4; ++j)
      e(0, j) = (1 - w) * start(0, j) + w * proxies(0, j);
    e = dml::l2_normalize_rows(e).out;
    Tape t;
    dml::LossResult lr = dml::proxynca_loss_graph(t, t.leaf(e), t.leaf(proxies), {0});
    const double v = t.value(lr.loss)(0, 0);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("proxy NCA rejects labels without a proxy") {
  Tape t;
  Var e = t.leaf(random_unit_rows(2, 3, 9));
  Var p = t.leaf(random_unit_rows(2, 3, 10));
  CHECK_THROWS_AS(dml::proxynca_loss_graph(t, e, p, {0, 2}), std::invalid_argument);
}

TEST_CASE("proxy NCA gradients (embeddings and proxies) match finite differences") {
  Matrix e_host = random_unit_rows(6, 4, 55);
  Matrix p_host = random_unit_rows(3, 4, 56);
  std::vector<int> labels{0, 0, 1, 1, 2, 2};

  auto build = [&](Tape& t, Var& ev, Var& pv) {
    ev = t.leaf(e_host);
    pv = t.leaf(p_host);
    // normalize e in-graph so gradients flow through a realistic path
    return dml::proxynca_loss_graph(t, t.l2_normalize_rows(ev), pv, labels).loss;
  };
  auto loss = [&] {
    Tape t;
    Var ev, pv;
    return t.value(build(t, ev, pv))(0, 0);
  };
  auto analytic = [&] {
    Tape t;
    Var ev, pv;
    t.backward(build(t, ev, pv));
    return std::vector<Matrix>{t.grad(ev), t.grad(pv)};
  };
  CHECK(dml::finite_diff_check({{&e_host, &p_host}, loss, analytic}, 1e-5) < 1e-4);
}

TEST_CASE("mutual information loss on hand values") {
  auto eval_mi = [](const Matrix& a, const Matrix& r) {
    Tape t;
    return t.value(dml::mutual_info_loss_graph(t, t.leaf(a), t.leaf(r)))(0, 0);
  };
  CHECK(eval_mi(Matrix::from_rows(1, 2, {1, 0}), Matrix::from_rows(1, 2, {1, 0})) ==
        Catch::Approx(-1.0));
  CHECK(eval_mi(Matrix::from_rows(1, 2, {1, 0}), Matrix::from_rows(1, 2, {0, 1})) ==
        Catch::Approx(0.0));
  const double c = std::sqrt(0.5);
  CHECK(eval_mi(Matrix::from_rows(1, 2, {c, c}), Matrix::from_rows(1, 2, {c, -c})) ==
        Catch::Approx(-0.5));

  Tape t;
  CHECK_THROWS_AS(dml::mutual_info_loss_graph(t, t.leaf(Matrix(2, 3)), t.leaf(Matrix(2, 4))),
                  std::invalid_argument);
}

TEST_CASE("mutual information loss stays in [-1, 0] for unit rows") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Matrix a = random_unit_rows(8, 5, 400 + seed);
    Matrix r = random_unit_rows(8, 5, 500 + seed);
    Tape t;
    const double v = t.value(dml::mutual_info_loss_graph(t, t.leaf(a), t.leaf(r)))(0, 0);
    CHECK(v <= 0.0);
    CHECK(v >= -1.0);
  }
}

TEST_CASE("gradient reversal plumbing: one step decreases encoder alignment") {
  // toy pair: both encoders are normalized parameter rows, the projection is
  // a learned matrix; the reversed paths must reduce alignment while the
  // projection (unreversed) chases it.
  Matrix a0 = Matrix::from_rows(1, 3, {0.8, 0.5, 0.2});
  Matrix r0 = Matrix::from_rows(1, 3, {0.6, 0.7, 0.1});
  Matrix wr = Matrix::from_rows(3, 3, {1, 0.1, 0, 0.2, 1, 0, 0, 0.1, 1});

  auto alignment = [&](const Matrix& a_host, const Matrix& r_host, const Matrix& w_host) {
    Tape t;
    Var a = t.l2_normalize_rows(t.leaf(a_host));
    Var proj = t.l2_normalize_rows(t.matmul(t.l2_normalize_rows(t.leaf(r_host)), t.leaf(w_host)));
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
      s += t.value(a)(0, j) * t.value(proj)(0, j) * t.value(a)(0, j) * t.value(proj)(0, j);
    return s;
  };

  auto grads = [&] {
    Tape t;
    Var av = t.leaf(a0), rv = t.leaf(r0), wv = t.leaf(wr);
    Var a = t.grad_reverse(t.l2_normalize_rows(av));
    Var proj = t.l2_normalize_rows(
        t.matmul(t.grad_reverse(t.l2_normalize_rows(rv)), wv));
    t.backward(dml::mutual_info_loss_graph(t, a, proj));
    return std::tuple<Matrix, Matrix, Matrix>(t.grad(av), t.grad(rv), t.grad(wv));
  };

  const double before = alignment(a0, r0, wr);
  auto [ga, gr, gw] = grads();
  const double lr = 0.05;

  // step the encoders only (reversed gradients): alignment must drop
  Matrix a1 = a0, r1 = r0;
  for (std::size_t i = 0; i < a1.size(); ++i) a1.values()[i] -= lr * ga.values()[i];
  for (std::size_t i = 0; i < r1.size(); ++i) r1.values()[i] -= lr * gr.values()[i];
  CHECK(alignment(a1, r1, wr) < before);

  // step the projection only (unreversed): alignment must rise
  Matrix w1 = wr;
  for (std::size_t i = 0; i < w1.size(); ++i) w1.values()[i] -= lr * gw.values()[i];
  CHECK(alignment(a0, r0, w1) > before);
}

TEST_CASE("total loss composition") {
  CHECK(dml::total_loss(0.5, 0.3, -0.001, 100.0) == Catch::Approx(0.7));
  CHECK(dml::total_loss(0.4, 0.6, -0.5, 0.0) == Catch::Approx(1.0));
  CHECK_THROWS_AS(dml::total_loss(0, 0, 0, -1.0), std::invalid_argument);
}
