#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "dml/graph.hpp"
#include "dml/matrix.hpp"
#include "support/oracles.hpp"

using dml::Matrix;
using dml::Tape;
using dml::Var;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng,
                     double shift = 0.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.values()) v = g(rng) + shift;
  return m;
}

}  // namespace

TEST_CASE("matmul identity and small products") {
  Matrix eye = Matrix::from_rows(2, 2, {1, 0, 0, 1});
  Matrix v = Matrix::from_rows(2, 1, {3, 4});
  CHECK(dml::matmul(eye, v) == v);

  Matrix a = Matrix::from_rows(1, 2, {1, 2});
  Matrix b = Matrix::from_rows(2, 1, {3, 4});
  CHECK(dml::matmul(a, b)(0, 0) == 11.0);
}

TEST_CASE("matmul rejects dimension mismatch") {
  CHECK_THROWS_AS(dml::matmul(Matrix(2, 3), Matrix(4, 2)), std::invalid_argument);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  std::mt19937_64 rng(7);
  Matrix a = random_matrix(5, 7, rng);
  Matrix b = random_matrix(7, 3, rng);
  Matrix got = dml::matmul(a, b);
  Matrix want = oracle::matmul_naive(a, b);
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(std::abs(got.values()[i] - want.values()[i]) < 1e-12);
}

TEST_CASE("relu definition") {
  Matrix m = Matrix::from_rows(1, 3, {-1, 0, 2});
  Matrix r = dml::relu(m);
  CHECK(r == Matrix::from_rows(1, 3, {0, 0, 2}));

  Matrix neg = Matrix::from_rows(2, 2, {-3, -1, -0.5, -2});
  CHECK(dml::relu(neg) == Matrix(2, 2, 0.0));
}

TEST_CASE("relu gradient is the positive-input indicator") {
  // inputs bounded away from the kink; checked by central differences
  std::mt19937_64 rng(11);
  Matrix x = random_matrix(3, 4, rng);
  for (double& v : x.values())
    if (std::abs(v) < 0.1) v += v >= 0 ? 0.2 : -0.2;

  auto loss = [&] {
    Tape t;
    return t.value(t.sum_all(t.relu(t.leaf(x))))(0, 0);
  };
  auto analytic = [&] {
    Tape t;
    Var xv = t.leaf(x);
    t.backward(t.sum_all(t.relu(xv)));
    return std::vector<Matrix>{t.grad(xv)};
  };
  dml::GradCheckProblem p{{&x}, loss, analytic};
  CHECK(dml::finite_diff_check(p, 1e-5) < 1e-6);

  Tape t;
  Var xv = t.leaf(x);
  t.backward(t.sum_all(t.relu(xv)));
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(t.grad(xv).values()[i] == (x.values()[i] > 0 ? 1.0 : 0.0));
}

TEST_CASE("l2_normalize_rows basics") {
  Matrix m = Matrix::from_rows(1, 2, {3, 4});
  dml::NormalizeResult r = dml::l2_normalize_rows(m);
  CHECK(r.out(0, 0) == Catch::Approx(0.6).margin(1e-15));
  CHECK(r.out(0, 1) == Catch::Approx(0.8).margin(1e-15));
  CHECK_FALSE(r.had_degenerate_row);

  // already-unit row is unchanged up to rounding
  dml::NormalizeResult again = dml::l2_normalize_rows(r.out);
  for (std::size_t j = 0; j < 2; ++j)
    CHECK(std::abs(again.out(0, j) - r.out(0, j)) < 1e-15);

  // degenerate row falls back to e1 and sets the flag
  Matrix zero(2, 3);
  zero(1, 0) = 5.0;
  dml::NormalizeResult z = dml::l2_normalize_rows(zero);
  CHECK(z.had_degenerate_row);
  CHECK(z.out(0, 0) == 1.0);
  CHECK(z.out(0, 1) == 0.0);
  CHECK(z.out(1, 0) == 1.0);
}

TEST_CASE("l2_normalize_rows output norms are unit to 1e-12") {
  std::mt19937_64 rng(13);
  Matrix m = random_matrix(20, 6, rng);
  dml::NormalizeResult r = dml::l2_normalize_rows(m);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) sq += r.out(i, j) * r.out(i, j);
    CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-12);
  }
}

TEST_CASE("l2_normalize gradient matches finite differences") {
  std::mt19937_64 rng(17);
  Matrix x = random_matrix(4, 5, rng);
  Matrix w = random_matrix(4, 5, rng);  // fixed weighting makes the loss generic

  auto loss = [&] {
    Tape t;
    return t.value(t.sum_all(t.mul(t.l2_normalize_rows(t.leaf(x)), t.leaf(w))))(0, 0);
  };
  auto analytic = [&] {
    Tape t;
    Var xv = t.leaf(x);
    t.backward(t.sum_all(t.mul(t.l2_normalize_rows(xv), t.leaf(w))));
    return std::vector<Matrix>{t.grad(xv)};
  };
  CHECK(dml::finite_diff_check({{&x}, loss, analytic}, 1e-5) < 1e-4);
}

TEST_CASE("grad_reverse forward is identity, backward flips sign") {
  Matrix m = Matrix::from_rows(1, 2, {0.2, -0.7});
  Tape t;
  Var x = t.leaf(m);
  Var r = t.grad_reverse(x);
  CHECK(t.value(r) == m);  // bitwise

  // backward with upstream gradient 0.3
  Var loss = t.scale(t.sum_all(r), 0.3);
  t.backward(loss);
  CHECK(t.grad(x)(0, 0) == -0.3);
  CHECK(t.grad(x)(0, 1) == -0.3);
}

TEST_CASE("grad_reverse composed with a loss negates the unreversed gradient") {
  std::mt19937_64 rng(23);
  Matrix x = random_matrix(3, 4, rng);

  auto grads = [&](bool reversed) {
    Tape t;
    Var xv = t.leaf(x);
    Var h = reversed ? t.grad_reverse(xv) : xv;
    t.backward(t.mean_all(t.square(h)));
    return t.grad(xv);
  };
  Matrix with = grads(true);
  Matrix without = grads(false);
  for (std::size_t i = 0; i < with.size(); ++i)
    CHECK(with.values()[i] == -without.values()[i]);

  // numeric check of the unreversed graph
  auto loss = [&] {
    Tape t;
    return t.value(t.mean_all(t.square(t.leaf(x))))(0, 0);
  };
  auto analytic = [&] {
    Tape t;
    Var xv = t.leaf(x);
    t.backward(t.mean_all(t.square(xv)));
    return std::vector<Matrix>{t.grad(xv)};
  };
  CHECK(dml::finite_diff_check({{&x}, loss, analytic}, 1e-5) < 1e-6);
}

TEST_CASE("backward of x*x at x=3 is 6") {
  Tape t;
  Var x = t.leaf(Matrix(1, 1, 3.0));
  t.backward(t.square(x));
  CHECK(t.grad(x)(0, 0) == 6.0);
}

TEST_CASE("parameter outside the graph gets a zero gradient") {
  Tape t;
  Var x = t.leaf(Matrix(1, 1, 3.0));
  Var unused = t.leaf(Matrix(2, 2, 1.0));
  t.backward(t.square(x));
  for (double g : t.grad(unused).values()) CHECK(g == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape t;
  Var x = t.leaf(Matrix(2, 2, 1.0));
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
}

TEST_CASE("backward is deterministic across repeat calls") {
  std::mt19937_64 rng(29);
  Matrix a = random_matrix(4, 4, rng);
  Matrix b = random_matrix(4, 4, rng);
  Tape t;
  Var av = t.leaf(a), bv = t.leaf(b);
  Var loss = t.mean_all(t.square(t.matmul(av, bv)));
  t.backward(loss);
  Matrix g1a = t.grad(av), g1b = t.grad(bv);
  t.backward(loss);
  CHECK(t.grad(av) == g1a);
  CHECK(t.grad(bv) == g1b);
}

TEST_CASE("gather_rows accumulates gradient over duplicate indices") {
  Matrix m = Matrix::from_rows(3, 2, {1, 2, 3, 4, 5, 6});
  Tape t;
  Var mv = t.leaf(m);
  Var g = t.gather_rows(mv, {1, 1, 0});
  CHECK(t.value(g) == Matrix::from_rows(3, 2, {3, 4, 3, 4, 1, 2}));
  t.backward(t.sum_all(g));
  CHECK(t.grad(mv) == Matrix::from_rows(3, 2, {1, 1, 2, 2, 0, 0}));
}

TEST_CASE("row_sum add_rowvec add_scalar_var shapes and gradients") {
  std::mt19937_64 rng(31);
  Matrix m = random_matrix(3, 4, rng);
  Matrix b = random_matrix(1, 4, rng);
  Matrix s(1, 1, 0.5);

  auto build = [&](Tape& t, Var& mv, Var& bv, Var& sv) {
    mv = t.leaf(m);
    bv = t.leaf(b);
    sv = t.leaf(s);
    return t.sum_all(t.square(t.add_scalar_var(t.row_sum(t.add_rowvec(mv, bv)), sv)));
  };
  auto loss = [&] {
    Tape t;
    Var mv, bv, sv;
    return t.value(build(t, mv, bv, sv))(0, 0);
  };
  auto analytic = [&] {
    Tape t;
    Var mv, bv, sv;
    Var l = build(t, mv, bv, sv);
    t.backward(l);
    return std::vector<Matrix>{t.grad(mv), t.grad(bv), t.grad(sv)};
  };
  CHECK(dml::finite_diff_check({{&m, &b, &s}, loss, analytic}, 1e-5) < 1e-6);
}

TEST_CASE("finite_diff_check is near-exact for a linear graph") {
  Matrix x(1, 1, 1.5);
  auto loss = [&] {
    Tape t;
    return t.value(t.scale(t.leaf(x), 2.0))(0, 0);
  };
  auto analytic = [&] {
    Tape t;
    Var xv = t.leaf(x);
    t.backward(t.scale(xv, 2.0));
    return std::vector<Matrix>{t.grad(xv)};
  };
  CHECK(dml::finite_diff_check({{&x}, loss, analytic}, 1e-5) < 1e-10);
}

TEST_CASE("every differentiable primitive passes a randomized gradient check") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    Matrix a = random_matrix(3, 4, rng);
    Matrix b = random_matrix(4, 3, rng);
    Matrix c = random_matrix(3, 3, rng, 0.5);  // relu inputs shifted off the kink
    for (double& v : c.values())
      if (std::abs(v) < 0.1) v += 0.2;

    auto graph = [&](Tape& t, Var& av, Var& bv, Var& cv) {
      av = t.leaf(a);
      bv = t.leaf(b);
      cv = t.leaf(c);
      Var mm = t.matmul(av, bv);
      Var act = t.relu(t.add(mm, cv));
      Var nrm = t.l2_normalize_rows(t.add_const(act, 0.3));
      Var ex = t.exp_elem(t.scale(nrm, 0.5));
      Var lg = t.log_elem(t.add_const(t.square(ex), 1.0));
      Var sq = t.sqrt_elem(t.add_const(lg, 0.1));
      return t.mean_all(sq);
    };
    auto loss = [&] {
      Tape t;
      Var av, bv, cv;
      return t.value(graph(t, av, bv, cv))(0, 0);
    };
    auto analytic = [&] {
      Tape t;
      Var av, bv, cv;
      Var l = graph(t, av, bv, cv);
      t.backward(l);
      return std::vector<Matrix>{t.grad(av), t.grad(bv), t.grad(cv)};
    };
    INFO("seed " << seed);
    CHECK(dml::finite_diff_check({{&a, &b, &c}, loss, analytic}, 1e-5) < 1e-4);
  }
}
