#pragma once

// Define-by-run reverse-mode differentiation over Matrix values.
//
// A Tape owns the computation graph for one forward pass. Every builder
// computes its output eagerly and records a backward step; backward()
// replays the steps in reverse, accumulating gradients over fan-out.
// Tapes are rebuilt per step, which keeps alternating-update training
// trivially correct: each loss sees exactly the graph built for it.
//
// grad_reverse is the one non-standard primitive: identity forward,
// negated gradient on the way back.

#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dml/matrix.hpp"

namespace dml {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix v) { return push(std::move(v)); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

  Var matmul(Var a, Var b) {
    Var out = push(dml::matmul(value(a), value(b)));
    ops_.push_back([this, a, b, out] {
      const Matrix& go = nodes_[out.id].grad;
      // dA = G * B^T, dB = A^T * G
      accumulate(a, dml::matmul(go, dml::transpose(nodes_[b.id].value)));
      accumulate(b, dml::matmul(dml::transpose(nodes_[a.id].value), go));
    });
    return out;
  }

  Var transpose(Var a) {
    Var out = push(dml::transpose(value(a)));
    ops_.push_back([this, a, out] {
      accumulate(a, dml::transpose(nodes_[out.id].grad));
    });
    return out;
  }

  Var add(Var a, Var b) {
    check_same_shape(value(a), value(b), "Tape::add");
    Matrix v = value(a);
    const Matrix& bv = value(b);
    for (std::size_t i = 0; i < v.size(); ++i) v.values()[i] += bv.values()[i];
    Var out = push(std::move(v));
    ops_.push_back([this, a, b, out] {
      accumulate(a, nodes_[out.id].grad);
      accumulate(b, nodes_[out.id].grad);
    });
    return out;
  }

  Var sub(Var a, Var b) {
    check_same_shape(value(a), value(b), "Tape::sub");
    Matrix v = value(a);
    const Matrix& bv = value(b);
    for (std::size_t i = 0; i < v.size(); ++i) v.values()[i] -= bv.values()[i];
    Var out = push(std::move(v));
    ops_.push_back([this, a, b, out] {
      accumulate(a, nodes_[out.id].grad);
      accumulate_negated(b, nodes_[out.id].grad);
    });
    return out;
  }

  Var mul(Var a, Var b) {
    check_same_shape(value(a), value(b), "Tape::mul");
    Matrix v = value(a);
    const Matrix& bv = value(b);
    for (std::size_t i = 0; i < v.size(); ++i) v.values()[i] *= bv.values()[i];
    Var out = push(std::move(v));
    ops_.push_back([this, a, b, out] {
      const Matrix& go = nodes_[out.id].grad;
      Matrix da = go;
      Matrix db = go;
      const Matrix& av = nodes_[a.id].value;
      const Matrix& bv2 = nodes_[b.id].value;
      for (std::size_t i = 0; i < da.size(); ++i) {
        da.values()[i] *= bv2.values()[i];
        db.values()[i] *= av.values()[i];
      }
      accumulate(a, da);
      accumulate(b, db);
    });
    return out;
  }

  Var square(Var a) { return mul(a, a); }

  // m (rows x n) + row (1 x n), broadcast over rows. Bias add.
  Var add_rowvec(Var m, Var row) {
    const Matrix& mv = value(m);
    const Matrix& rv = value(row);
    if (rv.rows() != 1 || rv.cols() != mv.cols())
      throw std::invalid_argument("Tape::add_rowvec: want 1x" +
                                  std::to_string(mv.cols()) + ", got " +
                                  shape_str(rv));
    Matrix v = mv;
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) += rv(0, j);
    Var out = push(std::move(v));
    ops_.push_back([this, m, row, out] {
      const Matrix& go = nodes_[out.id].grad;
      accumulate(m, go);
      Matrix dr(1, go.cols());
      for (std::size_t i = 0; i < go.rows(); ++i)
        for (std::size_t j = 0; j < go.cols(); ++j) dr(0, j) += go(i, j);
      accumulate(row, dr);
    });
    return out;
  }

  // m + s broadcast, s a 1x1 node (learnable scalar such as the margin beta).
  Var add_scalar_var(Var m, Var s) {
    const Matrix& sv = value(s);
    if (sv.rows() != 1 || sv.cols() != 1)
      throw std::invalid_argument("Tape::add_scalar_var: scalar node must be 1x1");
    Matrix v = value(m);
    for (double& x : v.values()) x += sv(0, 0);
    Var out = push(std::move(v));
    ops_.push_back([this, m, s, out] {
      const Matrix& go = nodes_[out.id].grad;
      accumulate(m, go);
      Matrix ds(1, 1);
      for (double gx : go.values()) ds(0, 0) += gx;
      accumulate(s, ds);
    });
    return out;
  }

  Var relu(Var a) {
    Matrix v = dml::relu(value(a));
    Var out = push(std::move(v));
    ops_.push_back([this, a, out] {
      const Matrix& go = nodes_[out.id].grad;
      Matrix da = go;
      const Matrix& av = nodes_[a.id].value;
      // subgradient at exactly 0 is 0
      for (std::size_t i = 0; i < da.size(); ++i)
        if (av.values()[i] <= 0.0) da.values()[i] = 0.0;
      accumulate(a, da);
    });
    return out;
  }

  Var sqrt_elem(Var a) {
    Matrix v = value(a);
    for (double& x : v.values()) x = std::sqrt(x);
    Var out = push(std::move(v));
    ops_.push_back([this, a, out] {
      const Matrix& go = nodes_[out.id].grad;
      const Matrix& ov = nodes_[out.id].value;
      Matrix da = go;
      for (std::size_t i = 0; i < da.size(); ++i)
        da.values()[i] = go.values()[i] / (2.0 * ov.values()[i]);
      accumulate(a, da);
    });
    return out;
  }

  Var exp_elem(Var a) {
    Matrix v = value(a);
    for (double& x : v.values()) x = std::exp(x);
    Var out = push(std::move(v));
    ops_.push_back([this, a, out] {
      const Matrix& go = nodes_[out.id].grad;
      const Matrix& ov = nodes_[out.id].value;
      Matrix da = go;
      for (std::size_t i = 0; i < da.size(); ++i)
        da.values()[i] = go.values()[i] * ov.values()[i];
      accumulate(a, da);
    });
    return out;
  }

  Var log_elem(Var a) {
    Matrix v = value(a);
    for (double& x : v.values()) x = std::log(x);
    Var out = push(std::move(v));
    ops_.push_back([this, a, out] {
      const Matrix& go = nodes_[out.id].grad;
      const Matrix& av = nodes_[a.id].value;
      Matrix da = go;
      for (std::size_t i = 0; i < da.size(); ++i)
        da.values()[i] = go.values()[i] / av.values()[i];
      accumulate(a, da);
    });
    return out;
  }

  Var neg(Var a) { return scale(a, -1.0); }

  Var scale(Var a, double c) {
    Matrix v = value(a);
    for (double& x : v.values()) x *= c;
    Var out = push(std::move(v));
    ops_.push_back([this, a, out, c] {
      Matrix da = nodes_[out.id].grad;
      for (double& x : da.values()) x *= c;
      accumulate(a, da);
    });
    return out;
  }

  Var add_const(Var a, double c) {
    Matrix v = value(a);
    for (double& x : v.values()) x += c;
    Var out = push(std::move(v));
    ops_.push_back([this, a, out] { accumulate(a, nodes_[out.id].grad); });
    return out;
  }

  // Forward identity, backward sign flip.
  Var grad_reverse(Var a) {
    Var out = push(value(a));
    ops_.push_back([this, a, out] {
      accumulate_negated(a, nodes_[out.id].grad);
    });
    return out;
  }

  // Rows scaled to unit norm; rows with norm <= eps fall back to e1 and
  // receive zero gradient.
  Var l2_normalize_rows(Var a, double eps = kNormEps) {
    NormalizeResult nr = dml::l2_normalize_rows(value(a), eps);
    degenerate_row_seen_ = degenerate_row_seen_ || nr.had_degenerate_row;
    std::vector<double> norms(value(a).rows());
    const Matrix& av = value(a);
    for (std::size_t i = 0; i < av.rows(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < av.cols(); ++j) sq += av(i, j) * av(i, j);
      norms[i] = std::sqrt(sq);
    }
    Var out = push(std::move(nr.out));
    ops_.push_back([this, a, out, eps, norms = std::move(norms)] {
      const Matrix& go = nodes_[out.id].grad;
      const Matrix& ov = nodes_[out.id].value;
      Matrix da(go.rows(), go.cols());
      for (std::size_t i = 0; i < go.rows(); ++i) {
        if (norms[i] <= eps) continue;  // fallback row: constant output
        double dot = 0.0;
        for (std::size_t j = 0; j < go.cols(); ++j) dot += go(i, j) * ov(i, j);
        for (std::size_t j = 0; j < go.cols(); ++j)
          da(i, j) = (go(i, j) - ov(i, j) * dot) / norms[i];
      }
      accumulate(a, da);
    });
    return out;
  }

  Var gather_rows(Var a, std::vector<std::size_t> idx) {
    const Matrix& av = value(a);
    Matrix v(idx.size(), av.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= av.rows())
        throw std::invalid_argument("Tape::gather_rows: index out of range");
      for (std::size_t j = 0; j < av.cols(); ++j) v(i, j) = av(idx[i], j);
    }
    Var out = push(std::move(v));
    ops_.push_back([this, a, out, idx = std::move(idx)] {
      const Matrix& go = nodes_[out.id].grad;
      Matrix da(nodes_[a.id].value.rows(), go.cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < go.cols(); ++j)
          da(idx[i], j) += go(i, j);
      accumulate(a, da);
    });
    return out;
  }

  // rows x cols -> rows x 1
  Var row_sum(Var a) {
    const Matrix& av = value(a);
    Matrix v(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) v(i, 0) += av(i, j);
    Var out = push(std::move(v));
    ops_.push_back([this, a, out] {
      const Matrix& go = nodes_[out.id].grad;
      const Matrix& av2 = nodes_[a.id].value;
      Matrix da(av2.rows(), av2.cols());
      for (std::size_t i = 0; i < da.rows(); ++i)
        for (std::size_t j = 0; j < da.cols(); ++j) da(i, j) = go(i, 0);
      accumulate(a, da);
    });
    return out;
  }

  Var sum_all(Var a) {
    const Matrix& av = value(a);
    Matrix v(1, 1);
    for (double x : av.values()) v(0, 0) += x;
    Var out = push(std::move(v));
    ops_.push_back([this, a, out] {
      const double g0 = nodes_[out.id].grad(0, 0);
      const Matrix& av2 = nodes_[a.id].value;
      Matrix da(av2.rows(), av2.cols(), g0);
      accumulate(a, da);
    });
    return out;
  }

  Var mean_all(Var a) {
    const std::size_t n = value(a).size();
    if (n == 0) throw std::invalid_argument("Tape::mean_all: empty input");
    return scale(sum_all(a), 1.0 / static_cast<double>(n));
  }

  // Clears all gradients, seeds d(loss)/d(loss)=1 and replays the recorded
  // steps in reverse order. Safe to call repeatedly on the same tape.
  void backward(Var loss) {
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1)
      throw std::invalid_argument("Tape::backward: loss must be 1x1, got " +
                                  shape_str(lv));
    for (Node& n : nodes_) n.grad = Matrix(n.value.rows(), n.value.cols());
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  bool degenerate_row_seen() const { return degenerate_row_seen_; }
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
  };

  Var push(Matrix v) {
    nodes_.push_back(Node{std::move(v), Matrix()});
    return Var{nodes_.size() - 1};
  }

  void accumulate(Var v, const Matrix& g) {
    Matrix& dst = nodes_[v.id].grad;
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst.values()[i] += g.values()[i];
  }

  void accumulate_negated(Var v, const Matrix& g) {
    Matrix& dst = nodes_[v.id].grad;
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst.values()[i] -= g.values()[i];
  }

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> ops_;
  bool degenerate_row_seen_ = false;
};

// Central-difference gradient verification. `loss` evaluates the objective
// at the current parameter values, `analytic` returns one gradient matrix
// per parameter (same order). Parameters are perturbed in place and
// restored. Relative error per entry: |a - n| / max(1, |n|).
struct GradCheckProblem {
  std::vector<Matrix*> params;
  std::function<double()> loss;
  std::function<std::vector<Matrix>()> analytic;
};

inline double finite_diff_check(const GradCheckProblem& p, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be > 0");
  const std::vector<Matrix> grads = p.analytic();
  if (grads.size() != p.params.size())
    throw std::invalid_argument("finite_diff_check: gradient count mismatch");
  double worst = 0.0;
  for (std::size_t pi = 0; pi < p.params.size(); ++pi) {
    Matrix& theta = *p.params[pi];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta.values()[i];
      theta.values()[i] = saved + eps;
      const double up = p.loss();
      theta.values()[i] = saved - eps;
      const double down = p.loss();
      theta.values()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = grads[pi].values()[i];
      const double err =
          std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace dml
