#pragma once

// The twin-encoder network: an MLP backbone shared by a class head and an
// auxiliary head, plus a two-layer projection that maps the auxiliary
// embedding into the class embedding space. All embeddings live on the
// unit hypersphere. d_beta == 0 disables the auxiliary branch entirely,
// which is the single-encoder baseline.

#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dml/graph.hpp"
#include "dml/matrix.hpp"

namespace dml {

struct DenseLayer {
  Matrix w;  // in x out
  Matrix b;  // 1 x out
};

struct ModelDims {
  std::size_t input_dim = 64;
  std::size_t feature_dim = 64;          // backbone output F
  std::size_t d_alpha = 32;              // class embedding
  std::size_t d_beta = 32;               // auxiliary embedding, 0 = disabled
  std::vector<std::size_t> hidden = {256};  // backbone hidden widths
  std::size_t r_hidden = 32;             // projection hidden width

  void validate() const {
    if (input_dim < 1 || feature_dim < 1 || d_alpha < 1)
      throw std::invalid_argument("ModelDims: input_dim, feature_dim and d_alpha must be >= 1");
    for (std::size_t h : hidden)
      if (h < 1) throw std::invalid_argument("ModelDims: hidden widths must be >= 1");
    if (d_beta > 0 && r_hidden < 1)
      throw std::invalid_argument("ModelDims: r_hidden must be >= 1 when d_beta > 0");
  }
};

struct ModelParams {
  ModelDims dims;
  std::uint64_t seed = 0;
  std::vector<DenseLayer> backbone;
  DenseLayer head_alpha;
  DenseLayer head_beta;             // empty when d_beta == 0
  std::vector<DenseLayer> proj;     // two layers, empty when d_beta == 0
  Matrix margin_beta{1, 1, 1.2};    // learnable margin-loss boundary

  double margin_beta_value() const { return margin_beta(0, 0); }

  // Canonical parameter enumeration: checkpoint layout, optimizer state
  // and tape binding all follow this order.
  void for_each_param(const std::function<void(const std::string&, Matrix&)>& fn) {
    for (std::size_t i = 0; i < backbone.size(); ++i) {
      fn("backbone." + std::to_string(i) + ".w", backbone[i].w);
      fn("backbone." + std::to_string(i) + ".b", backbone[i].b);
    }
    fn("head_alpha.w", head_alpha.w);
    fn("head_alpha.b", head_alpha.b);
    if (dims.d_beta > 0) {
      fn("head_beta.w", head_beta.w);
      fn("head_beta.b", head_beta.b);
      for (std::size_t i = 0; i < proj.size(); ++i) {
        fn("proj." + std::to_string(i) + ".w", proj[i].w);
        fn("proj." + std::to_string(i) + ".b", proj[i].b);
      }
    }
    fn("margin_beta", margin_beta);
  }
};

namespace detail {

inline DenseLayer init_dense(std::size_t in, std::size_t out,
                             std::mt19937_64& rng) {
  DenseLayer l{Matrix(in, out), Matrix(1, out)};
  const double limit = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& v : l.w.values()) v = u(rng);
  return l;
}

}  // namespace detail

// He-style fan-in scaled uniform weights, zero biases, margin beta 1.2.
inline ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  ModelParams p;
  p.dims = dims;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  std::size_t in = dims.input_dim;
  for (std::size_t h : dims.hidden) {
    p.backbone.push_back(detail::init_dense(in, h, rng));
    in = h;
  }
  p.backbone.push_back(detail::init_dense(in, dims.feature_dim, rng));
  p.head_alpha = detail::init_dense(dims.feature_dim, dims.d_alpha, rng);
  if (dims.d_beta > 0) {
    p.head_beta = detail::init_dense(dims.feature_dim, dims.d_beta, rng);
    p.proj.push_back(detail::init_dense(dims.d_beta, dims.r_hidden, rng));
    p.proj.push_back(detail::init_dense(dims.r_hidden, dims.d_alpha, rng));
  }
  p.margin_beta = Matrix(1, 1, 1.2);
  return p;
}

// ---------------------------------------------------------------------------
// Plain forward pass (evaluation path, no tape)
// ---------------------------------------------------------------------------

struct EmbedBatch {
  Matrix features;  // batch x F
  Matrix e_alpha;   // batch x d_alpha, unit rows
  Matrix e_beta;    // batch x d_beta, unit rows; empty when disabled
  bool had_degenerate_row = false;
};

inline Matrix dense_forward(const DenseLayer& l, const Matrix& x) {
  Matrix y = matmul(x, l.w);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += l.b(0, j);
  return y;
}

inline Matrix backbone_forward(const ModelParams& p, const Matrix& x) {
  if (x.cols() != p.dims.input_dim)
    throw std::invalid_argument("backbone_forward: expected " +
                                std::to_string(p.dims.input_dim) +
                                " input columns, got " + std::to_string(x.cols()));
  Matrix h = x;
  for (std::size_t i = 0; i < p.backbone.size(); ++i) {
    if (i > 0) h = relu(h);
    h = dense_forward(p.backbone[i], h);
  }
  return h;
}

inline EmbedBatch embed(const ModelParams& p, const Matrix& x) {
  EmbedBatch out;
  out.features = backbone_forward(p, x);
  NormalizeResult na = l2_normalize_rows(dense_forward(p.head_alpha, out.features));
  out.e_alpha = std::move(na.out);
  out.had_degenerate_row = na.had_degenerate_row;
  if (p.dims.d_beta > 0) {
    NormalizeResult nb = l2_normalize_rows(dense_forward(p.head_beta, out.features));
    out.e_beta = std::move(nb.out);
    out.had_degenerate_row = out.had_degenerate_row || nb.had_degenerate_row;
  }
  return out;
}

// Two-layer projection with relu between and unit-normalized output rows.
inline Matrix project_r(const ModelParams& p, const Matrix& e_beta) {
  if (p.dims.d_beta == 0)
    throw std::invalid_argument("project_r: auxiliary branch disabled (d_beta = 0)");
  Matrix h = relu(dense_forward(p.proj[0], e_beta));
  return l2_normalize_rows(dense_forward(p.proj[1], h)).out;
}

// ---------------------------------------------------------------------------
// Tape-bound forward pass (training path)
// ---------------------------------------------------------------------------

struct ParamBinding {
  std::string name;
  Matrix* host = nullptr;
  Var var;
};

struct BoundModel {
  std::vector<ParamBinding> params;
  std::vector<std::pair<Var, Var>> backbone;
  std::pair<Var, Var> head_alpha;
  std::pair<Var, Var> head_beta;
  std::vector<std::pair<Var, Var>> proj;
  Var margin_beta;
  const ModelDims* dims = nullptr;

  const ParamBinding* find(const std::string& name) const {
    for (const ParamBinding& b : params)
      if (b.name == name) return &b;
    return nullptr;
  }
};

inline BoundModel bind_params(Tape& t, ModelParams& p) {
  BoundModel bm;
  bm.dims = &p.dims;
  p.for_each_param([&](const std::string& name, Matrix& m) {
    bm.params.push_back(ParamBinding{name, &m, t.leaf(m)});
  });
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.backbone.size(); ++i, k += 2)
    bm.backbone.emplace_back(bm.params[k].var, bm.params[k + 1].var);
  bm.head_alpha = {bm.params[k].var, bm.params[k + 1].var};
  k += 2;
  if (p.dims.d_beta > 0) {
    bm.head_beta = {bm.params[k].var, bm.params[k + 1].var};
    k += 2;
    for (std::size_t i = 0; i < p.proj.size(); ++i, k += 2)
      bm.proj.emplace_back(bm.params[k].var, bm.params[k + 1].var);
  }
  bm.margin_beta = bm.params[k].var;
  return bm;
}

inline Var dense_graph(Tape& t, const std::pair<Var, Var>& layer, Var x) {
  return t.add_rowvec(t.matmul(x, layer.first), layer.second);
}

struct GraphEmbed {
  Var features;
  Var e_alpha;
  Var e_beta;  // unset when d_beta == 0
};

inline GraphEmbed embed_graph(Tape& t, const BoundModel& bm, Var x) {
  GraphEmbed g;
  Var h = x;
  for (std::size_t i = 0; i < bm.backbone.size(); ++i) {
    if (i > 0) h = t.relu(h);
    h = dense_graph(t, bm.backbone[i], h);
  }
  g.features = h;
  g.e_alpha = t.l2_normalize_rows(dense_graph(t, bm.head_alpha, h));
  if (bm.dims->d_beta > 0)
    g.e_beta = t.l2_normalize_rows(dense_graph(t, bm.head_beta, h));
  return g;
}

inline Var project_graph(Tape& t, const BoundModel& bm, Var e_beta) {
  if (bm.dims->d_beta == 0)
    throw std::invalid_argument("project_graph: auxiliary branch disabled (d_beta = 0)");
  Var h = t.relu(dense_graph(t, bm.proj[0], e_beta));
  return t.l2_normalize_rows(dense_graph(t, bm.proj[1], h));
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON container of named tensors. Doubles are
// serialized with shortest round-trip precision, so save/load is lossless.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(ModelParams& p, const std::string& path) {
  nlohmann::json j;
  j["format"] = "dml-checkpoint";
  j["version"] = kCheckpointVersion;
  j["seed"] = p.seed;
  j["dims"] = {{"input_dim", p.dims.input_dim},
               {"feature_dim", p.dims.feature_dim},
               {"d_alpha", p.dims.d_alpha},
               {"d_beta", p.dims.d_beta},
               {"hidden", p.dims.hidden},
               {"r_hidden", p.dims.r_hidden}};
  nlohmann::json tensors = nlohmann::json::object();
  p.for_each_param([&](const std::string& name, Matrix& m) {
    tensors[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
  });
  j["tensors"] = std::move(tensors);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f << j.dump();
  f << '\n';
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: " + path + " is not valid JSON: " + e.what());
  }
  if (!j.contains("format") || j["format"] != "dml-checkpoint")
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  if (!j.contains("version") || j["version"].get<int>() != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported checkpoint version in " + path);

  ModelDims dims;
  const auto& jd = j.at("dims");
  dims.input_dim = jd.at("input_dim").get<std::size_t>();
  dims.feature_dim = jd.at("feature_dim").get<std::size_t>();
  dims.d_alpha = jd.at("d_alpha").get<std::size_t>();
  dims.d_beta = jd.at("d_beta").get<std::size_t>();
  dims.hidden = jd.at("hidden").get<std::vector<std::size_t>>();
  dims.r_hidden = jd.at("r_hidden").get<std::size_t>();

  ModelParams p = init_params(dims, j.at("seed").get<std::uint64_t>());
  const auto& tensors = j.at("tensors");
  p.for_each_param([&](const std::string& name, Matrix& m) {
    if (!tensors.contains(name))
      throw std::runtime_error("load_checkpoint: missing tensor " + name);
    const auto& tj = tensors.at(name);
    const auto rows = tj.at("rows").get<std::size_t>();
    const auto cols = tj.at("cols").get<std::size_t>();
    if (rows != m.rows() || cols != m.cols())
      throw std::runtime_error("load_checkpoint: tensor " + name + " has shape " +
                               std::to_string(rows) + "x" + std::to_string(cols) +
                               ", expected " + shape_str(m));
    auto data = tj.at("data").get<std::vector<double>>();
    m = Matrix::from_rows(rows, cols, std::move(data));
  });
  return p;
}

// Dimension guard for loading a checkpoint into a run that expects a
// particular architecture.
inline void check_checkpoint_dims(const ModelParams& p, const ModelDims& expect) {
  auto fail = [](const std::string& what, std::size_t got, std::size_t want) {
    throw std::runtime_error("checkpoint dimension mismatch: " + what + " is " +
                             std::to_string(got) + ", run expects " +
                             std::to_string(want));
  };
  if (p.dims.input_dim != expect.input_dim) fail("input_dim", p.dims.input_dim, expect.input_dim);
  if (p.dims.feature_dim != expect.feature_dim) fail("feature_dim", p.dims.feature_dim, expect.feature_dim);
  if (p.dims.d_alpha != expect.d_alpha) fail("d_alpha", p.dims.d_alpha, expect.d_alpha);
  if (p.dims.d_beta != expect.d_beta) fail("d_beta", p.dims.d_beta, expect.d_beta);
}

}  // namespace dml
