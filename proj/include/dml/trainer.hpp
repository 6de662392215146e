#pragma once

// Alternating-update training: the class head learns from ground-truth
// labels, the auxiliary head from clustered surrogate labels, and the
// adversarial similarity penalty (through gradient reversal and the
// projection network) pushes the two encodings apart. Surrogate labels are
// refreshed from the auxiliary embedding on a fixed epoch schedule, with
// pairwise label switching as regularization.
//
// Each iteration performs two tape builds: the alpha step backpropagates
// l_alpha + gamma*l_d and the beta step re-embeds and backpropagates
// l_beta + gamma*l_d. A parameter is stepped only when the current loss
// actually touches it, so neither step leaks the other task's class loss.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dml/clustering.hpp"
#include "dml/config.hpp"
#include "dml/data.hpp"
#include "dml/eval.hpp"
#include "dml/graph.hpp"
#include "dml/losses.hpp"
#include "dml/model.hpp"
#include "dml/optim.hpp"

namespace dml {

struct EpochRecord {
  std::size_t epoch = 0;
  double l_alpha = 0.0;
  double l_beta = 0.0;
  double l_d = 0.0;
  bool refreshed = false;
  double churn = 0.0;  // surrogate labels changed by this epoch's refresh
  bool evaluated = false;
  std::vector<EvalReport> train_reports;
  std::vector<EvalReport> test_reports;
  double wall_ms = 0.0;
};

struct RunLog {
  nlohmann::json config;
  std::vector<EpochRecord> epochs;

  nlohmann::json epoch_json(const EpochRecord& r) const {
    nlohmann::json j{{"epoch", r.epoch},
                     {"l_alpha", r.l_alpha},
                     {"l_beta", r.l_beta},
                     {"l_d", r.l_d},
                     {"refreshed", r.refreshed},
                     {"churn", r.churn}};
    if (r.evaluated) {
      nlohmann::json tr = nlohmann::json::array(), te = nlohmann::json::array();
      for (const auto& e : r.train_reports) tr.push_back(to_json(e));
      for (const auto& e : r.test_reports) te.push_back(to_json(e));
      j["eval"] = {{"train", std::move(tr)}, {"test", std::move(te)}};
    }
    return j;
  }

  // Deterministic given config+seed. Wall-clock timings go to the sidecar.
  void write_jsonl(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("RunLog: cannot open " + path);
    f << nlohmann::json{{"format", "dml-runlog"}, {"version", 1}, {"config", config}}.dump()
      << '\n';
    for (const auto& r : epochs) f << epoch_json(r).dump() << '\n';
    if (!f) throw std::runtime_error("RunLog: write failed for " + path);
  }

  void write_timing(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("RunLog: cannot open " + path);
    for (const auto& r : epochs)
      f << nlohmann::json{{"epoch", r.epoch}, {"wall_ms", r.wall_ms}}.dump() << '\n';
  }

  const EpochRecord& final_epoch() const {
    if (epochs.empty()) throw std::runtime_error("RunLog: no epochs recorded");
    return epochs.back();
  }
};

struct TrainResult {
  ModelParams params;
  RunLog log;
  SplitSpec split;
  std::vector<int> final_surrogate;  // train-split order
};

// Test instrumentation: gradient magnitudes per parameter and the set of
// parameters actually stepped, for each half-iteration.
struct StepTrace {
  std::size_t epoch = 0;
  std::size_t iter = 0;
  bool alpha_step = true;
  double class_loss = 0.0;
  double mi_loss = 0.0;
  std::vector<std::pair<std::string, double>> grad_l1;
  std::vector<std::string> stepped;
};
using StepObserver = std::function<void(const StepTrace&)>;

// ---------------------------------------------------------------------------
// Evaluation protocol: Recall@k, NMI of a k-means clustering of the
// embedding (k = number of classes in the split) against ground truth,
// and the intra-class variance ratio; for alpha, beta and concatenated.
// ---------------------------------------------------------------------------

inline std::vector<EvalReport> evaluate_view(const ModelParams& params,
                                             const Dataset& view,
                                             std::uint64_t eval_seed,
                                             const std::vector<int>& ks) {
  EmbedBatch eb = embed(params, view.features);
  std::vector<EvalReport> reports;
  auto report_for = [&](const std::string& tag, const Matrix& emb) {
    EvalReport r;
    r.encoder = tag;
    r.recall_at = recall_at_k(emb, view.labels, ks);
    const std::size_t c = std::min(view.num_classes(), emb.rows());
    r.nmi = nmi(kmeans(emb, c, eval_seed).assignments, view.labels);
    r.intra_class_variance_ratio = intra_class_variance_ratio(emb, view.labels).ratio;
    reports.push_back(std::move(r));
  };
  report_for("alpha", eb.e_alpha);
  if (params.dims.d_beta > 0) {
    report_for("beta", eb.e_beta);
    Matrix concat(eb.e_alpha.rows(), eb.e_alpha.cols() + eb.e_beta.cols());
    for (std::size_t i = 0; i < concat.rows(); ++i) {
      for (std::size_t j = 0; j < eb.e_alpha.cols(); ++j) concat(i, j) = eb.e_alpha(i, j);
      for (std::size_t j = 0; j < eb.e_beta.cols(); ++j)
        concat(i, eb.e_alpha.cols() + j) = eb.e_beta(i, j);
    }
    report_for("concat", concat);
  }
  return reports;
}

inline std::vector<EvalReport> evaluate_split(const ModelParams& params,
                                              const Dataset& full,
                                              const std::vector<int>& classes,
                                              std::uint64_t eval_seed,
                                              const std::vector<int>& ks) {
  return evaluate_view(params, subset_by_classes(full, classes).data, eval_seed, ks);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

inline Matrix gather_feature_rows(const Matrix& features,
                                  const std::vector<std::size_t>& idx) {
  Matrix m(idx.size(), features.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < features.cols(); ++j)
      m(i, j) = features(idx[i], j);
  return m;
}

template <typename T>
inline std::vector<T> gather(const std::vector<T>& v,
                             const std::vector<std::size_t>& idx) {
  std::vector<T> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
  return out;
}

// Normalized per-class mean embedding; degenerate means fall back to e1.
inline Matrix class_mean_proxies(const Matrix& emb, const std::vector<int>& labels,
                                 std::size_t num_classes) {
  Matrix sums(num_classes, emb.cols());
  std::vector<double> counts(num_classes, 0.0);
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    for (std::size_t j = 0; j < emb.cols(); ++j)
      sums(static_cast<std::size_t>(labels[i]), j) += emb(i, j);
    counts[static_cast<std::size_t>(labels[i])] += 1.0;
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (counts[c] > 0.0)
      for (std::size_t j = 0; j < emb.cols(); ++j) sums(c, j) /= counts[c];
  return l2_normalize_rows(sums).out;
}

}  // namespace detail

inline TrainResult train(const TrainConfig& cfg, const Dataset& full,
                         const StepObserver& observer = {}) {
  cfg.validate();
  full.validate();

  TrainResult result;
  result.split = make_zero_shot_split(full.num_classes());
  SubsetView train_view = subset_by_classes(full, result.split.train_classes);
  SubsetView test_view = subset_by_classes(full, result.split.test_classes);
  Dataset& train_ds = train_view.data;

  const std::size_t n_train = train_ds.size();
  const std::size_t k_train = train_ds.num_classes();
  const BatchSpec batch_spec{cfg.batch_size, cfg.per_class};
  batch_spec.validate(k_train);

  ModelDims dims;
  dims.input_dim = train_ds.input_dim();
  dims.feature_dim = cfg.feature_dim;
  dims.d_alpha = cfg.d_alpha;
  dims.d_beta = cfg.d_beta;
  dims.hidden = {cfg.hidden_dim};
  dims.r_hidden = cfg.effective_r_hidden();
  ModelParams params = init_params(dims, cfg.seed);

  const bool aux_on = cfg.clustering_on && cfg.d_beta > 0;
  const bool mi_on = cfg.mutual_info_on && cfg.d_beta > 0 && cfg.gamma > 0.0;
  const std::size_t num_clusters = cfg.effective_clusters(
      n_train, k_train, full.shared.empty() ? 0 : cfg.synth.num_shared);

  std::mt19937_64 rng_batch(mix_seed(cfg.seed, 1));
  std::mt19937_64 rng_switch(mix_seed(cfg.seed, 2));
  std::mt19937_64 rng_miner(mix_seed(cfg.seed, 3));

  // Initial surrogate labels: cluster the backbone features, standardized
  // per ground-truth class unless the ablation disables it.
  if (aux_on) {
    const Matrix feats = backbone_forward(params, train_ds.features);
    train_ds.surrogate =
        cfg.standardize_on
            ? mine_surrogate_labels(feats, train_ds.labels, num_clusters,
                                    mix_seed(cfg.seed, 10)).labels
            : kmeans(feats, num_clusters, mix_seed(cfg.seed, 10)).assignments;
  }

  // Optimizer slots: model parameters in canonical order, then proxies.
  std::map<std::string, std::size_t> slot_of;
  params.for_each_param([&](const std::string& name, Matrix&) {
    const std::size_t s = slot_of.size();
    slot_of[name] = s;
  });
  const std::size_t proxy_alpha_slot = slot_of.size();
  const std::size_t proxy_beta_slot = proxy_alpha_slot + 1;
  Adam adam(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  adam.resize(proxy_beta_slot + 1);

  Matrix proxies_alpha, proxies_beta;
  if (cfg.loss == LossKind::kProxyNca) {
    EmbedBatch eb = embed(params, train_ds.features);
    proxies_alpha = detail::class_mean_proxies(eb.e_alpha, train_ds.labels, k_train);
    if (aux_on)
      proxies_beta = detail::class_mean_proxies(eb.e_beta, train_ds.surrogate, num_clusters);
  }

  const std::size_t iters_per_epoch = std::max<std::size_t>(1, n_train / cfg.batch_size);
  const auto class_index = train_ds.class_index();

  result.log.config = cfg.to_json();

  // One half-iteration: build the loss for recipient task, backprop, step.
  auto run_step = [&](bool alpha_step, const std::vector<std::size_t>& batch,
                      std::size_t epoch, std::size_t iter, double& class_loss_out,
                      double& mi_loss_out) {
    Tape t;
    BoundModel bm = bind_params(t, params);
    Var proxies_var{};
    const bool use_alpha_proxies = cfg.loss == LossKind::kProxyNca && alpha_step;
    const bool use_beta_proxies = cfg.loss == LossKind::kProxyNca && !alpha_step;
    if (use_alpha_proxies) proxies_var = t.leaf(proxies_alpha);
    if (use_beta_proxies) proxies_var = t.leaf(proxies_beta);

    Var x = t.leaf(detail::gather_feature_rows(train_ds.features, batch));
    GraphEmbed ge = embed_graph(t, bm, x);
    Var e = alpha_step ? ge.e_alpha : ge.e_beta;
    const std::vector<int> y = alpha_step
                                   ? detail::gather(train_ds.labels, batch)
                                   : detail::gather(train_ds.surrogate, batch);

    LossResult lr;
    switch (cfg.loss) {
      case LossKind::kMargin: {
        const auto triplets = sample_distance_weighted(
            pairwise_sq_distances(t.value(e)), y, t.value(e).cols(), cfg.dw_clip,
            rng_miner);
        lr = margin_loss_graph(t, e, bm.margin_beta, triplets, cfg.margin_alpha);
        break;
      }
      case LossKind::kTripletSemihard: {
        const auto triplets = mine_semihard(pairwise_sq_distances(t.value(e)), y);
        lr = triplet_loss_graph(t, e, triplets, cfg.triplet_margin);
        break;
      }
      case LossKind::kProxyNca:
        lr = proxynca_loss_graph(t, e, proxies_var, y);
        break;
    }

    Var total = lr.loss;
    double mi_value = 0.0;
    if (mi_on) {
      Var r = project_graph(t, bm, t.grad_reverse(ge.e_beta));
      Var ld = mutual_info_loss_graph(t, t.grad_reverse(ge.e_alpha), r);
      mi_value = t.value(ld)(0, 0);
      total = t.add(total, t.scale(ld, cfg.gamma));
    }

    class_loss_out = t.value(lr.loss)(0, 0);
    mi_loss_out = mi_value;
    if (!std::isfinite(t.value(total)(0, 0))) {
      if (!cfg.out_dir.empty())
        save_checkpoint(params, cfg.out_dir + "/diverged-checkpoint.json");
      throw std::runtime_error(
          "training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
          " iteration " + std::to_string(iter) +
          (cfg.out_dir.empty() ? "" : "; diagnostic checkpoint written to " +
                                          cfg.out_dir + "/diverged-checkpoint.json"));
    }

    t.backward(total);

    // Parameters reached by this loss. The class loss touches the backbone
    // and its own head (plus the margin boundary / proxies); the adversarial
    // term additionally reaches the opposite head and the projection.
    std::vector<std::string> stepped;
    auto mark = [&](const std::string& name) {
      if (slot_of.count(name)) stepped.push_back(name);
    };
    for (std::size_t i = 0; i < params.backbone.size(); ++i) {
      mark("backbone." + std::to_string(i) + ".w");
      mark("backbone." + std::to_string(i) + ".b");
    }
    if (alpha_step || mi_on) {
      mark("head_alpha.w");
      mark("head_alpha.b");
    }
    if (!alpha_step || mi_on) {
      mark("head_beta.w");
      mark("head_beta.b");
    }
    if (mi_on)
      for (std::size_t i = 0; i < params.proj.size(); ++i) {
        mark("proj." + std::to_string(i) + ".w");
        mark("proj." + std::to_string(i) + ".b");
      }
    if (cfg.loss == LossKind::kMargin && !lr.empty_batch) mark("margin_beta");

    if (observer) {
      StepTrace trace;
      trace.epoch = epoch;
      trace.iter = iter;
      trace.alpha_step = alpha_step;
      trace.class_loss = class_loss_out;
      trace.mi_loss = mi_value;
      for (const ParamBinding& b : bm.params) {
        double l1 = 0.0;
        for (double g : t.grad(b.var).values()) l1 += std::abs(g);
        trace.grad_l1.emplace_back(b.name, l1);
      }
      trace.stepped = stepped;
      observer(trace);
    }

    for (const std::string& name : stepped) {
      const ParamBinding* b = bm.find(name);
      adam.step(slot_of.at(name), *b->host, t.grad(b->var));
    }
    if (use_alpha_proxies)
      adam.step(proxy_alpha_slot, proxies_alpha, t.grad(proxies_var));
    if (use_beta_proxies)
      adam.step(proxy_beta_slot, proxies_beta, t.grad(proxies_var));
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    double sum_a = 0.0, sum_b = 0.0, sum_d = 0.0;
    std::size_t n_d = 0;

    for (std::size_t iter = 0; iter < iters_per_epoch; ++iter) {
      const std::vector<std::size_t> batch = next_batch(class_index, batch_spec, rng_batch);
      double cl = 0.0, ml = 0.0;
      run_step(true, batch, epoch, iter, cl, ml);
      sum_a += cl;
      if (mi_on) {
        sum_d += ml;
        ++n_d;
      }
      if (aux_on) {
        run_step(false, batch, epoch, iter, cl, ml);
        sum_b += cl;
        if (mi_on) {
          sum_d += ml;
          ++n_d;
        }
      }
    }
    rec.l_alpha = sum_a / static_cast<double>(iters_per_epoch);
    rec.l_beta = aux_on ? sum_b / static_cast<double>(iters_per_epoch) : 0.0;
    rec.l_d = n_d > 0 ? sum_d / static_cast<double>(n_d) : 0.0;

    if (aux_on && epoch % cfg.update_period == 0) {
      SurrogateMining m = update_surrogate_labels(
          params, train_ds.features, num_clusters, mix_seed(cfg.seed, 100 + epoch),
          cfg.standardize_on_update, &train_ds.labels);
      std::size_t changed = 0;
      for (std::size_t i = 0; i < n_train; ++i)
        if (m.labels[i] != train_ds.surrogate[i]) ++changed;
      rec.refreshed = true;
      rec.churn = static_cast<double>(changed) / static_cast<double>(n_train);
      train_ds.surrogate = switch_labels(m.labels, cfg.label_switch_p, rng_switch);
      if (cfg.loss == LossKind::kProxyNca) {
        EmbedBatch eb = embed(params, train_ds.features);
        proxies_beta =
            detail::class_mean_proxies(eb.e_beta, train_ds.surrogate, num_clusters);
      }
    }

    const bool last = epoch + 1 == cfg.epochs;
    if (last || (cfg.eval_period > 0 && (epoch + 1) % cfg.eval_period == 0)) {
      rec.evaluated = true;
      const std::uint64_t es = mix_seed(cfg.seed, 200 + epoch);
      rec.train_reports = evaluate_view(params, train_ds, es, cfg.eval_ks);
      rec.test_reports = evaluate_view(params, test_view.data, es, cfg.eval_ks);
    }

    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(std::move(rec));
  }

  result.params = std::move(params);
  result.final_surrogate = train_ds.surrogate;
  return result;
}

// ---------------------------------------------------------------------------
// Full-objective gradient verification: margin loss plus the adversarial
// term on a small twin-encoder model, against central finite differences.
// Batches are redrawn until every hinge argument and relu input sits at
// least 1e-3 from its kink so the difference quotient stays on one branch.
// ---------------------------------------------------------------------------

inline double gradcheck_full(std::uint64_t seed, double eps = 1e-5) {
  ModelDims dims;
  dims.input_dim = 8;
  dims.feature_dim = 8;
  dims.d_alpha = 5;
  dims.d_beta = 5;
  dims.hidden = {10};
  dims.r_hidden = 5;
  const double gamma = 10.0;
  const double alpha_margin = 0.2;
  const std::size_t batch = 12;

  for (std::uint64_t attempt = 0;; ++attempt) {
    const std::uint64_t s = mix_seed(seed, attempt);
    ModelParams params = init_params(dims, s);
    std::mt19937_64 rng(mix_seed(s, 1));
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix x(batch, dims.input_dim);
    for (double& v : x.values()) v = g(rng);
    std::vector<int> labels(batch);
    for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i / 3);

    // freeze the mined triplets: the objective must stay smooth in theta
    EmbedBatch eb0 = embed(params, x);
    std::mt19937_64 miner_rng(mix_seed(s, 2));
    const auto triplets = sample_distance_weighted(
        pairwise_sq_distances(eb0.e_alpha), labels, dims.d_alpha, 0.5, miner_rng);
    if (triplets.empty()) continue;

    auto build = [&](Tape& t) {
      BoundModel bm = bind_params(t, params);
      Var xv = t.leaf(x);
      GraphEmbed ge = embed_graph(t, bm, xv);
      LossResult lr = margin_loss_graph(t, ge.e_alpha, bm.margin_beta, triplets,
                                        alpha_margin);
      Var r = project_graph(t, bm, t.grad_reverse(ge.e_beta));
      Var ld = mutual_info_loss_graph(t, t.grad_reverse(ge.e_alpha), r);
      return std::pair<Var, BoundModel>(t.add(lr.loss, t.scale(ld, gamma)), bm);
    };

    // kink distances at the evaluation point
    double kink = std::numeric_limits<double>::infinity();
    {
      Matrix h = x;
      for (std::size_t i = 0; i < params.backbone.size(); ++i) {
        if (i > 0) {
          for (double v : h.values()) kink = std::min(kink, std::abs(v));
          h = relu(h);
        }
        h = dense_forward(params.backbone[i], h);
      }
      Matrix rpre = dense_forward(params.proj[0], eb0.e_beta);
      for (double v : rpre.values()) kink = std::min(kink, std::abs(v));
      const Matrix d2 = pairwise_sq_distances(eb0.e_alpha);
      const double beta = params.margin_beta_value();
      for (const Triplet& tr : triplets) {
        const double dap = std::sqrt(d2(tr.anchor, tr.positive) + 1e-12);
        const double dan = std::sqrt(d2(tr.anchor, tr.negative) + 1e-12);
        kink = std::min(kink, std::abs(alpha_margin + dap - beta));
        kink = std::min(kink, std::abs(alpha_margin + beta - dan));
      }
    }
    if (kink < 1e-3) continue;

    GradCheckProblem problem;
    params.for_each_param(
        [&](const std::string&, Matrix& m) { problem.params.push_back(&m); });
    problem.loss = [&]() {
      Tape t;
      return t.value(build(t).first)(0, 0);
    };
    problem.analytic = [&]() {
      Tape t;
      auto [loss, bm] = build(t);
      t.backward(loss);
      std::vector<Matrix> grads;
      for (const ParamBinding& b : bm.params) grads.push_back(t.grad(b.var));
      return grads;
    };
    return finite_diff_check(problem, eps);
  }
}

inline double gradcheck_max_over_seeds(std::size_t num_seeds, std::uint64_t base_seed,
                                       double eps = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < num_seeds; ++i)
    worst = std::max(worst, gradcheck_full(base_seed + i, eps));
  return worst;
}

// ---------------------------------------------------------------------------
// Ablation suite: the component table, a cluster-count sweep, an update-
// period sweep and an auxiliary-dimension sweep, each over several seeds
// on the same per-seed dataset.
// ---------------------------------------------------------------------------

struct AblationRun {
  std::string group;
  std::string name;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::map<int, double> recall;  // test split, alpha encoder
  double nmi = 0.0;
  double intra = 0.0;
};

struct AblationReport {
  std::vector<AblationRun> runs;

  double mean_recall1(const std::string& group, const std::string& name) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : runs)
      if (!r.failed && r.group == group && r.name == name) {
        sum += r.recall.at(1);
        ++n;
      }
    if (n == 0) throw std::runtime_error("ablation: no successful runs for " + name);
    return sum / static_cast<double>(n);
  }

  double mean_intra(const std::string& group, const std::string& name) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : runs)
      if (!r.failed && r.group == group && r.name == name) {
        sum += r.intra;
        ++n;
      }
    if (n == 0) throw std::runtime_error("ablation: no successful runs for " + name);
    return sum / static_cast<double>(n);
  }
};

inline TrainConfig baseline_variant(TrainConfig cfg) {
  cfg.d_beta = 0;
  cfg.clustering_on = false;
  cfg.standardize_on = false;
  cfg.mutual_info_on = false;
  return cfg;
}

inline AblationReport run_ablation_suite(const TrainConfig& base,
                                         const std::vector<std::uint64_t>& seeds) {
  struct Variant {
    std::string group, name;
    TrainConfig cfg;
  };
  std::vector<Variant> variants;

  {  // component table
    TrainConfig clust = base;
    clust.standardize_on = false;
    clust.mutual_info_on = false;
    TrainConfig clust_stand = base;
    clust_stand.mutual_info_on = false;
    variants.push_back({"components", "baseline", baseline_variant(base)});
    variants.push_back({"components", "clust", clust});
    variants.push_back({"components", "clust+stand", clust_stand});
    variants.push_back({"components", "clust+stand+mutinfo", base});
  }
  {  // cluster-count robustness
    const std::size_t c_star = base.effective_clusters(
        base.synth.num_classes / 2 * base.synth.per_class, base.synth.num_classes / 2,
        base.synth.num_shared);
    for (std::size_t c : {std::max<std::size_t>(2, c_star / 2), c_star, 2 * c_star}) {
      TrainConfig v = base;
      v.clusters = c;
      variants.push_back({"clusters", "C=" + std::to_string(c), v});
    }
  }
  {  // update-period robustness
    for (std::size_t tu : {1, 2, 5, 10}) {
      TrainConfig v = base;
      v.update_period = tu;
      variants.push_back({"update_period", "T=" + std::to_string(tu), v});
    }
  }
  {  // auxiliary capacity
    for (std::size_t db : {std::size_t(0), base.d_alpha / 4, base.d_alpha}) {
      TrainConfig v = db == 0 ? baseline_variant(base) : base;
      v.d_beta = db;
      variants.push_back({"d_beta", "d_beta=" + std::to_string(db), v});
    }
  }

  AblationReport report;
  for (std::uint64_t seed : seeds) {
    const Dataset ds = generate_synthetic(base.synth, mix_seed(seed, 7777));
    for (const Variant& v : variants) {
      AblationRun run;
      run.group = v.group;
      run.name = v.name;
      run.seed = seed;
      try {
        TrainConfig cfg = v.cfg;
        cfg.seed = seed;
        cfg.eval_period = 0;  // final-epoch evaluation only
        TrainResult tr = train(cfg, ds);
        const EvalReport& alpha = tr.log.final_epoch().test_reports.at(0);
        run.recall = alpha.recall_at;
        run.nmi = alpha.nmi;
        run.intra = alpha.intra_class_variance_ratio;
      } catch (const std::exception& e) {
        run.failed = true;
        run.error = e.what();
      }
      report.runs.push_back(std::move(run));
    }
  }
  return report;
}

inline void write_ablation_csv(const AblationReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_ablation_csv: cannot open " + path);
  f.precision(17);
  f << "group,name,seed,recall@1,recall@2,recall@4,recall@8,nmi,intra_ratio,error\n";
  auto row = [&](const AblationRun& r, const std::string& seed_label) {
    f << r.group << ',' << r.name << ',' << seed_label;
    if (r.failed) {
      f << ",,,,,,," << r.error << '\n';
      return;
    }
    for (int k : {1, 2, 4, 8})
      f << ',' << (r.recall.count(k) ? r.recall.at(k) : 0.0);
    f << ',' << r.nmi << ',' << r.intra << ",\n";
  };
  for (const auto& r : report.runs) row(r, std::to_string(r.seed));

  // aggregate over successful seeds, preserving variant order
  std::vector<std::pair<std::string, std::string>> seen;
  for (const auto& r : report.runs) {
    const auto key = std::make_pair(r.group, r.name);
    bool dup = false;
    for (const auto& s : seen) dup = dup || s == key;
    if (dup) continue;
    seen.push_back(key);
    AblationRun mean;
    mean.group = r.group;
    mean.name = r.name;
    std::size_t n = 0;
    for (const auto& q : report.runs) {
      if (q.failed || q.group != r.group || q.name != r.name) continue;
      for (const auto& [k, v] : q.recall) mean.recall[k] += v;
      mean.nmi += q.nmi;
      mean.intra += q.intra;
      ++n;
    }
    if (n == 0) continue;
    for (auto& [k, v] : mean.recall) v /= static_cast<double>(n);
    mean.nmi /= static_cast<double>(n);
    mean.intra /= static_cast<double>(n);
    row(mean, "mean");
  }
  if (!f) throw std::runtime_error("write_ablation_csv: write failed for " + path);
}

}  // namespace dml
