// Command-line front end: train / eval / gen-data / ablate / gradcheck.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dml/config.hpp"
#include "dml/data.hpp"
#include "dml/eval.hpp"
#include "dml/model.hpp"
#include "dml/trainer.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  long long seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "key=value config file");
  cmd->add_option("--set", o.overrides, "config override, key=value (repeatable)");
  cmd->add_option("--out-dir", o.out_dir, "output directory (env DML_OUT_DIR also works)");
  cmd->add_option("--seed", o.seed, "run seed");
}

dml::TrainConfig resolve_config(const CommonOpts& o) {
  dml::TrainConfig cfg;
  if (!o.config_path.empty()) cfg = dml::load_config_file(o.config_path, cfg);
  for (const std::string& ov : o.overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--set expects key=value, got '" + ov + "'");
    cfg.set(ov.substr(0, eq), ov.substr(eq + 1));
  }
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);

  if (!o.out_dir.empty()) {
    cfg.out_dir = o.out_dir;
  } else if (const char* env = std::getenv("DML_OUT_DIR"); env && *env) {
    cfg.out_dir = env;
  } else if (cfg.out_dir.empty()) {
    cfg.out_dir = "run-out";
  }
  return cfg;
}

dml::Dataset load_dataset(const dml::TrainConfig& cfg) {
  if (cfg.synthetic) return dml::generate_synthetic(cfg.synth, cfg.seed);
  return dml::load_features_csv(cfg.data_csv, cfg.data_has_header);
}

int cmd_train(const CommonOpts& o) {
  dml::TrainConfig cfg = resolve_config(o);
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  dml::Dataset ds = load_dataset(cfg);
  dml::TrainResult r = dml::train(cfg, ds);
  r.log.write_jsonl(cfg.out_dir + "/runlog.jsonl");
  r.log.write_timing(cfg.out_dir + "/timing.jsonl");
  dml::save_checkpoint(r.params, cfg.out_dir + "/checkpoint.json");
  const auto& final_rec = r.log.final_epoch();
  std::cout << "trained " << cfg.epochs << " epochs; final l_alpha="
            << final_rec.l_alpha << " l_beta=" << final_rec.l_beta
            << " l_d=" << final_rec.l_d << "\n";
  if (final_rec.evaluated && !final_rec.test_reports.empty())
    std::cout << "test recall@1 (alpha): "
              << final_rec.test_reports.front().recall_at.at(1) << "\n";
  std::cout << "outputs in " << cfg.out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint,
             const std::string& dump_prefix) {
  dml::TrainConfig cfg = resolve_config(o);
  std::filesystem::create_directories(cfg.out_dir);
  dml::ModelParams params = dml::load_checkpoint(checkpoint);
  dml::ModelDims expect = params.dims;
  expect.d_alpha = cfg.d_alpha;
  expect.d_beta = cfg.d_beta;
  dml::check_checkpoint_dims(params, expect);

  dml::Dataset ds = load_dataset(cfg);
  dml::SplitSpec split = dml::make_zero_shot_split(ds.num_classes());
  nlohmann::json out;
  for (const char* which : {"train", "test"}) {
    const auto& classes = std::string(which) == "train" ? split.train_classes
                                                        : split.test_classes;
    auto reports = dml::evaluate_split(params, ds, classes,
                                       dml::mix_seed(cfg.seed, 200), cfg.eval_ks);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) arr.push_back(dml::to_json(r));
    out[which] = std::move(arr);
    if (!dump_prefix.empty()) {
      dml::SubsetView v = dml::subset_by_classes(ds, classes);
      dml::dump_embeddings(params, v.data,
                           dump_prefix + "-" + which + ".csv");
    }
  }
  const std::string path = cfg.out_dir + "/eval-report.json";
  std::ofstream f(path);
  f << out.dump(2) << '\n';
  std::cout << out.dump(2) << "\n";
  std::cout << "report written to " << path << "\n";
  return 0;
}

int cmd_gen_data(const CommonOpts& o, const std::string& out_prefix, bool header) {
  dml::TrainConfig cfg = resolve_config(o);
  dml::Dataset ds = dml::generate_synthetic(cfg.synth, cfg.seed);
  const std::string features = out_prefix + "-features.csv";
  const std::string factors = out_prefix + "-factors.csv";
  dml::save_features_csv(ds, features, header);
  dml::save_factors_csv(ds, factors);
  std::cout << "wrote " << ds.size() << " samples to " << features
            << " (hidden factors in " << factors << ")\n";
  return 0;
}

int cmd_ablate(const CommonOpts& o, std::size_t num_seeds) {
  dml::TrainConfig cfg = resolve_config(o);
  std::filesystem::create_directories(cfg.out_dir);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < num_seeds; ++i) seeds.push_back(cfg.seed + i);
  dml::AblationReport report = dml::run_ablation_suite(cfg, seeds);
  const std::string path = cfg.out_dir + "/ablation.csv";
  dml::write_ablation_csv(report, path);
  std::size_t failed = 0;
  for (const auto& r : report.runs)
    if (r.failed) ++failed;
  std::cout << report.runs.size() << " runs (" << failed << " failed), table in "
            << path << "\n";
  return failed == 0 ? 0 : 1;
}

int cmd_gradcheck(std::size_t num_seeds, long long seed) {
  const std::uint64_t base = seed >= 0 ? static_cast<std::uint64_t>(seed) : 1;
  const double err = dml::gradcheck_max_over_seeds(num_seeds, base);
  std::cout << "max relative error over " << num_seeds << " seeds: " << err << "\n";
  return err < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"twin-encoder deep metric learning on feature vectors"};
  app.require_subcommand(1);

  CommonOpts train_opts, eval_opts, gen_opts, ablate_opts;

  CLI::App* train = app.add_subcommand("train", "train a model per the run config");
  add_common(train, train_opts);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(eval, eval_opts);
  std::string checkpoint, dump_prefix;
  eval->add_option("--checkpoint", checkpoint, "model checkpoint JSON")->required();
  eval->add_option("--dump-embeddings", dump_prefix,
                   "also write embedding CSVs with this path prefix");

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset to CSV");
  add_common(gen, gen_opts);
  std::string out_prefix = "synthetic";
  bool header = false;
  gen->add_option("--out", out_prefix, "output path prefix");
  gen->add_flag("--header", header, "write a CSV header row");

  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation suite");
  add_common(ablate, ablate_opts);
  std::size_t ablate_seeds = 5;
  ablate->add_option("--seeds", ablate_seeds, "number of seeds per configuration");

  CLI::App* gradcheck = app.add_subcommand("gradcheck",
                                           "verify gradients of the full objective");
  std::size_t gc_seeds = 20;
  long long gc_seed = 1;
  gradcheck->add_option("--seeds", gc_seeds, "number of random seeds");
  gradcheck->add_option("--seed", gc_seed, "base seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_opts);
    if (eval->parsed()) return cmd_eval(eval_opts, checkpoint, dump_prefix);
    if (gen->parsed()) return cmd_gen_data(gen_opts, out_prefix, header);
    if (ablate->parsed()) return cmd_ablate(ablate_opts, ablate_seeds);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seeds, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
