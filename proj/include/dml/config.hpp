#pragma once

// Run configuration: every Algorithm-1 hyperparameter, the ablation
// switches, and the data source. Parsed from a one-key-per-line text file
// with key=value CLI overrides on top.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dml/data.hpp"

namespace dml {

enum class LossKind { kMargin, kTripletSemihard, kProxyNca };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kMargin: return "margin";
    case LossKind::kTripletSemihard: return "triplet-semihard";
    case LossKind::kProxyNca: return "proxynca";
  }
  return "margin";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "margin") return LossKind::kMargin;
  if (s == "triplet-semihard") return LossKind::kTripletSemihard;
  if (s == "proxynca") return LossKind::kProxyNca;
  throw std::invalid_argument("unknown loss '" + s +
                              "' (want margin | triplet-semihard | proxynca)");
}

struct TrainConfig {
  // model
  std::size_t feature_dim = 64;
  std::size_t d_alpha = 32;
  std::size_t d_beta = 32;
  std::size_t hidden_dim = 128;   // backbone hidden width
  std::size_t r_hidden = 0;       // 0 = use d_alpha

  // losses
  LossKind loss = LossKind::kMargin;
  double triplet_margin = 0.2;
  double margin_alpha = 0.2;
  double dw_clip = 0.5;
  double gamma = 100.0;

  // surrogate task
  std::size_t clusters = 0;       // 0 = auto (shared-factor count, else 2*sqrt(N/K))
  std::size_t update_period = 2;  // T_U, epochs
  double label_switch_p = 0.2;

  // optimization
  std::size_t batch_size = 64;
  std::size_t per_class = 4;      // m
  double learning_rate = 1e-3;    // paper-scale runs use 1e-5 with a pretrained backbone
  std::size_t epochs = 40;

  // ablation switches
  bool clustering_on = true;
  bool standardize_on = true;
  bool mutual_info_on = true;
  bool standardize_on_update = false;

  // evaluation
  std::size_t eval_period = 0;    // 0 = final epoch only
  std::vector<int> eval_ks = {1, 2, 4, 8};

  // data source
  bool synthetic = true;
  SyntheticSpec synth;
  std::string data_csv;
  bool data_has_header = false;

  std::uint64_t seed = 1;
  std::string out_dir;

  std::size_t effective_r_hidden() const { return r_hidden == 0 ? d_alpha : r_hidden; }

  std::size_t effective_clusters(std::size_t n, std::size_t num_classes,
                                 std::size_t num_shared) const {
    if (clusters > 0) return clusters;
    if (num_shared > 0) return num_shared;
    const double guess = 2.0 * std::sqrt(static_cast<double>(n) /
                                         static_cast<double>(num_classes));
    return std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(guess)));
  }

  void validate() const {
    if (gamma < 0.0) throw std::invalid_argument("config: gamma must be >= 0");
    if (update_period < 1) throw std::invalid_argument("config: update_period must be >= 1");
    if (label_switch_p < 0.0 || label_switch_p > 1.0)
      throw std::invalid_argument("config: label_switch_p must be in [0, 1]");
    if (learning_rate <= 0.0) throw std::invalid_argument("config: learning_rate must be > 0");
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (per_class < 1 || batch_size % per_class != 0)
      throw std::invalid_argument("config: batch_size must be a multiple of per_class");
    if (triplet_margin <= 0.0) throw std::invalid_argument("config: triplet_margin must be > 0");
    if (margin_alpha <= 0.0) throw std::invalid_argument("config: margin_alpha must be > 0");
    if (dw_clip <= 0.0) throw std::invalid_argument("config: dw_clip must be > 0");
    if (d_alpha < 1) throw std::invalid_argument("config: d_alpha must be >= 1");
    if (clustering_on && d_beta == 0)
      throw std::invalid_argument("config: clustering_on requires d_beta > 0");
    if (mutual_info_on && d_beta == 0)
      throw std::invalid_argument("config: mutual_info_on requires d_beta > 0");
    if (!synthetic && data_csv.empty())
      throw std::invalid_argument("config: synthetic=false needs data_csv");
  }

  void set(const std::string& key, const std::string& value);
  nlohmann::json to_json() const;
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    const long long x = std::stoll(v);
    if (x < 0) throw std::invalid_argument("negative");
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

}  // namespace detail

inline void TrainConfig::set(const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_size;
  if (key == "loss") loss = loss_kind_from_string(value);
  else if (key == "feature_dim") feature_dim = parse_size(key, value);
  else if (key == "d_alpha") d_alpha = parse_size(key, value);
  else if (key == "d_beta") d_beta = parse_size(key, value);
  else if (key == "hidden_dim") hidden_dim = parse_size(key, value);
  else if (key == "r_hidden") r_hidden = parse_size(key, value);
  else if (key == "triplet_margin") triplet_margin = parse_double(key, value);
  else if (key == "margin_alpha") margin_alpha = parse_double(key, value);
  else if (key == "dw_clip") dw_clip = parse_double(key, value);
  else if (key == "gamma") gamma = parse_double(key, value);
  else if (key == "clusters") clusters = parse_size(key, value);
  else if (key == "update_period") update_period = parse_size(key, value);
  else if (key == "label_switch_p") label_switch_p = parse_double(key, value);
  else if (key == "batch_size") batch_size = parse_size(key, value);
  else if (key == "per_class") per_class = parse_size(key, value);
  else if (key == "learning_rate") learning_rate = parse_double(key, value);
  else if (key == "epochs") epochs = parse_size(key, value);
  else if (key == "clustering_on") clustering_on = parse_bool(key, value);
  else if (key == "standardize_on") standardize_on = parse_bool(key, value);
  else if (key == "mutual_info_on") mutual_info_on = parse_bool(key, value);
  else if (key == "standardize_on_update") standardize_on_update = parse_bool(key, value);
  else if (key == "eval_period") eval_period = parse_size(key, value);
  else if (key == "synthetic") synthetic = parse_bool(key, value);
  else if (key == "num_classes") synth.num_classes = parse_size(key, value);
  else if (key == "samples_per_class") synth.per_class = parse_size(key, value);
  else if (key == "num_shared") synth.num_shared = parse_size(key, value);
  else if (key == "input_dim") synth.input_dim = parse_size(key, value);
  else if (key == "noise_std") synth.noise_std = parse_double(key, value);
  else if (key == "class_scale") synth.class_scale = parse_double(key, value);
  else if (key == "shared_scale") synth.shared_scale = parse_double(key, value);
  else if (key == "data_csv") data_csv = value;
  else if (key == "data_has_header") data_has_header = parse_bool(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "out_dir") out_dir = value;
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

// One key=value per line; '#' starts a comment.
inline TrainConfig load_config_file(const std::string& path,
                                    TrainConfig base = TrainConfig{}) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_config_file: cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected key=value, got '" + line + "'");
    try {
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

inline nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{
      {"loss", to_string(loss)},
      {"feature_dim", feature_dim},
      {"d_alpha", d_alpha},
      {"d_beta", d_beta},
      {"hidden_dim", hidden_dim},
      {"r_hidden", effective_r_hidden()},
      {"triplet_margin", triplet_margin},
      {"margin_alpha", margin_alpha},
      {"dw_clip", dw_clip},
      {"gamma", gamma},
      {"clusters", clusters},
      {"update_period", update_period},
      {"label_switch_p", label_switch_p},
      {"batch_size", batch_size},
      {"per_class", per_class},
      {"learning_rate", learning_rate},
      {"epochs", epochs},
      {"clustering_on", clustering_on},
      {"standardize_on", standardize_on},
      {"mutual_info_on", mutual_info_on},
      {"standardize_on_update", standardize_on_update},
      {"eval_period", eval_period},
      {"synthetic", synthetic},
      {"num_classes", synth.num_classes},
      {"samples_per_class", synth.per_class},
      {"num_shared", synth.num_shared},
      {"input_dim", synth.input_dim},
      {"noise_std", synth.noise_std},
      {"class_scale", synth.class_scale},
      {"shared_scale", synth.shared_scale},
      {"seed", seed}};
}

}  // namespace dml
