#pragma once

// Adam with per-slot state. A slot's timestep only advances when that slot
// is stepped, so parameters outside the current loss graph keep their
// moments frozen.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dml/matrix.hpp"

namespace dml {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.lr <= 0.0) throw std::invalid_argument("Adam: lr must be > 0");
  }

  void resize(std::size_t slots) { state_.resize(slots); }

  void step(std::size_t slot, Matrix& param, const Matrix& grad) {
    if (slot >= state_.size()) throw std::invalid_argument("Adam: slot out of range");
    check_same_shape(param, grad, "Adam::step");
    Slot& s = state_[slot];
    if (s.m.empty()) {
      s.m = Matrix(param.rows(), param.cols());
      s.v = Matrix(param.rows(), param.cols());
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = grad.values()[i];
      double& m = s.m.values()[i];
      double& v = s.v.values()[i];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
      param.values()[i] -= cfg_.lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
    }
  }

  const AdamConfig& config() const { return cfg_; }

 private:
  struct Slot {
    Matrix m, v;
    long t = 0;
  };
  AdamConfig cfg_;
  std::vector<Slot> state_;
};

// splitmix64 step; used to derive independent deterministic seed streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace dml
