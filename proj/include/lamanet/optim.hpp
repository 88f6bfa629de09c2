#pragma once
/*
 * Adam and the step learning-rate schedule.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "lamanet/model.hpp"

namespace lamanet {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Learning rate before optimization step `iteration` (0-based).
///
/// Constant until `decay_start`; after that it is multiplied by gamma each time
/// an epoch boundary (a multiple of steps_per_epoch) is crossed.
inline double lr_schedule(long iteration, double base_lr, double gamma, long decay_start, long steps_per_epoch) {
  if (iteration < 0) throw std::invalid_argument("lr_schedule: negative iteration");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("lr_schedule: gamma must be in (0, 1]");
  if (steps_per_epoch <= 0) throw std::invalid_argument("lr_schedule: steps_per_epoch must be positive");
  if (iteration < decay_start) return base_lr;
  // Epoch boundaries strictly after the decay start iteration.
  const long first_epoch = (std::max(decay_start, 1L) - 1) / steps_per_epoch;
  const long k = std::max(0L, iteration / steps_per_epoch - first_epoch);
  return base_lr * std::pow(gamma, static_cast<double>(k));
}

class Adam {
 public:
  Adam(ParamStore& params, AdamConfig cfg = {}) : params_(&params), cfg_(cfg) {
    for (const auto& [_, t] : params.entries()) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  /// Applies one update from the gradients currently stored on the parameters.
  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& entries = params_->entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      Tensor& t = entries[p].second;
      const auto g = t.grad();
      auto w = t.mutable_values();
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  ParamStore* params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace lamanet
