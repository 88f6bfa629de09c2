#pragma once
/*
 * Synthetic run-to-failure domains for smoke tests and --toy runs.
 *
 * Every engine runs healthy, then degrades along w(t) = ((t - t0)/(T - t0))^1.5
 * until failure at T. Sensor j reads base_j + gain_j * w(t) + noise. The
 * per-sensor base and gain come from a task seed shared by all domains, so the
 * RUL task is identical across domains. A DomainShift then mixes the sensors
 * through a dense affine map, which per-feature min-max scaling cannot undo.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lamanet/data.hpp"

namespace lamanet::data {

struct SyntheticSpec {
  std::size_t features = 8;
  std::size_t train_engines = 40;
  std::size_t test_engines = 20;
  std::size_t min_life = 80;
  std::size_t max_life = 180;
  std::size_t min_degradation = 60;
  std::size_t max_degradation = 130;
  double noise = 0.03;
  std::uint64_t task_seed = 2024;
};

/// x' = mix * x + offset, plus extra sensor noise.
struct DomainShift {
  std::vector<double> mix;     // f x f, row-major
  std::vector<double> offset;  // f
  double extra_noise = 0.0;
};

inline DomainShift make_affine_shift(std::size_t features, double strength, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  DomainShift s;
  s.mix.assign(features * features, 0.0);
  for (std::size_t i = 0; i < features; ++i)
    for (std::size_t j = 0; j < features; ++j)
      s.mix[i * features + j] = (i == j ? 1.0 : 0.0) + strength * n01(rng) / std::sqrt(static_cast<double>(features));
  s.offset.resize(features);
  for (auto& o : s.offset) o = strength * n01(rng);
  s.extra_noise = 0.5 * strength * 0.03;
  return s;
}

namespace detail {

struct SensorModel {
  std::vector<double> base, gain;
};

inline SensorModel sensor_model(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.task_seed);
  std::uniform_real_distribution<double> base(-1.0, 1.0), mag(0.5, 1.5), coin(0.0, 1.0);
  SensorModel m;
  for (std::size_t j = 0; j < spec.features; ++j) {
    m.base.push_back(base(rng));
    m.gain.push_back(mag(rng) * (coin(rng) < 0.5 ? -1.0 : 1.0));
  }
  return m;
}

inline Trajectory simulate_engine(int unit, std::size_t life, std::size_t observed, const SyntheticSpec& spec,
                                  const SensorModel& model, const DomainShift* shift, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> degr(spec.min_degradation, spec.max_degradation);
  std::normal_distribution<double> n01(0.0, 1.0);
  const std::size_t f = spec.features;
  const double onset = static_cast<double>(life) - static_cast<double>(std::min(degr(rng), life - 1));
  std::vector<double> engine_bias(f);
  for (auto& b : engine_bias) b = 0.05 * n01(rng);
  const double noise = spec.noise + (shift ? shift->extra_noise : 0.0);

  Trajectory t;
  t.unit_id = unit;
  std::vector<double> x(f);
  for (std::size_t c = 1; c <= observed; ++c) {
    const double progress = std::max(0.0, (static_cast<double>(c) - onset) / (static_cast<double>(life) - onset));
    const double wear = std::pow(progress, 1.5);
    for (std::size_t j = 0; j < f; ++j) x[j] = model.base[j] + engine_bias[j] + model.gain[j] * wear;
    std::vector<double> values(f);
    for (std::size_t i = 0; i < f; ++i) {
      double v = x[i];
      if (shift) {
        v = shift->offset[i];
        for (std::size_t j = 0; j < f; ++j) v += shift->mix[i * f + j] * x[j];
      }
      values[i] = v + noise * n01(rng);
    }
    t.cycles.push_back({static_cast<int>(c), std::move(values)});
  }
  return t;
}

}  // namespace detail

/// One synthetic domain. Test engines are cut at a random cycle and the RUL
/// vector holds the true remaining cycles after the cut.
inline RawSubset make_synthetic_domain(const SyntheticSpec& spec, std::uint64_t seed,
                                       const DomainShift* shift = nullptr) {
  const auto model = detail::sensor_model(spec);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> life(spec.min_life, spec.max_life);
  RawSubset raw;
  int unit = 1;
  for (std::size_t e = 0; e < spec.train_engines; ++e) {
    const std::size_t T = life(rng);
    raw.train.push_back(detail::simulate_engine(unit++, T, T, spec, model, shift, rng));
  }
  unit = 1;
  for (std::size_t e = 0; e < spec.test_engines; ++e) {
    const std::size_t T = life(rng);
    std::uniform_int_distribution<std::size_t> cut(std::min<std::size_t>(10, T - 1), T - 1);
    const std::size_t observed = cut(rng);
    raw.test.push_back(detail::simulate_engine(unit++, T, observed, spec, model, shift, rng));
    raw.test_rul.push_back(static_cast<double>(T - observed));
  }
  return raw;
}

}  // namespace lamanet::data
