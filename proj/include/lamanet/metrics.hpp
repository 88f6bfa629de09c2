#pragma once
/*
 * Target-domain metrics, seed aggregation and latent export.
 *
 * All metrics are in cycles: scaled predictions are multiplied by rc and
 * test truth is capped at rc.
 */

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lamanet/config.hpp"
#include "lamanet/data.hpp"
#include "lamanet/model.hpp"

namespace lamanet {

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("rmse: length mismatch");
  if (pred.empty()) throw std::invalid_argument("rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

struct ScoreResult {
  long double value = 0;
  bool saturated = false;  // the sum overflowed, or does not fit in a double

  double as_double() const {
    return saturated ? std::numeric_limits<double>::infinity() : static_cast<double>(value);
  }
};

/// Sum over engines of exp(-E/10) - 1 for E < 0 and exp(E/13) - 1 for E >= 0,
/// E = predicted - true. ScoreMode::phm08 swaps the two divisors.
inline ScoreResult score(const std::vector<double>& pred, const std::vector<double>& truth,
                         ScoreMode mode = ScoreMode::printed) {
  if (pred.size() != truth.size()) throw std::invalid_argument("score: length mismatch");
  const long double early = mode == ScoreMode::printed ? 10.0L : 13.0L;
  const long double late = mode == ScoreMode::printed ? 13.0L : 10.0L;
  ScoreResult r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const long double e = static_cast<long double>(pred[i]) - static_cast<long double>(truth[i]);
    r.value += e < 0 ? std::expm1(-e / early) : std::expm1(e / late);
  }
  if (!std::isfinite(r.value) || r.value > static_cast<long double>(std::numeric_limits<double>::max())) {
    r.saturated = true;
  }
  return r;
}

/// Scaled predictions for every window of one dataset part.
inline std::vector<double> predict(const Model& model, const data::DomainDataset& ds, data::DomainDataset::Part part,
                                   std::size_t batch = 256) {
  NoGradGuard no_grad;
  const std::size_t n = ds.size(part), f = ds.features(), K = ds.window();
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t b = std::min(batch, n - start);
    std::vector<double> x(b * f * K);
    for (std::size_t i = 0; i < b; ++i) ds.copy_features(part, start + i, x.data() + i * f * K);
    const Tensor y = model.forward(Tensor::from({b, f, K}, std::move(x))).Y_hat;
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  return out;
}

struct EvalResult {
  double rmse = 0;
  ScoreResult score;
  std::size_t n_engines = 0;
  std::vector<double> pred_cycles, truth_cycles;
};

/// Metrics from scaled per-engine predictions (one per test engine).
inline EvalResult evaluate_predictions(const std::vector<double>& pred_scaled, const data::DomainDataset& ds,
                                       ScoreMode mode = ScoreMode::printed) {
  using P = data::DomainDataset::Part;
  const auto& truth = ds.test_rul_truth();
  if (truth.empty() || truth.size() != ds.size(P::test)) {
    throw data::IntegrityError(ds.id() + ": test RUL truth missing or incomplete");
  }
  if (pred_scaled.size() != truth.size()) throw std::invalid_argument("evaluate: one prediction per test engine");
  EvalResult r;
  r.n_engines = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    r.pred_cycles.push_back(pred_scaled[i] * ds.rc());
    r.truth_cycles.push_back(std::min(truth[i], ds.rc()));
  }
  r.rmse = rmse(r.pred_cycles, r.truth_cycles);
  r.score = score(r.pred_cycles, r.truth_cycles, mode);
  return r;
}

inline EvalResult evaluate_target(const Model& model, const data::DomainDataset& target,
                                  ScoreMode mode = ScoreMode::printed) {
  return evaluate_predictions(predict(model, target, data::DomainDataset::Part::test), target, mode);
}

/// RMSE in cycles on a labeled part (train or val) of a source dataset.
inline double labeled_rmse(const Model& model, const data::DomainDataset& ds, data::DomainDataset::Part part) {
  const auto pred = predict(model, ds, part);
  std::vector<double> p(pred.size()), t(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p[i] = pred[i] * ds.rc();
    t[i] = ds.label(part, i) * ds.rc();
  }
  return rmse(p, t);
}

// ---------------------------------------------------------------------------
// Reports

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double rmse = 0;
  double score = 0;
  bool score_saturated = false;
  double source_val_rmse = 0;
  long iterations = 0;
};

struct MeanSd {
  double mean = 0;
  double sd = 0;  // sample standard deviation; 0 for a single value
  std::size_t n = 0;
};

inline MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd r;
  r.n = v.size();
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0;
    for (double x : v) s += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return r;
}

struct MetricsReport {
  std::string source, target;
  std::string variant;
  std::string config_hash;
  std::size_t n_test_engines = 0;
  std::vector<SeedResult> seeds;

  std::string pair() const { return source + "->" + target; }
  std::vector<double> collect(double SeedResult::*field) const {
    std::vector<double> out;
    for (const auto& s : seeds)
      if (s.ok) out.push_back(s.*field);
    return out;
  }
  MeanSd rmse() const { return mean_sd(collect(&SeedResult::rmse)); }
  MeanSd score() const { return mean_sd(collect(&SeedResult::score)); }
  MeanSd source_val_rmse() const { return mean_sd(collect(&SeedResult::source_val_rmse)); }
  bool all_ok() const {
    return !seeds.empty() && std::all_of(seeds.begin(), seeds.end(), [](const SeedResult& s) { return s.ok; });
  }
};

inline nlohmann::json to_json(const SeedResult& s) {
  nlohmann::json j{{"seed", s.seed}, {"ok", s.ok}, {"iterations", s.iterations}};
  if (!s.ok) {
    j["error"] = s.error;
    return j;
  }
  j["rmse"] = s.rmse;
  // JSON has no infinity; a saturated score is written as null plus the flag.
  j["score"] = s.score_saturated ? nlohmann::json(nullptr) : nlohmann::json(s.score);
  j["score_saturated"] = s.score_saturated;
  j["source_val_rmse"] = s.source_val_rmse;
  return j;
}

inline nlohmann::json to_json(const MeanSd& m) { return {{"mean", m.mean}, {"sd", m.sd}, {"n", m.n}}; }

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : r.seeds) seeds.push_back(to_json(s));
  return {{"source", r.source},           {"target", r.target},
          {"variant", r.variant},         {"config_hash", r.config_hash},
          {"n_test_engines", r.n_test_engines}, {"seeds", seeds},
          {"rmse", to_json(r.rmse())},    {"score", to_json(r.score())},
          {"source_val_rmse", to_json(r.source_val_rmse())}};
}

/// Per-seed rows followed by mean and sd rows.
inline void write_metrics_csv(std::ostream& os, const MetricsReport& r) {
  os << std::setprecision(17) << "row,seed,rmse,score,score_saturated,source_val_rmse\n";
  for (const auto& s : r.seeds) {
    if (!s.ok) {
      os << "seed," << s.seed << ",,,,\n";
      continue;
    }
    os << "seed," << s.seed << ',' << s.rmse << ',' << s.score << ',' << (s.score_saturated ? 1 : 0) << ','
       << s.source_val_rmse << '\n';
  }
  const auto a = r.rmse(), b = r.score(), c = r.source_val_rmse();
  os << "mean,," << a.mean << ',' << b.mean << ",," << c.mean << '\n';
  os << "sd,," << a.sd << ',' << b.sd << ",," << c.sd << '\n';
}

/// Rows = source->target pairs, columns = variants, in first-seen order.
struct AggregateTables {
  std::vector<std::string> pairs, variants;
  std::map<std::pair<std::string, std::string>, const MetricsReport*> cells;

  const MetricsReport* at(const std::string& pair, const std::string& variant) const {
    auto it = cells.find({pair, variant});
    return it == cells.end() ? nullptr : it->second;
  }
};

inline AggregateTables aggregate(const std::vector<MetricsReport>& reports) {
  AggregateTables t;
  for (const auto& r : reports) {
    if (std::find(t.pairs.begin(), t.pairs.end(), r.pair()) == t.pairs.end()) t.pairs.push_back(r.pair());
    if (std::find(t.variants.begin(), t.variants.end(), r.variant) == t.variants.end()) t.variants.push_back(r.variant);
    t.cells[{r.pair(), r.variant}] = &r;
  }
  return t;
}

enum class TableKind { rmse, score, score_sd };

inline const char* to_string(TableKind k) {
  return k == TableKind::rmse ? "RMSE" : k == TableKind::score ? "Score" : "Score-SD";
}

inline std::string format_cell(const MetricsReport* r, TableKind kind) {
  if (!r || r->rmse().n == 0) return "-";
  std::ostringstream os;
  if (kind == TableKind::rmse) {
    const auto m = r->rmse();
    os << std::fixed << std::setprecision(2) << m.mean << " ± " << m.sd;
  } else {
    const auto m = r->score();
    os << std::scientific << std::setprecision(2);
    if (kind == TableKind::score) {
      os << m.mean << " ± " << m.sd;
    } else {
      os << m.sd;
    }
  }
  return os.str();
}

inline void write_table_text(std::ostream& os, const AggregateTables& t, TableKind kind) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{std::string(to_string(kind))};
  header.insert(header.end(), t.variants.begin(), t.variants.end());
  rows.push_back(header);
  for (const auto& p : t.pairs) {
    std::vector<std::string> row{p};
    for (const auto& v : t.variants) row.push_back(format_cell(t.at(p, v), kind));
    rows.push_back(row);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      os << (c ? " | " : "") << row[c] << std::string(width[c] - row[c].size(), ' ');
    }
    os << '\n';
  }
}

/// Long-form CSV: pair,variant,metric,mean,sd,n
inline void write_table_csv(std::ostream& os, const AggregateTables& t) {
  os << std::setprecision(17) << "pair,variant,metric,mean,sd,n\n";
  for (const auto& p : t.pairs)
    for (const auto& v : t.variants) {
      const MetricsReport* r = t.at(p, v);
      if (!r) continue;
      const auto a = r->rmse(), b = r->score();
      os << p << ',' << v << ",rmse," << a.mean << ',' << a.sd << ',' << a.n << '\n';
      os << p << ',' << v << ",score," << b.mean << ',' << b.sd << ',' << b.n << '\n';
    }
}

/// One row per (pair, variant, seed), for box plots.
inline void write_seed_rows_csv(std::ostream& os, const std::vector<MetricsReport>& reports) {
  os << std::setprecision(17) << "pair,variant,seed,rmse,score,score_saturated\n";
  for (const auto& r : reports)
    for (const auto& s : r.seeds)
      if (s.ok)
        os << r.pair() << ',' << r.variant << ',' << s.seed << ',' << s.rmse << ',' << s.score << ','
           << (s.score_saturated ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------------------
// Latent export

enum class LatentLayer { C, O };

/// CSV columns: domain, rul_scaled, z0 .. z{d-1}; one row per training window.
/// Returns the number of rows written.
inline std::size_t export_latents(std::ostream& os, const Model& model,
                                  const std::vector<std::pair<const data::DomainDataset*, data::DomainTag>>& sets,
                                  LatentLayer layer, std::size_t batch = 256) {
  NoGradGuard no_grad;
  using P = data::DomainDataset::Part;
  const std::size_t width = layer == LatentLayer::C ? model.config().bottleneck : model.config().projection_dim;
  os << std::setprecision(17) << "domain,rul_scaled";
  for (std::size_t j = 0; j < width; ++j) os << ",z" << j;
  os << '\n';
  std::size_t rows = 0;
  for (const auto& [ds, tag] : sets) {
    const std::size_t n = ds->size(P::train), f = ds->features(), K = ds->window();
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t b = std::min(batch, n - start);
      std::vector<double> x(b * f * K);
      for (std::size_t i = 0; i < b; ++i) ds->copy_features(P::train, start + i, x.data() + i * f * K);
      const auto out = model.forward(Tensor::from({b, f, K}, std::move(x)));
      const Tensor& z = layer == LatentLayer::C ? out.C : out.O;
      for (std::size_t i = 0; i < b; ++i) {
        os << data::to_string(tag) << ',' << ds->label(P::train, start + i);
        for (std::size_t j = 0; j < width; ++j) os << ',' << z.at(i * width + j);
        os << '\n';
        ++rows;
      }
    }
  }
  return rows;
}

}  // namespace lamanet
