#pragma once
/*
 * Experiment orchestration: dataset resolution, per-seed runs, artifacts.
 *
 * Artifacts of one run go to out_dir/<source>_to_<target>/<label>/<seed>/:
 *   report.json    resolved config, its hash and the seed's metrics
 *   metrics.csv    the seed's metrics
 *   checkpoint.bin final parameters and optimizer state
 *   train_log.csv  one row per step
 *   latents_C.csv, latents_O.csv  (optional)
 * and out_dir/<pair>/<label>/{report.json, metrics.csv} aggregate the seeds.
 * CSV files start with a "# config <hash>" line.
 */

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "lamanet/config.hpp"
#include "lamanet/data.hpp"
#include "lamanet/metrics.hpp"
#include "lamanet/synthetic.hpp"
#include "lamanet/train.hpp"

namespace lamanet {

namespace fs = std::filesystem;

/// Directory holding the C-MAPSS text files: the explicit path, else
/// $LAMANET_DATA_DIR, else "data".
inline fs::path resolve_data_dir(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("LAMANET_DATA_DIR"); env && *env) return env;
  return "data";
}

/// Synthetic domains: SYN_A is the reference; SYN_B and SYN_C apply a dense
/// affine sensor distortion (strength 1.0 and 0.5).
inline bool is_synthetic(const std::string& id) { return id.rfind("SYN_", 0) == 0; }

inline data::RawSubset synthetic_subset(const std::string& id) {
  data::SyntheticSpec spec;
  spec.test_engines = 100;
  if (id == "SYN_A") return data::make_synthetic_domain(spec, 101);
  if (id == "SYN_B") {
    const auto shift = data::make_affine_shift(spec.features, 1.0, 7);
    return data::make_synthetic_domain(spec, 202, &shift);
  }
  if (id == "SYN_C") {
    const auto shift = data::make_affine_shift(spec.features, 0.5, 8);
    return data::make_synthetic_domain(spec, 303, &shift);
  }
  throw std::invalid_argument("unknown synthetic dataset '" + id + "' (known: SYN_A, SYN_B, SYN_C)");
}

inline fs::path cache_path(const fs::path& data_dir, const std::string& id, std::size_t window) {
  return data_dir / ("cache_" + id + "_K" + std::to_string(window) + ".bin");
}

/// Builds a domain dataset. A matching ingest cache is used when present.
inline data::DomainDataset load_domain(const std::string& id, const data::DatasetOptions& opts,
                                       const fs::path& data_dir) {
  if (is_synthetic(id)) return data::build_domain_dataset(id, synthetic_subset(id), opts);
  const fs::path cache = cache_path(data_dir, id, opts.window);
  if (fs::exists(cache)) {
    try {
      auto want = opts;
      if (want.columns.empty()) want.columns = data::resolve_selection({}, data::kValueColumns);
      auto ds = data::load_cache(cache);
      if (ds.id() == id && data::options_hash(ds.options(), id) == data::options_hash(want, id)) return ds;
    } catch (const std::exception&) {
      // stale or foreign cache: fall back to the text files
    }
  }
  return data::build_domain_dataset(id, data::load_cmapss_subset(data_dir, id), opts);
}

struct Job {
  RunConfig cfg;
  std::string label;  // output directory below the pair; defaults to the variant name
  bool export_latents = true;
};

inline std::string pair_dir(const RunConfig& c) { return c.source + "_to_" + c.target; }

inline std::string job_label(const Job& j) { return j.label.empty() ? to_string(j.cfg.variant) : j.label; }

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

using ProgressFn = std::function<void(const std::string& run, const StepRecord&)>;

/// Trains one seed to its step budget and writes the run's artifacts.
inline SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, const data::DomainDataset& source,
                           const data::DomainDataset& target, const fs::path& dir, bool with_latents,
                           const ProgressFn& progress = {}) {
  SeedResult res;
  res.seed = seed;
  const std::string hash = hex64(config_hash(cfg));
  try {
    fs::create_directories(dir);
    Trainer trainer(cfg, source, target, seed);
    {
      std::ofstream log(dir / "train_log.csv");
      if (!log) throw std::runtime_error("cannot write " + (dir / "train_log.csv").string());
      log << "# config " << hash << '\n' << log_header() << '\n';
      while (!trainer.done()) {
        const StepRecord r = trainer.step();
        log << log_row(r) << '\n';
        if (progress) progress(dir.string(), r);
      }
    }
    trainer.save_checkpoint(dir / "checkpoint.bin");
    const EvalResult eval = evaluate_target(trainer.model(), target, cfg.score_mode);
    res.rmse = eval.rmse;
    res.score = eval.score.as_double();
    res.score_saturated = eval.score.saturated;
    res.source_val_rmse = source.size(data::DomainDataset::Part::val)
                              ? labeled_rmse(trainer.model(), source, data::DomainDataset::Part::val)
                              : 0.0;
    res.iterations = trainer.iteration();
    res.ok = true;
    if (with_latents) {
      for (auto layer : {LatentLayer::C, LatentLayer::O}) {
        std::ofstream os(dir / (layer == LatentLayer::C ? "latents_C.csv" : "latents_O.csv"));
        os << "# config " << hash << '\n';
        export_latents(os, trainer.model(), {{&source, data::DomainTag::source}, {&target, data::DomainTag::target}},
                       layer);
      }
    }
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  try {
    nlohmann::json j{{"config", to_json(cfg)}, {"config_hash", hash}, {"result", to_json(res)}};
    write_text(dir / "report.json", j.dump(2) + "\n");
    MetricsReport single{cfg.source, cfg.target, to_string(cfg.variant), hash, target.size(data::DomainDataset::Part::test), {res}};
    std::ostringstream csv;
    csv << "# config " << hash << '\n';
    write_metrics_csv(csv, single);
    write_text(dir / "metrics.csv", csv.str());
  } catch (const std::exception& e) {
    if (res.ok) {
      res.ok = false;
      res.error = e.what();
    }
  }
  return res;
}

/// Runs every (job, seed) pair on up to `jobs` threads and writes per-job
/// aggregate reports. Reports come back in job order.
inline std::vector<MetricsReport> run_jobs(const std::vector<Job>& plan, const fs::path& data_dir,
                                           const fs::path& out_dir, std::size_t jobs,
                                           const ProgressFn& progress = {}) {
  // Load each distinct dataset once; they are read-only afterwards.
  std::map<std::tuple<std::string, std::string>, std::unique_ptr<data::DomainDataset>> datasets;
  auto dataset = [&](const std::string& id, const data::DatasetOptions& o) -> const data::DomainDataset& {
    const auto key = std::make_tuple(id, data::describe(o, id));
    auto& slot = datasets[key];
    if (!slot) slot = std::make_unique<data::DomainDataset>(load_domain(id, o, data_dir));
    return *slot;
  };

  struct Task {
    std::size_t job, seed_index;
    const data::DomainDataset *source, *target;
  };
  std::vector<Task> tasks;
  std::vector<MetricsReport> reports(plan.size());
  for (std::size_t j = 0; j < plan.size(); ++j) {
    const auto& c = plan[j].cfg;
    validate(c);
    const auto& s = dataset(c.source, c.data);
    const auto& t = dataset(c.target, c.data);
    reports[j] = {c.source, c.target, job_label(plan[j]), hex64(config_hash(c)), t.size(data::DomainDataset::Part::test),
                  std::vector<SeedResult>(c.seeds.size())};
    for (std::size_t k = 0; k < c.seeds.size(); ++k) tasks.push_back({j, k, &s, &t});
  }

  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  ProgressFn locked;
  if (progress) {
    locked = [&](const std::string& run, const StepRecord& r) {
      std::lock_guard lock(progress_mutex);
      progress(run, r);
    };
  }
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const Task& task = tasks[i];
      const Job& job = plan[task.job];
      const std::uint64_t seed = job.cfg.seeds[task.seed_index];
      const fs::path dir = out_dir / pair_dir(job.cfg) / job_label(job) / std::to_string(seed);
      reports[task.job].seeds[task.seed_index] =
          run_seed(job.cfg, seed, *task.source, *task.target, dir, job.export_latents, locked);
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (std::size_t j = 0; j < plan.size(); ++j) {
    const fs::path dir = out_dir / pair_dir(plan[j].cfg) / job_label(plan[j]);
    fs::create_directories(dir);
    nlohmann::json rep = to_json(reports[j]);
    rep["config"] = to_json(plan[j].cfg);
    write_text(dir / "report.json", rep.dump(2) + "\n");
    std::ostringstream csv;
    csv << "# config " << reports[j].config_hash << '\n';
    write_metrics_csv(csv, reports[j]);
    write_text(dir / "metrics.csv", csv.str());
  }
  return reports;
}

/// Aggregate tables for a set of reports: summary.csv, summary_seeds.csv and
/// one text table per metric.
inline void write_summary(const fs::path& out_dir, const std::vector<MetricsReport>& reports,
                          const std::string& stem = "summary") {
  fs::create_directories(out_dir);
  const auto tables = aggregate(reports);
  std::ostringstream csv, seeds, text;
  write_table_csv(csv, tables);
  write_seed_rows_csv(seeds, reports);
  for (auto kind : {TableKind::rmse, TableKind::score, TableKind::score_sd}) {
    write_table_text(text, tables, kind);
    text << '\n';
  }
  write_text(out_dir / (stem + ".csv"), csv.str());
  write_text(out_dir / (stem + "_seeds.csv"), seeds.str());
  write_text(out_dir / (stem + ".txt"), text.str());
}

}  // namespace lamanet
