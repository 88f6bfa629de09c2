#include <algorithm>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lamanet/lamanet.hpp"

using namespace lamanet;
using P = data::DomainDataset::Part;

namespace {

struct Common {
  std::string config_path, data_dir, out_dir, source, target, variant, seeds;
  long epochs = -1;
  long max_steps = -1;
  std::size_t jobs = 0;
  bool toy = false;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c, bool pair_flags = true) {
  app->add_option("--config", c.config_path, "JSON config file (unknown keys are rejected)");
  app->add_option("--data-dir", c.data_dir, "C-MAPSS directory (default $LAMANET_DATA_DIR, else ./data)");
  app->add_option("--out", c.out_dir, "Output directory (default runs)");
  if (pair_flags) {
    app->add_option("--source", c.source, "Source dataset id (FD001..FD004, SYN_A..SYN_C)");
    app->add_option("--target", c.target, "Target dataset id");
  }
  app->add_option("--seeds", c.seeds, "Comma-separated seeds (default 1,123074,2457)");
  app->add_option("--epochs", c.epochs, "Training epochs");
  app->add_option("--max-steps", c.max_steps, "Stop after this many iterations (0 = no cap)");
  app->add_option("--jobs", c.jobs, "Parallel runs");
  app->add_flag("--toy", c.toy, "Shrink dimensions for quick smoke runs");
  app->add_flag("-q,--quiet", c.quiet, "No per-epoch progress");
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ConfigError("bad seed '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("no seeds given");
  return out;
}

/// Config file, then --toy, then individual flags.
CliConfig resolve(const Common& c) {
  CliConfig cfg = c.config_path.empty() ? CliConfig{} : load_cli_config(c.config_path);
  if (c.toy) apply_toy(cfg.run);
  if (!c.data_dir.empty()) cfg.data_dir = c.data_dir;
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  if (!c.source.empty()) cfg.run.source = c.source;
  if (!c.target.empty()) cfg.run.target = c.target;
  if (!c.variant.empty()) cfg.run.variant = parse_variant(c.variant);
  if (!c.seeds.empty()) cfg.run.seeds = parse_seeds(c.seeds);
  if (c.epochs >= 0) cfg.run.train.epochs = static_cast<std::size_t>(c.epochs);
  if (c.max_steps >= 0) cfg.run.train.max_steps = c.max_steps;
  if (c.jobs > 0) cfg.jobs = c.jobs;
  validate(cfg.run);
  return cfg;
}

ProgressFn progress(bool quiet) {
  if (quiet) return {};
  return [](const std::string& run, const StepRecord& r) {
    if (!r.val_rmse) return;
    std::cerr << run << " epoch " << r.epoch << " it " << r.iteration << " loss " << std::setprecision(5) << r.total
              << " source-val RMSE " << *r.val_rmse << '\n';
  };
}

/// Prints one line per seed plus the aggregate; returns the number of failed runs.
std::size_t report(const std::vector<MetricsReport>& reports) {
  std::size_t failed = 0;
  for (const auto& r : reports) {
    for (const auto& s : r.seeds) {
      std::cout << r.pair() << ' ' << r.variant << " seed " << s.seed << ": ";
      if (!s.ok) {
        ++failed;
        std::cout << "FAILED (" << s.error << ")\n";
        continue;
      }
      std::cout << std::setprecision(5) << "RMSE " << s.rmse << " score "
                << (s.score_saturated ? std::string("saturated") : (std::ostringstream{} << s.score).str())
                << " source-val RMSE " << s.source_val_rmse << '\n';
    }
    const auto rm = r.rmse(), sc = r.score();
    std::cout << r.pair() << ' ' << r.variant << " mean RMSE " << rm.mean << " ± " << rm.sd << ", score " << sc.mean
              << " ± " << sc.sd << " (" << rm.n << " seeds)\n";
  }
  return failed;
}

int cmd_ingest(const std::string& subset, std::size_t window, const std::string& dir, const std::string& out) {
  const fs::path data_dir = resolve_data_dir(dir);
  data::DatasetOptions opts;
  opts.window = window;
  const auto raw = data::load_cmapss_subset(data_dir, subset);
  const auto ds = data::build_domain_dataset(subset, raw, opts);
  const fs::path path = out.empty() ? cache_path(data_dir, subset, window) : fs::path(out);
  data::save_cache(path, ds);
  std::cout << raw.train.size() << " train trajectories\n"
            << raw.test.size() << " test trajectories\n"
            << ds.size(P::train) << " train windows, " << ds.size(P::val) << " validation windows, " << ds.size(P::test)
            << " test windows (K=" << window << ")\n"
            << "dataset hash " << hex64(data::options_hash(ds.options(), subset)) << "\nwrote " << path.string()
            << '\n';
  return 0;
}

std::vector<std::string> cmapss_ids() { return {"FD001", "FD002", "FD003", "FD004"}; }

int cmd_train(const Common& c, bool table) {
  const CliConfig cfg = resolve(c);
  std::vector<Job> plan;
  if (table) {
    for (const auto& s : cmapss_ids())
      for (const auto& t : cmapss_ids()) {
        if (s == t) continue;
        for (Variant v : table_variants()) {
          Job j{cfg.run, "", true};
          j.cfg.source = s;
          j.cfg.target = t;
          j.cfg.variant = v;
          plan.push_back(std::move(j));
        }
      }
  } else {
    plan.push_back({cfg.run, "", true});
  }
  const fs::path out = cfg.out_dir;
  const auto reports = run_jobs(plan, resolve_data_dir(cfg.data_dir), out, cfg.jobs, progress(c.quiet));
  write_summary(out, reports);
  const std::size_t failed = report(reports);
  std::cout << "summary: " << (out / "summary.txt").string() << '\n';
  return failed == 0 ? 0 : 1;
}

int cmd_ablate(const Common& c) {
  const CliConfig cfg = resolve(c);
  std::vector<Job> plan;
  for (Variant v : ablation_variants()) {
    Job j{cfg.run, "", true};
    j.cfg.variant = v;
    plan.push_back(std::move(j));
  }
  const fs::path out = cfg.out_dir;
  const auto reports = run_jobs(plan, resolve_data_dir(cfg.data_dir), out, cfg.jobs, progress(c.quiet));
  // Comparison table plus one row per (variant, seed) for box plots.
  write_summary(out / pair_dir(cfg.run), reports, "ablation");
  const std::size_t failed = report(reports);
  std::cout << "ablation table: " << (out / pair_dir(cfg.run) / "ablation.txt").string() << '\n';
  return failed == 0 ? 0 : 1;
}

int cmd_sweep(const Common& c, const std::string& grid_text, bool confirm) {
  const CliConfig cfg = resolve(c);
  const Grid grid = grid_text.empty() ? default_grid() : parse_grid(grid_text);
  const auto points = grid_points(grid);
  const std::size_t runs = points.size() * cfg.run.seeds.size();
  std::cout << "grid: " << points.size() << " points x " << cfg.run.seeds.size() << " seeds = " << runs << " runs\n";
  if (grid_text.empty() && !confirm) {
    std::cout << "pass --confirm to launch the full grid\n";
    return 2;
  }
  std::vector<Job> plan;
  for (const auto& p : points) plan.push_back({apply_grid_point(cfg.run, p), "sweep/" + point_label(p), false});
  const fs::path out = cfg.out_dir;
  const auto reports = run_jobs(plan, resolve_data_dir(cfg.data_dir), out, cfg.jobs, progress(c.quiet));
  const std::size_t failed = report(reports);

  // Model selection never sees target labels: rank by source validation RMSE.
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0u);
  auto key = [&](std::size_t i) {
    const auto m = reports[i].source_val_rmse();
    return m.n ? m.mean : std::numeric_limits<double>::infinity();
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  std::ostringstream csv;
  csv << std::setprecision(17) << "rank,point,config_hash,source_val_rmse,n_ok\n";
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t i = order[r];
    csv << r + 1 << ',' << point_label(points[i]) << ',' << reports[i].config_hash << ',' << key(i) << ','
        << reports[i].source_val_rmse().n << '\n';
  }
  const fs::path dir = out / pair_dir(cfg.run) / "sweep";
  fs::create_directories(dir);
  write_text(dir / "ranking.csv", csv.str());
  std::cout << "best by source-val RMSE: " << point_label(points[order.front()]) << " (" << key(order.front())
            << ")\nranking: " << (dir / "ranking.csv").string() << '\n';
  return failed == 0 ? 0 : 1;
}

/// Re-evaluates a finished run directory from its checkpoint.
int cmd_evaluate(const std::string& run_dir, const std::string& dir) {
  const fs::path rd = run_dir;
  std::ifstream is(rd / "report.json");
  if (!is) throw std::runtime_error("cannot read " + (rd / "report.json").string());
  const json rep = json::parse(is);
  const RunConfig cfg = run_config_from_json(rep.at("config"));
  const std::uint64_t seed = rep.at("result").at("seed").get<std::uint64_t>();
  const fs::path data_dir = resolve_data_dir(dir);
  const auto source = load_domain(cfg.source, cfg.data, data_dir);
  const auto target = load_domain(cfg.target, cfg.data, data_dir);
  Trainer tr(cfg, source, target, seed);
  tr.load_checkpoint(rd / "checkpoint.bin");
  const auto e = evaluate_target(tr.model(), target, cfg.score_mode);
  std::cout << std::setprecision(6) << cfg.source << "->" << cfg.target << ' ' << to_string(cfg.variant) << " seed "
            << seed << " iteration " << tr.iteration() << ": RMSE " << e.rmse << " score "
            << (e.score.saturated ? std::string("saturated") : (std::ostringstream{} << e.score.as_double()).str())
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LAMA-Net: domain-adapted remaining-useful-life estimation"};
  app.require_subcommand(1);

  std::string subset, ingest_dir, ingest_out;
  std::size_t window = 40;
  auto* ingest = app.add_subcommand("ingest", "Parse a C-MAPSS subset and write a dataset cache");
  ingest->add_option("--subset", subset, "FD001..FD004")->required();
  ingest->add_option("--window", window, "Window length K");
  ingest->add_option("--data-dir", ingest_dir, "C-MAPSS directory");
  ingest->add_option("--out", ingest_out, "Cache path (default <data-dir>/cache_<subset>_K<window>.bin)");

  Common train_opts;
  bool table = false;
  auto* train = app.add_subcommand("train", "Train one source->target pair for each seed");
  add_common(train, train_opts);
  train->add_option("--variant", train_opts.variant, "lamanet, no_da, mmd, coral, dann, ablate_mmd, ablate_mmd_ae");
  train->add_flag("--table", table, "All 12 FD pairs x 5 comparison variants");

  Common ablate_opts;
  auto* ablate = app.add_subcommand("ablate", "MMD vs MMD+AE vs full model on one pair");
  add_common(ablate, ablate_opts);

  Common sweep_opts;
  std::string grid;
  bool confirm = false;
  auto* sweep = app.add_subcommand("sweep", "Hyperparameter grid; ranked by source validation RMSE");
  add_common(sweep, sweep_opts);
  sweep->add_option("--grid", grid, "e.g. lambda_m=0.1,0.5;gamma_noise=0.01 (default: full appendix grid)");
  sweep->add_flag("--confirm", confirm, "Launch the full default grid");

  Common config_opts;
  auto* show = app.add_subcommand("config", "Print the fully resolved config as JSON");
  add_common(show, config_opts);
  show->add_option("--variant", config_opts.variant, "Variant");

  std::string run_dir, eval_dir;
  auto* evaluate = app.add_subcommand("evaluate", "Re-evaluate a run directory from its checkpoint");
  evaluate->add_option("run_dir", run_dir, "out/<pair>/<variant>/<seed>")->required();
  evaluate->add_option("--data-dir", eval_dir, "C-MAPSS directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*ingest) return cmd_ingest(subset, window, ingest_dir, ingest_out);
    if (*train) return cmd_train(train_opts, table);
    if (*ablate) return cmd_ablate(ablate_opts);
    if (*sweep) return cmd_sweep(sweep_opts, grid, confirm);
    if (*evaluate) return cmd_evaluate(run_dir, eval_dir);
    if (*show) {
      const CliConfig c = resolve(config_opts);
      std::cout << to_json(c).dump(2) << "\nconfig hash " << hex64(config_hash(c.run)) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
