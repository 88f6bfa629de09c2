#pragma once
/*
 * Run configuration, its JSON form and the variant -> loss term mapping.
 *
 * Every field has a default; a config file only needs the keys it changes.
 * Unknown keys are rejected so typos fail loudly.
 */

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lamanet/data.hpp"
#include "lamanet/hash.hpp"
#include "lamanet/losses.hpp"
#include "lamanet/model.hpp"
#include "lamanet/optim.hpp"

namespace lamanet {

using json = nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Variant { lamanet, no_da, mmd, coral, dann, ablate_mmd, ablate_mmd_ae };

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::lamanet, Variant::no_da,      Variant::mmd,          Variant::coral,
                                      Variant::dann,    Variant::ablate_mmd, Variant::ablate_mmd_ae};
  return v;
}

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::lamanet: return "lamanet";
    case Variant::no_da: return "no_da";
    case Variant::mmd: return "mmd";
    case Variant::coral: return "coral";
    case Variant::dann: return "dann";
    case Variant::ablate_mmd: return "ablate_mmd";
    case Variant::ablate_mmd_ae: return "ablate_mmd_ae";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : all_variants())
    if (s == to_string(v)) return v;
  throw ConfigError("unknown variant '" + s + "'");
}

/// Table-comparison variants, in column order.
inline std::vector<Variant> table_variants() {
  return {Variant::no_da, Variant::dann, Variant::mmd, Variant::coral, Variant::lamanet};
}

/// The three ablation versions: MMD, MMD + autoencoder, full model.
inline std::vector<Variant> ablation_variants() {
  return {Variant::ablate_mmd, Variant::ablate_mmd_ae, Variant::lamanet};
}

enum class ScoreMode { printed, phm08 };

struct TrainOptions {
  std::size_t epochs = 40;
  std::size_t batch = 128;
  double lr = 1e-3;
  double lr_gamma = 0.95;
  long decay_start = 100;
  long max_steps = 0;  // 0: run the full epoch budget
  AdamConfig adam;
};

struct LossOptions {
  LossWeights weights;
  double baseline_lambda_m = 0.2;  // MMD and CORAL baselines
  double dann_weight = 0.2;
  KernelSpec kernel;
};

struct RunConfig {
  std::string source = "FD002";
  std::string target = "FD001";
  Variant variant = Variant::lamanet;
  std::vector<std::uint64_t> seeds{1, 123074, 2457};
  data::DatasetOptions data;
  TrainOptions train;
  LossOptions loss;
  ModelConfig model;  // features and window are taken from the data
  ScoreMode score_mode = ScoreMode::printed;
};

struct CliConfig {
  RunConfig run;
  std::string data_dir;
  std::string out_dir = "runs";
  std::size_t jobs = 1;
};

/// Loss terms a variant evaluates, with their weights.
struct ActiveTerms {
  bool mmd = false;
  bool coral = false;
  bool recon = false;
  bool smooth = false;
  bool dann = false;
  LossWeights weights;  // lambda_m is the discrepancy weight actually used
  double dann_weight = 0.0;

  bool any() const { return mmd || coral || recon || smooth || dann; }
};

inline ActiveTerms active_terms(Variant v, const LossOptions& o) {
  ActiveTerms t;
  t.weights = o.weights;
  switch (v) {
    case Variant::lamanet: t.mmd = t.recon = t.smooth = true; break;
    case Variant::no_da: break;
    case Variant::mmd:
      t.mmd = true;
      t.weights.lambda_m = o.baseline_lambda_m;
      break;
    case Variant::coral:
      t.coral = true;
      t.weights.lambda_m = o.baseline_lambda_m;
      break;
    case Variant::dann:
      t.dann = true;
      t.dann_weight = o.dann_weight;
      break;
    case Variant::ablate_mmd: t.mmd = true; break;
    case Variant::ablate_mmd_ae: t.mmd = t.recon = true; break;
  }
  if (!t.recon) t.weights.lambda_r = 0.0;
  if (!t.smooth) t.weights.lambda_s = 0.0;
  if (!t.mmd && !t.coral) t.weights.lambda_m = 0.0;
  return t;
}

/// Dims for --toy runs: window 16, widths 8.
inline void apply_toy(RunConfig& c) {
  c.data.window = 16;
  c.train.batch = 32;
  c.model.attn_dim = 8;
  c.model.heads = 2;
  c.model.encoder_layers = 1;
  c.model.decoder_layers = 1;
  c.model.ffn_dim = 16;
  c.model.squeeze_hidden = 32;
  c.model.bottleneck = 8;
  c.model.projection_dim = 8;
  c.model.discriminator_hidden = 8;
}

inline ModelConfig resolve_model(const RunConfig& c, std::size_t features) {
  ModelConfig m = c.model;
  m.features = features;
  m.window = c.data.window;
  return m;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

/// Reads `key` from `j` into `out` if present and records it as known.
template <class T>
void get(const json& j, const char* key, T& out, std::set<std::string>& known) {
  known.insert(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("unknown config key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
    }
  }
}

inline json section(const json& j, const char* key, std::set<std::string>& known) {
  known.insert(key);
  return j.contains(key) ? j.at(key) : json::object();
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
  const auto& w = c.loss.weights;
  json kernel = c.loss.kernel.mode == KernelSpec::Bandwidth::median_heuristic ? json("median") : json(c.loss.kernel.sigma);
  return {
      {"source", c.source},
      {"target", c.target},
      {"variant", to_string(c.variant)},
      {"seeds", c.seeds},
      {"data",
       {{"window", c.data.window},
        {"rc", c.data.rc},
        {"columns", c.data.columns},
        {"val_fraction", c.data.val_fraction},
        {"val_seed", c.data.val_seed}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch", c.train.batch},
        {"lr", c.train.lr},
        {"lr_gamma", c.train.lr_gamma},
        {"decay_start", c.train.decay_start},
        {"max_steps", c.train.max_steps},
        {"adam_beta1", c.train.adam.beta1},
        {"adam_beta2", c.train.adam.beta2},
        {"adam_epsilon", c.train.adam.epsilon}}},
      {"loss",
       {{"lambda_m", w.lambda_m},
        {"lambda_r", w.lambda_r},
        {"lambda_s", w.lambda_s},
        {"gamma_noise", w.gamma_noise},
        {"da_start", w.da_start_iteration},
        {"baseline_lambda_m", c.loss.baseline_lambda_m},
        {"dann_weight", c.loss.dann_weight},
        {"kernel", kernel}}},
      {"model",
       {{"attn_dim", c.model.attn_dim},
        {"heads", c.model.heads},
        {"encoder_layers", c.model.encoder_layers},
        {"decoder_layers", c.model.decoder_layers},
        {"ffn_dim", c.model.ffn_dim},
        {"squeeze_hidden", c.model.squeeze_hidden},
        {"bottleneck", c.model.bottleneck},
        {"projection_dim", c.model.projection_dim},
        {"recon_cell", to_string(c.model.recon_cell)},
        {"recon_hidden", c.model.recon_hidden},
        {"discriminator_hidden", c.model.discriminator_hidden}}},
      {"score_mode", c.score_mode == ScoreMode::printed ? "printed" : "phm08"},
  };
}

inline void validate(const RunConfig& c) {
  if (c.seeds.empty()) throw ConfigError("at least one seed is required");
  if (c.data.window == 0) throw ConfigError("data.window must be positive");
  if (!(c.data.rc > 0)) throw ConfigError("data.rc must be positive");
  if (c.train.epochs == 0) throw ConfigError("train.epochs must be positive");
  if (c.train.batch < 2 || c.train.batch % 2) throw ConfigError("train.batch must be even and >= 2");
  if (!(c.train.lr > 0)) throw ConfigError("train.lr must be positive");
  if (!(c.train.lr_gamma > 0 && c.train.lr_gamma <= 1)) throw ConfigError("train.lr_gamma must be in (0, 1]");
  if (c.train.decay_start < 0 || c.train.max_steps < 0) throw ConfigError("train step counts must be >= 0");
  if (c.loss.baseline_lambda_m < 0 || c.loss.dann_weight < 0) throw ConfigError("loss weights must be >= 0");
  if (c.loss.kernel.mode == KernelSpec::Bandwidth::fixed && !(c.loss.kernel.sigma > 0)) {
    throw ConfigError("loss.kernel bandwidth must be positive");
  }
  try {
    c.loss.weights.validate();
    ModelConfig m = c.model;
    m.features = std::max<std::size_t>(m.features, 1);
    m.window = c.data.window;
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

/// Overlays `j` onto `base`. Missing keys keep their value in `base`.
inline RunConfig run_config_from_json(const json& j, RunConfig c = {}) {
  using detail::get;
  std::set<std::string> top;
  get(j, "source", c.source, top);
  get(j, "target", c.target, top);
  std::string variant = to_string(c.variant);
  get(j, "variant", variant, top);
  c.variant = parse_variant(variant);
  get(j, "seeds", c.seeds, top);
  std::string score = c.score_mode == ScoreMode::printed ? "printed" : "phm08";
  get(j, "score_mode", score, top);
  if (score == "printed") {
    c.score_mode = ScoreMode::printed;
  } else if (score == "phm08") {
    c.score_mode = ScoreMode::phm08;
  } else {
    throw ConfigError("score_mode must be 'printed' or 'phm08'");
  }

  {
    json d = detail::section(j, "data", top);
    std::set<std::string> k;
    get(d, "window", c.data.window, k);
    get(d, "rc", c.data.rc, k);
    get(d, "columns", c.data.columns, k);
    get(d, "val_fraction", c.data.val_fraction, k);
    get(d, "val_seed", c.data.val_seed, k);
    detail::reject_unknown(d, k, "data");
  }
  {
    json t = detail::section(j, "train", top);
    std::set<std::string> k;
    get(t, "epochs", c.train.epochs, k);
    get(t, "batch", c.train.batch, k);
    get(t, "lr", c.train.lr, k);
    get(t, "lr_gamma", c.train.lr_gamma, k);
    get(t, "decay_start", c.train.decay_start, k);
    get(t, "max_steps", c.train.max_steps, k);
    get(t, "adam_beta1", c.train.adam.beta1, k);
    get(t, "adam_beta2", c.train.adam.beta2, k);
    get(t, "adam_epsilon", c.train.adam.epsilon, k);
    detail::reject_unknown(t, k, "train");
  }
  {
    json l = detail::section(j, "loss", top);
    std::set<std::string> k;
    auto& w = c.loss.weights;
    get(l, "lambda_m", w.lambda_m, k);
    get(l, "lambda_r", w.lambda_r, k);
    get(l, "lambda_s", w.lambda_s, k);
    get(l, "gamma_noise", w.gamma_noise, k);
    get(l, "da_start", w.da_start_iteration, k);
    get(l, "baseline_lambda_m", c.loss.baseline_lambda_m, k);
    get(l, "dann_weight", c.loss.dann_weight, k);
    k.insert("kernel");
    if (l.contains("kernel")) {
      const json& kj = l.at("kernel");
      if (kj.is_string() && kj.get<std::string>() == "median") {
        c.loss.kernel = KernelSpec::median();
      } else if (kj.is_number()) {
        c.loss.kernel = KernelSpec::fixed(kj.get<double>());
      } else {
        throw ConfigError("loss.kernel must be \"median\" or a positive bandwidth");
      }
    }
    detail::reject_unknown(l, k, "loss");
  }
  {
    json m = detail::section(j, "model", top);
    std::set<std::string> k;
    get(m, "attn_dim", c.model.attn_dim, k);
    get(m, "heads", c.model.heads, k);
    get(m, "encoder_layers", c.model.encoder_layers, k);
    get(m, "decoder_layers", c.model.decoder_layers, k);
    get(m, "ffn_dim", c.model.ffn_dim, k);
    get(m, "squeeze_hidden", c.model.squeeze_hidden, k);
    get(m, "bottleneck", c.model.bottleneck, k);
    get(m, "projection_dim", c.model.projection_dim, k);
    std::string cell = to_string(c.model.recon_cell);
    get(m, "recon_cell", cell, k);
    try {
      c.model.recon_cell = parse_recon_cell(cell);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    get(m, "recon_hidden", c.model.recon_hidden, k);
    get(m, "discriminator_hidden", c.model.discriminator_hidden, k);
    detail::reject_unknown(m, k, "model");
  }
  top.insert({"data_dir", "out_dir", "jobs"});  // CliConfig keys, handled by the caller
  detail::reject_unknown(j, top, "");
  validate(c);
  return c;
}

inline json to_json(const CliConfig& c) {
  json j = to_json(c.run);
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["jobs"] = c.jobs;
  return j;
}

inline CliConfig cli_config_from_json(const json& j, CliConfig c = {}) {
  c.run = run_config_from_json(j, c.run);
  std::set<std::string> unused;
  detail::get(j, "data_dir", c.data_dir, unused);
  detail::get(j, "out_dir", c.out_dir, unused);
  detail::get(j, "jobs", c.jobs, unused);
  if (c.jobs == 0) throw ConfigError("jobs must be >= 1");
  return c;
}

inline CliConfig load_cli_config(const std::string& path, CliConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return cli_config_from_json(j, std::move(base));
}

/// Canonical text of the run config (sorted keys) and its hash.
inline std::string canonical(const RunConfig& c) { return to_json(c).dump(); }
inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(canonical(c)); }

// ---------------------------------------------------------------------------
// Sweep grids

struct GridAxis {
  std::string key;  // lambda_m, lambda_r, lambda_s, gamma_noise or recon_cell
  std::vector<std::string> values;
};

using Grid = std::vector<GridAxis>;

inline Grid default_grid() {
  const std::vector<std::string> lambdas{"0.1", "0.2", "0.35", "0.5"};
  return {{"lambda_m", lambdas},
          {"lambda_r", lambdas},
          {"lambda_s", lambdas},
          {"gamma_noise", {"0.1", "0.01"}},
          {"recon_cell", {"gru", "lstm", "rnn"}}};
}

inline std::size_t grid_size(const Grid& g) {
  std::size_t n = 1;
  for (const auto& a : g) n *= a.values.size();
  return n;
}

/// "lambda_m=0.1,0.5;gamma_noise=0.01" -> axes. Axes not named keep the
/// config's value (they do not multiply the grid).
inline Grid parse_grid(const std::string& text) {
  static const std::set<std::string> keys{"lambda_m", "lambda_r", "lambda_s", "gamma_noise", "recon_cell"};
  Grid g;
  std::stringstream axes(text);
  std::string axis;
  while (std::getline(axes, axis, ';')) {
    if (axis.empty()) continue;
    const auto eq = axis.find('=');
    if (eq == std::string::npos) throw ConfigError("grid axis '" + axis + "' needs key=v1,v2");
    GridAxis a{axis.substr(0, eq), {}};
    if (!keys.count(a.key)) throw ConfigError("unknown grid key '" + a.key + "'");
    std::stringstream vals(axis.substr(eq + 1));
    std::string v;
    while (std::getline(vals, v, ',')) {
      if (!v.empty()) a.values.push_back(v);
    }
    if (a.values.empty()) throw ConfigError("grid axis '" + a.key + "' has no values");
    g.push_back(std::move(a));
  }
  if (g.empty()) throw ConfigError("empty grid");
  return g;
}

/// All grid points as (key -> value) maps, first axis slowest.
inline std::vector<std::map<std::string, std::string>> grid_points(const Grid& g) {
  std::vector<std::map<std::string, std::string>> out{{}};
  for (const auto& axis : g) {
    std::vector<std::map<std::string, std::string>> next;
    for (const auto& p : out)
      for (const auto& v : axis.values) {
        auto q = p;
        q[axis.key] = v;
        next.push_back(std::move(q));
      }
    out = std::move(next);
  }
  return out;
}

inline RunConfig apply_grid_point(RunConfig c, const std::map<std::string, std::string>& point) {
  json patch = json::object();
  for (const auto& [k, v] : point) {
    if (k == "recon_cell") {
      patch["model"]["recon_cell"] = v;
    } else {
      try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        patch["loss"][k] = x;
      } catch (const std::exception&) {
        throw ConfigError("grid value '" + v + "' for " + k + " is not a number");
      }
    }
  }
  return run_config_from_json(patch, std::move(c));
}

inline std::string point_label(const std::map<std::string, std::string>& point) {
  std::string s;
  for (const auto& [k, v] : point) s += (s.empty() ? "" : "_") + k + "-" + v;
  return s.empty() ? "base" : s;
}

}  // namespace lamanet
