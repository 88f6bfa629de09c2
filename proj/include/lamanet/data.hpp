#pragma once
/*
 * Run-to-failure sequences: parsing, min-max scaling, piecewise-linear RUL
 * labels, stride-1 windows and engine-level train/validation splits.
 *
 * Raw C-MAPSS rows are "unit cycle s1 s2 s3 x1 ... x21" (26 whitespace
 * separated columns). A Trajectory keeps the 24 value columns of every
 * cycle; windows are f x K with one row per selected feature.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lamanet/binary_io.hpp"
#include "lamanet/hash.hpp"

namespace lamanet::data {

inline constexpr std::size_t kSettingColumns = 3;
inline constexpr std::size_t kSensorColumns = 21;
inline constexpr std::size_t kValueColumns = kSettingColumns + kSensorColumns;
inline constexpr double kDefaultRc = 125.0;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CycleRecord {
  int cycle = 0;
  std::vector<double> values;  // op settings then sensors

  bool operator==(const CycleRecord&) const = default;
};

struct Trajectory {
  int unit_id = 0;
  std::vector<CycleRecord> cycles;

  std::size_t length() const { return cycles.size(); }
  std::size_t arity() const { return cycles.empty() ? 0 : cycles.front().values.size(); }
  bool operator==(const Trajectory&) const = default;
};

/// Throws IntegrityError unless cycles run 1, 2, ... with uniform arity.
inline void validate(const Trajectory& t) {
  for (std::size_t i = 0; i < t.cycles.size(); ++i) {
    if (t.cycles[i].cycle != static_cast<int>(i) + 1) {
      throw IntegrityError("unit " + std::to_string(t.unit_id) + ": cycle index " +
                           std::to_string(t.cycles[i].cycle) + " at position " + std::to_string(i + 1));
    }
    if (t.cycles[i].values.size() != t.arity()) {
      throw IntegrityError("unit " + std::to_string(t.unit_id) + ": ragged cycle records");
    }
  }
}

// ---------------------------------------------------------------------------
// Parsing

inline std::vector<Trajectory> parse_trajectories(std::istream& in, const std::string& path) {
  std::map<int, Trajectory> units;
  std::vector<int> order;
  std::string line;
  std::size_t line_no = 0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<double> fields;
    std::string tok;
    while (ls >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0' || !std::isfinite(v)) {
        throw ParseError(path, line_no, "non-numeric field '" + tok + "'");
      }
      fields.push_back(v);
    }
    if (fields.empty()) continue;
    if (fields.size() != 2 + kValueColumns) {
      throw ParseError(path, line_no, "expected " + std::to_string(2 + kValueColumns) + " columns, found " +
                                          std::to_string(fields.size()));
    }
    if (fields[0] != std::floor(fields[0]) || fields[1] != std::floor(fields[1])) {
      throw ParseError(path, line_no, "unit and cycle must be integers");
    }
    const int unit = static_cast<int>(fields[0]);
    const int cycle = static_cast<int>(fields[1]);
    auto [it, inserted] = units.try_emplace(unit);
    if (inserted) {
      it->second.unit_id = unit;
      order.push_back(unit);
    }
    auto& cycles = it->second.cycles;
    if (cycle != static_cast<int>(cycles.size()) + 1) {
      throw ParseError(path, line_no, "unit " + std::to_string(unit) + ": expected cycle " +
                                          std::to_string(cycles.size() + 1) + ", found " + std::to_string(cycle));
    }
    cycles.push_back({cycle, std::vector<double>(fields.begin() + 2, fields.end())});
    ++rows;
  }
  if (rows == 0) throw ParseError(path, line_no, "no data rows");
  std::vector<Trajectory> out;
  out.reserve(order.size());
  for (int unit : order) out.push_back(std::move(units.at(unit)));
  return out;
}

inline std::vector<Trajectory> parse_trajectory_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_trajectories(in, path.string());
}

inline std::vector<double> parse_rul_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tok;
    std::vector<double> fields;
    while (ls >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') throw ParseError(path.string(), line_no, "non-numeric RUL '" + tok + "'");
      fields.push_back(v);
    }
    if (fields.empty()) continue;
    if (fields.size() != 1) throw ParseError(path.string(), line_no, "expected one RUL value per line");
    out.push_back(fields[0]);
  }
  if (out.empty()) throw ParseError(path.string(), line_no, "no RUL values");
  return out;
}

struct RawSubset {
  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
  std::vector<double> test_rul;
};

inline RawSubset parse_cmapss(const std::filesystem::path& train_path, const std::filesystem::path& test_path,
                              const std::filesystem::path& rul_path) {
  RawSubset raw{parse_trajectory_file(train_path), parse_trajectory_file(test_path), parse_rul_file(rul_path)};
  if (raw.test_rul.size() != raw.test.size()) {
    throw IntegrityError(rul_path.string() + ": " + std::to_string(raw.test_rul.size()) + " RUL values for " +
                         std::to_string(raw.test.size()) + " test engines");
  }
  return raw;
}

/// Standard file names inside a C-MAPSS directory, e.g. train_FD001.txt.
inline RawSubset load_cmapss_subset(const std::filesystem::path& dir, const std::string& subset) {
  return parse_cmapss(dir / ("train_" + subset + ".txt"), dir / ("test_" + subset + ".txt"),
                      dir / ("RUL_" + subset + ".txt"));
}

/// Inverse of parse_trajectories (round-trip exact with max_digits10).
inline std::string format_trajectories(const std::vector<Trajectory>& trajectories) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& t : trajectories) {
    for (const auto& c : t.cycles) {
      os << t.unit_id << ' ' << c.cycle;
      for (double v : c.values) os << ' ' << v;
      os << '\n';
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Normalization

/// Indices into CycleRecord::values. Empty means "all columns".
using FeatureSelection = std::vector<std::size_t>;

inline FeatureSelection resolve_selection(const FeatureSelection& sel, std::size_t arity) {
  if (sel.empty()) {
    FeatureSelection all(arity);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  for (auto c : sel) {
    if (c >= arity) throw std::invalid_argument("feature column " + std::to_string(c) + " out of range");
  }
  return sel;
}

struct NormalizationStats {
  FeatureSelection columns;
  std::vector<double> min;
  std::vector<double> max;
  std::string fitted_on;

  std::size_t features() const { return min.size(); }
  bool is_constant(std::size_t j) const { return max[j] == min[j]; }
  std::vector<std::size_t> constant_features() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < features(); ++j)
      if (is_constant(j)) out.push_back(j);
    return out;
  }
};

inline NormalizationStats fit_normalization(const std::vector<Trajectory>& trajectories,
                                            const FeatureSelection& selection, std::string fitted_on = {}) {
  if (trajectories.empty()) throw std::invalid_argument("fit_normalization: no trajectories");
  NormalizationStats s;
  s.columns = resolve_selection(selection, trajectories.front().arity());
  s.fitted_on = std::move(fitted_on);
  s.min.assign(s.columns.size(), std::numeric_limits<double>::infinity());
  s.max.assign(s.columns.size(), -std::numeric_limits<double>::infinity());
  for (const auto& t : trajectories)
    for (const auto& c : t.cycles)
      for (std::size_t j = 0; j < s.columns.size(); ++j) {
        const double v = c.values.at(s.columns[j]);
        s.min[j] = std::min(s.min[j], v);
        s.max[j] = std::max(s.max[j], v);
      }
  return s;
}

/// (x - min) / (max - min); constant features map to 0. Values outside the
/// fitted range are not clamped.
inline double normalize(double x, std::size_t j, const NormalizationStats& s) {
  if (s.is_constant(j)) return 0.0;
  return (x - s.min[j]) / (s.max[j] - s.min[j]);
}

inline double denormalize(double y, std::size_t j, const NormalizationStats& s) {
  if (s.is_constant(j)) return s.min[j];
  return y * (s.max[j] - s.min[j]) + s.min[j];
}

// ---------------------------------------------------------------------------
// Labels and windows

/// min(T - t, rc) / rc
inline double rul_label(std::size_t total_cycles, std::size_t cycle, double rc) {
  if (cycle < 1 || cycle > total_cycles) {
    throw std::invalid_argument("rul_label: cycle " + std::to_string(cycle) + " outside [1, " +
                                std::to_string(total_cycles) + "]");
  }
  if (!(rc > 0)) throw std::invalid_argument("rul_label: rc must be positive");
  return std::min(static_cast<double>(total_cycles - cycle), rc) / rc;
}

enum class DomainTag { source, target };

inline const char* to_string(DomainTag t) { return t == DomainTag::source ? "source" : "target"; }

struct WindowSample {
  std::size_t features = 0;      // f
  std::size_t length = 0;        // K
  std::vector<double> values;    // f x K, row j holds feature j over time
  std::optional<double> rul_scaled;
  DomainTag domain_tag = DomainTag::source;
  int unit_id = 0;
  std::size_t end_cycle = 0;

  double at(std::size_t feature, std::size_t step) const { return values[feature * length + step]; }
};

/// Trajectory rows after scaling, time-major: rows[t * f + j].
struct ScaledTrajectory {
  int unit_id = 0;
  std::size_t length = 0;
  std::size_t features = 0;
  std::vector<double> rows;

  bool operator==(const ScaledTrajectory&) const = default;
};

inline ScaledTrajectory scale_trajectory(const Trajectory& t, const NormalizationStats& s) {
  ScaledTrajectory out{t.unit_id, t.length(), s.features(), {}};
  out.rows.resize(out.length * out.features);
  for (std::size_t i = 0; i < t.length(); ++i)
    for (std::size_t j = 0; j < s.features(); ++j)
      out.rows[i * s.features() + j] = normalize(t.cycles[i].values.at(s.columns[j]), j, s);
  return out;
}

/// Writes the K rows ending at `end_cycle` (1-based) into dst as f x K.
/// Cycles before the first one replicate the first row.
inline void copy_window(const ScaledTrajectory& t, std::size_t end_cycle, std::size_t window, double* dst) {
  const std::size_t f = t.features;
  for (std::size_t k = 0; k < window; ++k) {
    const long cycle = static_cast<long>(end_cycle) - static_cast<long>(window) + 1 + static_cast<long>(k);
    const std::size_t row = cycle < 1 ? 0 : static_cast<std::size_t>(cycle - 1);
    for (std::size_t j = 0; j < f; ++j) dst[j * window + k] = t.rows[row * f + j];
  }
}

/// Window end cycles for a trajectory of length T: K..T, or just T when T < K.
inline std::vector<std::size_t> window_end_cycles(std::size_t total, std::size_t window) {
  if (window == 0) throw std::invalid_argument("window length must be >= 1");
  std::vector<std::size_t> ends;
  if (total < window) {
    ends.push_back(total);
  } else {
    for (std::size_t t = window; t <= total; ++t) ends.push_back(t);
  }
  return ends;
}

inline std::vector<WindowSample> make_windows(const Trajectory& traj, std::size_t window,
                                              const NormalizationStats& stats, double rc,
                                              DomainTag tag = DomainTag::source) {
  const ScaledTrajectory scaled = scale_trajectory(traj, stats);
  std::vector<WindowSample> out;
  for (std::size_t end : window_end_cycles(traj.length(), window)) {
    WindowSample w;
    w.features = stats.features();
    w.length = window;
    w.values.resize(w.features * window);
    copy_window(scaled, end, window, w.values.data());
    if (tag == DomainTag::source) w.rul_scaled = rul_label(traj.length(), end, rc);
    w.domain_tag = tag;
    w.unit_id = traj.unit_id;
    w.end_cycle = end;
    out.push_back(std::move(w));
  }
  return out;
}

/// Engine-level split; the first return value is the training part.
inline std::pair<std::vector<Trajectory>, std::vector<Trajectory>> split_train_val(
    const std::vector<Trajectory>& trajectories, std::uint64_t seed, double fraction) {
  if (trajectories.size() < 2) throw std::invalid_argument("split_train_val: need at least 2 trajectories");
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split_train_val: fraction must be in (0,1)");
  std::vector<std::size_t> idx(trajectories.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(trajectories.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, trajectories.size() - 1);
  std::vector<std::size_t> val_idx(idx.begin(), idx.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train_idx(idx.begin() + static_cast<long>(n_val), idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::pair<std::vector<Trajectory>, std::vector<Trajectory>> out;
  for (auto i : train_idx) out.first.push_back(trajectories[i]);
  for (auto i : val_idx) out.second.push_back(trajectories[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Domain datasets

struct DatasetOptions {
  std::size_t window = 40;
  double rc = kDefaultRc;
  FeatureSelection columns;  // empty = all
  double val_fraction = 0.1;
  std::uint64_t val_seed = 42;
};

/// Reference to one window: trajectory index within its group and end cycle.
struct WindowRef {
  std::uint32_t trajectory = 0;
  std::uint32_t end_cycle = 0;
};

/// One domain's scaled train/val/test trajectories plus their window index.
/// Windows are materialized on demand so large subsets stay compact.
class DomainDataset {
 public:
  enum class Part { train, val, test };

  DomainDataset() = default;

  DomainDataset(std::string id, DatasetOptions opts, NormalizationStats stats, std::vector<ScaledTrajectory> train,
                std::vector<ScaledTrajectory> val, std::vector<ScaledTrajectory> test, std::vector<double> test_truth)
      : id_(std::move(id)),
        opts_(std::move(opts)),
        stats_(std::move(stats)),
        train_(std::move(train)),
        val_(std::move(val)),
        test_(std::move(test)),
        test_truth_(std::move(test_truth)) {
    if (test_truth_.size() != test_.size()) {
      throw IntegrityError(id_ + ": " + std::to_string(test_truth_.size()) + " truth values for " +
                           std::to_string(test_.size()) + " test engines");
    }
    index(train_, train_refs_);
    index(val_, val_refs_);
    for (std::size_t i = 0; i < test_.size(); ++i)
      test_refs_.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(test_[i].length)});
  }

  const std::string& id() const { return id_; }
  const DatasetOptions& options() const { return opts_; }
  const NormalizationStats& stats() const { return stats_; }
  std::size_t features() const { return stats_.features(); }
  std::size_t window() const { return opts_.window; }
  double rc() const { return opts_.rc; }

  const std::vector<ScaledTrajectory>& trajectories(Part p) const {
    return p == Part::train ? train_ : p == Part::val ? val_ : test_;
  }
  const std::vector<WindowRef>& windows(Part p) const {
    return p == Part::train ? train_refs_ : p == Part::val ? val_refs_ : test_refs_;
  }
  std::size_t size(Part p) const { return windows(p).size(); }
  const std::vector<double>& test_rul_truth() const { return test_truth_; }

  /// Scaled label of a train/val window, or the capped, scaled truth of a test engine.
  double label(Part p, std::size_t i) const {
    const WindowRef r = windows(p)[i];
    if (p == Part::test) return std::min(test_truth_[r.trajectory], opts_.rc) / opts_.rc;
    return rul_label(trajectories(p)[r.trajectory].length, r.end_cycle, opts_.rc);
  }

  void copy_features(Part p, std::size_t i, double* dst) const {
    const WindowRef r = windows(p)[i];
    copy_window(trajectories(p)[r.trajectory], r.end_cycle, opts_.window, dst);
  }

  WindowSample sample(Part p, std::size_t i, DomainTag tag) const {
    const WindowRef r = windows(p)[i];
    WindowSample w;
    w.features = features();
    w.length = window();
    w.values.resize(w.features * w.length);
    copy_features(p, i, w.values.data());
    if (tag == DomainTag::source || p == Part::test) w.rul_scaled = label(p, i);
    w.domain_tag = tag;
    w.unit_id = trajectories(p)[r.trajectory].unit_id;
    w.end_cycle = r.end_cycle;
    return w;
  }

  bool operator==(const DomainDataset& o) const {
    return id_ == o.id_ && opts_.window == o.opts_.window && opts_.rc == o.opts_.rc &&
           stats_.columns == o.stats_.columns && stats_.min == o.stats_.min && stats_.max == o.stats_.max &&
           train_ == o.train_ && val_ == o.val_ && test_ == o.test_ && test_truth_ == o.test_truth_;
  }

 private:
  void index(const std::vector<ScaledTrajectory>& group, std::vector<WindowRef>& refs) const {
    for (std::size_t i = 0; i < group.size(); ++i)
      for (std::size_t end : window_end_cycles(group[i].length, opts_.window))
        refs.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(end)});
  }

  std::string id_;
  DatasetOptions opts_;
  NormalizationStats stats_;
  std::vector<ScaledTrajectory> train_, val_, test_;
  std::vector<double> test_truth_;
  std::vector<WindowRef> train_refs_, val_refs_, test_refs_;
};

inline std::string describe(const DatasetOptions& o, const std::string& id) {
  std::ostringstream os;
  os.precision(17);
  os << "id=" << id << ";window=" << o.window << ";rc=" << o.rc << ";val_fraction=" << o.val_fraction
     << ";val_seed=" << o.val_seed << ";columns=";
  for (auto c : o.columns) os << c << ',';
  return os.str();
}

inline std::uint64_t options_hash(const DatasetOptions& o, const std::string& id) { return fnv1a64(describe(o, id)); }

/// Splits the training engines, fits scaling on the training part and applies
/// it to validation and test engines of the same domain.
inline DomainDataset build_domain_dataset(const std::string& id, const RawSubset& raw, const DatasetOptions& opts) {
  if (raw.test_rul.size() != raw.test.size()) throw IntegrityError(id + ": test RUL vector length mismatch");
  for (const auto& t : raw.train) validate(t);
  for (const auto& t : raw.test) validate(t);
  auto [train, val] = split_train_val(raw.train, opts.val_seed, opts.val_fraction);
  NormalizationStats stats = fit_normalization(train, opts.columns, id);
  DatasetOptions resolved = opts;
  resolved.columns = stats.columns;
  auto scale_all = [&](const std::vector<Trajectory>& group) {
    std::vector<ScaledTrajectory> out;
    out.reserve(group.size());
    for (const auto& t : group) out.push_back(scale_trajectory(t, stats));
    return out;
  };
  return DomainDataset(id, resolved, stats, scale_all(train), scale_all(val), scale_all(raw.test), raw.test_rul);
}

// ---------------------------------------------------------------------------
// Dataset cache
//
// Layout (little-endian):
//   char[8]  "LMNDSET1"
//   u64      options hash (FNV-1a of the resolved options and id)
//   str      id                      (u64 length + bytes)
//   u64      window, f64 rc, f64 val_fraction, u64 val_seed
//   u64      n columns, then n x u64 column indices
//   f64s     stats min, f64s stats max, str fitted_on
//   3 groups (train, val, test): u64 count, then per trajectory
//            i32 unit_id, u64 length, f64s rows (length x f, time-major)
//   f64s     test RUL truth (raw cycles)

inline void write_cache(std::ostream& os, const DomainDataset& ds) {
  io::Writer w(os);
  w.bytes("LMNDSET1", 8);
  w.u64(options_hash(ds.options(), ds.id()));
  w.str(ds.id());
  w.u64(ds.window());
  w.f64(ds.rc());
  w.f64(ds.options().val_fraction);
  w.u64(ds.options().val_seed);
  w.u64(ds.stats().columns.size());
  for (auto c : ds.stats().columns) w.u64(c);
  w.f64s(ds.stats().min);
  w.f64s(ds.stats().max);
  w.str(ds.stats().fitted_on);
  for (auto part : {DomainDataset::Part::train, DomainDataset::Part::val, DomainDataset::Part::test}) {
    const auto& group = ds.trajectories(part);
    w.u64(group.size());
    for (const auto& t : group) {
      w.i32(t.unit_id);
      w.u64(t.length);
      w.f64s(t.rows);
    }
  }
  w.f64s(ds.test_rul_truth());
}

inline DomainDataset read_cache(std::istream& is) {
  io::Reader r(is);
  r.expect_magic("LMNDSET1");
  const std::uint64_t hash = r.u64();
  const std::string id = r.str();
  DatasetOptions o;
  o.window = r.u64();
  o.rc = r.f64();
  o.val_fraction = r.f64();
  o.val_seed = r.u64();
  const auto ncols = r.u64();
  if (ncols > 4096) throw io::FormatError("implausible column count");
  o.columns.resize(ncols);
  for (auto& c : o.columns) c = r.u64();
  if (options_hash(o, id) != hash) throw io::FormatError("dataset cache hash mismatch");
  NormalizationStats stats;
  stats.columns = o.columns;
  stats.min = r.f64s();
  stats.max = r.f64s();
  stats.fitted_on = r.str();
  if (stats.min.size() != ncols || stats.max.size() != ncols) throw io::FormatError("stats length mismatch");
  std::vector<ScaledTrajectory> groups[3];
  for (auto& group : groups) {
    const auto n = r.u64();
    if (n > 1'000'000) throw io::FormatError("implausible trajectory count");
    group.resize(n);
    for (auto& t : group) {
      t.unit_id = r.i32();
      t.length = r.u64();
      t.features = ncols;
      t.rows = r.f64s();
      if (t.rows.size() != t.length * ncols) throw io::FormatError("trajectory size mismatch");
    }
  }
  auto truth = r.f64s();
  return DomainDataset(id, o, std::move(stats), std::move(groups[0]), std::move(groups[1]), std::move(groups[2]),
                       std::move(truth));
}

inline void save_cache(const std::filesystem::path& path, const DomainDataset& ds) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_cache(os, ds);
}

inline DomainDataset load_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_cache(is);
}

}  // namespace lamanet::data
