#pragma once
/*
 * Training loop.
 *
 * Each step draws batch/2 labeled source windows and batch/2 unlabeled target
 * windows. An epoch walks a permutation of the larger training pool; its last
 * short batch is topped up with random draws, and the smaller pool is sampled
 * with replacement to the same length.
 *
 * Three random streams derive from the run seed: init (parameters), shuffle
 * (epoch plans) and noise (smoothness perturbations).
 */

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lamanet/binary_io.hpp"
#include "lamanet/config.hpp"
#include "lamanet/losses.hpp"
#include "lamanet/metrics.hpp"
#include "lamanet/model.hpp"
#include "lamanet/optim.hpp"

namespace lamanet {

/// Raised when the objective stops being finite. The message lists every term.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BatchPair {
  std::vector<std::uint32_t> source, target;  // window indices into the train parts
};

inline std::size_t steps_per_epoch(std::size_t n_source, std::size_t n_target, std::size_t batch) {
  if (batch < 2 || batch % 2) throw std::invalid_argument("batch must be even and >= 2, got " + std::to_string(batch));
  if (n_source == 0 || n_target == 0) throw std::invalid_argument("both domains need training windows");
  const std::size_t half = batch / 2, n = std::max(n_source, n_target);
  return (n + half - 1) / half;
}

namespace detail {

/// `slots` indices into a pool of size n.
inline std::vector<std::uint32_t> epoch_order(std::size_t n, std::size_t slots, bool permute, std::mt19937_64& rng) {
  std::vector<std::uint32_t> out;
  out.reserve(slots);
  std::uniform_int_distribution<std::uint32_t> any(0, static_cast<std::uint32_t>(n - 1));
  if (permute) {
    out.resize(n);
    std::iota(out.begin(), out.end(), 0u);
    std::shuffle(out.begin(), out.end(), rng);
  }
  while (out.size() < slots) out.push_back(any(rng));
  return out;
}

}  // namespace detail

inline std::vector<BatchPair> make_epoch_plan(std::size_t n_source, std::size_t n_target, std::size_t batch,
                                              std::mt19937_64& rng) {
  const std::size_t steps = steps_per_epoch(n_source, n_target, batch), half = batch / 2;
  const std::size_t slots = steps * half;
  const auto src = detail::epoch_order(n_source, slots, n_source >= n_target, rng);
  const auto tgt = detail::epoch_order(n_target, slots, n_target >= n_source, rng);
  std::vector<BatchPair> plan(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    plan[s].source.assign(src.begin() + static_cast<long>(s * half), src.begin() + static_cast<long>((s + 1) * half));
    plan[s].target.assign(tgt.begin() + static_cast<long>(s * half), tgt.begin() + static_cast<long>((s + 1) * half));
  }
  return plan;
}

/// (b, f, K) features and (b, 1) scaled labels for a list of train windows.
inline std::pair<Tensor, Tensor> gather(const data::DomainDataset& ds, const std::vector<std::uint32_t>& idx) {
  using P = data::DomainDataset::Part;
  const std::size_t b = idx.size(), f = ds.features(), K = ds.window();
  std::vector<double> x(b * f * K), y(b);
  for (std::size_t i = 0; i < b; ++i) {
    ds.copy_features(P::train, idx[i], x.data() + i * f * K);
    y[i] = ds.label(P::train, idx[i]);
  }
  return {Tensor::from({b, f, K}, std::move(x)), Tensor::from({b, 1}, std::move(y))};
}

/// Losses of one step; absent terms were not evaluated.
struct StepRecord {
  long iteration = 0;
  std::size_t epoch = 0;
  double lr = 0;
  double total = 0;
  double rul = 0;
  std::optional<double> discrepancy, recon_s, recon_t, smooth_s, smooth_t, adversarial;
  std::optional<double> val_rmse;  // set on the last step of an epoch
};

inline std::string describe_terms(const StepRecord& r) {
  std::ostringstream os;
  os << std::setprecision(17) << "iteration " << r.iteration << ": total=" << r.total << " rul=" << r.rul;
  auto put = [&](const char* name, const std::optional<double>& v) {
    if (v) os << ' ' << name << '=' << *v;
  };
  put("discrepancy", r.discrepancy);
  put("recon_s", r.recon_s);
  put("recon_t", r.recon_t);
  put("smooth_s", r.smooth_s);
  put("smooth_t", r.smooth_t);
  put("adversarial", r.adversarial);
  return os.str();
}

inline const char* log_header() {
  return "iteration,epoch,lr,total,rul,discrepancy,recon_s,recon_t,smooth_s,smooth_t,adversarial,val_rmse";
}

inline std::string log_row(const StepRecord& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.iteration << ',' << r.epoch << ',' << r.lr << ',' << r.total << ',' << r.rul;
  for (const auto* v : {&r.discrepancy, &r.recon_s, &r.recon_t, &r.smooth_s, &r.smooth_t, &r.adversarial, &r.val_rmse}) {
    os << ',';
    if (*v) os << **v;
  }
  return os.str();
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint32_t which) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), which};
  return std::mt19937_64(seq);
}

enum class StreamId : std::uint32_t { init = 1, shuffle = 2, noise = 3 };

class Trainer {
 public:
  Trainer(RunConfig cfg, const data::DomainDataset& source, const data::DomainDataset& target, std::uint64_t seed)
      : cfg_(std::move(cfg)),
        source_(&source),
        target_(&target),
        seed_(seed),
        model_(resolve_model(cfg_, source.features()), init_seed(seed)),
        adam_(model_.params(), cfg_.train.adam),
        shuffle_rng_(stream(seed, static_cast<std::uint32_t>(StreamId::shuffle))),
        noise_rng_(stream(seed, static_cast<std::uint32_t>(StreamId::noise))),
        terms_(active_terms(cfg_.variant, cfg_.loss)) {
    validate(cfg_);
    if (source.features() != target.features() || source.window() != target.window()) {
      throw std::invalid_argument("source and target datasets differ in features or window");
    }
    if (source.window() != cfg_.data.window) throw std::invalid_argument("dataset window differs from config");
    steps_per_epoch_ = steps_per_epoch(source.size(Part::train), target.size(Part::train), cfg_.train.batch);
  }

  const RunConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  long iteration() const { return iteration_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t steps_per_epoch_count() const { return steps_per_epoch_; }
  const ActiveTerms& terms() const { return terms_; }

  /// Steps in the full budget: epochs x steps per epoch, or max_steps if set.
  long total_steps() const {
    if (cfg_.train.max_steps > 0) return cfg_.train.max_steps;
    return static_cast<long>(cfg_.train.epochs * steps_per_epoch_);
  }
  bool done() const { return iteration_ >= total_steps(); }

  double current_lr() const {
    return lr_schedule(iteration_, cfg_.train.lr, cfg_.train.lr_gamma, cfg_.train.decay_start,
                       static_cast<long>(steps_per_epoch_));
  }

  /// Next batch pair of the running epoch plan.
  const BatchPair& next_batch() {
    if (plan_.empty() || step_in_epoch_ >= plan_.size()) {
      if (!plan_.empty()) ++epoch_;
      plan_ = make_epoch_plan(source_->size(Part::train), target_->size(Part::train), cfg_.train.batch, shuffle_rng_);
      step_in_epoch_ = 0;
    }
    return plan_[step_in_epoch_++];
  }

  /// Draws the next batch, runs one optimization step and, at the end of an
  /// epoch, measures source validation RMSE.
  StepRecord step() {
    const BatchPair batch = next_batch();
    StepRecord r = train_step(batch);
    if (step_in_epoch_ == plan_.size() && source_->size(Part::val) > 0) {
      r.val_rmse = labeled_rmse(model_, *source_, Part::val);
    }
    return r;
  }

  StepRecord train_step(const BatchPair& batch) {
    StepRecord rec;
    rec.iteration = iteration_;
    rec.epoch = epoch_;
    rec.lr = current_lr();

    auto [xs, ys] = gather(*source_, batch.source);
    auto [xt, yt_unused] = gather(*target_, batch.target);
    (void)yt_unused;

    const bool da = terms_.any() && da_active(terms_.weights, iteration_);
    const LatentBundle s = model_.forward(xs);
    LossParts parts;
    parts.rul = rul_mse(s.Y_hat, ys);
    rec.rul = parts.rul.item();

    if (!da) {
      // Target stream still runs for monitoring; nothing of it is differentiated.
      NoGradGuard no_grad;
      (void)model_.forward(xt);
    } else {
      const LatentBundle t = model_.forward(xt);
      if (terms_.mmd) parts.discrepancy = latent_mmd(s.C, t.C, s.O, t.O, cfg_.loss.kernel);
      if (terms_.coral) parts.discrepancy = coral_loss(s.O, t.O);
      if (terms_.recon) {
        parts.recon_s = mse(model_.reconstruct(s.C, first_step(xs)), xs);
        parts.recon_t = mse(model_.reconstruct(t.C, first_step(xt)), xt);
      }
      if (terms_.smooth) {
        auto f = [this](const Tensor& c) { return model_.predict_from_bottleneck(c); };
        parts.smooth_s = smooth_loss(s.C, f, terms_.weights.gamma_noise, noise_rng_);
        parts.smooth_t = smooth_loss(t.C, f, terms_.weights.gamma_noise, noise_rng_);
      }
      if (terms_.dann) {
        auto logit = [this](const Tensor& c) { return model_.discriminate(c); };
        parts.adversarial = dann_loss(s.C, t.C, logit, terms_.dann_weight);
      }
    }
    auto value = [](const std::optional<Tensor>& t) -> std::optional<double> {
      return t ? std::optional<double>(t->item()) : std::nullopt;
    };
    rec.discrepancy = value(parts.discrepancy);
    rec.recon_s = value(parts.recon_s);
    rec.recon_t = value(parts.recon_t);
    rec.smooth_s = value(parts.smooth_s);
    rec.smooth_t = value(parts.smooth_t);
    rec.adversarial = value(parts.adversarial);

    const Tensor total = composite_loss(parts, terms_.weights, iteration_);
    rec.total = total.item();
    if (!std::isfinite(rec.total)) throw NonFiniteLoss("non-finite loss at " + describe_terms(rec));

    model_.params().zero_grad();
    backward(total);
    adam_.step(rec.lr);
    ++iteration_;
    return rec;
  }

  // ---- checkpoints --------------------------------------------------------
  //
  // Layout (little-endian):
  //   char[8] "LMNCKPT1"
  //   u64 config hash, u64 seed, u64 iteration, u64 epoch, u64 step in epoch
  //   str shuffle rng state, str noise rng state
  //   u64 Adam step count
  //   u64 parameter count, then per parameter: str name, f64s values, f64s m, f64s v
  //   u64 plan length, then per step: u64 n, n x u32 source, u64 n, n x u32 target

  void save_checkpoint(std::ostream& os) const {
    io::Writer w(os);
    w.bytes("LMNCKPT1", 8);
    w.u64(config_hash(cfg_));
    w.u64(seed_);
    w.u64(static_cast<std::uint64_t>(iteration_));
    w.u64(epoch_);
    w.u64(step_in_epoch_);
    std::ostringstream a, b;
    a << shuffle_rng_;
    b << noise_rng_;
    w.str(a.str());
    w.str(b.str());
    w.u64(static_cast<std::uint64_t>(adam_.steps()));
    const auto& entries = model_.params().entries();
    w.u64(entries.size());
    for (std::size_t p = 0; p < entries.size(); ++p) {
      w.str(entries[p].first);
      const auto v = entries[p].second.values();
      w.f64s(std::vector<double>(v.begin(), v.end()));
      w.f64s(adam_.first_moments()[p]);
      w.f64s(adam_.second_moments()[p]);
    }
    w.u64(plan_.size());
    for (const auto& bp : plan_)
      for (const auto* side : {&bp.source, &bp.target}) {
        w.u64(side->size());
        for (auto i : *side) w.u32(i);
      }
  }

  void load_checkpoint(std::istream& is) {
    io::Reader r(is);
    r.expect_magic("LMNCKPT1");
    const std::uint64_t hash = r.u64();
    if (hash != config_hash(cfg_)) {
      throw io::FormatError("checkpoint was written for a different configuration (hash " + hex64(hash) +
                            ", expected " + hex64(config_hash(cfg_)) + ")");
    }
    if (r.u64() != seed_) throw io::FormatError("checkpoint was written for a different seed");
    const long iteration = static_cast<long>(r.u64());
    const std::size_t epoch = r.u64(), step_in_epoch = r.u64();
    std::istringstream a(r.str()), b(r.str());
    std::mt19937_64 shuffle, noise;
    a >> shuffle;
    b >> noise;
    if (!a || !b) throw io::FormatError("corrupt random stream state");
    const long adam_steps = static_cast<long>(r.u64());
    auto& entries = model_.params().entries();
    if (r.u64() != entries.size()) throw io::FormatError("checkpoint parameter count mismatch");
    std::vector<std::vector<double>> values, m, v;
    for (auto& [name, t] : entries) {
      if (r.str() != name) throw io::FormatError("checkpoint parameter order mismatch at " + name);
      values.push_back(r.f64s());
      m.push_back(r.f64s());
      v.push_back(r.f64s());
      if (values.back().size() != t.numel() || m.back().size() != t.numel() || v.back().size() != t.numel()) {
        throw io::FormatError("checkpoint parameter size mismatch at " + name);
      }
    }
    std::vector<BatchPair> plan(r.u64());
    for (auto& bp : plan)
      for (auto* side : {&bp.source, &bp.target}) {
        side->resize(r.u64());
        for (auto& i : *side) i = r.u32();
      }
    // Commit only after everything parsed.
    for (std::size_t p = 0; p < entries.size(); ++p) {
      std::copy(values[p].begin(), values[p].end(), entries[p].second.mutable_values().begin());
      adam_.first_moments()[p] = std::move(m[p]);
      adam_.second_moments()[p] = std::move(v[p]);
    }
    adam_.set_steps(adam_steps);
    iteration_ = iteration;
    epoch_ = epoch;
    step_in_epoch_ = step_in_epoch;
    shuffle_rng_ = shuffle;
    noise_rng_ = noise;
    plan_ = std::move(plan);
  }

  void save_checkpoint(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    save_checkpoint(os);
  }

  void load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    load_checkpoint(is);
  }

 private:
  using Part = data::DomainDataset::Part;

  static std::uint64_t init_seed(std::uint64_t seed) {
    return stream(seed, static_cast<std::uint32_t>(StreamId::init))();
  }

  RunConfig cfg_;
  const data::DomainDataset* source_;
  const data::DomainDataset* target_;
  std::uint64_t seed_;
  Model model_;
  Adam adam_;
  std::mt19937_64 shuffle_rng_, noise_rng_;
  ActiveTerms terms_;
  std::size_t steps_per_epoch_ = 0;
  long iteration_ = 0;
  std::size_t epoch_ = 0;
  std::size_t step_in_epoch_ = 0;
  std::vector<BatchPair> plan_;
};

}  // namespace lamanet
