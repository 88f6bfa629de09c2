#pragma once
/*
 * Domain-adaptation and regularization losses.
 */

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lamanet/ops.hpp"

namespace lamanet {

/// RBF kernel k(a, b) = exp(-||a - b||^2 / (2 sigma^2)).
struct KernelSpec {
  enum class Bandwidth { median_heuristic, fixed };
  Bandwidth mode = Bandwidth::median_heuristic;
  double sigma = 1.0;

  static KernelSpec median() { return {}; }
  static KernelSpec fixed(double sigma) { return {Bandwidth::fixed, sigma}; }
};

struct LossWeights {
  double lambda_m = 0.35;
  double lambda_r = 0.2;
  double lambda_s = 0.35;
  double gamma_noise = 0.1;
  long da_start_iteration = 200;

  void validate() const {
    if (lambda_m < 0 || lambda_r < 0 || lambda_s < 0 || gamma_noise < 0 || da_start_iteration < 0) {
      throw std::invalid_argument("loss weights must be non-negative");
    }
  }
};

inline Tensor mse(const Tensor& prediction, const Tensor& target) {
  detail::require_same_shape(prediction, target, "mse");
  if (prediction.numel() == 0) throw std::invalid_argument("mse: empty batch");
  return mean(square(sub(target, prediction)));
}

/// (1/N) sum (y - y^)^2
inline Tensor rul_mse(const Tensor& y_hat, const Tensor& y) {
  if (y_hat.rank() == 0 || y_hat.dim(0) == 0) throw std::invalid_argument("rul_mse: empty batch");
  return mse(y_hat, y);
}

/// sigma for which 2 sigma^2 equals the median pairwise squared distance
/// among the pooled rows of A and B (distinct pairs only).
inline double median_heuristic_sigma(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  std::vector<const double*> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(a.values().data() + i * d);
  for (std::size_t j = 0; j < m; ++j) rows.push_back(b.values().data() + j * d);
  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = rows[i][c] - rows[j][c];
        s += diff * diff;
      }
      dist.push_back(s);
    }
  if (dist.empty()) return 1.0;
  auto mid = dist.begin() + static_cast<long>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  double med = *mid;
  if (dist.size() % 2 == 0) med = 0.5 * (med + *std::max_element(dist.begin(), mid));
  if (!(med > 0)) return 1.0;
  return std::sqrt(med / 2.0);
}

/// Biased MMD^2 estimate from one pairwise distance matrix over [A; B].
/// The median-heuristic bandwidth is a constant with respect to gradients.
inline Tensor mmd2(const Tensor& a, const Tensor& b, const KernelSpec& k) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("mmd2: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), m = b.dim(0);
  if (n == 0 || m == 0) throw std::invalid_argument("mmd2: empty sample");
  double sigma = k.sigma;
  if (k.mode == KernelSpec::Bandwidth::fixed) {
    if (!(sigma > 0)) throw std::invalid_argument("mmd2: fixed bandwidth must be positive");
  } else {
    sigma = median_heuristic_sigma(a, b);
  }
  const Tensor pooled = concat({a, b}, 0);
  const Tensor kernel = exp(scale(pairwise_squared_distance(pooled, pooled), -1.0 / (2.0 * sigma * sigma)));
  const std::size_t t = n + m;
  std::vector<double> w(t * t);
  const double waa = 1.0 / static_cast<double>(n * n), wbb = 1.0 / static_cast<double>(m * m),
               wab = -1.0 / static_cast<double>(n * m);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) w[i * t + j] = (i < n) == (j < n) ? (i < n ? waa : wbb) : wab;
  return sum(mul(kernel, Tensor::from({t, t}, std::move(w))));
}

/// mmd2(C_s, C_t) + mmd2(O_s, O_t)
inline Tensor latent_mmd(const Tensor& c_s, const Tensor& c_t, const Tensor& o_s, const Tensor& o_t,
                         const KernelSpec& k) {
  if (c_s.dim(1) != c_t.dim(1) || o_s.dim(1) != o_t.dim(1)) {
    throw std::invalid_argument("latent_mmd: source and target latent widths differ");
  }
  return add(mmd2(c_s, c_t, k), mmd2(o_s, o_t, k));
}

/// Source reconstruction MSE plus target reconstruction MSE.
inline Tensor recon_loss(const Tensor& x_s, const Tensor& x_hat_s, const Tensor& x_t, const Tensor& x_hat_t) {
  return add(mse(x_hat_s, x_s), mse(x_hat_t, x_t));
}

/// Mean over the batch of ||F(C) - F(C + gamma * delta)||^2, delta ~ N(0, I)
/// drawn fresh from `rng`.
inline Tensor smooth_loss(const Tensor& c, const std::function<Tensor(const Tensor&)>& f, double gamma_noise,
                          std::mt19937_64& rng) {
  if (gamma_noise < 0) throw std::invalid_argument("smooth_loss: gamma_noise must be non-negative");
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> noise(c.numel());
  for (auto& v : noise) v = gamma_noise * n01(rng);
  const Tensor perturbed = add(c, Tensor::from(c.shape(), std::move(noise)));
  const Tensor diff = sub(f(c), f(perturbed));
  return scale(squared_l2_norm(diff), 1.0 / static_cast<double>(c.dim(0)));
}

/// Sample covariance (1/(n-1) normalization) of the rows of x.
inline Tensor covariance(const Tensor& x) {
  const std::size_t n = x.dim(0);
  const Tensor centered = sub(x, broadcast_to(mean(x, 0), x.shape()));
  return scale(matmul(transpose(centered), centered), 1.0 / static_cast<double>(n - 1));
}

/// ||Cov(O_s) - Cov(O_t)||_F^2 / (4 d^2)
inline Tensor coral_loss(const Tensor& o_s, const Tensor& o_t) {
  if (o_s.rank() != 2 || o_t.rank() != 2 || o_s.dim(1) != o_t.dim(1)) {
    throw ShapeError("coral_loss: " + to_string(o_s.shape()) + " vs " + to_string(o_t.shape()));
  }
  if (o_s.dim(0) < 2 || o_t.dim(0) < 2) throw std::invalid_argument("coral_loss: need at least 2 rows per domain");
  const double d = static_cast<double>(o_s.dim(1));
  return scale(squared_l2_norm(sub(covariance(o_s), covariance(o_t))), 1.0 / (4.0 * d * d));
}

/// Binary cross-entropy of a domain classifier (source = 1, target = 0).
/// Latents reach the classifier through a gradient reversal scaled by
/// `reversal_weight`, so the extractor is pushed toward domain confusion.
inline Tensor dann_loss(const Tensor& c_s, const Tensor& c_t,
                        const std::function<Tensor(const Tensor&)>& classifier_logit, double reversal_weight) {
  const std::size_t n = c_s.dim(0), m = c_t.dim(0);
  const Tensor logits = classifier_logit(gradient_reversal(concat({c_s, c_t}, 0), reversal_weight));
  const Tensor log_p_source = log(sigmoid(slice(logits, 0, 0, n)));
  const Tensor log_p_target = log(sigmoid(scale(slice(logits, 0, n, n + m), -1.0)));
  return scale(add(sum(log_p_source), sum(log_p_target)), -1.0 / static_cast<double>(n + m));
}

/// Individual terms of the training objective. Terms a variant does not use,
/// or that are still gated off, stay empty.
struct LossParts {
  Tensor rul;
  std::optional<Tensor> discrepancy;  // latent MMD or CORAL
  std::optional<Tensor> recon_s, recon_t;
  std::optional<Tensor> smooth_s, smooth_t;
  std::optional<Tensor> adversarial;
};

inline bool da_active(const LossWeights& w, long iteration) { return iteration >= w.da_start_iteration; }

/// L_RUL + lambda_m D + lambda_r (R_s + R_t) + lambda_s (S_s + S_t) + A.
/// Before the DA start iteration the RUL term is returned unchanged.
inline Tensor composite_loss(const LossParts& parts, const LossWeights& w, long iteration) {
  if (iteration < 0) throw std::invalid_argument("composite_loss: negative iteration");
  w.validate();
  if (!da_active(w, iteration)) return parts.rul;
  Tensor total = parts.rul;
  auto accumulate = [&](const std::optional<Tensor>& term, double weight) {
    if (term) total = add(total, scale(*term, weight));
  };
  accumulate(parts.discrepancy, w.lambda_m);
  accumulate(parts.recon_s, w.lambda_r);
  accumulate(parts.recon_t, w.lambda_r);
  accumulate(parts.smooth_s, w.lambda_s);
  accumulate(parts.smooth_t, w.lambda_s);
  accumulate(parts.adversarial, 1.0);
  return total;
}

}  // namespace lamanet
