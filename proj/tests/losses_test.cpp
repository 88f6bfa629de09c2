#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lamanet/grad_check.hpp"
#include "lamanet/losses.hpp"
#include "test_util.hpp"

namespace lamanet {
namespace {

using testing::random_tensor;

// Naive double-loop MMD^2 oracle; shares no code with mmd2().
double naive_mmd2(const Tensor& a, const Tensor& b, double sigma) {
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  auto k = [&](const double* x, const double* y) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += (x[c] - y[c]) * (x[c] - y[c]);
    return std::exp(-s / (2 * sigma * sigma));
  };
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) saa += k(av + i * d, av + j * d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) sbb += k(bv + i * d, bv + j * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) sab += k(av + i * d, bv + j * d);
  return saa / double(n * n) + sbb / double(m * m) - 2 * sab / double(n * m);
}

Tensor permute_rows(const Tensor& x, std::mt19937_64& rng) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  std::vector<double> v(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) v[i * d + c] = x.at(p[i] * d + c);
  return Tensor::from(x.shape(), v);
}

TEST(RulMse, Examples) {
  Tensor y = Tensor::from({2, 1}, {1, 0});
  EXPECT_EQ(rul_mse(y, y).item(), 0.0);
  EXPECT_DOUBLE_EQ(rul_mse(Tensor::from({2, 1}, {0, 0}), y).item(), 0.5);
  EXPECT_DOUBLE_EQ(rul_mse(Tensor::from({2, 1}, {0, 0}), Tensor::from({2, 1}, {0, 1})).item(), 0.5);
  EXPECT_THROW(rul_mse(Tensor::zeros({0, 1}), Tensor::zeros({0, 1})), std::invalid_argument);
}

TEST(Mmd, IdenticalSamplesGiveZero) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor(rng, {17, 5});
  EXPECT_NEAR(mmd2(a, a, KernelSpec::median()).item(), 0.0, 1e-12);
  EXPECT_NEAR(mmd2(a, a, KernelSpec::fixed(0.7)).item(), 0.0, 1e-12);
}

TEST(Mmd, HandComputedSingletons) {
  Tensor a = Tensor::from({1, 1}, {0.0}), b = Tensor::from({1, 1}, {1.0});
  EXPECT_NEAR(mmd2(a, b, KernelSpec::fixed(1.0)).item(), 2.0 - 2.0 * std::exp(-0.5), 1e-12);
  EXPECT_NEAR(2.0 - 2.0 * std::exp(-0.5), 0.78694, 1e-5);
}

TEST(Mmd, MatchesNaiveOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
    Tensor a = random_tensor(rng, {n, d}), b = random_tensor(rng, {m, d}, -0.5, 1.5);
    const double sigma = std::uniform_real_distribution<double>(0.3, 3.0)(rng);
    EXPECT_NEAR(mmd2(a, b, KernelSpec::fixed(sigma)).item(), naive_mmd2(a, b, sigma), 1e-10);
    // Median mode: oracle recomputes the pooled median independently.
    std::vector<const double*> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back(a.values().data() + i * d);
    for (std::size_t i = 0; i < m; ++i) rows.push_back(b.values().data() + i * d);
    std::vector<double> dist;
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = i + 1; j < rows.size(); ++j) {
        double s = 0;
        for (std::size_t c = 0; c < d; ++c) s += (rows[i][c] - rows[j][c]) * (rows[i][c] - rows[j][c]);
        dist.push_back(s);
      }
    std::sort(dist.begin(), dist.end());
    const std::size_t k = dist.size();
    const double med = k % 2 ? dist[k / 2] : 0.5 * (dist[k / 2 - 1] + dist[k / 2]);
    EXPECT_NEAR(mmd2(a, b, KernelSpec::median()).item(), naive_mmd2(a, b, std::sqrt(med / 2)), 1e-10);
  }
}

TEST(Mmd, NonNegativeAndSymmetric) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor a = random_tensor(rng, {9, 4}), b = random_tensor(rng, {13, 4});
    const double ab = mmd2(a, b, KernelSpec::median()).item();
    EXPECT_GE(ab, -1e-12);
    EXPECT_NEAR(ab, mmd2(b, a, KernelSpec::median()).item(), 1e-14);
  }
}

TEST(Mmd, MedianBandwidthInvariantToRowPermutation) {
  std::mt19937_64 rng(4);
  Tensor a = random_tensor(rng, {12, 3}), b = random_tensor(rng, {10, 3}, 0, 2);
  const double base = mmd2(a, b, KernelSpec::median()).item();
  EXPECT_NEAR(mmd2(permute_rows(a, rng), permute_rows(b, rng), KernelSpec::median()).item(), base, 1e-13);
}

TEST(Mmd, DecreasesAlongInterpolationToSource) {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor(rng, {16, 4});
  Tensor jitter = random_tensor(rng, {16, 4}, -0.1, 0.1);
  std::vector<double> shifted(a.numel());
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] = a.at(i) + 1.5 + jitter.at(i);
  Tensor b = Tensor::from(a.shape(), shifted);
  double previous = std::numeric_limits<double>::infinity();
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (1 - t) * b.at(i) + t * a.at(i);
    const double value = mmd2(a, Tensor::from(a.shape(), v), KernelSpec::fixed(1.0)).item();
    EXPECT_LT(value, previous);
    previous = value;
  }
  EXPECT_NEAR(previous, 0.0, 1e-12);
}

TEST(Mmd, RejectsNonPositiveFixedBandwidth) {
  Tensor a = Tensor::zeros({2, 2});
  EXPECT_THROW(mmd2(a, a, KernelSpec::fixed(0.0)), std::invalid_argument);
  EXPECT_THROW(mmd2(a, Tensor::zeros({2, 3}), KernelSpec::median()), ShapeError);
}

TEST(LatentMmd, ZeroSymmetricAdditive) {
  std::mt19937_64 rng(6);
  Tensor cs = random_tensor(rng, {8, 5}), ct = random_tensor(rng, {8, 5}, 0, 2);
  Tensor os = random_tensor(rng, {8, 3}), ot = random_tensor(rng, {8, 3}, -2, 0);
  const auto k = KernelSpec::median();
  EXPECT_NEAR(latent_mmd(cs, cs, os, os, k).item(), 0.0, 1e-12);
  const double v = latent_mmd(cs, ct, os, ot, k).item();
  EXPECT_NEAR(latent_mmd(ct, cs, ot, os, k).item(), v, 1e-14);
  EXPECT_NEAR(v, mmd2(cs, ct, k).item() + mmd2(os, ot, k).item(), 1e-15);
  EXPECT_THROW(latent_mmd(cs, os, os, ot, k), std::invalid_argument);
}

TEST(ReconLoss, Examples) {
  std::mt19937_64 rng(7);
  Tensor xs = random_tensor(rng, {3, 2, 4}), xt = random_tensor(rng, {5, 2, 4});
  EXPECT_EQ(recon_loss(xs, xs, xt, xt).item(), 0.0);
  Tensor hs = random_tensor(rng, {3, 2, 4});
  // Source-only error equals the elementwise MSE.
  double manual = 0;
  for (std::size_t i = 0; i < xs.numel(); ++i) manual += (xs.at(i) - hs.at(i)) * (xs.at(i) - hs.at(i));
  EXPECT_NEAR(recon_loss(xs, hs, xt, xt).item(), manual / xs.numel(), 1e-15);
  // Doubling the target residual changes only the target term (by a factor 4).
  Tensor ht = random_tensor(rng, {5, 2, 4});
  std::vector<double> doubled(xt.numel());
  for (std::size_t i = 0; i < doubled.size(); ++i) doubled[i] = xt.at(i) + 2 * (ht.at(i) - xt.at(i));
  const double target_term = mse(ht, xt).item();
  const double base = recon_loss(xs, hs, xt, ht).item();
  EXPECT_NEAR(recon_loss(xs, hs, xt, Tensor::from(xt.shape(), doubled)).item() - base, 3 * target_term, 1e-13);
}

TEST(SmoothLoss, ZeroNoiseIsExactlyZero) {
  std::mt19937_64 rng(8), noise(9);
  Tensor c = random_tensor(rng, {6, 4}, -1, 1, true);
  Tensor w = random_tensor(rng, {4, 1});
  auto f = [&](const Tensor& x) { return sigmoid(matmul(x, w)); };
  EXPECT_EQ(smooth_loss(c, f, 0.0, noise).item(), 0.0);
}

TEST(SmoothLoss, ConstantMapIsZero) {
  std::mt19937_64 rng(10), noise(11);
  Tensor c = random_tensor(rng, {6, 4});
  auto f = [](const Tensor& x) { return Tensor::full({x.dim(0), 1}, 0.3); };
  EXPECT_EQ(smooth_loss(c, f, 0.5, noise).item(), 0.0);
}

TEST(SmoothLoss, AffineMapMatchesClosedForm) {
  // F(C) = C W + b: E||F(C) - F(C + g d)||^2 = g^2 ||W||_F^2 per sample.
  std::mt19937_64 rng(12), noise(13);
  const std::size_t draws = 10000, width = 6;
  Tensor w = random_tensor(rng, {width, 1});
  Tensor b = random_tensor(rng, {1});
  Tensor c = random_tensor(rng, {draws, width});
  auto f = [&](const Tensor& x) { return add_bias(matmul(x, w), b); };
  const double gamma = 0.1;
  double frob = 0;
  for (double v : w.values()) frob += v * v;
  const double expected = gamma * gamma * frob;
  EXPECT_NEAR(smooth_loss(c, f, gamma, noise).item(), expected, 0.05 * expected);
}

TEST(SmoothLoss, FreshNoiseEachCall) {
  std::mt19937_64 rng(14), noise(15);
  Tensor c = random_tensor(rng, {4, 3});
  Tensor w = random_tensor(rng, {3, 1});
  auto f = [&](const Tensor& x) { return matmul(x, w); };
  EXPECT_NE(smooth_loss(c, f, 0.1, noise).item(), smooth_loss(c, f, 0.1, noise).item());
}

TEST(Coral, Examples) {
  std::mt19937_64 rng(16);
  Tensor o = random_tensor(rng, {10, 4});
  EXPECT_NEAR(coral_loss(o, o).item(), 0.0, 1e-15);
  EXPECT_NEAR(coral_loss(o, permute_rows(o, rng)).item(), 0.0, 1e-14);
  // d = 1, Var_s = 1 (rows 0 and sqrt 2), Var_t = 0 -> 1/4.
  Tensor s = Tensor::from({2, 1}, {0.0, std::numbers::sqrt2});
  Tensor t = Tensor::from({2, 1}, {3.0, 3.0});
  EXPECT_NEAR(coral_loss(s, t).item(), 0.25, 1e-15);
  EXPECT_THROW(coral_loss(Tensor::zeros({1, 2}), Tensor::zeros({3, 2})), std::invalid_argument);
}

TEST(Coral, InvariantToSharedRotation) {
  std::mt19937_64 rng(17);
  Tensor os = random_tensor(rng, {12, 2}), ot = random_tensor(rng, {9, 2}, -2, 3);
  const double th = 0.83;
  Tensor r = Tensor::from({2, 2}, {std::cos(th), -std::sin(th), std::sin(th), std::cos(th)});
  EXPECT_NEAR(coral_loss(matmul(os, r), matmul(ot, r)).item(), coral_loss(os, ot).item(), 1e-8);
}

TEST(Dann, UninformedClassifierGivesLn2) {
  std::mt19937_64 rng(18);
  Tensor cs = random_tensor(rng, {5, 3}), ct = random_tensor(rng, {7, 3});
  auto zero_logit = [](const Tensor& x) { return scale(sum(x, 1), 0.0); };
  auto logit2 = [&](const Tensor& x) { return reshape(zero_logit(x), {x.dim(0), 1}); };
  EXPECT_NEAR(dann_loss(cs, ct, logit2, 0.2).item(), std::numbers::ln2, 1e-12);
}

TEST(Dann, ExtractorGradientIsReversedAndScaled) {
  std::mt19937_64 rng(19);
  Tensor cs = random_tensor(rng, {4, 3}, -1, 1, true), ct = random_tensor(rng, {4, 3}, -1, 1, true);
  Tensor w = random_tensor(rng, {3, 1}, -1, 1, true);
  auto logit = [&](const Tensor& x) { return matmul(x, w); };

  backward(dann_loss(cs, ct, logit, -1.0));  // reversal by -1 is the plain gradient
  const auto plain_s = testing::to_vector(cs.grad());
  const auto plain_w = testing::to_vector(w.grad());
  cs.zero_grad();
  ct.zero_grad();
  w.zero_grad();
  backward(dann_loss(cs, ct, logit, 0.2));
  for (std::size_t i = 0; i < plain_s.size(); ++i) EXPECT_NEAR(cs.grad()[i], -0.2 * plain_s[i], 1e-15);
  for (std::size_t i = 0; i < plain_w.size(); ++i) EXPECT_NEAR(w.grad()[i], plain_w[i], 1e-15);
}

TEST(Dann, SeparableClustersTrainToZeroAndExtractorPushesTowardConfusion) {
  std::mt19937_64 rng(20);
  const std::size_t n = 16, d = 2, hidden = 8;
  Tensor cs = random_tensor(rng, {n, d}, 1.0, 2.0, true);
  Tensor ct = random_tensor(rng, {n, d}, -2.0, -1.0, true);
  Tensor w1 = random_tensor(rng, {d, hidden}, -0.5, 0.5, true), b1 = Tensor::zeros({hidden}, true);
  Tensor w2 = random_tensor(rng, {hidden, 1}, -0.5, 0.5, true), b2 = Tensor::zeros({1}, true);
  auto logit = [&](const Tensor& x) {
    return add_bias(matmul(relu(add_bias(matmul(x, w1), b1)), w2), b2);
  };
  std::vector<Tensor> clf{w1, b1, w2, b2};
  for (int step = 0; step < 400; ++step) {
    for (auto& p : clf) p.zero_grad();
    backward(dann_loss(cs.detach(), ct.detach(), logit, 0.2));
    for (auto& p : clf)
      for (std::size_t i = 0; i < p.numel(); ++i) p.mutable_values()[i] -= 0.5 * p.grad()[i];
  }
  const double trained = dann_loss(cs, ct, logit, 0.2).item();
  EXPECT_LT(trained, 0.05);

  cs.zero_grad();
  ct.zero_grad();
  backward(dann_loss(cs, ct, logit, 0.2));
  // A descent step on the latents with reversed gradients raises the
  // classifier's loss, i.e. makes the domains harder to tell apart.
  for (std::size_t i = 0; i < cs.numel(); ++i) cs.mutable_values()[i] -= 5.0 * cs.grad()[i];
  for (std::size_t i = 0; i < ct.numel(); ++i) ct.mutable_values()[i] -= 5.0 * ct.grad()[i];
  EXPECT_GT(dann_loss(cs, ct, logit, 0.2).item(), trained);
}

TEST(Composite, GatedBeforeDaStart) {
  LossParts parts;
  parts.rul = Tensor::scalar(0.37);
  parts.discrepancy = Tensor::scalar(5.0);
  parts.recon_s = parts.recon_t = parts.smooth_s = parts.smooth_t = Tensor::scalar(1.0);
  LossWeights w;
  const Tensor l0 = composite_loss(parts, w, 0);
  EXPECT_EQ(l0.node_ptr(), parts.rul.node_ptr());
  EXPECT_EQ(composite_loss(parts, w, 199).item(), 0.37);
}

TEST(Composite, ZeroWeightsEqualRulAtDaStart) {
  LossParts parts;
  parts.rul = Tensor::scalar(0.37);
  parts.discrepancy = parts.recon_s = parts.recon_t = parts.smooth_s = parts.smooth_t = Tensor::scalar(1.0);
  LossWeights w{0, 0, 0, 0.1, 200};
  EXPECT_EQ(composite_loss(parts, w, 200).item(), 0.37);
}

TEST(Composite, UnitPartsWithTableWeights) {
  LossParts parts;
  parts.rul = Tensor::scalar(1.0);
  parts.discrepancy = parts.recon_s = parts.recon_t = parts.smooth_s = parts.smooth_t = Tensor::scalar(1.0);
  EXPECT_NEAR(composite_loss(parts, LossWeights{}, 200).item(), 2.45, 1e-15);
}

TEST(Composite, RejectsNegativeWeights) {
  LossParts parts;
  parts.rul = Tensor::scalar(1.0);
  EXPECT_THROW(composite_loss(parts, LossWeights{-0.1, 0.2, 0.35, 0.1, 200}, 300), std::invalid_argument);
  EXPECT_THROW(composite_loss(parts, LossWeights{}, -1), std::invalid_argument);
}

TEST(LossGradients, AllLossesMatchFiniteDifferences) {
  std::mt19937_64 rng(21);
  Tensor a = random_tensor(rng, {6, 4}, -1, 1, true), b = random_tensor(rng, {5, 4}, 0, 2, true);
  EXPECT_LT(grad_check([&] { return mmd2(a, b, KernelSpec::fixed(0.9)); }, {a, b}, 1e-5), 1e-3);
  EXPECT_LT(grad_check([&] { return coral_loss(a, b); }, {a, b}, 1e-5), 1e-3);
  Tensor y = random_tensor(rng, {6, 1}, 0, 1), yh = random_tensor(rng, {6, 1}, 0, 1, true);
  EXPECT_LT(grad_check([&] { return rul_mse(yh, y); }, {yh}, 1e-5), 1e-3);
  Tensor w = random_tensor(rng, {4, 1}, -1, 1, true);
  auto f = [&](const Tensor& x) { return sigmoid(matmul(tanh(x), w)); };
  EXPECT_LT(grad_check(
                [&] {
                  std::mt19937_64 noise(3);  // same draw on every evaluation
                  return smooth_loss(a, f, 0.1, noise);
                },
                {a, w}, 1e-5),
            1e-3);
  Tensor x = random_tensor(rng, {2, 3, 4}), xh = random_tensor(rng, {2, 3, 4}, -1, 1, true);
  EXPECT_LT(grad_check([&] { return recon_loss(x, xh, x, scale(xh, 0.5)); }, {xh}, 1e-5), 1e-3);
  auto logit = [&](const Tensor& z) { return matmul(z, w); };
  EXPECT_LT(grad_check([&] { return dann_loss(a, b, logit, -1.0); }, {a, b, w}, 1e-5), 1e-3);
}

}  // namespace
}  // namespace lamanet
