#include <gtest/gtest.h>

#include <cmath>

#include "lamanet/config.hpp"
#include "lamanet/optim.hpp"

namespace lamanet {
namespace {

TEST(Config, DefaultsFollowHyperparameterTable) {
  RunConfig c;
  EXPECT_EQ(c.data.window, 40u);
  EXPECT_EQ(c.train.epochs, 40u);
  EXPECT_EQ(c.train.batch, 128u);
  EXPECT_EQ(c.train.lr, 1e-3);
  EXPECT_EQ(c.train.lr_gamma, 0.95);
  EXPECT_EQ(c.train.decay_start, 100);
  EXPECT_EQ(c.model.attn_dim, 32u);
  EXPECT_EQ(c.model.encoder_layers, 3u);
  EXPECT_EQ(c.model.decoder_layers, 1u);
  EXPECT_EQ(c.model.heads, 4u);
  EXPECT_EQ(c.model.squeeze_hidden, 500u);
  EXPECT_EQ(c.model.bottleneck, 200u);
  EXPECT_EQ(c.model.recon_cell, ReconCell::gru);
  EXPECT_EQ(c.model.recon_hidden, 1u);
  EXPECT_EQ(c.loss.weights.lambda_m, 0.35);
  EXPECT_EQ(c.loss.weights.lambda_r, 0.2);
  EXPECT_EQ(c.loss.weights.lambda_s, 0.35);
  EXPECT_EQ(c.loss.weights.gamma_noise, 0.1);
  EXPECT_EQ(c.loss.weights.da_start_iteration, 200);
  EXPECT_EQ(c.loss.baseline_lambda_m, 0.2);
  EXPECT_EQ(c.loss.dann_weight, 0.2);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 123074, 2457}));
  EXPECT_EQ(c.data.val_seed, 42u);
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, EmptyJsonGivesDefaults) {
  EXPECT_EQ(canonical(run_config_from_json(json::object())), canonical(RunConfig{}));
}

TEST(Config, OverlayAndRoundTrip) {
  auto c = run_config_from_json(json::parse(R"({"variant":"coral","train":{"epochs":3},"model":{"recon_cell":"lstm"},
                                                "loss":{"kernel":0.5},"score_mode":"phm08"})"));
  EXPECT_EQ(c.variant, Variant::coral);
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.train.batch, 128u);
  EXPECT_EQ(c.model.recon_cell, ReconCell::lstm);
  EXPECT_EQ(c.loss.kernel.mode, KernelSpec::Bandwidth::fixed);
  EXPECT_EQ(c.score_mode, ScoreMode::phm08);
  auto back = run_config_from_json(to_json(c));
  EXPECT_EQ(canonical(back), canonical(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(run_config_from_json(json::parse(R"({"epochs":3})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"train":{"epoch":3}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"model":{"layers":3}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"variant":"magic"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"train":{"batch":"big"}})")), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(run_config_from_json(json::parse(R"({"train":{"batch":127}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"train":{"lr_gamma":1.5}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"loss":{"lambda_m":-1}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"model":{"heads":5}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"seeds":[]})")), ConfigError);
}

TEST(Config, CliKeysAndHash) {
  auto c = cli_config_from_json(json::parse(R"({"data_dir":"/d","out_dir":"/o","jobs":4,"target":"FD003"})"));
  EXPECT_EQ(c.data_dir, "/d");
  EXPECT_EQ(c.jobs, 4u);
  EXPECT_EQ(c.run.target, "FD003");
  RunConfig a, b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.train.lr = 2e-3;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Variants, ActiveTerms) {
  LossOptions o;
  auto full = active_terms(Variant::lamanet, o);
  EXPECT_TRUE(full.mmd && full.recon && full.smooth);
  EXPECT_EQ(full.weights.lambda_m, 0.35);
  auto none = active_terms(Variant::no_da, o);
  EXPECT_FALSE(none.any());
  auto mmd = active_terms(Variant::mmd, o);
  EXPECT_TRUE(mmd.mmd);
  EXPECT_FALSE(mmd.recon || mmd.smooth);
  EXPECT_EQ(mmd.weights.lambda_m, 0.2);
  auto coral = active_terms(Variant::coral, o);
  EXPECT_TRUE(coral.coral && !coral.mmd);
  EXPECT_EQ(coral.weights.lambda_m, 0.2);
  auto dann = active_terms(Variant::dann, o);
  EXPECT_TRUE(dann.dann);
  EXPECT_EQ(dann.dann_weight, 0.2);
  auto ae = active_terms(Variant::ablate_mmd_ae, o);
  EXPECT_TRUE(ae.mmd && ae.recon && !ae.smooth);
  EXPECT_EQ(ae.weights.lambda_r, 0.2);
  EXPECT_EQ(ae.weights.lambda_s, 0.0);
  auto m = active_terms(Variant::ablate_mmd, o);
  EXPECT_TRUE(m.mmd && !m.recon && !m.smooth);
  EXPECT_EQ(m.weights.lambda_m, 0.35);
  EXPECT_EQ(ablation_variants().size(), 3u);
  EXPECT_EQ(table_variants().size(), 5u);
  for (auto v : all_variants()) EXPECT_EQ(parse_variant(to_string(v)), v);
}

TEST(Grid, DefaultGridSize) {
  EXPECT_EQ(grid_size(default_grid()), 4u * 4 * 4 * 2 * 3);
  EXPECT_EQ(grid_points(default_grid()).size(), 384u);
}

TEST(Grid, ParseAndApply) {
  auto g = parse_grid("lambda_m=0.1,0.5");
  ASSERT_EQ(grid_size(g), 2u);
  auto pts = grid_points(g);
  auto c = apply_grid_point(RunConfig{}, pts[1]);
  EXPECT_EQ(c.loss.weights.lambda_m, 0.5);
  EXPECT_EQ(c.loss.weights.lambda_r, 0.2);
  auto g2 = parse_grid("recon_cell=rnn;gamma_noise=0.01");
  auto c2 = apply_grid_point(RunConfig{}, grid_points(g2)[0]);
  EXPECT_EQ(c2.model.recon_cell, ReconCell::rnn);
  EXPECT_EQ(c2.loss.weights.gamma_noise, 0.01);
  EXPECT_EQ(point_label(grid_points(g2)[0]), "gamma_noise-0.01_recon_cell-rnn");
  EXPECT_THROW(parse_grid("epochs=1,2"), ConfigError);
  EXPECT_THROW(parse_grid("lambda_m"), ConfigError);
  EXPECT_THROW(apply_grid_point(RunConfig{}, {{"lambda_m", "abc"}}), ConfigError);
}

TEST(LrSchedule, Examples) {
  const long S = 277;
  EXPECT_EQ(lr_schedule(50, 1e-3, 0.95, 100, S), 1e-3);
  EXPECT_EQ(lr_schedule(276, 1e-3, 0.95, 100, S), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(277, 1e-3, 0.95, 100, S), 9.5e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(2 * S + 5, 1e-3, 0.95, 100, S), 1e-3 * 0.95 * 0.95);
  // Boundaries before the start do not count; one landing on it does.
  EXPECT_EQ(lr_schedule(99, 1e-3, 0.95, 100, 50), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(100, 1e-3, 0.95, 100, 50), 9.5e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(149, 1e-3, 0.95, 100, 50), 9.5e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(150, 1e-3, 0.95, 100, 50), 9.5e-4 * 0.95);
  for (long it : {0L, 99L, 100L, 5000L}) EXPECT_EQ(lr_schedule(it, 1e-3, 1.0, 100, S), 1e-3);
  EXPECT_THROW(lr_schedule(0, 1e-3, 0.0, 100, S), std::invalid_argument);
  EXPECT_THROW(lr_schedule(0, 1e-3, 1.1, 100, S), std::invalid_argument);
}

TEST(LrSchedule, NonIncreasing) {
  for (double gamma : {0.5, 0.95, 1.0})
    for (long S : {1L, 7L, 100L, 300L}) {
      double prev = lr_schedule(0, 1e-3, gamma, 100, S);
      for (long it = 1; it < 3000; ++it) {
        const double lr = lr_schedule(it, 1e-3, gamma, 100, S);
        ASSERT_LE(lr, prev);
        prev = lr;
      }
    }
}

TEST(Adam, MatchesHandComputedSteps) {
  ParamStore ps;
  Tensor& w = ps.add("w", {2}, {1.0, -2.0});
  Adam adam(ps);
  // Gradient of sum(w^2) is 2w.
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  for (int t = 1; t <= 3; ++t) {
    ps.zero_grad();
    backward(sum(square(w)));
    adam.step(0.1);
    for (int i = 0; i < 2; ++i) {
      const double g = 2 * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(w.at(i), ref[i], 1e-15);
    }
  }
}

}  // namespace
}  // namespace lamanet
