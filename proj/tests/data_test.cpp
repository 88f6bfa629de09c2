#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "lamanet/data.hpp"
#include "lamanet/synthetic.hpp"

namespace lamanet::data {
namespace {

Trajectory random_trajectory(std::mt19937_64& rng, int unit, std::size_t length, std::size_t arity = kValueColumns) {
  std::uniform_real_distribution<double> u(-50.0, 600.0);
  Trajectory t;
  t.unit_id = unit;
  for (std::size_t c = 1; c <= length; ++c) {
    std::vector<double> v(arity);
    for (auto& x : v) x = u(rng);
    t.cycles.push_back({static_cast<int>(c), v});
  }
  return t;
}

Trajectory column_trajectory(int unit, std::vector<double> values) {
  Trajectory t;
  t.unit_id = unit;
  for (std::size_t i = 0; i < values.size(); ++i) t.cycles.push_back({static_cast<int>(i + 1), {values[i]}});
  return t;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lamanet_data_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TEST(Parse, ReadsCmapssRows) {
  std::string row = "1 1";
  for (std::size_t i = 0; i < kValueColumns; ++i) row += " " + std::to_string(i) + ".5";
  std::istringstream in(row + "\n" + std::string("1 2") + row.substr(3) + "\n");
  auto trajs = parse_trajectories(in, "mem");
  ASSERT_EQ(trajs.size(), 1u);
  EXPECT_EQ(trajs[0].length(), 2u);
  EXPECT_EQ(trajs[0].arity(), kValueColumns);
  EXPECT_EQ(trajs[0].cycles[1].values[3], 3.5);
}

TEST(Parse, ErrorsCarryLineNumbers) {
  std::string good = "1 1";
  for (std::size_t i = 0; i < kValueColumns; ++i) good += " 0.1";
  std::istringstream short_row(good + "\n1 2 0.1 0.2\n");
  try {
    parse_trajectories(short_row, "f.txt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("f.txt"), std::string::npos);
  }
  std::string bad = good;
  bad.replace(bad.size() - 3, 3, "abc");
  std::istringstream non_numeric(bad + "\n");
  EXPECT_THROW(parse_trajectories(non_numeric, "f.txt"), ParseError);
  std::istringstream empty("");
  EXPECT_THROW(parse_trajectories(empty, "f.txt"), ParseError);
}

TEST(Parse, RoundTripsThroughFlatFormat) {
  std::mt19937_64 rng(1);
  std::vector<Trajectory> trajs;
  for (int u = 1; u <= 5; ++u) trajs.push_back(random_trajectory(rng, u, 10 + u * 7));
  std::istringstream in(format_trajectories(trajs));
  EXPECT_EQ(parse_trajectories(in, "mem"), trajs);
}

TEST(Parse, RulLengthMismatchIsIntegrityError) {
  auto dir = scratch_dir("mismatch");
  std::mt19937_64 rng(2);
  std::vector<Trajectory> trajs{random_trajectory(rng, 1, 30), random_trajectory(rng, 2, 30)};
  std::ofstream(dir / "train_X.txt") << format_trajectories(trajs);
  std::ofstream(dir / "test_X.txt") << format_trajectories(trajs);
  std::ofstream(dir / "RUL_X.txt") << "12\n";
  EXPECT_THROW(load_cmapss_subset(dir, "X"), IntegrityError);
  std::ofstream(dir / "RUL_X.txt") << "12\n40\n";
  EXPECT_EQ(load_cmapss_subset(dir, "X").test_rul, (std::vector<double>{12, 40}));
}

TEST(Parse, MissingFileNamesPath) {
  try {
    load_cmapss_subset("/nonexistent/cmapss", "FD001");
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/cmapss"), std::string::npos);
  }
}

TEST(Normalization, FitExamples) {
  auto s = fit_normalization({column_trajectory(1, {2, 6, 10})}, {});
  EXPECT_EQ(s.min[0], 2);
  EXPECT_EQ(s.max[0], 10);
  EXPECT_DOUBLE_EQ(normalize(6, 0, s), 0.5);
  EXPECT_EQ(normalize(2, 0, s), 0.0);
  EXPECT_EQ(normalize(10, 0, s), 1.0);

  auto c = fit_normalization({column_trajectory(1, {5, 5, 5})}, {});
  EXPECT_TRUE(c.is_constant(0));
  EXPECT_EQ(c.constant_features(), std::vector<std::size_t>{0});
  EXPECT_EQ(normalize(123.0, 0, c), 0.0);

  auto two = fit_normalization({column_trajectory(1, {0, 4}), column_trajectory(2, {2, 8})}, {});
  EXPECT_EQ(two.min[0], 0);
  EXPECT_EQ(two.max[0], 8);
}

TEST(Normalization, RoundTripIncludingOutOfRange) {
  std::mt19937_64 rng(3);
  std::vector<Trajectory> trajs;
  for (int u = 1; u <= 4; ++u) trajs.push_back(random_trajectory(rng, u, 25));
  auto s = fit_normalization(trajs, {});
  std::uniform_real_distribution<double> wide(-2000.0, 2000.0);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) % s.features();
    const double x = wide(rng);
    EXPECT_NEAR(denormalize(normalize(x, j, s), j, s), x, 1e-12 * std::max(1.0, std::abs(x)));
  }
}

TEST(Normalization, FeatureSelectionPicksColumns) {
  std::mt19937_64 rng(4);
  auto t = random_trajectory(rng, 1, 12);
  auto s = fit_normalization({t}, {3, 7});
  EXPECT_EQ(s.features(), 2u);
  auto w = make_windows(t, 12, s, kDefaultRc);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].features, 2u);
  EXPECT_DOUBLE_EQ(w[0].at(1, 4), normalize(t.cycles[4].values[7], 1, s));
  EXPECT_THROW(fit_normalization({t}, {99}), std::invalid_argument);
}

TEST(Labels, Examples) {
  EXPECT_EQ(rul_label(200, 10, 125), 1.0);
  EXPECT_DOUBLE_EQ(rul_label(200, 150, 125), 0.4);
  EXPECT_EQ(rul_label(200, 200, 125), 0.0);
  EXPECT_THROW(rul_label(200, 201, 125), std::invalid_argument);
  EXPECT_THROW(rul_label(200, 0, 125), std::invalid_argument);
  EXPECT_THROW(rul_label(200, 5, 0), std::invalid_argument);
}

TEST(Windows, Examples) {
  std::mt19937_64 rng(5);
  auto t5 = random_trajectory(rng, 1, 5);
  auto s5 = fit_normalization({t5}, {});
  auto w = make_windows(t5, 3, s5, kDefaultRc);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[0].end_cycle, 3u);
  EXPECT_EQ(w[2].end_cycle, 5u);

  auto t40 = random_trajectory(rng, 1, 40);
  EXPECT_EQ(make_windows(t40, 40, fit_normalization({t40}, {}), kDefaultRc).size(), 1u);
}

TEST(Windows, ShortTrajectoryIsLeftPaddedWithFirstRow) {
  std::mt19937_64 rng(6);
  auto t = random_trajectory(rng, 7, 19);
  auto s = fit_normalization({t}, {});
  auto w = make_windows(t, 40, s, kDefaultRc, DomainTag::target);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].features, kValueColumns);
  EXPECT_EQ(w[0].length, 40u);
  EXPECT_EQ(w[0].values.size(), kValueColumns * 40);
  EXPECT_FALSE(w[0].rul_scaled.has_value());
  for (std::size_t j = 0; j < kValueColumns; ++j) {
    const double first = normalize(t.cycles[0].values[j], j, s);
    for (std::size_t k = 0; k < 21; ++k) EXPECT_EQ(w[0].at(j, k), first);
    for (std::size_t k = 21; k < 40; ++k) EXPECT_EQ(w[0].at(j, k), normalize(t.cycles[k - 21].values[j], j, s));
  }
}

TEST(Windows, CountLabelAndRangeProperties) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t K = std::uniform_int_distribution<std::size_t>(1, 50)(rng);
    const std::size_t T = std::uniform_int_distribution<std::size_t>(K, 260)(rng);
    auto t = random_trajectory(rng, 1, T, 3);
    auto s = fit_normalization({t}, {});
    auto w = make_windows(t, K, s, kDefaultRc);
    ASSERT_EQ(w.size(), T - K + 1);
    double prev = 2.0;
    for (const auto& x : w) {
      const double expected = std::min(double(T - x.end_cycle), 125.0) / 125.0;
      EXPECT_EQ(*x.rul_scaled, expected);
      EXPECT_LE(*x.rul_scaled, prev);
      prev = *x.rul_scaled;
      if (T - x.end_cycle >= 125) {
        EXPECT_EQ(*x.rul_scaled, 1.0);
      }
      for (double v : x.values) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      // Last column of the window is the end cycle.
      EXPECT_EQ(x.at(0, K - 1), normalize(t.cycles[x.end_cycle - 1].values[0], 0, s));
    }
    EXPECT_EQ(*w.back().rul_scaled, 0.0);
  }
}

TEST(Split, ExamplesAndDisjointness) {
  std::mt19937_64 rng(8);
  std::vector<Trajectory> trajs;
  for (int u = 1; u <= 100; ++u) trajs.push_back(random_trajectory(rng, u, 3, 2));
  auto [train, val] = split_train_val(trajs, 42, 0.1);
  EXPECT_EQ(train.size(), 90u);
  EXPECT_EQ(val.size(), 10u);
  std::set<int> ids;
  for (auto& t : train) ids.insert(t.unit_id);
  for (auto& t : val) EXPECT_FALSE(ids.count(t.unit_id));
  auto again = split_train_val(trajs, 42, 0.1);
  EXPECT_EQ(again.first, train);
  EXPECT_EQ(again.second, val);
  EXPECT_THROW(split_train_val({trajs[0]}, 42, 0.1), std::invalid_argument);
  EXPECT_THROW(split_train_val(trajs, 42, 1.0), std::invalid_argument);
}

TEST(Dataset, BuildsFromSyntheticDomain) {
  SyntheticSpec spec;
  auto raw = make_synthetic_domain(spec, 11);
  DatasetOptions opts;
  opts.window = 16;
  auto ds = build_domain_dataset("syn", raw, opts);
  using P = DomainDataset::Part;
  EXPECT_EQ(ds.trajectories(P::train).size() + ds.trajectories(P::val).size(), spec.train_engines);
  EXPECT_EQ(ds.trajectories(P::val).size(), 4u);
  EXPECT_EQ(ds.size(P::test), spec.test_engines);
  EXPECT_EQ(ds.test_rul_truth().size(), spec.test_engines);
  std::size_t expected = 0;
  for (const auto& t : ds.trajectories(P::train)) expected += t.length - 16 + 1;
  EXPECT_EQ(ds.size(P::train), expected);

  // Test window is the engine's last window; label is capped, scaled truth.
  for (std::size_t i = 0; i < ds.size(P::test); ++i) {
    EXPECT_EQ(ds.windows(P::test)[i].end_cycle, ds.trajectories(P::test)[i].length);
    EXPECT_EQ(ds.label(P::test, i), std::min(ds.test_rul_truth()[i], 125.0) / 125.0);
  }
  auto target = ds.sample(P::train, 0, DomainTag::target);
  EXPECT_FALSE(target.rul_scaled.has_value());
  EXPECT_TRUE(ds.sample(P::train, 0, DomainTag::source).rul_scaled.has_value());
  // Stats come from the training split only.
  EXPECT_EQ(ds.stats().fitted_on, "syn");
  for (const auto& t : ds.trajectories(P::train))
    for (double v : t.rows) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
}

TEST(Dataset, CacheRoundTripIsExactAndHashStable) {
  auto raw = make_synthetic_domain(SyntheticSpec{}, 12);
  DatasetOptions opts;
  opts.window = 20;
  auto ds = build_domain_dataset("syn", raw, opts);
  std::stringstream a, b;
  write_cache(a, ds);
  write_cache(b, build_domain_dataset("syn", raw, opts));
  EXPECT_EQ(a.str(), b.str());
  auto back = read_cache(a);
  EXPECT_TRUE(back == ds);
  EXPECT_EQ(back.size(DomainDataset::Part::train), ds.size(DomainDataset::Part::train));

  std::string bytes = b.str();
  bytes[10] ^= 0x5a;  // corrupt the options hash
  std::istringstream corrupted(bytes);
  EXPECT_THROW(read_cache(corrupted), io::FormatError);
  std::istringstream truncated(b.str().substr(0, 100));
  EXPECT_THROW(read_cache(truncated), std::exception);
}

TEST(Synthetic, ShiftedDomainKeepsTaskButMovesFeatures) {
  SyntheticSpec spec;
  auto shift = make_affine_shift(spec.features, 1.0, 99);
  auto src = make_synthetic_domain(spec, 1);
  auto tgt = make_synthetic_domain(spec, 1, &shift);
  ASSERT_EQ(src.train.size(), tgt.train.size());
  EXPECT_EQ(src.train[0].length(), tgt.train[0].length());
  EXPECT_EQ(src.test_rul, tgt.test_rul);
  EXPECT_NE(src.train[0].cycles[0].values, tgt.train[0].cycles[0].values);
  for (const auto& t : src.train) EXPECT_NO_THROW(validate(t));
  for (std::size_t i = 0; i < src.test.size(); ++i) EXPECT_GE(src.test_rul[i], 1.0);
}

}  // namespace
}  // namespace lamanet::data
