#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "okapi/diagnostics.hpp"
#include "test_support.hpp"

namespace okapi {
namespace {

Matrix column(std::initializer_list<double> values) {
  Matrix m(values.size(), 1);
  std::copy(values.begin(), values.end(), m.data.begin());
  return m;
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double shift = 0.0, double scale = 1.0) {
  Matrix m(rows, cols);
  for (auto& v : m.data) v = shift + scale * rng.normal();
  return m;
}

TEST(Balance, HandComputedExample) {
  const auto r = balance(column({0.0, 2.0}), column({1.0, 3.0}));
  EXPECT_NEAR(r.mean_smd, 0.7071067811865475, 1e-15);
  EXPECT_NEAR(r.per_dim_vr[0], 1.0, 1e-15);
  EXPECT_NEAR(r.mean_abs_log_vr, 0.0, 1e-15);
}

TEST(Balance, IdenticalSetsArePerfectlyBalanced) {
  Rng rng(1);
  const auto a = random_matrix(rng, 30, 4);
  const auto r = balance(a, a);
  for (double s : r.per_dim_smd) EXPECT_EQ(s, 0.0);
  for (double v : r.per_dim_vr) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(r.score(), 0.0);
}

TEST(Balance, DoubledSetHasQuarterVarianceRatio) {
  const auto a = column({-1.5, -0.5, 0.5, 1.5});
  Matrix b = a;
  for (auto& v : b.data) v *= 2.0;
  const auto r = balance(a, b);
  EXPECT_NEAR(r.per_dim_vr[0], 0.25, 1e-15);
  EXPECT_NEAR(r.mean_abs_log_vr, std::log(4.0), 1e-15);
}

TEST(Balance, ErrorCases) {
  EXPECT_THROW(balance(Matrix(0, 1), column({1.0, 2.0})), EmptyInput);
  EXPECT_THROW(balance(column({1.0}), column({1.0, 2.0})), EmptyInput);
  EXPECT_THROW(balance(Matrix(2, 2), Matrix(2, 3)), DimensionMismatch);
  EXPECT_THROW(balance(column({1.0, 1.0}), column({2.0, 2.0})), ZeroVariance);
  EXPECT_THROW(balance(column({1.0, 1.0}), column({2.0, 3.0})), ZeroVariance);
  const auto constant = balance(column({1.0, 1.0}), column({1.0, 1.0}));
  EXPECT_EQ(constant.mean_smd, 0.0);
  EXPECT_EQ(constant.per_dim_vr[0], 1.0);
}

TEST(Balance, SymmetryAndScaleInvariance) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng.below(5);
    const auto a = random_matrix(rng, 2 + rng.below(30), d, rng.normal(), rng.uniform(0.5, 2.0));
    const auto b = random_matrix(rng, 2 + rng.below(30), d, rng.normal(), rng.uniform(0.5, 2.0));
    const auto ab = balance(a, b);
    const auto ba = balance(b, a);
    const double c = rng.uniform() < 0.5 ? -rng.uniform(0.1, 10.0) : rng.uniform(0.1, 10.0);
    Matrix ca = a, cb = b;
    for (auto& v : ca.data) v *= c;
    for (auto& v : cb.data) v *= c;
    const auto scaled = balance(ca, cb);
    for (std::size_t j = 0; j < d; ++j) {
      EXPECT_NEAR(ab.per_dim_smd[j], ba.per_dim_smd[j], 1e-12);
      EXPECT_NEAR(ab.per_dim_vr[j] * ba.per_dim_vr[j], 1.0, 1e-12);
      EXPECT_NEAR(scaled.per_dim_smd[j], ab.per_dim_smd[j], 1e-9 * std::max(1.0, ab.per_dim_smd[j]));
    }
    EXPECT_NEAR(ab.mean_abs_log_vr, ba.mean_abs_log_vr, 1e-12);
  }
}

EmbeddingSet shifted_gaussians(Rng& rng, std::size_t n_per, double offset) {
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < 2 * n_per; ++i) {
    const bool labeled = i % 2 == 0;
    const double shift = labeled ? offset : 0.0;
    samples.push_back({i, labeled ? kLabeledDomain : kUnlabeledDomain, std::nullopt,
                       {static_cast<float>(rng.normal() + shift), static_cast<float>(rng.normal() + 0.5 * shift)}});
  }
  return EmbeddingSet(2, 2, samples);
}

TEST(MatchedBalance, IdenticalNeighboursAreBalanced) {
  std::vector<Sample> samples;
  std::vector<MatchRecord> records;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const float x = static_cast<float>(i) * 0.3f;
    samples.push_back({2 * i, kLabeledDomain, std::nullopt, {x, 1.0f - x}});
    samples.push_back({2 * i + 1, kUnlabeledDomain, std::nullopt, {x, 1.0f - x}});
    records.push_back({2 * i, {2 * i + 1}, {0.0}, FilterReason::None});
  }
  const auto r = matched_balance(EmbeddingSet(2, 2, samples), records);
  EXPECT_EQ(r.mean_smd, 0.0);
  EXPECT_EQ(r.mean_abs_log_vr, 0.0);
  EXPECT_EQ(r.retention_rate, 1.0);
}

TEST(MatchedBalance, NoMatchesAndUnknownIds) {
  Rng rng(3);
  const auto data = shifted_gaussians(rng, 10, 1.0);
  const std::vector<MatchRecord> none{{0, {}, {}, FilterReason::QueryCaliper}};
  EXPECT_THROW(matched_balance(data, none), NoMatches);
  const std::vector<MatchRecord> unknown{{0, {999}, {0.1}, FilterReason::None}};
  EXPECT_THROW(matched_balance(data, unknown), ValidationError);
}

TEST(MatchedBalance, CalipersReduceImbalance) {
  Rng rng(4);
  const auto data = shifted_gaussians(rng, 300, 1.0);
  const auto model = fit_offline(data, {});
  const double unmatched = domain_balance(data).mean_smd;
  const auto records = matched_samples(data, model, {0.05, 0.2, 1.0}, 1, Direction::Both);
  const auto matched = matched_balance(data, records);
  EXPECT_LT(matched.mean_smd, unmatched);
}

TEST(Grid, SingleCellReturnsThatCell) {
  Rng rng(5);
  const auto data = shifted_gaussians(rng, 50, 1.0);
  const auto model = fit_offline(data, {});
  GridSpec grid;
  grid.t_fixed_values = {0.1};
  grid.t_std_values = {0.5};
  grid.tau_values = {2.0};
  const auto out = grid_search(data, model, grid);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].params, (CaliperParams{0.1, 0.5, 2.0}));
}

TEST(Grid, StrictCellDroppedByRetentionFloor) {
  Rng rng(6);
  const auto data = shifted_gaussians(rng, 50, 3.0);
  const auto model = fit_offline(data, {});
  GridSpec grid;
  grid.t_fixed_values = {0.0, 0.49};
  grid.min_retention = 0.2;
  const auto out = grid_search(data, model, grid);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].params.t_fixed, 0.0);
  grid.t_fixed_values = {0.49};
  EXPECT_THROW(grid_search(data, model, grid), EmptyGridAfterFilter);
}

TEST(Grid, DominantCellRanksFirst) {
  // Every labelled sample has an exact twin in the unlabelled domain, and a
  // tight std caliper can only pair points with identical propensity, i.e. the
  // twins.
  Rng rng(7);
  std::vector<Sample> samples;
  for (std::uint64_t i = 0; i < 40; ++i) {
    const float x = static_cast<float>(rng.normal()), y = static_cast<float>(rng.normal());
    samples.push_back({2 * i, kLabeledDomain, std::nullopt, {x, y}});
    samples.push_back({2 * i + 1, kUnlabeledDomain, std::nullopt, {x, y}});
  }
  for (std::uint64_t i = 80; i < 120; ++i)
    samples.push_back({i, kUnlabeledDomain, std::nullopt,
                       {static_cast<float>(rng.normal() + 2.0), static_cast<float>(rng.normal(0.0, 3.0))}});
  const EmbeddingSet data(2, 2, samples);
  auto model = PropensityModel::zeros(2, 2);
  model.weights = {-0.7, 0.3, 0.7, -0.3};
  GridSpec grid;
  grid.t_std_values = {kCaliperDisabled, 1e-12};
  const auto out = grid_search(data, model, grid);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].params.t_std, 1e-12);
  EXPECT_EQ(out[0].report.mean_smd, 0.0);
}

TEST(Grid, RankingIgnoresEnumerationOrder) {
  Rng rng(8);
  const auto data = shifted_gaussians(rng, 80, 1.0);
  const auto model = fit_offline(data, {});
  GridSpec a;
  a.t_fixed_values = {0.0, 0.05, 0.1};
  a.t_std_values = {kCaliperDisabled, 1.0, 0.25};
  a.tau_values = {1.0, 2.0};
  GridSpec b = a;
  std::reverse(b.t_fixed_values.begin(), b.t_fixed_values.end());
  std::reverse(b.t_std_values.begin(), b.t_std_values.end());
  std::reverse(b.tau_values.begin(), b.tau_values.end());
  const auto ra = grid_search(data, model, a, 1);
  const auto rb = grid_search(data, model, b, 2);
  EXPECT_EQ(grid_to_csv(ra, 1), grid_to_csv(rb, 1));
  for (std::size_t i = 1; i < ra.size(); ++i) EXPECT_LE(ra[i - 1].report.score(), ra[i].report.score());
}

TEST(Grid, CsvHeaderAndInfinity) {
  Rng rng(9);
  const auto data = shifted_gaussians(rng, 30, 1.0);
  const auto out = grid_search(data, fit_offline(data, {}), GridSpec{});
  const auto csv = grid_to_csv(out, 1);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "rank,t_fixed,t_std,tau,k,mean_smd,mean_abs_log_vr,score,retention");
  EXPECT_NE(csv.find(",inf,"), std::string::npos);
}

TEST(Grid, InvalidSpecRejected) {
  GridSpec grid;
  grid.tau_values = {};
  EXPECT_THROW(grid.validate(), ValidationError);
  grid = {};
  grid.min_retention = 1.5;
  EXPECT_THROW(grid.validate(), ValidationError);
}

}  // namespace
}  // namespace okapi
