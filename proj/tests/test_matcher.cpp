#include <gtest/gtest.h>

#include <set>

#include "okapi/matcher.hpp"
#include "test_support.hpp"

namespace okapi {
namespace {

const PropensityScore kEven{{0.5, 0.5}};

MatchRequest sanity_request() {
  MatchRequest req;
  req.queries.push_back(1, std::vector<double>{0.0, 1.0}, DomainLabel(0), kEven);
  req.keys.push_back(10, std::vector<double>{0.1, 1.0}, DomainLabel(1), kEven);
  req.keys.push_back(20, std::vector<double>{0.2, 1.0}, DomainLabel(0), kEven);
  req.keys.push_back(30, std::vector<double>{0.3, 1.0}, DomainLabel(1), kEven);
  return req;
}

TEST(FixedCaliper, Examples) {
  EXPECT_FALSE(fixed_caliper_pass({{0.95, 0.05}}, 0.1));
  EXPECT_TRUE(fixed_caliper_pass({{0.999, 0.001}}, 0.0));
  EXPECT_TRUE(fixed_caliper_pass(kEven, 0.49));
  EXPECT_TRUE(fixed_caliper_pass({{0.9, 0.1}}, 0.1));
  EXPECT_TRUE(fixed_caliper_pass({{0.5, 0.3, 0.2}}, 0.4));
  EXPECT_FALSE(fixed_caliper_pass({{0.7, 0.2, 0.1}}, 0.4));
}

TEST(StdCaliper, Examples) {
  const std::vector<PropensityScore> two{{{0.8, 0.2}}, {{0.6, 0.4}}};
  EXPECT_NEAR(std_caliper_threshold(two, 1.0), 0.1, 1e-15);
  const std::vector<PropensityScore> same{{{0.3, 0.7}}, {{0.3, 0.7}}, {{0.3, 0.7}}};
  EXPECT_EQ(std_caliper_threshold(same, 1.0), 0.0);
  EXPECT_EQ(std_caliper_threshold(two, kCaliperDisabled), kCaliperDisabled);
  const std::vector<PropensityScore> one{{{0.3, 0.7}}};
  EXPECT_THROW(std_caliper_threshold(one, 1.0), TooFewScores);
}

TEST(CaliperNN, OneDimensionalSanity) {
  const auto out = caliper_nn(sanity_request());
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].filtered, FilterReason::None);
  EXPECT_EQ(out[0].neighbor_ids, std::vector<std::uint64_t>{10});
  EXPECT_NEAR(out[0].distances[0], 0.00992561958002173, 1e-15);

  auto req = sanity_request();
  req.k = 2;
  const auto two = caliper_nn(req);
  EXPECT_EQ(two[0].neighbor_ids, (std::vector<std::uint64_t>{10, 30}));
  EXPECT_NEAR(two[0].distances[1], 0.0843474295576972, 1e-15);
}

TEST(CaliperNN, SameDomainKeysGiveNoValidKeys) {
  MatchRequest req;
  req.queries.push_back(1, std::vector<double>{1.0, 0.0}, DomainLabel(0), kEven);
  req.keys.push_back(2, std::vector<double>{1.0, 0.0}, DomainLabel(0), kEven);
  EXPECT_EQ(caliper_nn(req)[0].filtered, FilterReason::NoValidKeys);
}

TEST(CaliperNN, ConfidentQueryIsFiltered) {
  auto req = sanity_request();
  req.queries.e[0] = {{0.99, 0.01}};
  req.params.t_fixed = 0.05;
  EXPECT_EQ(caliper_nn(req)[0].filtered, FilterReason::QueryCaliper);
}

TEST(CaliperNN, SelfIdIsNeverAMatch) {
  MatchRequest req;
  req.queries.push_back(7, std::vector<double>{1.0, 0.0}, DomainLabel(0), kEven);
  req.keys.push_back(7, std::vector<double>{1.0, 0.0}, DomainLabel(1), kEven);
  req.keys.push_back(8, std::vector<double>{0.0, 1.0}, DomainLabel(1), kEven);
  EXPECT_EQ(caliper_nn(req)[0].neighbor_ids, std::vector<std::uint64_t>{8});
}

TEST(CaliperNN, TiesBreakByAscendingId) {
  MatchRequest req;
  req.queries.push_back(1, std::vector<double>{1.0, 0.0}, DomainLabel(0), kEven);
  for (std::uint64_t id : {9u, 4u, 6u}) req.keys.push_back(id, std::vector<double>{0.0, 1.0}, DomainLabel(1), kEven);
  req.k = 3;
  EXPECT_EQ(caliper_nn(req)[0].neighbor_ids, (std::vector<std::uint64_t>{4, 6, 9}));
}

TEST(CaliperNN, StdCaliperExcludesDistantScores) {
  MatchRequest req;
  req.queries.push_back(1, std::vector<double>{1.0, 0.0}, DomainLabel(0), {{0.6, 0.4}});
  req.keys.push_back(2, std::vector<double>{1.0, 0.0}, DomainLabel(1), {{0.2, 0.8}});
  req.keys.push_back(3, std::vector<double>{0.0, 1.0}, DomainLabel(1), {{0.55, 0.45}});
  req.params.t_std = 0.5;
  EXPECT_EQ(caliper_nn(req)[0].neighbor_ids, std::vector<std::uint64_t>{3});
}

TEST(CaliperNN, ErrorsOnMismatchedInputs) {
  auto req = sanity_request();
  req.keys.z.cols = 3;
  req.keys.z.data.resize(9, 0.0);
  EXPECT_THROW(caliper_nn(req), DimensionMismatch);

  auto arity = sanity_request();
  arity.keys.e[0] = {{0.2, 0.3, 0.5}};
  EXPECT_THROW(caliper_nn(arity), ArityMismatch);

  auto k0 = sanity_request();
  k0.k = 0;
  EXPECT_THROW(caliper_nn(k0), ValidationError);
}

TEST(CaliperNN, EmptyKeysAndLargeK) {
  auto req = sanity_request();
  req.k = 4;
  EXPECT_EQ(caliper_nn(req)[0].filtered, FilterReason::NoValidKeys);
  EXPECT_EQ(brute_force_nn(req)[0].filtered, FilterReason::NoValidKeys);
  req.keys = {};
  req.k = 1;
  EXPECT_EQ(brute_force_nn(req)[0].filtered, FilterReason::NoValidKeys);
}

TEST(CaliperNN, AgreesWithBruteForceOnRandomInstances) {
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const auto req = testing::random_request(rng, testing::random_shape(rng));
    ASSERT_EQ(caliper_nn(req), brute_force_nn(req)) << "instance " << trial;
  }
}

TEST(CaliperNN, ThreadCountDoesNotChangeOutput) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto req = testing::random_request(rng, {150 + rng.below(200), 150 + rng.below(200), 4, 3});
    const auto one = caliper_nn(req, 1);
    EXPECT_EQ(one, caliper_nn(req, 3));
    EXPECT_EQ(one, caliper_nn(req, 8));
  }
}

TEST(CaliperNN, NeighboursAreAlwaysCrossDomain) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto req = testing::random_request(rng, testing::random_shape(rng));
    const auto out = caliper_nn_indexed(req);
    for (std::size_t q = 0; q < out.records.size(); ++q)
      for (std::size_t pos : out.key_positions[q]) EXPECT_NE(req.keys.s[pos], req.queries.s[q]);
  }
}

TEST(CaliperNN, DisabledCalipersReduceToPlainKnn) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto req = testing::random_request(rng, testing::random_shape(rng));
    req.params = CaliperParams::disabled();
    EXPECT_EQ(caliper_nn(req), testing::plain_cross_domain_knn(req));
  }
}

// All candidate keys of one query: the largest k that still matches returns
// every candidate.
std::set<std::uint64_t> candidates(const MatchRequest& req, std::size_t q) {
  for (std::size_t k = req.keys.size(); k >= 1; --k) {
    MatchRequest r = req;
    r.k = k;
    const auto rec = caliper_nn(r)[q];
    if (rec.matched()) return {rec.neighbor_ids.begin(), rec.neighbor_ids.end()};
    if (rec.filtered == FilterReason::QueryCaliper) return {};
  }
  return {};
}

TEST(CaliperNN, FixedCaliperNests) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto req = testing::random_request(rng, testing::random_shape(rng));
    req.params.t_std = kCaliperDisabled;
    std::size_t prev_unfiltered = req.queries.size();
    for (double t : {0.0, 0.01, 0.05, 0.1, 0.3, 0.49}) {
      req.params.t_fixed = t;
      std::size_t unfiltered = 0;
      for (const auto& r : caliper_nn(req)) unfiltered += r.filtered != FilterReason::QueryCaliper;
      EXPECT_LE(unfiltered, prev_unfiltered);
      prev_unfiltered = unfiltered;
    }
  }
}

TEST(CaliperNN, StdCaliperNests) {
  Rng rng(18);
  for (int trial = 0; trial < 40; ++trial) {
    auto req = testing::random_request(rng, {1 + rng.below(12), 1 + rng.below(40), 3, 2 + rng.below(3)});
    req.params.t_fixed = 0.0;
    std::vector<std::set<std::uint64_t>> prev;
    for (double t : {kCaliperDisabled, 3.0, 1.0, 0.25, 0.05}) {
      req.params.t_std = t;
      std::vector<std::set<std::uint64_t>> now;
      for (std::size_t q = 0; q < req.queries.size(); ++q) now.push_back(candidates(req, q));
      if (!prev.empty())
        for (std::size_t q = 0; q < now.size(); ++q)
          for (auto id : now[q]) {
            EXPECT_TRUE(prev[q].count(id)) << "pair appeared under a tighter caliper";
          }
      prev = std::move(now);
    }
  }
}

TEST(CaliperNN, HigherTemperatureNeverShrinksPassingQueries) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto model = PropensityModel::zeros(3, 2);
    for (auto& w : model.weights) w = 2.0 * rng.normal();
    for (auto& b : model.bias) b = rng.normal();
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < 60; ++i)
      samples.push_back({i, DomainLabel(i % 2), std::nullopt,
                         {static_cast<float>(rng.normal()), static_cast<float>(rng.normal()),
                          static_cast<float>(rng.normal())}});
    const EmbeddingSet data(3, 2, samples);
    for (double t_fixed : {0.0, 0.01, 0.1}) {
      std::set<std::uint64_t> prev;
      for (double tau : {1.0, 1.3, 1.8, 2.5, 10.0}) {
        std::set<std::uint64_t> passing;
        for (const auto& r : matched_samples(data, model, {t_fixed, kCaliperDisabled, tau}, 1, Direction::Both))
          if (r.filtered != FilterReason::QueryCaliper) passing.insert(r.query_id);
        for (auto id : prev) EXPECT_TRUE(passing.count(id));
        prev = std::move(passing);
      }
    }
  }
}

EmbeddingSet two_blob(Rng& rng, std::size_t n_per) {
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < 2 * n_per; ++i) {
    const bool labeled = i < n_per;
    samples.push_back({i, labeled ? kLabeledDomain : kUnlabeledDomain, std::nullopt,
                       {static_cast<float>(rng.normal() + (labeled ? 1.0 : 0.0)), static_cast<float>(rng.normal())}});
  }
  return EmbeddingSet(2, 2, samples);
}

TEST(MatchedSamples, SymmetricTwoPointDataset) {
  const EmbeddingSet data(2, 2,
                          {{1, DomainLabel(0), std::nullopt, {1.0f, 0.0f}}, {2, DomainLabel(1), std::nullopt, {0.0f, 1.0f}}});
  const auto out = matched_samples(data, PropensityModel::zeros(2, 2), CaliperParams::disabled(), 1, Direction::Both);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].query_id, 2u);  // labelled -> unlabelled runs first
  EXPECT_EQ(out[0].neighbor_ids, std::vector<std::uint64_t>{1});
  EXPECT_EQ(out[1].neighbor_ids, std::vector<std::uint64_t>{2});
}

TEST(MatchedSamples, DirectionsAndCardinality) {
  Rng rng(10);
  const auto data = two_blob(rng, 40);
  const auto model = fit_offline(data, {});
  const CaliperParams params{0.05, 1.0, 1.0};
  EXPECT_EQ(matched_samples(data, model, params, 1, Direction::Both).size(), 80u);
  const auto lu = matched_samples(data, model, params, 1, Direction::LabeledToUnlabeled);
  ASSERT_EQ(lu.size(), 40u);
  for (const auto& r : lu) EXPECT_LT(r.query_id, 40u);
  const auto ul = matched_samples(data, model, params, 1, Direction::UnlabeledToLabeled);
  for (const auto& r : ul) EXPECT_GE(r.query_id, 40u);
}

TEST(MatchedSamples, EqualsBruteForceDriver) {
  Rng rng(11);
  const auto data = two_blob(rng, 60);
  const auto model = fit_offline(data, {});
  const CaliperParams params{0.05, 0.5, 1.5};
  std::vector<MatchRecord> oracle;
  for (const auto& req : build_requests(data, model, params, 2, Direction::Both)) {
    const auto part = brute_force_nn(req);
    oracle.insert(oracle.end(), part.begin(), part.end());
  }
  EXPECT_EQ(matched_samples(data, model, params, 2, Direction::Both, 4), oracle);
}

TEST(MatchedSamples, MulticlassOnlySupportsBoth) {
  std::vector<Sample> samples;
  for (std::uint32_t i = 0; i < 9; ++i)
    samples.push_back({i, DomainLabel(i % 3), std::nullopt, {static_cast<float>(i) + 1.0f, 1.0f}});
  const EmbeddingSet data(2, 3, samples);
  const auto model = PropensityModel::zeros(2, 3);
  EXPECT_EQ(matched_samples(data, model, CaliperParams::disabled(), 1, Direction::Both).size(), 9u);
  EXPECT_THROW(matched_samples(data, model, CaliperParams::disabled(), 1, Direction::LabeledToUnlabeled),
               ValidationError);
  EXPECT_THROW(matched_samples(data, PropensityModel::zeros(2, 2), CaliperParams::disabled(), 1, Direction::Both),
               ArityMismatch);
}

TEST(CaliperParams, Validation) {
  EXPECT_NO_THROW(CaliperParams::disabled().validate());
  EXPECT_THROW((CaliperParams{0.5, 1.0, 1.0}.validate()), ValidationError);
  EXPECT_THROW((CaliperParams{-0.1, 1.0, 1.0}.validate()), ValidationError);
  EXPECT_THROW((CaliperParams{0.1, 0.0, 1.0}.validate()), ValidationError);
  EXPECT_THROW((CaliperParams{0.1, 1.0, 0.0}.validate()), ValidationError);
}

TEST(Summary, CountsRetention) {
  const std::vector<MatchRecord> records{{1, {2}, {0.5}, FilterReason::None},
                                         {2, {}, {}, FilterReason::QueryCaliper},
                                         {3, {1, 4}, {0.25, 0.75}, FilterReason::None},
                                         {4, {}, {}, FilterReason::NoValidKeys}};
  const auto s = summarize(records);
  EXPECT_EQ(s.records, 4u);
  EXPECT_EQ(s.matched, 2u);
  EXPECT_DOUBLE_EQ(s.retention, 0.5);
  EXPECT_DOUBLE_EQ(s.mean_distance, 0.5);
}

}  // namespace
}  // namespace okapi
