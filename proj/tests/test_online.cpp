#include <gtest/gtest.h>

#include <cmath>

#include "okapi/online.hpp"
#include "test_support.hpp"

namespace okapi {
namespace {

EmaState constant_ema(std::vector<double> shadow, double zeta, std::size_t total) {
  EmaState s;
  s.shadow = std::move(shadow);
  s.zeta_start = zeta;
  s.zeta_end = zeta;
  s.total_steps = total;
  return s;
}

TEST(Ema, ZeroAndOneDecay) {
  const std::vector<double> online{1.5, -2.0, 3.25};
  auto free = constant_ema({0.0, 0.0, 0.0}, 0.0, 10);
  ema_update(free, online);
  EXPECT_EQ(free.shadow, online);
  EXPECT_EQ(free.step, 1u);
  auto frozen = constant_ema({4.0, 5.0, 6.0}, 1.0, 10);
  ema_update(frozen, online);
  EXPECT_EQ(frozen.shadow, (std::vector<double>{4.0, 5.0, 6.0}));
}

TEST(Ema, TwoStepsOfHalfDecay) {
  auto s = constant_ema({0.0}, 0.5, 10);
  const std::vector<double> one{1.0};
  ema_update(s, one);
  ema_update(s, one);
  EXPECT_EQ(s.shadow[0], 0.75);
}

TEST(Ema, LengthMismatch) {
  auto s = constant_ema({0.0, 0.0}, 0.5, 10);
  const std::vector<double> wrong{1.0};
  EXPECT_THROW(ema_update(s, wrong), LengthMismatch);
}

TEST(Ema, ClosedFormAfterManySteps) {
  Rng rng(1);
  for (double zeta : {0.0, 0.5, 0.9, 0.996, 1.0}) {
    std::vector<double> s0(6), p(6);
    for (auto& v : s0) v = rng.normal();
    for (auto& v : p) v = rng.normal();
    auto s = constant_ema(s0, zeta, 1000);
    for (int t = 0; t < 1000; ++t) ema_update(s, p);
    const double zt = std::pow(zeta, 1000.0);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(s.shadow[i], zt * s0[i] + (1.0 - zt) * p[i], 1e-12);
  }
}

TEST(Ema, ScheduleEndpointsAndClamp) {
  EmaState s;
  s.zeta_start = 0.99;
  s.zeta_end = 0.999;
  s.total_steps = 700;
  EXPECT_EQ(s.zeta_at(0), 0.99);
  EXPECT_EQ(s.zeta_at(700), 0.999);
  EXPECT_EQ(s.zeta_at(5000), 0.999);
  EXPECT_NEAR(s.zeta_at(350), 0.9945, 1e-15);
  for (std::size_t t = 1; t <= 700; ++t) EXPECT_GE(s.zeta_at(t), s.zeta_at(t - 1));
}

TEST(Lambda, WarmupSchedule) {
  LambdaSchedule l{2.0, 0.1, 1000};
  EXPECT_EQ(l.at(0), 0.0);
  EXPECT_DOUBLE_EQ(l.at(50), 1.0);
  for (std::size_t t = 100; t <= 1000; t += 37) EXPECT_EQ(l.at(t), 2.0);
  LambdaSchedule none{1.0, 0.0, 10};
  EXPECT_EQ(none.at(0), 1.0);
}

std::vector<BankEntry> batch(std::uint64_t first, std::size_t n) {
  std::vector<BankEntry> out;
  for (std::uint64_t i = first; i < first + n; ++i)
    out.push_back({i, {static_cast<double>(i), -static_cast<double>(i)}, DomainLabel(static_cast<std::uint32_t>(i % 3))});
  return out;
}

std::vector<std::uint64_t> ids(const MemoryBank& bank) {
  std::vector<std::uint64_t> out;
  for (const auto& e : bank.entries()) out.push_back(e.id);
  return out;
}

TEST(Bank, FifoOverwrite) {
  MemoryBank bank(4);
  bank.push(batch(1, 2));
  EXPECT_EQ(bank.size(), 2u);
  bank.push(batch(3, 2));
  bank.push(batch(5, 2));
  EXPECT_EQ(ids(bank), (std::vector<std::uint64_t>{3, 4, 5, 6}));
  bank.push(batch(7, 4));
  EXPECT_EQ(ids(bank), (std::vector<std::uint64_t>{7, 8, 9, 10}));
  EXPECT_THROW(bank.push(batch(11, 5)), BatchLargerThanBank);
}

TEST(Bank, UnevenPushesStayAligned) {
  Rng rng(2);
  MemoryBank bank(13);
  std::vector<BankEntry> reference;
  std::uint64_t next = 0;
  for (int round = 0; round < 200; ++round) {
    const std::size_t n = rng.below(14);
    const auto b = batch(next, n);
    next += n;
    bank.push(b);
    reference.insert(reference.end(), b.begin(), b.end());
    if (reference.size() > 13) reference.erase(reference.begin(), reference.end() - 13);
    const auto entries = bank.entries();
    ASSERT_EQ(entries.size(), reference.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      EXPECT_EQ(entries[i].id, reference[i].id);
      EXPECT_EQ(entries[i].s, reference[i].s);
      EXPECT_EQ(entries[i].z, reference[i].z);
    }
  }
}

TEST(Bank, RestoreReproducesState) {
  MemoryBank bank(5);
  bank.push(batch(0, 3));
  bank.push(batch(3, 4));
  auto copy = MemoryBank::restore(bank.capacity(), bank.write_cursor(), bank.slots());
  bank.push(batch(7, 2));
  copy.push(batch(7, 2));
  EXPECT_EQ(ids(bank), ids(copy));
}

TEST(Consistency, ParallelAndOrthogonal) {
  const std::vector<double> q{2.0, 0.0};
  const std::vector<std::vector<double>> parallel{{5.0, 0.0}};
  EXPECT_NEAR(consistency_loss(q, parallel).loss, 0.0, 1e-15);
  const std::vector<std::vector<double>> orthogonal{{0.0, 3.0}};
  EXPECT_NEAR(consistency_loss(q, orthogonal).loss, 2.0, 1e-15);
  const std::vector<std::vector<double>> opposite{{-1.0, 0.0}};
  EXPECT_NEAR(consistency_loss(q, opposite).loss, 4.0, 1e-15);
}

TEST(Consistency, EmptyNeighboursAndDegenerate) {
  const std::vector<double> q{1.0, 2.0};
  const auto r = consistency_loss(q, {});
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad, (std::vector<double>{0.0, 0.0}));
  const std::vector<double> zero{0.0, 0.0};
  const std::vector<std::vector<double>> n{{1.0, 0.0}};
  EXPECT_THROW(consistency_loss(zero, n), DegenerateVector);
}

TEST(Consistency, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng.below(7);
    std::vector<double> q(d);
    for (auto& v : q) v = rng.normal();
    std::vector<std::vector<double>> neighbors(1 + rng.below(4), std::vector<double>(d));
    for (auto& n : neighbors)
      for (auto& v : n) v = rng.normal();
    const auto r = consistency_loss(q, neighbors);
    EXPECT_GE(r.loss, 0.0);
    EXPECT_LE(r.loss, 4.0);
    const auto numeric = testing::central_differences(
        q, [&](const std::vector<double>& p) { return consistency_loss(p, neighbors).loss; }, 1e-6);
    for (std::size_t i = 0; i < d; ++i) EXPECT_LT(testing::relative_error(r.grad[i], numeric[i], 1e-6), 1e-6);
  }
}

TEST(Consistency, NeighbourPerturbationLeavesGradientShape) {
  const std::vector<double> q{0.3, -1.2, 0.7};
  std::vector<std::vector<double>> n{{1.0, 0.0, 0.0}};
  const auto a = consistency_loss(q, n);
  n[0][1] = 0.5;
  const auto b = consistency_loss(q, n);
  EXPECT_NE(a.loss, b.loss);
  EXPECT_EQ(a.grad.size(), q.size());
  EXPECT_EQ(b.grad.size(), q.size());
}

StepBatch make_batch(Rng& rng, std::uint64_t first, std::size_t n, std::size_t dim, bool two_domains) {
  StepBatch b;
  b.target_z = Matrix(n, dim);
  for (auto& v : b.target_z.data) v = rng.normal();
  b.online_z = b.target_z;
  for (std::size_t i = 0; i < n; ++i) {
    b.ids.push_back(first + i);
    b.s.push_back(two_domains ? DomainLabel(static_cast<std::uint32_t>(i % 2)) : DomainLabel(0));
  }
  return b;
}

TEST(MatchStep, SingleDomainFirstBatchFindsNothing) {
  Rng rng(4);
  MemoryBank bank(16);
  auto model = PropensityModel::zeros(3, 2);
  const auto b = make_batch(rng, 0, 6, 3, false);
  const auto r = okapi_match_step(b, bank, model, CaliperParams::disabled(), 1, QuerySource::Target, 0.1);
  for (const auto& rec : r.records) EXPECT_EQ(rec.filtered, FilterReason::NoValidKeys);
  EXPECT_FALSE(r.propensity_updated);
  EXPECT_EQ(bank.size(), 6u);
}

TEST(MatchStep, MatchesAgainstBatchAndBank) {
  Rng rng(5);
  MemoryBank bank(10);
  auto model = PropensityModel::zeros(3, 2);
  for (std::size_t round = 0; round < 5; ++round) {
    const auto b = make_batch(rng, 100 * round, 4, 3, true);
    const auto previous = bank.entries();
    const std::size_t before = bank.size();
    const auto ps_before = model;

    MatchRequest req;
    const auto scores = score_all(model, b.target_z, 1.0);
    for (std::size_t i = 0; i < 4; ++i) req.queries.push_back(b.ids[i], b.target_z.row(i), b.s[i], scores[i]);
    for (std::size_t i = 0; i < 4; ++i) req.keys.push_back(b.ids[i], b.target_z.row(i), b.s[i], scores[i]);
    for (const auto& e : previous) req.keys.push_back(e.id, e.z, e.s, score(model, e.z, 1.0));

    const auto r = okapi_match_step(b, bank, model, CaliperParams::disabled(), 1, QuerySource::Target, 0.1);
    EXPECT_EQ(r.records, brute_force_nn(req));
    EXPECT_EQ(bank.size(), std::min<std::size_t>(before + 4, 10));
    EXPECT_TRUE(r.propensity_updated);
    EXPECT_NE(model.weights, ps_before.weights);
    for (std::size_t q = 0; q < 4; ++q) {
      ASSERT_EQ(r.neighbors[q].size(), r.records[q].neighbor_ids.size());
      for (auto s : r.neighbor_domains[q]) EXPECT_NE(s, b.s[q]);
    }
  }
}

TEST(MatchStep, OnlineQueriesUseOnlineEncodings) {
  Rng rng(6);
  MemoryBank bank(8);
  auto model = PropensityModel::zeros(2, 2);
  auto b = make_batch(rng, 0, 4, 2, true);
  b.online_z.row(0)[0] = 1.0;
  b.online_z.row(0)[1] = 0.0;
  b.target_z.row(1)[0] = 0.9;
  b.target_z.row(1)[1] = 0.01;
  b.target_z.row(3)[0] = -1.0;
  b.target_z.row(3)[1] = 0.0;
  const auto r = okapi_match_step(b, bank, model, CaliperParams::disabled(), 1, QuerySource::Online, 0.0);
  EXPECT_EQ(r.records[0].neighbor_ids, std::vector<std::uint64_t>{1});
}

}  // namespace
}  // namespace okapi
