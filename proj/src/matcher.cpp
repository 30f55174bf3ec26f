#include "okapi/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace okapi {

void CaliperParams::validate() const {
  if (!(t_fixed >= 0.0 && t_fixed < 0.5)) throw ValidationError("t_fixed must lie in [0, 0.5)");
  if (!(t_std > 0.0)) throw ValidationError("t_std must be positive (or inf to disable)");
  if (!(tau > 0.0) || std::isinf(tau)) throw ValidationError("tau must be a positive finite number");
}

void MatchSide::push_back(std::uint64_t id, std::span<const double> encoding, DomainLabel domain,
                          PropensityScore score) {
  z.append_row(encoding);
  ids.push_back(id);
  s.push_back(domain);
  e.push_back(std::move(score));
}

bool fixed_caliper_pass(const PropensityScore& e, double t_fixed) {
  if (e.arity() == 2) return e[1] >= t_fixed && e[1] <= 1.0 - t_fixed;
  return *std::max_element(e.probs.begin(), e.probs.end()) <= 1.0 - t_fixed;
}

double propensity_scalar(const PropensityScore& e) {
  if (e.arity() == 2) return e[1];
  return *std::max_element(e.probs.begin(), e.probs.end());
}

namespace {

// Welford's recurrence; identical inputs give exactly zero.
double population_sd(std::span<const double> values) {
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t n = 0;
  for (double x : values) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  return std::sqrt(m2 / static_cast<double>(n));
}

double threshold_from_scalars(std::span<const double> scalars, double t_std) {
  if (std::isinf(t_std)) return kCaliperDisabled;
  return t_std * population_sd(scalars);
}

void check_request(const MatchRequest& req) {
  req.params.validate();
  if (req.k == 0) throw ValidationError("k must be at least 1");
  for (const MatchSide* side : {&req.queries, &req.keys}) {
    if (side->z.rows != side->size() || side->s.size() != side->size() || side->e.size() != side->size())
      throw LengthMismatch("match side columns differ in length");
  }
  if (req.queries.size() > 0 && req.keys.size() > 0 && req.queries.z.cols != req.keys.z.cols)
    throw DimensionMismatch("queries have dimension " + std::to_string(req.queries.z.cols) + " but keys have " +
                            std::to_string(req.keys.z.cols));
  std::size_t arity = 0;
  for (const MatchSide* side : {&req.queries, &req.keys}) {
    for (const auto& e : side->e) {
      if (arity == 0) arity = e.arity();
      if (e.arity() != arity || arity == 0) throw ArityMismatch("propensity scores have differing arities");
    }
  }
}

Matrix normalized_rows(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const auto unit = l2_normalize(m.row(i));
    std::copy(unit.begin(), unit.end(), out.row(i).begin());
  }
  return out;
}

struct Candidate {
  double distance;
  std::uint64_t id;
  std::size_t position;
};

bool closer(const Candidate& a, const Candidate& b) {
  if (a.distance != b.distance) return a.distance < b.distance;
  if (a.id != b.id) return a.id < b.id;
  return a.position < b.position;
}

}  // namespace

double std_caliper_threshold(std::span<const PropensityScore> scores, double t_std) {
  if (scores.size() < 2) throw TooFewScores("std-caliper needs at least two propensity scores");
  std::vector<double> scalars;
  scalars.reserve(scores.size());
  for (const auto& e : scores) scalars.push_back(propensity_scalar(e));
  return threshold_from_scalars(scalars, t_std);
}

std::vector<MatchRecord> caliper_nn(const MatchRequest& req, unsigned threads) {
  return caliper_nn_indexed(req, threads).records;
}

IndexedMatches caliper_nn_indexed(const MatchRequest& req, unsigned threads) {
  check_request(req);
  const MatchSide& queries = req.queries;
  const MatchSide& keys = req.keys;
  const std::size_t k = req.k;
  const double t_fixed = req.params.t_fixed;

  const Matrix query_unit = normalized_rows(queries.z);
  const Matrix key_unit = normalized_rows(keys.z);

  std::vector<double> scalars;
  scalars.reserve(queries.size() + keys.size());
  for (const auto& e : queries.e) scalars.push_back(propensity_scalar(e));
  for (const auto& e : keys.e) scalars.push_back(propensity_scalar(e));
  const double threshold = scalars.size() >= 2 ? threshold_from_scalars(scalars, req.params.t_std) : 0.0;

  // Keys failing the fixed caliper never become candidates.
  std::vector<std::size_t> live_keys;
  live_keys.reserve(keys.size());
  for (std::size_t j = 0; j < keys.size(); ++j)
    if (fixed_caliper_pass(keys.e[j], t_fixed)) live_keys.push_back(j);

  IndexedMatches result;
  result.records.resize(queries.size());
  result.key_positions.resize(queries.size());

  auto match_range = [&](std::size_t begin, std::size_t end) {
    std::vector<Candidate> pool;
    pool.reserve(live_keys.size());
    for (std::size_t qi = begin; qi < end; ++qi) {
      MatchRecord& rec = result.records[qi];
      rec.query_id = queries.ids[qi];
      if (!fixed_caliper_pass(queries.e[qi], t_fixed)) {
        rec.filtered = FilterReason::QueryCaliper;
        continue;
      }
      const double q_scalar = scalars[qi];
      const DomainLabel q_domain = queries.s[qi];
      const auto q = query_unit.row(qi);
      pool.clear();
      for (std::size_t j : live_keys) {
        if (keys.s[j] == q_domain || keys.ids[j] == rec.query_id) continue;
        if (std::abs(q_scalar - scalars[queries.size() + j]) > threshold) continue;
        pool.push_back({squared_distance(q, key_unit.row(j)), keys.ids[j], j});
      }
      if (pool.size() < k) {
        rec.filtered = FilterReason::NoValidKeys;
        continue;
      }
      std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end(), closer);
      rec.neighbor_ids.reserve(k);
      rec.distances.reserve(k);
      for (std::size_t r = 0; r < k; ++r) {
        rec.neighbor_ids.push_back(pool[r].id);
        rec.distances.push_back(pool[r].distance);
        result.key_positions[qi].push_back(pool[r].position);
      }
    }
  };

  const std::size_t n = queries.size();
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), std::max<std::size_t>(1, n / 16));
  if (workers <= 1) {
    match_range(0, n);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin < end) pool.emplace_back(match_range, begin, end);
    }
  }
  return result;
}

std::vector<MatchRequest> build_requests(const EmbeddingSet& data, const PropensityModel& model,
                                         const CaliperParams& params, std::size_t k, Direction direction) {
  params.validate();
  if (model.dim != data.dim())
    throw DimensionMismatch("propensity model dimension " + std::to_string(model.dim) +
                            " does not match embeddings of dimension " + std::to_string(data.dim()));
  if (model.domain_count != data.domain_count())
    throw ArityMismatch("propensity model has " + std::to_string(model.domain_count) + " outputs but data has " +
                        std::to_string(data.domain_count()) + " domains");
  if (data.domains_present().size() < 2) throw ValidationError("matching needs at least two domains present");

  MatchSide all;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto z = data.embedding(i);
    all.push_back(data[i].id, z, data[i].domain, score(model, z, params.tau));
  }

  auto side_of = [&](DomainLabel domain) {
    MatchSide out;
    for (std::size_t i = 0; i < all.size(); ++i)
      if (all.s[i] == domain) out.push_back(all.ids[i], all.z.row(i), all.s[i], all.e[i]);
    return out;
  };
  auto request = [&](MatchSide queries, MatchSide keys) {
    MatchRequest r;
    r.queries = std::move(queries);
    r.keys = std::move(keys);
    r.k = k;
    r.params = params;
    return r;
  };

  std::vector<MatchRequest> out;
  if (data.domain_count() == 2) {
    if (direction != Direction::UnlabeledToLabeled)
      out.push_back(request(side_of(kLabeledDomain), side_of(kUnlabeledDomain)));
    if (direction != Direction::LabeledToUnlabeled)
      out.push_back(request(side_of(kUnlabeledDomain), side_of(kLabeledDomain)));
  } else {
    if (direction != Direction::Both)
      throw ValidationError("directional matching needs binary (labelled/unlabelled) domains");
    out.push_back(request(all, all));
  }
  return out;
}

std::vector<MatchRecord> matched_samples(const EmbeddingSet& data, const PropensityModel& model,
                                         const CaliperParams& params, std::size_t k, Direction direction,
                                         unsigned threads) {
  std::vector<MatchRecord> out;
  for (const auto& req : build_requests(data, model, params, k, direction)) {
    auto part = caliper_nn(req, threads);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

MatchSummary summarize(std::span<const MatchRecord> records) {
  MatchSummary s;
  s.records = records.size();
  double total = 0.0;
  std::size_t pairs = 0;
  for (const auto& r : records) {
    if (!r.matched()) continue;
    ++s.matched;
    for (double d : r.distances) total += d;
    pairs += r.distances.size();
  }
  s.retention = s.records ? static_cast<double>(s.matched) / static_cast<double>(s.records) : 0.0;
  s.mean_distance = pairs ? total / static_cast<double>(pairs) : 0.0;
  return s;
}

}  // namespace okapi
