// Reference implementation of CaliperNN. Deliberately shares nothing with
// matcher.cpp beyond the public types: every rule is re-stated inline and
// checked per (query, key) pair, and the full candidate list is sorted.

#include <algorithm>
#include <cmath>
#include <tuple>

#include "okapi/matcher.hpp"

namespace okapi {
namespace {

std::vector<double> unit(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  const double norm = std::sqrt(sum);
  if (!(norm > 1e-30)) throw DegenerateVector("cannot normalise a vector with norm <= 1e-30");
  std::vector<double> out;
  out.reserve(v.size());
  for (double x : v) out.push_back(x / norm);
  return out;
}

bool inside_fixed_band(const std::vector<double>& p, double t) {
  if (p.size() == 2) return !(p[1] < t) && !(p[1] > 1.0 - t);
  double top = p[0];
  for (double x : p) top = std::max(top, x);
  return !(top > 1.0 - t);
}

double summary(const std::vector<double>& p) {
  if (p.size() == 2) return p[1];
  double top = p[0];
  for (double x : p) top = std::max(top, x);
  return top;
}

}  // namespace

std::vector<MatchRecord> brute_force_nn(const MatchRequest& req) {
  req.params.validate();
  if (req.k == 0) throw ValidationError("k must be at least 1");
  const auto& Q = req.queries;
  const auto& K = req.keys;
  if (Q.z.rows != Q.ids.size() || Q.s.size() != Q.ids.size() || Q.e.size() != Q.ids.size() ||
      K.z.rows != K.ids.size() || K.s.size() != K.ids.size() || K.e.size() != K.ids.size())
    throw LengthMismatch("match side columns differ in length");
  if (!Q.ids.empty() && !K.ids.empty() && Q.z.cols != K.z.cols)
    throw DimensionMismatch("queries and keys differ in dimension");
  std::size_t arity = 0;
  for (const auto& e : Q.e) {
    if (arity == 0) arity = e.probs.size();
    if (e.probs.size() != arity || arity == 0) throw ArityMismatch("propensity scores have differing arities");
  }
  for (const auto& e : K.e) {
    if (arity == 0) arity = e.probs.size();
    if (e.probs.size() != arity || arity == 0) throw ArityMismatch("propensity scores have differing arities");
  }

  // Std-caliper threshold over the query scores followed by the key scores.
  double threshold = 0.0;
  if (Q.ids.size() + K.ids.size() >= 2) {
    if (std::isinf(req.params.t_std)) {
      threshold = std::numeric_limits<double>::infinity();
    } else {
      double mean = 0.0, m2 = 0.0;
      std::size_t n = 0;
      auto add = [&](double x) {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
      };
      for (const auto& e : Q.e) add(summary(e.probs));
      for (const auto& e : K.e) add(summary(e.probs));
      threshold = req.params.t_std * std::sqrt(m2 / static_cast<double>(n));
    }
  }

  std::vector<MatchRecord> out;
  for (std::size_t qi = 0; qi < Q.ids.size(); ++qi) {
    MatchRecord rec;
    rec.query_id = Q.ids[qi];
    if (!inside_fixed_band(Q.e[qi].probs, req.params.t_fixed)) {
      rec.filtered = FilterReason::QueryCaliper;
      out.push_back(rec);
      continue;
    }
    std::vector<std::tuple<double, std::uint64_t, std::size_t>> valid;
    for (std::size_t kj = 0; kj < K.ids.size(); ++kj) {
      const bool cross_domain = K.s[kj].value != Q.s[qi].value;
      const bool key_in_band = inside_fixed_band(K.e[kj].probs, req.params.t_fixed);
      const bool close_scores = !(std::abs(summary(Q.e[qi].probs) - summary(K.e[kj].probs)) > threshold);
      const bool distinct = K.ids[kj] != Q.ids[qi];
      if (!(cross_domain && key_in_band && close_scores && distinct)) continue;
      const auto a = unit(Q.z.row(qi));
      const auto b = unit(K.z.row(kj));
      double d = 0.0;
      for (std::size_t c = 0; c < a.size(); ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
      valid.emplace_back(d, K.ids[kj], kj);
    }
    std::sort(valid.begin(), valid.end());
    if (valid.size() < req.k) {
      rec.filtered = FilterReason::NoValidKeys;
    } else {
      for (std::size_t r = 0; r < req.k; ++r) {
        rec.neighbor_ids.push_back(std::get<1>(valid[r]));
        rec.distances.push_back(std::get<0>(valid[r]));
      }
    }
    out.push_back(rec);
  }
  return out;
}

}  // namespace okapi
