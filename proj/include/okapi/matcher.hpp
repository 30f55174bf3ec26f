#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "okapi/core.hpp"
#include "okapi/propensity.hpp"

namespace okapi {

inline constexpr double kCaliperDisabled = std::numeric_limits<double>::infinity();

// Filtering hyperparameters: fixed caliper, std-caliper multiplier and
// propensity temperature.
struct CaliperParams {
  double t_fixed = 0.0;
  double t_std = kCaliperDisabled;
  double tau = 1.0;

  // Both calipers off: plain cross-domain k-NN.
  static CaliperParams disabled() { return {}; }

  // Throws ValidationError unless 0 <= t_fixed < 0.5, t_std > 0 (or inf), tau > 0.
  void validate() const;

  friend bool operator==(const CaliperParams&, const CaliperParams&) = default;
};

enum class Distance { SquaredEuclideanNormalized };

// Struct-of-arrays view of the samples on one side of a match.
struct MatchSide {
  std::vector<std::uint64_t> ids;
  Matrix z;
  std::vector<DomainLabel> s;
  std::vector<PropensityScore> e;

  std::size_t size() const { return ids.size(); }
  void push_back(std::uint64_t id, std::span<const double> encoding, DomainLabel domain, PropensityScore score);
};

struct MatchRequest {
  MatchSide queries;
  MatchSide keys;
  std::size_t k = 1;
  CaliperParams params;
  Distance distance = Distance::SquaredEuclideanNormalized;
};

// Binary scores (arity 2) pass iff t_fixed <= e[1] <= 1 - t_fixed; otherwise
// the largest component must not exceed 1 - t_fixed.
bool fixed_caliper_pass(const PropensityScore& e, double t_fixed);

// Scalar summary of a score used by the std-caliper: e[1] for binary scores,
// the largest component otherwise.
double propensity_scalar(const PropensityScore& e);

// t_std times the population standard deviation of the propensity scalars.
// Returns infinity when t_std is infinite. Throws TooFewScores for < 2 scores.
double std_caliper_threshold(std::span<const PropensityScore> scores, double t_std);

// CaliperNN. Records come back in query order regardless of `threads`.
std::vector<MatchRecord> caliper_nn(const MatchRequest& request, unsigned threads = 1);

// caliper_nn plus, per query, the positions of the chosen keys in request.keys
// (ids alone are ambiguous when a key pool holds repeated ids).
struct IndexedMatches {
  std::vector<MatchRecord> records;
  std::vector<std::vector<std::size_t>> key_positions;
};
IndexedMatches caliper_nn_indexed(const MatchRequest& request, unsigned threads = 1);

// Literal O(Q*K) scan with the same contract as caliper_nn. Used as an oracle.
std::vector<MatchRecord> brute_force_nn(const MatchRequest& request);

// Direction of offline matching on binary-reduced data (1 = labelled, 0 = unlabelled).
enum class Direction { LabeledToUnlabeled, UnlabeledToLabeled, Both };

// Builds the match request(s) for a dataset: every sample is scored once with
// `model` at temperature params.tau. For two-domain data the direction selects
// queries and keys by split (Both runs LtoU then UtoL). With more than two
// domains only Both is accepted and every sample is matched against all others.
std::vector<MatchRequest> build_requests(const EmbeddingSet& data, const PropensityModel& model,
                                         const CaliperParams& params, std::size_t k, Direction direction);

std::vector<MatchRecord> matched_samples(const EmbeddingSet& data, const PropensityModel& model,
                                         const CaliperParams& params, std::size_t k, Direction direction,
                                         unsigned threads = 1);

struct MatchSummary {
  std::size_t records = 0;
  std::size_t matched = 0;
  double retention = 0.0;
  double mean_distance = 0.0;  // over all retained (query, neighbour) pairs
};

MatchSummary summarize(std::span<const MatchRecord> records);

}  // namespace okapi
