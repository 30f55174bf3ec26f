#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "okapi/core.hpp"
#include "okapi/matcher.hpp"
#include "okapi/propensity.hpp"

namespace okapi {

// Covariate balance between two groups of encodings.
struct BalanceReport {
  std::vector<double> per_dim_smd;
  std::vector<double> per_dim_vr;
  double mean_smd = 0.0;
  double mean_abs_log_vr = 0.0;
  double retention_rate = 1.0;
  // Domain pairs averaged into this report, (lower, higher) label order.
  std::vector<std::pair<DomainLabel, DomainLabel>> domain_pairs;

  // Ranking objective used by the grid search.
  double score() const { return mean_smd + mean_abs_log_vr; }
};

// Per dimension j, with n-1 sample variances:
//   SMD_j = |mean_A - mean_B| / sqrt((var_A + var_B) / 2)
//   VR_j  = var_A / var_B
// Throws EmptyInput if a set is empty or has fewer than two rows,
// DimensionMismatch on differing widths and ZeroVariance when a ratio is undefined.
BalanceReport balance(const Matrix& set_a, const Matrix& set_b);

// Balance between every pair of domains in the raw data, averaged over pairs.
BalanceReport domain_balance(const EmbeddingSet& data);

// Balance over matched pairs: each query embedding is paired with each of its
// neighbours. Pairs are grouped by unordered domain pair and the per-pair
// reports are averaged. Throws ValidationError on unknown ids and NoMatches
// when nothing was retained.
BalanceReport matched_balance(const EmbeddingSet& data, std::span<const MatchRecord> records);

std::string report_to_json(const BalanceReport& report);

struct GridSpec {
  std::vector<double> t_fixed_values{0.0};
  std::vector<double> t_std_values{kCaliperDisabled};
  std::vector<double> tau_values{1.0};
  std::size_t k = 1;
  double min_retention = 0.0;
  Direction direction = Direction::Both;

  void validate() const;
};

struct GridResult {
  CaliperParams params;
  BalanceReport report;
};

// Evaluates every cell of the Cartesian grid, drops cells below the retention
// floor or without matches, and ranks by (score, t_fixed, t_std, tau).
// Throws EmptyGridAfterFilter when no cell survives.
std::vector<GridResult> grid_search(const EmbeddingSet& data, const PropensityModel& model, const GridSpec& grid,
                                    unsigned threads = 1);

// CSV with header rank,t_fixed,t_std,tau,k,mean_smd,mean_abs_log_vr,score,retention
std::string grid_to_csv(std::span<const GridResult> results, std::size_t k);

}  // namespace okapi
