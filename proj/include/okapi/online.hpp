#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "okapi/core.hpp"
#include "okapi/matcher.hpp"
#include "okapi/propensity.hpp"

namespace okapi {

// Exponential moving average of the online parameters (the target encoder).
// The decay moves linearly from zeta_start to zeta_end over total_steps.
struct EmaState {
  std::vector<double> shadow;
  double zeta_start = 0.996;
  double zeta_end = 1.0;
  std::size_t total_steps = 1;
  std::size_t step = 0;

  double zeta() const { return zeta_at(step); }
  double zeta_at(std::size_t at) const;
};

// shadow <- zeta * shadow + (1 - zeta) * online; then step += 1.
void ema_update(EmaState& state, std::span<const double> online_params);

// lambda(step) = final_value * min(1, step / (warmup_fraction * total_steps)).
struct LambdaSchedule {
  double final_value = 1.0;
  double warmup_fraction = 0.1;
  std::size_t total_steps = 1;

  double at(std::size_t step) const;
};

struct BankEntry {
  std::uint64_t id = 0;
  std::vector<double> z;
  DomainLabel s;
};

// Fixed-capacity FIFO of target encodings and their domain labels. Starts
// empty; once full each push overwrites the oldest entries.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t capacity = 0);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  std::size_t write_cursor() const { return cursor_; }

  // Throws BatchLargerThanBank if the batch exceeds capacity.
  void push(std::span<const BankEntry> batch);

  // Contents from oldest to newest.
  std::vector<BankEntry> entries() const;

  // Raw ring storage, for checkpointing.
  const std::vector<BankEntry>& slots() const { return slots_; }
  static MemoryBank restore(std::size_t capacity, std::size_t cursor, std::vector<BankEntry> slots);

 private:
  std::size_t capacity_ = 0;
  std::size_t cursor_ = 0;
  std::vector<BankEntry> slots_;
};

struct ConsistencyLoss {
  double loss = 0.0;
  std::vector<double> grad;  // with respect to the raw (unnormalised) query encoding
};

// (1/k) * sum_n ||z_q/|z_q| - z_n/|z_n|||^2. Neighbours are constants; an empty
// neighbour list gives zero loss and zero gradient.
ConsistencyLoss consistency_loss(std::span<const double> z_q, std::span<const std::vector<double>> neighbors);

enum class QuerySource { Target, Online };

struct StepBatch {
  std::vector<std::uint64_t> ids;
  Matrix target_z;  // target-encoder encodings, also pushed to the bank
  Matrix online_z;  // online-encoder encodings; used as queries for QuerySource::Online
  std::vector<DomainLabel> s;
};

struct MatchStepResult {
  std::vector<MatchRecord> records;
  // Target encodings of each query's neighbours, empty when unmatched.
  std::vector<std::vector<std::vector<double>>> neighbors;
  // Domain label of each neighbour, aligned with `neighbors`.
  std::vector<std::vector<DomainLabel>> neighbor_domains;
  bool propensity_updated = false;
};

// One matching iteration: keys are the batch's target encodings followed by
// the bank contents; CaliperNN runs against them; the batch is pushed to the
// bank; finally the propensity scorer takes one inverse-frequency-weighted
// step on the keys with learning rate `ps_lr`.
MatchStepResult okapi_match_step(const StepBatch& batch, MemoryBank& bank, PropensityModel& model,
                                 const CaliperParams& params, std::size_t k, QuerySource query_source,
                                 double ps_lr, unsigned threads = 1);

}  // namespace okapi
