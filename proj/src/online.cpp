#include "okapi/online.hpp"

#include <algorithm>
#include <cmath>

namespace okapi {

double EmaState::zeta_at(std::size_t at) const {
  if (at >= total_steps) return std::clamp(zeta_end, 0.0, 1.0);
  const double frac = static_cast<double>(at) / static_cast<double>(total_steps);
  return std::clamp(zeta_start + (zeta_end - zeta_start) * frac, 0.0, 1.0);
}

void ema_update(EmaState& state, std::span<const double> online_params) {
  if (online_params.size() != state.shadow.size())
    throw LengthMismatch("EMA shadow has " + std::to_string(state.shadow.size()) + " parameters, online has " +
                         std::to_string(online_params.size()));
  const double zeta = state.zeta();
  const double mix = 1.0 - zeta;
  for (std::size_t i = 0; i < online_params.size(); ++i)
    state.shadow[i] = zeta * state.shadow[i] + mix * online_params[i];
  ++state.step;
}

double LambdaSchedule::at(std::size_t step) const {
  const double warmup = warmup_fraction * static_cast<double>(total_steps);
  if (!(warmup > 0.0)) return final_value;
  return final_value * std::min(1.0, static_cast<double>(step) / warmup);
}

MemoryBank::MemoryBank(std::size_t capacity) : capacity_(capacity) { slots_.reserve(capacity); }

void MemoryBank::push(std::span<const BankEntry> batch) {
  if (batch.size() > capacity_)
    throw BatchLargerThanBank("batch of " + std::to_string(batch.size()) + " exceeds bank capacity " +
                              std::to_string(capacity_));
  for (const auto& entry : batch) {
    if (slots_.size() < capacity_) {
      slots_.push_back(entry);
    } else {
      slots_[cursor_] = entry;
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }
}

std::vector<BankEntry> MemoryBank::entries() const {
  if (slots_.size() < capacity_) return slots_;
  std::vector<BankEntry> out;
  out.reserve(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) out.push_back(slots_[(cursor_ + i) % capacity_]);
  return out;
}

MemoryBank MemoryBank::restore(std::size_t capacity, std::size_t cursor, std::vector<BankEntry> slots) {
  if (slots.size() > capacity || (capacity > 0 && cursor >= capacity))
    throw FormatError("inconsistent memory bank state");
  MemoryBank bank(capacity);
  bank.cursor_ = cursor;
  bank.slots_ = std::move(slots);
  return bank;
}

ConsistencyLoss consistency_loss(std::span<const double> z_q, std::span<const std::vector<double>> neighbors) {
  ConsistencyLoss out;
  out.grad.assign(z_q.size(), 0.0);
  if (neighbors.empty()) return out;

  const double norm = l2_norm(z_q);
  const auto u = l2_normalize(z_q);
  const double inv_k = 1.0 / static_cast<double>(neighbors.size());

  // g = dL/du; the gradient w.r.t. z_q is (I - u u^T) g / |z_q|.
  std::vector<double> g(z_q.size(), 0.0);
  for (const auto& n : neighbors) {
    if (n.size() != z_q.size()) throw DimensionMismatch("neighbour encoding has the wrong dimension");
    const auto v = l2_normalize(n);
    out.loss += inv_k * squared_distance(u, v);
    for (std::size_t j = 0; j < u.size(); ++j) g[j] += 2.0 * inv_k * (u[j] - v[j]);
  }
  double ug = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) ug += u[j] * g[j];
  for (std::size_t j = 0; j < u.size(); ++j) out.grad[j] = (g[j] - u[j] * ug) / norm;
  return out;
}

MatchStepResult okapi_match_step(const StepBatch& batch, MemoryBank& bank, PropensityModel& model,
                                 const CaliperParams& params, std::size_t k, QuerySource query_source,
                                 double ps_lr, unsigned threads) {
  const std::size_t b = batch.ids.size();
  if (batch.target_z.rows != b || batch.s.size() != b) throw LengthMismatch("batch columns differ in length");
  if (query_source == QuerySource::Online && batch.online_z.rows != b)
    throw LengthMismatch("online queries requested but online encodings are missing");
  if (bank.capacity() < b) throw BatchLargerThanBank("bank capacity is smaller than the batch");

  MatchRequest req;
  req.k = k;
  req.params = params;
  for (std::size_t i = 0; i < b; ++i)
    req.keys.push_back(batch.ids[i], batch.target_z.row(i), batch.s[i], score(model, batch.target_z.row(i), params.tau));
  for (const auto& entry : bank.entries())
    req.keys.push_back(entry.id, entry.z, entry.s, score(model, entry.z, params.tau));

  if (query_source == QuerySource::Target) {
    for (std::size_t i = 0; i < b; ++i)
      req.queries.push_back(req.keys.ids[i], req.keys.z.row(i), req.keys.s[i], req.keys.e[i]);
  } else {
    for (std::size_t i = 0; i < b; ++i)
      req.queries.push_back(batch.ids[i], batch.online_z.row(i), batch.s[i],
                            score(model, batch.online_z.row(i), params.tau));
  }

  auto matches = caliper_nn_indexed(req, threads);

  MatchStepResult out;
  out.records = std::move(matches.records);
  out.neighbors.resize(b);
  out.neighbor_domains.resize(b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t pos : matches.key_positions[i]) {
      const auto z = req.keys.z.row(pos);
      out.neighbors[i].emplace_back(z.begin(), z.end());
      out.neighbor_domains[i].push_back(req.keys.s[pos]);
    }

  std::vector<BankEntry> pushed;
  pushed.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto z = batch.target_z.row(i);
    pushed.push_back({batch.ids[i], {z.begin(), z.end()}, batch.s[i]});
  }
  bank.push(pushed);

  out.propensity_updated = ps_online_step(model, req.keys.z, req.keys.s, ps_lr);
  return out;
}

}  // namespace okapi
